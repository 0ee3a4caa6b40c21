//! Longitudinal MPC over a jerk-controlled triple integrator.
//!
//! The high-level action decides how crossing constraints are laid out; the
//! planner returns the first jerk command, whether the constrained problem was
//! feasible and how comfortable the planned trajectory is.
//!
//! The QP is condensed onto the jerk sequence `u_0..u_{N-1}`: states are
//! affine in `u`, so the Hessian and the constraint rows depend only on the
//! configuration and are built once per planner.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::action::{Action, MAX_VEHICLES};
use crate::error::{Error, Result};
use crate::qp::{HessianFactor, QpProblem, QpSettings, QpSolver, QpStatus};
use crate::sim::{Observation, VehicleState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub ts: f64,
    pub horizon: usize,
    /// Stage weights on (p - r_p, v - v_ref, a).
    pub q: [f64; 3],
    /// Stage weight on jerk.
    pub r: f64,
    /// Terminal weights on (p, v, a).
    pub p_terminal: [f64; 3],
    /// Padding kept from a crossing point while it is occupied (m).
    pub padding: f64,
    /// Padding below the crossing point of a followed vehicle (m).
    pub follow_padding: f64,
    /// A vehicle occupies its crossing while within this distance of it (m).
    pub occupancy_threshold: f64,
    pub v_ref: f64,
    pub a_max: f64,
    pub j_max: f64,
    /// Comfort weights on acceleration and jerk.
    pub comfort_qa: f64,
    pub comfort_rj: f64,
    /// Comfort normaliser as a multiple (at least 1) of the per-step cost at
    /// full acceleration and jerk.
    pub comfort_scale: f64,
    /// Keep give-way bounds to the horizon end for vehicles still approaching at `N`.
    pub give_way_persist: bool,
    pub qp_tolerance: f64,
    pub qp_max_iterations: usize,
}

/// Default comfort normaliser multiple. Chosen so that the comfort penalty a
/// typical episode accumulates stays well below the timeout reward.
pub const COMFORT_SCALE: f64 = 100.0;

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            ts: 1.0 / 30.0,
            horizon: 100,
            q: [0.0, 1.0, 1.0],
            r: 1.0,
            p_terminal: [0.0, 1.0, 1.0],
            padding: 4.0,
            follow_padding: 0.0,
            occupancy_threshold: 4.0,
            v_ref: 15.0,
            a_max: 5.0,
            j_max: 10.0,
            comfort_qa: 1.0,
            comfort_rj: 1.0,
            comfort_scale: COMFORT_SCALE,
            give_way_persist: false,
            qp_tolerance: 1e-6,
            qp_max_iterations: 4000,
        }
    }
}

impl MpcConfig {
    /// Comfort normaliser. Never below the worst per-step cost, so comfort
    /// stays in `[0, 1]` before clamping.
    pub fn sigma_norm(&self) -> f64 {
        self.comfort_scale * (self.a_max * self.a_max * self.comfort_qa + self.j_max * self.j_max * self.comfort_rj)
    }

    pub fn validate(&self) -> Result<()> {
        let weights_ok = self.q.iter().chain(&self.p_terminal).all(|w| *w >= 0.0)
            && self.r > 0.0
            && self.comfort_qa >= 0.0
            && self.comfort_rj >= 0.0
            && self.comfort_scale >= 1.0;
        if self.ts > 0.0
            && self.horizon >= 1
            && weights_ok
            && self.padding > 0.0
            && self.follow_padding >= 0.0
            && self.occupancy_threshold > 0.0
            && self.a_max > 0.0
            && self.j_max > 0.0
            && self.sigma_norm() > 0.0
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("mpc config: {self:?}")))
        }
    }
}

/// Exact zero-order-hold discretisation of the jerk-driven triple integrator.
pub fn discretize(ts: f64) -> ([[f64; 3]; 3], [f64; 3]) {
    let a = [[1.0, ts, 0.5 * ts * ts], [0.0, 1.0, ts], [0.0, 0.0, 1.0]];
    let b = [ts * ts * ts / 6.0, 0.5 * ts * ts, ts];
    (a, b)
}

fn step_state(a: &[[f64; 3]; 3], b: &[f64; 3], x: [f64; 3], u: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = a[i][0] * x[0] + a[i][1] * x[1] + a[i][2] * x[2] + b[i] * u;
    }
    out
}

/// Constant-velocity prediction of one observed vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstaclePrediction {
    pub slot: usize,
    /// Predicted own-path positions for `k = 0..=N`.
    pub positions: Vec<f64>,
    /// Inclusive step range during which the vehicle occupies its crossing.
    pub window: Option<(usize, usize)>,
    pub p_cross_ego: f64,
    pub p_cross_own: f64,
    /// Signed distance to the crossing at `k = 0`.
    pub delta: f64,
    /// First step at which the vehicle is past its crossing area, if within the horizon.
    pub clear_step: Option<usize>,
}

impl ObstaclePrediction {
    pub fn occupies(&self, k: usize) -> bool {
        self.window.is_some_and(|(s, e)| (s..=e).contains(&k))
    }
}

pub fn predict_obstacles(obs: &Observation, config: &MpcConfig) -> Vec<ObstaclePrediction> {
    let n = config.horizon;
    let thr = config.occupancy_threshold;
    obs.vehicles
        .iter()
        .enumerate()
        .filter(|(_, v)| v.exists)
        .map(|(slot, v)| {
            let p_cross_own = v.p_cross_own();
            let positions: Vec<f64> = (0..=n).map(|k| v.p + v.v * k as f64 * config.ts).collect();
            let mut window: Option<(usize, usize)> = None;
            let mut clear_step = None;
            for (k, &p) in positions.iter().enumerate() {
                if (p - p_cross_own).abs() <= thr {
                    window = Some(window.map_or((k, k), |(s, _)| (s, k)));
                }
                if clear_step.is_none() && p > p_cross_own + thr {
                    clear_step = Some(k);
                }
            }
            ObstaclePrediction {
                slot,
                positions,
                window,
                p_cross_ego: v.p_cross_ego,
                p_cross_own,
                delta: v.delta,
                clear_step,
            }
        })
        .collect()
}

/// Per-step bounds on the ego position, `k = 0..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PositionBounds {
    pub fn unbounded(horizon: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; horizon + 1],
            upper: vec![f64::INFINITY; horizon + 1],
        }
    }

    fn raise(&mut self, k: usize, lo: f64) {
        self.lower[k] = self.lower[k].max(lo);
    }

    fn cap(&mut self, k: usize, hi: f64) {
        self.upper[k] = self.upper[k].min(hi);
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|v| v.is_infinite()) && self.upper.iter().all(|v| v.is_infinite())
    }
}

/// Lays out position bounds for the chosen action.
///
/// Contradictory bounds are kept as they are; the QP reports them as infeasible.
pub fn build_constraints(
    action: Action,
    predictions: &[ObstaclePrediction],
    config: &MpcConfig,
) -> Result<PositionBounds> {
    let n = config.horizon;
    let pad = config.padding;
    let mut bounds = PositionBounds::unbounded(n);
    match action {
        Action::TakeWay => {
            for pred in predictions {
                if let Some((s, e)) = pred.window {
                    for k in s..=e {
                        bounds.raise(k, pred.p_cross_ego + pad);
                    }
                }
            }
        }
        Action::GiveWay => {
            for pred in predictions {
                if let Some((s, e)) = pred.window {
                    let end = if config.give_way_persist && e == n { n } else { e };
                    for k in s..=end {
                        bounds.cap(k, pred.p_cross_ego - pad);
                    }
                } else if config.give_way_persist && pred.clear_step.is_none() && pred.delta > 0.0 {
                    // Still approaching at the horizon end.
                    let last = pred.positions[n];
                    if last >= pred.p_cross_own - config.occupancy_threshold {
                        bounds.cap(n, pred.p_cross_ego - pad);
                    }
                }
            }
        }
        Action::Follow(j) => {
            if j >= MAX_VEHICLES {
                return Err(Error::InvalidInput(format!("follow slot {j} out of range")));
            }
            let target = predictions
                .iter()
                .find(|p| p.slot == j)
                .ok_or_else(|| Error::InvalidInput(format!("follow target slot {j} is empty")))?;
            let until = target.clear_step.unwrap_or(n + 1);
            for k in 0..until.min(n + 1) {
                bounds.cap(k, target.p_cross_ego - config.follow_padding);
            }
            for other in predictions.iter().filter(|p| p.slot != j) {
                let Some((s, e)) = other.window else { continue };
                let behind_other = if other.p_cross_ego < target.p_cross_ego {
                    false
                } else if other.p_cross_ego > target.p_cross_ego {
                    true
                } else {
                    // Same crossing: wait for vehicles entering before the target.
                    let (a, b) = (other.delta.abs(), target.delta.abs());
                    a < b || (a == b && other.slot < target.slot)
                };
                for k in s..=e {
                    if behind_other {
                        bounds.cap(k, other.p_cross_ego - pad);
                    } else {
                        bounds.raise(k, other.p_cross_ego + pad);
                    }
                }
            }
        }
    }
    Ok(bounds)
}

/// Output of one planning call.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    /// Planned states `k = 0..=N` (the fallback profile when infeasible).
    pub states: Vec<VehicleState>,
    /// Planned jerks `k = 0..N-1`.
    pub controls: Vec<f64>,
    pub feasible: bool,
    pub status: QpStatus,
    pub p_comf: f64,
    pub first_jerk: f64,
    pub bounds: PositionBounds,
}

impl PlanResult {
    pub fn p_crash(&self) -> f64 {
        if self.feasible {
            0.0
        } else {
            1.0
        }
    }

    /// Writes `k, p, v, a, j, lower, upper` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "p", "v", "a", "j", "lower", "upper"])?;
        for (k, s) in self.states.iter().enumerate() {
            let j = self.controls.get(k).copied().unwrap_or(f64::NAN);
            w.write_record([
                k.to_string(),
                s.p.to_string(),
                s.v.to_string(),
                s.a.to_string(),
                j.to_string(),
                self.bounds.lower[k].to_string(),
                self.bounds.upper[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Comfort score of a trajectory, clamped to `[0, 1]`.
pub fn comfort_score(states: &[VehicleState], controls: &[f64], config: &MpcConfig) -> f64 {
    let n = controls.len();
    if n == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for k in 0..n {
        sum += states[k].a * states[k].a * config.comfort_qa + controls[k] * controls[k] * config.comfort_rj;
    }
    sum += states[n].a * states[n].a * config.comfort_qa;
    (sum / (config.sigma_norm() * n as f64)).clamp(0.0, 1.0)
}

/// Condensed MPC planner. Stateless between calls.
#[derive(Clone, Debug)]
pub struct MpcPlanner {
    config: MpcConfig,
    a: [[f64; 3]; 3],
    b: [f64; 3],
    /// Responses of p, v, a at step `k` to jerk `u_i`, row-major `(N+1) x N`.
    gamma: [Vec<f64>; 3],
    factor: HessianFactor,
    template: QpProblem,
    solver: QpSolver,
}

const ROW_P: usize = 0;

impl MpcPlanner {
    pub fn new(config: MpcConfig) -> Result<Self> {
        config.validate()?;
        let n = config.horizon;
        let (a, b) = discretize(config.ts);
        // gamma[c][k * n + i]: effect of u_i on state component c at step k.
        let mut gamma = [vec![0.0; (n + 1) * n], vec![0.0; (n + 1) * n], vec![0.0; (n + 1) * n]];
        let mut impulse = b;
        for lag in 0..n {
            for i in 0..n - lag {
                let k = i + lag + 1;
                for c in 0..3 {
                    gamma[c][k * n + i] = impulse[c];
                }
            }
            impulse = step_state(&a, &[0.0; 3], impulse, 0.0);
        }

        // Cost sum_k x_k' W_k x_k + r u'u gives H = 2 (r I + sum_k G_k' W_k G_k).
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = 2.0 * config.r;
        }
        for k in 1..=n {
            let w = if k == n { config.p_terminal } else { config.q };
            for c in 0..3 {
                if w[c] == 0.0 {
                    continue;
                }
                let row = &gamma[c][k * n..(k + 1) * n];
                for i in 0..k {
                    let ri = row[i];
                    if ri == 0.0 {
                        continue;
                    }
                    for j in 0..k {
                        h[i * n + j] += 2.0 * w[c] * ri * row[j];
                    }
                }
            }
        }
        let factor = HessianFactor::new(&h, n)?;

        // Rows: p_k for k = 0..=N, then v_k and a_k for k = 1..=N.
        let mut template = QpProblem::new(h, vec![0.0; n]);
        template.lb = vec![-config.j_max; n];
        template.ub = vec![config.j_max; n];
        for k in 0..=n {
            template.push_row(&gamma[ROW_P][k * n..(k + 1) * n], f64::NEG_INFINITY, f64::INFINITY);
        }
        for c in 1..3 {
            for k in 1..=n {
                template.push_row(&gamma[c][k * n..(k + 1) * n], f64::NEG_INFINITY, f64::INFINITY);
            }
        }
        let solver = QpSolver::new(QpSettings {
            tolerance: config.qp_tolerance,
            max_iterations: config.qp_max_iterations,
        });
        Ok(Self { config, a, b, gamma, factor, template, solver })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    /// States reached from `x0` with zero jerk.
    fn free_response(&self, x0: [f64; 3]) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.config.horizon + 1);
        let mut x = x0;
        out.push(x);
        for _ in 0..self.config.horizon {
            x = step_state(&self.a, &self.b, x, 0.0);
            out.push(x);
        }
        out
    }

    /// Rolls the dynamics forward under `controls`.
    pub fn rollout(&self, ego: &VehicleState, controls: &[f64]) -> Vec<VehicleState> {
        let mut x = [ego.p, ego.v, ego.a];
        let mut out = Vec::with_capacity(controls.len() + 1);
        out.push(*ego);
        for &u in controls {
            x = step_state(&self.a, &self.b, x, u);
            out.push(VehicleState { p: x[0], v: x[1], a: x[2] });
        }
        out
    }

    /// Builds the condensed QP for the given initial state and position bounds.
    pub fn build_qp(&self, ego: &VehicleState, bounds: &PositionBounds) -> QpProblem {
        let cfg = &self.config;
        let n = cfg.horizon;
        let free = self.free_response([ego.p, ego.v, ego.a]);
        let mut qp = self.template.clone();
        let r_x = [0.0, cfg.v_ref, 0.0];
        for k in 1..=n {
            let w = if k == n { cfg.p_terminal } else { cfg.q };
            for c in 0..3 {
                if w[c] == 0.0 {
                    continue;
                }
                let err = free[k][c] - r_x[c];
                let row = &self.gamma[c][k * n..(k + 1) * n];
                for i in 0..k {
                    qp.g[i] += 2.0 * w[c] * row[i] * err;
                }
            }
        }
        for k in 0..=n {
            let row = ROW_P + k;
            qp.cl[row] = bounds.lower[k] - free[k][0];
            qp.cu[row] = bounds.upper[k] - free[k][0];
        }
        let v_rows = n + 1;
        let a_rows = v_rows + n;
        for k in 1..=n {
            qp.cl[v_rows + k - 1] = -free[k][1];
            qp.cl[a_rows + k - 1] = -cfg.a_max - free[k][2];
            qp.cu[a_rows + k - 1] = cfg.a_max - free[k][2];
        }
        qp
    }

    /// Jerk-limited ramp towards full braking, held over the horizon.
    pub fn fallback_controls(&self, ego: &VehicleState) -> Vec<f64> {
        let cfg = &self.config;
        let mut a = ego.a;
        let mut v = ego.v;
        let mut out = Vec::with_capacity(cfg.horizon);
        for _ in 0..cfg.horizon {
            let target = if v > 0.0 { -cfg.a_max } else { 0.0 };
            let j = ((target - a) / cfg.ts).clamp(-cfg.j_max, cfg.j_max);
            out.push(j);
            v += a * cfg.ts + 0.5 * j * cfg.ts * cfg.ts;
            a += j * cfg.ts;
            if v <= 0.0 {
                v = 0.0;
            }
        }
        out
    }

    pub fn plan(&self, ego: &VehicleState, obs: &Observation, action: Action) -> Result<PlanResult> {
        let predictions = predict_obstacles(obs, &self.config);
        let bounds = build_constraints(action, &predictions, &self.config)?;
        self.plan_with_bounds(ego, bounds)
    }

    pub fn plan_with_bounds(&self, ego: &VehicleState, bounds: PositionBounds) -> Result<PlanResult> {
        let n = self.config.horizon;
        if bounds.lower.len() != n + 1 || bounds.upper.len() != n + 1 {
            return Err(Error::InvalidInput("position bounds must cover k = 0..=N".into()));
        }
        let qp = self.build_qp(ego, &bounds);
        let sol = self.solver.solve_factored(&self.factor, &qp, None)?;
        let j_max = self.config.j_max;
        if sol.status == QpStatus::Optimal {
            let controls: Vec<f64> = sol.x.iter().map(|u| u.clamp(-j_max, j_max)).collect();
            let states = self.rollout(ego, &controls);
            let p_comf = comfort_score(&states, &controls, &self.config);
            return Ok(PlanResult {
                first_jerk: controls[0],
                states,
                controls,
                feasible: true,
                status: sol.status,
                p_comf,
                bounds,
            });
        }
        if sol.status == QpStatus::MaxIterations {
            log::warn!("mpc: qp hit the iteration cap, treating as infeasible");
        }
        let controls = self.fallback_controls(ego);
        let states = self.rollout(ego, &controls);
        let p_comf = comfort_score(&states, &controls, &self.config);
        Ok(PlanResult {
            first_jerk: controls[0],
            states,
            controls,
            feasible: false,
            status: sol.status,
            p_comf,
            bounds,
        })
    }
}
