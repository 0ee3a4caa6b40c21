//! Low-level controllers that turn a high-level action into ego jerk.

use crate::action::Action;
use crate::error::Result;
use crate::mpc::{build_constraints, predict_obstacles, MpcConfig, MpcPlanner, PlanResult, PositionBounds};
use crate::sim::{Observation, VehicleState};
use crate::sm::{sm_accel, SmParams, SmTarget};

/// Output of one control call.
#[derive(Clone, Debug)]
pub struct ControlStep {
    pub jerk: f64,
    /// Crash prediction for the current action.
    pub p_crash: bool,
    /// Comfort of the planned motion; `None` when it is measured after the fact.
    pub p_comf: Option<f64>,
    pub plan: Option<PlanResult>,
}

/// Sliding-mode ego controller driven by the same high-level actions.
#[derive(Clone, Debug)]
pub struct SmAgent {
    params: SmParams,
    mpc: MpcConfig,
    headway: f64,
}

impl SmAgent {
    /// `mpc` supplies the shared prediction settings, padding and limits.
    pub fn new(params: SmParams, mpc: MpcConfig, headway: f64) -> Self {
        Self { params: params.with_v_max(mpc.v_ref), mpc, headway }
    }

    /// Point the controller converges to for `action`, if any.
    pub fn target(&self, ego: &VehicleState, obs: &Observation, action: Action) -> Option<SmTarget> {
        match action {
            Action::TakeWay => None,
            Action::GiveWay => {
                let preds = predict_obstacles(obs, &self.mpc);
                preds
                    .iter()
                    .filter(|p| p.window.is_some())
                    .map(|p| p.p_cross_ego - self.mpc.padding)
                    .filter(|stop| ego.p <= *stop)
                    .min_by(f64::total_cmp)
                    .map(|p| SmTarget { p, v: 0.0 })
            }
            Action::Follow(j) => {
                let v = obs.vehicles.get(j).filter(|v| v.exists)?;
                // Vehicle j projected onto the ego path, aligned at the crossing.
                Some(SmTarget { p: v.p_cross_ego - v.delta - self.headway, v: v.v })
            }
        }
    }

    pub fn accel(&self, ego: &VehicleState, obs: &Observation, action: Action) -> f64 {
        sm_accel(&self.params, ego, self.target(ego, obs, action))
    }

    /// Whether the acceleration envelope `[-a_max, a_max]` can satisfy the
    /// crossing bounds that the action implies.
    pub fn predicts_crash(&self, ego: &VehicleState, obs: &Observation, action: Action) -> Result<bool> {
        let bounds = build_constraints(action, &predict_obstacles(obs, &self.mpc), &self.mpc)?;
        Ok(!envelope_satisfies(ego, &bounds, &self.mpc))
    }

    pub fn step(&self, ego: &VehicleState, obs: &Observation, action: Action) -> Result<ControlStep> {
        let a = self.accel(ego, obs, action);
        let jerk = ((a - ego.a) / self.mpc.ts).clamp(-self.mpc.j_max, self.mpc.j_max);
        Ok(ControlStep { jerk, p_crash: self.predicts_crash(ego, obs, action)?, p_comf: None, plan: None })
    }
}

/// Checks lower bounds against full acceleration and upper bounds against
/// full braking, each from the current position and speed.
fn envelope_satisfies(ego: &VehicleState, bounds: &PositionBounds, cfg: &MpcConfig) -> bool {
    let a = cfg.a_max;
    let stop_time = ego.v / a;
    (0..bounds.lower.len()).all(|k| {
        let t = k as f64 * cfg.ts;
        let fastest = ego.p + ego.v * t + 0.5 * a * t * t;
        let tb = t.min(stop_time);
        let slowest = ego.p + ego.v * tb - 0.5 * a * tb * tb;
        bounds.lower[k] <= bounds.upper[k] && fastest >= bounds.lower[k] && slowest <= bounds.upper[k]
    })
}

/// Comfort of realised motion with the planner's normaliser, clamped to `[0, 1]`.
pub fn realized_comfort(accels: &[f64], jerks: &[f64], cfg: &MpcConfig) -> f64 {
    if jerks.is_empty() {
        return 0.0;
    }
    let sum: f64 = accels.iter().map(|a| a * a * cfg.comfort_qa).sum::<f64>()
        + jerks.iter().map(|j| j * j * cfg.comfort_rj).sum::<f64>();
    (sum / (cfg.sigma_norm() * jerks.len() as f64)).clamp(0.0, 1.0)
}

/// Either low-level controller behind one interface.
#[derive(Clone, Debug)]
pub enum Controller {
    Mpc(MpcPlanner),
    Sm(SmAgent),
}

impl Controller {
    pub fn step(&self, ego: &VehicleState, obs: &Observation, action: Action) -> Result<ControlStep> {
        match self {
            Controller::Mpc(planner) => {
                let plan = planner.plan(ego, obs, action)?;
                Ok(ControlStep {
                    jerk: plan.first_jerk,
                    p_crash: !plan.feasible,
                    p_comf: Some(plan.p_comf),
                    plan: Some(plan),
                })
            }
            Controller::Sm(agent) => agent.step(ego, obs, action),
        }
    }
}
