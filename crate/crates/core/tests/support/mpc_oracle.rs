//! Independent checks for MPC plans: time-based occupancy, bound derivation,
//! constraint replay and the bang-jerk reachability envelope.

use intersect::mpc::{MpcConfig, PlanResult};
use intersect::sim::{Observation, VehicleObservation, VehicleState};
use intersect::Action;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Steps at which the vehicle is inside the crossing area, from the entry and
/// exit times of a constant-velocity motion.
fn occupied_steps(v: &VehicleObservation, cfg: &MpcConfig) -> Vec<bool> {
    let n = cfg.horizon;
    let thr = cfg.occupancy_threshold;
    let mut out = vec![false; n + 1];
    if v.v == 0.0 {
        if v.delta.abs() <= thr {
            out.iter_mut().for_each(|o| *o = true);
        }
        return out;
    }
    // delta - v t in [-thr, thr]  <=>  t in [(delta - thr) / v, (delta + thr) / v].
    let t_in = (v.delta - thr) / v.v;
    let t_out = (v.delta + thr) / v.v;
    for (k, o) in out.iter_mut().enumerate() {
        let t = k as f64 * cfg.ts;
        // Guard against rounding at the window edges.
        let slack = 1e-9;
        *o = t >= t_in - slack && t <= t_out + slack;
    }
    out
}

fn clear_step(v: &VehicleObservation, cfg: &MpcConfig) -> usize {
    let thr = cfg.occupancy_threshold;
    (0..=cfg.horizon)
        .find(|&k| v.delta - v.v * k as f64 * cfg.ts < -thr)
        .unwrap_or(cfg.horizon + 1)
}

/// Position bounds re-derived from the observation.
pub fn expected_bounds(obs: &Observation, action: Action, cfg: &MpcConfig) -> (Vec<f64>, Vec<f64>) {
    let n = cfg.horizon;
    let mut lo = vec![f64::NEG_INFINITY; n + 1];
    let mut hi = vec![f64::INFINITY; n + 1];
    let present: Vec<(usize, &VehicleObservation)> =
        obs.vehicles.iter().enumerate().filter(|(_, v)| v.exists).collect();
    let follow = match action {
        Action::Follow(j) => Some(j),
        _ => None,
    };
    if let Some(j) = follow {
        let t = &obs.vehicles[j];
        for k in 0..clear_step(t, cfg).min(n + 1) {
            hi[k] = hi[k].min(t.p_cross_ego - cfg.follow_padding);
        }
    }
    for (slot, v) in &present {
        if Some(*slot) == follow {
            continue;
        }
        let occ = occupied_steps(v, cfg);
        let lower = match (action, follow) {
            (Action::TakeWay, _) => true,
            (Action::GiveWay, _) => false,
            (_, Some(j)) => {
                let t = &obs.vehicles[j];
                if v.p_cross_ego != t.p_cross_ego {
                    v.p_cross_ego < t.p_cross_ego
                } else {
                    let (a, b) = (v.delta.abs(), t.delta.abs());
                    !(a < b || (a == b && *slot < j))
                }
            }
            _ => unreachable!(),
        };
        for k in 0..=n {
            if occ[k] {
                if lower {
                    lo[k] = lo[k].max(v.p_cross_ego + cfg.padding);
                } else {
                    hi[k] = hi[k].min(v.p_cross_ego - cfg.padding);
                }
            }
        }
    }
    (lo, hi)
}

/// Largest violation of any constraint along a plan, with states recomputed
/// from the controls by plain Euler-free polynomial integration.
pub fn replay_violation(
    ego: &VehicleState,
    plan: &PlanResult,
    lo: &[f64],
    hi: &[f64],
    cfg: &MpcConfig,
) -> f64 {
    let ts = cfg.ts;
    let (mut p, mut v, mut a) = (ego.p, ego.v, ego.a);
    let mut worst = 0.0f64;
    let check = |k: usize, p: f64, v: f64, a: f64, worst: &mut f64| {
        *worst = worst.max(lo[k] - p).max(p - hi[k]);
        if k > 0 {
            *worst = worst.max(-v).max(a.abs() - cfg.a_max);
        }
        let s = &plan.states[k];
        *worst = worst.max((s.p - p).abs()).max((s.v - v).abs()).max((s.a - a).abs());
    };
    check(0, p, v, a, &mut worst);
    for (k, &u) in plan.controls.iter().enumerate() {
        worst = worst.max(u.abs() - cfg.j_max);
        p += v * ts + a * ts * ts / 2.0 + u * ts * ts * ts / 6.0;
        v += a * ts + u * ts * ts / 2.0;
        a += u * ts;
        check(k + 1, p, v, a, &mut worst);
    }
    worst
}

/// Pointwise-maximal position profile under the jerk and acceleration limits.
/// Returns `None` when even this profile drives the speed negative.
pub fn max_reach(ego: &VehicleState, cfg: &MpcConfig) -> Option<Vec<f64>> {
    let ts = cfg.ts;
    let (mut p, mut v, mut a) = (ego.p, ego.v, ego.a);
    let mut out = vec![p];
    for _ in 0..cfg.horizon {
        let u = cfg.j_max.min((cfg.a_max - a) / ts);
        p += v * ts + a * ts * ts / 2.0 + u * ts * ts * ts / 6.0;
        v += a * ts + u * ts * ts / 2.0;
        a += u * ts;
        if v < -1e-9 {
            return None;
        }
        out.push(p);
    }
    Some(out)
}

pub fn vehicle(p: f64, v: f64, p_cross_own: f64, p_cross_ego: f64) -> VehicleObservation {
    VehicleObservation { exists: true, p, v, a: 0.0, p_cross_ego, delta: p_cross_own - p }
}

pub fn random_ego(rng: &mut ChaCha8Rng) -> VehicleState {
    VehicleState {
        p: rng.gen_range(0.0..70.0),
        v: rng.gen_range(0.0..30.0),
        a: rng.gen_range(-5.0..5.0),
    }
}

/// Random observation on one or two crossings at ego positions 60 and 68.
pub fn random_observation(rng: &mut ChaCha8Rng) -> Observation {
    let mut obs = Observation::default();
    let count = rng.gen_range(0..=4);
    for slot in 0..count {
        let p_cross_ego = if rng.gen_bool(0.5) { 60.0 } else { 68.0 };
        let speed = if rng.gen_bool(0.15) { 0.0 } else { rng.gen_range(0.0..30.0) };
        obs.vehicles[slot] = vehicle(rng.gen_range(0.0..90.0), speed, 60.0, p_cross_ego);
    }
    obs
}

pub fn random_action(rng: &mut ChaCha8Rng, obs: &Observation) -> Action {
    let valid: Vec<Action> = Action::ALL
        .iter()
        .copied()
        .filter(|a| match a {
            Action::Follow(j) => obs.vehicles[*j].exists,
            _ => true,
        })
        .collect();
    valid[rng.gen_range(0..valid.len())]
}
