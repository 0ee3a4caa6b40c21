//! Sliding-mode longitudinal control.
//!
//! The same law drives the ego baseline agent and, with different targets,
//! the three traffic intentions.

use serde::{Deserialize, Serialize};

use crate::sim::{Intention, VehicleState};
use crate::topology::{VEHICLE_LENGTH, VEHICLE_WIDTH};

/// Acceleration bound shared by every vehicle (m/s^2).
pub const A_MAX: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmParams {
    pub c1: f64,
    pub c2: f64,
    pub mu: f64,
    /// Proportional speed gain.
    pub k: f64,
    /// Speed tracked by the proportional branch.
    pub v_max: f64,
}

impl Default for SmParams {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 2.0,
            mu: 3.0,
            k: 0.5,
            v_max: 15.0,
        }
    }
}

impl SmParams {
    pub fn validate(&self) -> crate::Result<()> {
        if self.c1 > 0.0 && self.c2 > 0.0 && self.mu > 0.0 && self.k > 0.0 && self.v_max >= 0.0 {
            Ok(())
        } else {
            Err(crate::Error::InvalidConfig(format!("sliding-mode gains must be positive: {self:?}")))
        }
    }

    pub fn with_v_max(self, v_max: f64) -> Self {
        Self { v_max, ..self }
    }
}

/// Point the controller tries to reach, already offset by any headway.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmTarget {
    pub p: f64,
    pub v: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sliding-mode acceleration, bounded by the proportional speed law and `A_MAX`.
///
/// With `x1 = p_t - p`, `x2 = v_t - v` and surface `s = c1 x1 + c2 x2`,
/// the switching law `a = (c1 x2 + mu sign(s)) / c2` gives `ds/dt = -mu sign(s)`.
pub fn sm_accel(params: &SmParams, ego: &VehicleState, target: Option<SmTarget>) -> f64 {
    let a_p = params.k * (params.v_max - ego.v);
    let a = match target {
        None => a_p,
        Some(t) => {
            let x1 = t.p - ego.p;
            let x2 = t.v - ego.v;
            let s = params.c1 * x1 + params.c2 * x2;
            let a_sm = (params.c1 * x2 + params.mu * sign(s)) / params.c2;
            a_sm.min(a_p)
        }
    };
    a.clamp(-A_MAX, A_MAX)
}

/// Behaviour parameters for the traffic intentions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntentionParams {
    /// Give-way vehicles stop this far before their crossing point.
    pub stop_margin: f64,
    /// Fraction of the reference speed a cautious vehicle slows to.
    pub cautious_ratio: f64,
    /// Length of the zone before the crossing where cautious vehicles slow down.
    pub cautious_zone: f64,
    /// Headway kept behind a leading vehicle on the same path.
    pub headway: f64,
    /// Leaders further than this are ignored.
    pub follow_range: f64,
}

impl Default for IntentionParams {
    fn default() -> Self {
        Self {
            stop_margin: 6.0,
            cautious_ratio: 0.4,
            cautious_zone: 25.0,
            headway: 6.0,
            follow_range: 40.0,
        }
    }
}

/// Acceleration of a traffic vehicle with the given intention.
///
/// `v_ref` is the vehicle's own cruising speed. A give-way vehicle that can no
/// longer stop short of the crossing carries on.
pub fn intention_accel(
    kind: Intention,
    sm: &SmParams,
    behaviour: &IntentionParams,
    vehicle: &VehicleState,
    v_ref: f64,
    p_cross_own: f64,
    crossing_clear: bool,
) -> f64 {
    let params = sm.with_v_max(v_ref);
    match kind {
        Intention::TakeWay => sm_accel(&params, vehicle, None),
        Intention::GiveWay => {
            let stop_at = p_cross_own - behaviour.stop_margin;
            // Committed once full braking can no longer keep the footprint off the ego path.
            let conflict = p_cross_own - 0.5 * (VEHICLE_LENGTH + VEHICLE_WIDTH);
            let committed = vehicle.p + vehicle.v * vehicle.v / (2.0 * A_MAX) > conflict;
            if crossing_clear || committed {
                sm_accel(&params, vehicle, None)
            } else {
                sm_accel(&params, vehicle, Some(SmTarget { p: stop_at, v: 0.0 }))
            }
        }
        Intention::Cautious => {
            let in_zone = vehicle.p >= p_cross_own - behaviour.cautious_zone && vehicle.p <= p_cross_own;
            let speed = if in_zone { behaviour.cautious_ratio * v_ref } else { v_ref };
            sm_accel(&params.with_v_max(speed), vehicle, None)
        }
    }
}
