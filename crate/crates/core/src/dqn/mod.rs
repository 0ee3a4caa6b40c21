//! High-level decision policy: feature scaling, Q-masking, the recurrent
//! Q-network and its training loop.

mod checkpoint;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{Group, Layout, LstmState, Network, NetworkConfig, QValues, StepCache};
pub use train::{
    loss_and_gradient, train_step, Adam, EpisodeRecord, ReplayBuffer, TrainConfig, Transition,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::{Action, MAX_VEHICLES, NUM_ACTIONS};
use crate::sim::Observation;

pub const FEATURES_PER_SLOT: usize = 8;
pub const FEATURE_LEN: usize = MAX_VEHICLES * FEATURES_PER_SLOT;

/// Concatenated per-slot feature vectors, slot-major.
pub type Features = [f64; FEATURE_LEN];

/// Scales used to bring features into `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureScale {
    pub v_max: f64,
    pub a_max: f64,
    /// Sight range.
    pub p_max: f64,
}

impl Default for FeatureScale {
    fn default() -> Self {
        Self { v_max: 30.0, a_max: 5.0, p_max: 100.0 }
    }
}

pub fn normalize(obs: &Observation, scale: &FeatureScale) -> Features {
    let n = |v: f64, s: f64| (v / s).clamp(-1.0, 1.0);
    let ego = [
        n(obs.ego.p, scale.p_max),
        n(obs.ego.v, scale.v_max),
        n(obs.ego.a, scale.a_max),
        n(obs.ego.delta, scale.p_max),
    ];
    let mut out = [0.0; FEATURE_LEN];
    for (slot, v) in obs.vehicles.iter().enumerate() {
        let chunk = &mut out[slot * FEATURES_PER_SLOT..(slot + 1) * FEATURES_PER_SLOT];
        chunk[..4].copy_from_slice(&ego);
        chunk[4..].copy_from_slice(&if v.exists {
            [n(v.p, scale.p_max), n(v.v, scale.v_max), n(v.a, scale.a_max), n(v.delta, scale.p_max)]
        } else {
            [-1.0; 4]
        });
    }
    out
}

/// Which actions may be chosen in a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QMask(pub [bool; NUM_ACTIONS]);

impl QMask {
    pub fn all() -> Self {
        Self([true; NUM_ACTIONS])
    }

    /// TakeWay and GiveWay are always valid; Follow(j) needs slot `j` occupied.
    pub fn from_observation(obs: &Observation) -> Self {
        let mut valid = [true; NUM_ACTIONS];
        for j in 0..MAX_VEHICLES {
            valid[Action::Follow(j).index()] = obs.exists(j);
        }
        Self(valid)
    }

    pub fn is_valid(&self, action: usize) -> bool {
        self.0.get(action).copied().unwrap_or(false)
    }

    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_ACTIONS).filter(|&i| self.0[i])
    }

    /// Index of the largest valid Q value; the lowest index wins ties.
    pub fn argmax(&self, q: &QValues) -> usize {
        let mut best = None;
        for i in self.valid_indices() {
            if best.is_none_or(|b: usize| q[i] > q[b]) {
                best = Some(i);
            }
        }
        best.expect("take-way and give-way are always valid")
    }

    /// Largest valid Q value.
    pub fn max(&self, q: &QValues) -> f64 {
        q[self.argmax(q)]
    }
}

/// Epsilon-greedy choice restricted to valid actions.
pub fn select_action<R: Rng>(q: &QValues, mask: &QMask, epsilon: f64, rng: &mut R) -> Action {
    let idx = if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let valid: Vec<usize> = mask.valid_indices().collect();
        valid[rng.gen_range(0..valid.len())]
    } else {
        mask.argmax(q)
    };
    Action::from_index(idx).expect("mask indices are actions")
}
