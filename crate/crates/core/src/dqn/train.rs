//! Episode replay, TD loss with Huber clipping, backpropagation through time
//! and the Adam update.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{Network, QValues};
use super::{Features, QMask};
use crate::action::NUM_ACTIONS;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    /// Sequences per gradient step.
    pub batch_size: usize,
    /// Episodes kept in replay.
    pub replay_capacity: usize,
    /// Gradient steps between target-network copies.
    pub target_sync: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of training over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Episodes collected before the first gradient step.
    pub warmup_episodes: usize,
    pub updates_per_episode: usize,
    /// TD errors beyond this magnitude contribute linearly.
    pub huber_delta: f64,
    /// Global gradient-norm clip; non-positive disables it.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            learning_rate: 5e-4,
            batch_size: 16,
            replay_capacity: 2000,
            target_sync: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            warmup_episodes: 16,
            updates_per_episode: 4,
            huber_delta: 1.0,
            grad_clip: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let eps_ok = (0.0..=1.0).contains(&self.epsilon_start)
            && (0.0..=1.0).contains(&self.epsilon_end)
            && (0.0..=1.0).contains(&self.epsilon_decay_fraction);
        if (0.0..=1.0).contains(&self.gamma)
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && self.replay_capacity > 0
            && self.target_sync > 0
            && self.huber_delta > 0.0
            && eps_ok
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("training config: {self:?}")))
        }
    }

    /// Exploration rate for `episode` out of `total` training episodes.
    pub fn epsilon(&self, episode: usize, total: usize) -> f64 {
        let span = self.epsilon_decay_fraction * total as f64;
        if span <= 0.0 {
            return self.epsilon_end;
        }
        let frac = episode as f64 / span;
        if frac >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(with = "serde_features")]
    pub features: Features,
    pub mask: QMask,
    pub action: usize,
    pub reward: f64,
    /// The episode ended after this transition.
    pub terminal: bool,
}

mod serde_features {
    use super::Features;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(f: &Features, s: S) -> Result<S::Ok, S::Error> {
        f.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Features, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into().map_err(|_| serde::de::Error::custom("wrong feature length"))
    }
}

/// Decisions of one episode, in order. The recurrent state never crosses records.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub transitions: Vec<Transition>,
}

impl EpisodeRecord {
    pub fn features(&self) -> Vec<Features> {
        self.transitions.iter().map(|t| t.features).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, episodes: VecDeque::with_capacity(capacity.min(4096)) }
    }

    pub fn push(&mut self, episode: EpisodeRecord) {
        if episode.transitions.is_empty() {
            return;
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Distinct episodes when enough are stored, otherwise drawn with replacement.
    pub fn sample<R: Rng>(&self, rng: &mut R, batch: usize) -> Vec<&EpisodeRecord> {
        if self.episodes.is_empty() {
            return Vec::new();
        }
        if self.episodes.len() >= batch {
            sample(rng, self.episodes.len(), batch).into_iter().map(|i| &self.episodes[i]).collect()
        } else {
            (0..batch).map(|_| &self.episodes[rng.gen_range(0..self.episodes.len())]).collect()
        }
    }
}

/// Mean Huber TD loss over a batch and its gradient w.r.t. the online parameters.
///
/// Targets use `target` and are treated as constants. The last transition of
/// a record that is not terminal has no successor and is skipped.
pub fn loss_and_gradient(
    online: &Network,
    target: &Network,
    batch: &[&EpisodeRecord],
    gamma: f64,
    huber_delta: f64,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; online.params.len()];
    let mut loss = 0.0;
    let mut count = 0usize;
    let mut per_episode = Vec::with_capacity(batch.len());
    for ep in batch {
        let xs = ep.features();
        let (q, caches) = online.forward_sequence(&xs);
        let next_q: Vec<QValues> = if gamma > 0.0 { target.forward_sequence(&xs).0 } else { Vec::new() };
        let mut dq = vec![[0.0; NUM_ACTIONS]; xs.len()];
        for (t, tr) in ep.transitions.iter().enumerate() {
            let future = if tr.terminal {
                0.0
            } else if t + 1 < xs.len() {
                if gamma > 0.0 {
                    gamma * ep.transitions[t + 1].mask.max(&next_q[t + 1])
                } else {
                    0.0
                }
            } else {
                continue;
            };
            let err = q[t][tr.action] - (tr.reward + future);
            loss += if err.abs() <= huber_delta {
                0.5 * err * err
            } else {
                huber_delta * (err.abs() - 0.5 * huber_delta)
            };
            dq[t][tr.action] = err.clamp(-huber_delta, huber_delta);
            count += 1;
        }
        per_episode.push((caches, dq));
    }
    if count == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / count as f64;
    for (caches, mut dq) in per_episode {
        dq.iter_mut().flatten().for_each(|d| *d *= scale);
        online.backward_sequence(&caches, &dq, &mut grad);
    }
    (loss * scale, grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(size: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; size],
            v: vec![0.0; size],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// One gradient step on `online`. Returns the batch loss; an empty batch is a no-op.
pub fn train_step(
    online: &mut Network,
    target: &Network,
    optimizer: &mut Adam,
    batch: &[&EpisodeRecord],
    config: &TrainConfig,
) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let (loss, mut grad) = loss_and_gradient(online, target, batch, config.gamma, config.huber_delta);
    if config.grad_clip > 0.0 {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > config.grad_clip {
            let s = config.grad_clip / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    optimizer.step(&mut online.params, &grad);
    loss
}
