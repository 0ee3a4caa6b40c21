//! Recurrent Q-network: shared per-slot encoder, fusion layer, LSTM, linear head.
//!
//! Parameters live in one flat vector; [`Layout`] names the slices. Gradients
//! use the same layout so optimisers and checkpoints see a single buffer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Features, FEATURES_PER_SLOT};
use crate::action::{MAX_VEHICLES, NUM_ACTIONS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub encoder1: usize,
    pub encoder2: usize,
    pub fusion: usize,
    pub lstm: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { encoder1: 64, encoder2: 64, fusion: 64, lstm: 64 }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.encoder1, self.encoder2, self.fusion, self.lstm].iter().all(|d| *d > 0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("network layers must be non-empty: {self:?}")))
        }
    }
}

/// A named `rows x cols` slice of the parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Group {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub groups: Vec<Group>,
    pub total: usize,
}

// Indices into `Layout::groups`.
const W1: usize = 0;
const B1: usize = 1;
const W2: usize = 2;
const B2: usize = 3;
const W3: usize = 4; // One group per slot.
const B3: usize = W3 + MAX_VEHICLES;
const WX: usize = B3 + 1;
const WH: usize = WX + 1;
const BL: usize = WH + 1;
const WQ: usize = BL + 1;
const BQ: usize = WQ + 1;

impl Layout {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let h = cfg.lstm;
        let mut shapes: Vec<(String, usize, usize)> = vec![
            ("encoder1.weight".into(), cfg.encoder1, FEATURES_PER_SLOT),
            ("encoder1.bias".into(), cfg.encoder1, 1),
            ("encoder2.weight".into(), cfg.encoder2, cfg.encoder1),
            ("encoder2.bias".into(), cfg.encoder2, 1),
        ];
        for i in 0..MAX_VEHICLES {
            shapes.push((format!("fusion.weight{i}"), cfg.fusion, cfg.encoder2));
        }
        shapes.extend([
            ("fusion.bias".into(), cfg.fusion, 1),
            ("lstm.input_weight".into(), 4 * h, cfg.fusion),
            ("lstm.recurrent_weight".into(), 4 * h, h),
            ("lstm.bias".into(), 4 * h, 1),
            ("q.weight".into(), NUM_ACTIONS, h),
            ("q.bias".into(), NUM_ACTIONS, 1),
        ]);
        let mut offset = 0;
        let groups = shapes
            .into_iter()
            .map(|(name, rows, cols)| {
                let g = Group { name, offset, rows, cols };
                offset += rows * cols;
                g
            })
            .collect();
        Self { groups, total: offset }
    }
}

/// Hidden and cell state of the LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(size: usize) -> Self {
        Self { h: vec![0.0; size], c: vec![0.0; size] }
    }
}

/// Activations of one step, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct StepCache {
    x: Features,
    h1: Vec<f64>,
    h2: Vec<f64>,
    h3: Vec<f64>,
    /// Gate activations `i, f, g, o`, each of LSTM width.
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    h_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

pub type QValues = [f64; NUM_ACTIONS];

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    layout: Layout,
    pub params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out = W x + b` for row-major `W`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W x` for row-major `W`.
fn add_matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W' d` for row-major `W` with `d.len()` rows.
fn add_matvec_t(w: &[f64], d: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * dr;
        }
    }
}

/// `gw += d x'`.
fn add_outer(gw: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (g, xv) in row.iter_mut().zip(x) {
            *g += dr * xv;
        }
    }
}

impl Network {
    /// All-zero parameters.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = vec![0.0; layout.total];
        Ok(Self { config, layout, params })
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, forget-gate bias 1.
    pub fn init<R: Rng>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let c = net.config;
        let fan_in = |idx: usize| -> usize {
            match idx {
                W1 | B1 => FEATURES_PER_SLOT,
                W2 | B2 => c.encoder1,
                i if (W3..=B3).contains(&i) => MAX_VEHICLES * c.encoder2,
                WX | WH | BL => c.fusion + c.lstm,
                _ => c.lstm,
            }
        };
        for (idx, g) in net.layout.groups.clone().iter().enumerate() {
            let bound = 1.0 / (fan_in(idx) as f64).sqrt();
            for p in &mut net.params[g.range()] {
                *p = rng.gen_range(-bound..=bound);
            }
        }
        let h = c.lstm;
        let bias = net.layout.groups[BL].offset;
        for p in &mut net.params[bias + h..bias + 2 * h] {
            *p = 1.0;
        }
        Ok(net)
    }

    pub fn from_params(config: NetworkConfig, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if params.len() != net.layout.total {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                net.layout.total,
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn group(&self, idx: usize) -> &[f64] {
        &self.params[self.layout.groups[idx].range()]
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(self.config.lstm)
    }

    fn g(&self, idx: usize) -> &[f64] {
        &self.params[self.layout.groups[idx].range()]
    }

    /// One recurrent step. Returns the Q values and the step's activations.
    pub fn forward_cached(&self, x: &Features, state: &mut LstmState) -> (QValues, StepCache) {
        let c = &self.config;
        let hsz = c.lstm;
        let mut h1 = vec![0.0; MAX_VEHICLES * c.encoder1];
        let mut h2 = vec![0.0; MAX_VEHICLES * c.encoder2];
        let mut h3 = self.g(B3).to_vec();
        for s in 0..MAX_VEHICLES {
            let xs = &x[s * FEATURES_PER_SLOT..(s + 1) * FEATURES_PER_SLOT];
            let a1 = &mut h1[s * c.encoder1..(s + 1) * c.encoder1];
            affine(self.g(W1), self.g(B1), xs, a1);
            a1.iter_mut().for_each(|v| *v = v.tanh());
            let a2 = &mut h2[s * c.encoder2..(s + 1) * c.encoder2];
            affine(self.g(W2), self.g(B2), &h1[s * c.encoder1..(s + 1) * c.encoder1], a2);
            a2.iter_mut().for_each(|v| *v = v.tanh());
            add_matvec(self.g(W3 + s), &h2[s * c.encoder2..(s + 1) * c.encoder2], &mut h3);
        }
        h3.iter_mut().for_each(|v| *v = v.tanh());

        let mut z = vec![0.0; 4 * hsz];
        affine(self.g(WX), self.g(BL), &h3, &mut z);
        add_matvec(self.g(WH), &state.h, &mut z);
        let mut gates = z;
        for (k, v) in gates.iter_mut().enumerate() {
            *v = if (2 * hsz..3 * hsz).contains(&k) { v.tanh() } else { sigmoid(*v) };
        }
        let c_prev = std::mem::take(&mut state.c);
        let h_prev = std::mem::take(&mut state.h);
        let mut c_new = vec![0.0; hsz];
        let mut tanh_c = vec![0.0; hsz];
        let mut h_new = vec![0.0; hsz];
        for k in 0..hsz {
            let (i, f, g, o) = (gates[k], gates[hsz + k], gates[2 * hsz + k], gates[3 * hsz + k]);
            c_new[k] = f * c_prev[k] + i * g;
            tanh_c[k] = c_new[k].tanh();
            h_new[k] = o * tanh_c[k];
        }
        let mut q = [0.0; NUM_ACTIONS];
        affine(self.g(WQ), self.g(BQ), &h_new, &mut q);
        state.h = h_new.clone();
        state.c = c_new;
        let cache = StepCache { x: *x, h1, h2, h3, gates, c_prev, h_prev, tanh_c, h: h_new };
        (q, cache)
    }

    pub fn forward(&self, x: &Features, state: &mut LstmState) -> QValues {
        self.forward_cached(x, state).0
    }

    /// Runs a whole sequence from a zero state.
    pub fn forward_sequence(&self, xs: &[Features]) -> (Vec<QValues>, Vec<StepCache>) {
        let mut state = self.initial_state();
        xs.iter().map(|x| self.forward_cached(x, &mut state)).unzip()
    }

    /// Accumulates parameter gradients for a sequence given `dL/dq` per step.
    pub fn backward_sequence(&self, caches: &[StepCache], dq: &[QValues], grad: &mut [f64]) {
        assert_eq!(caches.len(), dq.len());
        assert_eq!(grad.len(), self.layout.total);
        let c = &self.config;
        let hsz = c.lstm;
        let ranges: Vec<_> = self.layout.groups.iter().map(Group::range).collect();
        let mut dh_next = vec![0.0; hsz];
        let mut dc_next = vec![0.0; hsz];
        let mut dz = vec![0.0; 4 * hsz];
        for (cache, dq_t) in caches.iter().zip(dq).rev() {
            let mut dh = std::mem::take(&mut dh_next);
            add_matvec_t(self.g(WQ), dq_t, &mut dh);
            add_outer(&mut grad[ranges[WQ].clone()], dq_t, &cache.h);
            for (g, d) in grad[ranges[BQ].clone()].iter_mut().zip(dq_t) {
                *g += d;
            }
            for k in 0..hsz {
                let (i, f, g, o) = (
                    cache.gates[k],
                    cache.gates[hsz + k],
                    cache.gates[2 * hsz + k],
                    cache.gates[3 * hsz + k],
                );
                let t = cache.tanh_c[k];
                let dc = dh[k] * o * (1.0 - t * t) + dc_next[k];
                dz[k] = dc * g * i * (1.0 - i);
                dz[hsz + k] = dc * cache.c_prev[k] * f * (1.0 - f);
                dz[2 * hsz + k] = dc * i * (1.0 - g * g);
                dz[3 * hsz + k] = dh[k] * t * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            add_outer(&mut grad[ranges[WX].clone()], &dz, &cache.h3);
            add_outer(&mut grad[ranges[WH].clone()], &dz, &cache.h_prev);
            for (g, d) in grad[ranges[BL].clone()].iter_mut().zip(&dz) {
                *g += d;
            }
            dh_next = vec![0.0; hsz];
            add_matvec_t(self.g(WH), &dz, &mut dh_next);
            let mut da3 = vec![0.0; c.fusion];
            add_matvec_t(self.g(WX), &dz, &mut da3);
            for (d, h) in da3.iter_mut().zip(&cache.h3) {
                *d *= 1.0 - h * h;
            }
            for (g, d) in grad[ranges[B3].clone()].iter_mut().zip(&da3) {
                *g += d;
            }
            for s in 0..MAX_VEHICLES {
                let h1 = &cache.h1[s * c.encoder1..(s + 1) * c.encoder1];
                let h2 = &cache.h2[s * c.encoder2..(s + 1) * c.encoder2];
                let xs = &cache.x[s * FEATURES_PER_SLOT..(s + 1) * FEATURES_PER_SLOT];
                add_outer(&mut grad[ranges[W3 + s].clone()], &da3, h2);
                let mut da2 = vec![0.0; c.encoder2];
                add_matvec_t(self.g(W3 + s), &da3, &mut da2);
                for (d, h) in da2.iter_mut().zip(h2) {
                    *d *= 1.0 - h * h;
                }
                add_outer(&mut grad[ranges[W2].clone()], &da2, h1);
                for (g, d) in grad[ranges[B2].clone()].iter_mut().zip(&da2) {
                    *g += d;
                }
                let mut da1 = vec![0.0; c.encoder1];
                add_matvec_t(self.g(W2), &da2, &mut da1);
                for (d, h) in da1.iter_mut().zip(h1) {
                    *d *= 1.0 - h * h;
                }
                add_outer(&mut grad[ranges[W1].clone()], &da1, xs);
                for (g, d) in grad[ranges[B1].clone()].iter_mut().zip(&da1) {
                    *g += d;
                }
            }
        }
    }

    /// Hidden activations of one step, for sanity checks.
    pub fn hidden_activations(cache: &StepCache) -> impl Iterator<Item = f64> + '_ {
        cache.h1.iter().chain(&cache.h2).chain(&cache.h3).chain(&cache.h).copied()
    }
}
