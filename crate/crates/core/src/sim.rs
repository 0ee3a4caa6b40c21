//! Intersection world stepped at a fixed rate.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::MAX_VEHICLES;
use crate::error::{Error, Result};
use crate::sm::{intention_accel, sm_accel, IntentionParams, SmParams, SmTarget, A_MAX};
use crate::topology::{frames_overlap, PathId, PathTopology};

/// Longitudinal state along a vehicle's own path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub p: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intention {
    TakeWay,
    GiveWay,
    Cautious,
}

impl Intention {
    pub const ALL: [Intention; 3] = [Intention::TakeWay, Intention::GiveWay, Intention::Cautious];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Success,
    Failure,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub kind: OutcomeKind,
    pub elapsed: f64,
    pub step_count: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EgoObservation {
    pub p: f64,
    pub v: f64,
    pub a: f64,
    /// Signed distance to the nearest crossing not yet passed.
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleObservation {
    pub exists: bool,
    pub p: f64,
    pub v: f64,
    pub a: f64,
    /// Crossing point in ego arc length.
    pub p_cross_ego: f64,
    /// Distance to the crossing along the vehicle's own path, `p_cross_own - p`.
    pub delta: f64,
}

impl VehicleObservation {
    pub fn p_cross_own(&self) -> f64 {
        self.p + self.delta
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ego: EgoObservation,
    pub vehicles: [VehicleObservation; MAX_VEHICLES],
}

impl Observation {
    pub fn exists(&self, slot: usize) -> bool {
        self.vehicles.get(slot).is_some_and(|v| v.exists)
    }
}

/// Simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Integration step (s).
    pub ts: f64,
    /// Episode timeout (s).
    pub timeout: f64,
    /// Vehicles further than this from their crossing are not observed (m).
    pub sight_range: f64,
    /// Ego jerk bound (m/s^3).
    pub j_max: f64,
    pub spawn_speed: [f64; 2],
    pub spawn_distance: [f64; 2],
    /// Traffic vehicles per crossing path, inclusive range.
    pub traffic_per_path: [usize; 2],
    /// Minimum spawn spacing between vehicles on the same path (m).
    pub spawn_gap: f64,
    /// Relative frequency of take-way, give-way and cautious traffic.
    pub intention_weights: [f64; 3],
    /// Half-width of the crossing area used for "crossing clear" checks (m).
    pub occupancy_threshold: f64,
    pub sm: SmParams,
    pub intentions: IntentionParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            ts: 1.0 / 30.0,
            timeout: 25.0,
            sight_range: 100.0,
            j_max: 10.0,
            spawn_speed: [10.0, 30.0],
            spawn_distance: [10.0, 55.0],
            traffic_per_path: [1, 2],
            spawn_gap: 8.0,
            intention_weights: [1.0, 1.0, 1.0],
            occupancy_threshold: 4.0,
            sm: SmParams::default(),
            intentions: IntentionParams::default(),
        }
    }
}

impl SimConfig {
    pub fn timeout_steps(&self) -> usize {
        (self.timeout / self.ts).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.ts > 0.0
            && self.timeout > 0.0
            && self.sight_range > 0.0
            && self.j_max > 0.0
            && self.spawn_speed[0] >= 0.0
            && self.spawn_speed[0] <= self.spawn_speed[1]
            && self.spawn_distance[0] <= self.spawn_distance[1]
            && self.traffic_per_path[0] <= self.traffic_per_path[1]
            && self.occupancy_threshold > 0.0
            && self.intention_weights.iter().all(|w| *w >= 0.0)
            && self.intention_weights.iter().sum::<f64>() > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("simulation config: {self:?}")));
        }
        self.sm.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficVehicle {
    pub path: usize,
    pub state: VehicleState,
    pub intention: Intention,
    /// Cruising speed, the spawn speed.
    pub v_ref: f64,
    pub active: bool,
}

/// One episode of the intersection world.
#[derive(Clone, Debug)]
pub struct World {
    topology: Arc<PathTopology>,
    config: SimConfig,
    ego: VehicleState,
    traffic: Vec<TrafficVehicle>,
    slots: [Option<usize>; MAX_VEHICLES],
    steps: usize,
    outcome: Option<EpisodeOutcome>,
}

/// Initial state of an episode drawn from `rng_seed`.
pub fn spawn_episode(topology: Arc<PathTopology>, config: &SimConfig, rng_seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let [v_lo, v_hi] = config.spawn_speed;
    let [d_lo, d_hi] = config.spawn_distance;
    let first = topology.crossings()[0].p_cross_ego;
    let ego = VehicleState {
        p: first - rng.gen_range(d_lo..=d_hi),
        v: rng.gen_range(v_lo..=v_hi),
        a: 0.0,
    };
    let mut traffic = Vec::new();
    for crossing in topology.crossings() {
        let count = rng.gen_range(config.traffic_per_path[0]..=config.traffic_per_path[1]);
        let mut distances: Vec<f64> = Vec::with_capacity(count);
        for _ in 0..count {
            // Rejection keeps vehicles on one path apart; give up on a crowded path.
            let mut placed = None;
            for _ in 0..100 {
                let d = rng.gen_range(d_lo..=d_hi);
                if distances.iter().all(|o| (o - d).abs() >= config.spawn_gap) {
                    placed = Some(d);
                    break;
                }
            }
            let Some(d) = placed else { break };
            distances.push(d);
            let intention = draw_intention(&mut rng, &config.intention_weights);
            let v0 = rng.gen_range(v_lo..=v_hi);
            traffic.push(TrafficVehicle {
                path: crossing.cross_path,
                state: VehicleState { p: crossing.p_cross_own - d, v: v0, a: 0.0 },
                intention,
                v_ref: v0,
                active: true,
            });
        }
    }
    let mut world = World {
        topology,
        config: config.clone(),
        ego,
        traffic,
        slots: [None; MAX_VEHICLES],
        steps: 0,
        outcome: None,
    };
    world.refresh_slots();
    world
}

fn draw_intention(rng: &mut ChaCha8Rng, weights: &[f64; 3]) -> Intention {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (kind, w) in Intention::ALL.iter().zip(weights) {
        if u < *w {
            return *kind;
        }
        u -= w;
    }
    // Rounding at the top end: last kind with positive weight.
    let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    Intention::ALL[last]
}

impl World {
    /// World with explicitly placed vehicles; used for scripted scenarios.
    pub fn from_parts(
        topology: Arc<PathTopology>,
        config: SimConfig,
        ego: VehicleState,
        traffic: Vec<TrafficVehicle>,
    ) -> Result<Self> {
        for t in &traffic {
            if topology.crossing_for(t.path).is_none() {
                return Err(Error::InvalidInput(format!("no crossing path {}", t.path)));
            }
        }
        let mut world = Self {
            topology,
            config,
            ego,
            traffic,
            slots: [None; MAX_VEHICLES],
            steps: 0,
            outcome: None,
        };
        world.refresh_slots();
        Ok(world)
    }

    pub fn topology(&self) -> &PathTopology {
        &self.topology
    }

    pub fn shared_topology(&self) -> Arc<PathTopology> {
        Arc::clone(&self.topology)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn ego(&self) -> &VehicleState {
        &self.ego
    }

    pub fn traffic(&self) -> &[TrafficVehicle] {
        &self.traffic
    }

    /// Traffic index held by each observation slot.
    pub fn slots(&self) -> [Option<usize>; MAX_VEHICLES] {
        self.slots
    }

    pub fn step_count(&self) -> usize {
        self.steps
    }

    pub fn elapsed(&self) -> f64 {
        self.steps as f64 * self.config.ts
    }

    pub fn outcome(&self) -> Option<EpisodeOutcome> {
        self.outcome
    }

    fn p_cross_ego(&self, path: usize) -> f64 {
        self.topology.crossing_for(path).map(|c| c.p_cross_ego).unwrap_or(f64::NAN)
    }

    fn p_cross_own(&self, path: usize) -> f64 {
        self.topology.crossing_for(path).map(|c| c.p_cross_own).unwrap_or(f64::NAN)
    }

    /// Whether the ego has cleared the crossing used by `path`.
    pub fn crossing_clear(&self, path: usize) -> bool {
        self.ego.p - self.p_cross_ego(path) > self.config.occupancy_threshold
    }

    fn in_sight(&self, t: &TrafficVehicle) -> bool {
        t.active && (self.p_cross_own(t.path) - t.state.p).abs() <= self.config.sight_range
    }

    /// Drops vanished vehicles from their slots and fills free slots with the
    /// unassigned vehicles closest to their crossings.
    fn refresh_slots(&mut self) {
        let visible: Vec<bool> = self.traffic.iter().map(|t| self.in_sight(t)).collect();
        for slot in self.slots.iter_mut() {
            if slot.is_some_and(|i| !visible[i]) {
                *slot = None;
            }
        }
        let mut candidates: Vec<(f64, usize)> = self
            .traffic
            .iter()
            .enumerate()
            .filter(|(i, t)| self.in_sight(t) && !self.slots.contains(&Some(*i)))
            .map(|(i, t)| ((self.p_cross_own(t.path) - t.state.p).abs(), i))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut next = candidates.into_iter();
        for slot in self.slots.iter_mut() {
            if slot.is_none() {
                match next.next() {
                    Some((_, i)) => *slot = Some(i),
                    None => break,
                }
            }
        }
    }

    pub fn observe(&self) -> Observation {
        let mut obs = Observation {
            ego: EgoObservation {
                p: self.ego.p,
                v: self.ego.v,
                a: self.ego.a,
                delta: self.ego_delta(),
            },
            vehicles: [VehicleObservation::default(); MAX_VEHICLES],
        };
        for (slot, entry) in self.slots.iter().zip(obs.vehicles.iter_mut()) {
            if let Some(i) = *slot {
                let t = &self.traffic[i];
                *entry = VehicleObservation {
                    exists: true,
                    p: t.state.p,
                    v: t.state.v,
                    a: t.state.a,
                    p_cross_ego: self.p_cross_ego(t.path),
                    delta: self.p_cross_own(t.path) - t.state.p,
                };
            }
        }
        obs
    }

    fn ego_delta(&self) -> f64 {
        let crossings = self.topology.crossings();
        crossings
            .iter()
            .map(|c| c.p_cross_ego - self.ego.p)
            .find(|d| *d >= 0.0)
            .unwrap_or_else(|| crossings.last().map_or(0.0, |c| c.p_cross_ego - self.ego.p))
    }

    fn traffic_accel(&self, i: usize) -> f64 {
        let t = &self.traffic[i];
        let p_cross_own = self.p_cross_own(t.path);
        let cfg = &self.config;
        let mut a = intention_accel(
            t.intention,
            &cfg.sm,
            &cfg.intentions,
            &t.state,
            t.v_ref,
            p_cross_own,
            self.crossing_clear(t.path),
        );
        let leader = self
            .traffic
            .iter()
            .filter(|o| o.active && o.path == t.path && o.state.p > t.state.p)
            .min_by(|x, y| x.state.p.total_cmp(&y.state.p));
        if let Some(l) = leader {
            if l.state.p - t.state.p <= cfg.intentions.follow_range {
                let target = SmTarget { p: l.state.p - cfg.intentions.headway, v: l.state.v };
                a = a.min(sm_accel(&cfg.sm.with_v_max(t.v_ref), &t.state, Some(target)));
            }
        }
        a.clamp(-A_MAX, A_MAX)
    }

    /// Advances one step with the given ego jerk.
    pub fn step(&mut self, ego_jerk: f64) -> Result<(Observation, Option<EpisodeOutcome>)> {
        if self.outcome.is_some() {
            return Err(Error::EpisodeOver);
        }
        if !ego_jerk.is_finite() || ego_jerk.abs() > self.config.j_max + 1e-9 {
            return Err(Error::OutOfRange {
                value: ego_jerk,
                min: -self.config.j_max,
                max: self.config.j_max,
            });
        }
        let ts = self.config.ts;
        let accels: Vec<f64> = (0..self.traffic.len())
            .map(|i| if self.traffic[i].active { self.traffic_accel(i) } else { 0.0 })
            .collect();
        for (t, a) in self.traffic.iter_mut().zip(accels) {
            if t.active {
                t.state = integrate_accel(t.state, a, ts);
            }
        }
        self.ego = integrate_jerk(self.ego, ego_jerk, ts);
        for t in self.traffic.iter_mut() {
            let len = self.topology.cross_paths()[t.path].length;
            if t.active && t.state.p > len {
                t.active = false;
            }
        }
        self.steps += 1;
        self.refresh_slots();

        let kind = if self.collision() {
            Some(OutcomeKind::Failure)
        } else if self.ego.p >= self.topology.goal_position() {
            Some(OutcomeKind::Success)
        } else if self.steps >= self.config.timeout_steps() {
            Some(OutcomeKind::Timeout)
        } else {
            None
        };
        self.outcome = kind.map(|kind| EpisodeOutcome {
            kind,
            elapsed: self.elapsed(),
            step_count: self.steps,
        });
        Ok((self.observe(), self.outcome))
    }

    /// Whether any active traffic footprint overlaps the ego footprint.
    pub fn collision(&self) -> bool {
        let ego = self.topology.frame_unchecked(PathId::Ego, self.ego.p);
        self.traffic.iter().filter(|t| t.active).any(|t| {
            let frame = self.topology.frame_unchecked(PathId::Cross(t.path), t.state.p);
            frames_overlap(&ego, &frame)
        })
    }
}

/// Constant-acceleration update that stops at zero speed instead of reversing.
pub fn integrate_accel(s: VehicleState, a: f64, ts: f64) -> VehicleState {
    let a = a.clamp(-A_MAX, A_MAX);
    let v_next = s.v + a * ts;
    if v_next >= 0.0 {
        VehicleState { p: s.p + s.v * ts + 0.5 * a * ts * ts, v: v_next, a }
    } else {
        // Stops within the step.
        let t_stop = s.v / -a;
        VehicleState { p: s.p + 0.5 * s.v * t_stop, v: 0.0, a: 0.0 }
    }
}

/// Triple-integrator update with the acceleration kept within `A_MAX` and
/// the speed floored at zero.
pub fn integrate_jerk(s: VehicleState, jerk: f64, ts: f64) -> VehicleState {
    let jerk = jerk.clamp((-A_MAX - s.a) / ts, (A_MAX - s.a) / ts);
    let p = s.p + s.v * ts + 0.5 * s.a * ts * ts + jerk * ts * ts * ts / 6.0;
    let v = s.v + s.a * ts + 0.5 * jerk * ts * ts;
    let a = (s.a + jerk * ts).clamp(-A_MAX, A_MAX);
    // Near standstill the cubic position term can dip below the start; no reversing.
    let p = p.max(s.p);
    if v < 0.0 {
        VehicleState { p, v: 0.0, a: a.max(0.0) }
    } else {
        VehicleState { p, v, a }
    }
}
