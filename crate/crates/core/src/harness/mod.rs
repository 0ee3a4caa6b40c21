//! Training and evaluation harness: scenario generation, the agent loop,
//! metrics, checkpoints and CSV exports.

mod control;
mod trace;

pub use control::{realized_comfort, ControlStep, Controller, SmAgent};
pub use trace::TraceWriter;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::dqn::{
    normalize, save_checkpoint, select_action, train_step, Adam, EpisodeRecord, FeatureScale, Network,
    NetworkConfig, QMask, ReplayBuffer, TrainConfig, Transition,
};
use crate::error::{Error, Result};
use crate::mpc::{MpcConfig, MpcPlanner};
use crate::reward::{step_reward, terminal_reward, CrashClock, RewardConfig};
use crate::sim::{spawn_episode, EpisodeOutcome, Observation, OutcomeKind, SimConfig};
use crate::sm::SmParams;
use crate::topology::{PathTopology, TopologySpec, D_CROSS_CHOICES};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Single,
    Double,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Mpc,
    Sm,
}

/// Everything a run needs; together with the seed it determines every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub scenario: Scenario,
    /// Crossing spacings drawn per episode in the double scenario.
    pub d_cross: Vec<f64>,
    pub agent: AgentKind,
    pub seed: u64,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    /// Training episodes between evaluation points on the curve.
    pub eval_interval: usize,
    /// Simulation steps per high-level decision.
    pub decision_interval: usize,
    /// Write a step-level trace for every evaluation episode.
    pub eval_traces: bool,
    pub topology: TopologySpec,
    pub sim: SimConfig,
    pub mpc: MpcConfig,
    pub sm: SmParams,
    pub reward: RewardConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub features: FeatureScale,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            scenario: Scenario::Single,
            d_cross: D_CROSS_CHOICES.to_vec(),
            agent: AgentKind::Mpc,
            seed: 0,
            train_episodes: 10_000,
            eval_episodes: 300,
            eval_interval: 500,
            decision_interval: 10,
            eval_traces: false,
            topology: TopologySpec::default(),
            sim: SimConfig::default(),
            mpc: MpcConfig::default(),
            sm: SmParams::default(),
            reward: RewardConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            features: FeatureScale::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.decision_interval == 0 || self.eval_interval == 0 {
            return Err(Error::InvalidConfig("decision and evaluation intervals must be positive".into()));
        }
        if (self.sim.ts - self.mpc.ts).abs() > 1e-12 {
            return Err(Error::InvalidConfig("simulation and planner step sizes differ".into()));
        }
        if self.scenario == Scenario::Double {
            if self.d_cross.is_empty() {
                return Err(Error::InvalidConfig("double scenario needs at least one d_cross".into()));
            }
            for d in &self.d_cross {
                PathTopology::build(&self.topology_spec(Some(*d)))?;
            }
        } else {
            PathTopology::build(&self.topology_spec(None))?;
        }
        self.sim.validate()?;
        self.mpc.validate()?;
        self.sm.validate()?;
        self.reward.validate()?;
        self.network.validate()?;
        self.train.validate()
    }

    fn topology_spec(&self, d_cross: Option<f64>) -> TopologySpec {
        match d_cross {
            None => TopologySpec { crossings: 1, ..self.topology.clone() },
            Some(d) => TopologySpec { crossings: 2, d_cross: d, ..self.topology.clone() },
        }
    }
}

/// Mixes a run seed with a stream and index into an episode seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_EXPLORE: u64 = 4;
const STREAM_LAYOUT: u64 = 5;

pub fn train_seed(cfg: &RunConfig, episode: usize) -> u64 {
    derive_seed(cfg.seed, STREAM_TRAIN, episode as u64)
}

pub fn eval_seed(cfg: &RunConfig, episode: usize) -> u64 {
    derive_seed(cfg.seed, STREAM_EVAL, episode as u64)
}

/// Who picks the high-level actions.
#[derive(Clone, Copy, Debug)]
pub enum Policy<'a> {
    Network(&'a Network),
    /// Always the same action (must be valid in every state).
    Fixed(Action),
}

/// Shared per-run objects: controller and prebuilt topologies.
pub struct Runner {
    config: RunConfig,
    controller: Controller,
    topologies: Vec<Arc<PathTopology>>,
}

#[derive(Clone, Debug)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub d_cross: f64,
    pub outcome: EpisodeOutcome,
    pub total_reward: f64,
    pub record: EpisodeRecord,
    /// Actions taken, one per decision.
    pub actions: Vec<Action>,
}

impl Runner {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let controller = match config.agent {
            AgentKind::Mpc => Controller::Mpc(MpcPlanner::new(config.mpc.clone())?),
            AgentKind::Sm => Controller::Sm(SmAgent::new(config.sm, config.mpc.clone(), config.sim.intentions.headway)),
        };
        let topologies = match config.scenario {
            Scenario::Single => vec![Arc::new(PathTopology::build(&config.topology_spec(None))?)],
            Scenario::Double => config
                .d_cross
                .iter()
                .map(|d| PathTopology::build(&config.topology_spec(Some(*d))).map(Arc::new))
                .collect::<Result<_>>()?,
        };
        Ok(Self { config, controller, topologies })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn topology_for(&self, seed: u64) -> Arc<PathTopology> {
        let idx = if self.topologies.len() == 1 {
            0
        } else {
            ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_LAYOUT, 0)).gen_range(0..self.topologies.len())
        };
        Arc::clone(&self.topologies[idx])
    }

    /// Runs one episode. `rng` drives exploration only.
    pub fn run_episode(
        &self,
        policy: Policy<'_>,
        epsilon: f64,
        rng: &mut ChaCha8Rng,
        seed: u64,
        mut trace: Option<&mut TraceWriter>,
    ) -> Result<EpisodeSummary> {
        let cfg = &self.config;
        let topology = self.topology_for(seed);
        let d_cross = topology.d_cross();
        let mut world = spawn_episode(topology, &cfg.sim, seed);
        let mut obs = world.observe();
        let mut lstm = match policy {
            Policy::Network(net) => Some(net.initial_state()),
            Policy::Fixed(_) => None,
        };
        let mut clock = CrashClock::new();
        let mut record = EpisodeRecord::default();
        let mut actions = Vec::new();
        if let Some(t) = trace.as_deref_mut() {
            t.begin(&world)?;
        }
        let outcome = loop {
            let features = normalize(&obs, &cfg.features);
            let mask = QMask::from_observation(&obs);
            let (action, q) = match policy {
                Policy::Network(net) => {
                    let q = net.forward(&features, lstm.as_mut().expect("network state"));
                    (select_action(&q, &mask, epsilon, rng), Some(q))
                }
                Policy::Fixed(a) => {
                    if !mask.is_valid(a.index()) {
                        return Err(Error::InvalidInput(format!("scripted action {a} is masked")));
                    }
                    (a, None)
                }
            };
            actions.push(action);
            let mut feedback: Option<(bool, Option<f64>)> = None;
            let (mut accels, mut jerks) = (Vec::new(), Vec::new());
            let mut ended = None;
            for _ in 0..cfg.decision_interval {
                let ego = *world.ego();
                let step = self.controller.step(&ego, &obs, applied_action(action, &obs))?;
                feedback.get_or_insert((step.p_crash, step.p_comf));
                let jerk = step.jerk.clamp(-cfg.sim.j_max, cfg.sim.j_max);
                let (next, out) = world.step(jerk)?;
                accels.push(world.ego().a);
                jerks.push(jerk);
                if let Some(t) = trace.as_deref_mut() {
                    t.row(&world, jerk, action, q.as_ref(), &step)?;
                }
                obs = next;
                if out.is_some() {
                    ended = out;
                    break;
                }
            }
            let (p_crash, p_comf) = feedback.expect("at least one step per decision");
            let p_comf = p_comf.unwrap_or_else(|| realized_comfort(&accels, &jerks, &cfg.mpc));
            let reward = match &ended {
                Some(o) => terminal_reward(o, &cfg.reward),
                None => step_reward(p_crash, p_comf, world.elapsed(), &mut clock, &cfg.reward),
            };
            if let Some(t) = trace.as_deref_mut() {
                t.set_reward(reward)?;
            }
            record.transitions.push(Transition {
                features,
                mask,
                action: action.index(),
                reward,
                terminal: ended.is_some(),
            });
            if let Some(o) = ended {
                break o;
            }
        };
        if let Some(t) = trace {
            t.finish()?;
        }
        let total_reward = record.transitions.iter().map(|t| t.reward).sum();
        Ok(EpisodeSummary { seed, d_cross, outcome, total_reward, record, actions })
    }

    /// Greedy rollouts over the fixed evaluation seeds.
    pub fn evaluate(&self, policy: Policy<'_>, episodes: usize) -> Result<(Metrics, Vec<EpisodeSummary>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let summaries = (0..episodes)
            .map(|i| self.run_episode(policy, 0.0, &mut rng, eval_seed(&self.config, i), None))
            .collect::<Result<Vec<_>>>()?;
        Ok((Metrics::from_summaries(&summaries), summaries))
    }
}

/// Action handed to the controller within a decision interval. A followed
/// slot can empty before the next decision; the ego then yields.
pub fn applied_action(action: Action, obs: &Observation) -> Action {
    match action {
        Action::Follow(j) if !obs.vehicles.get(j).is_some_and(|v| v.exists) => Action::GiveWay,
        a => a,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub success_rate: f64,
    /// Collisions over collisions plus timeouts; undefined without failures.
    pub ctr: Option<f64>,
    pub mean_reward: f64,
}

impl Metrics {
    pub fn from_summaries(summaries: &[EpisodeSummary]) -> Self {
        let mut m = Metrics { episodes: summaries.len(), ..Metrics::default() };
        for s in summaries {
            match s.outcome.kind {
                OutcomeKind::Success => m.successes += 1,
                OutcomeKind::Failure => m.collisions += 1,
                OutcomeKind::Timeout => m.timeouts += 1,
            }
            m.mean_reward += s.total_reward;
        }
        if m.episodes > 0 {
            m.success_rate = m.successes as f64 / m.episodes as f64;
            m.mean_reward /= m.episodes as f64;
        }
        let failed = m.collisions + m.timeouts;
        m.ctr = (failed > 0).then(|| m.collisions as f64 / failed as f64);
        m
    }
}

/// One evaluation point of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub success_rate: f64,
    pub collisions: usize,
    pub timeouts: usize,
    pub ctr: Option<f64>,
    pub mean_reward: f64,
}

impl CurvePoint {
    fn new(episode: usize, m: &Metrics) -> Self {
        Self {
            episode,
            success_rate: m.success_rate,
            collisions: m.collisions,
            timeouts: m.timeouts,
            ctr: m.ctr,
            mean_reward: m.mean_reward,
        }
    }
}

pub struct TrainOutput {
    pub network: Network,
    pub curve: Vec<CurvePoint>,
    pub final_metrics: Metrics,
}

/// Trains a policy; writes `checkpoint.bin` and `curve.csv` when `out` is given.
pub fn train(config: &RunConfig, out: Option<&Path>) -> Result<TrainOutput> {
    let runner = Runner::new(config.clone())?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_INIT, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_EXPLORE, 0));
    let mut online = Network::init(config.network, &mut init_rng)?;
    let mut target = online.clone();
    let mut adam = Adam::new(online.params.len(), config.train.learning_rate);
    let mut replay = ReplayBuffer::new(config.train.replay_capacity);
    let mut gradient_steps = 0usize;

    let (m0, _) = runner.evaluate(Policy::Network(&online), config.eval_episodes)?;
    log::info!("episode 0: success {:.3}", m0.success_rate);
    let mut curve = vec![CurvePoint::new(0, &m0)];
    let mut final_metrics = m0;
    let total = config.train_episodes;
    for ep in 0..total {
        let eps = config.train.epsilon(ep, total);
        let summary = runner.run_episode(Policy::Network(&online), eps, &mut rng, train_seed(config, ep), None)?;
        replay.push(summary.record);
        if replay.len() >= config.train.warmup_episodes {
            for _ in 0..config.train.updates_per_episode {
                let batch = replay.sample(&mut rng, config.train.batch_size);
                train_step(&mut online, &target, &mut adam, &batch, &config.train);
                gradient_steps += 1;
                if gradient_steps.is_multiple_of(config.train.target_sync) {
                    target = online.clone();
                }
            }
        }
        if (ep + 1) % config.eval_interval == 0 || ep + 1 == total {
            let (m, _) = runner.evaluate(Policy::Network(&online), config.eval_episodes)?;
            log::info!(
                "episode {}: success {:.3}, collisions {}, timeouts {}",
                ep + 1,
                m.success_rate,
                m.collisions,
                m.timeouts
            );
            curve.push(CurvePoint::new(ep + 1, &m));
            final_metrics = m;
        }
    }
    if let Some(dir) = out {
        fs::write(dir.join("checkpoint.bin"), save_checkpoint(&online))?;
        write_curve(&dir.join("curve.csv"), &curve)?;
    }
    Ok(TrainOutput { network: online, curve, final_metrics })
}

/// Greedy evaluation; writes `metrics.csv`, `episodes.csv` and optional traces.
pub fn evaluate(config: &RunConfig, network: &Network, out: Option<&Path>) -> Result<(Metrics, Vec<EpisodeSummary>)> {
    let runner = Runner::new(config.clone())?;
    let (metrics, summaries) = match out.filter(|_| config.eval_traces) {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let summaries = (0..config.eval_episodes)
                .map(|i| {
                    let seed = eval_seed(config, i);
                    let mut trace = TraceWriter::create(&dir.join(format!("trace_{seed}.csv")))?;
                    runner.run_episode(Policy::Network(network), 0.0, &mut rng, seed, Some(&mut trace))
                })
                .collect::<Result<Vec<_>>>()?;
            (Metrics::from_summaries(&summaries), summaries)
        }
        None => runner.evaluate(Policy::Network(network), config.eval_episodes)?,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_metrics(&dir.join("metrics.csv"), &metrics)?;
        write_episodes(&dir.join("episodes.csv"), &summaries)?;
    }
    Ok((metrics, summaries))
}

/// One greedy episode with a step-level trace at `out/trace_<seed>.csv`.
pub fn rollout(config: &RunConfig, network: &Network, seed: u64, out: &Path) -> Result<EpisodeSummary> {
    let runner = Runner::new(config.clone())?;
    fs::create_dir_all(out)?;
    let mut trace = TraceWriter::create(&out.join(format!("trace_{seed}.csv")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    runner.run_episode(Policy::Network(network), 0.0, &mut rng, seed, Some(&mut trace))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "success_rate", "collisions", "timeouts", "ctr", "mean_reward"])?;
    for p in curve {
        w.write_record([
            p.episode.to_string(),
            p.success_rate.to_string(),
            p.collisions.to_string(),
            p.timeouts.to_string(),
            fmt_opt(p.ctr),
            p.mean_reward.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, m: &Metrics) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episodes", "successes", "collisions", "timeouts", "success_rate", "ctr", "mean_reward"])?;
    w.write_record([
        m.episodes.to_string(),
        m.successes.to_string(),
        m.collisions.to_string(),
        m.timeouts.to_string(),
        m.success_rate.to_string(),
        fmt_opt(m.ctr),
        m.mean_reward.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn write_episodes(path: &Path, summaries: &[EpisodeSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "d_cross", "outcome", "elapsed", "steps", "decisions", "total_reward"])?;
    for s in summaries {
        w.write_record([
            s.seed.to_string(),
            s.d_cross.to_string(),
            format!("{:?}", s.outcome.kind).to_lowercase(),
            s.outcome.elapsed.to_string(),
            s.outcome.step_count.to_string(),
            s.record.transitions.len().to_string(),
            s.total_reward.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

