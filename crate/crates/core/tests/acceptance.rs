//! Acceptance suite. Every criterion prints one PASS/FAIL line.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! output. By default it checks the property criteria (1 to 7) and the
//! smoke-scale training criteria (8 and 10, several minutes). The full-scale
//! training criteria (8, 9 and 10 at 10^4 episodes) take hours and run only
//! when asked for:
//!
//! ```text
//! cargo test --release -p intersect --test acceptance -- --ignored
//! ```

mod support;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use intersect::dqn::*;
use intersect::harness::{self, AgentKind, Metrics, Policy, RunConfig, Runner, Scenario};
use intersect::mpc::{predict_obstacles, MpcConfig, MpcPlanner};
use intersect::qp::{QpSolver, QpStatus};
use intersect::reward::{step_reward, CrashClock, RewardConfig};
use intersect::sim::{integrate_jerk, spawn_episode, Observation, OutcomeKind, SimConfig, VehicleState};
use intersect::topology::{frames_overlap, PathTopology, VehicleFrame, D_CROSS_CHOICES};
use intersect::{Action, NUM_ACTIONS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::dqn_oracle::{gradient_errors, random_features};
use support::geometry::{analytic_collision, grid_overlap, Rect};
use support::mpc_oracle::*;
use support::qp_oracle::{enumerate, infeasible_qp, random_qp, OracleVerdict};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Prints the verdict line and returns whether the criterion passed.
fn report(id: &str, title: &str, outcome: Outcome) -> bool {
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("criterion {id:<6} {tag}  {title}: {detail}");
    ok
}

fn qp_solver() -> Outcome {
    let start = Instant::now();
    let solver = QpSolver::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_kkt = 0.0f64;
    let mut worst_obj = 0.0f64;
    for case in 0..200 {
        let p = random_qp(&mut rng, 1000);
        let sol = solver.solve(&p, None).map_err(|e| e.to_string())?;
        match enumerate(&p) {
            OracleVerdict::Optimal(obj) => {
                check(sol.status == QpStatus::Optimal, || format!("case {case}: {:?}", sol.status))?;
                worst_kkt = worst_kkt.max(sol.kkt_residual);
                worst_obj = worst_obj.max((sol.objective - obj).abs() / (1.0 + obj.abs()));
            }
            OracleVerdict::Infeasible => check(sol.status == QpStatus::Infeasible, || format!("case {case} missed infeasibility"))?,
        }
    }
    // Planner QPs are the production fixtures.
    let planner = MpcPlanner::new(MpcConfig::default()).unwrap();
    for _ in 0..100 {
        let obs = random_observation(&mut rng);
        let action = random_action(&mut rng, &obs);
        let ego = random_ego(&mut rng);
        let plan = planner.plan(&ego, &obs, action).map_err(|e| e.to_string())?;
        let sol = solver.solve(&planner.build_qp(&ego, &plan.bounds), None).map_err(|e| e.to_string())?;
        if sol.status == QpStatus::Optimal {
            worst_kkt = worst_kkt.max(sol.kkt_residual);
        }
    }
    for case in 0..50 {
        let p = infeasible_qp(&mut rng);
        let sol = solver.solve(&p, None).map_err(|e| e.to_string())?;
        let cert = sol.certificate.ok_or_else(|| format!("case {case}: no certificate"))?;
        let (residual, support) = cert.evaluate(&p);
        check(support < 0.0 && residual <= 1e-9 * support.abs().max(1.0), || {
            format!("case {case}: certificate residual {residual}, support {support}")
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst_kkt <= 1e-6, || format!("KKT residual {worst_kkt:e}"))?;
    check(worst_obj <= 1e-5, || format!("objective error {worst_obj:e}"))?;
    check(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("max KKT {worst_kkt:.1e}, max objective error {worst_obj:.1e}, 50 certificates, {secs:.1} s"))
}

fn mpc_replay() -> Outcome {
    let start = Instant::now();
    let cfg = MpcConfig::default();
    let planner = MpcPlanner::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut feasible = 0;
    for _ in 0..500 {
        let obs = random_observation(&mut rng);
        let action = random_action(&mut rng, &obs);
        let ego = random_ego(&mut rng);
        let plan = planner.plan(&ego, &obs, action).map_err(|e| e.to_string())?;
        if plan.feasible {
            feasible += 1;
            let (lo, hi) = expected_bounds(&obs, action, &cfg);
            worst = worst.max(replay_violation(&ego, &plan, &lo, &hi, &cfg));
        }
    }
    check(worst <= 1e-5, || format!("violation {worst:e}"))?;

    let mut disagreements = 0;
    let mut false_feasible = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut made = 0;
    while made < 200 {
        let ego = VehicleState { p: rng.gen_range(0.0..70.0), v: rng.gen_range(0.0..30.0), a: rng.gen_range(-5.0..5.0) };
        let mut obs = Observation::default();
        obs.vehicles[0] = vehicle(rng.gen_range(0.0..60.0), rng.gen_range(5.0..30.0), 60.0, 60.0);
        let Some((s, e)) = predict_obstacles(&obs, &cfg)[0].window else { continue };
        let reachable = match max_reach(&ego, &cfg) {
            None => false,
            Some(reach) => {
                let margin = (s..=e).map(|k| reach[k] - (60.0 + cfg.padding)).fold(f64::INFINITY, f64::min);
                if margin.abs() < 1e-3 {
                    continue;
                }
                margin > 0.0
            }
        };
        made += 1;
        let plan = planner.plan(&ego, &obs, Action::TakeWay).map_err(|e| e.to_string())?;
        disagreements += (plan.feasible != reachable) as usize;
        false_feasible += (plan.feasible && !reachable) as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    check(disagreements == 0 && false_feasible == 0, || {
        format!("{disagreements} disagreements, {false_feasible} false-feasible")
    })?;
    check(secs < 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!("max violation {worst:.1e} over {feasible} feasible plans, 200/200 take-way verdicts agree, {secs:.1} s"))
}

fn discretization() -> Outcome {
    let ts = 1.0 / 30.0;
    let mut s = VehicleState { p: 0.0, v: 10.0, a: 0.0 };
    for _ in 0..30 {
        s = integrate_jerk(s, 0.0, ts);
    }
    let err = (s.p - 10.0).abs();
    check(err <= 1e-9, || format!("advance error {err:e}"))?;

    let mut obs = Observation::default();
    obs.vehicles[0] = vehicle(50.0, 15.0, 70.0, 60.0);
    let window = predict_obstacles(&obs, &MpcConfig::default())[0].window;
    check(window.map(|w| w.0) == Some(32), || format!("window {window:?}"))?;
    Ok(format!("advance error {err:.1e}, entry step 32"))
}

fn dqn_checks() -> Outcome {
    let small = NetworkConfig { encoder1: 4, encoder2: 5, fusion: 6, lstm: 4 };
    let mut errors = gradient_errors(small, 1, None);
    errors.extend(gradient_errors(NetworkConfig::default(), 2, Some(12)));
    let (name, worst) = errors.iter().cloned().fold((String::new(), 0.0), |m, e| if e.1 > m.1 { e } else { m });
    check(worst <= 1e-4, || format!("{name}: relative error {worst:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut masked_picks = 0usize;
    for draw in 0..1_000_000u32 {
        let mut mask = QMask::all();
        for j in 0..4 {
            mask.0[2 + j] = (draw >> 2) & (1 << j) != 0;
        }
        let mut q = [0.0; NUM_ACTIONS];
        q.iter_mut().for_each(|v| *v = rng.gen_range(-5.0..5.0));
        let eps = [0.0, 0.1, 0.5, 1.0][(draw & 3) as usize];
        masked_picks += !mask.is_valid(select_action(&q, &mask, eps, &mut rng).index()) as usize;
    }
    check(masked_picks == 0, || format!("{masked_picks} masked actions chosen"))?;

    let net = Network::init(NetworkConfig::default(), &mut rng).unwrap();
    let bytes = save_checkpoint(&net);
    let back = load_checkpoint(&bytes, &NetworkConfig::default()).map_err(|e| e.to_string())?;
    let xs: Vec<Features> = (0..5).map(|_| random_features(&mut rng)).collect();
    let bits = |n: &Network| n.forward_sequence(&xs).0.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    check(back.params == net.params && bits(&back) == bits(&net) && save_checkpoint(&back) == bytes, || {
        "checkpoint round trip changed the network".into()
    })?;
    Ok(format!("worst gradient error {worst:.1e} ({name}), 0 of 10^6 draws masked, checkpoint bit-exact"))
}

fn tiny_network(seed: u64) -> Network {
    let cfg = NetworkConfig { encoder1: 8, encoder2: 8, fusion: 8, lstm: 8 };
    Network::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn reward_contract() -> Outcome {
    let net = tiny_network(5);
    let mut emitted = 0usize;
    for (agent, scenario) in [(AgentKind::Mpc, Scenario::Single), (AgentKind::Sm, Scenario::Double)] {
        let cfg = RunConfig {
            agent,
            scenario,
            network: *net.config(),
            ..RunConfig::default()
        };
        let runner = Runner::new(cfg).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..40 {
            let s = runner.run_episode(Policy::Network(&net), 1.0, &mut rng, seed, None).map_err(|e| e.to_string())?;
            let ts = &s.record.transitions;
            for t in ts {
                check((-2.0..=1.0).contains(&t.reward), || format!("reward {} out of range", t.reward))?;
            }
            let expected = match s.outcome.kind {
                OutcomeKind::Success => 1.0,
                OutcomeKind::Failure => -1.0,
                OutcomeKind::Timeout => 0.5,
            };
            let last = ts.last().ok_or("empty episode")?;
            check(last.terminal && last.reward == expected, || format!("terminal {} for {:?}", last.reward, s.outcome.kind))?;
            emitted += ts.len();
        }
    }
    let cfg = RewardConfig::default();
    for tau in [0.1, 1.0, 12.5, 25.0] {
        let r = step_reward(false, 0.0, tau, &mut CrashClock::new(), &cfg);
        check(r == 0.0, || format!("shaping {r} without penalty sources"))?;
    }
    Ok(format!("{emitted} rewards in [-2, 1], terminals exact, zero shaping without penalties"))
}

fn collision_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5A7);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let mut rect = || Rect { c: [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)], heading: rng.gen_range(-3.2..3.2) };
        let (a, b) = (rect(), rect());
        let got = frames_overlap(&VehicleFrame::new(a.c, a.heading), &VehicleFrame::new(b.c, b.heading));
        mismatches += (got != grid_overlap(a, b)) as usize;
    }
    check(mismatches == 0, || format!("{mismatches} of 1000 pairs disagree"))?;

    let mut topologies = vec![Arc::new(PathTopology::single())];
    topologies.extend(D_CROSS_CHOICES.iter().map(|d| Arc::new(PathTopology::double(*d).unwrap())));
    let mut failures = 0;
    for seed in 0..300u64 {
        let mut world = spawn_episode(topologies[seed as usize % topologies.len()].clone(), &SimConfig::default(), seed);
        let jerk = rng.gen_range(-10.0..10.0);
        loop {
            let (_, out) = world.step(jerk).map_err(|e| e.to_string())?;
            let failed = out.is_some_and(|o| o.kind == OutcomeKind::Failure);
            check(failed == analytic_collision(&world), || format!("seed {seed}: step {}", world.step_count()))?;
            if out.is_some() {
                failures += failed as usize;
                break;
            }
        }
    }
    check(failures > 0, || "no collisions exercised".into())?;
    Ok(format!("1000/1000 pairs agree, failure flag matches the oracle on every step of 300 episodes ({failures} collisions)"))
}

fn plan_time() -> Outcome {
    let planner = MpcPlanner::new(MpcConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cases: Vec<_> = (0..100)
        .map(|_| {
            let obs = random_observation(&mut rng);
            let action = random_action(&mut rng, &obs);
            (random_ego(&mut rng), obs, action)
        })
        .collect();
    let mut times = Vec::new();
    for (ego, obs, action) in &cases {
        let t = Instant::now();
        std::hint::black_box(planner.plan(ego, obs, *action).map_err(|e| e.to_string())?);
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2] * 1e3;
    check(median < 10.0, || format!("median {median:.2} ms"))?;
    Ok(format!("median {median:.3} ms"))
}

fn property_suite() -> bool {
    let results = [
        report("1", "QP solver", qp_solver()),
        report("2", "MPC constraint replay", mpc_replay()),
        report("3", "discretization", discretization()),
        report("4", "DQN gradients, masking, checkpoints", dqn_checks()),
        report("5", "reward contract", reward_contract()),
        report("6", "collision oracle", collision_oracle()),
        report("7", "plan time budget", plan_time()),
    ];
    results.iter().all(|ok| *ok)
}

fn scaled(agent: AgentKind, scenario: Scenario, train_episodes: usize) -> RunConfig {
    RunConfig { agent, scenario, train_episodes, seed: 2024, ..RunConfig::default() }
}

fn summary(m: &Metrics) -> String {
    let ctr = m.ctr.map_or_else(|| "n/a".to_string(), |c| format!("{c:.3}"));
    format!("success {:.3}, collisions {}, timeouts {}, CTR {ctr}", m.success_rate, m.collisions, m.timeouts)
}

/// Every timeout episode accumulates a positive reward.
fn timeout_positivity(cfg: &RunConfig, net: &Network) -> Outcome {
    let (_, episodes) = harness::evaluate(cfg, net, None).map_err(|e| e.to_string())?;
    let timeouts: Vec<f64> =
        episodes.iter().filter(|s| s.outcome.kind == OutcomeKind::Timeout).map(|s| s.total_reward).collect();
    if timeouts.is_empty() {
        return Ok(format!("no timeouts in {} episodes, holds vacuously", episodes.len()));
    }
    let worst = timeouts.iter().copied().fold(f64::INFINITY, f64::min);
    check(worst > 0.0, || format!("{} timeouts, lowest return {worst:.3}", timeouts.len()))?;
    Ok(format!("{} timeouts, lowest return {worst:.3}", timeouts.len()))
}

fn smoke_training_suite() -> bool {
    let cfg = scaled(AgentKind::Mpc, Scenario::Single, 2000);
    let out = harness::train(&cfg, None).expect("training");
    let m = &out.final_metrics;
    let results = [
        report("8-smk", "single crossing after 2000 episodes, success >= 0.75", {
            let s = summary(m);
            if m.success_rate >= 0.75 { Ok(s) } else { Err(s) }
        }),
        report("10-smk", "timeout returns are positive", timeout_positivity(&cfg, &out.network)),
    ];
    println!("criterion 9 compares agents at 10^4 episodes; run with --ignored");
    results.iter().all(|ok| *ok)
}

/// Trains four policies for 10^4 episodes each; hours on one core.
fn full_training_suite() -> bool {
    let n = 10_000;
    let run = |agent, scenario| {
        let cfg = scaled(agent, scenario, n);
        let out = harness::train(&cfg, None).expect("training");
        println!("{agent:?} {scenario:?}: {}", summary(&out.final_metrics));
        (cfg, out)
    };
    let (mpc_cfg, mpc) = run(AgentKind::Mpc, Scenario::Single);
    let (_, sm) = run(AgentKind::Sm, Scenario::Single);
    let (_, mpc2) = run(AgentKind::Mpc, Scenario::Double);
    let (_, sm2) = run(AgentKind::Sm, Scenario::Double);
    let (m, s, m2, s2) = (&mpc.final_metrics, &sm.final_metrics, &mpc2.final_metrics, &sm2.final_metrics);
    let verdict = |ok: bool, detail: String| if ok { Ok(detail) } else { Err(detail) };
    let results = [
        report("8", "single crossing after 10^4 episodes, success >= 0.90", verdict(m.success_rate >= 0.90, summary(m))),
        report(
            "9a",
            "MPC success >= SM success",
            verdict(m.success_rate >= s.success_rate, format!("{:.3} vs {:.3}", m.success_rate, s.success_rate)),
        ),
        report(
            "9b",
            "MPC CTR < SM CTR",
            verdict(
                matches!((m.ctr, s.ctr), (Some(a), Some(b)) if a < b),
                format!("{:?} vs {:?}", m.ctr, s.ctr),
            ),
        ),
        report("9c", "both degrade on double crossing, MPC less", {
            let (dm, ds) = (m.success_rate - m2.success_rate, s.success_rate - s2.success_rate);
            verdict(dm > 0.0 && ds > 0.0 && dm < ds, format!("MPC drop {dm:.3}, SM drop {ds:.3}"))
        }),
        report("10", "timeout returns are positive", timeout_positivity(&mpc_cfg, &mpc.network)),
    ];
    results.iter().all(|ok| *ok)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    // `cargo test -- --list` expects no work.
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let full = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let ok = if full { full_training_suite() } else { property_suite() & smoke_training_suite() };
    println!("acceptance: {}", if ok { "all criteria passed" } else { "some criteria failed" });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
