mod support;

use std::time::Instant;

use intersect::mpc::{predict_obstacles, MpcConfig, MpcPlanner};
use intersect::qp::QpStatus;
use intersect::sim::{Observation, VehicleState};
use intersect::Action;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::mpc_oracle::*;

const REPLAY_TOL: f64 = 1e-5;

#[test]
fn predictions_match_time_based_occupancy() {
    let cfg = MpcConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let obs = random_observation(&mut rng);
        for pred in predict_obstacles(&obs, &cfg) {
            let v = &obs.vehicles[pred.slot];
            for k in 0..=cfg.horizon {
                let expected = v.p + v.v * k as f64 * cfg.ts;
                assert!((pred.positions[k] - expected).abs() <= 1e-9);
            }
            if let Some((s, e)) = pred.window {
                assert!(s <= e);
                for k in 0..=cfg.horizon {
                    let inside = (pred.positions[k] - pred.p_cross_own).abs() <= cfg.occupancy_threshold;
                    assert_eq!(inside, (s..=e).contains(&k));
                }
            }
        }
    }
}

#[test]
fn bounds_match_independent_derivation() {
    let cfg = MpcConfig::default();
    let planner = MpcPlanner::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut compared = 0;
    for _ in 0..500 {
        let obs = random_observation(&mut rng);
        let action = random_action(&mut rng, &obs);
        let ego = random_ego(&mut rng);
        let plan = planner.plan(&ego, &obs, action).unwrap();
        let (lo, hi) = expected_bounds(&obs, action, &cfg);
        for k in 0..=cfg.horizon {
            // Window edges computed two ways may disagree only on exact ties.
            if lo[k] != plan.bounds.lower[k] || hi[k] != plan.bounds.upper[k] {
                panic!("bound mismatch at k={k} for {action}: {:?} vs {:?}", (lo[k], hi[k]), (plan.bounds.lower[k], plan.bounds.upper[k]));
            }
        }
        compared += 1;
    }
    assert_eq!(compared, 500);
}

#[test]
fn constraint_replay_on_random_instances() {
    let cfg = MpcConfig::default();
    let planner = MpcPlanner::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut feasible = 0;
    for _ in 0..500 {
        let obs = random_observation(&mut rng);
        let action = random_action(&mut rng, &obs);
        let ego = random_ego(&mut rng);
        let plan = planner.plan(&ego, &obs, action).unwrap();
        assert!((0.0..=1.0).contains(&plan.p_comf));
        if !plan.feasible {
            continue;
        }
        feasible += 1;
        let (lo, hi) = expected_bounds(&obs, action, &cfg);
        let worst = replay_violation(&ego, &plan, &lo, &hi, &cfg);
        assert!(worst <= REPLAY_TOL, "violation {worst} for {action} from {ego:?}");
    }
    assert!(feasible > 100, "only {feasible} feasible instances");
}

/// TakeWay against one vehicle whose window starts at a random step.
fn take_way_instance(rng: &mut ChaCha8Rng, cfg: &MpcConfig) -> (VehicleState, Observation, bool) {
    loop {
        let ego = VehicleState {
            p: rng.gen_range(0.0..70.0),
            v: rng.gen_range(0.0..30.0),
            a: rng.gen_range(-5.0..5.0),
        };
        let speed = rng.gen_range(5.0..30.0);
        let p = rng.gen_range(0.0..60.0);
        let mut obs = Observation::default();
        obs.vehicles[0] = vehicle(p, speed, 60.0, 60.0);
        let pred = &predict_obstacles(&obs, cfg)[0];
        let Some((s, e)) = pred.window else { continue };
        let target = 60.0 + cfg.padding;
        let verdict = match max_reach(&ego, cfg) {
            None => false,
            Some(reach) => {
                let margin = (s..=e).map(|k| reach[k] - target).fold(f64::INFINITY, f64::min);
                if margin.abs() < 1e-3 {
                    continue;
                }
                margin > 0.0
            }
        };
        return (ego, obs, verdict);
    }
}

#[test]
fn take_way_feasibility_matches_reachability() {
    let cfg = MpcConfig::default();
    let planner = MpcPlanner::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut reachable, mut unreachable) = (0, 0);
    for _ in 0..200 {
        let (ego, obs, verdict) = take_way_instance(&mut rng, &cfg);
        let plan = planner.plan(&ego, &obs, Action::TakeWay).unwrap();
        assert_eq!(plan.feasible, verdict, "ego {ego:?}, vehicle {:?}", obs.vehicles[0]);
        if verdict {
            reachable += 1;
        } else {
            unreachable += 1;
            assert_eq!(plan.status, QpStatus::Infeasible);
        }
    }
    assert!(reachable > 20 && unreachable > 20, "{reachable} / {unreachable}");
}

#[test]
fn larger_padding_is_never_less_conservative() {
    let narrow = MpcPlanner::new(MpcConfig::default()).unwrap();
    let wide = MpcPlanner::new(MpcConfig { padding: 6.0, ..MpcConfig::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..300 {
        let obs = random_observation(&mut rng);
        let action = random_action(&mut rng, &obs);
        let ego = random_ego(&mut rng);
        let a = narrow.plan(&ego, &obs, action).unwrap();
        let b = wide.plan(&ego, &obs, action).unwrap();
        assert!(a.feasible || !b.feasible, "padding 6 feasible but 4 not: {action} {ego:?}");
    }
}

#[test]
fn give_way_behind_permanent_occupant() {
    let cfg = MpcConfig::default();
    let planner = MpcPlanner::new(cfg.clone()).unwrap();
    let mut obs = Observation::default();
    obs.vehicles[0] = vehicle(60.0, 0.0, 60.0, 60.0);
    let ego = VehicleState { p: 42.0, v: 10.0, a: 0.0 };
    let plan = planner.plan(&ego, &obs, Action::GiveWay).unwrap();
    assert!(plan.feasible);
    let (lo, hi) = expected_bounds(&obs, Action::GiveWay, &cfg);
    assert!(hi.iter().all(|h| *h == 56.0));
    assert!(replay_violation(&ego, &plan, &lo, &hi, &cfg) <= REPLAY_TOL);
    let last = plan.states.last().unwrap();
    assert!(last.p <= 56.0 + REPLAY_TOL);
    assert!(last.v < 1.0, "terminal speed {}", last.v);
}

#[test]
fn comfort_zero_only_on_reference() {
    let planner = MpcPlanner::new(MpcConfig::default()).unwrap();
    let cruise = planner.plan(&VehicleState { p: 0.0, v: 15.0, a: 0.0 }, &Observation::default(), Action::GiveWay).unwrap();
    assert!(cruise.p_comf <= 1e-6);
    let slow = planner.plan(&VehicleState { p: 0.0, v: 5.0, a: 0.0 }, &Observation::default(), Action::GiveWay).unwrap();
    assert!(slow.p_comf > 0.0);
}

#[test]
fn plans_are_deterministic() {
    let planner = MpcPlanner::new(MpcConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..50 {
        let obs = random_observation(&mut rng);
        let action = random_action(&mut rng, &obs);
        let ego = random_ego(&mut rng);
        assert_eq!(planner.plan(&ego, &obs, action).unwrap(), planner.plan(&ego, &obs, action).unwrap());
    }
}

#[test]
fn plan_csv_has_one_row_per_step() {
    let planner = MpcPlanner::new(MpcConfig::default()).unwrap();
    let plan = planner.plan(&VehicleState { p: 0.0, v: 10.0, a: 0.0 }, &Observation::default(), Action::TakeWay).unwrap();
    let mut buf = Vec::new();
    plan.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 102);
    assert!(text.starts_with("k,p,v,a,j,lower,upper"));
}

#[test]
fn median_plan_time_within_budget() {
    let planner = MpcPlanner::new(MpcConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cases: Vec<_> = (0..100)
        .map(|_| {
            let obs = random_observation(&mut rng);
            let action = random_action(&mut rng, &obs);
            (random_ego(&mut rng), obs, action)
        })
        .collect();
    let mut times: Vec<f64> = cases
        .iter()
        .map(|(ego, obs, action)| {
            let t = Instant::now();
            let plan = planner.plan(ego, obs, *action).unwrap();
            std::hint::black_box(plan);
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    eprintln!("median plan time {:.3} ms, max {:.3} ms", median * 1e3, times.last().unwrap() * 1e3);
    assert!(median < 0.010);
}
