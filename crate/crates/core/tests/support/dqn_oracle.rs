use intersect::dqn::*;
use intersect::NUM_ACTIONS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_features(rng: &mut ChaCha8Rng) -> Features {
    let mut f = [0.0; FEATURE_LEN];
    f.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    f
}

pub fn random_mask(rng: &mut ChaCha8Rng) -> QMask {
    let mut m = QMask::all();
    for j in 2..NUM_ACTIONS {
        m.0[j] = rng.gen_bool(0.6);
    }
    m
}

pub fn random_batch(rng: &mut ChaCha8Rng, episodes: usize) -> Vec<EpisodeRecord> {
    (0..episodes)
        .map(|_| {
            let len = rng.gen_range(1..=6);
            let transitions = (0..len)
                .map(|t| {
                    let mask = random_mask(rng);
                    let valid: Vec<usize> = mask.valid_indices().collect();
                    Transition {
                        features: random_features(rng),
                        mask,
                        action: valid[rng.gen_range(0..valid.len())],
                        reward: rng.gen_range(-0.3..0.3),
                        terminal: t + 1 == len,
                    }
                })
                .collect();
            EpisodeRecord { transitions }
        })
        .collect()
}

/// Per-group relative error `|g - n| / (|g| + |n|)` between analytic and
/// central-difference gradients, over all entries or a random sample of each group.
pub fn gradient_errors(config: NetworkConfig, seed: u64, sample_per_group: Option<usize>) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut online = Network::init(config, &mut rng).unwrap();
    let target = Network::init(config, &mut rng).unwrap();
    let batch = random_batch(&mut rng, 3);
    let refs: Vec<&EpisodeRecord> = batch.iter().collect();
    // Large Huber threshold keeps the loss smooth for the difference quotient.
    let huber = 1e3;
    let (_, grad) = loss_and_gradient(&online, &target, &refs, 0.9, huber);
    let h = 1e-5;
    let groups = online.layout().groups.clone();
    groups
        .iter()
        .map(|g| {
            let idx: Vec<usize> = match sample_per_group {
                Some(k) if k < g.len() => (0..k).map(|_| g.offset + rng.gen_range(0..g.len())).collect(),
                _ => g.range().collect(),
            };
            let (mut diff, mut norm) = (0.0f64, 0.0f64);
            for i in idx {
                let orig = online.params[i];
                online.params[i] = orig + h;
                let plus = loss_and_gradient(&online, &target, &refs, 0.9, huber).0;
                online.params[i] = orig - h;
                let minus = loss_and_gradient(&online, &target, &refs, 0.9, huber).0;
                online.params[i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                diff += (grad[i] - numeric).powi(2);
                norm += (grad[i].abs() + numeric.abs()).powi(2);
            }
            (g.name.clone(), diff.sqrt() / norm.sqrt().max(1e-12))
        })
        .collect()
}
