//! Seeded random instances shared by the benchmarks.

use infomenu_core::multi::Buyer;
use infomenu_core::{BuyerType, Environment, MultiEnvironment, VpmWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen()).collect()).collect()
}

/// Shared-utility instance with `types` buyer types.
pub fn explicit_instance(states: usize, actions: usize, types: usize, seed: u64) -> Environment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = matrix(&mut rng, states, actions);
    let priors = (0..types).map(|_| simplex(&mut rng, states)).collect();
    let probs = simplex(&mut rng, types);
    Environment::simple(u, priors, probs).expect("valid instance")
}

/// `buyers` buyers with `types` types each over two states and two actions.
pub fn multi_instance(buyers: usize, types: usize, seed: u64) -> MultiEnvironment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buyers = (0..buyers)
        .map(|i| Buyer {
            id: format!("b{i}"),
            types: (0..types).map(|t| BuyerType { id: format!("b{i}t{t}"), prior: simplex(&mut rng, 2) }).collect(),
            type_probs: simplex(&mut rng, types),
            utility: matrix(&mut rng, 2, 2),
        })
        .collect();
    MultiEnvironment::new(vec!["s0".into(), "s1".into()], vec!["a0".into(), "a1".into()], buyers)
        .expect("valid instance")
}

/// Random VPM weights for `env`.
pub fn random_weights(env: &MultiEnvironment, seed: u64) -> VpmWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = VpmWeights::zeros(env);
    w.x.iter_mut().flatten().flatten().flatten().for_each(|x| *x = rng.gen_range(-1.0..1.0));
    w
}
