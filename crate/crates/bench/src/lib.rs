//! Deterministic fixtures for the benchmarks.

use dmad_core::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in [-1, 1), normalised.
pub fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Two Gaussian-ish blobs offset along the first axis, alternating labels.
pub fn blobs(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<Label>) {
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Morph } else { Label::Bonafide };
        let mut x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        x[0] += label.sign();
        features.push(x);
        labels.push(label);
    }
    (features, labels)
}

/// Random scores, morphs shifted up by one.
pub fn scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<dmad_core::ScoredSample> {
    (0..n)
        .map(|i| {
            let label = if i % 3 == 0 { Label::Morph } else { Label::Bonafide };
            let shift = if label == Label::Morph { 1.0 } else { 0.0 };
            dmad_core::ScoredSample::new(rng.random::<f64>() * 2.0 + shift, label)
        })
        .collect()
}
