//! Synthetic feature maps standing in for backbone output.
//!
//! Each sample is low-amplitude Gaussian noise plus `blobs` isotropic
//! Gaussian bumps on the `h x w` grid. Bump `k` of every sample carries the
//! same channel signature `k`, so a head trained on one set of samples
//! transfers to held-out ones. Signatures come from stream 0 of the seeded
//! generator; sample `i` uses stream `i + 1`.

use enact::FeatureBatch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::config::ScenarioConfig;
use crate::error::Result;

pub const NOISE_STD: f64 = 0.05;
pub const BLOB_AMPLITUDE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub features: FeatureBatch,
    /// `n x hw`, true where a pixel lies within one radius of a bump centre.
    pub blob_mask: Vec<bool>,
}

fn signatures(config: &ScenarioConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    (0..config.blobs)
        .map(|_| {
            let raw: Vec<f64> = (0..config.d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            raw.into_iter().map(|v| v / norm).collect()
        })
        .collect()
}

struct Sample {
    features: Vec<f64>,
    mask: Vec<bool>,
}

fn generate_sample(config: &ScenarioConfig, signatures: &[Vec<f64>], index: u64) -> Sample {
    let (h, w, d) = (config.h, config.w, config.d);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index + 1);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let mut features: Vec<f64> = (0..h * w * d).map(|_| noise.sample(&mut rng)).collect();
    let mut mask = vec![false; h * w];

    let max_radius = 1.5 + 0.15 * h.min(w) as f64;
    for signature in signatures {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let radius = rng.random_range(1.5..=max_radius);
        for y in 0..h {
            for x in 0..w {
                let dist2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                let profile = (-dist2 / (2.0 * radius * radius)).exp();
                let pixel = y * w + x;
                if dist2 <= radius * radius {
                    mask[pixel] = true;
                }
                for (f, s) in features[pixel * d..(pixel + 1) * d].iter_mut().zip(signature) {
                    *f += BLOB_AMPLITUDE * profile * s;
                }
            }
        }
    }
    Sample { features, mask }
}

fn assemble(config: &ScenarioConfig, indices: std::ops::Range<u64>) -> Result<SyntheticBatch> {
    config.validate()?;
    let signatures = signatures(config);
    let count = (indices.end - indices.start) as usize;
    let mut features = Vec::with_capacity(count * config.hw() * config.d);
    let mut blob_mask = Vec::with_capacity(count * config.hw());
    for index in indices {
        let sample = generate_sample(config, &signatures, index);
        features.extend(sample.features);
        blob_mask.extend(sample.mask);
    }
    Ok(SyntheticBatch {
        features: FeatureBatch::new(count, config.hw(), config.d, features)?,
        blob_mask,
    })
}

/// Samples `0..n` of the scenario.
pub fn generate_synthetic_batch(config: &ScenarioConfig) -> Result<SyntheticBatch> {
    assemble(config, 0..config.n as u64)
}

/// `count` samples starting right after the training batch, drawn with the
/// same signatures.
pub fn generate_held_out(config: &ScenarioConfig, count: usize) -> Result<SyntheticBatch> {
    let start = config.n as u64;
    assemble(config, start..start + count as u64)
}

/// Batch whose every pixel of a sample carries the same feature vector.
pub fn constant_batch(config: &ScenarioConfig) -> Result<FeatureBatch> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut data = Vec::with_capacity(config.n * config.hw() * config.d);
    for _ in 0..config.n {
        let feature: Vec<f64> = (0..config.d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..config.hw() {
            data.extend_from_slice(&feature);
        }
    }
    Ok(FeatureBatch::new(config.n, config.hw(), config.d, data)?)
}
