//! Baseline vs clustered attention on one synthetic batch.
//!
//! Memory is accounted in attention-weight elements, not bytes: the
//! baseline materializes `N * heads * HW^2` weights, the clustered path
//! `sum_n heads * HW * C_n`.

use std::path::Path;
use std::time::Instant;

use enact::{
    attention_baseline, attention_clustered, enact_forward, sinusoidal_positions, FeatureBatch,
    LinearHead,
};
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{HarnessError, Result};
use crate::synthetic::generate_synthetic_batch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub config: ScenarioConfig,
    /// `C_n` per sample.
    pub counts: Vec<usize>,
    pub total_clusters: usize,
    pub baseline_weight_elements: usize,
    pub ragged_weight_elements: usize,
    /// `ragged / baseline`.
    pub ratio: f64,
    pub baseline_seconds: f64,
    pub enact_seconds: f64,
    pub baseline_peak_elements: usize,
    pub enact_peak_elements: usize,
}

impl CompressionReport {
    /// The report with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            baseline_seconds: 0.0,
            enact_seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let hw = self.config.hw();
        let heads = self.config.heads;
        let expected_ragged: usize = self.counts.iter().map(|c| heads * hw * c).sum();
        if expected_ragged != self.ragged_weight_elements {
            return Err(HarnessError::Invariant(format!(
                "ragged element count {} != sum_n heads*HW*C_n = {expected_ragged}",
                self.ragged_weight_elements
            )));
        }
        if self.total_clusters != self.counts.iter().sum::<usize>() {
            return Err(HarnessError::Invariant("total clusters disagree with counts".into()));
        }
        if self.counts.iter().any(|&c| c == 0 || c > hw) {
            return Err(HarnessError::Invariant(format!("cluster count outside [1, {hw}]")));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(HarnessError::Invariant(format!("ratio {} outside (0, 1]", self.ratio)));
        }
        if self.counts.iter().any(|&c| c < hw)
            && self.ragged_weight_elements >= self.baseline_weight_elements
        {
            return Err(HarnessError::Invariant(
                "clustered path is not smaller although some sample compressed".into(),
            ));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.serialize(FlatReport::from(self))?;
        writer.flush()?;
        Ok(())
    }
}

/// Single-row CSV layout; `counts` is `;`-joined.
#[derive(Debug, Serialize, Deserialize)]
pub struct FlatReport {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub heads: usize,
    pub sigma: f64,
    pub seed: u64,
    pub blobs: usize,
    pub positions: bool,
    pub counts: String,
    pub total_clusters: usize,
    pub baseline_weight_elements: usize,
    pub ragged_weight_elements: usize,
    pub ratio: f64,
    pub baseline_seconds: f64,
    pub enact_seconds: f64,
    pub baseline_peak_elements: usize,
    pub enact_peak_elements: usize,
}

impl From<&CompressionReport> for FlatReport {
    fn from(r: &CompressionReport) -> Self {
        let c = &r.config;
        Self {
            n: c.n,
            h: c.h,
            w: c.w,
            d: c.d,
            heads: c.heads,
            sigma: c.sigma,
            seed: c.seed,
            blobs: c.blobs,
            positions: c.positions,
            counts: r.counts.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
            total_clusters: r.total_clusters,
            baseline_weight_elements: r.baseline_weight_elements,
            ragged_weight_elements: r.ragged_weight_elements,
            ratio: r.ratio,
            baseline_seconds: r.baseline_seconds,
            enact_seconds: r.enact_seconds,
            baseline_peak_elements: r.baseline_peak_elements,
            enact_peak_elements: r.enact_peak_elements,
        }
    }
}

/// The Keys/Queries fed to both attention paths.
pub fn positioned_keys(x: &FeatureBatch, positions: bool) -> Result<FeatureBatch> {
    if positions {
        Ok(x.add_per_sample(&sinusoidal_positions(x.hw(), x.d())?)?)
    } else {
        Ok(x.clone())
    }
}

/// Runs both attention paths on `x` and fills the report.
pub fn benchmark_batch(x: &FeatureBatch, config: &ScenarioConfig) -> Result<CompressionReport> {
    config.validate()?;
    let head = LinearHead::xavier(x.d(), config.seed)?;
    let qk = positioned_keys(x, config.positions)?;
    let (n, hw, d, heads) = (x.n(), x.hw(), x.d(), config.heads);

    let start = Instant::now();
    let baseline = attention_baseline(&qk, &qk, x, heads)?;
    let baseline_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let clusters = enact_forward(&qk, x, &head, config.sigma)?;
    let clustered = attention_clustered(&qk, &clusters.keys, &clusters.values, heads)?;
    let enact_seconds = start.elapsed().as_secs_f64();

    let total = clusters.diagnostics.total_clusters;
    let output_elements = n * hw * d;
    // pdf, information, smoothed, second difference, region weights.
    let signal_elements = 5 * n * hw;
    let report = CompressionReport {
        config: config.clone(),
        counts: clusters.diagnostics.counts.clone(),
        total_clusters: total,
        baseline_weight_elements: baseline.weight_elements,
        ragged_weight_elements: clustered.weight_elements,
        ratio: clustered.weight_elements as f64 / baseline.weight_elements as f64,
        baseline_seconds,
        enact_seconds,
        baseline_peak_elements: baseline.weight_elements + output_elements,
        enact_peak_elements: clustered.weight_elements
            + 2 * total * d
            + signal_elements
            + output_elements,
    };
    report.check_invariants()?;
    Ok(report)
}

pub fn run_compression_benchmark(config: &ScenarioConfig) -> Result<CompressionReport> {
    let batch = generate_synthetic_batch(config)?;
    benchmark_batch(&batch.features, config)
}

/// Runs the benchmark and writes `report.json` and `report.csv` into `dir`.
pub fn run_and_write(config: &ScenarioConfig, dir: &Path) -> Result<CompressionReport> {
    let report = run_compression_benchmark(config)?;
    std::fs::create_dir_all(dir)?;
    report.write_json(&dir.join("report.json"))?;
    report.write_csv(&dir.join("report.csv"))?;
    Ok(report)
}
