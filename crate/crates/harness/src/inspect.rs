//! Per-stage signals of one sample, one CSV row per pixel.

use std::path::Path;

use enact::{enact_forward, LinearHead};
use serde::Serialize;

use crate::bench::positioned_keys;
use crate::config::ScenarioConfig;
use crate::error::{HarnessError, Result};
use crate::synthetic::generate_synthetic_batch;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PixelRow {
    pub pixel: usize,
    pub blob: bool,
    pub pdf: f64,
    pub information: f64,
    pub smoothed: f64,
    /// Empty when the sample is too short for a second difference.
    pub d2: Option<f64>,
    pub sign: i8,
    pub region: usize,
    pub weight: f64,
}

pub fn inspect_sample(config: &ScenarioConfig, sample: usize) -> Result<Vec<PixelRow>> {
    if sample >= config.n {
        return Err(HarnessError::Config(format!(
            "sample {sample} out of range for batch of {}",
            config.n
        )));
    }
    let batch = generate_synthetic_batch(config)?;
    let x = &batch.features;
    let keys = positioned_keys(x, config.positions)?;
    let head = LinearHead::xavier(config.d, config.seed)?;
    let out = enact_forward(&keys, x, &head, config.sigma)?;
    let trace = &out.trace;
    let hw = config.hw();
    let base = sample * hw;

    let mut rows = Vec::with_capacity(hw);
    for (region, run) in trace.partition.runs(sample).iter().enumerate() {
        for i in run.range() {
            rows.push(PixelRow {
                pixel: i,
                blob: batch.blob_mask[base + i],
                pdf: trace.pdf.values()[base + i],
                information: trace.information.values()[base + i],
                smoothed: trace.smoothed.values()[base + i],
                d2: trace.second_derivative.as_ref().map(|d2| d2[base + i]),
                sign: run.sign.as_i8(),
                region,
                weight: trace.weights[base + i],
            });
        }
    }
    Ok(rows)
}

pub fn write_inspect_csv(path: &Path, rows: &[PixelRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            n: 2,
            h: 4,
            w: 8,
            d: 4,
            heads: 1,
            sigma: 1.0,
            seed: 2,
            blobs: 1,
            positions: true,
        }
    }

    #[test]
    fn rows_cover_every_pixel_in_order() {
        let rows = inspect_sample(&small(), 1).unwrap();
        assert_eq!(rows.len(), 32);
        assert!(rows.iter().enumerate().all(|(i, r)| r.pixel == i));
        let pdf_total: f64 = rows.iter().map(|r| r.pdf).sum();
        assert!((pdf_total - 1.0).abs() < 1e-9);
        // Region weights sum to one within each region.
        let regions = rows.last().unwrap().region + 1;
        for r in 0..regions {
            let total: f64 = rows.iter().filter(|row| row.region == r).map(|row| row.weight).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn signs_follow_second_difference() {
        let rows = inspect_sample(&small(), 0).unwrap();
        for r in &rows {
            let d2 = r.d2.unwrap();
            if d2 < 0.0 {
                assert_eq!(r.sign, 1);
            } else if d2 > 0.0 {
                assert_eq!(r.sign, -1);
            }
        }
    }

    #[test]
    fn out_of_range_sample() {
        assert!(inspect_sample(&small(), 2).is_err());
    }
}
