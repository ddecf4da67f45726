//! Gaussian smoothing, the `[-1, 2, -1]` second difference, the sign step
//! and run-length partitioning of the pixel axis into regions.
//!
//! Both convolutions replicate the edge value at the borders, so constant
//! signals are fixed points and no spurious regions appear at the ends.

use crate::error::{invalid, mismatch, EnactError, Result};
use crate::information::{InfoSignal, SignalKind};

/// Normalized Gaussian taps over integer offsets `-radius..=radius`,
/// `radius = ceil(3 sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    taps: Vec<f64>,
}

impl GaussianKernel {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

pub fn build_kernel(sigma: f64) -> Result<GaussianKernel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be a positive real, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let mut taps: Vec<f64> = raw.iter().map(|t| t / total).collect();
    // Pin exact symmetry against rounding in the division.
    for k in 0..radius {
        taps[2 * radius - k] = taps[k];
    }
    Ok(GaussianKernel {
        sigma,
        radius,
        taps,
    })
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// `out[i] = sum_k taps[k] * row[clamp(i + k - radius)]`.
pub fn smooth_row(row: &[f64], kernel: &GaussianKernel) -> Vec<f64> {
    let r = kernel.radius as isize;
    (0..row.len() as isize)
        .map(|i| {
            kernel
                .taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * row[clamp_index(i + k as isize - r, row.len())])
                .sum()
        })
        .collect()
}

/// Adjoint of [`smooth_row`]: maps a gradient on the smoothed row back to
/// the input row.
pub fn smooth_row_adjoint(grad: &[f64], kernel: &GaussianKernel) -> Vec<f64> {
    let r = kernel.radius as isize;
    let mut out = vec![0.0; grad.len()];
    for (i, &g) in grad.iter().enumerate() {
        for (k, t) in kernel.taps.iter().enumerate() {
            out[clamp_index(i as isize + k as isize - r, grad.len())] += t * g;
        }
    }
    out
}

pub fn gaussian_smooth(info: &InfoSignal, kernel: &GaussianKernel) -> Result<InfoSignal> {
    if info.kind() != SignalKind::Information {
        return Err(invalid(format!(
            "gaussian_smooth expects an information signal, got {:?}",
            info.kind()
        )));
    }
    let values = info.rows().flat_map(|row| smooth_row(row, kernel)).collect();
    InfoSignal::new(info.n(), info.hw(), values, SignalKind::SmoothedInformation)
}

/// `-s[i-1] + 2 s[i] - s[i+1]` per sample with edge replication.
pub fn second_derivative(signal: &[f64], hw: usize) -> Result<Vec<f64>> {
    if hw == 0 || !signal.len().is_multiple_of(hw) {
        return Err(mismatch(format!("multiple of hw={hw}"), signal.len()));
    }
    if hw < 3 {
        return Err(EnactError::Degenerate(format!(
            "second derivative needs at least 3 pixels, got {hw}"
        )));
    }
    let mut out = Vec::with_capacity(signal.len());
    for row in signal.chunks_exact(hw) {
        for i in 0..hw {
            let prev = row[i.saturating_sub(1)];
            let next = row[(i + 1).min(hw - 1)];
            out.push(2.0 * row[i] - prev - next);
        }
    }
    Ok(out)
}

/// Region label from the step function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    /// `[-1, 2, -1]` output below zero, labelled `+1`.
    Convex,
    /// `[-1, 2, -1]` output above zero, labelled `-1`.
    Concave,
}

impl Sign {
    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Convex => 1,
            Sign::Concave => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Sign> {
        match v {
            1 => Some(Sign::Convex),
            -1 => Some(Sign::Concave),
            _ => None,
        }
    }
}

/// Maps the second difference to `+1` (negative output) or `-1` (positive
/// output). Exact zeros inherit the previous sign within the sample, `+1`
/// at the sample start.
pub fn sign_step(d2: &[f64], hw: usize) -> Result<Vec<Sign>> {
    if hw == 0 || !d2.len().is_multiple_of(hw) {
        return Err(mismatch(format!("multiple of hw={hw}"), d2.len()));
    }
    let mut out = Vec::with_capacity(d2.len());
    for row in d2.chunks_exact(hw) {
        let mut current = Sign::Convex;
        for &v in row {
            if v < 0.0 {
                current = Sign::Convex;
            } else if v > 0.0 {
                current = Sign::Concave;
            }
            out.push(current);
        }
    }
    Ok(out)
}

/// Half-open pixel interval `[start, end)` sharing one sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub start: usize,
    pub end: usize,
    pub sign: Sign,
}

impl Run {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Per-sample ordered runs tiling `[0, hw)`. Each run becomes one cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPartition {
    hw: usize,
    samples: Vec<Vec<Run>>,
}

impl RegionPartition {
    /// Validates that every sample's runs are non-empty, contiguous, tile
    /// `[0, hw)` and alternate in sign.
    pub fn new(hw: usize, samples: Vec<Vec<Run>>) -> Result<Self> {
        if hw == 0 {
            return Err(invalid("partition over zero pixels"));
        }
        for (n, runs) in samples.iter().enumerate() {
            let mut cursor = 0;
            for (r, run) in runs.iter().enumerate() {
                if run.start != cursor || run.end <= run.start {
                    return Err(invalid(format!(
                        "sample {n}: run {r} [{}, {}) does not continue at {cursor}",
                        run.start, run.end
                    )));
                }
                if r > 0 && runs[r - 1].sign == run.sign {
                    return Err(invalid(format!("sample {n}: runs {} and {r} share a sign", r - 1)));
                }
                cursor = run.end;
            }
            if cursor != hw {
                return Err(invalid(format!("sample {n}: runs cover {cursor} of {hw} pixels")));
            }
        }
        Ok(Self { hw, samples })
    }

    /// One run per sample covering every pixel.
    pub fn single_run(n: usize, hw: usize) -> Self {
        let run = Run {
            start: 0,
            end: hw,
            sign: Sign::Convex,
        };
        Self {
            hw,
            samples: vec![vec![run]; n],
        }
    }

    /// One run per pixel, with alternating labels.
    pub fn singletons(n: usize, hw: usize) -> Self {
        let runs: Vec<Run> = (0..hw)
            .map(|i| Run {
                start: i,
                end: i + 1,
                sign: if i % 2 == 0 { Sign::Convex } else { Sign::Concave },
            })
            .collect();
        Self {
            hw,
            samples: vec![runs; n],
        }
    }

    pub fn hw(&self) -> usize {
        self.hw
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn runs(&self, n: usize) -> &[Run] {
        &self.samples[n]
    }

    pub fn samples(&self) -> &[Vec<Run>] {
        &self.samples
    }

    /// Cluster count `C_n` per sample.
    pub fn counts(&self) -> Vec<usize> {
        self.samples.iter().map(Vec::len).collect()
    }

    pub fn total_clusters(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }

    /// Region index of every pixel, `n x hw` flattened.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.samples.len() * self.hw);
        for runs in &self.samples {
            for (r, run) in runs.iter().enumerate() {
                out.extend(std::iter::repeat_n(r, run.len()));
            }
        }
        out
    }
}

/// Maximal equal-sign runs of each sample, in pixel order.
pub fn partition_runs(signs: &[Sign], hw: usize) -> Result<RegionPartition> {
    if hw == 0 || !signs.len().is_multiple_of(hw) {
        return Err(mismatch(format!("multiple of hw={hw}"), signs.len()));
    }
    let samples = signs
        .chunks_exact(hw)
        .map(|row| {
            let mut runs = Vec::new();
            let mut start = 0;
            for i in 1..=hw {
                if i == hw || row[i] != row[start] {
                    runs.push(Run {
                        start,
                        end: i,
                        sign: row[start],
                    });
                    start = i;
                }
            }
            runs
        })
        .collect();
    Ok(RegionPartition { hw, samples })
}
