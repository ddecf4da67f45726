//! Region-softmax weighting, ragged cluster reduction and the full
//! Key/Value clustering pipeline.

use crate::error::{invalid, mismatch, Result};
use crate::information::{
    information_backward, pixel_pdf, self_information, InfoSignal, SignalKind,
};
use crate::numerics::{dot, softmax_backward, stable_softmax, FeatureBatch, LinearHead};
use crate::segmentation::{
    build_kernel, gaussian_smooth, partition_runs, second_derivative, sign_step,
    smooth_row_adjoint, GaussianKernel, RegionPartition, Sign,
};

/// Cluster vectors of every sample concatenated along one axis.
///
/// Sample `n` owns rows `offsets[n] .. offsets[n] + counts[n]` of the
/// `total x d` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RaggedClusters {
    d: usize,
    features: Vec<f64>,
    offsets: Vec<usize>,
    counts: Vec<usize>,
}

impl RaggedClusters {
    pub fn new(d: usize, features: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if d == 0 {
            return Err(invalid("clusters need at least one channel"));
        }
        if counts.contains(&0) {
            return Err(invalid("every sample needs at least one cluster"));
        }
        let total: usize = counts.iter().sum();
        if features.len() != total * d {
            return Err(mismatch(format!("{total}x{d} cluster features"), features.len()));
        }
        let offsets = counts
            .iter()
            .scan(0, |acc, &c| {
                let start = *acc;
                *acc += c;
                Some(start)
            })
            .collect();
        Ok(Self {
            d,
            features,
            offsets,
            counts,
        })
    }

    /// Every pixel as its own cluster.
    pub fn from_batch(batch: &FeatureBatch) -> Self {
        Self::new(batch.d(), batch.data().to_vec(), vec![batch.hw(); batch.n()])
            .expect("batch extents are positive")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn max_count(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// `counts[n] x d` block of sample `n`.
    pub fn sample(&self, n: usize) -> &[f64] {
        let start = self.offsets[n] * self.d;
        &self.features[start..start + self.counts[n] * self.d]
    }

    pub fn cluster(&self, n: usize, c: usize) -> &[f64] {
        let start = (self.offsets[n] + c) * self.d;
        &self.features[start..start + self.d]
    }
}

fn check_partition(n: usize, hw: usize, partition: &RegionPartition) -> Result<()> {
    if partition.n() != n || partition.hw() != hw {
        return Err(mismatch(
            format!("partition over {n}x{hw}"),
            format!("{}x{}", partition.n(), partition.hw()),
        ));
    }
    Ok(())
}

/// Softmax of the smoothed information restricted to each run.
pub fn region_softmax(smoothed: &InfoSignal, partition: &RegionPartition) -> Result<Vec<f64>> {
    check_partition(smoothed.n(), smoothed.hw(), partition)?;
    let mut weights = Vec::with_capacity(smoothed.values().len());
    for (s, row) in smoothed.rows().enumerate() {
        for run in partition.runs(s) {
            weights.extend(stable_softmax(&row[run.range()], None)?);
        }
    }
    Ok(weights)
}

/// Maps `dL/dweights` to `dL/dsmoothed` through the per-run softmax.
pub fn region_softmax_backward(
    weights: &[f64],
    upstream: &[f64],
    partition: &RegionPartition,
) -> Result<Vec<f64>> {
    let hw = partition.hw();
    if weights.len() != partition.n() * hw || upstream.len() != weights.len() {
        return Err(mismatch(
            format!("{}x{hw} weights and gradient", partition.n()),
            format!("{} / {}", weights.len(), upstream.len()),
        ));
    }
    let mut out = Vec::with_capacity(weights.len());
    for s in 0..partition.n() {
        let base = s * hw;
        for run in partition.runs(s) {
            let range = base + run.start..base + run.end;
            out.extend(softmax_backward(&weights[range.clone()], &upstream[range]));
        }
    }
    Ok(out)
}

/// `cluster[n][r] = sum_{i in run r} weights[n, i] * batch[n, i, :]`.
pub fn cluster_reduce(
    batch: &FeatureBatch,
    weights: &[f64],
    partition: &RegionPartition,
) -> Result<RaggedClusters> {
    let (n, hw, d) = (batch.n(), batch.hw(), batch.d());
    check_partition(n, hw, partition)?;
    if weights.len() != n * hw {
        return Err(mismatch(format!("{n}x{hw} weights"), weights.len()));
    }
    let mut features = Vec::with_capacity(partition.total_clusters() * d);
    for s in 0..n {
        for run in partition.runs(s) {
            let mut acc = vec![0.0; d];
            for i in run.range() {
                let w = weights[s * hw + i];
                for (a, x) in acc.iter_mut().zip(batch.pixel(s, i)) {
                    *a += w * x;
                }
            }
            features.extend(acc);
        }
    }
    RaggedClusters::new(d, features, partition.counts())
}

/// Gradients of [`cluster_reduce`]: returns `(dL/dbatch, dL/dweights)`.
pub fn cluster_reduce_backward(
    batch: &FeatureBatch,
    weights: &[f64],
    partition: &RegionPartition,
    upstream: &RaggedClusters,
) -> Result<(FeatureBatch, Vec<f64>)> {
    let (n, hw, d) = (batch.n(), batch.hw(), batch.d());
    check_partition(n, hw, partition)?;
    if upstream.counts() != partition.counts().as_slice() || upstream.d() != d {
        return Err(mismatch("cluster gradient matching the partition", "other layout"));
    }
    let mut grad_batch = FeatureBatch::zeros(n, hw, d);
    let mut grad_weights = vec![0.0; n * hw];
    for s in 0..n {
        for (r, run) in partition.runs(s).iter().enumerate() {
            let g = upstream.cluster(s, r);
            for i in run.range() {
                let w = weights[s * hw + i];
                grad_weights[s * hw + i] = dot(g, batch.pixel(s, i));
                for (gb, gc) in grad_batch.pixel_mut(s, i).iter_mut().zip(g) {
                    *gb = w * gc;
                }
            }
        }
    }
    Ok((grad_batch, grad_weights))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnactDiagnostics {
    /// Cluster count `C_n` per sample.
    pub counts: Vec<usize>,
    pub total_clusters: usize,
    /// `sum C_n / (N * HW)`.
    pub compression_ratio: f64,
}

/// Intermediate signals of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EnactTrace {
    pub pdf: InfoSignal,
    pub information: InfoSignal,
    pub smoothed: InfoSignal,
    /// Absent when the partition was supplied or `HW < 3`.
    pub second_derivative: Option<Vec<f64>>,
    pub signs: Option<Vec<Sign>>,
    pub partition: RegionPartition,
    /// Region-softmax weight of every pixel, `N x HW`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnactOutput {
    pub keys: RaggedClusters,
    pub values: RaggedClusters,
    pub diagnostics: EnactDiagnostics,
    pub trace: EnactTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnactGradients {
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
    pub keys: FeatureBatch,
    pub values: FeatureBatch,
}

struct InformationStages {
    pdf: InfoSignal,
    information: InfoSignal,
    smoothed: InfoSignal,
}

fn information_stages(
    keys: &FeatureBatch,
    head: &LinearHead,
    kernel: &GaussianKernel,
) -> Result<InformationStages> {
    let pdf = pixel_pdf(keys, head)?;
    let information = if keys.hw() == 1 {
        // p is exactly 1; -p ln p takes its limit value 0.
        InfoSignal::new(keys.n(), 1, vec![0.0; keys.n()], SignalKind::Information)?
    } else {
        self_information(&pdf)?
    };
    let smoothed = gaussian_smooth(&information, kernel)?;
    Ok(InformationStages {
        pdf,
        information,
        smoothed,
    })
}

fn check_keys_values(keys: &FeatureBatch, values: &FeatureBatch) -> Result<()> {
    if keys.n() != values.n() || keys.hw() != values.hw() {
        return Err(mismatch(
            format!("values over {}x{} pixels", keys.n(), keys.hw()),
            format!("{}x{}", values.n(), values.hw()),
        ));
    }
    Ok(())
}

fn finish(
    keys: &FeatureBatch,
    values: &FeatureBatch,
    stages: InformationStages,
    second_derivative: Option<Vec<f64>>,
    signs: Option<Vec<Sign>>,
    partition: RegionPartition,
) -> Result<EnactOutput> {
    let weights = region_softmax(&stages.smoothed, &partition)?;
    let k_cl = cluster_reduce(keys, &weights, &partition)?;
    let v_cl = cluster_reduce(values, &weights, &partition)?;
    let counts = partition.counts();
    let total_clusters = partition.total_clusters();
    let diagnostics = EnactDiagnostics {
        compression_ratio: total_clusters as f64 / (keys.n() * keys.hw()) as f64,
        counts,
        total_clusters,
    };
    Ok(EnactOutput {
        keys: k_cl,
        values: v_cl,
        diagnostics,
        trace: EnactTrace {
            pdf: stages.pdf,
            information: stages.information,
            smoothed: stages.smoothed,
            second_derivative,
            signs,
            partition,
            weights,
        },
    })
}

/// Clusters Keys and Values by the sign runs of the smoothed
/// self-information's second difference.
///
/// Samples with fewer than three pixels fall back to a single cluster.
pub fn enact_forward(
    keys: &FeatureBatch,
    values: &FeatureBatch,
    head: &LinearHead,
    sigma: f64,
) -> Result<EnactOutput> {
    check_keys_values(keys, values)?;
    let kernel = build_kernel(sigma)?;
    let stages = information_stages(keys, head, &kernel)?;
    let hw = keys.hw();
    if hw < 3 {
        let partition = RegionPartition::single_run(keys.n(), hw);
        return finish(keys, values, stages, None, None, partition);
    }
    let d2 = second_derivative(stages.smoothed.values(), hw)?;
    let signs = sign_step(&d2, hw)?;
    let partition = partition_runs(&signs, hw)?;
    finish(keys, values, stages, Some(d2), Some(signs), partition)
}

/// Same pipeline with the region structure supplied instead of derived.
pub fn enact_forward_with_partition(
    keys: &FeatureBatch,
    values: &FeatureBatch,
    head: &LinearHead,
    sigma: f64,
    partition: &RegionPartition,
) -> Result<EnactOutput> {
    check_keys_values(keys, values)?;
    check_partition(keys.n(), keys.hw(), partition)?;
    let kernel = build_kernel(sigma)?;
    let stages = information_stages(keys, head, &kernel)?;
    finish(keys, values, stages, None, None, partition.clone())
}

/// Backpropagates cluster gradients to the head, the Keys and the Values,
/// holding the partition in `forward` fixed.
pub fn enact_backward(
    keys: &FeatureBatch,
    values: &FeatureBatch,
    head: &LinearHead,
    sigma: f64,
    forward: &EnactOutput,
    grad_keys_cl: &RaggedClusters,
    grad_values_cl: &RaggedClusters,
) -> Result<EnactGradients> {
    let trace = &forward.trace;
    let partition = &trace.partition;
    let (mut grad_keys, grad_w_k) =
        cluster_reduce_backward(keys, &trace.weights, partition, grad_keys_cl)?;
    let (grad_values, grad_w_v) =
        cluster_reduce_backward(values, &trace.weights, partition, grad_values_cl)?;
    let grad_weights: Vec<f64> = grad_w_k.iter().zip(&grad_w_v).map(|(a, b)| a + b).collect();
    let grad_smoothed = region_softmax_backward(&trace.weights, &grad_weights, partition)?;

    let kernel = build_kernel(sigma)?;
    let hw = keys.hw();
    let grad_information: Vec<f64> = grad_smoothed
        .chunks_exact(hw)
        .flat_map(|row| smooth_row_adjoint(row, &kernel))
        .collect();
    let info_grads = information_backward(keys, head, &grad_information)?;
    for (g, extra) in grad_keys.data_mut().iter_mut().zip(info_grads.keys.data()) {
        *g += extra;
    }
    Ok(EnactGradients {
        head_weights: info_grads.weights,
        head_bias: info_grads.bias,
        keys: grad_keys,
        values: grad_values,
    })
}
