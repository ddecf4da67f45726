//! A residual self-attention layer with optional Key/Value clustering.
//!
//! `q = k = x + positions`, `v = x`, `out = x + attention(q, k, v)`. With
//! clustering enabled, `k` and `v` are replaced by their clusters; the
//! queries stay per-pixel so the output keeps the input shape.

use crate::attention::{
    attention_baseline, attention_clustered, attention_clustered_backward, sinusoidal_positions,
};
use crate::cluster::{
    enact_backward, enact_forward, enact_forward_with_partition, EnactDiagnostics, EnactOutput,
};
use crate::error::{invalid, Result};
use crate::numerics::{FeatureBatch, LinearHead};
use crate::segmentation::RegionPartition;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub sigma: f64,
    pub heads: usize,
    pub use_enact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub output: FeatureBatch,
    pub weight_elements: usize,
    /// Populated only when clustering ran.
    pub diagnostics: Option<EnactDiagnostics>,
    pub clusters: Option<EnactOutput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGradients {
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
    pub input: FeatureBatch,
}

fn positioned(x: &FeatureBatch) -> Result<FeatureBatch> {
    x.add_per_sample(&sinusoidal_positions(x.hw(), x.d())?)
}

fn residual(x: &FeatureBatch, attended: &FeatureBatch) -> Result<FeatureBatch> {
    x.add(attended)
}

fn clustered_layer(
    x: &FeatureBatch,
    qk: &FeatureBatch,
    config: &EncoderConfig,
    clusters: EnactOutput,
) -> Result<EncoderOutput> {
    let attended = attention_clustered(qk, &clusters.keys, &clusters.values, config.heads)?;
    Ok(EncoderOutput {
        output: residual(x, &attended.values)?,
        weight_elements: attended.weight_elements,
        diagnostics: Some(clusters.diagnostics.clone()),
        clusters: Some(clusters),
    })
}

pub fn encoder_layer_forward(
    x: &FeatureBatch,
    head: &LinearHead,
    config: &EncoderConfig,
) -> Result<EncoderOutput> {
    let qk = positioned(x)?;
    if !config.use_enact {
        let attended = attention_baseline(&qk, &qk, x, config.heads)?;
        return Ok(EncoderOutput {
            output: residual(x, &attended.values)?,
            weight_elements: attended.weight_elements,
            diagnostics: None,
            clusters: None,
        });
    }
    let clusters = enact_forward(&qk, x, head, config.sigma)?;
    clustered_layer(x, &qk, config, clusters)
}

/// Clustered layer with a fixed region structure. Used for gradient work,
/// where the discrete partition is held constant.
pub fn encoder_layer_forward_frozen(
    x: &FeatureBatch,
    head: &LinearHead,
    config: &EncoderConfig,
    partition: &RegionPartition,
) -> Result<EncoderOutput> {
    let qk = positioned(x)?;
    let clusters = enact_forward_with_partition(&qk, x, head, config.sigma, partition)?;
    clustered_layer(x, &qk, config, clusters)
}

/// Gradients of `<upstream, out>` through the clustered layer with
/// `partition` frozen.
pub fn encoder_layer_backward(
    x: &FeatureBatch,
    head: &LinearHead,
    config: &EncoderConfig,
    partition: &RegionPartition,
    upstream: &FeatureBatch,
) -> Result<EncoderGradients> {
    if !config.use_enact {
        return Err(invalid("backward pass is only defined for the clustered layer"));
    }
    x.check_same_shape(upstream)?;
    let qk = positioned(x)?;
    let fwd = enact_forward_with_partition(&qk, x, head, config.sigma, partition)?;
    let attn = attention_clustered_backward(&qk, &fwd.keys, &fwd.values, config.heads, upstream)?;
    let enact = enact_backward(&qk, x, head, config.sigma, &fwd, &attn.keys, &attn.values)?;

    // x reaches the output through the residual, the queries, the keys and
    // the values.
    let mut input = upstream.clone();
    for (((g, gq), gk), gv) in input
        .data_mut()
        .iter_mut()
        .zip(attn.queries.data())
        .zip(enact.keys.data())
        .zip(enact.values.data())
    {
        *g += gq + gk + gv;
    }
    Ok(EncoderGradients {
        head_weights: enact.head_weights,
        head_bias: enact.head_bias,
        input,
    })
}
