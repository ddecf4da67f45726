//! Entropy-based clustering of attention Keys and Values.
//!
//! A learned linear head turns each Key pixel into a p.d.f. over the
//! image's pixels; its self-information is smoothed with a Gaussian and
//! split into regions by the sign of its second difference. Each region is
//! collapsed into one Key and one Value vector by a per-region softmax of
//! the smoothed information, so attention runs against `C_n` clusters per
//! sample instead of `HW` pixels.
//!
//! Module map:
//! - [`numerics`]: arrays, stable softmax, Xavier init, finite differences
//! - [`information`]: pixel p.d.f. and self-information with gradients
//! - [`segmentation`]: smoothing, second difference, sign runs
//! - [`cluster`]: region softmax, ragged reduction, the full pipeline
//! - [`attention`]: baseline and clustered multi-head attention
//! - [`encoder`]: residual layer tying it together

pub mod attention;
pub mod cluster;
pub mod encoder;
pub mod error;
pub mod information;
pub mod numerics;
pub mod segmentation;

pub use attention::{attention_baseline, attention_clustered, sinusoidal_positions, AttentionOutput};
pub use cluster::{
    cluster_reduce, enact_backward, enact_forward, enact_forward_with_partition, region_softmax,
    EnactDiagnostics, EnactOutput, EnactTrace, RaggedClusters,
};
pub use encoder::{
    encoder_layer_backward, encoder_layer_forward, encoder_layer_forward_frozen, EncoderConfig,
    EncoderGradients, EncoderOutput,
};
pub use error::{EnactError, Result};
pub use information::{information_backward, pixel_pdf, self_information, InfoSignal, SignalKind};
pub use numerics::{fd_gradient, stable_softmax, xavier_uniform_init, DenseArray, FeatureBatch, LinearHead};
pub use segmentation::{
    build_kernel, gaussian_smooth, partition_runs, second_derivative, sign_step, GaussianKernel,
    RegionPartition, Run, Sign,
};
