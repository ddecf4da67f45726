//! Analytic vs central-difference gradients of the clustered encoder layer.
//!
//! The loss is the sum of the layer output. The region partition is taken
//! from a forward pass at the starting point and frozen, so the loss is
//! smooth in every parameter being perturbed.

use enact::numerics::max_relative_error;
use enact::{
    encoder_layer_backward, encoder_layer_forward, encoder_layer_forward_frozen, fd_gradient,
    EncoderConfig, EncoderGradients, FeatureBatch, LinearHead, RegionPartition,
};
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::{HarnessError, Result};
use crate::synthetic::generate_synthetic_batch;

pub const FD_EPS: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error. Coordinates whose true
/// gradient is zero (the bias, which the pixel softmax cancels) are then
/// held to an absolute error of `TOLERANCE * FLOOR`.
pub const FLOOR: f64 = 1e-3;
pub const MAX_PIXELS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_relative_error).fold(0.0, f64::max)
    }
}

/// Everything needed to evaluate and differentiate the frozen layer.
pub struct GradProblem {
    pub x: FeatureBatch,
    pub head: LinearHead,
    pub layer: EncoderConfig,
    pub partition: RegionPartition,
}

impl GradProblem {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        if config.hw() > MAX_PIXELS {
            return Err(HarnessError::Config(format!(
                "gradient check needs HW <= {MAX_PIXELS}, got {}",
                config.hw()
            )));
        }
        let x = generate_synthetic_batch(config)?.features;
        let head = LinearHead::xavier(config.d, config.seed)?;
        let layer = EncoderConfig {
            sigma: config.sigma,
            heads: config.heads,
            use_enact: true,
        };
        let partition = encoder_layer_forward(&x, &head, &layer)?
            .clusters
            .expect("clustered layer")
            .trace
            .partition;
        Ok(Self {
            x,
            head,
            layer,
            partition,
        })
    }

    pub fn loss(&self, x: &FeatureBatch, head: &LinearHead) -> f64 {
        match encoder_layer_forward_frozen(x, head, &self.layer, &self.partition) {
            Ok(out) => compensated_sum(out.output.data()),
            Err(_) => f64::NAN,
        }
    }

    pub fn analytic(&self) -> Result<EncoderGradients> {
        let ones = FeatureBatch::new(
            self.x.n(),
            self.x.hw(),
            self.x.d(),
            vec![1.0; self.x.data().len()],
        )?;
        Ok(encoder_layer_backward(&self.x, &self.head, &self.layer, &self.partition, &ones)?)
    }

    pub fn numeric(&self) -> Result<EncoderGradients> {
        let (n, hw, d) = (self.x.n(), self.x.hw(), self.x.d());
        let bias = self.head.bias;
        let head_weights = fd_gradient(
            |w| match LinearHead::new(w.to_vec(), bias) {
                Ok(h) => self.loss(&self.x, &h),
                Err(_) => f64::NAN,
            },
            &self.head.weights,
            FD_EPS,
        )?;
        let weights = self.head.weights.clone();
        let head_bias = fd_gradient(
            |b| match LinearHead::new(weights.clone(), b[0]) {
                Ok(h) => self.loss(&self.x, &h),
                Err(_) => f64::NAN,
            },
            &[bias],
            FD_EPS,
        )?[0];
        let input = fd_gradient(
            |v| match FeatureBatch::new(n, hw, d, v.to_vec()) {
                Ok(x) => self.loss(&x, &self.head),
                Err(_) => f64::NAN,
            },
            self.x.data(),
            FD_EPS,
        )?;
        Ok(EncoderGradients {
            head_weights,
            head_bias,
            input: FeatureBatch::new(n, hw, d, input)?,
        })
    }
}

/// Neumaier summation. A naive sum of a few hundred O(1) outputs carries
/// rounding noise that central differences at `FD_EPS` amplify to ~1e-7.
fn compensated_sum(values: &[f64]) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

fn check_block(name: &str, analytic: &[f64], numeric: &[f64]) -> Result<BlockCheck> {
    if let Some(i) = analytic.iter().position(|v| !v.is_finite()) {
        return Err(HarnessError::Invariant(format!("non-finite analytic gradient in {name}[{i}]")));
    }
    let errors: Vec<f64> = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| max_relative_error(&[*a], &[*b], FLOOR))
        .collect();
    let (worst_index, worst) = errors
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(BlockCheck {
        name: name.to_string(),
        coordinates: analytic.len(),
        max_relative_error: worst,
        worst_index,
        passed: worst <= TOLERANCE,
    })
}

/// Compares two gradient sets block by block.
pub fn compare(analytic: &EncoderGradients, numeric: &EncoderGradients) -> Result<GradCheckReport> {
    Ok(GradCheckReport {
        eps: FD_EPS,
        tolerance: TOLERANCE,
        blocks: vec![
            check_block("head_weights", &analytic.head_weights, &numeric.head_weights)?,
            check_block("head_bias", &[analytic.head_bias], &[numeric.head_bias])?,
            check_block("input", analytic.input.data(), numeric.input.data())?,
        ],
    })
}

pub fn run_gradient_check(config: &ScenarioConfig) -> Result<GradCheckReport> {
    let problem = GradProblem::new(config)?;
    compare(&problem.analytic()?, &problem.numeric()?)
}
