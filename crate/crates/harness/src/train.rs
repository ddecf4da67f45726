//! Gradient descent on the p.d.f. head through the clustered encoder layer.
//!
//! Target: every pixel's output should equal its input plus the mean
//! feature of its sample's planted blobs. Attention can only reach that by
//! routing cluster weight toward blob pixels, which in turn requires the
//! head to assign them more information.

use std::path::Path;

use enact::{
    encoder_layer_backward, encoder_layer_forward, pixel_pdf, self_information, EncoderConfig,
    FeatureBatch, LinearHead,
};
use serde::Serialize;

use crate::bench::positioned_keys;
use crate::config::{ScenarioConfig, TrainConfig};
use crate::error::{HarnessError, Result};
use crate::synthetic::{generate_synthetic_batch, SyntheticBatch};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Loss before each update, one entry per step.
    pub losses: Vec<f64>,
    pub head: LinearHead,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one step")
    }
}

/// `x` plus the per-sample mean over blob pixels (zero when a sample has
/// none).
pub fn regression_target(batch: &SyntheticBatch) -> Result<FeatureBatch> {
    let x = &batch.features;
    let (n, hw, d) = (x.n(), x.hw(), x.d());
    let mut target = x.clone();
    for s in 0..n {
        let mut mean = vec![0.0; d];
        let mut count = 0usize;
        for i in (0..hw).filter(|&i| batch.blob_mask[s * hw + i]) {
            count += 1;
            for (m, v) in mean.iter_mut().zip(x.pixel(s, i)) {
                *m += v;
            }
        }
        if count > 0 {
            for m in &mut mean {
                *m /= count as f64;
            }
        }
        for i in 0..hw {
            for (t, m) in target.pixel_mut(s, i).iter_mut().zip(&mean) {
                *t += m;
            }
        }
    }
    Ok(target)
}

fn mse(output: &FeatureBatch, target: &FeatureBatch) -> f64 {
    let len = output.data().len() as f64;
    output
        .data()
        .iter()
        .zip(target.data())
        .map(|(o, t)| (o - t).powi(2))
        .sum::<f64>()
        / len
}

pub fn train_on(
    batch: &SyntheticBatch,
    config: &ScenarioConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.steps == 0 {
        return Err(HarnessError::Config("training needs at least one step".into()));
    }
    let x = &batch.features;
    let target = regression_target(batch)?;
    let layer = EncoderConfig {
        sigma: config.sigma,
        heads: config.heads,
        use_enact: true,
    };
    let mut head = LinearHead::xavier(config.d, config.seed)?;
    let mut losses = Vec::with_capacity(train.steps);
    let scale = 2.0 / x.data().len() as f64;

    for step in 0..train.steps {
        let forward = encoder_layer_forward(x, &head, &layer)?;
        let loss = mse(&forward.output, &target);
        if !loss.is_finite() {
            return Err(HarnessError::Diverged { step, loss });
        }
        losses.push(loss);

        let partition = forward.clusters.expect("clustered layer").trace.partition;
        let upstream: Vec<f64> = forward
            .output
            .data()
            .iter()
            .zip(target.data())
            .map(|(o, t)| scale * (o - t))
            .collect();
        let upstream = FeatureBatch::new(x.n(), x.hw(), x.d(), upstream)?;
        let grads = encoder_layer_backward(x, &head, &layer, &partition, &upstream)?;

        let weights = head
            .weights
            .iter()
            .zip(&grads.head_weights)
            .map(|(w, g)| w - train.learning_rate * g)
            .collect();
        let bias = head.bias - train.learning_rate * grads.head_bias;
        head = LinearHead::new(weights, bias).map_err(|_| HarnessError::Diverged {
            step,
            loss: f64::NAN,
        })?;
    }
    Ok(TrainOutcome { losses, head })
}

pub fn run_toy_training(config: &ScenarioConfig, train: &TrainConfig) -> Result<TrainOutcome> {
    let batch = generate_synthetic_batch(config)?;
    train_on(&batch, config, train)
}

pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        step: usize,
        loss: f64,
    }
    let mut writer = csv::Writer::from_path(path)?;
    for (step, &loss) in losses.iter().enumerate() {
        writer.serialize(Row { step, loss })?;
    }
    writer.flush()?;
    Ok(())
}

/// Mean self-information over blob pixels and over the remaining pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InformationContrast {
    pub blob_mean: f64,
    pub background_mean: f64,
}

pub fn information_contrast(
    batch: &SyntheticBatch,
    head: &LinearHead,
    positions: bool,
) -> Result<InformationContrast> {
    let keys = positioned_keys(&batch.features, positions)?;
    let info = self_information(&pixel_pdf(&keys, head)?)?;
    let (mut blob, mut blob_n, mut bg, mut bg_n) = (0.0, 0usize, 0.0, 0usize);
    for (&h, &is_blob) in info.values().iter().zip(&batch.blob_mask) {
        if is_blob {
            blob += h;
            blob_n += 1;
        } else {
            bg += h;
            bg_n += 1;
        }
    }
    if blob_n == 0 || bg_n == 0 {
        return Err(HarnessError::Config(
            "contrast needs both blob and background pixels".into(),
        ));
    }
    Ok(InformationContrast {
        blob_mean: blob / blob_n as f64,
        background_mean: bg / bg_n as f64,
    })
}
