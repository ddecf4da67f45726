//! Learned per-pixel p.d.f. and self-information of the Keys.
//!
//! A [`LinearHead`] maps each pixel feature to a logit; a softmax over the
//! pixels of one sample turns the logits into a p.d.f. `p`, and the
//! self-information is `-p ln p`.

use crate::error::{invalid, mismatch, EnactError, Result};
use crate::numerics::{softmax_backward, stable_softmax, FeatureBatch, LinearHead};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Pdf,
    Information,
    SmoothedInformation,
}

/// `n x hw` per-pixel signal tagged with what it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoSignal {
    n: usize,
    hw: usize,
    values: Vec<f64>,
    kind: SignalKind,
}

impl InfoSignal {
    pub fn new(n: usize, hw: usize, values: Vec<f64>, kind: SignalKind) -> Result<Self> {
        if n * hw != values.len() {
            return Err(mismatch(format!("{n}x{hw} signal"), values.len()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EnactError::NonFinite { index });
        }
        Ok(Self { n, hw, values, kind })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hw(&self) -> usize {
        self.hw
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.hw..(n + 1) * self.hw]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.hw)
    }
}

/// Gradients of a scalar loss with respect to the head and the keys.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoGradients {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub keys: FeatureBatch,
}

/// Per-sample softmax of `keys . weights + bias` across the pixel axis.
pub fn pixel_pdf(keys: &FeatureBatch, head: &LinearHead) -> Result<InfoSignal> {
    head.check_channels(keys.d())?;
    let (n, hw) = (keys.n(), keys.hw());
    let mut values = Vec::with_capacity(n * hw);
    for s in 0..n {
        let logits: Vec<f64> = (0..hw).map(|i| head.logit(keys.pixel(s, i))).collect();
        values.extend(stable_softmax(&logits, None)?);
    }
    InfoSignal::new(n, hw, values, SignalKind::Pdf)
}

/// Elementwise `-p ln p`.
pub fn self_information(pdf: &InfoSignal) -> Result<InfoSignal> {
    if pdf.kind != SignalKind::Pdf {
        return Err(invalid(format!("self_information expects a pdf, got {:?}", pdf.kind)));
    }
    if let Some(index) = pdf.values.iter().position(|&p| p <= 0.0 || p >= 1.0) {
        return Err(EnactError::Domain(format!(
            "probability {} at index {index} lies outside (0, 1)",
            pdf.values[index]
        )));
    }
    let values = pdf.values.iter().map(|&p| -p * p.ln()).collect();
    InfoSignal::new(pdf.n, pdf.hw, values, SignalKind::Information)
}

/// Backpropagates `upstream = dL/dH` through `-p ln p`, the pixel softmax and
/// the linear head.
pub fn information_backward(
    keys: &FeatureBatch,
    head: &LinearHead,
    upstream: &[f64],
) -> Result<InfoGradients> {
    head.check_channels(keys.d())?;
    let (n, hw, d) = (keys.n(), keys.hw(), keys.d());
    if upstream.len() != n * hw {
        return Err(mismatch(format!("{n}x{hw} upstream gradient"), upstream.len()));
    }
    let pdf = pixel_pdf(keys, head)?;

    let mut grad_weights = vec![0.0; d];
    let mut grad_bias = 0.0;
    let mut grad_keys = FeatureBatch::zeros(n, hw, d);
    for s in 0..n {
        let p = pdf.row(s);
        let up = &upstream[s * hw..(s + 1) * hw];
        // dH/dp = -(ln p + 1)
        let grad_p: Vec<f64> = p.iter().zip(up).map(|(&p, &g)| -g * (p.ln() + 1.0)).collect();
        let grad_logits = softmax_backward(p, &grad_p);
        for (i, &gl) in grad_logits.iter().enumerate() {
            grad_bias += gl;
            for ((gw, &x), (gk, &w)) in grad_weights
                .iter_mut()
                .zip(keys.pixel(s, i))
                .zip(grad_keys.pixel_mut(s, i).iter_mut().zip(&head.weights))
            {
                *gw += gl * x;
                *gk = gl * w;
            }
        }
    }
    Ok(InfoGradients {
        weights: grad_weights,
        bias: grad_bias,
        keys: grad_keys,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{fd_gradient, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, hw: usize, d: usize, seed: u64) -> FeatureBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * hw * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureBatch::new(n, hw, d, data).unwrap()
    }

    fn info_sum(keys: &FeatureBatch, head: &LinearHead, upstream: &[f64]) -> f64 {
        let h = self_information(&pixel_pdf(keys, head).unwrap()).unwrap();
        h.values().iter().zip(upstream).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn zero_keys_give_uniform_pdf() {
        let keys = FeatureBatch::zeros(2, 5, 3);
        let head = LinearHead::new(vec![0.4, -0.1, 2.0], 0.0).unwrap();
        let p = pixel_pdf(&keys, &head).unwrap();
        assert!(p.values().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn closed_form_pdf() {
        let keys = FeatureBatch::new(1, 4, 1, vec![0.0, 0.0, 0.0, 3f64.ln()]).unwrap();
        let head = LinearHead::new(vec![1.0], 0.0).unwrap();
        let p = pixel_pdf(&keys, &head).unwrap();
        let expected = [1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5];
        for (a, b) in p.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn pdf_rows_sum_to_one() {
        let keys = random_batch(3, 17, 6, 11);
        let head = LinearHead::xavier(6, 2).unwrap();
        let p = pixel_pdf(&keys, &head).unwrap();
        for row in p.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn pdf_rejects_channel_mismatch() {
        let keys = FeatureBatch::zeros(1, 4, 3);
        let head = LinearHead::new(vec![1.0, 1.0], 0.0).unwrap();
        assert!(matches!(
            pixel_pdf(&keys, &head),
            Err(EnactError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn pdf_invariant_to_per_sample_logit_shift() {
        // A constant feature channel shifts every logit of the sample equally.
        let mut keys = random_batch(1, 9, 3, 5);
        let head = LinearHead::new(vec![0.7, -0.4, 1.3], 0.2).unwrap();
        let before = pixel_pdf(&keys, &head).unwrap();
        for i in 0..9 {
            keys.pixel_mut(0, i)[2] += 4.0;
        }
        let after = pixel_pdf(&keys, &head).unwrap();
        for (a, b) in before.values().iter().zip(after.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn self_information_values() {
        let e = std::f64::consts::E;
        let pdf = InfoSignal::new(1, 1, vec![1.0 / e], SignalKind::Pdf).unwrap();
        let h = self_information(&pdf).unwrap();
        assert!((h.values()[0] - 1.0 / e).abs() < 1e-15);

        let pdf = InfoSignal::new(1, 4, vec![0.25; 4], SignalKind::Pdf).unwrap();
        let h = self_information(&pdf).unwrap();
        assert!(h.values().iter().all(|&v| (v - 0.25 * 4f64.ln()).abs() < 1e-15));
        assert!((h.values()[0] - 0.34657).abs() < 1e-5);

        let small = [1e-3, 1e-6, 1e-9, 1e-12];
        let pdf = InfoSignal::new(1, 4, small.to_vec(), SignalKind::Pdf).unwrap();
        let h = self_information(&pdf).unwrap();
        assert!(h.values().windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
    }

    #[test]
    fn self_information_domain_errors() {
        let pdf = InfoSignal::new(1, 2, vec![0.0, 1.0], SignalKind::Pdf).unwrap();
        assert!(matches!(self_information(&pdf), Err(EnactError::Domain(_))));
        let info = InfoSignal::new(1, 2, vec![0.5, 0.5], SignalKind::Information).unwrap();
        assert!(self_information(&info).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let keys = random_batch(2, 6, 3, 1);
        let head = LinearHead::xavier(3, 1).unwrap();
        let g = information_backward(&keys, &head, &[0.0; 12]).unwrap();
        assert!(g.weights.iter().all(|&v| v == 0.0));
        assert_eq!(g.bias, 0.0);
        assert!(g.keys.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_case_matches_finite_differences() {
        let keys = FeatureBatch::new(1, 2, 1, vec![0.8, -0.5]).unwrap();
        let head = LinearHead::new(vec![1.7], 0.3).unwrap();
        let up = [1.0, 1.0];
        let g = information_backward(&keys, &head, &up).unwrap();

        let fd_w = fd_gradient(
            |w| info_sum(&keys, &LinearHead::new(w.to_vec(), 0.3).unwrap(), &up),
            &[1.7],
            1e-6,
        )
        .unwrap();
        assert!(max_relative_error(&g.weights, &fd_w, 1e-8) < 1e-4);

        let fd_k = fd_gradient(
            |k| info_sum(&FeatureBatch::new(1, 2, 1, k.to_vec()).unwrap(), &head, &up),
            keys.data(),
            1e-6,
        )
        .unwrap();
        assert!(max_relative_error(g.keys.data(), &fd_k, 1e-8) < 1e-4);
        // Softmax is shift invariant, so the bias carries no gradient.
        assert!(g.bias.abs() < 1e-15);
    }

    #[test]
    fn uniform_point_matches_explicit_jacobian() {
        // Zero keys put every sample at the uniform pdf p = 1/hw. The logit
        // gradient is J^T g with J = diag(p) - p p^T built explicitly.
        let hw = 4;
        let mut keys = FeatureBatch::zeros(1, hw, 2);
        for i in 0..hw {
            keys.pixel_mut(0, i).copy_from_slice(&[1.0, 1.0]);
        }
        let head = LinearHead::new(vec![0.0, 0.0], 0.0).unwrap();
        let up = [0.3, -0.2, 1.1, 0.5];
        let p = 1.0 / hw as f64;
        let dh_dp = -(p.ln() + 1.0);
        let grad_p: Vec<f64> = up.iter().map(|g| g * dh_dp).collect();
        let mut grad_logit = [0.0; 4];
        for (i, gl) in grad_logit.iter_mut().enumerate() {
            for (j, gp) in grad_p.iter().enumerate() {
                let jac = if i == j { p - p * p } else { -p * p };
                *gl += jac * gp;
            }
        }
        let expected_w: f64 = grad_logit.iter().sum();
        let g = information_backward(&keys, &head, &up).unwrap();
        assert!((g.weights[0] - expected_w).abs() < 1e-15);
        assert!((g.weights[1] - expected_w).abs() < 1e-15);
        // Head weights are zero, so no gradient reaches the keys.
        assert!(g.keys.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_batch_gradients_match_finite_differences() {
        let keys = random_batch(2, 7, 3, 21);
        let head = LinearHead::new(vec![0.9, -1.4, 0.6], 0.1).unwrap();
        let up = vec![1.0; 14];
        let g = information_backward(&keys, &head, &up).unwrap();
        let fd_w = fd_gradient(
            |w| info_sum(&keys, &LinearHead::new(w.to_vec(), 0.1).unwrap(), &up),
            &head.weights,
            1e-6,
        )
        .unwrap();
        assert!(max_relative_error(&g.weights, &fd_w, 1e-8) < 1e-4);
        let fd_k = fd_gradient(
            |k| info_sum(&FeatureBatch::new(2, 7, 3, k.to_vec()).unwrap(), &head, &up),
            keys.data(),
            1e-6,
        )
        .unwrap();
        assert!(max_relative_error(g.keys.data(), &fd_k, 1e-8) < 1e-4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn information_positive_and_bounded(seed in any::<u64>(), hw in 2usize..40) {
                let keys = random_batch(2, hw, 4, seed);
                let head = LinearHead::xavier(4, seed.wrapping_add(1)).unwrap();
                let h = self_information(&pixel_pdf(&keys, &head).unwrap()).unwrap();
                let bound = (-1.0f64).exp();
                prop_assert!(h.values().iter().all(|&v| v > 0.0 && v <= bound));
            }
        }
    }
}
