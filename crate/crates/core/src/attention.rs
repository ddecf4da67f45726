//! Multi-head scaled dot-product attention against full or clustered
//! Keys/Values, plus the sinusoidal position table.
//!
//! Channels are split into `heads` contiguous groups of `d / heads`; each
//! head scales its logits by `1 / sqrt(d / heads)`.

use crate::cluster::RaggedClusters;
use crate::error::{invalid, mismatch, Result};
use crate::numerics::{dot, softmax_backward, stable_softmax, DenseArray, FeatureBatch};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `N x HW x d`, always the query shape.
    pub values: FeatureBatch,
    /// Attention-weight elements materialized by this path.
    pub weight_elements: usize,
}

fn head_dim(d: usize, heads: usize) -> Result<usize> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(invalid(format!("channel count {d} is not divisible by {heads} heads")));
    }
    Ok(d / heads)
}

/// Full attention: every query attends to every key of its own sample.
pub fn attention_baseline(
    q: &FeatureBatch,
    k: &FeatureBatch,
    v: &FeatureBatch,
    heads: usize,
) -> Result<AttentionOutput> {
    q.check_same_shape(k)?;
    q.check_same_shape(v)?;
    let (n, hw, d) = (q.n(), q.hw(), q.d());
    let dh = head_dim(d, heads)?;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut out = FeatureBatch::zeros(n, hw, d);
    let mut logits = vec![0.0; hw];
    for s in 0..n {
        for h in 0..heads {
            let ch = h * dh..(h + 1) * dh;
            for i in 0..hw {
                let qi = &q.pixel(s, i)[ch.clone()];
                for (j, l) in logits.iter_mut().enumerate() {
                    *l = dot(qi, &k.pixel(s, j)[ch.clone()]) * scale;
                }
                let weights = stable_softmax(&logits, None)?;
                let row = &mut out.pixel_mut(s, i)[ch.clone()];
                for (j, w) in weights.iter().enumerate() {
                    for (o, x) in row.iter_mut().zip(&v.pixel(s, j)[ch.clone()]) {
                        *o += w * x;
                    }
                }
            }
        }
    }
    Ok(AttentionOutput {
        values: out,
        weight_elements: n * heads * hw * hw,
    })
}

fn check_clusters(q: &FeatureBatch, k_cl: &RaggedClusters, v_cl: &RaggedClusters) -> Result<()> {
    if k_cl.counts() != v_cl.counts() {
        return Err(invalid(format!(
            "key/value cluster counts differ: {:?} vs {:?}",
            k_cl.counts(),
            v_cl.counts()
        )));
    }
    if k_cl.n() != q.n() || k_cl.d() != q.d() || v_cl.d() != q.d() {
        return Err(mismatch(
            format!("clusters for {} samples of {} channels", q.n(), q.d()),
            format!("{} samples of {}/{} channels", k_cl.n(), k_cl.d(), v_cl.d()),
        ));
    }
    Ok(())
}

/// Keys/Values padded to `C_max` per sample with a validity mask.
struct PaddedClusters {
    c_max: usize,
    keys: Vec<f64>,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl PaddedClusters {
    fn new(k_cl: &RaggedClusters, v_cl: &RaggedClusters) -> Self {
        let (n, d, c_max) = (k_cl.n(), k_cl.d(), k_cl.max_count());
        let mut keys = vec![0.0; n * c_max * d];
        let mut values = vec![0.0; n * c_max * d];
        let mut mask = vec![false; n * c_max];
        for s in 0..n {
            let len = k_cl.counts()[s] * d;
            let base = s * c_max * d;
            keys[base..base + len].copy_from_slice(k_cl.sample(s));
            values[base..base + len].copy_from_slice(v_cl.sample(s));
            mask[s * c_max..s * c_max + k_cl.counts()[s]].fill(true);
        }
        Self {
            c_max,
            keys,
            values,
            mask,
        }
    }

    fn key(&self, s: usize, c: usize, d: usize) -> &[f64] {
        let start = (s * self.c_max + c) * d;
        &self.keys[start..start + d]
    }

    fn value(&self, s: usize, c: usize, d: usize) -> &[f64] {
        let start = (s * self.c_max + c) * d;
        &self.values[start..start + d]
    }

    fn mask(&self, s: usize) -> &[bool] {
        &self.mask[s * self.c_max..(s + 1) * self.c_max]
    }
}

/// Attention of every query against its own sample's clusters only.
///
/// Clusters are padded to the largest `C_n` and padding slots are masked to
/// exactly zero weight. The reported element count is the ragged
/// `sum_n heads * HW * C_n`.
pub fn attention_clustered(
    q: &FeatureBatch,
    k_cl: &RaggedClusters,
    v_cl: &RaggedClusters,
    heads: usize,
) -> Result<AttentionOutput> {
    check_clusters(q, k_cl, v_cl)?;
    let (n, hw, d) = (q.n(), q.hw(), q.d());
    let dh = head_dim(d, heads)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let padded = PaddedClusters::new(k_cl, v_cl);

    let mut out = FeatureBatch::zeros(n, hw, d);
    let mut logits = vec![0.0; padded.c_max];
    for s in 0..n {
        let mask = padded.mask(s);
        for h in 0..heads {
            let ch = h * dh..(h + 1) * dh;
            for i in 0..hw {
                let qi = &q.pixel(s, i)[ch.clone()];
                for (c, l) in logits.iter_mut().enumerate() {
                    *l = if mask[c] {
                        dot(qi, &padded.key(s, c, d)[ch.clone()]) * scale
                    } else {
                        0.0
                    };
                }
                let weights = stable_softmax(&logits, Some(mask))?;
                let row = &mut out.pixel_mut(s, i)[ch.clone()];
                for (c, w) in weights.iter().enumerate() {
                    for (o, x) in row.iter_mut().zip(&padded.value(s, c, d)[ch.clone()]) {
                        *o += w * x;
                    }
                }
            }
        }
    }
    Ok(AttentionOutput {
        values: out,
        weight_elements: heads * hw * k_cl.total(),
    })
}

/// Gradients of [`attention_clustered`] with respect to its three inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredAttentionGradients {
    pub queries: FeatureBatch,
    pub keys: RaggedClusters,
    pub values: RaggedClusters,
}

pub fn attention_clustered_backward(
    q: &FeatureBatch,
    k_cl: &RaggedClusters,
    v_cl: &RaggedClusters,
    heads: usize,
    upstream: &FeatureBatch,
) -> Result<ClusteredAttentionGradients> {
    check_clusters(q, k_cl, v_cl)?;
    q.check_same_shape(upstream)?;
    let (n, hw, d) = (q.n(), q.hw(), q.d());
    let dh = head_dim(d, heads)?;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut grad_q = FeatureBatch::zeros(n, hw, d);
    let mut grad_k = vec![0.0; k_cl.total() * d];
    let mut grad_v = vec![0.0; v_cl.total() * d];
    for s in 0..n {
        let c_n = k_cl.counts()[s];
        let base = k_cl.offsets()[s];
        for h in 0..heads {
            let ch = h * dh..(h + 1) * dh;
            for i in 0..hw {
                let qi = &q.pixel(s, i)[ch.clone()];
                let logits: Vec<f64> = (0..c_n)
                    .map(|c| dot(qi, &k_cl.cluster(s, c)[ch.clone()]) * scale)
                    .collect();
                let weights = stable_softmax(&logits, None)?;
                let g_out = &upstream.pixel(s, i)[ch.clone()];

                let g_weights: Vec<f64> = (0..c_n)
                    .map(|c| dot(g_out, &v_cl.cluster(s, c)[ch.clone()]))
                    .collect();
                let g_logits = softmax_backward(&weights, &g_weights);

                let gq = &mut grad_q.pixel_mut(s, i)[ch.clone()];
                for c in 0..c_n {
                    let row = (base + c) * d;
                    let kc = &k_cl.cluster(s, c)[ch.clone()];
                    for (j, x) in ch.clone().enumerate() {
                        grad_v[row + x] += weights[c] * g_out[j];
                        grad_k[row + x] += g_logits[c] * scale * qi[j];
                        gq[j] += g_logits[c] * scale * kc[j];
                    }
                }
            }
        }
    }
    Ok(ClusteredAttentionGradients {
        queries: grad_q,
        keys: RaggedClusters::new(d, grad_k, k_cl.counts().to_vec())?,
        values: RaggedClusters::new(d, grad_v, v_cl.counts().to_vec())?,
    })
}

/// Interleaved sine/cosine table, `hw x d`:
/// `pe[p, 2i] = sin(p / 10000^(2i/d))`, `pe[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_positions(hw: usize, d: usize) -> Result<DenseArray> {
    if hw == 0 || d == 0 || !d.is_multiple_of(2) {
        return Err(invalid(format!(
            "positions need hw >= 1 and an even positive d, got hw={hw}, d={d}"
        )));
    }
    let mut data = Vec::with_capacity(hw * d);
    for pos in 0..hw {
        for pair in 0..d / 2 {
            let freq = 10000f64.powf(-((2 * pair) as f64) / d as f64);
            let angle = pos as f64 * freq;
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    DenseArray::new(vec![hw, d], data)
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

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Per-sample ragged loop with no padding.
    fn ragged_loop_oracle(
        q: &FeatureBatch,
        k_cl: &RaggedClusters,
        v_cl: &RaggedClusters,
        heads: usize,
    ) -> Vec<f64> {
        let (n, hw, d) = (q.n(), q.hw(), q.d());
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; n * hw * d];
        for s in 0..n {
            for h in 0..heads {
                for i in 0..hw {
                    let qi = &q.pixel(s, i)[h * dh..(h + 1) * dh];
                    let logits: Vec<f64> = (0..k_cl.counts()[s])
                        .map(|c| dot(qi, &k_cl.cluster(s, c)[h * dh..(h + 1) * dh]) * scale)
                        .collect();
                    let w = stable_softmax(&logits, None).unwrap();
                    for (c, wc) in w.iter().enumerate() {
                        for j in 0..dh {
                            out[(s * hw + i) * d + h * dh + j] +=
                                wc * v_cl.cluster(s, c)[h * dh + j];
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn single_pixel_returns_values() {
        let q = random_batch(2, 1, 4, 1);
        let k = random_batch(2, 1, 4, 2);
        let v = random_batch(2, 1, 4, 3);
        let out = attention_baseline(&q, &k, &v, 2).unwrap();
        assert_eq!(out.values.data(), v.data());
        assert_eq!(out.weight_elements, 2 * 2);
    }

    #[test]
    fn zero_logits_average_values() {
        let q = FeatureBatch::zeros(1, 5, 4);
        let k = random_batch(1, 5, 4, 2);
        let v = random_batch(1, 5, 4, 3);
        let out = attention_baseline(&q, &k, &v, 1).unwrap();
        for ch in 0..4 {
            let mean: f64 = (0..5).map(|j| v.pixel(0, j)[ch]).sum::<f64>() / 5.0;
            for i in 0..5 {
                assert!((out.values.pixel(0, i)[ch] - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn baseline_matches_explicit_matrices() {
        let q = FeatureBatch::new(
            1,
            3,
            4,
            vec![1.0, 0.0, 0.5, -1.0, 0.2, 0.3, -0.4, 0.1, -1.0, 2.0, 0.0, 0.5],
        )
        .unwrap();
        let k = FeatureBatch::new(
            1,
            3,
            4,
            vec![0.5, 1.0, -0.5, 0.0, 1.5, -0.2, 0.3, 0.7, 0.0, 0.4, 1.0, -1.0],
        )
        .unwrap();
        let v = FeatureBatch::new(
            1,
            3,
            4,
            vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 0.5, 2.0, -2.0, 0.0, 1.0],
        )
        .unwrap();
        // S = Q K^T / 2, A = rowwise softmax, O = A V.
        let qm: Vec<&[f64]> = (0..3).map(|i| q.pixel(0, i)).collect();
        let km: Vec<&[f64]> = (0..3).map(|i| k.pixel(0, i)).collect();
        let vm: Vec<&[f64]> = (0..3).map(|i| v.pixel(0, i)).collect();
        let mut expected = vec![0.0; 12];
        for i in 0..3 {
            let scores: Vec<f64> = (0..3)
                .map(|j| (0..4).map(|c| qm[i][c] * km[j][c]).sum::<f64>() / 2.0)
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..4 {
                expected[i * 4 + c] = (0..3).map(|j| e[j] / z * vm[j][c]).sum();
            }
        }
        let out = attention_baseline(&q, &k, &v, 1).unwrap();
        assert!(max_abs_diff(out.values.data(), &expected) < 1e-14);
    }

    #[test]
    fn heads_must_divide_channels() {
        let q = random_batch(1, 3, 6, 1);
        assert!(attention_baseline(&q, &q, &q, 4).is_err());
        assert!(attention_baseline(&q, &q, &q, 0).is_err());
        let c = RaggedClusters::from_batch(&q);
        assert!(attention_clustered(&q, &c, &c, 4).is_err());
    }

    #[test]
    fn single_cluster_broadcasts_value() {
        let q = random_batch(2, 7, 4, 5);
        let k = RaggedClusters::new(4, vec![0.3; 8], vec![1, 1]).unwrap();
        let v = RaggedClusters::new(4, (0..8).map(f64::from).collect(), vec![1, 1]).unwrap();
        let out = attention_clustered(&q, &k, &v, 2).unwrap();
        for s in 0..2 {
            for i in 0..7 {
                assert_eq!(out.values.pixel(s, i), v.cluster(s, 0));
            }
        }
        assert_eq!(out.weight_elements, 2 * 7 * 2);
    }

    #[test]
    fn singleton_clusters_equal_baseline() {
        for seed in 0..10 {
            let q = random_batch(3, 12, 8, seed);
            let k = random_batch(3, 12, 8, seed + 100);
            let v = random_batch(3, 12, 8, seed + 200);
            let base = attention_baseline(&q, &k, &v, 2).unwrap();
            let clus = attention_clustered(
                &q,
                &RaggedClusters::from_batch(&k),
                &RaggedClusters::from_batch(&v),
                2,
            )
            .unwrap();
            assert!(max_abs_diff(base.values.data(), clus.values.data()) < 1e-10);
            assert_eq!(base.weight_elements, clus.weight_elements);
        }
    }

    #[test]
    fn padded_path_is_bit_equal_to_ragged_loop() {
        let q = random_batch(3, 9, 6, 4);
        let counts = vec![2, 5, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k: Vec<f64> = (0..8 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..8 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = RaggedClusters::new(6, k, counts.clone()).unwrap();
        let v = RaggedClusters::new(6, v, counts).unwrap();
        let out = attention_clustered(&q, &k, &v, 3).unwrap();
        assert_eq!(out.values.data(), ragged_loop_oracle(&q, &k, &v, 3).as_slice());
        assert_eq!(out.weight_elements, 3 * 9 * 8);
    }

    #[test]
    fn clustered_rejects_count_mismatch() {
        let q = random_batch(2, 4, 2, 1);
        let k = RaggedClusters::new(2, vec![0.0; 6], vec![1, 2]).unwrap();
        let v = RaggedClusters::new(2, vec![0.0; 6], vec![2, 1]).unwrap();
        assert!(attention_clustered(&q, &k, &v, 1).is_err());
    }

    #[test]
    fn clustered_backward_matches_finite_differences() {
        let (n, hw, d, heads) = (2, 5, 4, 2);
        let counts = vec![3, 2];
        let q = random_batch(n, hw, d, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let kf: Vec<f64> = (0..5 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vf: Vec<f64> = (0..5 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up = random_batch(n, hw, d, 43);
        let loss = |q: &[f64], k: &[f64], v: &[f64]| {
            let qb = FeatureBatch::new(n, hw, d, q.to_vec()).unwrap();
            let kc = RaggedClusters::new(d, k.to_vec(), counts.clone()).unwrap();
            let vc = RaggedClusters::new(d, v.to_vec(), counts.clone()).unwrap();
            dot(attention_clustered(&qb, &kc, &vc, heads).unwrap().values.data(), up.data())
        };
        let kc = RaggedClusters::new(d, kf.clone(), counts.clone()).unwrap();
        let vc = RaggedClusters::new(d, vf.clone(), counts.clone()).unwrap();
        let g = attention_clustered_backward(&q, &kc, &vc, heads, &up).unwrap();

        let fq = fd_gradient(|x| loss(x, &kf, &vf), q.data(), 1e-6).unwrap();
        let fk = fd_gradient(|x| loss(q.data(), x, &vf), &kf, 1e-6).unwrap();
        let fv = fd_gradient(|x| loss(q.data(), &kf, x), &vf, 1e-6).unwrap();
        assert!(max_relative_error(g.queries.data(), &fq, 1e-8) < 1e-4);
        assert!(max_relative_error(g.keys.features(), &fk, 1e-8) < 1e-4);
        assert!(max_relative_error(g.values.features(), &fv, 1e-8) < 1e-4);
    }

    #[test]
    fn positions_closed_form() {
        let pe = sinusoidal_positions(4, 4).unwrap();
        assert_eq!(&pe.data()[..4], &[0.0, 1.0, 0.0, 1.0]);
        for pos in 0..4 {
            let p = pos as f64;
            let expected = [p.sin(), p.cos(), (p / 100.0).sin(), (p / 100.0).cos()];
            for (j, e) in expected.iter().enumerate() {
                assert!((pe.data()[pos * 4 + j] - e).abs() < 1e-15);
            }
        }
        assert_eq!(pe, sinusoidal_positions(4, 4).unwrap());
    }

    #[test]
    fn positions_reject_odd_channels() {
        assert!(sinusoidal_positions(4, 3).is_err());
        assert!(sinusoidal_positions(0, 4).is_err());
    }
}
