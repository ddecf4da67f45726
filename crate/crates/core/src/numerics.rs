//! Dense arrays, the stable softmax, parameter initialization and the
//! central-difference gradient oracle.
//!
//! Everything here is `f64` and row-major. Constructors validate shape and
//! finiteness so downstream modules can index without re-checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, mismatch, EnactError, Result};

/// Row-major `f64` array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    /// Wraps `data` with `shape`. Fails if the element count disagrees or
    /// any entry is NaN/Inf.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(mismatch(
                format!("{expected} elements for shape {shape:?}"),
                data.len(),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(EnactError::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Rank-3 batch of pixel features, `n` samples x `hw` pixels x `d` channels.
///
/// Queries, Keys and Values all travel in this form.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    n: usize,
    hw: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureBatch {
    pub fn new(n: usize, hw: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || hw == 0 || d == 0 {
            return Err(invalid(format!(
                "feature batch extents must be positive, got {n}x{hw}x{d}"
            )));
        }
        let array = DenseArray::new(vec![n, hw, d], data)?;
        Ok(Self {
            n,
            hw,
            d,
            data: array.into_data(),
        })
    }

    pub fn zeros(n: usize, hw: usize, d: usize) -> Self {
        Self {
            n,
            hw,
            d,
            data: vec![0.0; n * hw * d],
        }
    }

    pub fn from_array(array: DenseArray) -> Result<Self> {
        match *array.shape() {
            [n, hw, d] => Self::new(n, hw, d, array.into_data()),
            _ => Err(mismatch("rank-3 array", format!("{:?}", array.shape()))),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hw(&self) -> usize {
        self.hw
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n, self.hw, self.d]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// All pixels of sample `n`, `hw * d` values.
    pub fn sample(&self, n: usize) -> &[f64] {
        let stride = self.hw * self.d;
        &self.data[n * stride..(n + 1) * stride]
    }

    /// Feature vector of pixel `i` in sample `n`.
    pub fn pixel(&self, n: usize, i: usize) -> &[f64] {
        let start = (n * self.hw + i) * self.d;
        &self.data[start..start + self.d]
    }

    pub fn pixel_mut(&mut self, n: usize, i: usize) -> &mut [f64] {
        let start = (n * self.hw + i) * self.d;
        &mut self.data[start..start + self.d]
    }

    pub(crate) fn check_same_shape(&self, other: &FeatureBatch) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(mismatch(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }

    /// Elementwise sum with another batch of identical shape.
    pub fn add(&self, other: &FeatureBatch) -> Result<FeatureBatch> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        FeatureBatch::new(self.n, self.hw, self.d, data)
    }

    /// Adds an `hw x d` table to every sample.
    pub fn add_per_sample(&self, table: &DenseArray) -> Result<FeatureBatch> {
        if table.shape() != [self.hw, self.d] {
            return Err(mismatch(
                format!("[{}, {}]", self.hw, self.d),
                format!("{:?}", table.shape()),
            ));
        }
        let per_sample = table.data();
        let data = self
            .data
            .chunks_exact(per_sample.len())
            .flat_map(|sample| sample.iter().zip(per_sample).map(|(a, b)| a + b))
            .collect();
        FeatureBatch::new(self.n, self.hw, self.d, data)
    }
}

/// Linear map from a `d`-channel pixel feature to one logit.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearHead {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("linear head needs at least one weight"));
        }
        if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
            return Err(EnactError::NonFinite { index });
        }
        if !bias.is_finite() {
            return Err(EnactError::NonFinite {
                index: weights.len(),
            });
        }
        Ok(Self { weights, bias })
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier(d: usize, seed: u64) -> Result<Self> {
        let weights = xavier_uniform_init(d, 1, seed)?.into_data();
        Ok(Self { weights, bias: 0.0 })
    }

    pub fn d(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, feature: &[f64]) -> f64 {
        dot(&self.weights, feature) + self.bias
    }

    pub(crate) fn check_channels(&self, d: usize) -> Result<()> {
        if self.weights.len() != d {
            return Err(mismatch(
                format!("head with {d} weights"),
                self.weights.len(),
            ));
        }
        Ok(())
    }
}

/// Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `fan_in x fan_out` matrix with entries i.i.d. uniform on
/// `[-bound, bound]`, reproducible from `seed`.
pub fn xavier_uniform_init(fan_in: usize, fan_out: usize, seed: u64) -> Result<DenseArray> {
    if fan_in == 0 || fan_out == 0 {
        return Err(invalid(format!(
            "xavier init needs positive fans, got fan_in={fan_in}, fan_out={fan_out}"
        )));
    }
    let bound = xavier_bound(fan_in, fan_out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    DenseArray::new(vec![fan_in, fan_out], data)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-shifted softmax. Masked-out entries (`mask[i] == false`) get exactly
/// zero weight; the remaining entries sum to one.
pub fn stable_softmax(values: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    if let Some(mask) = mask {
        if mask.len() != values.len() {
            return Err(mismatch(format!("mask of length {}", values.len()), mask.len()));
        }
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(EnactError::NonFinite { index });
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);

    let max = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| keep(i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(invalid("softmax over an empty or fully masked input"));
    }

    let mut out: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| if keep(i) { (v - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for w in &mut out {
        *w /= total;
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax: given `probs = softmax(z)` and
/// `upstream = dL/dprobs`, returns `dL/dz = probs * (upstream - <probs, upstream>)`.
pub fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    debug_assert_eq!(probs.len(), upstream.len());
    let inner = dot(probs, upstream);
    probs
        .iter()
        .zip(upstream)
        .map(|(p, g)| p * (g - inner))
        .collect()
}

/// Central-difference gradient `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn fd_gradient<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(EnactError::NonFinite { index: i });
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Entrywise relative error `|a - b| / max(|a|, |b|, floor)`, maximized over
/// all coordinates. `floor` keeps coordinates whose true gradient is zero
/// from dividing finite-difference noise by nothing.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    debug_assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}
