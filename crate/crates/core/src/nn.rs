//! Small dense building blocks with hand-written backward passes.
//!
//! Everything works on row-major `Array2<f64>` where each row is one item
//! (a token, a sample). Backward functions take the upstream gradient and
//! whatever forward state they need, and return input/parameter gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub fn gelu_map(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(gelu)
}

/// `grad ⊙ gelu'(pre)`.
pub fn gelu_backward(pre: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
    let mut out = grad.clone();
    out.zip_mut_with(pre, |g, &x| *g *= gelu_grad(x));
    out
}

/// Gaussian matrix with the given standard deviation.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

/// Affine map `y = x W + b` with `W: in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Fan-in scaled Gaussian weights, zero bias.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: gaussian(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt()),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Returns `(dx, grads)`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: &Array2<f64>) -> (Array2<f64>, Linear) {
        let dx = dy.dot(&self.weight.t());
        let grads = Linear { weight: x.t().dot(dy), bias: dy.sum_axis(Axis(0)) };
        (dx, grads)
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        vec![self.weight.as_slice().expect("standard layout"), self.bias.as_slice().expect("standard layout")]
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Row-wise layer norm with learnable gain and shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub shift: Array1<f64>,
    pub eps: f64,
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normed: Array2<f64>,
    pub inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm { gain: Array1::ones(dim), shift: Array1::zeros(dim), eps: 1e-5 }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, LayerNormCache) {
        let dim = x.ncols() as f64;
        let mut normed = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in normed.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / dim;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / dim;
            *s = 1.0 / (var + self.eps).sqrt();
            let k = *s;
            row.mapv_inplace(|v| v * k);
        }
        let y = &normed * &self.gain + &self.shift;
        (y, LayerNormCache { normed, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>) -> (Array2<f64>, LayerNorm) {
        let dim = dy.ncols() as f64;
        let grads = LayerNorm {
            gain: (dy * &cache.normed).sum_axis(Axis(0)),
            shift: dy.sum_axis(Axis(0)),
            eps: self.eps,
        };
        let dnormed = dy * &self.gain;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (i, mut out) in dx.rows_mut().into_iter().enumerate() {
            let g = dnormed.row(i);
            let xh = cache.normed.row(i);
            let mean_g = g.sum() / dim;
            let mean_gx = g.dot(&xh) / dim;
            let s = cache.inv_std[i];
            for k in 0..out.len() {
                out[k] = s * (g[k] - mean_g - xh[k] * mean_gx);
            }
        }
        (dx, grads)
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        vec![self.gain.as_slice().expect("standard layout"), self.shift.as_slice().expect("standard layout")]
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.gain.as_slice_mut().expect("standard layout"),
            self.shift.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Gradient through a row-wise softmax given its output `probs`.
pub fn softmax_rows_backward(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((p, dp), mut o) in probs.rows().into_iter().zip(dprobs.rows()).zip(out.rows_mut()) {
        let inner = p.dot(&dp);
        for k in 0..o.len() {
            o[k] = p[k] * (dp[k] - inner);
        }
    }
    out
}

/// log Σ exp over a slice.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -1.2, -0.1, 0.0, 0.3, 1.7, 4.0] {
            assert!((gelu_grad(x) - fd(gelu, x)).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ln = LayerNorm::new(5);
        ln.gain = gaussian(&mut rng, 1, 5, 1.0).row(0).to_owned();
        ln.shift = gaussian(&mut rng, 1, 5, 1.0).row(0).to_owned();
        let x = gaussian(&mut rng, 3, 5, 1.0);
        let w = gaussian(&mut rng, 3, 5, 1.0);
        let loss = |x: &Array2<f64>| (ln.forward(x.view()).0 * &w).sum();
        let (_, cache) = ln.forward(x.view());
        let (dx, _) = ln.backward(&cache, &w);
        let h = 1e-6;
        for i in 0..3 {
            for k in 0..5 {
                let mut xp = x.clone();
                xp[[i, k]] += h;
                let mut xm = x.clone();
                xm[[i, k]] -= h;
                let num = (loss(&xp) - loss(&xm)) / (2.0 * h);
                assert!((num - dx[[i, k]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = ndarray::array![[1000.0, 1001.0, 999.0], [-5.0, 0.0, 5.0]];
        let p = softmax_rows(&x);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
