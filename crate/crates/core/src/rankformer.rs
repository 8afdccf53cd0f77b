//! Token-wise attention over the rank templates with residual-style blending:
//!
//! ```text
//! R' = (1 - alpha) * R + alpha * FFN(MSA(LN(R)))
//! ```
//!
//! Attention runs along the template axis: for every rank-token position `k`
//! the `M` embeddings `R[:, k, :]` attend to each other, so each refined rank
//! token sees the complete set of ranks. No positional encoding is added,
//! which makes the block permutation-equivariant over templates.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gelu_backward, gelu_map, softmax_rows, softmax_rows_backward, LayerNorm, LayerNormCache, Linear};
use crate::prompt_space::RankTokenEmbeddings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankFormerParams {
    /// Residual ratio in `[0, 1]`.
    pub alpha: f64,
    pub heads: usize,
    pub ln: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl RankFormerParams {
    pub const DEFAULT_HEADS: usize = 8;
    pub const DEFAULT_ALPHA: f64 = 0.1;

    /// Fan-in scaled attention and FFN input weights; the FFN output
    /// projection starts at zero so the initial output is `(1 - alpha) R`.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_embed: usize, heads: usize, d_ff: usize, alpha: f64) -> Result<Self> {
        let p = RankFormerParams {
            alpha,
            heads,
            ln: LayerNorm::new(d_embed),
            query: Linear::init(rng, d_embed, d_embed),
            key: Linear::init(rng, d_embed, d_embed),
            value: Linear::init(rng, d_embed, d_embed),
            out: Linear::init(rng, d_embed, d_embed),
            ffn_in: Linear::init(rng, d_embed, d_ff),
            ffn_out: Linear::zeros(d_ff, d_embed),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn d_embed(&self) -> usize {
        self.ln.gain.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Invalid(format!("alpha = {} outside [0, 1]", self.alpha)));
        }
        let d = self.d_embed();
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::Invalid(format!("d_embed {d} not divisible by {} heads", self.heads)));
        }
        if self.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("rankformer parameters"));
        }
        Ok(())
    }

    /// Same-shaped container with every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.alpha = 0.0;
        for s in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }

    /// Trainable arrays in a fixed order. `alpha` is a hyperparameter and is
    /// not included.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.ln.slices();
        for l in [&self.query, &self.key, &self.value, &self.out, &self.ffn_in, &self.ffn_out] {
            v.extend(l.slices());
        }
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.ln.slices_mut();
        for l in [
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.out,
            &mut self.ffn_in,
            &mut self.ffn_out,
        ] {
            v.extend(l.slices_mut());
        }
        v
    }

    fn add_assign(&mut self, other: &RankFormerParams) {
        self.alpha += other.alpha;
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Forward state for one rank-token position.
#[derive(Debug, Clone)]
struct PositionCache {
    input: Array2<f64>,
    ln_out: Array2<f64>,
    ln: LayerNormCache,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    mixed: Array2<f64>,
    msa_out: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
    ffn_out: Array2<f64>,
}

/// Everything `refine_backward` needs.
#[derive(Debug, Clone)]
pub struct RefineCache {
    positions: Vec<PositionCache>,
}

fn check_input(r: &RankTokenEmbeddings, params: &RankFormerParams) -> Result<()> {
    let (_, _, d) = r.shape();
    if d != params.d_embed() {
        return Err(Error::Shape(format!("rank tokens d_embed {d} != rankformer {}", params.d_embed())));
    }
    if r.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rank token embeddings"));
    }
    params.validate()
}

fn forward_position(x: ArrayView2<f64>, p: &RankFormerParams) -> PositionCache {
    let (ln_out, ln) = p.ln.forward(x);
    let q = p.query.forward(ln_out.view());
    let k = p.key.forward(ln_out.view());
    let v = p.value.forward(ln_out.view());
    let dh = p.d_embed() / p.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut mixed = Array2::zeros(q.raw_dim());
    let mut attn = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        let a = softmax_rows(&scores);
        mixed.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        attn.push(a);
    }
    let msa_out = p.out.forward(mixed.view());
    let hidden_pre = p.ffn_in.forward(msa_out.view());
    let hidden = gelu_map(&hidden_pre);
    let ffn_out = p.ffn_out.forward(hidden.view());
    PositionCache { input: x.to_owned(), ln_out, ln, q, k, v, attn, mixed, msa_out, hidden_pre, hidden, ffn_out }
}

/// Refines rank-token embeddings; returns the output and the cache for backward.
pub fn refine_with_cache(r: &RankTokenEmbeddings, params: &RankFormerParams) -> Result<(RankTokenEmbeddings, RefineCache)> {
    check_input(r, params)?;
    let (m, n, d) = r.shape();
    let mut out = Array3::zeros((m, n, d));
    let mut positions = Vec::with_capacity(n);
    let a = params.alpha;
    for k in 0..n {
        let x = r.values.slice(s![.., k, ..]);
        let cache = forward_position(x, params);
        let blended = &x * (1.0 - a) + &cache.ffn_out * a;
        out.slice_mut(s![.., k, ..]).assign(&blended);
        positions.push(cache);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rankformer output"));
    }
    Ok((RankTokenEmbeddings { values: out }, RefineCache { positions }))
}

pub fn refine(r: &RankTokenEmbeddings, params: &RankFormerParams) -> Result<RankTokenEmbeddings> {
    if params.alpha == 0.0 {
        // (1 - 0) * R + 0 * F is R exactly for finite F; skip the block.
        check_input(r, params)?;
        return Ok(r.clone());
    }
    refine_with_cache(r, params).map(|(out, _)| out)
}

/// Gradients of a scalar with respect to the input rank tokens and every
/// parameter (including `alpha`), given `d out`.
pub fn refine_backward(
    params: &RankFormerParams,
    cache: &RefineCache,
    grad_out: &Array3<f64>,
) -> (Array3<f64>, RankFormerParams) {
    let a = params.alpha;
    let dh = params.d_embed() / params.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dinput = Array3::zeros(grad_out.raw_dim());
    let mut grads = params.zeros_like();
    for (k, pc) in cache.positions.iter().enumerate() {
        let dout = grad_out.index_axis(Axis(1), k).to_owned();
        let mut step = params.zeros_like();
        step.alpha = ((&pc.ffn_out - &pc.input) * &dout).sum();

        let dffn = &dout * a;
        let (dhidden, g_ffn_out) = params.ffn_out.backward(pc.hidden.view(), &dffn);
        let dhidden_pre = gelu_backward(&pc.hidden_pre, &dhidden);
        let (dmsa, g_ffn_in) = params.ffn_in.backward(pc.msa_out.view(), &dhidden_pre);
        let (dmixed, g_out) = params.out.backward(pc.mixed.view(), &dmsa);

        let mut dq = Array2::zeros(pc.q.raw_dim());
        let mut dk = Array2::zeros(pc.k.raw_dim());
        let mut dv = Array2::zeros(pc.v.raw_dim());
        for (h, attn) in pc.attn.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dmix_h = dmixed.slice(cols);
            let dattn = dmix_h.dot(&pc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&attn.t().dot(&dmix_h));
            let dscores = softmax_rows_backward(attn, &dattn) * scale;
            dq.slice_mut(cols).assign(&dscores.dot(&pc.k.slice(cols)));
            dk.slice_mut(cols).assign(&dscores.t().dot(&pc.q.slice(cols)));
        }
        let (dln_q, g_q) = params.query.backward(pc.ln_out.view(), &dq);
        let (dln_k, g_k) = params.key.backward(pc.ln_out.view(), &dk);
        let (dln_v, g_v) = params.value.backward(pc.ln_out.view(), &dv);
        let dln = dln_q + dln_k + dln_v;
        let (dx_ln, g_ln) = params.ln.backward(&pc.ln, &dln);

        let dx = dx_ln + &dout * (1.0 - a);
        dinput.index_axis_mut(Axis(1), k).assign(&dx);

        step.ln = g_ln;
        step.query = g_q;
        step.key = g_k;
        step.value = g_v;
        step.out = g_out;
        step.ffn_in = g_ffn_in;
        step.ffn_out = g_ffn_out;
        grads.add_assign(&step);
    }
    (dinput, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gaussian;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(seed: u64, d: usize, heads: usize, alpha: f64) -> RankFormerParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = RankFormerParams::init(&mut rng, d, heads, 2 * d, alpha).unwrap();
        p.ffn_out = Linear::init(&mut rng, 2 * d, d);
        p.ln.gain = p.ln.gain.mapv(|g| g + 0.1);
        p
    }

    fn tokens(seed: u64, m: usize, n: usize, d: usize) -> RankTokenEmbeddings {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat = gaussian(&mut rng, m * n, d, 1.0);
        RankTokenEmbeddings { values: flat.into_shape_with_order((m, n, d)).unwrap() }
    }

    #[test]
    fn alpha_zero_is_identity() {
        let p = random_params(1, 8, 2, 0.0);
        let r = tokens(2, 5, 2, 8);
        assert_eq!(refine(&r, &p).unwrap(), r);
        // the full path agrees as well
        assert_eq!(refine_with_cache(&r, &p).unwrap().0, r);
    }

    #[test]
    fn zero_ffn_output_scales_input() {
        let mut p = random_params(3, 8, 4, 0.3);
        p.ffn_out = Linear::zeros(16, 8);
        let r = tokens(4, 6, 1, 8);
        let out = refine(&r, &p).unwrap();
        let expected = &r.values * 0.7;
        for (a, b) in out.values.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn default_init_starts_at_scaled_identity() {
        let p = RankFormerParams::init(&mut ChaCha8Rng::seed_from_u64(0), 16, 8, 64, 0.1).unwrap();
        let r = tokens(5, 4, 2, 16);
        let out = refine(&r, &p).unwrap();
        for (a, b) in out.values.iter().zip(r.values.iter()) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
    }

    /// Scalar re-derivation of the block for M=2, n=1, d=2, one head.
    #[test]
    fn matches_hand_computation() {
        let p = RankFormerParams {
            alpha: 0.25,
            heads: 1,
            ln: LayerNorm { gain: array![1.5, 0.5], shift: array![0.1, -0.2], eps: 1e-5 },
            query: Linear { weight: array![[0.3, -0.1], [0.2, 0.4]], bias: array![0.0, 0.1] },
            key: Linear { weight: array![[-0.2, 0.5], [0.1, 0.3]], bias: array![0.05, 0.0] },
            value: Linear { weight: array![[0.6, 0.1], [-0.3, 0.2]], bias: array![0.0, -0.1] },
            out: Linear { weight: array![[1.0, 0.2], [0.0, 0.7]], bias: array![0.0, 0.0] },
            ffn_in: Linear { weight: array![[0.5, -0.4], [0.3, 0.8]], bias: array![0.1, 0.0] },
            ffn_out: Linear { weight: array![[0.9, 0.1], [-0.2, 0.6]], bias: array![0.0, 0.05] },
        };
        let x = [[0.7, -1.1], [2.0, 0.4]];
        let r = RankTokenEmbeddings { values: Array3::from_shape_fn((2, 1, 2), |(i, _, k)| x[i][k]) };
        let out = refine(&r, &p).unwrap();

        let gelu = |z: f64| 0.5 * z * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z.powi(3))).tanh());
        let lin = |w: &[[f64; 2]; 2], b: [f64; 2], v: [f64; 2]| {
            [v[0] * w[0][0] + v[1] * w[1][0] + b[0], v[0] * w[0][1] + v[1] * w[1][1] + b[1]]
        };
        let mut y = [[0.0; 2]; 2];
        for i in 0..2 {
            let mean = (x[i][0] + x[i][1]) / 2.0;
            let var = ((x[i][0] - mean).powi(2) + (x[i][1] - mean).powi(2)) / 2.0;
            let sd = (var + 1e-5).sqrt();
            y[i] = [(x[i][0] - mean) / sd * 1.5 + 0.1, (x[i][1] - mean) / sd * 0.5 - 0.2];
        }
        let q: Vec<_> = y.iter().map(|v| lin(&[[0.3, -0.1], [0.2, 0.4]], [0.0, 0.1], *v)).collect();
        let k: Vec<_> = y.iter().map(|v| lin(&[[-0.2, 0.5], [0.1, 0.3]], [0.05, 0.0], *v)).collect();
        let v: Vec<_> = y.iter().map(|v| lin(&[[0.6, 0.1], [-0.3, 0.2]], [0.0, -0.1], *v)).collect();
        for i in 0..2 {
            let sc: Vec<f64> = (0..2)
                .map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / 2f64.sqrt())
                .collect();
            let e: Vec<f64> = sc.iter().map(|s| s.exp()).collect();
            let z = e[0] + e[1];
            let mix = [
                (e[0] * v[0][0] + e[1] * v[1][0]) / z,
                (e[0] * v[0][1] + e[1] * v[1][1]) / z,
            ];
            let o = lin(&[[1.0, 0.2], [0.0, 0.7]], [0.0, 0.0], mix);
            let h = lin(&[[0.5, -0.4], [0.3, 0.8]], [0.1, 0.0], o);
            let h = [gelu(h[0]), gelu(h[1])];
            let f = lin(&[[0.9, 0.1], [-0.2, 0.6]], [0.0, 0.05], h);
            for c in 0..2 {
                let expected = 0.75 * x[i][c] + 0.25 * f[c];
                assert!((out.values[[i, 0, c]] - expected).abs() < 1e-12, "({i},{c})");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = random_params(1, 8, 2, 0.5);
        assert!(matches!(refine(&tokens(1, 3, 1, 4), &p), Err(Error::Shape(_))));
        let mut r = tokens(1, 3, 1, 8);
        r.values[[0, 0, 0]] = f64::NAN;
        assert!(matches!(refine(&r, &p), Err(Error::NonFinite(_))));
        let mut bad = p.clone();
        bad.alpha = 1.5;
        assert!(refine(&tokens(1, 3, 1, 8), &bad).is_err());
        assert!(RankFormerParams::init(&mut ChaCha8Rng::seed_from_u64(0), 10, 4, 8, 0.1).is_err());
    }

    #[test]
    fn permutation_equivariant() {
        let p = random_params(9, 8, 2, 0.6);
        let r = tokens(10, 5, 2, 8);
        let perm = [3, 0, 4, 1, 2];
        let permuted = RankTokenEmbeddings { values: r.values.select(Axis(0), &perm) };
        let a = refine(&permuted, &p).unwrap().values;
        let b = refine(&r, &p).unwrap().values.select(Axis(0), &perm);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
