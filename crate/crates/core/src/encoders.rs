//! Text and image encoders mapping into a shared unit-norm feature space.
//!
//! The built-in toy backbone is small, deterministic given its seed and fully
//! differentiable. A real pretrained backbone plugs in through
//! [`BackboneRegistry`] by providing the same four pieces: tokenizer, text
//! encoder (with its word-embedding table), image encoder and `d_feat`.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gelu_backward, gelu_map, Linear};
use crate::prompt_space::{EmbeddingTable, Tokenizer, ToyTokenizer};

/// Norms at or below this are rejected by [`normalize`].
pub const EPS_NORM: f64 = 1e-12;

pub fn normalize(x: ArrayView1<f64>) -> Result<Array1<f64>> {
    let norm = x.dot(&x).sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("feature vector"));
    }
    if norm <= EPS_NORM {
        return Err(Error::ZeroFeature { norm });
    }
    Ok(x.mapv(|v| v / norm))
}

/// Normalizes every row; returns the unit rows and the original norms.
pub fn normalize_rows(x: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut out = x.clone();
    let mut norms = Array1::zeros(x.nrows());
    for (mut row, n) in out.rows_mut().into_iter().zip(norms.iter_mut()) {
        let unit = normalize(row.view())?;
        *n = row.dot(&row).sqrt();
        row.assign(&unit);
    }
    Ok((out, norms))
}

/// Gradient through row normalization: `(g - u (u·g)) / ||x||`.
pub fn normalize_rows_backward(unit: &Array2<f64>, norms: &Array1<f64>, grad: &Array2<f64>) -> Array2<f64> {
    let mut out = grad.clone();
    for ((mut o, u), &n) in out.rows_mut().into_iter().zip(unit.rows()).zip(norms.iter()) {
        let proj = u.dot(&o);
        o.zip_mut_with(&u, |g, &uk| *g = (*g - uk * proj) / n);
    }
    out
}

/// Encodes prompt token sequences into raw (unnormalized) features.
pub trait TextEncoder: Send + Sync {
    fn d_embed(&self) -> usize;
    fn d_feat(&self) -> usize;
    /// The word-embedding table prompts are built from.
    fn embeddings(&self) -> &EmbeddingTable;
    /// `prompts: M × T × d_embed` to `M × d_feat`.
    fn forward(&self, prompts: &Array3<f64>) -> Array2<f64>;
    /// Gradient with respect to the prompt embeddings.
    fn backward_input(&self, prompts: &Array3<f64>, grad: &Array2<f64>) -> Array3<f64>;
    fn trainable(&self) -> bool {
        false
    }
}

/// Encodes flattened images (`B × input_dim`) into raw features.
pub trait ImageEncoder: Send + Sync {
    fn input_dim(&self) -> usize;
    fn d_feat(&self) -> usize;
    fn forward(&self, images: ArrayView2<f64>) -> Array2<f64>;
    /// Parameter gradients, aligned with [`ImageEncoder::slices`].
    fn backward(&self, images: ArrayView2<f64>, grad: &Array2<f64>) -> Vec<Vec<f64>>;
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;
    fn trainable(&self) -> bool {
        true
    }
}

/// `M × d_feat` unit-norm rank features, one row per prompt.
pub fn encode_text(prompts: &Array3<f64>, enc: &dyn TextEncoder) -> Result<Array2<f64>> {
    let raw = enc.forward(prompts);
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("text features"));
    }
    normalize_rows(&raw).map(|(u, _)| u)
}

/// `B × d_feat` unit-norm image features.
pub fn encode_image(images: ArrayView2<f64>, enc: &dyn ImageEncoder) -> Result<Array2<f64>> {
    if images.ncols() != enc.input_dim() {
        return Err(Error::Shape(format!("image dim {} != encoder input {}", images.ncols(), enc.input_dim())));
    }
    let raw = enc.forward(images);
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image features"));
    }
    normalize_rows(&raw).map(|(u, _)| u)
}

/// Mean-pool over tokens, then affine + GELU, then a linear projection.
/// Frozen during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTextEncoder {
    pub table: EmbeddingTable,
    pub hidden: Linear,
    pub proj: Linear,
}

impl ToyTextEncoder {
    fn pool(prompts: &Array3<f64>) -> Array2<f64> {
        prompts.mean_axis(Axis(1)).expect("prompts have at least one token")
    }
}

impl TextEncoder for ToyTextEncoder {
    fn d_embed(&self) -> usize {
        self.hidden.in_dim()
    }

    fn d_feat(&self) -> usize {
        self.proj.out_dim()
    }

    fn embeddings(&self) -> &EmbeddingTable {
        &self.table
    }

    fn forward(&self, prompts: &Array3<f64>) -> Array2<f64> {
        let pooled = Self::pool(prompts);
        let h = gelu_map(&self.hidden.forward(pooled.view()));
        self.proj.forward(h.view())
    }

    fn backward_input(&self, prompts: &Array3<f64>, grad: &Array2<f64>) -> Array3<f64> {
        let pooled = Self::pool(prompts);
        let pre = self.hidden.forward(pooled.view());
        let h = gelu_map(&pre);
        let (dh, _) = self.proj.backward(h.view(), grad);
        let dpre = gelu_backward(&pre, &dh);
        let (dpool, _) = self.hidden.backward(pooled.view(), &dpre);
        let (m, t, d) = prompts.dim();
        let scale = 1.0 / t as f64;
        let mut out = Array3::zeros((m, t, d));
        for (mut slab, g) in out.outer_iter_mut().zip(dpool.rows()) {
            for mut tok in slab.rows_mut() {
                tok.assign(&(&g * scale));
            }
        }
        out
    }
}

/// Flatten, affine + GELU, affine to `d_feat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyImageEncoder {
    pub hidden: Linear,
    pub proj: Linear,
}

impl ImageEncoder for ToyImageEncoder {
    fn input_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    fn d_feat(&self) -> usize {
        self.proj.out_dim()
    }

    fn forward(&self, images: ArrayView2<f64>) -> Array2<f64> {
        let h = gelu_map(&self.hidden.forward(images));
        self.proj.forward(h.view())
    }

    fn backward(&self, images: ArrayView2<f64>, grad: &Array2<f64>) -> Vec<Vec<f64>> {
        let pre = self.hidden.forward(images);
        let h = gelu_map(&pre);
        let (dh, g_proj) = self.proj.backward(h.view(), grad);
        let dpre = gelu_backward(&pre, &dh);
        let g_hidden = Linear { weight: images.t().dot(&dpre), bias: dpre.sum_axis(Axis(0)) };
        g_hidden.slices().into_iter().chain(g_proj.slices()).map(<[f64]>::to_vec).collect()
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.hidden.slices();
        v.extend(self.proj.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.hidden.slices_mut();
        v.extend(self.proj.slices_mut());
        v
    }
}

/// Settings every backbone constructor receives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Registry key; `"toy"` is always available.
    pub name: String,
    pub d_embed: usize,
    pub d_feat: usize,
    pub text_hidden: usize,
    pub image_hidden: usize,
    /// Standard deviation of the toy word embeddings.
    pub embed_std: f64,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            name: "toy".into(),
            d_embed: 32,
            d_feat: 64,
            text_hidden: 64,
            image_hidden: 128,
            embed_std: 1.0,
            seed: 0,
        }
    }
}

pub struct Backbone {
    pub tokenizer: Box<dyn Tokenizer>,
    pub text: Box<dyn TextEncoder>,
    pub image: Box<dyn ImageEncoder>,
    pub d_feat: usize,
}

impl std::fmt::Debug for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backbone")
            .field("d_embed", &self.text.d_embed())
            .field("d_feat", &self.d_feat)
            .field("image_input", &self.image.input_dim())
            .finish()
    }
}

/// Constructor signature: config plus flattened image size.
pub type BackboneFactory = fn(&BackboneConfig, usize) -> Result<Backbone>;

/// Named backbone constructors.
#[derive(Clone)]
pub struct BackboneRegistry {
    entries: BTreeMap<String, BackboneFactory>,
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        let mut r = BackboneRegistry { entries: BTreeMap::new() };
        r.register("toy", toy_backbone);
        r
    }
}

impl BackboneRegistry {
    pub fn register(&mut self, name: &str, factory: BackboneFactory) {
        self.entries.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn load(&self, cfg: &BackboneConfig, image_dim: usize) -> Result<Backbone> {
        let factory = self.entries.get(&cfg.name).ok_or_else(|| Error::UnknownBackbone(cfg.name.clone()))?;
        let b = factory(cfg, image_dim)?;
        if b.text.d_feat() != b.d_feat || b.image.d_feat() != b.d_feat {
            return Err(Error::Shape(format!(
                "backbone `{}` feature dims disagree: text {}, image {}, declared {}",
                cfg.name,
                b.text.d_feat(),
                b.image.d_feat(),
                b.d_feat
            )));
        }
        Ok(b)
    }
}

/// Deterministic toy backbone seeded from `cfg.seed`.
pub fn toy_backbone(cfg: &BackboneConfig, image_dim: usize) -> Result<Backbone> {
    if cfg.d_embed == 0 || cfg.d_feat == 0 || image_dim == 0 {
        return Err(Error::Config("toy backbone dimensions must be positive".into()));
    }
    let tokenizer = ToyTokenizer::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let table = EmbeddingTable::random(&mut rng, tokenizer.vocab_size(), cfg.d_embed, cfg.embed_std);
    let text = ToyTextEncoder {
        table,
        hidden: Linear::init(&mut rng, cfg.d_embed, cfg.text_hidden),
        proj: Linear::init(&mut rng, cfg.text_hidden, cfg.d_feat),
    };
    let mut hidden = Linear::init(&mut rng, image_dim, cfg.image_hidden);
    // nonzero bias so a blank image still maps to a usable feature
    hidden.bias = crate::nn::gaussian(&mut rng, 1, cfg.image_hidden, 0.1).row(0).to_owned();
    let image = ToyImageEncoder { hidden, proj: Linear::init(&mut rng, cfg.image_hidden, cfg.d_feat) };
    Ok(Backbone { tokenizer: Box::new(tokenizer), text: Box::new(text), image: Box::new(image), d_feat: cfg.d_feat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalize_examples() {
        let u = normalize(array![3.0, 4.0].view()).unwrap();
        assert_eq!(u, array![0.6, 0.8]);
        let e = array![0.0, 1.0, 0.0];
        assert_eq!(normalize(e.view()).unwrap(), e);
        assert!(matches!(normalize(array![0.0, 0.0].view()), Err(Error::ZeroFeature { .. })));
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let x = array![[0.3, -1.2, 0.5], [2.0, 0.1, -0.4]];
        let w = array![[0.7, 0.2, -0.9], [0.1, -0.5, 0.3]];
        let f = |x: &Array2<f64>| (normalize_rows(x).unwrap().0 * &w).sum();
        let (u, n) = normalize_rows(&x).unwrap();
        let g = normalize_rows_backward(&u, &n, &w);
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..3 {
                let mut p = x.clone();
                p[[i, k]] += h;
                let mut m = x.clone();
                m[[i, k]] -= h;
                assert!(((f(&p) - f(&m)) / (2.0 * h) - g[[i, k]]).abs() < 1e-8);
            }
        }
    }

    fn toy(image_dim: usize) -> Backbone {
        let cfg = BackboneConfig { d_embed: 8, d_feat: 6, text_hidden: 12, image_hidden: 10, ..Default::default() };
        BackboneRegistry::default().load(&cfg, image_dim).unwrap()
    }

    #[test]
    fn constant_sequence_pools_to_its_token() {
        let b = toy(4);
        let c = array![0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.4];
        let seq = Array3::from_shape_fn((1, 5, 8), |(_, _, k)| c[k]);
        let single = Array3::from_shape_fn((1, 1, 8), |(_, _, k)| c[k]);
        let a = encode_text(&seq, b.text.as_ref()).unwrap();
        let s = encode_text(&single, b.text.as_ref()).unwrap();
        for (x, y) in a.iter().zip(s.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.row(0).dot(&a.row(0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_sequences_give_identical_rows() {
        let b = toy(4);
        let seq = Array3::from_shape_fn((2, 3, 8), |(_, t, k)| (t * 8 + k) as f64 * 0.01);
        let f = encode_text(&seq, b.text.as_ref()).unwrap();
        assert_eq!(f.row(0), f.row(1));
    }

    #[test]
    fn zero_image_and_duplicates() {
        let b = toy(4);
        let zeros = Array2::zeros((1, 4));
        let f = encode_image(zeros.view(), b.image.as_ref()).unwrap();
        let at_zero = b.image.forward(zeros.view());
        assert_eq!(f.row(0), normalize(at_zero.row(0)).unwrap());
        let imgs = array![[0.2, 0.1, -0.3, 0.9], [0.2, 0.1, -0.3, 0.9]];
        let f = encode_image(imgs.view(), b.image.as_ref()).unwrap();
        assert_eq!(f.row(0), f.row(1));
    }

    #[test]
    fn wrong_image_dim_is_rejected() {
        let b = toy(4);
        assert!(matches!(encode_image(Array2::zeros((1, 3)).view(), b.image.as_ref()), Err(Error::Shape(_))));
    }

    #[test]
    fn unknown_backbone_is_a_config_time_error() {
        let cfg = BackboneConfig { name: "clip-vit-b16".into(), ..Default::default() };
        assert!(matches!(BackboneRegistry::default().load(&cfg, 4), Err(Error::UnknownBackbone(_))));
    }

    #[test]
    fn image_backward_matches_finite_differences() {
        let mut b = toy(3);
        let x = array![[0.5, -0.3, 0.8], [0.1, 0.9, -0.2]];
        let w = Array2::from_shape_fn((2, 6), |(i, k)| ((i * 6 + k) as f64 * 0.37).sin());
        let grads = b.image.backward(x.view(), &w);
        let h = 1e-6;
        for (s, g) in grads.iter().enumerate() {
            let len = b.image.slices()[s].len();
            for idx in (0..len).step_by(7) {
                b.image.slices_mut()[s][idx] += h;
                let fp = (b.image.forward(x.view()) * &w).sum();
                b.image.slices_mut()[s][idx] -= 2.0 * h;
                let fm = (b.image.forward(x.view()) * &w).sum();
                b.image.slices_mut()[s][idx] += h;
                assert!(((fp - fm) / (2.0 * h) - g[idx]).abs() < 1e-7);
            }
        }
    }
}
