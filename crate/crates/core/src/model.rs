//! The assembled model: backbone, prompt scaffold, RankFormer and context
//! prompts, with forward and backward passes for both modalities.

use ndarray::{Array2, Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{normalize_rows, normalize_rows_backward, Backbone, BackboneConfig, BackboneRegistry};
use crate::error::{Error, Result};
use crate::prompt_space::{
    assemble_prompts, assemble_prompts_backward, build_templates, ContextPrompts, PromptScaffold, TaskDescriptor,
};
use crate::rankformer::{refine_backward, refine_with_cache, RankFormerParams, RefineCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of shared context prompts `L`.
    pub context_len: usize,
    pub alpha: f64,
    pub heads: usize,
    /// FFN width; `4 · d_embed` when absent.
    pub d_ff: Option<usize>,
    /// Longest allowed tokenized rank label.
    pub n_max: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            context_len: 5,
            alpha: RankFormerParams::DEFAULT_ALPHA,
            heads: RankFormerParams::DEFAULT_HEADS,
            d_ff: None,
            n_max: 8,
        }
    }
}

pub struct RankModel {
    pub backbone: Backbone,
    pub scaffold: PromptScaffold,
    /// `None` when the RankFormer is ablated; rank tokens are then used as is.
    pub rankformer: Option<RankFormerParams>,
    pub context: ContextPrompts,
}

/// Forward state of the text side.
pub struct TextPass {
    pub features: Array2<f64>,
    norms: ndarray::Array1<f64>,
    prompts: Array3<f64>,
    refine: Option<RefineCache>,
}

/// Gradients for the trainable text-side parameters.
pub struct TextGrads {
    pub rankformer: Option<RankFormerParams>,
    pub context: Array2<f64>,
}

impl RankModel {
    pub fn build(
        task: &TaskDescriptor,
        backbone_cfg: &BackboneConfig,
        model_cfg: &ModelConfig,
        use_rankformer: bool,
        image_dim: usize,
        registry: &BackboneRegistry,
        seed: u64,
    ) -> Result<Self> {
        let backbone = registry.load(backbone_cfg, image_dim)?;
        let set = build_templates(task, backbone.tokenizer.as_ref(), model_cfg.n_max)?;
        let scaffold = PromptScaffold::new(set, backbone.text.embeddings())?;
        let d = scaffold.d_embed();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rankformer = if use_rankformer {
            let d_ff = model_cfg.d_ff.unwrap_or(4 * d);
            Some(RankFormerParams::init(&mut rng, d, model_cfg.heads, d_ff, model_cfg.alpha)?)
        } else {
            None
        };
        let context = ContextPrompts::random(&mut rng, model_cfg.context_len, d);
        Ok(RankModel { backbone, scaffold, rankformer, context })
    }

    pub fn num_ranks(&self) -> usize {
        self.scaffold.set.num_ranks()
    }

    pub fn text_forward(&self) -> Result<TextPass> {
        let rank = self.scaffold.rank_tokens();
        let (refined, refine) = match &self.rankformer {
            Some(p) => {
                let (out, cache) = refine_with_cache(&rank, p)?;
                (out, Some(cache))
            }
            None => (rank, None),
        };
        let prompts = assemble_prompts(&self.context, &refined, &self.scaffold)?;
        let raw = self.backbone.text.forward(&prompts);
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("text features"));
        }
        let (features, norms) = normalize_rows(&raw)?;
        Ok(TextPass { features, norms, prompts, refine })
    }

    /// Unit-norm rank text features, `M × d_feat`.
    pub fn text_features(&self) -> Result<Array2<f64>> {
        self.text_forward().map(|p| p.features)
    }

    pub fn text_backward(&self, pass: &TextPass, grad: &Array2<f64>) -> TextGrads {
        let draw = normalize_rows_backward(&pass.features, &pass.norms, grad);
        let dprompts = self.backbone.text.backward_input(&pass.prompts, &draw);
        let (dctx, drefined) = assemble_prompts_backward(&dprompts, self.context.len(), &self.scaffold.set);
        let rankformer = match (&self.rankformer, &pass.refine) {
            (Some(p), Some(cache)) => Some(refine_backward(p, cache, &drefined).1),
            _ => None,
        };
        TextGrads { rankformer, context: dctx }
    }

    /// Unit-norm image features and the raw norms.
    pub fn image_forward(&self, images: ArrayView2<f64>) -> Result<(Array2<f64>, ndarray::Array1<f64>)> {
        if images.ncols() != self.backbone.image.input_dim() {
            return Err(Error::Shape(format!(
                "image dim {} != encoder input {}",
                images.ncols(),
                self.backbone.image.input_dim()
            )));
        }
        let raw = self.backbone.image.forward(images);
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image features"));
        }
        normalize_rows(&raw)
    }

    /// Image-encoder parameter gradients given `d loss / d unit features`.
    pub fn image_backward(
        &self,
        images: ArrayView2<f64>,
        unit: &Array2<f64>,
        norms: &ndarray::Array1<f64>,
        grad: &Array2<f64>,
    ) -> Vec<Vec<f64>> {
        let draw = normalize_rows_backward(unit, norms, grad);
        self.backbone.image.backward(images, &draw)
    }

    /// Image features in chunks, for evaluation.
    pub fn encode_images(&self, images: ArrayView2<f64>, chunk: usize) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((images.nrows(), self.backbone.d_feat));
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < images.nrows() {
            let end = (start + chunk).min(images.nrows());
            let (v, _) = self.image_forward(images.slice(ndarray::s![start..end, ..]))?;
            out.slice_mut(ndarray::s![start..end, ..]).assign(&v);
            start = end;
        }
        Ok(out)
    }
}
