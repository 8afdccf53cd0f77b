//! Versioned JSON checkpoints, written atomically.

use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::init_model;
use crate::encoders::BackboneRegistry;
use crate::error::{Error, Result};
use crate::model::RankModel;
use crate::rankformer::RankFormerParams;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// 0 for an untrained model, otherwise the last completed stage.
    pub stage: u8,
    pub config: RunConfig,
    pub config_hash: String,
    pub image_dim: usize,
    pub rankformer: Option<RankFormerParams>,
    pub context: Array2<f64>,
    pub image_params: Vec<Vec<f64>>,
    /// Unit-norm rank text features the model predicts with.
    pub rank_features: Array2<f64>,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn capture(
        model: &RankModel,
        cfg: &RunConfig,
        stage: u8,
        rank_features: Array2<f64>,
        image_dim: usize,
        rng: ChaCha8Rng,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            stage,
            config: cfg.clone(),
            config_hash: cfg.hash(),
            image_dim,
            rankformer: model.rankformer.clone(),
            context: model.context.values.clone(),
            image_params: model.backbone.image.slices().into_iter().map(<[f64]>::to_vec).collect(),
            rank_features,
            rng,
        }
    }

    /// Rebuilds the model from the stored config, then loads the trained
    /// parameters over it.
    pub fn restore(&self, registry: &BackboneRegistry) -> Result<RankModel> {
        let mut model = init_model(&self.config, self.image_dim, registry)?;
        if model.rankformer.is_some() != self.rankformer.is_some() {
            return Err(Error::Invalid("checkpoint RankFormer presence disagrees with its config".into()));
        }
        model.rankformer = self.rankformer.clone();
        if model.context.values.dim() != self.context.dim() {
            return Err(Error::Shape(format!(
                "checkpoint context {:?}, model {:?}",
                self.context.dim(),
                model.context.values.dim()
            )));
        }
        model.context.values = self.context.clone();
        let slots = model.backbone.image.slices_mut();
        if slots.len() != self.image_params.len() {
            return Err(Error::Shape("image parameter group count differs".into()));
        }
        for (dst, src) in slots.into_iter().zip(&self.image_params) {
            if dst.len() != src.len() {
                return Err(Error::Shape("image parameter size differs".into()));
            }
            dst.copy_from_slice(src);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let json = serde_json::to_vec(self)?;
        std::fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "checkpoint version {} (this build reads {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        if ckpt.config_hash != ckpt.config.hash() {
            return Err(Error::Invalid("checkpoint config hash does not match its config".into()));
        }
        Ok(ckpt)
    }
}
