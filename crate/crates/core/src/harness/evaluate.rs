//! Evaluation reports and the full train-then-evaluate pipeline.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{DataSource, RunConfig};
use super::train::{init_model, train_stage1, train_stage2, TrainLog};
use crate::data::{
    distribution_shift_subsample, few_shot_subsample, generate_synthetic, kfold_split, load_image_folder, Dataset,
};
use crate::encoders::BackboneRegistry;
use crate::error::{Error, Result};
use crate::metrics::{
    local_ordinality_score, mae_accuracy, ordinality_score, predict_rank, similarity_matrix, SimilarityMatrix,
};
use crate::model::RankModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mae: f64,
    pub accuracy: f64,
    pub os: f64,
    pub los: BTreeMap<usize, f64>,
    pub config_hash: String,
    pub seed: u64,
}

impl Report {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// OS and LOS of rank features for the configured windows.
pub fn ordinality(r: &ndarray::Array2<f64>, windows: &[usize]) -> Result<(f64, BTreeMap<usize, f64>, SimilarityMatrix)> {
    let sim = similarity_matrix(r);
    let os = ordinality_score(&sim)?;
    let mut los = BTreeMap::new();
    for &k in windows.iter().filter(|&&k| k >= 2 && k <= sim.size()) {
        los.insert(k, local_ordinality_score(&sim, k)?);
    }
    Ok((os, los, sim))
}

/// Scores `data` with the model's image encoder against the rank features
/// stored in `ckpt`.
pub fn evaluate_model(model: &RankModel, ckpt: &Checkpoint, data: &Dataset) -> Result<(Report, SimilarityMatrix)> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let cfg = &ckpt.config;
    let all: Vec<usize> = (0..data.len()).collect();
    let v = model.encode_images(data.image_matrix(&all).view(), cfg.train.eval_chunk)?;
    let preds = predict_rank(&v, &ckpt.rank_features);
    let (mae, accuracy) = mae_accuracy(&preds, &data.labels(), &data.label_values)?;
    let (os, los, sim) = ordinality(&ckpt.rank_features, &cfg.train.los_windows)?;
    Ok((Report { mae, accuracy, os, los, config_hash: ckpt.config_hash.clone(), seed: cfg.seed }, sim))
}

pub fn evaluate(ckpt: &Checkpoint, data: &Dataset, registry: &BackboneRegistry) -> Result<(Report, SimilarityMatrix)> {
    let model = ckpt.restore(registry)?;
    evaluate_model(&model, ckpt, data)
}

/// Loads or generates the data and applies the configured protocol,
/// returning `(train, test)`.
pub fn prepare_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (full, split, split_seed) = match &cfg.data.source {
        DataSource::Synthetic { spec, noise_sigma } => {
            (generate_synthetic(spec, *noise_sigma, spec.seed)?, spec.split, spec.seed)
        }
        DataSource::Folder { root, labels, label_values, size, split, split_seed } => {
            (load_image_folder(root, labels, label_values, *size)?, *split, *split_seed)
        }
    };
    let protocol = &cfg.data.protocol;
    let (mut train, test) = match protocol.kfold {
        Some(kf) => kfold_split(&full, kf.k, kf.fold, split_seed)?,
        None => {
            let (train, _, test) = full.split(split, split_seed);
            (train, test)
        }
    };
    if let Some(k) = protocol.few_shot {
        train = few_shot_subsample(&train, k, cfg.seed);
    }
    if let Some(shift) = protocol.shift {
        train = distribution_shift_subsample(&train, shift.reduced_classes, shift.reduced_percent, cfg.seed)?;
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!("split left {} train / {} test samples", train.len(), test.len())));
    }
    Ok((train, test))
}

/// Which stages a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stages {
    One,
    Two,
    Both,
}

pub struct RunOutcome {
    /// OS of the untrained templates.
    pub initial_os: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub report: Report,
    pub similarity: SimilarityMatrix,
    pub log: TrainLog,
}

/// Untrained checkpoint (stage 0) of the model for `cfg`.
pub fn initial_checkpoint(cfg: &RunConfig, image_dim: usize, registry: &BackboneRegistry) -> Result<(RankModel, Checkpoint)> {
    let model = init_model(cfg, image_dim, registry)?;
    let r = model.text_features()?;
    let ckpt = Checkpoint::capture(&model, cfg, 0, r, image_dim, ChaCha8Rng::seed_from_u64(cfg.seed));
    Ok((model, ckpt))
}

/// Trains both stages from scratch and evaluates on the test split.
pub fn run(cfg: &RunConfig, registry: &BackboneRegistry) -> Result<RunOutcome> {
    let (train, test) = prepare_data(cfg)?;
    let (mut model, init) = initial_checkpoint(cfg, train.image_dim(), registry)?;
    let (initial_os, _, _) = ordinality(&init.rank_features, &[])?;
    let mut log = TrainLog::default();
    let c1 = train_stage1(&mut model, &train, cfg, &mut log)?;
    let (model, c2) = train_stage2(&c1, &train, cfg, registry, &mut log)?;
    let (report, similarity) = evaluate_model(&model, &c2, &test)?;
    Ok(RunOutcome { initial_os, checkpoints: vec![c1, c2], report, similarity, log })
}

/// Runs the selected stages, resuming stage 2 from `resume` when given.
pub fn run_stages(
    cfg: &RunConfig,
    registry: &BackboneRegistry,
    stages: Stages,
    resume: Option<Checkpoint>,
) -> Result<RunOutcome> {
    if stages == Stages::Both && resume.is_none() {
        return run(cfg, registry);
    }
    let (train, test) = prepare_data(cfg)?;
    let (mut model, init) = initial_checkpoint(cfg, train.image_dim(), registry)?;
    let (initial_os, _, _) = ordinality(&init.rank_features, &[])?;
    let mut log = TrainLog::default();
    let mut checkpoints = Vec::new();
    let stage1 = match (stages, resume) {
        (Stages::Two, Some(c)) | (Stages::Both, Some(c)) => c,
        (Stages::Two, None) => return Err(Error::Config("stage 2 needs a stage-1 checkpoint".into())),
        _ => {
            let c = train_stage1(&mut model, &train, cfg, &mut log)?;
            checkpoints.push(c.clone());
            c
        }
    };
    let (model, last) = if stages == Stages::One {
        (model, stage1)
    } else {
        let (m, c2) = train_stage2(&stage1, &train, cfg, registry, &mut log)?;
        checkpoints.push(c2.clone());
        (m, c2)
    };
    let (report, similarity) = evaluate_model(&model, &last, &test)?;
    Ok(RunOutcome { initial_os, checkpoints, report, similarity, log })
}
