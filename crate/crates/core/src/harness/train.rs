//! Two-stage training loop with per-step logging.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::mpsc::sync_channel;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{deterministic_env, RunConfig};
use crate::data::Dataset;
use crate::encoders::BackboneRegistry;
use crate::error::{Error, Result};
use crate::losses::{stage_loss, EncodedBatch, Stage};
use crate::model::RankModel;
use crate::optim::Adam;

/// One record per optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub stage: u8,
    pub epoch: usize,
    pub lr_visual: f64,
    /// Text-side rates; absent in stage 2 where the text side is frozen.
    pub lr_rankformer: Option<f64>,
    pub lr_context: Option<f64>,
    /// Unweighted value of every active loss term.
    pub terms: BTreeMap<String, f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    /// Mean total loss per epoch of `stage`.
    pub fn epoch_means(&self, stage: u8) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.stage == stage) {
            let e = sums.entry(r.epoch).or_default();
            e.0 += r.total;
            e.1 += 1;
        }
        sums.values().map(|(s, n)| s / *n as f64).collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Builds the model for `cfg` with parameters drawn from `cfg.seed`.
pub fn init_model(cfg: &RunConfig, image_dim: usize, registry: &BackboneRegistry) -> Result<RankModel> {
    cfg.validate()?;
    RankModel::build(
        &cfg.task_descriptor()?,
        &cfg.backbone,
        &cfg.model,
        cfg.train.ablation.rankformer(),
        image_dim,
        registry,
        cfg.seed,
    )
}

struct Batch {
    images: Array2<f64>,
    labels: Vec<usize>,
}

/// Shuffled batch order and flip draws for one epoch.
fn epoch_plan(data: &Dataset, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<usize>, Vec<bool>)> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|idx| {
            let flips = idx.iter().map(|_| data.augment_flip && rng.random_bool(0.5)).collect();
            (idx.to_vec(), flips)
        })
        .collect()
}

fn assemble(data: &Dataset, idx: &[usize], flips: &[bool]) -> Batch {
    let mut images = Array2::zeros((idx.len(), data.image_dim()));
    for (row, (&i, &flip)) in idx.iter().zip(flips).enumerate() {
        let img = &data.samples[i].image;
        if flip {
            images.row_mut(row).assign(&ndarray::ArrayView1::from(&img.flipped_horizontal().pixels));
        } else {
            images.row_mut(row).assign(&ndarray::ArrayView1::from(&img.pixels));
        }
    }
    Batch { images, labels: idx.iter().map(|&i| data.samples[i].rank_index).collect() }
}

/// Runs `step` on every planned batch, assembling batches on a helper
/// thread unless `inline` is set.
fn for_each_batch(
    data: &Dataset,
    plan: Vec<(Vec<usize>, Vec<bool>)>,
    inline: bool,
    mut step: impl FnMut(Batch) -> Result<()>,
) -> Result<()> {
    if inline {
        for (idx, flips) in &plan {
            step(assemble(data, idx, flips))?;
        }
        return Ok(());
    }
    std::thread::scope(|scope| {
        let (tx, rx) = sync_channel(2);
        scope.spawn(move || {
            for (idx, flips) in &plan {
                if tx.send(assemble(data, idx, flips)).is_err() {
                    break;
                }
            }
        });
        for batch in rx {
            step(batch)?;
        }
        Ok(())
    })
}

fn check_total(total: f64, step: u64, stage: Stage) -> Result<()> {
    if total.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step: step as usize, stage: stage.number(), value: total })
    }
}

fn terms_map(terms: &[(&str, f64)]) -> BTreeMap<String, f64> {
    terms.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn check_data(data: &Dataset, model: &RankModel) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if data.num_ranks() != model.num_ranks() {
        return Err(Error::Shape(format!("dataset has {} ranks, model {}", data.num_ranks(), model.num_ranks())));
    }
    Ok(())
}

/// Stage 1: trains the RankFormer, context prompts and image encoder on the
/// weighted contrastive and ordinal objective.
pub fn train_stage1(model: &mut RankModel, data: &Dataset, cfg: &RunConfig, log: &mut TrainLog) -> Result<Checkpoint> {
    cfg.validate()?;
    check_data(data, model)?;
    let t = &cfg.train;
    let loss_cfg = t.effective_loss();
    let inline = cfg.deterministic || deterministic_env();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5354_4147_4531);
    let (mut opt_rf, mut opt_ctx, mut opt_img) = (Adam::default(), Adam::default(), Adam::default());
    let mut step = log.records.len() as u64;
    let (lr_rf, lr_ctx) = (t.lr_rankformer, t.lr_context());
    for epoch in 0..t.stage1_epochs {
        let plan = epoch_plan(data, t.batch_size, &mut rng);
        for_each_batch(data, plan, inline, |batch| {
            let pass = model.text_forward()?;
            let (v, norms) = model.image_forward(batch.images.view())?;
            let enc = EncodedBatch::new(v, pass.features.clone(), batch.labels)?;
            let loss = stage_loss(Stage::One, &enc, &loss_cfg)?;
            check_total(loss.total, step, Stage::One)?;
            let tg = model.text_backward(&pass, &loss.grad_r);
            let ig = model.image_backward(batch.images.view(), &enc.v, &norms, &loss.grad_v);
            if let (Some(p), Some(g)) = (model.rankformer.as_mut(), &tg.rankformer) {
                opt_rf.step(p.slices_mut(), &g.slices(), lr_rf);
            }
            if !model.context.is_empty() {
                let g = tg.context.as_slice().expect("contiguous");
                opt_ctx.step(vec![model.context.values.as_slice_mut().expect("contiguous")], &[g], lr_ctx);
            }
            if model.backbone.image.trainable() {
                opt_img.step(model.backbone.image.slices_mut(), &ig, t.lr_visual);
            }
            log.records.push(LogRecord {
                step,
                stage: 1,
                epoch,
                lr_visual: t.lr_visual,
                lr_rankformer: model.rankformer.as_ref().map(|_| lr_rf),
                lr_context: Some(lr_ctx),
                terms: terms_map(&loss.terms),
                total: loss.total,
            });
            step += 1;
            Ok(())
        })?;
    }
    let r = model.text_features()?;
    Ok(Checkpoint::capture(model, cfg, 1, r, data.image_dim(), rng))
}

/// Stage 2: the text side is frozen and its features are read from the
/// checkpoint; only the image encoder trains, under CE and the simplified
/// ordinal term.
pub fn train_stage2(
    ckpt: &Checkpoint,
    data: &Dataset,
    cfg: &RunConfig,
    registry: &BackboneRegistry,
    log: &mut TrainLog,
) -> Result<(RankModel, Checkpoint)> {
    cfg.validate()?;
    let mut model = ckpt.restore(registry)?;
    check_data(data, &model)?;
    let t = &cfg.train;
    let loss_cfg = t.effective_loss();
    let inline = cfg.deterministic || deterministic_env();
    let mut rng = ckpt.rng.clone();
    let mut opt = Adam::default();
    let r = ckpt.rank_features.clone();
    let mut step = log.records.len() as u64;
    for epoch in 0..t.stage2_epochs {
        let lr = t.stage2_lr(epoch);
        let plan = epoch_plan(data, t.batch_size, &mut rng);
        for_each_batch(data, plan, inline, |batch| {
            let (v, norms) = model.image_forward(batch.images.view())?;
            let enc = EncodedBatch::new(v, r.clone(), batch.labels)?;
            let loss = stage_loss(Stage::Two, &enc, &loss_cfg)?;
            check_total(loss.total, step, Stage::Two)?;
            if model.backbone.image.trainable() {
                let ig = model.image_backward(batch.images.view(), &enc.v, &norms, &loss.grad_v);
                opt.step(model.backbone.image.slices_mut(), &ig, lr);
            }
            log.records.push(LogRecord {
                step,
                stage: 2,
                epoch,
                lr_visual: lr,
                lr_rankformer: None,
                lr_context: None,
                terms: terms_map(&loss.terms),
                total: loss.total,
            });
            step += 1;
            Ok(())
        })?;
    }
    let out = Checkpoint::capture(&model, cfg, 2, r, data.image_dim(), rng);
    Ok((model, out))
}
