//! Run configuration, read from JSON. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetSpec, SplitFractions};
use crate::encoders::BackboneConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::prompt_space::TaskDescriptor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub task: TaskConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Single-threaded batch assembly; also forced by `ORDINO_DETERMINISTIC=1`.
    #[serde(default)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Template with one `{slot}`, e.g. `"A photo of {age} years old face."`.
    pub template: String,
    /// Slot text per rank; defaults to the rank values.
    #[serde(default)]
    pub label_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        spec: DatasetSpec,
        #[serde(default = "default_noise")]
        noise_sigma: f64,
    },
    Folder {
        root: PathBuf,
        labels: PathBuf,
        label_values: Vec<f64>,
        #[serde(default = "default_size")]
        size: u32,
        #[serde(default)]
        split: SplitFractions,
        #[serde(default)]
        split_seed: u64,
    },
}

fn default_noise() -> f64 {
    0.5
}

fn default_size() -> u32 {
    224
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default)]
    pub protocol: Protocol,
}

/// Optional training-set protocols applied after the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    /// Keep this many training samples per class.
    #[serde(default)]
    pub few_shot: Option<usize>,
    #[serde(default)]
    pub shift: Option<ShiftProtocol>,
    /// Replace the fractional split with a stratified k-fold split.
    #[serde(default)]
    pub kfold: Option<KFoldProtocol>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftProtocol {
    pub reduced_classes: usize,
    pub reduced_percent: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KFoldProtocol {
    pub k: usize,
    pub fold: usize,
}

/// Component toggles for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub use_rankformer: bool,
    pub use_cop: bool,
    pub use_scop: bool,
    /// Context prompts with contrastive and cross-entropy terms only;
    /// overrides the three flags above.
    pub baseline_coop_mode: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { use_rankformer: true, use_cop: true, use_scop: true, baseline_coop_mode: false }
    }
}

impl Ablation {
    pub fn baseline() -> Self {
        Ablation { use_rankformer: false, use_cop: false, use_scop: false, baseline_coop_mode: true }
    }

    pub fn rankformer(&self) -> bool {
        self.use_rankformer && !self.baseline_coop_mode
    }

    pub fn cop(&self) -> bool {
        self.use_cop && !self.baseline_coop_mode
    }

    pub fn scop(&self) -> bool {
        self.use_scop && !self.baseline_coop_mode
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lr_rankformer: f64,
    pub lr_visual: f64,
    /// Context-prompt learning rate; the RankFormer rate when absent.
    pub lr_context: Option<f64>,
    /// Stage-2 epoch (0-based) from which the visual rate is decayed.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub ablation: Ablation,
    /// Window sizes reported as local ordinality (those larger than `M` are skipped).
    pub los_windows: Vec<usize>,
    /// Images per forward pass during evaluation.
    pub eval_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 20,
            stage2_epochs: 40,
            lr_rankformer: 3.5e-4,
            lr_visual: 1e-5,
            lr_context: None,
            decay_epoch: 30,
            decay_factor: 0.1,
            batch_size: 64,
            loss: LossConfig::default(),
            ablation: Ablation::default(),
            los_windows: vec![2, 4, 8, 16, 32],
            eval_chunk: 256,
        }
    }
}

impl TrainConfig {
    pub fn lr_context(&self) -> f64 {
        self.lr_context.unwrap_or(self.lr_rankformer)
    }

    /// The loss configuration with ablated terms switched off.
    pub fn effective_loss(&self) -> LossConfig {
        let mut loss = self.loss.clone();
        if !self.ablation.cop() {
            loss.stage1.cop = 0.0;
        }
        if !self.ablation.scop() {
            loss.stage2.scop = 0.0;
        }
        loss
    }

    /// Visual learning rate during stage-2 epoch `epoch`.
    pub fn stage2_lr(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.lr_visual * self.decay_factor
        } else {
            self.lr_visual
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lrs = [self.lr_rankformer, self.lr_visual, self.lr_context()];
        if lrs.iter().any(|lr| !(*lr > 0.0) || !lr.is_finite()) {
            return Err(Error::Config(format!("learning rates must be positive, got {lrs:?}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.decay_epoch > self.stage2_epochs {
            return Err(Error::Config(format!(
                "decay_epoch {} exceeds stage2_epochs {}",
                self.decay_epoch, self.stage2_epochs
            )));
        }
        if !(self.decay_factor > 0.0) {
            return Err(Error::Config("decay_factor must be positive".into()));
        }
        self.loss.validate()
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let DataSource::Synthetic { spec, noise_sigma } = &self.data.source {
            spec.validate()?;
            if !(*noise_sigma >= 0.0) {
                return Err(Error::Config(format!("noise_sigma {noise_sigma}")));
            }
        }
        Ok(())
    }

    /// Applies a named preset of stage loss weights.
    pub fn apply_preset(&mut self, preset: &str) -> Result<()> {
        match preset {
            "default" => {
                let d = LossConfig::default();
                self.train.loss.stage1 = d.stage1;
                self.train.loss.stage2 = d.stage2;
            }
            "morph" => self.train.loss = self.train.loss.clone().morph_weights(),
            other => return Err(Error::Config(format!("unknown preset `{other}` (expected morph or default)"))),
        }
        Ok(())
    }

    /// Short SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn label_values(&self) -> &[f64] {
        match &self.data.source {
            DataSource::Synthetic { spec, .. } => &spec.label_values,
            DataSource::Folder { label_values, .. } => label_values,
        }
    }

    /// Rank values are used as integer ranks when they are all whole
    /// numbers; otherwise ranks are the positions `0..M`.
    pub fn task_descriptor(&self) -> Result<TaskDescriptor> {
        let values = self.label_values();
        let integral = values.iter().all(|v| v.fract() == 0.0 && v.abs() < 1e15);
        let rank_labels: Vec<i64> =
            if integral { values.iter().map(|v| *v as i64).collect() } else { (0..values.len() as i64).collect() };
        let label_names = match &self.task.label_names {
            Some(names) => names.clone(),
            None => values.iter().map(|v| if integral { format!("{}", *v as i64) } else { format!("{v}") }).collect(),
        };
        if label_names.len() != values.len() {
            return Err(Error::Config(format!("{} label names for {} ranks", label_names.len(), values.len())));
        }
        Ok(TaskDescriptor { template: self.task.template.clone(), label_names, rank_labels })
    }
}

/// True when `ORDINO_DETERMINISTIC=1`.
pub fn deterministic_env() -> bool {
    std::env::var("ORDINO_DETERMINISTIC").is_ok_and(|v| v == "1")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "task": {"template": "rank {r}"},
        "data": {"source": {"kind": "synthetic", "spec": {"label_values": [1, 2, 3], "counts": [4, 4, 4]}}}
    }"#;

    #[test]
    fn minimal_config_uses_paper_defaults() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.train.stage1_epochs, 20);
        assert_eq!(cfg.train.stage2_epochs, 40);
        assert_eq!(cfg.train.lr_rankformer, 3.5e-4);
        assert_eq!(cfg.train.lr_visual, 1e-5);
        assert_eq!(cfg.train.lr_context(), 3.5e-4);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.model.context_len, 5);
        assert_eq!(cfg.train.stage2_lr(29), 1e-5);
        assert!((cfg.train.stage2_lr(30) - 1e-6).abs() < 1e-20);
        let task = cfg.task_descriptor().unwrap();
        assert_eq!(task.label_names, ["1", "2", "3"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = MINIMAL.replace("\"task\"", "\"seeed\": 3, \"task\"");
        assert!(matches!(RunConfig::from_json(&typo), Err(Error::Config(_))));
        let nested = MINIMAL.replace("\"template\"", "\"tempalte\"");
        assert!(RunConfig::from_json(&nested).is_err());
    }

    #[test]
    fn presets() {
        let mut cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!((cfg.train.loss.stage1.t2i, cfg.train.loss.stage1.i2t, cfg.train.loss.stage1.cop), (0.1, 0.1, 3.0));
        cfg.apply_preset("morph").unwrap();
        assert_eq!((cfg.train.loss.stage1.t2i, cfg.train.loss.stage1.i2t, cfg.train.loss.stage1.cop), (0.03, 0.03, 3.0));
        assert_eq!((cfg.train.loss.stage2.ce, cfg.train.loss.stage2.scop), (1.0, 1.0));
        assert!(cfg.apply_preset("imagenet").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn baseline_mode_disables_ordinal_parts() {
        let mut t = TrainConfig::default();
        t.ablation.baseline_coop_mode = true;
        assert!(!t.ablation.rankformer());
        let loss = t.effective_loss();
        assert_eq!(loss.stage1.cop, 0.0);
        assert_eq!(loss.stage2.scop, 0.0);
        assert_eq!(loss.stage1.t2i, 0.1);
    }

    #[test]
    fn invalid_schedule() {
        let t = TrainConfig { decay_epoch: 50, ..Default::default() };
        assert!(t.validate().is_err());
        let t = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(t.validate().is_err());
    }
}
