//! Grid sweeps: one full two-stage run per cell and seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Ablation, RunConfig, ShiftProtocol};
use super::evaluate::run;
use crate::encoders::BackboneRegistry;
use crate::error::Result;

/// Shots per class in the few-shot protocol.
pub const FEW_SHOT_GRID: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepGrid {
    FewShot { shots: Vec<usize> },
    Shift { cells: Vec<ShiftProtocol> },
    Ablation { cells: Vec<Ablation> },
}

impl SweepGrid {
    pub fn kind(&self) -> &'static str {
        match self {
            SweepGrid::FewShot { .. } => "few_shot",
            SweepGrid::Shift { .. } => "shift",
            SweepGrid::Ablation { .. } => "ablation",
        }
    }

    pub fn few_shot() -> Self {
        SweepGrid::FewShot { shots: FEW_SHOT_GRID.to_vec() }
    }

    /// Reduced classes {10, 20, 30, 40} crossed with reduced share {80, 90}%.
    pub fn shift() -> Self {
        let cells = [10, 20, 30, 40]
            .into_iter()
            .flat_map(|c| [80, 90].map(|p| ShiftProtocol { reduced_classes: c, reduced_percent: p }))
            .collect();
        SweepGrid::Shift { cells }
    }

    /// The eight component combinations, from the contrastive-only
    /// baseline to the full model.
    pub fn ablation() -> Self {
        let on = |rf, cop, scop| Ablation { use_rankformer: rf, use_cop: cop, use_scop: scop, baseline_coop_mode: false };
        let cells = vec![
            Ablation::baseline(),
            on(true, false, false),
            on(false, true, false),
            on(false, false, true),
            on(true, true, false),
            on(true, false, true),
            on(false, true, true),
            on(true, true, true),
        ];
        SweepGrid::Ablation { cells }
    }

    /// `(cell label, config)` for every cell.
    pub fn cells(&self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        match self {
            SweepGrid::FewShot { shots } => shots
                .iter()
                .map(|&k| {
                    let mut c = base.clone();
                    c.data.protocol.few_shot = Some(k);
                    (format!("k={k}"), c)
                })
                .collect(),
            SweepGrid::Shift { cells } => cells
                .iter()
                .map(|&s| {
                    let mut c = base.clone();
                    c.data.protocol.shift = Some(s);
                    (format!("re_cls={} re_smp={}", s.reduced_classes, s.reduced_percent), c)
                })
                .collect(),
            SweepGrid::Ablation { cells } => cells
                .iter()
                .map(|&a| {
                    let mut c = base.clone();
                    c.train.ablation = a;
                    let label = if a.baseline_coop_mode {
                        "baseline".to_string()
                    } else {
                        format!("rankformer={} cop={} scop={}", a.use_rankformer, a.use_cop, a.use_scop)
                    };
                    (label, c)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: SweepGrid,
    /// Offsets added to the base seed; one run per offset and cell.
    #[serde(default = "default_offsets")]
    pub seed_offsets: Vec<u64>,
    pub base: RunConfig,
}

fn default_offsets() -> Vec<u64> {
    vec![0]
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        let cfg: SweepConfig = serde_json::from_str(&text).map_err(|e| crate::Error::Config(e.to_string()))?;
        cfg.base.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: String,
    pub cell: String,
    pub seed: u64,
    pub mae: f64,
    pub accuracy: f64,
    pub os: f64,
}

pub fn sweep(cfg: &SweepConfig, registry: &BackboneRegistry) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (cell, run_cfg) in cfg.grid.cells(&cfg.base) {
        for &offset in &cfg.seed_offsets {
            let mut c = run_cfg.clone();
            c.seed = cfg.base.seed + offset;
            let out = run(&c, registry)?;
            rows.push(SweepRow {
                kind: cfg.grid.kind().into(),
                cell: cell.clone(),
                seed: c.seed,
                mae: out.report.mae,
                accuracy: out.report.accuracy,
                os: out.report.os,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| crate::Error::io(path, e))
}
