//! Full two-stage run on synthetic bar images, compared against the
//! contrastive-only baseline.
//!
//! cargo run --release --example two_stage_training -- [seed]

use ordino::encoders::BackboneRegistry;
use ordino::harness::config::DataSource;
use ordino::harness::{run, Ablation, RunConfig};

fn main() -> ordino::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = RunConfig::from_json(include_str!("../configs/desk.json"))?;
    cfg.seed = seed;
    if let DataSource::Synthetic { spec, .. } = &mut cfg.data.source {
        spec.seed = seed;
    }
    let registry = BackboneRegistry::default();

    let start = std::time::Instant::now();
    let full = run(&cfg, &registry)?;
    println!("full model    initial OS {:6.2}  ->  {}", full.initial_os, serde_json::to_string(&full.report)?);
    let means = full.log.epoch_means(1);
    println!("stage-1 epoch losses: {:.4?}", means);

    cfg.train.ablation = Ablation::baseline();
    let base = run(&cfg, &registry)?;
    println!("baseline      initial OS {:6.2}  ->  {}", base.initial_os, serde_json::to_string(&base.report)?);
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
