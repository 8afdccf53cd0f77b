//! Runs the eight-cell component ablation on a small synthetic task and
//! writes the table as CSV.
//!
//! cargo run --release --example ablation_sweep -- [out.csv]

use ordino::encoders::BackboneRegistry;
use ordino::harness::sweep::write_sweep_csv;
use ordino::harness::{sweep, RunConfig, SweepConfig, SweepGrid};

fn main() -> ordino::Result<()> {
    let mut base = RunConfig::from_json(include_str!("../configs/desk.json"))?;
    base.train.stage1_epochs = 10;
    base.train.stage2_epochs = 10;
    base.train.decay_epoch = 8;
    let cfg = SweepConfig { grid: SweepGrid::ablation(), seed_offsets: vec![0], base };
    let rows = sweep(&cfg, &BackboneRegistry::default())?;
    for r in &rows {
        println!("{:<36} mae {:.3}  acc {:5.1}  os {:5.1}", r.cell, r.mae, r.accuracy, r.os);
    }
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ablation.csv"));
    write_sweep_csv(&rows, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
