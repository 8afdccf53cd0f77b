//! Trains stage 1, saves a checkpoint, resumes stage 2 from it and
//! evaluates.

use ordino::encoders::BackboneRegistry;
use ordino::harness::{evaluate, init_model, prepare_data, train_stage1, train_stage2, Checkpoint, RunConfig, TrainLog};

fn main() -> ordino::Result<()> {
    let mut cfg = RunConfig::from_json(include_str!("../configs/desk.json"))?;
    cfg.train.stage1_epochs = 5;
    cfg.train.stage2_epochs = 10;
    cfg.train.decay_epoch = 8;
    let registry = BackboneRegistry::default();
    let (train, test) = prepare_data(&cfg)?;

    let mut model = init_model(&cfg, train.image_dim(), &registry)?;
    let mut log = TrainLog::default();
    let stage1 = train_stage1(&mut model, &train, &cfg, &mut log)?;
    let dir = std::env::temp_dir().join("ordino_checkpoints");
    std::fs::create_dir_all(&dir).map_err(|e| ordino::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("stage1.json");
    stage1.save(&path)?;
    println!("stage 1: {} steps, checkpoint {}", log.records.len(), path.display());

    let resumed = Checkpoint::load(&path)?;
    let (_, stage2) = train_stage2(&resumed, &train, &cfg, &registry, &mut log)?;
    let (report, _) = evaluate(&stage2, &test, &registry)?;
    println!("stage 2 report: {}", serde_json::to_string(&report)?);
    let last = log.records.last().expect("stage 2 ran");
    println!("last step {} lr_visual {:e} terms {:?}", last.step, last.lr_visual, last.terms);
    Ok(())
}
