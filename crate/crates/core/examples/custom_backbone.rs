//! Registers a backbone under a new name and selects it from a run config.

use ordino::encoders::{toy_backbone, Backbone, BackboneConfig, BackboneRegistry};
use ordino::harness::{run, RunConfig};

/// The toy backbone with a wider word embedding, standing in for a real
/// pretrained model.
fn wide(cfg: &BackboneConfig, image_dim: usize) -> ordino::Result<Backbone> {
    toy_backbone(&BackboneConfig { d_embed: cfg.d_embed * 2, ..cfg.clone() }, image_dim)
}

fn main() -> ordino::Result<()> {
    let mut registry = BackboneRegistry::default();
    registry.register("wide", wide);
    println!("backbones: {:?}", registry.names().collect::<Vec<_>>());

    let mut cfg = RunConfig::from_json(include_str!("../configs/desk.json"))?;
    cfg.backbone.name = "wide".into();
    cfg.train.stage1_epochs = 3;
    cfg.train.stage2_epochs = 3;
    cfg.train.decay_epoch = 2;
    let out = run(&cfg, &registry)?;
    println!("{}", serde_json::to_string(&out.report)?);

    cfg.backbone.name = "vit-b16".into();
    match run(&cfg, &registry) {
        Err(e) => println!("unregistered name: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
