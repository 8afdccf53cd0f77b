//! Evaluates every training objective on one batch and checks its
//! gradient against central differences.

use ndarray::Array2;
use ordino::gradcheck::{central_difference, relative_error};
use ordino::losses::{
    asym_contrastive_i2t, asym_contrastive_t2i, ce_loss, cop_loss, cpce_diversity, cpce_tightness, scop_loss,
    stage_loss, EncodedBatch, I2tDenominator, LossConfig, LossValue, Stage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut a = Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.05f64..1.0));
    for mut row in a.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    a
}

type LossFn = fn(&EncodedBatch, &LossConfig) -> ordino::Result<LossValue>;

fn main() -> ordino::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = LossConfig::default();
    let batch = EncodedBatch::new(unit_rows(&mut rng, 6, 5), unit_rows(&mut rng, 4, 5), vec![0, 1, 1, 2, 3, 3])?;

    let losses: Vec<(&str, LossFn)> = vec![
        ("ce", |b, c| ce_loss(b, c.tau)),
        ("t2i", |b, c| asym_contrastive_t2i(b, c.tau)),
        ("i2t", |b, c| asym_contrastive_i2t(b, c.tau, I2tDenominator::AllRanks)),
        ("tightness", |b, _| cpce_tightness(b)),
        ("diversity", |b, c| cpce_diversity(b, 5, c.eps_log)),
        ("cop", cop_loss),
        ("scop", scop_loss),
    ];
    let nv = batch.v.len();
    for (name, f) in losses {
        let lv = f(&batch, &cfg)?;
        let x: Vec<f64> = batch.v.iter().chain(batch.r.iter()).copied().collect();
        let numeric = central_difference(&x, 1e-6, |p| {
            let v = Array2::from_shape_vec(batch.v.raw_dim(), p[..nv].to_vec()).unwrap();
            let r = Array2::from_shape_vec(batch.r.raw_dim(), p[nv..].to_vec()).unwrap();
            f(&EncodedBatch { v, r, labels: batch.labels.clone() }, &cfg).unwrap().value
        });
        let analytic: Vec<f64> = lv.grad_v.iter().chain(lv.grad_r.iter()).copied().collect();
        // scop treats text features as constants, so only the image part is comparable
        let err = if name == "scop" {
            relative_error(&analytic[..nv], &numeric[..nv])
        } else {
            relative_error(&analytic, &numeric)
        };
        println!("{name:>10}: value {:+.6}  grad rel err {err:.1e}", lv.value);
    }

    for stage in [Stage::One, Stage::Two] {
        let s = stage_loss(stage, &batch, &cfg)?;
        println!("stage {} total {:+.6} terms {:?}", stage.number(), s.total, s.terms);
    }
    Ok(())
}
