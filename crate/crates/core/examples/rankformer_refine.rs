//! Refines rank-token embeddings with the RankFormer and shows the
//! blending extremes and template-order equivariance.

use ndarray::{Array3, Axis};
use ordino::nn::Linear;
use ordino::prompt_space::RankTokenEmbeddings;
use ordino::rankformer::{refine, RankFormerParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ordino::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (m, n, d) = (6, 2, 16);
    let r = RankTokenEmbeddings { values: Array3::from_shape_fn((m, n, d), |_| rng.random_range(-1.0..1.0)) };

    let mut params = RankFormerParams::init(&mut rng, d, 4, 4 * d, 0.1)?;
    let fresh = refine(&r, &params)?;
    let drift = (&fresh.values - &(&r.values * 0.9)).mapv(f64::abs).sum();
    println!("freshly initialised: |R' - 0.9 R| = {drift:.3e}");

    params.ffn_out = Linear::init(&mut rng, 4 * d, d);
    params.alpha = 0.0;
    println!("alpha = 0 is the identity: {}", refine(&r, &params)? == r);

    params.alpha = 0.3;
    let out = refine(&r, &params)?;
    let order: Vec<usize> = vec![5, 0, 3, 1, 4, 2];
    let shuffled = RankTokenEmbeddings { values: r.values.select(Axis(0), &order) };
    let out_shuffled = refine(&shuffled, &params)?;
    let gap = (&out.values.select(Axis(0), &order) - &out_shuffled.values).mapv(f64::abs).fold(0.0, |a: f64, b| a.max(*b));
    println!("permuting the templates permutes the output (max gap {gap:.1e})");
    Ok(())
}
