//! Ordinality and local ordinality of rank features, plus the CSV and
//! heatmap outputs.
//!
//! cargo run --example ordinality_metrics -- [out_dir]

use ndarray::Array2;
use ordino::harness::plot::save_heatmap;
use ordino::metrics::{local_ordinality_score, ordinality_score, similarity_matrix, SimilarityMatrix};

fn main() -> ordino::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let m = 12;

    // features on a quarter circle: similarity falls with rank distance
    let arc = Array2::from_shape_fn((m, 2), |(i, j)| {
        let t = i as f64 / (m - 1) as f64 * std::f64::consts::FRAC_PI_2;
        if j == 0 {
            t.cos()
        } else {
            t.sin()
        }
    });
    let ordered = similarity_matrix(&arc);
    println!("arc features: OS {:.2}", ordinality_score(&ordered)?);

    // the same features with two ranks swapped
    let mut swapped = arc.clone();
    for j in 0..2 {
        swapped.swap([3, j], [8, j]);
    }
    let broken = similarity_matrix(&swapped);
    println!("ranks 3 and 8 swapped: OS {:.2}", ordinality_score(&broken)?);
    for k in [2, 4, 8, 12] {
        println!("  LOS({k:>2}) {:.2}", local_ordinality_score(&broken, k)?);
    }

    let csv = out.join("similarity.csv");
    broken.save_csv(&csv)?;
    let back = SimilarityMatrix::load_csv(&csv)?;
    println!("reloaded {} OS {:.2}", csv.display(), ordinality_score(&back)?);
    let png = out.join("similarity.png");
    save_heatmap(&back, &png)?;
    println!("heatmap {}", png.display());
    Ok(())
}
