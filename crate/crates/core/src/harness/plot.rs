//! Heatmap rendering of similarity matrices.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::metrics::SimilarityMatrix;

/// Blue (low) through white to red (high).
fn color(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (u, u, 1.0)
    } else {
        let u = (t - 0.5) / 0.5;
        (1.0, 1.0 - u, 1.0 - u)
    };
    Rgb([(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8])
}

/// Square heatmap with `cell` pixels per entry, scaled to the matrix range.
pub fn heatmap(sim: &SimilarityMatrix, cell: u32) -> RgbImage {
    let m = sim.size() as u32;
    let lo = sim.s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sim.s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    RgbImage::from_fn(m * cell, m * cell, |x, y| {
        color((sim.s[[(y / cell) as usize, (x / cell) as usize]] - lo) / span)
    })
}

pub fn save_heatmap(sim: &SimilarityMatrix, path: &Path) -> Result<()> {
    let cell = (512 / sim.size().max(1) as u32).max(2);
    heatmap(sim, cell).save(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_map_to_end_colors() {
        let sim = SimilarityMatrix::new(ndarray::array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let img = heatmap(&sim, 3);
        assert_eq!(img.dimensions(), (6, 6));
        assert_eq!(*img.get_pixel(0, 0), Rgb([255, 0, 0]));
        assert_eq!(*img.get_pixel(5, 0), Rgb([0, 0, 255]));
    }
}
