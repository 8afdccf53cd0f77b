//! Central finite differences for checking hand-written gradients.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Gradient norms below this are treated as zero; the absolute difference
/// is returned instead of a ratio of round-off noise.
pub const NEGLIGIBLE_NORM: f64 = 1e-7;

/// `||a - b|| / (||a|| + ||b||)`, or `||a - b||` when both norms are
/// below [`NEGLIGIBLE_NORM`].
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale < NEGLIGIBLE_NORM {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = central_difference(&[1.0, -2.0], 1e-5, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!(relative_error(&g, &[2.0, 3.0]) < 1e-9);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        // constant function: noise-level numeric gradient, zero analytic
        assert!(relative_error(&[0.0, 0.0], &[3e-11, -1e-11]) < 1e-10);
        assert!(relative_error(&[1.0], &[-1.0]) == 1.0);
    }
}
