//! Rank prediction, MAE/accuracy, and ordinality of rank text features.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Cosine similarities between rank text features, `M × M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub s: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn new(s: Array2<f64>) -> Result<Self> {
        if s.nrows() != s.ncols() {
            return Err(Error::Shape(format!("similarity matrix {:?} is not square", s.dim())));
        }
        Ok(SimilarityMatrix { s })
    }

    pub fn size(&self) -> usize {
        self.s.nrows()
    }

    /// CSV with a `m=<M>` header row and 9 significant digits per entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "m={}", self.size())?;
        for row in self.s.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose().map_err(|e| Error::io("<matrix>", e))?.unwrap_or_default();
        let m: usize = header
            .trim()
            .strip_prefix("m=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Invalid(format!("matrix header `{header}` is not `m=<M>`")))?;
        let mut s = Array2::zeros((m, m));
        for i in 0..m {
            let line = lines
                .next()
                .transpose()
                .map_err(|e| Error::io("<matrix>", e))?
                .ok_or_else(|| Error::Invalid(format!("matrix has {i} rows, expected {m}")))?;
            let vals: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Invalid(format!("matrix row {}: {e}", i + 1)))?;
            if vals.len() != m {
                return Err(Error::Invalid(format!("matrix row {} has {} values, expected {m}", i + 1, vals.len())));
            }
            for (j, v) in vals.into_iter().enumerate() {
                s[[i, j]] = v;
            }
        }
        Ok(SimilarityMatrix { s })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// `s = r rᵀ` for unit-norm rank features.
pub fn similarity_matrix(r: &Array2<f64>) -> SimilarityMatrix {
    SimilarityMatrix { s: r.dot(&r.t()) }
}

/// Counts `(i, j)` with `i <= j < end - 1` inside `[start, end)` where
/// similarity strictly decreases one step further from `i`.
fn ordered_pairs(s: &Array2<f64>, start: usize, end: usize) -> usize {
    let mut hits = 0;
    for i in start..end {
        for j in i..end - 1 {
            if s[[i, j]] > s[[i, j + 1]] {
                hits += 1;
            }
        }
    }
    hits
}

/// Percentage of template pairs whose similarity strictly decreases as the
/// rank distance grows by one. Ties count as violations.
pub fn ordinality_score(sim: &SimilarityMatrix) -> Result<f64> {
    let m = sim.size();
    if m < 2 {
        return Err(Error::Invalid(format!("ordinality needs M >= 2, got {m}")));
    }
    let total = m * (m - 1) / 2;
    Ok(100.0 * ordered_pairs(&sim.s, 0, m) as f64 / total as f64)
}

/// Ordinality score inside every `K × K` window on the diagonal
/// (`t = 0 ..= M - K`), averaged over windows.
pub fn local_ordinality_score(sim: &SimilarityMatrix, window: usize) -> Result<f64> {
    let m = sim.size();
    if window < 2 || window > m {
        return Err(Error::Invalid(format!("window {window} outside [2, {m}]")));
    }
    let per_window = (window * (window - 1) / 2) as f64;
    let windows = m - window + 1;
    let sum: f64 = (0..windows)
        .map(|t| 100.0 * ordered_pairs(&sim.s, t, t + window) as f64 / per_window)
        .sum();
    Ok(sum / windows as f64)
}

/// Index of the highest `v_i · r_k`; ties go to the smallest index.
pub fn predict_rank(v: &Array2<f64>, r: &Array2<f64>) -> Vec<usize> {
    let scores = v.dot(&r.t());
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// `(MAE in rank-value units, accuracy in percent)`.
pub fn mae_accuracy(preds: &[usize], labels: &[usize], rank_values: &[f64]) -> Result<(f64, f64)> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut abs = 0.0;
    let mut hits = 0usize;
    for (&p, &y) in preds.iter().zip(labels) {
        let (pv, yv) = rank_values
            .get(p)
            .zip(rank_values.get(y))
            .ok_or_else(|| Error::Invalid(format!("rank index {} outside {} values", p.max(y), rank_values.len())))?;
        abs += (pv - yv).abs();
        hits += usize::from(p == y);
    }
    let n = preds.len() as f64;
    Ok((abs / n, 100.0 * hits as f64 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn decay(m: usize) -> SimilarityMatrix {
        SimilarityMatrix {
            s: Array2::from_shape_fn((m, m), |(i, j)| 1.0 - (i as f64 - j as f64).abs() / m as f64),
        }
    }

    #[test]
    fn monotone_decay_is_fully_ordinal() {
        for m in 2..15 {
            assert_eq!(ordinality_score(&decay(m)).unwrap(), 100.0);
        }
    }

    #[test]
    fn three_rank_hand_case() {
        let s = SimilarityMatrix { s: array![[1.0, 0.5, 0.8], [0.5, 1.0, 0.2], [0.8, 0.2, 1.0]] };
        assert!((ordinality_score(&s).unwrap() - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ties_are_violations() {
        let s = SimilarityMatrix { s: Array2::ones((4, 4)) };
        assert_eq!(ordinality_score(&s).unwrap(), 0.0);
    }

    #[test]
    fn full_window_equals_global_score() {
        let s = SimilarityMatrix { s: array![[1.0, 0.5, 0.8], [0.5, 1.0, 0.2], [0.8, 0.2, 1.0]] };
        assert_eq!(local_ordinality_score(&s, 3).unwrap(), ordinality_score(&s).unwrap());
        assert!(local_ordinality_score(&s, 1).is_err());
        assert!(local_ordinality_score(&s, 4).is_err());
    }

    #[test]
    fn local_windows_by_enumeration() {
        // M=4, K=2: windows at t=0,1,2 each hold one pair (t, t) vs (t, t+1)
        let s = SimilarityMatrix {
            s: array![[1.0, 0.9, 0.1, 0.0], [0.9, 0.8, 0.95, 0.3], [0.1, 0.95, 1.0, 0.4], [0.0, 0.3, 0.4, 1.0]],
        };
        // t=0: 1.0 > 0.9 yes; t=1: 0.8 > 0.95 no; t=2: 1.0 > 0.4 yes
        assert!((local_ordinality_score(&s, 2).unwrap() - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_matrix_cases() {
        let r = array![[1.0, 0.0], [1.0, 0.0]];
        assert_eq!(similarity_matrix(&r).s, Array2::<f64>::ones((2, 2)));
        let r: Array2<f64> = Array2::eye(3);
        assert_eq!(similarity_matrix(&r).s, Array2::<f64>::eye(3));
        let r = array![[0.6, 0.8, 0.0], [0.0, 1.0, 0.0], [0.0, 0.6, 0.8]];
        let s = similarity_matrix(&r).s;
        assert!((s[[0, 1]] - 0.8).abs() < 1e-15);
        assert!((s[[0, 2]] - 0.48).abs() < 1e-15);
        assert!((s[[1, 2]] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn predict_rank_examples() {
        let r: Array2<f64> = Array2::eye(4);
        let v = array![[0.0, 0.0, 0.0, 1.0]];
        assert_eq!(predict_rank(&v, &r), vec![3]);
        let v = array![[0.0, 0.7, 0.7, 0.0]];
        assert_eq!(predict_rank(&v, &r), vec![1]);
    }

    #[test]
    fn mae_examples() {
        let vals = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mae_accuracy(&[0, 1, 2], &[0, 1, 2], &vals).unwrap(), (0.0, 100.0));
        assert_eq!(mae_accuracy(&[1, 2, 3], &[0, 1, 2], &vals).unwrap(), (1.0, 0.0));
        let ages = [10.0, 20.0, 35.0, 60.0];
        // |20-10| + 0 + |60-20| + |10-35| = 75 -> 18.75; one hit of four
        assert_eq!(mae_accuracy(&[1, 2, 3, 0], &[0, 2, 1, 2], &ages).unwrap(), (18.75, 25.0));
    }

    #[test]
    fn csv_round_trip_keeps_nine_digits() {
        let s = SimilarityMatrix { s: array![[1.0, 0.123456789123], [0.123456789123, 1.0]] };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("m=2\n"));
        let back = SimilarityMatrix::read_csv(&buf[..]).unwrap();
        assert!((back.s[[0, 1]] - 0.123456789).abs() < 1e-9);
        assert!(SimilarityMatrix::read_csv(&b"m=2\n1,2\n"[..]).is_err());
        assert!(SimilarityMatrix::read_csv(&b"2\n"[..]).is_err());
    }
}
