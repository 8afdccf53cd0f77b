//! Ordinal datasets: a synthetic generator, image-folder ingestion, and the
//! few-shot, distribution-shift and k-fold samplers.
//!
//! All sampling is a pure function of `(dataset, parameters, seed)` and only
//! ever returns members of the input.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `height × width × channels` pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image { height, width, channels, pixels: vec![0.0; height * width * channels] }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    fn at(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn flipped_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.pixels[self.at(y, self.width - 1 - x, c)] = self.pixels[self.at(y, x, c)];
                }
            }
        }
        out
    }

    pub fn mass(&self) -> f64 {
        self.pixels.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalSample {
    pub image: Image,
    pub rank_index: usize,
    pub rank_value: f64,
    /// File the image was read from, if any.
    pub source: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.8, val: 0.0, test: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Ordered numeric label of each rank.
    pub label_values: Vec<f64>,
    /// Samples per rank.
    pub counts: Vec<usize>,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_side() -> usize {
    32
}

impl DatasetSpec {
    /// `m` ranks valued `0..m` with `per_class` samples each.
    pub fn uniform(m: usize, per_class: usize) -> Self {
        DatasetSpec {
            label_values: (0..m).map(|i| i as f64).collect(),
            counts: vec![per_class; m],
            split: SplitFractions::default(),
            height: default_side(),
            width: default_side(),
            seed: 0,
        }
    }

    pub fn num_ranks(&self) -> usize {
        self.label_values.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_ranks();
        if m < 2 {
            return Err(Error::TooFewRanks { min: 2, got: m });
        }
        if let Some(i) = self.label_values.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(Error::UnorderedRanks { index: i + 1 });
        }
        if self.counts.len() != m {
            return Err(Error::Invalid(format!("{} class counts for {m} ranks", self.counts.len())));
        }
        if self.counts.contains(&0) {
            return Err(Error::Invalid("every class needs at least one sample".into()));
        }
        let f = self.split;
        if [f.train, f.val, f.test].iter().any(|x| *x < 0.0) || ((f.train + f.val + f.test) - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("split fractions {f:?} must be non-negative and sum to 1")));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Invalid("image size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<OrdinalSample>,
    pub label_values: Vec<f64>,
    /// Random horizontal flips when batches are drawn for training.
    pub augment_flip: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_ranks(&self) -> usize {
        self.label_values.len()
    }

    pub fn image_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.image.len())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.rank_index).collect()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_ranks()];
        for s in &self.samples {
            h[s.rank_index] += 1;
        }
        h
    }

    /// Indices of each class in sample order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_ranks()];
        for (i, s) in self.samples.iter().enumerate() {
            by[s.rank_index].push(i);
        }
        by
    }

    fn subset(&self, mut keep: Vec<usize>) -> Dataset {
        keep.sort_unstable();
        Dataset {
            samples: keep.into_iter().map(|i| self.samples[i].clone()).collect(),
            label_values: self.label_values.clone(),
            augment_flip: self.augment_flip,
        }
    }

    /// Stacked flattened images for `indices`, `len × image_dim`.
    pub fn image_matrix(&self, indices: &[usize]) -> Array2<f64> {
        let d = self.image_dim();
        let mut out = Array2::zeros((indices.len(), d));
        for (row, &i) in indices.iter().enumerate() {
            out.row_mut(row).assign(&ndarray::ArrayView1::from(&self.samples[i].image.pixels));
        }
        out
    }

    /// Stratified train/val/test split by the given fractions.
    pub fn split(&self, fractions: SplitFractions, seed: u64) -> (Dataset, Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
        for mut idx in self.class_indices() {
            idx.shuffle(&mut rng);
            let n = idx.len() as f64;
            let n_tr = ((fractions.train * n).round() as usize).min(idx.len());
            let n_va = ((fractions.val * n).round() as usize).min(idx.len() - n_tr);
            tr.extend_from_slice(&idx[..n_tr]);
            va.extend_from_slice(&idx[n_tr..n_tr + n_va]);
            te.extend_from_slice(&idx[n_tr + n_va..]);
        }
        let mut test = self.subset(te);
        let mut val = self.subset(va);
        test.augment_flip = false;
        val.augment_flip = false;
        (self.subset(tr), val, test)
    }
}

/// Renders a horizontal bar whose filled length is `t · width` (with a
/// fractional edge column) across the middle half of the image.
pub fn render_bar(t: f64, height: usize, width: usize) -> Image {
    let mut img = Image::zeros(height, width, 1);
    let fill = t.clamp(0.0, 1.0) * width as f64;
    let (top, bottom) = (height / 4, height - height / 4);
    for y in top..bottom {
        for x in 0..width {
            img.pixels[y * width + x] = (fill - x as f64).clamp(0.0, 1.0);
        }
    }
    img
}

/// Bar images whose length encodes the rank, plus Gaussian pixel noise.
pub fn generate_synthetic(spec: &DatasetSpec, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::Invalid(format!("noise sigma {noise_sigma}")));
    }
    let m = spec.num_ranks();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("validated sigma");
    let mut samples = Vec::with_capacity(spec.counts.iter().sum());
    for (k, &count) in spec.counts.iter().enumerate() {
        let clean = render_bar(k as f64 / (m - 1) as f64, spec.height, spec.width);
        for _ in 0..count {
            let mut image = clean.clone();
            if noise_sigma > 0.0 {
                for p in &mut image.pixels {
                    *p += noise.sample(&mut rng);
                }
            }
            samples.push(OrdinalSample { image, rank_index: k, rank_value: spec.label_values[k], source: None });
        }
    }
    Ok(Dataset { samples, label_values: spec.label_values.clone(), augment_flip: false })
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    path: String,
    rank_value: f64,
}

/// Reads `labels` (CSV with header `path,rank_value`) relative to `root`,
/// resizing every image to `size × size` RGB in `[0, 1]`.
pub fn load_image_folder(root: &Path, labels: &Path, label_values: &[f64], size: u32) -> Result<Dataset> {
    if label_values.len() < 2 {
        return Err(Error::TooFewRanks { min: 2, got: label_values.len() });
    }
    let (lo, hi) = (label_values[0], label_values[label_values.len() - 1]);
    let mut reader = csv::Reader::from_path(labels).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(labels, io),
        other => Error::Invalid(format!("{}: {other:?}", labels.display())),
    })?;
    let mut samples = Vec::new();
    for (n, row) in reader.deserialize::<LabelRow>().enumerate() {
        let line = n + 2;
        let row = row.map_err(|e| Error::LabelRow { path: labels.into(), row: line, msg: e.to_string() })?;
        if row.rank_value < lo || row.rank_value > hi {
            return Err(Error::LabelRow {
                path: labels.into(),
                row: line,
                msg: format!("rank value {} outside [{lo}, {hi}]", row.rank_value),
            });
        }
        let rank_index = label_values.iter().position(|v| *v == row.rank_value).ok_or_else(|| Error::LabelRow {
            path: labels.into(),
            row: line,
            msg: format!("rank value {} is not a declared label", row.rank_value),
        })?;
        let file = root.join(&row.path);
        let decoded = image::open(&file).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(&file, io),
            other => Error::Image { path: file.clone(), source: other },
        })?;
        let rgb = decoded.resize_exact(size, size, image::imageops::FilterType::Triangle).to_rgb8();
        let pixels = rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        samples.push(OrdinalSample {
            image: Image { height: size as usize, width: size as usize, channels: 3, pixels },
            rank_index,
            rank_value: row.rank_value,
            source: Some(file),
        });
    }
    Ok(Dataset { samples, label_values: label_values.to_vec(), augment_flip: true })
}

/// Writes `images/<n>.png` plus `labels.csv` under `root`. Pixel values
/// are clamped to `[0, 1]` and quantized to 8 bits.
pub fn save_image_folder(dataset: &Dataset, root: &Path) -> Result<()> {
    let dir = root.join("images");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let labels = root.join("labels.csv");
    let mut w = csv::Writer::from_path(&labels)?;
    w.write_record(["path", "rank_value"])?;
    for (i, s) in dataset.samples.iter().enumerate() {
        let rel = format!("images/{i:06}.png");
        let bytes: Vec<u8> = s.image.pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let (w_px, h_px) = (s.image.width as u32, s.image.height as u32);
        let path = root.join(&rel);
        let saved = match s.image.channels {
            1 => image::GrayImage::from_raw(w_px, h_px, bytes).map(|im| im.save(&path)),
            3 => image::RgbImage::from_raw(w_px, h_px, bytes).map(|im| im.save(&path)),
            c => return Err(Error::Invalid(format!("cannot write {c}-channel image"))),
        };
        saved
            .ok_or_else(|| Error::Invalid("pixel buffer does not match image size".into()))?
            .map_err(|e| Error::Image { path: path.clone(), source: e })?;
        w.write_record([rel, s.rank_value.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&labels, e))?;
    Ok(())
}

/// Keeps `min(k, n_c)` samples of every class, chosen uniformly.
pub fn few_shot_subsample(dataset: &Dataset, k: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for idx in dataset.class_indices() {
        let take = k.min(idx.len());
        keep.extend(index::sample(&mut rng, idx.len(), take).into_iter().map(|j| idx[j]));
    }
    dataset.subset(keep)
}

/// Picks `reduced_classes` distinct ranks and keeps `⌈(100 - percent)% · n_c⌉`
/// samples of each; other ranks are untouched.
pub fn distribution_shift_subsample(
    dataset: &Dataset,
    reduced_classes: usize,
    reduced_percent: u32,
    seed: u64,
) -> Result<Dataset> {
    let m = dataset.num_ranks();
    if reduced_classes > m {
        return Err(Error::Invalid(format!("cannot reduce {reduced_classes} of {m} classes")));
    }
    if reduced_percent > 100 {
        return Err(Error::Invalid(format!("reduction {reduced_percent}% exceeds 100%")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = index::sample(&mut rng, m, reduced_classes).into_vec();
    let mut keep = Vec::new();
    for (c, idx) in dataset.class_indices().into_iter().enumerate() {
        if chosen.contains(&c) {
            let n = idx.len();
            let retain = ((100 - reduced_percent) as usize * n).div_ceil(100);
            keep.extend(index::sample(&mut rng, n, retain).into_iter().map(|j| idx[j]));
        } else {
            keep.extend(idx);
        }
    }
    Ok(dataset.subset(keep))
}

/// Stratified k-fold partition; fold `fold_index` is returned as the test set.
pub fn kfold_split(dataset: &Dataset, k: usize, fold_index: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if k < 2 || fold_index >= k {
        return Err(Error::Invalid(format!("fold {fold_index} of k = {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut offset = 0;
    for mut idx in dataset.class_indices() {
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            if (offset + pos) % k == fold_index {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        offset += idx.len();
    }
    let mut test = dataset.subset(test);
    test.augment_flip = false;
    Ok((dataset.subset(train), test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_histogram() {
        let ds = generate_synthetic(&DatasetSpec::uniform(5, 10), 0.3, 1).unwrap();
        assert_eq!(ds.len(), 50);
        assert_eq!(ds.class_histogram(), vec![10; 5]);
    }

    #[test]
    fn noiseless_samples_are_identical_within_a_rank() {
        let ds = generate_synthetic(&DatasetSpec::uniform(4, 3), 0.0, 9).unwrap();
        assert_eq!(ds.samples[0].image, ds.samples[1].image);
        assert_ne!(ds.samples[0].image, ds.samples[3].image);
    }

    #[test]
    fn mass_increases_with_rank() {
        let ds = generate_synthetic(&DatasetSpec::uniform(101, 1), 0.0, 0).unwrap();
        let mass: Vec<f64> = ds.samples.iter().map(|s| s.image.mass()).collect();
        assert!(mass.windows(2).all(|w| w[0] < w[1]));
        // half-height band, full width at the top rank
        assert_eq!(mass[100], 16.0 * 32.0);
    }

    #[test]
    fn invalid_specs() {
        let mut s = DatasetSpec::uniform(3, 2);
        s.label_values = vec![1.0, 1.0, 2.0];
        assert!(generate_synthetic(&s, 0.1, 0).is_err());
        let mut s = DatasetSpec::uniform(3, 2);
        s.counts[1] = 0;
        assert!(generate_synthetic(&s, 0.1, 0).is_err());
        assert!(generate_synthetic(&DatasetSpec::uniform(1, 2), 0.1, 0).is_err());
        let mut s = DatasetSpec::uniform(3, 2);
        s.split.test = 0.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn few_shot_counts_and_seeds() {
        let ds = generate_synthetic(&DatasetSpec::uniform(10, 5), 0.1, 0).unwrap();
        assert_eq!(few_shot_subsample(&ds, 1, 0).len(), 10);
        assert_eq!(few_shot_subsample(&ds, 99, 0).len(), 50);

        let big = generate_synthetic(&DatasetSpec::uniform(2, 100), 0.1, 0).unwrap();
        let a = few_shot_subsample(&big, 8, 3);
        assert_eq!(a, few_shot_subsample(&big, 8, 3));
        assert_ne!(a, few_shot_subsample(&big, 8, 4));
    }

    #[test]
    fn shift_arithmetic() {
        let ds = generate_synthetic(&DatasetSpec { height: 2, width: 2, ..DatasetSpec::uniform(8, 10) }, 0.0, 0).unwrap();
        assert_eq!(distribution_shift_subsample(&ds, 0, 90, 1).unwrap(), ds);
        let gone = distribution_shift_subsample(&ds, 2, 100, 1).unwrap();
        assert_eq!(gone.len(), 60);
        assert_eq!(gone.class_histogram().iter().filter(|&&c| c == 0).count(), 2);
        assert!(distribution_shift_subsample(&ds, 9, 10, 1).is_err());
        assert!(distribution_shift_subsample(&ds, 1, 101, 1).is_err());
    }

    #[test]
    fn kfold_partitions() {
        let ds = generate_synthetic(&DatasetSpec { height: 2, width: 2, ..DatasetSpec::uniform(5, 10) }, 0.5, 0).unwrap();
        let mut seen = Vec::new();
        for f in 0..5 {
            let (train, test) = kfold_split(&ds, 5, f, 7).unwrap();
            assert_eq!(test.len(), 10);
            assert_eq!(train.len() + test.len(), 50);
            seen.extend(test.samples);
        }
        for s in &ds.samples {
            assert_eq!(seen.iter().filter(|x| *x == s).count(), 1);
        }
        assert!(kfold_split(&ds, 5, 5, 0).is_err());
    }

    #[test]
    fn kfold_stratifies_unbalanced_classes() {
        let spec = DatasetSpec { counts: vec![7, 13, 4, 21], height: 2, width: 2, ..DatasetSpec::uniform(4, 1) };
        let ds = generate_synthetic(&spec, 0.5, 0).unwrap();
        let k = 5;
        let per_fold: Vec<Vec<usize>> =
            (0..k).map(|f| kfold_split(&ds, k, f, 11).unwrap().1.class_histogram()).collect();
        for c in 0..4 {
            let counts: Vec<usize> = per_fold.iter().map(|h| h[c]).collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "class {c}: {counts:?}");
        }
    }

    #[test]
    fn split_is_stratified() {
        let ds = generate_synthetic(&DatasetSpec { height: 2, width: 2, ..DatasetSpec::uniform(3, 250) }, 0.5, 0).unwrap();
        let (tr, va, te) = ds.split(SplitFractions { train: 0.8, val: 0.0, test: 0.2 }, 1);
        assert_eq!(tr.class_histogram(), vec![200; 3]);
        assert!(va.is_empty());
        assert_eq!(te.class_histogram(), vec![50; 3]);
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = render_bar(0.5, 4, 4);
        let f = img.flipped_horizontal();
        assert_eq!(f.pixels[4 + 3], img.pixels[4]);
        assert_eq!(f.flipped_horizontal(), img);
    }
}
