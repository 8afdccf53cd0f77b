//! Training objectives over image features `v` (`B × D`) and rank text
//! features `r` (`M × D`).
//!
//! Every differentiable loss returns a [`LossValue`] holding the scalar and
//! its gradients with respect to `v` and `r`. Sample `i` uses the text
//! feature of its label, `r[y_i]`, so gradients for repeated labels
//! accumulate into the same row of `grad_r`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{log_sum_exp, softmax_rows};

/// Image features, rank text features and integer labels for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub v: Array2<f64>,
    pub r: Array2<f64>,
    pub labels: Vec<usize>,
}

impl EncodedBatch {
    pub fn new(v: Array2<f64>, r: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if v.nrows() != labels.len() {
            return Err(Error::Shape(format!("{} image rows for {} labels", v.nrows(), labels.len())));
        }
        if v.ncols() != r.ncols() {
            return Err(Error::Shape(format!("image d_feat {} != text d_feat {}", v.ncols(), r.ncols())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= r.nrows()) {
            return Err(Error::Invalid(format!("label {bad} outside [0, {})", r.nrows())));
        }
        Ok(EncodedBatch { v, r, labels })
    }

    pub fn batch_size(&self) -> usize {
        self.labels.len()
    }

    pub fn num_ranks(&self) -> usize {
        self.r.nrows()
    }

    /// Checks that every row of `v` and `r` has unit norm within `tol`.
    pub fn check_unit_norm(&self, tol: f64) -> Result<()> {
        for row in self.v.rows().into_iter().chain(self.r.rows()) {
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > tol {
                return Err(Error::Invalid(format!("feature norm {n} is not 1")));
            }
        }
        Ok(())
    }

    fn text_dot(&self, a: usize, b: usize) -> f64 {
        self.r.row(a).dot(&self.r.row(b))
    }

    fn zero_grads(&self) -> (Array2<f64>, Array2<f64>) {
        (Array2::zeros(self.v.raw_dim()), Array2::zeros(self.r.raw_dim()))
    }
}

/// A loss value with gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad_v: Array2<f64>,
    pub grad_r: Array2<f64>,
    /// Derivative with respect to `gamma` (only `cop_loss` depends on it).
    pub grad_gamma: f64,
}

/// How the pairwise weight `w_ab` grows with label distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightForm {
    /// `|a - b| / (M - 1)`
    #[default]
    Linear,
    /// `|a - b|`
    Absolute,
    /// `((a - b) / (M - 1))^2`
    Squared,
}

impl WeightForm {
    /// Weight between rank indices `a` and `b` out of `m` ranks.
    pub fn weight(self, a: usize, b: usize, m: usize) -> f64 {
        let d = a.abs_diff(b) as f64;
        let span = (m.max(2) - 1) as f64;
        match self {
            WeightForm::Linear => d / span,
            WeightForm::Absolute => d,
            WeightForm::Squared => (d / span).powi(2),
        }
    }
}

/// Which text features appear in the image-to-text denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum I2tDenominator {
    /// All `M` rank features.
    #[default]
    AllRanks,
    /// The `B` label features of the batch, duplicates included.
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Weights {
    pub t2i: f64,
    pub i2t: f64,
    pub cop: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Weights {
    pub ce: f64,
    pub scop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Convexity scale of the pairwise cross-entropy bound.
    pub lambda: f64,
    /// Strength of the rank-template term in the ordinal pairwise loss.
    pub gamma: f64,
    /// Softmax temperature.
    pub tau: f64,
    pub weight_form: WeightForm,
    pub eps_log: f64,
    pub i2t_denominator: I2tDenominator,
    pub stage1: Stage1Weights,
    pub stage2: Stage2Weights,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            gamma: 0.1,
            tau: 0.07,
            weight_form: WeightForm::Linear,
            eps_log: 1e-6,
            i2t_denominator: I2tDenominator::AllRanks,
            stage1: Stage1Weights { t2i: 0.1, i2t: 0.1, cop: 3.0 },
            stage2: Stage2Weights { ce: 1.0, scop: 1.0 },
        }
    }
}

impl LossConfig {
    /// Stage weights used for the large age datasets.
    pub fn morph_weights(mut self) -> Self {
        self.stage1 = Stage1Weights { t2i: 0.03, i2t: 0.03, cop: 3.0 };
        self.stage2 = Stage2Weights { ce: 1.0, scop: 1.0 };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda > 0.0
            && self.tau > 0.0
            && self.gamma >= 0.0
            && self.eps_log > 0.0
            && [self.stage1.t2i, self.stage1.i2t, self.stage1.cop, self.stage2.ce, self.stage2.scop]
                .iter()
                .all(|w| *w >= 0.0 && w.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid loss config {self:?}")))
        }
    }
}

/// `B × M` matrix of `softmax_k(v_i · r_k / tau)`.
pub fn softmax_probs(v: &Array2<f64>, r: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    let logits = v.dot(&r.t()) / tau;
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(softmax_rows(&logits))
}

/// Mean negative log-probability of the labelled class, with the
/// probability floored at `eps`.
pub fn cross_entropy(p: &Array2<f64>, labels: &[usize], eps: f64) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (row, &y) in p.rows().into_iter().zip(labels) {
        let py = row[y].max(eps);
        if !(py > 0.0) {
            return Err(Error::Invalid(format!("probability {py} for label {y}")));
        }
        total -= py.ln();
    }
    Ok(total / labels.len() as f64)
}

/// Softmax classification over all rank features followed by cross-entropy,
/// with gradients. Evaluated in log-space.
pub fn ce_loss(batch: &EncodedBatch, tau: f64) -> Result<LossValue> {
    let b = batch.batch_size();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let logits = batch.v.dot(&batch.r.t()) / tau;
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let probs = softmax_rows(&logits);
    let mut value = 0.0;
    let mut dlogits = probs;
    for (i, &y) in batch.labels.iter().enumerate() {
        let row = logits.row(i);
        value += log_sum_exp(row.iter().copied()) - row[y];
        dlogits[[i, y]] -= 1.0;
    }
    let bf = b as f64;
    dlogits /= bf * tau;
    Ok(LossValue {
        value: value / bf,
        grad_v: dlogits.dot(&batch.r),
        grad_r: dlogits.t().dot(&batch.v),
        grad_gamma: 0.0,
    })
}

/// Text-to-image contrastive loss where every image sharing the anchor's
/// label is a positive. Returned as a loss (negated log-likelihood).
pub fn asym_contrastive_t2i(batch: &EncodedBatch, tau: f64) -> Result<LossValue> {
    let b = batch.batch_size();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let bf = b as f64;
    let m = batch.num_ranks();
    let mut counts = vec![0usize; m];
    for &y in &batch.labels {
        counts[y] += 1;
    }
    let (mut gv, mut gr) = batch.zero_grads();
    let mut value = 0.0;
    for (c, &n_c) in counts.iter().enumerate() {
        if n_c == 0 {
            continue;
        }
        // all anchors with label c share one term; weight n_c / B
        let scores: Array1<f64> = batch.v.dot(&batch.r.row(c)) / tau;
        let lse = log_sum_exp(scores.iter().copied());
        let pos_mean = batch.labels.iter().zip(scores.iter()).filter(|(&y, _)| y == c).map(|(_, s)| s).sum::<f64>()
            / n_c as f64;
        let weight = n_c as f64 / bf;
        value += weight * (lse - pos_mean);
        for j in 0..b {
            let soft = (scores[j] - lse).exp();
            let pos = if batch.labels[j] == c { 1.0 / n_c as f64 } else { 0.0 };
            let coef = weight * (soft - pos) / tau;
            gv.row_mut(j).scaled_add(coef, &batch.r.row(c));
            gr.row_mut(c).scaled_add(coef, &batch.v.row(j));
        }
    }
    Ok(LossValue { value, grad_v: gv, grad_r: gr, grad_gamma: 0.0 })
}

/// Image-to-text contrastive loss with the label's text feature as the
/// positive. The denominator runs over all rank features or over the batch's
/// label features, per `denom`.
pub fn asym_contrastive_i2t(batch: &EncodedBatch, tau: f64, denom: I2tDenominator) -> Result<LossValue> {
    match denom {
        I2tDenominator::AllRanks => ce_loss(batch, tau),
        I2tDenominator::Batch => {
            let b = batch.batch_size();
            if b == 0 {
                return Err(Error::EmptyBatch);
            }
            let bf = b as f64;
            let (mut gv, mut gr) = batch.zero_grads();
            let mut value = 0.0;
            for i in 0..b {
                let vi = batch.v.row(i);
                let scores: Vec<f64> = batch.labels.iter().map(|&y| vi.dot(&batch.r.row(y)) / tau).collect();
                let lse = log_sum_exp(scores.iter().copied());
                let yi = batch.labels[i];
                value += lse - vi.dot(&batch.r.row(yi)) / tau;
                for (j, &yj) in batch.labels.iter().enumerate() {
                    let coef = (scores[j] - lse).exp() / (bf * tau);
                    gv.row_mut(i).scaled_add(coef, &batch.r.row(yj));
                    gr.row_mut(yj).scaled_add(coef, &vi);
                }
                gv.row_mut(i).scaled_add(-1.0 / (bf * tau), &batch.r.row(yi));
                gr.row_mut(yi).scaled_add(-1.0 / (bf * tau), &vi);
            }
            Ok(LossValue { value: value / bf, grad_v: gv, grad_r: gr, grad_gamma: 0.0 })
        }
    }
}

/// Terms of the pairwise cross-entropy bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PceTerms {
    pub tightness: f64,
    pub diversity: f64,
    pub total: f64,
}

/// Pairwise cross-entropy bound on features `z` (`N × d`).
///
/// `probs` (`N × K`) are the soft class assignments; when absent they are
/// the softmax of `z` against the per-class mean features. Used as an
/// analysis quantity, not as a training loss.
pub fn pce_reference(
    z: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    probs: Option<&Array2<f64>>,
    lambda: f64,
) -> Result<PceTerms> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::Invalid(format!("pairwise bound needs N >= 2, got {n}")));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} features", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Invalid(format!("label {bad} outside [0, {num_classes})")));
    }
    let owned;
    let p = match probs {
        Some(p) => {
            if p.dim() != (n, num_classes) {
                return Err(Error::Shape(format!("probabilities {:?} != ({n}, {num_classes})", p.dim())));
            }
            p
        }
        None => {
            let mut means = Array2::zeros((num_classes, z.ncols()));
            let mut counts = vec![0.0; num_classes];
            for (row, &y) in z.rows().into_iter().zip(labels) {
                means.row_mut(y).scaled_add(1.0, &row);
                counts[y] += 1.0;
            }
            for (mut m, c) in means.rows_mut().into_iter().zip(&counts) {
                if *c > 0.0 {
                    m /= *c;
                }
            }
            owned = softmax_rows(&z.dot(&means.t()));
            &owned
        }
    };
    let nf = n as f64;
    let gram = z.dot(&z.t());
    let mut same = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                same += gram[[i, j]];
            }
        }
    }
    let tightness = -same / (2.0 * lambda * nf * nf);
    let affinity = gram.dot(p) / (lambda * nf);
    let lse_mean = affinity.rows().into_iter().map(|row| log_sum_exp(row.iter().copied())).sum::<f64>() / nf;
    let centers = p.t().dot(z);
    let center_norms: f64 = centers.rows().into_iter().map(|c| c.dot(&c).sqrt()).sum();
    let diversity = lse_mean - center_norms / (2.0 * lambda);
    Ok(PceTerms { tightness, diversity, total: tightness + diversity })
}

/// `-(1/B) Σ_i v_i · r[y_i]`.
pub fn cpce_tightness(batch: &EncodedBatch) -> Result<LossValue> {
    let b = batch.batch_size();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let bf = b as f64;
    let (mut gv, mut gr) = batch.zero_grads();
    let mut value = 0.0;
    for (i, &y) in batch.labels.iter().enumerate() {
        value -= batch.v.row(i).dot(&batch.r.row(y));
        gv.row_mut(i).scaled_add(-1.0 / bf, &batch.r.row(y));
        gr.row_mut(y).scaled_add(-1.0 / bf, &batch.v.row(i));
    }
    Ok(LossValue { value: value / bf, grad_v: gv, grad_r: gr, grad_gamma: 0.0 })
}

/// Nearest-neighbour style diversity estimate
/// `D / (B (B-1)) Σ_i Σ_{j≠i} log max(v_i·r[y_j] + r[y_i]·r[y_j], eps)`.
/// Clamped terms contribute no gradient.
pub fn cpce_diversity(batch: &EncodedBatch, d_feat: usize, eps_log: f64) -> Result<LossValue> {
    let b = batch.batch_size();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if b < 2 {
        return Err(Error::Invalid("diversity estimate needs at least two samples".into()));
    }
    let coef = d_feat as f64 / (b * (b - 1)) as f64;
    let (mut gv, mut gr) = batch.zero_grads();
    let mut value = 0.0;
    for i in 0..b {
        let yi = batch.labels[i];
        for j in (0..b).filter(|&j| j != i) {
            let yj = batch.labels[j];
            let arg = batch.v.row(i).dot(&batch.r.row(yj)) + batch.text_dot(yi, yj);
            if arg > eps_log {
                value += arg.ln();
                let g = coef / arg;
                gv.row_mut(i).scaled_add(g, &batch.r.row(yj));
                gr.row_mut(yj).scaled_add(g, &batch.v.row(i));
                gr.row_mut(yj).scaled_add(g, &batch.r.row(yi));
                gr.row_mut(yi).scaled_add(g, &batch.r.row(yj));
            } else {
                value += eps_log.ln();
            }
        }
    }
    Ok(LossValue { value: coef * value, grad_v: gv, grad_r: gr, grad_gamma: 0.0 })
}

fn pairwise_ordinal(batch: &EncodedBatch, gamma: f64, form: WeightForm) -> Result<LossValue> {
    let b = batch.batch_size();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let m = batch.num_ranks();
    let bf = b as f64;
    let (mut gv, mut gr) = batch.zero_grads();
    let mut grad_gamma = 0.0;
    let mut value = 0.0;
    let pair_coef = if b > 1 { 1.0 / (b - 1) as f64 } else { 0.0 };
    for i in 0..b {
        let yi = batch.labels[i];
        let vi = batch.v.row(i);
        let mut anchor = 0.0;
        for j in (0..b).filter(|&j| j != i) {
            let yj = batch.labels[j];
            let w = form.weight(yi, yj, m);
            if w == 0.0 {
                continue;
            }
            let rj = batch.r.row(yj);
            let text = batch.text_dot(yi, yj);
            anchor += w * (vi.dot(&rj) + gamma * text);
            let g = w * pair_coef / bf;
            gv.row_mut(i).scaled_add(g, &rj);
            gr.row_mut(yj).scaled_add(g, &vi);
            if gamma != 0.0 {
                gr.row_mut(yj).scaled_add(g * gamma, &batch.r.row(yi));
                gr.row_mut(yi).scaled_add(g * gamma, &rj);
            }
            grad_gamma += g * text;
        }
        value += pair_coef * anchor - vi.dot(&batch.r.row(yi));
        gv.row_mut(i).scaled_add(-1.0 / bf, &batch.r.row(yi));
        gr.row_mut(yi).scaled_add(-1.0 / bf, &vi);
    }
    Ok(LossValue { value: value / bf, grad_v: gv, grad_r: gr, grad_gamma })
}

/// Cross-modal ordinal pairwise loss: pulls each image to its label's text
/// feature and pushes it (and, through `gamma`, its label's text feature)
/// away from other labels' text features in proportion to label distance.
pub fn cop_loss(batch: &EncodedBatch, cfg: &LossConfig) -> Result<LossValue> {
    pairwise_ordinal(batch, cfg.gamma, cfg.weight_form)
}

/// [`cop_loss`] with `gamma = 0` and the text features held constant.
pub fn scop_loss(batch: &EncodedBatch, cfg: &LossConfig) -> Result<LossValue> {
    let mut out = pairwise_ordinal(batch, 0.0, cfg.weight_form)?;
    out.grad_r.fill(0.0);
    out.grad_gamma = 0.0;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

/// Weighted per-stage objective with its per-term breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLoss {
    pub total: f64,
    /// `(name, unweighted value)` for every active term.
    pub terms: Vec<(&'static str, f64)>,
    pub grad_v: Array2<f64>,
    pub grad_r: Array2<f64>,
}

/// Stage 1: `t2i·L_t2i + i2t·L_i2t + cop·L_cop`.
/// Stage 2: `ce·L_ce + scop·L_scop`.
/// Terms with zero weight are skipped entirely.
pub fn stage_loss(stage: Stage, batch: &EncodedBatch, cfg: &LossConfig) -> Result<StageLoss> {
    if batch.batch_size() == 0 {
        return Err(Error::EmptyBatch);
    }
    type Term = fn(&EncodedBatch, &LossConfig) -> Result<LossValue>;
    let plan: Vec<(&'static str, f64, Term)> = match stage {
        Stage::One => vec![
            ("t2i", cfg.stage1.t2i, |b, c| asym_contrastive_t2i(b, c.tau)),
            ("i2t", cfg.stage1.i2t, |b, c| asym_contrastive_i2t(b, c.tau, c.i2t_denominator)),
            ("cop", cfg.stage1.cop, cop_loss),
        ],
        Stage::Two => vec![("ce", cfg.stage2.ce, |b, c| ce_loss(b, c.tau)), ("scop", cfg.stage2.scop, scop_loss)],
    };
    let (mut gv, mut gr) = batch.zero_grads();
    let mut total = 0.0;
    let mut terms = Vec::new();
    for (name, weight, f) in plan {
        if weight == 0.0 {
            continue;
        }
        let l = f(batch, cfg)?;
        total += weight * l.value;
        gv.scaled_add(weight, &l.grad_v);
        gr.scaled_add(weight, &l.grad_r);
        terms.push((name, l.value));
    }
    Ok(StageLoss { total, terms, grad_v: gv, grad_r: gr })
}
