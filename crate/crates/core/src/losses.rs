//! Training objectives.
//!
//! The primitive losses ([`nt_xent`], [`supcon`], [`cross_entropy`]) work on
//! tape variables. The model-level objectives bind a [`ModelBundle`] onto a
//! fresh tape with exactly the parts a phase may update, so the returned
//! gradients can only ever reach those parts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ViewBatch;
use crate::error::{Error, Result};
use crate::models::{Bind, BoundModel, ModelBundle, Parts};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Learning scheme. Combined schemes train one shared encoder with an
/// equal-weight (configurable) sum of their constituents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "CL")]
    Cl,
    #[serde(rename = "SCL")]
    Scl,
    #[serde(rename = "SL")]
    Sl,
    #[serde(rename = "SL+CL")]
    SlCl,
    #[serde(rename = "CL+SCL")]
    ClScl,
    #[serde(rename = "SL+SCL")]
    SlScl,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [Scheme::Cl, Scheme::Scl, Scheme::Sl, Scheme::SlCl, Scheme::ClScl, Scheme::SlScl];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Cl => "CL",
            Scheme::Scl => "SCL",
            Scheme::Sl => "SL",
            Scheme::SlCl => "SL+CL",
            Scheme::ClScl => "CL+SCL",
            Scheme::SlScl => "SL+SCL",
        }
    }

    pub fn uses_ce(self) -> bool {
        matches!(self, Scheme::Sl | Scheme::SlCl | Scheme::SlScl)
    }

    pub fn uses_cl(self) -> bool {
        matches!(self, Scheme::Cl | Scheme::SlCl | Scheme::ClScl)
    }

    pub fn uses_scl(self) -> bool {
        matches!(self, Scheme::Scl | Scheme::ClScl | Scheme::SlScl)
    }

    pub fn is_combined(self) -> bool {
        matches!(self, Scheme::SlCl | Scheme::ClScl | Scheme::SlScl)
    }

    /// Whether the scheme has a separate pretraining phase.
    pub fn has_pretraining(self) -> bool {
        self != Scheme::Sl
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown scheme {s:?}")))
    }
}

/// Per-constituent weights for combined schemes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComboWeights {
    pub sl: f64,
    pub cl: f64,
    pub scl: f64,
}

impl Default for ComboWeights {
    fn default() -> Self {
        ComboWeights {
            sl: 1.0,
            cl: 1.0,
            scl: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub scheme: Scheme,
    #[serde(default = "default_tau_cl")]
    pub tau_cl: f64,
    #[serde(default = "default_tau_scl")]
    pub tau_scl: f64,
    /// Weight of the clean (view-pair) term.
    #[serde(default = "default_half")]
    pub alpha: f64,
    /// Weight of the adversarial term.
    #[serde(default = "default_half")]
    pub beta: f64,
    #[serde(default)]
    pub combo: ComboWeights,
}

fn default_tau_cl() -> f64 {
    0.5
}
fn default_tau_scl() -> f64 {
    0.1
}
fn default_half() -> f64 {
    0.5
}

impl LossConfig {
    pub fn new(scheme: Scheme) -> Self {
        LossConfig {
            scheme,
            tau_cl: default_tau_cl(),
            tau_scl: default_tau_scl(),
            alpha: default_half(),
            beta: default_half(),
            combo: ComboWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_cl > 0.0 && self.tau_scl > 0.0) {
            return Err(Error::invalid("temperatures must be positive"));
        }
        let ws = [self.alpha, self.beta, self.combo.sl, self.combo.cl, self.combo.scl];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Which contrastive objective drives a term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Contrast {
    Cl,
    Scl,
}

const UNIT_TOL: f64 = 1e-6;

fn check_unit_rows(op: &'static str, t: &Tensor) -> Result<()> {
    for i in 0..t.rows() {
        let norm = t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!("{op}: row {i} has norm {norm}, expected unit rows")));
        }
    }
    Ok(())
}

/// Row sums of `s * weights` as an `n x 1` column.
fn weighted_row_sums(tape: &mut Tape, s: Var, weights: Tensor) -> Result<Var> {
    let n = weights.cols();
    let w = tape.constant(weights);
    let sw = tape.mul(s, w)?;
    let ones = tape.constant(Tensor::filled(&[n, 1], 1.0));
    tape.matmul(sw, ones)
}

fn off_diagonal(m: usize) -> Vec<bool> {
    (0..m * m).map(|k| k / m != k % m).collect()
}

/// NT-Xent over `2n` anchors. Row `i` of `z_a` and row `i` of `z_b` form a
/// positive pair; every other embedding is a negative. Inputs must have unit
/// rows.
pub fn nt_xent(tape: &mut Tape, z_a: Var, z_b: Var, tau: f64) -> Result<Var> {
    if tau <= 0.0 {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let (sa, sb) = (tape.value(z_a).shape(), tape.value(z_b).shape());
    if sa != sb || sa.len() != 2 || sa[0] == 0 {
        return Err(Error::shape("nt_xent", format!("{sa:?} vs {sb:?}")));
    }
    check_unit_rows("nt_xent", tape.value(z_a))?;
    check_unit_rows("nt_xent", tape.value(z_b))?;
    let n = sa[0];
    let m = 2 * n;
    let z = tape.concat_rows(&[z_a, z_b])?;
    let sim = tape.matmul_t(z, z)?;
    let s = tape.scale(sim, 1.0 / tau)?;
    let lse = tape.logsumexp_rows(s, Some(off_diagonal(m)))?;
    let mut pos = Tensor::zeros(&[m, m]);
    for i in 0..m {
        pos.data_mut()[i * m + (i + n) % m] = 1.0;
    }
    let pos_rows = weighted_row_sums(tape, s, pos)?;
    let per_anchor = tape.sub(lse, pos_rows)?;
    tape.mean(per_anchor)
}

/// Supervised contrastive loss over `m` embeddings with labels. Anchors
/// without any same-label partner are left out of the mean.
pub fn supcon(tape: &mut Tape, z: Var, labels: &[usize], tau: f64) -> Result<Var> {
    if tau <= 0.0 {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let shape = tape.value(z).shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape("supcon", format!("{shape:?} with {} labels", labels.len())));
    }
    let m = shape[0];
    if m < 2 {
        return Err(Error::invalid("supcon needs at least 2 embeddings"));
    }
    check_unit_rows("supcon", tape.value(z))?;
    let positives: Vec<usize> = (0..m)
        .map(|i| (0..m).filter(|&p| p != i && labels[p] == labels[i]).count())
        .collect();
    let valid = positives.iter().filter(|&&c| c > 0).count();
    if valid == 0 {
        return Err(Error::NoPositives);
    }
    let mut pos = Tensor::zeros(&[m, m]);
    let mut anchor_w = Tensor::zeros(&[m, 1]);
    for i in 0..m {
        if positives[i] == 0 {
            continue;
        }
        anchor_w.data_mut()[i] = 1.0 / valid as f64;
        for p in 0..m {
            if p != i && labels[p] == labels[i] {
                pos.data_mut()[i * m + p] = 1.0 / positives[i] as f64;
            }
        }
    }
    let sim = tape.matmul_t(z, z)?;
    let s = tape.scale(sim, 1.0 / tau)?;
    let lse = tape.logsumexp_rows(s, Some(off_diagonal(m)))?;
    let pos_rows = weighted_row_sums(tape, s, pos)?;
    let per_anchor = tape.sub(lse, pos_rows)?;
    let w = tape.constant(anchor_w);
    let weighted = tape.mul(per_anchor, w)?;
    tape.sum(weighted)
}

/// Mean of `-log softmax(logits)[y]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.value(logits).shape();
    if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
        return Err(Error::shape("cross_entropy", format!("{shape:?} with {} labels", labels.len())));
    }
    let (n, c) = (shape[0], shape[1]);
    if c < 2 {
        return Err(Error::invalid("cross_entropy needs at least 2 classes"));
    }
    let mut onehot = Tensor::zeros(&[n, c]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::invalid(format!("label {y} out of range for {c} classes")));
        }
        onehot.data_mut()[i * c + y] = 1.0;
    }
    let lse = tape.logsumexp_rows(logits, None)?;
    let picked = weighted_row_sums(tape, logits, onehot)?;
    let per = tape.sub(lse, picked)?;
    tape.mean(per)
}

/// Projects two batches through the head, normalizes them, and applies the
/// chosen contrastive loss with `(a_i, b_i)` as positive pairs.
pub fn contrastive_pair(
    tape: &mut Tape,
    bound: &BoundModel<'_>,
    kind: Contrast,
    a: Var,
    b: Var,
    labels: Option<&[usize]>,
    cfg: &LossConfig,
) -> Result<Var> {
    let (ra, _) = bound.encode(tape, a, false)?;
    let (rb, _) = bound.encode(tape, b, false)?;
    let za = bound.project(tape, ra)?;
    let zb = bound.project(tape, rb)?;
    contrastive_on_projections(tape, kind, za, zb, labels, cfg)
}

/// As [`contrastive_pair`], starting from head outputs.
pub fn contrastive_on_projections(
    tape: &mut Tape,
    kind: Contrast,
    za: Var,
    zb: Var,
    labels: Option<&[usize]>,
    cfg: &LossConfig,
) -> Result<Var> {
    let za = tape.l2_normalize_rows(za)?;
    let zb = tape.l2_normalize_rows(zb)?;
    match kind {
        Contrast::Cl => nt_xent(tape, za, zb, cfg.tau_cl),
        Contrast::Scl => {
            let y = labels.ok_or(Error::Missing("labels for the supervised contrastive loss"))?;
            let z = tape.concat_rows(&[za, zb])?;
            let both: Vec<usize> = y.iter().chain(y).copied().collect();
            supcon(tape, z, &both, cfg.tau_scl)
        }
    }
}

/// Adds `weight * term` to an optional running sum.
fn accumulate(tape: &mut Tape, acc: Option<Var>, term: Var, weight: f64) -> Result<Option<Var>> {
    let t = if weight == 1.0 { term } else { tape.scale(term, weight)? };
    Ok(Some(match acc {
        Some(a) => tape.add(a, t)?,
        None => t,
    }))
}

fn finish(tape: &mut Tape, acc: Option<Var>) -> Var {
    acc.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0)))
}

/// A loss on a tape together with the binding that produced it.
pub struct Objective<'m> {
    pub loss: Var,
    pub bound: BoundModel<'m>,
}

fn contrast_of(scheme: Scheme) -> Result<Contrast> {
    match scheme {
        Scheme::Cl => Ok(Contrast::Cl),
        Scheme::Scl => Ok(Contrast::Scl),
        other => Err(Error::invalid(format!("pretraining loss is defined for CL and SCL, not {other}"))),
    }
}

/// `alpha * L(x', x'') + beta * L(x, x_adv)` for the CL or SCL scheme, with
/// gradients reaching the encoder and projection head only. A zero weight
/// drops its term, so `beta = 0` needs no adversarial batch.
pub fn pretrain_objective<'m>(
    tape: &mut Tape,
    model: &'m ModelBundle,
    batch: &ViewBatch,
    cfg: &LossConfig,
) -> Result<Objective<'m>> {
    cfg.validate()?;
    let kind = contrast_of(cfg.scheme)?;
    let labels = match kind {
        Contrast::Scl => Some(batch.y.as_deref().ok_or(Error::Missing("labels for SCL pretraining"))?),
        Contrast::Cl => None,
    };
    let bound = model.bind(tape, Parts::new(Bind::Trainable, Bind::Trainable, Bind::Skip))?;
    let mut acc = None;
    if cfg.alpha > 0.0 {
        let (v1, v2) = batch.views()?;
        let a = tape.constant(v1.clone());
        let b = tape.constant(v2.clone());
        let term = contrastive_pair(tape, &bound, kind, a, b, labels, cfg)?;
        acc = accumulate(tape, acc, term, cfg.alpha)?;
    }
    if cfg.beta > 0.0 {
        let adv = batch.x_adv.as_ref().ok_or(Error::Missing("x_adv for the adversarial term"))?;
        let a = tape.constant(batch.x.clone());
        let b = tape.constant(adv.clone());
        let term = contrastive_pair(tape, &bound, kind, a, b, labels, cfg)?;
        acc = accumulate(tape, acc, term, cfg.beta)?;
    }
    let loss = finish(tape, acc);
    Ok(Objective { loss, bound })
}

pub fn pretrain_loss(model: &ModelBundle, batch: &ViewBatch, cfg: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let obj = pretrain_objective(&mut tape, model, batch, cfg)?;
    Ok(tape.value(obj.loss).item())
}

/// Fine-tuning regimes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    /// Clean cross-entropy, classifier only.
    Standard,
    /// `alpha * CE(x) + beta * CE(x_adv)`, classifier only.
    PartialAt,
    /// Same sum, encoder and classifier.
    FullAt,
}

pub fn finetune_objective<'m>(
    tape: &mut Tape,
    model: &'m ModelBundle,
    batch: &ViewBatch,
    cfg: &LossConfig,
    mode: FinetuneMode,
) -> Result<Objective<'m>> {
    cfg.validate()?;
    let encoder = match (mode, model.freeze_encoder) {
        (FinetuneMode::Standard | FinetuneMode::PartialAt, true) => Bind::Frozen,
        (FinetuneMode::FullAt, false) => Bind::Trainable,
        (m, frozen) => {
            return Err(Error::invalid(format!(
                "fine-tuning mode {m:?} contradicts freeze_encoder = {frozen}"
            )))
        }
    };
    let y = batch.y.as_deref().ok_or(Error::Missing("labels for fine-tuning"))?;
    let bound = model.bind(tape, Parts::new(encoder, Bind::Skip, Bind::Trainable))?;
    let ce_on = |tape: &mut Tape, x: &Tensor| -> Result<Var> {
        let xv = tape.constant(x.clone());
        let (rep, _) = bound.encode(tape, xv, false)?;
        let logits = bound.classify(tape, rep)?;
        cross_entropy(tape, logits, y)
    };
    let loss = match mode {
        FinetuneMode::Standard => ce_on(tape, &batch.x)?,
        FinetuneMode::PartialAt | FinetuneMode::FullAt => {
            let mut acc = None;
            if cfg.alpha > 0.0 {
                let t = ce_on(tape, &batch.x)?;
                acc = accumulate(tape, acc, t, cfg.alpha)?;
            }
            if cfg.beta > 0.0 {
                let adv = batch.x_adv.as_ref().ok_or(Error::Missing("x_adv for adversarial fine-tuning"))?;
                let t = ce_on(tape, adv)?;
                acc = accumulate(tape, acc, t, cfg.beta)?;
            }
            finish(tape, acc)
        }
    };
    Ok(Objective { loss, bound })
}

pub fn finetune_loss(model: &ModelBundle, batch: &ViewBatch, cfg: &LossConfig, mode: FinetuneMode) -> Result<f64> {
    let mut tape = Tape::new();
    let obj = finetune_objective(&mut tape, model, batch, cfg, mode)?;
    Ok(tape.value(obj.loss).item())
}

/// Supervised end-to-end objective for the SL scheme: `CE(x)` when clean,
/// `alpha * CE(x) + beta * CE(x_adv)` when the batch carries `x_adv`.
pub fn supervised_objective<'m>(
    tape: &mut Tape,
    model: &'m ModelBundle,
    batch: &ViewBatch,
    cfg: &LossConfig,
) -> Result<Objective<'m>> {
    cfg.validate()?;
    let y = batch.y.as_deref().ok_or(Error::Missing("labels for supervised training"))?;
    let bound = model.bind(tape, Parts::new(Bind::Trainable, Bind::Skip, Bind::Trainable))?;
    let ce_on = |tape: &mut Tape, x: &Tensor| -> Result<Var> {
        let xv = tape.constant(x.clone());
        let (rep, _) = bound.encode(tape, xv, false)?;
        let logits = bound.classify(tape, rep)?;
        cross_entropy(tape, logits, y)
    };
    let loss = match &batch.x_adv {
        None => ce_on(tape, &batch.x)?,
        Some(adv) => {
            let mut acc = None;
            if cfg.alpha > 0.0 {
                let t = ce_on(tape, &batch.x)?;
                acc = accumulate(tape, acc, t, cfg.alpha)?;
            }
            if cfg.beta > 0.0 {
                let t = ce_on(tape, adv)?;
                acc = accumulate(tape, acc, t, cfg.beta)?;
            }
            finish(tape, acc)
        }
    };
    Ok(Objective { loss, bound })
}

/// Joint loss of a combined scheme in one graph: CE through the classifier
/// on the clean batch, contrastive terms through the shared head on the two
/// views, each scaled by its [`ComboWeights`] entry.
pub fn combined_objective<'m>(
    tape: &mut Tape,
    model: &'m ModelBundle,
    batch: &ViewBatch,
    cfg: &LossConfig,
) -> Result<Objective<'m>> {
    cfg.validate()?;
    let s = cfg.scheme;
    if !s.is_combined() {
        return Err(Error::invalid(format!("{s} is not a combined scheme")));
    }
    let needs_labels = s.uses_ce() || s.uses_scl();
    let y = if needs_labels {
        Some(batch.y.as_deref().ok_or(Error::Missing("labels for a supervised constituent"))?)
    } else {
        None
    };
    let classifier = if s.uses_ce() { Bind::Trainable } else { Bind::Skip };
    let bound = model.bind(tape, Parts::new(Bind::Trainable, Bind::Trainable, classifier))?;
    let mut acc = None;
    if s.uses_ce() && cfg.combo.sl > 0.0 {
        let x = tape.constant(batch.x.clone());
        let (rep, _) = bound.encode(tape, x, false)?;
        let logits = bound.classify(tape, rep)?;
        let t = cross_entropy(tape, logits, y.expect("checked above"))?;
        acc = accumulate(tape, acc, t, cfg.combo.sl)?;
    }
    let wants_cl = s.uses_cl() && cfg.combo.cl > 0.0;
    let wants_scl = s.uses_scl() && cfg.combo.scl > 0.0;
    if wants_cl || wants_scl {
        let (v1, v2) = batch.views()?;
        let a = tape.constant(v1.clone());
        let b = tape.constant(v2.clone());
        let (ra, _) = bound.encode(tape, a, false)?;
        let (rb, _) = bound.encode(tape, b, false)?;
        let za = bound.project(tape, ra)?;
        let zb = bound.project(tape, rb)?;
        if wants_cl {
            let t = contrastive_on_projections(tape, Contrast::Cl, za, zb, None, cfg)?;
            acc = accumulate(tape, acc, t, cfg.combo.cl)?;
        }
        if wants_scl {
            let t = contrastive_on_projections(tape, Contrast::Scl, za, zb, y, cfg)?;
            acc = accumulate(tape, acc, t, cfg.combo.scl)?;
        }
    }
    let loss = finish(tape, acc);
    Ok(Objective { loss, bound })
}

pub fn combined_scheme_loss(model: &ModelBundle, batch: &ViewBatch, cfg: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let obj = combined_objective(&mut tape, model, batch, cfg)?;
    Ok(tape.value(obj.loss).item())
}

/// Value-only NT-Xent on unit-row matrices.
pub fn nt_xent_value(z_a: &Tensor, z_b: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(z_a.clone());
    let b = tape.constant(z_b.clone());
    let l = nt_xent(&mut tape, a, b, tau)?;
    Ok(tape.value(l).item())
}

pub fn supcon_value(z: &Tensor, labels: &[usize], tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(z.clone());
    let l = supcon(&mut tape, v, labels, tau)?;
    Ok(tape.value(l).item())
}

pub fn cross_entropy_value(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(logits.clone());
    let l = cross_entropy(&mut tape, v, labels)?;
    Ok(tape.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(rows: &[&[f64]]) -> Tensor {
        let rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(|v| v / n).collect()
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn single_pair_nt_xent_is_zero() {
        let a = unit(&[&[0.3, -0.7, 0.2]]);
        let b = unit(&[&[-0.9, 0.1, 0.4]]);
        assert_eq!(nt_xent_value(&a, &b, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn two_orthogonal_pairs() {
        let z = unit(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let expected = ((1f64.exp() + 2.0) / 1f64.exp()).ln();
        let got = nt_xent_value(&z, &z, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
        assert!((got - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn nt_xent_rejects_bad_input() {
        let z = Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap();
        assert!(nt_xent_value(&z, &z, 1.0).is_err());
        let u = unit(&[&[1.0, 0.0]]);
        assert!(nt_xent_value(&u, &u, 0.0).is_err());
    }

    #[test]
    fn supcon_identical_same_class_is_ln3() {
        let z = unit(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        for tau in [0.1, 0.5, 2.0] {
            let v = supcon_value(&z, &[4, 4, 4, 4], tau).unwrap();
            assert!((v - 3f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn supcon_without_positives_errors() {
        let z = unit(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(supcon_value(&z, &[0, 1], 0.1), Err(Error::NoPositives)));
    }

    #[test]
    fn uniform_logits() {
        let l = Tensor::zeros(&[3, 10]);
        let v = cross_entropy_value(&l, &[0, 4, 9]).unwrap();
        assert!((v - 10f64.ln()).abs() < 1e-12);
        assert!(cross_entropy_value(&l, &[0, 4, 10]).is_err());
    }

    #[test]
    fn cross_entropy_decreases_in_true_logit() {
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let l = Tensor::from_rows(&[vec![f64::from(k), 0.5, -0.5]]).unwrap();
            let v = cross_entropy_value(&l, &[0]).unwrap();
            assert!(v < prev && v >= 0.0);
            prev = v;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn scheme_strings() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("XL".parse::<Scheme>().is_err());
    }
}
