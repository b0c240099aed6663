//! l∞ projected gradient descent.
//!
//! Threat Model-I attacks maximize cross-entropy through encoder and
//! classifier. Threat Model-II attacks maximize a contrastive loss between
//! the clean and the perturbed batch through encoder and projection head; the
//! classifier is never bound onto their tapes, which [`AttackStats`] records.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::ViewBatch;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, nt_xent, supcon};
use crate::models::{Bind, ModelBundle, Parts};
use crate::rng::{rng_from, Rng};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DrivingLoss {
    Ce,
    Cl,
    Scl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ThreatModel {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "II")]
    II,
}

impl fmt::Display for ThreatModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThreatModel::I => "I",
            ThreatModel::II => "II",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    pub random_start: bool,
    pub driving_loss: DrivingLoss,
    pub clamp: Option<(f64, f64)>,
    /// Temperature of a contrastive driving loss; `None` takes the loss
    /// default.
    pub temperature: Option<f64>,
}

/// Default step size: `2.5 * epsilon / steps`.
pub fn default_step_size(epsilon: f64, steps: usize) -> f64 {
    if steps == 0 {
        epsilon
    } else {
        2.5 * epsilon / steps as f64
    }
}

impl AttackSpec {
    pub fn new(epsilon: f64, steps: usize, driving_loss: DrivingLoss, random_start: bool) -> Self {
        AttackSpec {
            epsilon,
            step_size: default_step_size(epsilon, steps),
            steps,
            random_start,
            driving_loss,
            clamp: None,
            temperature: None,
        }
    }

    /// Training-time attack: no random start.
    pub fn training(epsilon: f64, steps: usize, driving_loss: DrivingLoss) -> Self {
        AttackSpec::new(epsilon, steps, driving_loss, false)
    }

    /// Evaluation attack: random start.
    pub fn evaluation(epsilon: f64, steps: usize, driving_loss: DrivingLoss) -> Self {
        AttackSpec::new(epsilon, steps, driving_loss, true)
    }

    pub fn with_clamp(mut self, clamp: Option<(f64, f64)>) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn with_temperature(mut self, tau: Option<f64>) -> Self {
        self.temperature = tau;
        self
    }

    pub fn threat_model(&self) -> ThreatModel {
        match self.driving_loss {
            DrivingLoss::Ce => ThreatModel::I,
            DrivingLoss::Cl | DrivingLoss::Scl => ThreatModel::II,
        }
    }

    pub fn tau(&self) -> f64 {
        self.temperature.unwrap_or(match self.driving_loss {
            DrivingLoss::Scl => 0.1,
            _ => 0.5,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("attack epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!("attack step size must be finite and >= 0, got {}", self.step_size)));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo <= hi) {
                return Err(Error::invalid(format!("clamp range ({lo}, {hi}) is empty")));
            }
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0) {
                return Err(Error::invalid("attack temperature must be positive"));
            }
        }
        Ok(())
    }
}

/// Gradient-query counts of one attack.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackStats {
    pub gradient_queries: u64,
    pub classifier_queries: u64,
}

impl AttackStats {
    pub fn merge(&mut self, other: AttackStats) {
        self.gradient_queries += other.gradient_queries;
        self.classifier_queries += other.classifier_queries;
    }
}

/// Clips `x` into `[x0 - eps, x0 + eps]`, then into the clamp box.
pub fn project_linf(x0: &Tensor, x: &Tensor, epsilon: f64, clamp: Option<(f64, f64)>) -> Result<Tensor> {
    if x0.shape() != x.shape() {
        return Err(Error::shape("project_linf", format!("{:?} vs {:?}", x0.shape(), x.shape())));
    }
    let data = x0
        .data()
        .iter()
        .zip(x.data())
        .map(|(&c, &v)| {
            let v = v.clamp(c - epsilon, c + epsilon);
            match clamp {
                Some((lo, hi)) => v.clamp(lo, hi),
                None => v,
            }
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// PGD on an arbitrary driving loss given by its input gradient.
pub fn pgd_with<F>(x: &Tensor, spec: &AttackSpec, rng: &mut Rng, mut grad: F) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    spec.validate()?;
    let mut adv = if spec.random_start && spec.epsilon > 0.0 {
        let noisy: Vec<f64> = x
            .data()
            .iter()
            .map(|&v| v + rng.random_range(-spec.epsilon..=spec.epsilon))
            .collect();
        project_linf(x, &Tensor::new(x.shape().to_vec(), noisy)?, spec.epsilon, spec.clamp)?
    } else {
        x.clone()
    };
    for _ in 0..spec.steps {
        let g = grad(&adv)?;
        if g.shape() != x.shape() {
            return Err(Error::shape("pgd", format!("gradient {:?} for input {:?}", g.shape(), x.shape())));
        }
        g.check_finite("pgd gradient")?;
        let stepped: Vec<f64> = adv
            .data()
            .iter()
            .zip(g.data())
            .map(|(&v, &gi)| v + spec.step_size * sign(gi))
            .collect();
        adv = project_linf(x, &Tensor::from_parts(x.shape().to_vec(), stepped), spec.epsilon, spec.clamp)?;
    }
    Ok(adv)
}

/// Driving loss of `spec` at `x_eval` for the clean batch `batch.x`, with
/// its gradient with respect to `x_eval` when `with_grad` is set.
fn driving(
    model: &ModelBundle,
    batch: &ViewBatch,
    spec: &AttackSpec,
    clean_proj: Option<&Tensor>,
    x_eval: &Tensor,
    with_grad: bool,
) -> Result<(f64, Option<Tensor>)> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x_eval.clone(), with_grad);
    let loss = match spec.driving_loss {
        DrivingLoss::Ce => {
            let y = batch.y.as_deref().ok_or(Error::Missing("labels for a cross-entropy attack"))?;
            let bound = model.bind(&mut tape, Parts::new(Bind::Frozen, Bind::Skip, Bind::Frozen))?;
            let (rep, _) = bound.encode(&mut tape, xv, false)?;
            let logits = bound.classify(&mut tape, rep)?;
            cross_entropy(&mut tape, logits, y)?
        }
        DrivingLoss::Cl | DrivingLoss::Scl => {
            let bound = model.bind(&mut tape, Parts::new(Bind::Frozen, Bind::Frozen, Bind::Skip))?;
            let z_clean = match clean_proj {
                Some(z) => tape.constant(z.clone()),
                None => {
                    let c = tape.constant(batch.x.clone());
                    let (r, _) = bound.encode(&mut tape, c, false)?;
                    let p = bound.project(&mut tape, r)?;
                    tape.l2_normalize_rows(p)?
                }
            };
            let (rep, _) = bound.encode(&mut tape, xv, false)?;
            let p = bound.project(&mut tape, rep)?;
            let z_adv = tape.l2_normalize_rows(p)?;
            if spec.driving_loss == DrivingLoss::Cl {
                nt_xent(&mut tape, z_clean, z_adv, spec.tau())?
            } else {
                let y = batch.y.as_deref().ok_or(Error::Missing("labels for an SCL attack"))?;
                let z = tape.concat_rows(&[z_clean, z_adv])?;
                let both: Vec<usize> = y.iter().chain(y).copied().collect();
                supcon(&mut tape, z, &both, spec.tau())?
            }
        }
    };
    let value = tape.value(loss).item();
    if !with_grad {
        return Ok((value, None));
    }
    let grads = tape.backward(loss)?;
    let g = grads.get(xv).cloned().unwrap_or_else(|| Tensor::zeros(x_eval.shape()));
    Ok((value, Some(g)))
}

fn clean_projection(model: &ModelBundle, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, Parts::new(Bind::Frozen, Bind::Frozen, Bind::Skip))?;
    let c = tape.constant(x.clone());
    let (r, _) = bound.encode(&mut tape, c, false)?;
    let p = bound.project(&mut tape, r)?;
    let z = tape.l2_normalize_rows(p)?;
    Ok(tape.value(z).clone())
}

/// Value of the driving loss at `x_eval` (the clean batch is `batch.x`).
pub fn driving_loss_value(model: &ModelBundle, batch: &ViewBatch, spec: &AttackSpec, x_eval: &Tensor) -> Result<f64> {
    Ok(driving(model, batch, spec, None, x_eval, false)?.0)
}

/// PGD against `model` on `batch.x` with the spec's driving loss.
pub fn pgd(model: &ModelBundle, batch: &ViewBatch, spec: &AttackSpec, seed: u64) -> Result<(Tensor, AttackStats)> {
    spec.validate()?;
    batch.validate()?;
    let mut stats = AttackStats::default();
    let clean_proj = match spec.driving_loss {
        DrivingLoss::Ce => None,
        _ if spec.steps == 0 => None,
        _ => Some(clean_projection(model, &batch.x)?),
    };
    if spec.driving_loss == DrivingLoss::Ce && batch.y.is_none() {
        return Err(Error::Missing("labels for a cross-entropy attack"));
    }
    let mut rng = rng_from(seed);
    let adv = pgd_with(&batch.x, spec, &mut rng, |x_eval| {
        let (_, g) = driving(model, batch, spec, clean_proj.as_ref(), x_eval, true)?;
        stats.gradient_queries += 1;
        if spec.driving_loss == DrivingLoss::Ce {
            stats.classifier_queries += 1;
        }
        Ok(g.expect("gradient requested"))
    })?;
    Ok((adv, stats))
}

/// Threat Model-II attack: a contrastive driving loss through encoder and
/// projection head only.
pub fn threat_model_ii_attack(
    model: &ModelBundle,
    batch: &ViewBatch,
    spec: &AttackSpec,
    seed: u64,
) -> Result<(Tensor, AttackStats)> {
    if spec.driving_loss == DrivingLoss::Ce {
        return Err(Error::invalid("Threat Model-II attacks are driven by CL or SCL, not CE"));
    }
    pgd(model, batch, spec, seed)
}
