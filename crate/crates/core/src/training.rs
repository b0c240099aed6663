//! Scenario runner: ST, AT, Partial-AT and Full-AT over any scheme.
//!
//! | scenario   | pretraining        | fine-tuning                        |
//! |------------|--------------------|------------------------------------|
//! | ST         | clean              | clean CE, encoder frozen           |
//! | AT         | adversarial        | clean CE, encoder frozen           |
//! | Partial-AT | adversarial        | clean + adversarial CE, frozen     |
//! | Full-AT    | adversarial        | clean + adversarial CE, end to end |
//!
//! The SL scheme has no pretraining phase and trains encoder and classifier
//! together for `pretrain_epochs`; its adversarial scenarios all use the
//! clean + adversarial CE objective. Combined schemes are trained jointly
//! under ST only, followed by a linear fine-tune.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attacks::{pgd, AttackStats, AttackSpec, DrivingLoss};
use crate::data::{batch_indices, make_views, AugmentSpec, Dataset, ViewBatch};
use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::losses::{
    combined_objective, finetune_objective, pretrain_objective, supervised_objective, FinetuneMode, LossConfig,
    Objective, Scheme,
};
use crate::models::{init_model, EncoderConfig, ModelBundle};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{derive_seed, rng_for};
use crate::tape::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "ST")]
    St,
    #[serde(rename = "AT")]
    At,
    #[serde(rename = "Partial-AT")]
    PartialAt,
    #[serde(rename = "Full-AT")]
    FullAt,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::St, Scenario::At, Scenario::PartialAt, Scenario::FullAt];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::St => "ST",
            Scenario::At => "AT",
            Scenario::PartialAt => "Partial-AT",
            Scenario::FullAt => "Full-AT",
        }
    }

    pub fn is_adversarial(self) -> bool {
        self != Scenario::St
    }

    fn finetune_mode(self) -> FinetuneMode {
        match self {
            Scenario::St | Scenario::At => FinetuneMode::Standard,
            Scenario::PartialAt => FinetuneMode::PartialAt,
            Scenario::FullAt => FinetuneMode::FullAt,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown scenario {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub encoder: EncoderConfig,
    pub head_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub loss: LossConfig,
    pub model: ModelSpec,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Minibatch size of phases without attacks.
    pub batch_size: usize,
    /// Minibatch size of phases that generate adversarial examples.
    pub adv_batch_size: usize,
    pub optimizer: AdamConfig,
    /// Budget and schedule of training attacks. The driving loss is chosen
    /// per phase; `clamp = None` falls back to the dataset's range.
    pub train_attack: AttackSpec,
    pub augment: AugmentSpec,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, scheme: Scheme, model: ModelSpec, augment: AugmentSpec, seed: u64) -> Self {
        ScenarioSpec {
            scenario,
            loss: LossConfig::new(scheme),
            model,
            pretrain_epochs: 50,
            finetune_epochs: 30,
            batch_size: 128,
            adv_batch_size: 256,
            optimizer: AdamConfig::default(),
            train_attack: AttackSpec::training(8.0 / 255.0, 5, DrivingLoss::Ce),
            augment,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.train_attack.validate()?;
        self.augment.validate()?;
        self.model.encoder.validate()?;
        if self.batch_size == 0 || self.adv_batch_size == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        if self.model.head_dim == 0 {
            return Err(Error::invalid("head_dim must be positive"));
        }
        if self.scenario.is_adversarial() && !(self.train_attack.epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "scenario {} needs a training attack with epsilon > 0",
                self.scenario
            )));
        }
        if self.loss.scheme.is_combined() && self.scenario != Scenario::St {
            return Err(Error::invalid(format!(
                "combined scheme {} is only defined under ST",
                self.loss.scheme
            )));
        }
        Ok(())
    }

    /// Stable hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("spec serializes").as_bytes())
    }

    fn attack_for(&self, driving: DrivingLoss, data: &Dataset) -> AttackSpec {
        let tau = match driving {
            DrivingLoss::Cl => Some(self.loss.tau_cl),
            DrivingLoss::Scl => Some(self.loss.tau_scl),
            DrivingLoss::Ce => None,
        };
        AttackSpec {
            driving_loss: driving,
            clamp: self.train_attack.clamp.or(data.clamp_range()),
            temperature: tau,
            ..self.train_attack
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
    Supervised,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
            Phase::Supervised => "supervised",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
}

/// Inputs and settings sufficient to rerun a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec_hash: String,
    pub seed: u64,
    pub dataset_name: String,
    pub dataset_fingerprint: String,
    pub spec: ScenarioSpec,
    pub wall_clock_s: f64,
    pub crate_version: String,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub model: ModelBundle,
    /// Model at the end of pretraining, for two-phase schemes.
    pub pretrained: Option<ModelBundle>,
    pub epoch_losses: Vec<EpochLoss>,
    pub step_losses: Vec<(Phase, f64)>,
    pub phases: Vec<Phase>,
    pub attack_calls: u64,
    pub attack_stats: AttackStats,
    /// Largest `|x_adv - x|` over every training attack.
    pub max_perturbation: f64,
    pub manifest: RunManifest,
}

impl RunRecord {
    fn empty(model: ModelBundle, spec: &ScenarioSpec, data: &Dataset) -> Self {
        RunRecord {
            model,
            pretrained: None,
            epoch_losses: Vec::new(),
            step_losses: Vec::new(),
            phases: Vec::new(),
            attack_calls: 0,
            attack_stats: AttackStats::default(),
            max_perturbation: 0.0,
            manifest: RunManifest {
                spec_hash: spec.hash(),
                seed: spec.seed,
                dataset_name: data.name.clone(),
                dataset_fingerprint: data.fingerprint(),
                spec: spec.clone(),
                wall_clock_s: 0.0,
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
            },
        }
    }

    fn absorb(&mut self, other: RunRecord) {
        self.model = other.model;
        self.epoch_losses.extend(other.epoch_losses);
        self.step_losses.extend(other.step_losses);
        self.phases.extend(other.phases);
        self.attack_calls += other.attack_calls;
        self.attack_stats.merge(other.attack_stats);
        self.max_perturbation = self.max_perturbation.max(other.max_perturbation);
    }

    /// `epoch,phase,loss` CSV of the per-epoch mean losses.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,phase,loss\n");
        for p in &self.epoch_losses {
            s.push_str(&format!("{},{},{}\n", p.epoch, p.phase.as_str(), p.loss));
        }
        s
    }

    pub fn write_loss_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.loss_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

fn diverged(phase: Phase, epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged(format!(
            "{} epoch {epoch} step {step}: non-finite value in {op}",
            phase.as_str()
        )),
        other => other,
    }
}

struct PhaseRun<'a> {
    phase: Phase,
    epochs: usize,
    batch_size: usize,
    data: &'a Dataset,
    seed: u64,
    /// Contrastive terms need the two augmented views.
    views: Option<&'a AugmentSpec>,
    attack: Option<AttackSpec>,
}

/// Shared epoch/minibatch loop. `objective` builds the loss for a prepared
/// batch; attacks and views are generated from the current parameters
/// before each step.
fn train_loop<O>(model: &mut ModelBundle, run: &PhaseRun<'_>, rec: &mut RunRecord, objective: O) -> Result<()>
where
    O: for<'m> Fn(&mut Tape, &'m ModelBundle, &ViewBatch) -> Result<Objective<'m>>,
{
    let params: Vec<&crate::tensor::Tensor> = model.params().into_iter().map(|(_, t)| t).collect();
    let mut opt = Adam::for_params(rec.manifest.spec.optimizer, params)?;
    let tag = run.phase.as_str();
    let mut step = 0usize;
    for epoch in 0..run.epochs {
        let mut rng = rng_for(run.seed, &format!("batches/{tag}"), epoch as u64);
        let mut total = 0.0;
        let mut counted = 0usize;
        for idx in batch_indices(run.data.len(), run.batch_size, &mut rng) {
            let mut batch = ViewBatch::from_dataset(run.data, &idx);
            if let Some(aug) = run.views {
                let s = derive_seed(run.seed, &format!("views/{tag}"), step as u64);
                let (a, b) = make_views(&batch.x, &run.data.sample_shape, aug, s)?;
                batch = batch.with_views(a, b);
            }
            if let Some(spec) = &run.attack {
                let s = derive_seed(run.seed, &format!("attack/{tag}"), step as u64);
                let (adv, stats) = pgd(model, &batch, spec, s).map_err(|e| diverged(run.phase, epoch, step, e))?;
                rec.attack_calls += 1;
                rec.attack_stats.merge(stats);
                rec.max_perturbation = rec.max_perturbation.max(adv.max_abs_diff(&batch.x));
                batch = batch.with_adv(adv);
            }
            let outcome = {
                let mut tape = Tape::new();
                match objective(&mut tape, model, &batch) {
                    Ok(obj) => {
                        let loss = tape.value(obj.loss).item();
                        let grads = tape.backward(obj.loss)?;
                        Ok(Some((loss, obj.bound.param_grads(&grads))))
                    }
                    // tiny batches can lack same-label pairs
                    Err(Error::NoPositives) => Ok(None),
                    Err(e) => Err(diverged(run.phase, epoch, step, e)),
                }
            };
            if let Some((loss, grads)) = outcome? {
                opt.step(model.params_mut(), &grads).map_err(|e| diverged(run.phase, epoch, step, e))?;
                rec.step_losses.push((run.phase, loss));
                total += loss;
                counted += 1;
            }
            step += 1;
        }
        let mean = if counted > 0 { total / counted as f64 } else { f64::NAN };
        if counted > 0 && !mean.is_finite() {
            return Err(Error::Diverged(format!("{tag} epoch {epoch}: mean loss {mean}")));
        }
        rec.epoch_losses.push(EpochLoss {
            epoch,
            phase: run.phase,
            loss: mean,
        });
    }
    rec.phases.push(run.phase);
    Ok(())
}

/// Pretraining of encoder and projection head. CL and SCL use the two-term
/// objective (the adversarial term only in adversarial scenarios); combined
/// schemes use their joint objective.
pub fn pretrain(model: &mut ModelBundle, data: &Dataset, spec: &ScenarioSpec) -> Result<RunRecord> {
    spec.validate()?;
    let scheme = spec.loss.scheme;
    if !scheme.has_pretraining() {
        return Err(Error::invalid("the SL scheme has no pretraining phase"));
    }
    model.freeze_encoder = false;
    let mut rec = RunRecord::empty(model.clone(), spec, data);
    let adversarial = spec.scenario.is_adversarial() && !scheme.is_combined();
    let mut cfg = spec.loss;
    if !adversarial {
        cfg.beta = 0.0;
    }
    let driving = if scheme == Scheme::Scl { DrivingLoss::Scl } else { DrivingLoss::Cl };
    let run = PhaseRun {
        phase: Phase::Pretrain,
        epochs: spec.pretrain_epochs,
        batch_size: if adversarial { spec.adv_batch_size } else { spec.batch_size },
        data,
        seed: spec.seed,
        views: Some(&spec.augment),
        attack: adversarial.then(|| spec.attack_for(driving, data)),
    };
    if scheme.is_combined() {
        train_loop(model, &run, &mut rec, |t, m, b| combined_objective(t, m, b, &cfg))?;
    } else {
        train_loop(model, &run, &mut rec, |t, m, b| pretrain_objective(t, m, b, &cfg))?;
    }
    rec.model = model.clone();
    Ok(rec)
}

/// Fine-tuning of a fresh linear classifier on the encoder representation.
pub fn finetune(model: &mut ModelBundle, data: &Dataset, spec: &ScenarioSpec) -> Result<RunRecord> {
    spec.validate()?;
    if !spec.loss.scheme.has_pretraining() {
        return Err(Error::invalid("the SL scheme trains in a single phase"));
    }
    let mode = spec.scenario.finetune_mode();
    model.reinit_classifier(derive_seed(spec.seed, "init/classifier/finetune", 0));
    model.freeze_encoder = mode != FinetuneMode::FullAt;
    let mut rec = RunRecord::empty(model.clone(), spec, data);
    let adversarial = mode != FinetuneMode::Standard;
    let run = PhaseRun {
        phase: Phase::Finetune,
        epochs: spec.finetune_epochs,
        batch_size: if adversarial { spec.adv_batch_size } else { spec.batch_size },
        data,
        seed: spec.seed,
        views: None,
        attack: adversarial.then(|| spec.attack_for(DrivingLoss::Ce, data)),
    };
    let cfg = spec.loss;
    train_loop(model, &run, &mut rec, |t, m, b| finetune_objective(t, m, b, &cfg, mode))?;
    rec.model = model.clone();
    Ok(rec)
}

/// Single-phase end-to-end training of the SL scheme.
pub fn train_supervised(model: &mut ModelBundle, data: &Dataset, spec: &ScenarioSpec) -> Result<RunRecord> {
    spec.validate()?;
    if spec.loss.scheme != Scheme::Sl {
        return Err(Error::invalid(format!("{} is not trained end to end", spec.loss.scheme)));
    }
    model.freeze_encoder = false;
    let mut rec = RunRecord::empty(model.clone(), spec, data);
    let adversarial = spec.scenario.is_adversarial();
    let run = PhaseRun {
        phase: Phase::Supervised,
        epochs: spec.pretrain_epochs,
        batch_size: if adversarial { spec.adv_batch_size } else { spec.batch_size },
        data,
        seed: spec.seed,
        views: None,
        attack: adversarial.then(|| spec.attack_for(DrivingLoss::Ce, data)),
    };
    let cfg = spec.loss;
    train_loop(model, &run, &mut rec, |t, m, b| supervised_objective(t, m, b, &cfg))?;
    rec.model = model.clone();
    Ok(rec)
}

pub fn init_for(spec: &ScenarioSpec, data: &Dataset) -> Result<ModelBundle> {
    if spec.model.encoder.input_dim() != data.input_dim() {
        return Err(Error::shape(
            "run_scenario",
            format!(
                "encoder expects {} inputs, dataset has {}",
                spec.model.encoder.input_dim(),
                data.input_dim()
            ),
        ));
    }
    init_model(spec.model.encoder.clone(), data.n_classes, spec.model.head_dim, spec.seed)
}

/// Trains one scenario on `data` (used for both pretraining and
/// fine-tuning).
pub fn run_scenario(data: &Dataset, spec: &ScenarioSpec) -> Result<RunRecord> {
    let pre = pretrain_stage(data, spec)?;
    finish_scenario(data, spec, pre)
}

/// Output of the phase shared by scenarios with the same pretraining: the
/// adversarial pretraining of AT, Partial-AT and Full-AT is identical.
#[derive(Clone, Debug)]
pub struct PretrainStage {
    record: RunRecord,
    started: f64,
}

/// Runs the first phase of `spec` (pretraining, or the whole SL run).
pub fn pretrain_stage(data: &Dataset, spec: &ScenarioSpec) -> Result<PretrainStage> {
    spec.validate()?;
    let clock = Instant::now();
    let mut model = init_for(spec, data)?;
    let mut record = RunRecord::empty(model.clone(), spec, data);
    if spec.loss.scheme.has_pretraining() {
        let pre = pretrain(&mut model, data, spec)?;
        record.absorb(pre);
        record.pretrained = Some(model.clone());
    } else {
        let sl = train_supervised(&mut model, data, spec)?;
        record.absorb(sl);
    }
    Ok(PretrainStage {
        record,
        started: clock.elapsed().as_secs_f64(),
    })
}

impl PretrainStage {
    pub fn model(&self) -> &ModelBundle {
        &self.record.model
    }

    /// Whether `other` would produce the same first phase.
    pub fn compatible(a: &ScenarioSpec, b: &ScenarioSpec) -> bool {
        let key = |s: &ScenarioSpec| {
            let mut s = s.clone();
            s.scenario = if s.scenario.is_adversarial() { Scenario::At } else { Scenario::St };
            s.finetune_epochs = 0;
            s
        };
        key(a) == key(b)
    }
}

/// Completes a scenario from its first phase. `spec` may differ from the
/// stage's spec only in the fine-tuning scenario (see
/// [`PretrainStage::compatible`]).
pub fn finish_scenario(data: &Dataset, spec: &ScenarioSpec, stage: PretrainStage) -> Result<RunRecord> {
    if !PretrainStage::compatible(spec, &stage.record.manifest.spec) {
        return Err(Error::invalid("pretraining stage was produced by an incompatible spec"));
    }
    let clock = Instant::now();
    let mut rec = stage.record;
    rec.manifest.spec = spec.clone();
    rec.manifest.spec_hash = spec.hash();
    if spec.loss.scheme.has_pretraining() {
        let mut model = rec.model.clone();
        let ft = finetune(&mut model, data, spec)?;
        rec.absorb(ft);
    }
    rec.manifest.wall_clock_s = stage.started + clock.elapsed().as_secs_f64();
    Ok(rec)
}
