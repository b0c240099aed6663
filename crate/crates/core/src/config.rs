//! Experiment configuration.
//!
//! Configs are TOML. [`ExperimentConfig::load`] fills in every default, so the
//! canonical serialization ([`ExperimentConfig::to_toml`]) is fully explicit
//! and its hash identifies the experiment in every manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::ProbeConfig;
use crate::attacks::{AttackSpec, DrivingLoss, ThreatModel};
use crate::data::{
    gen_synthetic, load_csv, load_idx, stratified_split, AugmentSpec, DataKind, Dataset, SyntheticKind,
};
use crate::error::{Error, Result};
use crate::evaluation::EvalAttack;
use crate::hash::sha256_hex;
use crate::losses::{LossConfig, Scheme};
use crate::optim::AdamConfig;
use crate::training::{ModelSpec, Scenario, ScenarioSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
    Csv,
}

/// Where the data comes from. Which fields are required depends on
/// `source`:
///
/// * `synthetic`: `kind`, `n`, `dim`, `n_classes`, `separation`
/// * `idx`: `train_images`, `train_labels`, `test_images`, `test_labels`
/// * `csv`: `train`, optionally `test` and `n_classes`
///
/// Synthetic data, and CSV data without a `test` file, is split
/// label-stratified by `test_fraction`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub kind: Option<SyntheticKind>,
    pub n: Option<usize>,
    pub dim: Option<usize>,
    pub n_classes: Option<usize>,
    pub separation: Option<f64>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl DatasetConfig {
    fn empty(source: DataSource) -> Self {
        DatasetConfig {
            source,
            kind: None,
            n: None,
            dim: None,
            n_classes: None,
            separation: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train: None,
            test: None,
            test_fraction: default_test_fraction(),
        }
    }

    pub fn synthetic(kind: SyntheticKind, n: usize, dim: usize, n_classes: usize, separation: f64) -> Self {
        DatasetConfig {
            kind: Some(kind),
            n: Some(n),
            dim: Some(dim),
            n_classes: Some(n_classes),
            separation: Some(separation),
            ..Self::empty(DataSource::Synthetic)
        }
    }

    /// IDX files in `dir` under their conventional MNIST names.
    pub fn idx(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetConfig {
            train_images: Some(dir.join("train-images-idx3-ubyte")),
            train_labels: Some(dir.join("train-labels-idx1-ubyte")),
            test_images: Some(dir.join("t10k-images-idx3-ubyte")),
            test_labels: Some(dir.join("t10k-labels-idx1-ubyte")),
            ..Self::empty(DataSource::Idx)
        }
    }

    pub fn kind(&self) -> DataKind {
        match self.source {
            DataSource::Idx => DataKind::Image,
            _ => DataKind::Vector,
        }
    }

    /// Loads or generates the (train, test) pair. Relative paths resolve
    /// against `base`.
    pub fn load(&self, base: &Path, seed: u64) -> Result<(Dataset, Dataset)> {
        if let Err((key, msg)) = self.validate() {
            return Err(Error::invalid(format!("{key}: {msg}")));
        }
        let at = |p: &Option<PathBuf>| {
            let p = p.as_deref().expect("validated");
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let halves = |d: Dataset| -> Result<(Dataset, Dataset)> {
            let f = self.test_fraction;
            let mut parts = stratified_split(&d, &[1.0 - f, f], seed)?.into_iter();
            Ok((parts.next().expect("two parts"), parts.next().expect("two parts")))
        };
        match self.source {
            DataSource::Synthetic => {
                let get = |v: Option<usize>| v.expect("validated");
                halves(gen_synthetic(
                    self.kind.expect("validated"),
                    get(self.n),
                    get(self.dim),
                    get(self.n_classes),
                    seed,
                    self.separation.expect("validated"),
                )?)
            }
            DataSource::Idx => {
                let train = load_idx(at(&self.train_images), at(&self.train_labels))?;
                let test = load_idx(at(&self.test_images), at(&self.test_labels))?;
                if train.sample_shape != test.sample_shape {
                    return Err(Error::shape(
                        "dataset",
                        format!("train {:?} vs test {:?}", train.sample_shape, test.sample_shape),
                    ));
                }
                Ok((train, test))
            }
            DataSource::Csv => {
                let tr = load_csv(at(&self.train), self.n_classes)?;
                match &self.test {
                    Some(_) => {
                        let te = load_csv(at(&self.test), Some(tr.n_classes))?;
                        Ok((tr, te))
                    }
                    None => halves(tr),
                }
            }
        }
    }

    fn validate(&self) -> std::result::Result<(), (String, String)> {
        let present = [
            ("kind", self.kind.is_some()),
            ("n", self.n.is_some()),
            ("dim", self.dim.is_some()),
            ("n_classes", self.n_classes.is_some()),
            ("separation", self.separation.is_some()),
            ("train_images", self.train_images.is_some()),
            ("train_labels", self.train_labels.is_some()),
            ("test_images", self.test_images.is_some()),
            ("test_labels", self.test_labels.is_some()),
            ("train", self.train.is_some()),
            ("test", self.test.is_some()),
        ];
        let (required, optional): (&[&str], &[&str]) = match self.source {
            DataSource::Synthetic => (&["kind", "n", "dim", "n_classes", "separation"], &[]),
            DataSource::Idx => (&["train_images", "train_labels", "test_images", "test_labels"], &[]),
            DataSource::Csv => (&["train"], &["test", "n_classes"]),
        };
        let source = serde_json::to_string(&self.source).expect("source serializes");
        for (name, set) in present {
            if required.contains(&name) && !set {
                return Err((format!("dataset.{name}"), format!("required for source {source}")));
            }
            if set && !required.contains(&name) && !optional.contains(&name) {
                return Err((format!("dataset.{name}"), format!("not used by source {source}")));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err((
                "dataset.test_fraction".into(),
                format!("must lie in (0, 1), got {}", self.test_fraction),
            ));
        }
        Ok(())
    }
}

/// Training schedule and optimizer. `augment` defaults by data kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_adv_batch")]
    pub adv_batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub augment: Option<AugmentSpec>,
}

fn default_scenario() -> Scenario {
    Scenario::St
}
fn default_pretrain_epochs() -> usize {
    50
}
fn default_finetune_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    128
}
fn default_adv_batch() -> usize {
    256
}

impl Default for ScenarioBlock {
    fn default() -> Self {
        ScenarioBlock {
            scenario: default_scenario(),
            pretrain_epochs: default_pretrain_epochs(),
            finetune_epochs: default_finetune_epochs(),
            batch_size: default_batch(),
            adv_batch_size: default_adv_batch(),
            optimizer: AdamConfig::default(),
            augment: None,
        }
    }
}

/// Training attack and the evaluation attack list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBlock {
    pub training: Option<AttackSpec>,
    pub evaluation: Option<Vec<EvalAttack>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    #[serde(default = "default_probe_epochs")]
    pub epochs: usize,
    #[serde(default = "default_probe_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_probe_epochs() -> usize {
    ProbeConfig::default().epochs
}
fn default_probe_lr() -> f64 {
    ProbeConfig::default().lr
}

impl Default for ProbeBlock {
    fn default() -> Self {
        ProbeBlock {
            epochs: default_probe_epochs(),
            lr: default_probe_lr(),
            batch_size: default_batch(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    #[serde(default = "default_true")]
    pub cka: bool,
    #[serde(default = "default_cka_samples")]
    pub cka_samples: usize,
    /// Layer indices for probing; 0 is the raw input. `None` probes every
    /// layer.
    pub probe_layers: Option<Vec<usize>>,
    #[serde(default)]
    pub probe: ProbeBlock,
    /// Training budgets of the epsilon sweep, ascending.
    pub epsilon_sweep: Option<Vec<f64>>,
}

fn default_true() -> bool {
    true
}
fn default_cka_samples() -> usize {
    crate::analysis::DEFAULT_CKA_SAMPLES
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        AnalysisBlock {
            cka: true,
            cka_samples: default_cka_samples(),
            probe_layers: None,
            probe: ProbeBlock::default(),
            epsilon_sweep: None,
        }
    }
}

/// Grid of the `sweep` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    /// `None` runs the top-level seed only.
    pub seeds: Option<Vec<u64>>,
}

fn default_scenarios() -> Vec<Scenario> {
    vec![Scenario::St, Scenario::At, Scenario::PartialAt, Scenario::FullAt]
}
fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::Cl, Scheme::Scl, Scheme::Sl]
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock {
            scenarios: default_scenarios(),
            schemes: default_schemes(),
            seeds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Wall-clock seconds in results.csv. Off by default so reruns are
    /// byte-identical.
    #[serde(default)]
    pub record_runtime: bool,
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    pub loss: LossConfig,
    #[serde(default)]
    pub scenario: ScenarioBlock,
    #[serde(default)]
    pub attacks: AttackBlock,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Evaluation budgets per data kind.
pub fn default_eval_epsilons(kind: DataKind) -> Vec<f64> {
    match kind {
        DataKind::Image => [2.0, 4.0, 6.0, 8.0].iter().map(|e| e / 255.0).collect(),
        DataKind::Vector => vec![0.1, 0.25, 0.5],
    }
}

/// Default training attack: 5-step PGD at 8/255 for images, 0.25 for
/// vectors.
pub fn default_training_attack(kind: DataKind) -> AttackSpec {
    let eps = match kind {
        DataKind::Image => 8.0 / 255.0,
        DataKind::Vector => 0.25,
    };
    AttackSpec::training(eps, 5, DrivingLoss::Ce)
}

impl ExperimentConfig {
    /// Reads, materializes and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}:{msg}", path.display())),
            other => other,
        })
    }

    /// Parses TOML text. Errors carry `line:column` of the offending item.
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let (line, col) = e.span().map(|s| line_col(text, s.start)).unwrap_or((1, 1));
            Error::Parse(format!("{line}:{col}: {}", e.message()))
        })?;
        cfg.materialize();
        if let Err((key, msg)) = cfg.check() {
            let line = locate_key(text, &key);
            return Err(Error::Parse(format!("{line}:1: {key}: {msg}")));
        }
        Ok(cfg)
    }

    /// Canonical, fully explicit TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    /// Replaces every omitted default by its concrete value.
    pub fn materialize(&mut self) {
        let kind = self.dataset.kind();
        self.scenario.augment.get_or_insert_with(|| AugmentSpec::default_for(kind));
        let training = *self.attacks.training.get_or_insert_with(|| default_training_attack(kind));
        self.attacks
            .evaluation
            .get_or_insert_with(|| EvalAttack::defaults(&default_eval_epsilons(kind)));
        self.analysis.probe_layers.get_or_insert_with(|| (0..=self.model.encoder.n_layers()).collect());
        self.analysis
            .epsilon_sweep
            .get_or_insert_with(|| vec![0.0, training.epsilon / 2.0, training.epsilon]);
        self.sweep.seeds.get_or_insert_with(|| vec![self.seed]);
    }

    /// Validates a materialized config.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(key, msg)| Error::invalid(format!("{key}: {msg}")))
    }

    fn check(&self) -> std::result::Result<(), (String, String)> {
        fn wrap(key: &'static str) -> impl Fn(Error) -> (String, String) {
            move |e| (key.to_string(), e.to_string())
        }
        self.dataset.validate()?;
        if self.model.encoder.kind == crate::models::EncoderKind::ConvSmall && self.dataset.kind() == DataKind::Vector {
            return Err(("model.encoder".into(), "conv_small needs image data".into()));
        }
        self.loss.validate().map_err(wrap("loss"))?;
        self.model.encoder.validate().map_err(wrap("model.encoder"))?;
        self.scenario.optimizer.validate().map_err(wrap("scenario.optimizer"))?;
        if let Some(a) = &self.scenario.augment {
            a.validate().map_err(wrap("scenario.augment"))?;
        }
        if let Some(a) = &self.attacks.training {
            a.validate().map_err(wrap("attacks.training"))?;
        }
        self.template().validate().map_err(wrap("scenario"))?;
        for (i, a) in self.attacks.evaluation.iter().flatten().enumerate() {
            if !(a.epsilon >= 0.0 && a.epsilon.is_finite()) {
                return Err(("attacks.evaluation".into(), format!("entry {i}: epsilon must be >= 0")));
            }
            if a.step_size.is_some_and(|s| !(s > 0.0)) {
                return Err(("attacks.evaluation".into(), format!("entry {i}: step_size must be positive")));
            }
        }
        let n_layers = self.model.encoder.n_layers();
        if let Some(l) = self.analysis.probe_layers.iter().flatten().find(|&&l| l > n_layers) {
            return Err((
                "analysis.probe_layers".into(),
                format!("layer {l} does not exist (encoder has {n_layers})"),
            ));
        }
        let p = &self.analysis.probe;
        if p.epochs == 0 || p.batch_size == 0 || !(p.lr > 0.0) {
            return Err(("analysis.probe".into(), "epochs, lr and batch_size must be positive".into()));
        }
        if self.analysis.cka_samples < 2 {
            return Err(("analysis.cka_samples".into(), "needs at least 2 samples".into()));
        }
        if let Some(eps) = &self.analysis.epsilon_sweep {
            if eps.iter().any(|e| !(*e >= 0.0)) || eps.windows(2).any(|w| w[0] > w[1]) {
                return Err((
                    "analysis.epsilon_sweep".into(),
                    "budgets must be non-negative and ascending".into(),
                ));
            }
        }
        if self.sweep.scenarios.is_empty() || self.sweep.schemes.is_empty() {
            return Err(("sweep".into(), "grid is empty".into()));
        }
        if self.sweep.seeds.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(("sweep.seeds".into(), "no seeds".into()));
        }
        Ok(())
    }

    /// The scenario spec that `train` runs.
    pub fn template(&self) -> ScenarioSpec {
        let s = &self.scenario;
        let kind = self.dataset.kind();
        ScenarioSpec {
            scenario: s.scenario,
            loss: self.loss,
            model: self.model.clone(),
            pretrain_epochs: s.pretrain_epochs,
            finetune_epochs: s.finetune_epochs,
            batch_size: s.batch_size,
            adv_batch_size: s.adv_batch_size,
            optimizer: s.optimizer,
            train_attack: self.attacks.training.unwrap_or_else(|| default_training_attack(kind)),
            augment: s.augment.unwrap_or_else(|| AugmentSpec::default_for(kind)),
            seed: self.seed,
        }
    }

    pub fn eval_attacks(&self) -> Vec<EvalAttack> {
        self.attacks
            .evaluation
            .clone()
            .unwrap_or_else(|| EvalAttack::defaults(&default_eval_epsilons(self.dataset.kind())))
    }

    /// Attack for representation analysis: the strongest Threat Model-I
    /// evaluation attack, clamped to the data range.
    pub fn analysis_attack(&self, kind: DataKind) -> Option<AttackSpec> {
        let clamp = match kind {
            DataKind::Image => Some((0.0, 1.0)),
            DataKind::Vector => None,
        };
        self.eval_attacks()
            .into_iter()
            .filter(|a| a.threat_model == ThreatModel::I && a.epsilon > 0.0)
            .max_by(|a, b| a.epsilon.total_cmp(&b.epsilon))
            .and_then(|a| a.spec_for(self.loss.scheme, clamp, self.loss.tau_cl, self.loss.tau_scl))
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            epochs: self.analysis.probe.epochs,
            lr: self.analysis.probe.lr,
            batch_size: self.analysis.probe.batch_size,
            seed: self.seed,
        }
    }

    /// Every (scenario, scheme) pair of the sweep grid that is defined.
    /// Combined schemes only run under ST.
    pub fn sweep_grid(&self) -> Vec<(Scenario, Scheme)> {
        let mut grid = Vec::new();
        for &sc in &self.sweep.scenarios {
            for &k in &self.sweep.schemes {
                if !k.is_combined() || sc == Scenario::St {
                    grid.push((sc, k));
                }
            }
        }
        grid
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Best-effort line of a dotted key: the `key =` line inside its table, else
/// the table header, else line 1.
fn locate_key(text: &str, dotted: &str) -> usize {
    let parts: Vec<&str> = dotted.split('.').collect();
    let mut best = 1;
    let mut table: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            let h = h.trim_start_matches('[').trim_end_matches(']').trim();
            table = h.split('.').map(|s| s.trim().to_string()).collect();
            if parts.starts_with(&table.iter().map(String::as_str).collect::<Vec<_>>()) && table.len() == parts.len() {
                best = i + 1;
            }
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        let mut full: Vec<&str> = table.iter().map(String::as_str).collect();
        full.extend(k.trim().split('.').map(str::trim));
        if full == parts {
            return i + 1;
        }
        if full.len() <= parts.len() && parts.starts_with(&full) && best == 1 {
            best = i + 1;
        }
    }
    best
}
