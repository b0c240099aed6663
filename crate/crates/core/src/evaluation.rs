//! Clean and robust accuracy under both threat models, and scenario sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{pgd, AttackSpec, AttackStats, DrivingLoss, ThreatModel};
use crate::data::{Dataset, ViewBatch};
use crate::error::{Error, Result};
use crate::losses::Scheme;
use crate::models::ModelBundle;
use crate::rng::derive_seed;
use crate::training::{finish_scenario, pretrain_stage, PretrainStage, RunRecord, Scenario, ScenarioSpec};

/// An evaluation attack before it is specialised to a model's scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalAttack {
    pub threat_model: ThreatModel,
    pub epsilon: f64,
    pub steps: usize,
    pub random_start: bool,
    /// `None` derives `2.5 * epsilon / steps`.
    pub step_size: Option<f64>,
}

impl EvalAttack {
    pub fn new(threat_model: ThreatModel, epsilon: f64, steps: usize) -> Self {
        EvalAttack {
            threat_model,
            epsilon,
            steps,
            random_start: true,
            step_size: None,
        }
    }

    /// 20-step Threat Model-I and 40-step Threat Model-II PGD at each budget.
    pub fn defaults(epsilons: &[f64]) -> Vec<EvalAttack> {
        let mut v: Vec<EvalAttack> = epsilons.iter().map(|&e| EvalAttack::new(ThreatModel::I, e, 20)).collect();
        v.extend(epsilons.iter().map(|&e| EvalAttack::new(ThreatModel::II, e, 40)));
        v
    }

    /// Concrete attack on a model of `scheme`; `None` when the threat model
    /// does not apply (Threat Model-II against SL).
    pub fn spec_for(&self, scheme: Scheme, clamp: Option<(f64, f64)>, tau_cl: f64, tau_scl: f64) -> Option<AttackSpec> {
        let (driving, tau) = match self.threat_model {
            ThreatModel::I => (DrivingLoss::Ce, None),
            ThreatModel::II if scheme.uses_cl() => (DrivingLoss::Cl, Some(tau_cl)),
            ThreatModel::II if scheme.uses_scl() => (DrivingLoss::Scl, Some(tau_scl)),
            ThreatModel::II => return None,
        };
        let mut spec = AttackSpec::new(self.epsilon, self.steps, driving, self.random_start)
            .with_clamp(clamp)
            .with_temperature(tau);
        if let Some(s) = self.step_size {
            spec.step_size = s;
        }
        Some(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustEntry {
    pub threat_model: ThreatModel,
    pub epsilon: f64,
    pub steps: usize,
    /// `None` when the threat model does not apply.
    pub accuracy: Option<f64>,
    pub stats: AttackStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub scenario: Scenario,
    pub scheme: Scheme,
    pub clean_accuracy: f64,
    pub robust: Vec<RobustEntry>,
    pub n_test: usize,
}

impl EvalReport {
    pub fn robust_accuracy(&self, tm: ThreatModel, epsilon: f64) -> Option<f64> {
        self.robust
            .iter()
            .find(|e| e.threat_model == tm && (e.epsilon - epsilon).abs() < 1e-12)
            .and_then(|e| e.accuracy)
    }
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

const EVAL_CHUNK: usize = 256;

/// Attacks `test` in fixed chunks and returns robust accuracy and query
/// counts.
fn robust_accuracy(model: &ModelBundle, test: &Dataset, spec: &AttackSpec, seed: u64) -> Result<(f64, AttackStats)> {
    let mut correct = 0usize;
    let mut stats = AttackStats::default();
    for (k, start) in (0..test.len()).step_by(EVAL_CHUNK).enumerate() {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(test.len())).collect();
        let batch = ViewBatch::from_dataset(test, &idx);
        let (adv, s) = pgd(model, &batch, spec, derive_seed(seed, "eval/chunk", k as u64))?;
        stats.merge(s);
        let pred = model.predict(&adv)?;
        correct += pred.iter().zip(&idx).filter(|(p, &i)| **p == test.labels[i]).count();
    }
    Ok((correct as f64 / test.len() as f64, stats))
}

/// Clean accuracy and one robust accuracy per attack.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &ModelBundle,
    test: &Dataset,
    attacks: &[EvalAttack],
    scenario: Scenario,
    scheme: Scheme,
    taus: (f64, f64),
    model_id: &str,
    seed: u64,
) -> Result<EvalReport> {
    let clean_pred = model.predict(&test.inputs)?;
    let clean = accuracy(&clean_pred, &test.labels);
    let mut robust = Vec::with_capacity(attacks.len());
    for (k, a) in attacks.iter().enumerate() {
        let entry = match a.spec_for(scheme, test.clamp_range(), taus.0, taus.1) {
            None => RobustEntry {
                threat_model: a.threat_model,
                epsilon: a.epsilon,
                steps: a.steps,
                accuracy: None,
                stats: AttackStats::default(),
            },
            Some(spec) if spec.epsilon == 0.0 => RobustEntry {
                threat_model: a.threat_model,
                epsilon: 0.0,
                steps: a.steps,
                accuracy: Some(clean),
                stats: AttackStats::default(),
            },
            Some(spec) => {
                let (acc, stats) = robust_accuracy(model, test, &spec, derive_seed(seed, "eval/attack", k as u64))?;
                RobustEntry {
                    threat_model: a.threat_model,
                    epsilon: a.epsilon,
                    steps: a.steps,
                    accuracy: Some(acc),
                    stats,
                }
            }
        };
        robust.push(entry);
    }
    Ok(EvalReport {
        model_id: model_id.to_string(),
        scenario,
        scheme,
        clean_accuracy: clean,
        robust,
        n_test: test.len(),
    })
}

/// `results.csv` body for (report, seed, runtime) triples. A missing
/// runtime is written as `NA`.
pub fn results_csv(reports: &[(&EvalReport, u64, Option<f64>)]) -> String {
    let mut s = String::from("scenario,scheme,threat_model,epsilon,steps,clean_acc,robust_acc,seed,runtime_s\n");
    for (r, seed, runtime) in reports {
        let runtime = runtime.map_or_else(|| "NA".to_string(), |t| format!("{t:.3}"));
        for e in &r.robust {
            let robust = e.accuracy.map_or_else(|| "NA".to_string(), |a| a.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.scenario, r.scheme, e.threat_model, e.epsilon, e.steps, r.clean_accuracy, robust, seed, runtime
            );
        }
    }
    s
}

/// One trained-and-evaluated sweep cell.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub spec: ScenarioSpec,
    pub record: RunRecord,
    pub report: EvalReport,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
    /// Cells that failed, with their error.
    pub failures: Vec<(Scenario, Scheme, u64, String)>,
    /// Whether `runtime_s` is written as a number (it is wall-clock and so
    /// not reproducible) or as `NA`.
    pub record_runtime: bool,
}

impl SweepTable {
    pub fn cell(&self, scenario: Scenario, scheme: Scheme, seed: u64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.spec.scenario == scenario && c.spec.loss.scheme == scheme && c.spec.seed == seed)
    }

    /// `results.csv` body: one row per (cell, attack).
    pub fn results_csv(&self) -> String {
        let rows: Vec<(&EvalReport, u64, Option<f64>)> = self
            .cells
            .iter()
            .map(|c| (&c.report, c.spec.seed, self.record_runtime.then_some(c.runtime_s)))
            .collect();
        results_csv(&rows)
    }

    /// Accuracy-versus-budget curves keyed by file stem.
    pub fn curve_csvs(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = BTreeMap::new();
        for c in &self.cells {
            for tm in [ThreatModel::I, ThreatModel::II] {
                let mut pts: Vec<&RobustEntry> = c.report.robust.iter().filter(|e| e.threat_model == tm).collect();
                if pts.is_empty() || pts.iter().all(|e| e.accuracy.is_none()) {
                    continue;
                }
                pts.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
                let stem = format!(
                    "curve_{}_{}_tm{}_seed{}",
                    c.spec.scenario,
                    c.spec.loss.scheme.as_str().replace('+', "-"),
                    tm,
                    c.spec.seed
                );
                let mut s = String::from("epsilon,steps,robust_acc\n");
                for e in pts {
                    let acc = e.accuracy.map_or_else(|| "NA".to_string(), |a| a.to_string());
                    let _ = writeln!(s, "{},{},{}", e.epsilon, e.steps, acc);
                }
                out.insert(stem, s);
            }
        }
        out
    }

    /// Writes `results.csv` and the curve CSVs into `dir`, returning the
    /// paths written.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let results = dir.join("results.csv");
        fs::write(&results, self.results_csv()).map_err(|e| Error::io(&results, e))?;
        written.push(results);
        for (stem, body) in self.curve_csvs() {
            let p = dir.join(format!("{stem}.csv"));
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Trains and evaluates every (scenario, scheme, seed) cell. Cells with the
/// same first phase share it. A failing cell is recorded and the sweep
/// continues.
pub fn scenario_sweep(
    train: &Dataset,
    test: &Dataset,
    template: &ScenarioSpec,
    grid: &[(Scenario, Scheme)],
    seeds: &[u64],
    attacks: &[EvalAttack],
) -> Result<SweepTable> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    let mut table = SweepTable::default();
    let mut stages: Vec<(ScenarioSpec, PretrainStage)> = Vec::new();
    for &seed in seeds {
        for &(scenario, scheme) in grid {
            let mut spec = template.clone();
            spec.scenario = scenario;
            spec.seed = seed;
            spec.loss.scheme = scheme;
            let clock = std::time::Instant::now();
            let result = (|| -> Result<SweepCell> {
                spec.validate()?;
                let stage = match stages.iter().find(|(s, _)| PretrainStage::compatible(s, &spec)) {
                    Some((_, st)) => st.clone(),
                    None => {
                        let st = pretrain_stage(train, &spec)?;
                        stages.push((spec.clone(), st.clone()));
                        st
                    }
                };
                let record = finish_scenario(train, &spec, stage)?;
                let id = format!("{scenario}_{scheme}_seed{seed}");
                let taus = (spec.loss.tau_cl, spec.loss.tau_scl);
                let report = evaluate(&record.model, test, attacks, scenario, scheme, taus, &id, seed)?;
                Ok(SweepCell {
                    spec: spec.clone(),
                    record,
                    report,
                    runtime_s: clock.elapsed().as_secs_f64(),
                })
            })();
            match result {
                Ok(cell) => table.cells.push(cell),
                Err(e) => table.failures.push((scenario, scheme, seed, e.to_string())),
            }
        }
        // stages are per seed
        stages.clear();
    }
    Ok(table)
}
