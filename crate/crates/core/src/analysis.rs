//! Representation analysis: linear CKA grids, clean/adversarial divergence
//! curves, training-budget sweeps, cross-model grids and linear probes.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attacks::{pgd, AttackSpec};
use crate::data::{batch_indices, Dataset, ViewBatch};
use crate::error::{Error, Result};
use crate::models::{argmax_rows, LayerId, ModelBundle};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{derive_seed, rng_for};
use crate::tape::Tape;
use crate::tensor::{gemm, Tensor};
use crate::evaluation::SweepTable;
use crate::losses::{cross_entropy, Scheme};
use crate::training::{run_scenario, RunRecord, Scenario, ScenarioSpec};

/// Default evaluation sample size for CKA.
pub const DEFAULT_CKA_SAMPLES: usize = 512;

fn centered(x: &Tensor) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let mut means = vec![0.0; d];
    for i in 0..n {
        for (m, v) in means.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        for (v, m) in row.iter_mut().zip(&means) {
            *v -= m;
        }
    }
    out
}

fn frob_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `AᵀB` for row-major `n x p` and `n x q` matrices.
fn cross(n: usize, a: &[f64], p: usize, b: &[f64], q: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * q];
    gemm(p, n, q, a, true, b, false, &mut c, false);
    c
}

/// `AAᵀ` for a row-major `n x p` matrix.
fn gram(n: usize, a: &[f64], p: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    gemm(n, p, n, a, false, a, true, &mut c, false);
    c
}

/// Linear CKA between two activation matrices over the same `n` samples.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape().len() != 2 || y.shape().len() != 2 || x.rows() != y.rows() {
        return Err(Error::shape("linear_cka", format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    let n = x.rows();
    if n < 3 {
        return Err(Error::invalid(format!("linear_cka needs at least 3 samples, got {n}")));
    }
    let (p, q) = (x.cols(), y.cols());
    let xc = centered(x);
    let yc = centered(y);
    for (name, c, raw) in [("first", &xc, x), ("second", &yc, y)] {
        if frob_sq(c) <= 1e-24 * frob_sq(raw.data()).max(1.0) {
            return Err(Error::Degenerate(format!("{name} activation matrix is constant across samples")));
        }
    }
    let (num, dx, dy) = if p.max(q) > n {
        let k = gram(n, &xc, p);
        let l = gram(n, &yc, q);
        let num: f64 = k.iter().zip(&l).map(|(a, b)| a * b).sum();
        (num, frob_sq(&k).sqrt(), frob_sq(&l).sqrt())
    } else {
        let yx = cross(n, &yc, q, &xc, p);
        let xx = cross(n, &xc, p, &xc, p);
        let yy = cross(n, &yc, q, &yc, q);
        (frob_sq(&yx), frob_sq(&xx).sqrt(), frob_sq(&yy).sqrt())
    };
    let v = num / (dx * dy);
    if !v.is_finite() {
        return Err(Error::Degenerate("CKA normalizer underflowed".into()));
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CkaCondition {
    #[serde(rename = "clean-clean")]
    CleanClean,
    #[serde(rename = "clean-adv")]
    CleanAdv,
    #[serde(rename = "adv-adv")]
    AdvAdv,
}

impl fmt::Display for CkaCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CkaCondition::CleanClean => "clean-clean",
            CkaCondition::CleanAdv => "clean-adv",
            CkaCondition::AdvAdv => "adv-adv",
        })
    }
}

/// Layer-pair similarity grid. `None` cells are degenerate pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub n_samples: usize,
    pub condition: CkaCondition,
    pub model_ids: (String, String),
    pub diagnostics: Vec<String>,
}

impl CkaMatrix {
    pub fn from_activations(
        rows: &[(LayerId, Tensor)],
        cols: &[(LayerId, Tensor)],
        condition: CkaCondition,
        model_ids: (String, String),
    ) -> Result<Self> {
        let n = rows.first().map_or(0, |(_, t)| t.rows());
        let mut diagnostics = Vec::new();
        let mut values = Vec::with_capacity(rows.len());
        for (ri, x) in rows {
            let mut line = Vec::with_capacity(cols.len());
            for (ci, y) in cols {
                match linear_cka(x, y) {
                    Ok(v) => line.push(Some(v)),
                    Err(Error::Degenerate(why)) => {
                        diagnostics.push(format!("{ri} x {ci}: {why}"));
                        line.push(None);
                    }
                    Err(e) => return Err(e),
                }
            }
            values.push(line);
        }
        Ok(CkaMatrix {
            rows: rows.iter().map(|(l, _)| l.to_string()).collect(),
            cols: cols.iter().map(|(l, _)| l.to_string()).collect(),
            values,
            n_samples: n,
            condition,
            model_ids,
            diagnostics,
        })
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.values[r][c]
    }

    pub fn diagonal(&self) -> Vec<Option<f64>> {
        (0..self.rows.len().min(self.cols.len())).map(|i| self.values[i][i]).collect()
    }

    /// Mean of the non-masked cells in the square block of the last
    /// `ceil(L/3)` rows and columns.
    pub fn upper_third_mean(&self) -> Option<f64> {
        let l = self.rows.len().min(self.cols.len());
        let k = l.div_ceil(3);
        self.block_mean(l - k..l)
    }

    /// As [`upper_third_mean`](Self::upper_third_mean) for the first
    /// `ceil(L/3)` layers.
    pub fn lower_third_mean(&self) -> Option<f64> {
        let l = self.rows.len().min(self.cols.len());
        self.block_mean(0..l.div_ceil(3))
    }

    fn block_mean(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let cells: Vec<f64> = range
            .clone()
            .flat_map(|r| range.clone().filter_map(move |c| self.values[r][c]))
            .collect();
        (!cells.is_empty()).then(|| cells.iter().sum::<f64>() / cells.len() as f64)
    }

    /// Square grid with a `layer` header row; masked cells are `NA`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer");
        for c in &self.cols {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (r, line) in self.rows.iter().zip(&self.values) {
            s.push_str(r);
            for v in line {
                match v {
                    Some(v) => {
                        let _ = write!(s, ",{v}");
                    }
                    None => s.push_str(",NA"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn captured(model: &ModelBundle, x: &Tensor) -> Result<Vec<(LayerId, Tensor)>> {
    let (_, records) = model.encode(x, true)?;
    Ok(records.into_iter().map(|r| (r.layer, r.matrix)).collect())
}

/// Attacks `data` in chunks against `model`. Each chunk has its own seed.
pub fn attack_dataset(model: &ModelBundle, data: &Dataset, spec: &AttackSpec, seed: u64) -> Result<Tensor> {
    const CHUNK: usize = 256;
    let mut parts = Vec::new();
    for (k, start) in (0..data.len()).step_by(CHUNK).enumerate() {
        let idx: Vec<usize> = (start..(start + CHUNK).min(data.len())).collect();
        let batch = ViewBatch::from_dataset(data, &idx);
        let (adv, _) = pgd(model, &batch, spec, derive_seed(seed, "analysis/attack", k as u64))?;
        parts.push(adv);
    }
    let d = data.input_dim();
    let rows: Vec<f64> = parts.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::new(vec![data.len(), d], rows)
}

fn model_id(model: &ModelBundle) -> String {
    format!("seed{}", model.rng_seed)
}

/// Layer-by-layer CKA of one model on the first `n_samples` of `data`. With
/// an attack, rows hold clean activations and columns adversarial ones.
pub fn cka_heatmap(
    model: &ModelBundle,
    data: &Dataset,
    attack: Option<&AttackSpec>,
    n_samples: usize,
    seed: u64,
) -> Result<CkaMatrix> {
    if n_samples > data.len() {
        return Err(Error::invalid(format!(
            "requested {n_samples} samples from a dataset of {}",
            data.len()
        )));
    }
    let sample = data.head(n_samples);
    let clean = captured(model, &sample.inputs)?;
    let id = model_id(model);
    match attack {
        None => CkaMatrix::from_activations(&clean, &clean, CkaCondition::CleanClean, (id.clone(), id)),
        Some(spec) => {
            let adv_x = attack_dataset(model, &sample, spec, seed)?;
            let adv = captured(model, &adv_x)?;
            CkaMatrix::from_activations(&clean, &adv, CkaCondition::CleanAdv, (id.clone(), id))
        }
    }
}

/// Same-layer clean/adversarial CKA for every captured layer.
pub fn divergence_curve(
    model: &ModelBundle,
    data: &Dataset,
    attack: &AttackSpec,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    if n_samples > data.len() {
        return Err(Error::invalid(format!(
            "requested {n_samples} samples from a dataset of {}",
            data.len()
        )));
    }
    let sample = data.head(n_samples);
    let clean = captured(model, &sample.inputs)?;
    let adv_x = attack_dataset(model, &sample, attack, seed)?;
    let adv = captured(model, &adv_x)?;
    clean
        .iter()
        .zip(&adv)
        .map(|((_, x), (_, y))| match linear_cka(x, y) {
            Ok(v) => Ok(Some(v)),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// All layers of `a` (rows) against all layers of `b` (columns). With an
/// attack, each model sees adversarial examples crafted against itself.
pub fn cross_model_cka(
    a: &ModelBundle,
    b: &ModelBundle,
    data: &Dataset,
    attack: Option<&AttackSpec>,
    n_samples: usize,
    seed: u64,
) -> Result<CkaMatrix> {
    if a.config.input_shape != b.config.input_shape {
        return Err(Error::shape(
            "cross_model_cka",
            format!("{:?} vs {:?}", a.config.input_shape, b.config.input_shape),
        ));
    }
    if n_samples > data.len() {
        return Err(Error::invalid(format!(
            "requested {n_samples} samples from a dataset of {}",
            data.len()
        )));
    }
    let sample = data.head(n_samples);
    let ids = (model_id(a), model_id(b));
    match attack {
        None => {
            let ra = captured(a, &sample.inputs)?;
            let rb = captured(b, &sample.inputs)?;
            CkaMatrix::from_activations(&ra, &rb, CkaCondition::CleanClean, ids)
        }
        Some(spec) => {
            let xa = attack_dataset(a, &sample, spec, seed)?;
            let xb = attack_dataset(b, &sample, spec, seed)?;
            let ra = captured(a, &xa)?;
            let rb = captured(b, &xb)?;
            CkaMatrix::from_activations(&ra, &rb, CkaCondition::AdvAdv, ids)
        }
    }
}

/// One model trained at a given training budget, with its analysis.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub train_epsilon: f64,
    pub record: RunRecord,
    pub curve: Vec<Option<f64>>,
    pub heatmap: CkaMatrix,
}

/// Trains `template` once per training budget and analyses each model under
/// the same evaluation attack. A zero budget trains under ST.
pub fn epsilon_sweep(
    template: &ScenarioSpec,
    train: &Dataset,
    eval: &Dataset,
    eps_list: &[f64],
    eval_attack: &AttackSpec,
    n_samples: usize,
) -> Result<Vec<SweepPoint>> {
    if eps_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("epsilon list must be sorted ascending"));
    }
    eps_list
        .iter()
        .map(|&eps| {
            let mut spec = template.clone();
            spec.train_attack.epsilon = eps;
            spec.train_attack.step_size = crate::attacks::default_step_size(eps, spec.train_attack.steps);
            if eps == 0.0 {
                spec.scenario = Scenario::St;
            }
            let record = run_scenario(train, &spec)?;
            let seed = derive_seed(template.seed, "analysis", 0);
            let heatmap = cka_heatmap(&record.model, eval, Some(eval_attack), n_samples, seed)?;
            let curve = heatmap.diagonal();
            Ok(SweepPoint {
                train_epsilon: eps,
                record,
                curve,
                heatmap,
            })
        })
        .collect()
}

/// Representation measurements of a sweep, keyed like the results table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    /// Final-layer clean/adversarial CKA per trained cell.
    pub final_layer_cka: Vec<FinalLayerCka>,
    /// Upper-third mean of adversarial cross-model CKA between two schemes
    /// trained under the same scenario and seed.
    pub cross_model: Vec<CrossModelEntry>,
    /// Final-layer clean/adversarial CKA per training budget.
    pub epsilon_sweep: Vec<EpsilonSweepEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalLayerCka {
    pub scenario: Scenario,
    pub scheme: Scheme,
    pub seed: u64,
    pub cka: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossModelEntry {
    pub scenario: Scenario,
    pub a: Scheme,
    pub b: Scheme,
    pub seed: u64,
    pub upper_third: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSweepEntry {
    pub scheme: Scheme,
    pub seed: u64,
    pub train_epsilon: f64,
    pub final_layer_cka: Option<f64>,
}

/// Analysis measurements of every sweep cell under one attack. Training
/// budgets of `eps_list` that no cell covers are trained here as extra AT(CL)
/// models and returned with their budget and seed.
#[allow(clippy::type_complexity)]
pub fn sweep_summary(
    table: &SweepTable,
    train: &Dataset,
    test: &Dataset,
    template: &ScenarioSpec,
    eps_list: &[f64],
    attack: &AttackSpec,
    n_samples: usize,
) -> Result<(AnalysisSummary, Vec<(u64, f64, RunRecord)>)> {
    let n = n_samples.min(test.len());
    let mut summary = AnalysisSummary::default();
    let mut extra = Vec::new();
    let final_cka = |model: &ModelBundle, seed: u64| -> Result<Option<f64>> {
        let curve = divergence_curve(model, test, attack, n, derive_seed(seed, "analysis", 0))?;
        Ok(curve.last().copied().flatten())
    };
    for c in &table.cells {
        summary.final_layer_cka.push(FinalLayerCka {
            scenario: c.spec.scenario,
            scheme: c.spec.loss.scheme,
            seed: c.spec.seed,
            cka: final_cka(&c.record.model, c.spec.seed)?,
        });
    }
    let mut seeds: Vec<u64> = table.cells.iter().map(|c| c.spec.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    for &seed in &seeds {
        for sc in [Scenario::St, Scenario::At, Scenario::PartialAt, Scenario::FullAt] {
            if let (Some(a), Some(b)) = (table.cell(sc, Scheme::Cl, seed), table.cell(sc, Scheme::Sl, seed)) {
                let m = cross_model_cka(
                    &a.record.model,
                    &b.record.model,
                    test,
                    Some(attack),
                    n,
                    derive_seed(seed, "analysis", 0),
                )?;
                summary.cross_model.push(CrossModelEntry {
                    scenario: sc,
                    a: Scheme::Cl,
                    b: Scheme::Sl,
                    seed,
                    upper_third: m.upper_third_mean(),
                });
            }
        }
        if table.cell(Scenario::St, Scheme::Cl, seed).is_none() && table.cell(Scenario::At, Scheme::Cl, seed).is_none() {
            continue;
        }
        for &eps in eps_list {
            let reuse = if eps == 0.0 {
                table.cell(Scenario::St, Scheme::Cl, seed)
            } else if eps == template.train_attack.epsilon {
                table.cell(Scenario::At, Scheme::Cl, seed)
            } else {
                None
            };
            let value = match reuse {
                Some(c) => final_cka(&c.record.model, seed)?,
                None => {
                    let mut spec = template.clone();
                    spec.seed = seed;
                    spec.loss.scheme = Scheme::Cl;
                    spec.scenario = if eps == 0.0 { Scenario::St } else { Scenario::At };
                    spec.train_attack.epsilon = eps;
                    spec.train_attack.step_size = crate::attacks::default_step_size(eps, spec.train_attack.steps);
                    let record = run_scenario(train, &spec)?;
                    let v = final_cka(&record.model, seed)?;
                    extra.push((seed, eps, record));
                    v
                }
            };
            summary.epsilon_sweep.push(EpsilonSweepEntry {
                scheme: Scheme::Cl,
                seed,
                train_epsilon: eps,
                final_layer_cka: value,
            });
        }
    }
    Ok((summary, extra))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub layer_id: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 30,
            lr: 1e-3,
            batch_size: 128,
            seed: 0,
        }
    }
}

fn layer_features(model: &ModelBundle, x: &Tensor, layer: usize) -> Result<(String, Tensor)> {
    if layer == 0 {
        return Ok(("L0_input".to_string(), x.clone()));
    }
    let (_, records) = model.encode(x, true)?;
    let n_layers = records.len();
    let r = records
        .into_iter()
        .nth(layer - 1)
        .ok_or_else(|| Error::invalid(format!("layer {layer} does not exist (model has {n_layers})")))?;
    Ok((r.layer.to_string(), r.matrix))
}

/// Fits a fresh linear classifier on frozen activations of `layer` (0 is
/// the raw input, `k` the k-th captured layer). `model` is only read.
pub fn linear_probe(
    model: &ModelBundle,
    train: &Dataset,
    test: &Dataset,
    layer: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let (layer_id, f_train) = layer_features(model, &train.inputs, layer)?;
    let (_, f_test) = layer_features(model, &test.inputs, layer)?;
    let d = f_train.cols();
    let spread = centered(&f_train);
    if frob_sq(&spread) <= 1e-24 * frob_sq(f_train.data()).max(1.0) {
        return Err(Error::Degenerate(format!("{layer_id} activations are constant")));
    }
    let c = train.n_classes.max(test.n_classes);
    let probe_seed = derive_seed(cfg.seed, &format!("probe/{layer_id}"), 0);
    let mut rng = rng_for(probe_seed, "probe/init", 0);
    let bound = (1.0 / d as f64).sqrt();
    let init = (0..d * c).map(|_| rng.random_range(-bound..=bound)).collect();
    let mut weight = Tensor::new(vec![d, c], init)?;
    let mut bias = Tensor::zeros(&[c]);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), &[d * c, c])?;
    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(probe_seed, "probe/batches", epoch as u64);
        for idx in batch_indices(train.len(), cfg.batch_size, &mut rng) {
            let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let grads = {
                let mut tape = Tape::new();
                let w = tape.variable(weight.clone());
                let b = tape.variable(bias.clone());
                let x = tape.constant(f_train.select_rows(&idx));
                let z = tape.matmul(x, w)?;
                let logits = tape.add_row_bias(z, b)?;
                let loss = cross_entropy(&mut tape, logits, &y)?;
                let g = tape.backward(loss)?;
                vec![g.get(w).cloned(), g.get(b).cloned()]
            };
            opt.step(vec![&mut weight, &mut bias], &grads)?;
        }
    }
    let accuracy = |f: &Tensor, labels: &[usize]| -> Result<f64> {
        let logits = f.matmul(&weight)?;
        let mut logits = logits.into_data();
        for row in logits.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(bias.data()) {
                *v += b;
            }
        }
        let pred = argmax_rows(&Tensor::new(vec![labels.len(), c], logits)?);
        Ok(pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
    };
    Ok(ProbeResult {
        layer_id,
        train_accuracy: accuracy(&f_train, &train.labels)?,
        test_accuracy: accuracy(&f_test, &test.labels)?,
        n_train: train.len(),
        n_test: test.len(),
    })
}

/// Appends probe rows to a `probes.csv`, writing the header for a new file.
pub fn append_probes(path: impl AsRef<Path>, results: &[ProbeResult]) -> Result<()> {
    let path = path.as_ref();
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut s = String::new();
    if fresh {
        s.push_str("layer_id,train_acc,test_acc,n_train,n_test\n");
    }
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.layer_id, r.train_accuracy, r.test_accuracy, r.n_train, r.n_test
        );
    }
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes final-layer representations as `label,e0,...,ek`.
pub fn export_embeddings(model: &ModelBundle, data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (rep, _) = model.encode(&data.inputs, false)?;
    let k = rep.cols();
    let mut s = String::from("label");
    for j in 0..k {
        let _ = write!(s, ",e{j}");
    }
    s.push('\n');
    for i in 0..data.len() {
        let _ = write!(s, "{}", data.labels[i]);
        for v in rep.row(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads an embedding CSV back into labels and a matrix.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(Vec<usize>, Tensor)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
    let k = header.split(',').count() - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (ln, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let bad = || Error::Parse(format!("{}:{}: malformed row", path.display(), ln + 2));
        labels.push(fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?);
        let row: Vec<f64> = fields.map(|f| f.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        if row.len() != k {
            return Err(bad());
        }
        data.extend(row);
    }
    let n = labels.len();
    Ok((labels, Tensor::new(vec![n, k], data)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = rng_for(seed, "test", 0);
        let data = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::new(vec![n, d], data).unwrap()
    }

    #[test]
    fn self_similarity() {
        let x = gaussian(50, 6, 1);
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_and_feature_paths_agree() {
        let x = gaussian(10, 4, 2);
        let y = gaussian(10, 30, 3);
        let a = linear_cka(&x, &y).unwrap();
        let b = linear_cka(&y, &x).unwrap();
        let small = gaussian(10, 8, 3);
        let c = linear_cka(&x, &small).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn constant_layer_is_degenerate() {
        let x = gaussian(10, 3, 1);
        let c = Tensor::filled(&[10, 3], 2.5);
        assert!(matches!(linear_cka(&x, &c), Err(Error::Degenerate(_))));
        assert!(linear_cka(&x.slice_rows(0, 2), &x.slice_rows(0, 2)).is_err());
    }

    #[test]
    fn masked_cells_and_thirds() {
        let x = gaussian(20, 3, 1);
        let c = Tensor::filled(&[20, 3], 1.0);
        let id = |k: usize| LayerId {
            ordinal: k,
            label: format!("dense{k}"),
        };
        let acts = vec![(id(1), x.clone()), (id(2), c), (id(3), x)];
        let m = CkaMatrix::from_activations(&acts, &acts, CkaCondition::CleanClean, ("a".into(), "a".into())).unwrap();
        assert_eq!(m.get(1, 1), None);
        assert!(!m.diagnostics.is_empty());
        assert!((m.upper_third_mean().unwrap() - 1.0).abs() < 1e-12);
        assert!(m.to_csv().contains("NA"));
    }
}
