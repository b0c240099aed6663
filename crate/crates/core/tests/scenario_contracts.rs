//! What each training scenario may touch, what each threat model may query,
//! and rerunning from serialized manifests.

use robustlab::attacks::ThreatModel;
use robustlab::data::{gen_synthetic, stratified_split, AugmentSpec, DataKind, Dataset, SyntheticKind};
use robustlab::evaluation::{evaluate, results_csv, scenario_sweep, EvalAttack};
use robustlab::losses::Scheme;
use robustlab::models::{EncoderConfig, ModelBundle};
use robustlab::training::{run_scenario, ModelSpec, RunManifest, Scenario, ScenarioSpec};

fn data() -> (Dataset, Dataset) {
    let all = gen_synthetic(SyntheticKind::TwoGaussians, 300, 10, 2, 3, 3.0).unwrap();
    let mut parts = stratified_split(&all, &[0.8, 0.2], 3).unwrap();
    let test = parts.pop().unwrap();
    (parts.pop().unwrap(), test)
}

fn template(scenario: Scenario, scheme: Scheme) -> ScenarioSpec {
    let model = ModelSpec {
        encoder: EncoderConfig::dense(10, &[16, 8]),
        head_dim: 4,
    };
    let mut spec = ScenarioSpec::new(scenario, scheme, model, AugmentSpec::default_for(DataKind::Vector), 4);
    spec.pretrain_epochs = 3;
    spec.finetune_epochs = 3;
    spec.batch_size = 64;
    spec.adv_batch_size = 64;
    spec.optimizer.lr = 3e-3;
    spec.train_attack.epsilon = 0.25;
    spec.train_attack.step_size = 0.1;
    spec
}

fn bits(v: Vec<f64>) -> Vec<u64> {
    v.into_iter().map(f64::to_bits).collect()
}

fn head_bits(m: &ModelBundle) -> Vec<u64> {
    bits(m.head.iter().flat_map(|l| l.weight.data().iter().chain(l.bias.data()).copied()).collect())
}

fn attacks() -> Vec<EvalAttack> {
    vec![
        EvalAttack::new(ThreatModel::I, 0.0, 5),
        EvalAttack::new(ThreatModel::I, 0.25, 5),
        EvalAttack::new(ThreatModel::II, 0.25, 5),
    ]
}

/// Cells whose fine-tuning touched the encoder or head, or left the
/// classifier untrained.
pub fn fixed_encoder_violations() -> Vec<String> {
    let (train, _) = data();
    let mut bad = Vec::new();
    for scenario in [Scenario::St, Scenario::At, Scenario::PartialAt] {
        for scheme in [Scheme::Cl, Scheme::Scl] {
            let rec = run_scenario(&train, &template(scenario, scheme)).unwrap();
            let pre = rec.pretrained.as_ref().unwrap();
            if bits(pre.encoder_snapshot()) != bits(rec.model.encoder_snapshot()) {
                bad.push(format!("{scenario} {scheme}: encoder changed"));
            }
            if head_bits(pre) != head_bits(&rec.model) {
                bad.push(format!("{scenario} {scheme}: head changed"));
            }
            if pre.classifier == rec.model.classifier {
                bad.push(format!("{scenario} {scheme}: classifier did not train"));
            }
        }
    }
    bad
}

/// Full-AT cells whose encoder did not move.
pub fn full_at_violations() -> Vec<String> {
    let (train, _) = data();
    [Scheme::Cl, Scheme::Scl]
        .into_iter()
        .filter(|&scheme| {
            let rec = run_scenario(&train, &template(Scenario::FullAt, scheme)).unwrap();
            bits(rec.pretrained.unwrap().encoder_snapshot()) == bits(rec.model.encoder_snapshot())
        })
        .map(|scheme| format!("Full-AT {scheme}: encoder unchanged"))
        .collect()
}

/// Evaluation entries that break the query contract of their threat model.
pub fn query_violations() -> Vec<String> {
    let (train, test) = data();
    let mut bad = Vec::new();
    for scheme in [Scheme::Cl, Scheme::Scl, Scheme::SlCl, Scheme::ClScl, Scheme::Sl] {
        let spec = template(Scenario::St, scheme);
        let rec = run_scenario(&train, &spec).unwrap();
        let report = evaluate(&rec.model, &test, &attacks(), spec.scenario, scheme, (0.5, 0.1), "m", 0).unwrap();
        for e in &report.robust {
            let ok = match (e.threat_model, e.epsilon > 0.0) {
                (ThreatModel::II, _) if scheme == Scheme::Sl => e.accuracy.is_none() && e.stats.gradient_queries == 0,
                (ThreatModel::II, _) => e.stats.classifier_queries == 0 && e.stats.gradient_queries > 0,
                (ThreatModel::I, true) => e.stats.classifier_queries == e.stats.gradient_queries,
                (ThreatModel::I, false) => e.accuracy == Some(report.clean_accuracy),
            };
            if !ok {
                bad.push(format!("{scheme} {} eps {}: {:?}", e.threat_model, e.epsilon, e.stats));
            }
        }
    }
    bad
}

/// Runs a small sweep, reruns every cell from its serialized manifest and
/// compares loss and results CSV bytes.
pub fn manifest_rerun_violations() -> Vec<String> {
    let (train, test) = data();
    let grid = [
        (Scenario::St, Scheme::Cl),
        (Scenario::St, Scheme::Sl),
        (Scenario::St, Scheme::ClScl),
        (Scenario::At, Scheme::Scl),
        (Scenario::PartialAt, Scheme::Cl),
        (Scenario::FullAt, Scheme::Cl),
    ];
    let table = scenario_sweep(&train, &test, &template(Scenario::St, Scheme::Cl), &grid, &[4, 5], &attacks()).unwrap();
    let mut bad: Vec<String> = table.failures.iter().map(|f| format!("{f:?}")).collect();
    let dir = tempfile::tempdir().unwrap();
    let mut rerun = Vec::new();
    for (k, cell) in table.cells.iter().enumerate() {
        let path = dir.path().join(format!("manifest_{k}.json"));
        cell.record.write_manifest(&path).unwrap();
        let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        if manifest.dataset_fingerprint != train.fingerprint() || manifest.spec_hash != manifest.spec.hash() {
            bad.push(format!("cell {k}: manifest does not match its inputs"));
        }
        let spec = &manifest.spec;
        let rec = run_scenario(&train, spec).unwrap();
        if rec.loss_csv() != cell.record.loss_csv() {
            bad.push(format!("cell {k}: loss CSV differs"));
        }
        let id = format!("{}_{}_seed{}", spec.scenario, spec.loss.scheme, spec.seed);
        let taus = (spec.loss.tau_cl, spec.loss.tau_scl);
        let report = evaluate(&rec.model, &test, &attacks(), spec.scenario, spec.loss.scheme, taus, &id, spec.seed).unwrap();
        rerun.push((report, spec.seed));
    }
    let rows: Vec<_> = rerun.iter().map(|(r, s)| (r, *s, None)).collect();
    if results_csv(&rows).into_bytes() != table.results_csv().into_bytes() {
        bad.push("results CSV differs".into());
    }
    bad
}

#[test]
fn fixed_encoder_scenarios_leave_it_bitwise_unchanged() {
    assert_eq!(fixed_encoder_violations(), Vec::<String>::new());
}

#[test]
fn full_at_updates_the_encoder() {
    assert_eq!(full_at_violations(), Vec::<String>::new());
}

#[test]
fn threat_model_ii_never_queries_the_classifier() {
    assert_eq!(query_violations(), Vec::<String>::new());
}

#[test]
fn manifests_reproduce_identical_csvs() {
    assert_eq!(manifest_rerun_violations(), Vec::<String>::new());
}
