//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 1-5 rerun the property suites' measurements. Criteria 6-10 train
//! the image fixture (`configs/mnist_subset.toml`) for seeds 0, 1 and 2; a
//! directional claim holds when it holds for at least two seeds. Criterion 11
//! reruns that sweep from its serialized manifests.
//!
//! Exits 0 even when criteria fail so the workspace test run reports them
//! without aborting; set `ACCEPTANCE_STRICT=1` to exit 1 on any failure.

#[allow(dead_code, unused_imports)]
#[path = "cka_algebra.rs"]
mod cka_algebra;
#[allow(dead_code, unused_imports)]
#[path = "loss_oracles.rs"]
mod loss_oracles;
#[allow(dead_code, unused_imports)]
#[path = "scenario_contracts.rs"]
mod scenario_contracts;

use robustlab::analysis::{sweep_summary, AnalysisSummary};
use robustlab::attacks::ThreatModel;
use robustlab::config::ExperimentConfig;
use robustlab::data::DataKind;
use robustlab::evaluation::{scenario_sweep, EvalAttack, SweepTable};
use robustlab::losses::Scheme;
use robustlab::training::{RunManifest, Scenario, ScenarioSpec};
use std::fs;
use std::path::Path;
use std::time::Instant;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    id: u32,
    claim: &'static str,
    pass: bool,
    detail: String,
}

fn print(o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("{tag} C{:<2} {}: {}", o.id, o.claim, o.detail);
}

fn violations(v: &[String]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.join("; ")
    }
}

fn property_criteria() -> Vec<Outcome> {
    let mut out = Vec::new();

    let (input, param, secs) = gradcheck::hundred_cases();
    out.push(Outcome {
        id: 1,
        claim: "autodiff matches central differences",
        pass: input < gradcheck::TOL && param < gradcheck::TOL && secs < 60.0,
        detail: format!("max rel err input {input:.1e}, params {param:.1e} (< 1e-4) over 100 cases in {secs:.1}s"),
    });

    let nt = loss_oracles::nt_xent_worst();
    let sc = loss_oracles::supcon_worst();
    let single = loss_oracles::single_pair_worst();
    let ln3 = loss_oracles::identical_supcon_worst();
    let lnc = loss_oracles::uniform_ce_worst();
    out.push(Outcome {
        id: 2,
        claim: "loss oracles",
        pass: nt < 1e-10 && sc < 1e-10 && single == 0.0 && ln3 < 1e-9 && lnc < 1e-12,
        detail: format!(
            "NT-Xent {nt:.1e}, SupCon {sc:.1e} (< 1e-10); n=1 NT-Xent {single:e}; ln 3 off by {ln3:.1e}; ln C off by {lnc:.1e}"
        ),
    });

    let (excess, outside) = pgd_invariants::random_attacks();
    let identity = pgd_invariants::zero_budget_is_identity();
    let fixed = pgd_invariants::zero_gradient_is_fixed();
    let idem = pgd_invariants::projection_idempotent();
    let ascent = pgd_invariants::ascent_counts();
    let ascent_ok = ascent.iter().all(|&(_, r)| r * 100 >= 95 * 50);
    out.push(Outcome {
        id: 3,
        claim: "PGD invariants",
        pass: excess <= 1e-9 && outside == 0 && identity && fixed && idem && ascent_ok,
        detail: format!(
            "budget excess {excess:.1e}, clamp violations {outside} over 1000 attacks; eps=0 identity {identity}; \
             zero-gradient fixed point {fixed}; idempotent projection {idem}; loss raised on {}",
            ascent.iter().map(|(l, r)| format!("{r}/50 ({l:?})")).collect::<Vec<_>>().join(", ")
        ),
    });

    let selfsim = cka_algebra::self_similarity_dev();
    let sym = cka_algebra::symmetry_dev();
    let orth = cka_algebra::orthogonal_dev();
    let scale = cka_algebra::scale_dev();
    let perm = cka_algebra::permutation_dev();
    let indep = cka_algebra::independent_value();
    out.push(Outcome {
        id: 4,
        claim: "CKA algebra",
        pass: selfsim < 1e-9 && sym < 1e-12 && orth < 1e-9 && scale < 1e-9 && perm < 1e-12 && indep < 0.2,
        detail: format!(
            "self {selfsim:.1e}, symmetry {sym:.1e}, orthogonal {orth:.1e}, scale {scale:.1e}, \
             permutation {perm:.1e}, independent gaussians {indep:.3}"
        ),
    });

    let frozen = scenario_contracts::fixed_encoder_violations();
    let full = scenario_contracts::full_at_violations();
    let queries = scenario_contracts::query_violations();
    let rerun = scenario_contracts::manifest_rerun_violations();
    out.push(Outcome {
        id: 5,
        claim: "scenario contracts",
        pass: frozen.is_empty() && full.is_empty() && queries.is_empty() && rerun.is_empty(),
        detail: format!(
            "fixed encoder {}; Full-AT moves encoder {}; TM-II classifier queries {}; manifest reruns {}",
            violations(&frozen),
            violations(&full),
            violations(&queries),
            violations(&rerun)
        ),
    });
    out
}

/// Per-seed values of a directional claim and whether each held.
struct Directional {
    values: Vec<String>,
    held: usize,
    known: usize,
}

impl Directional {
    fn new() -> Self {
        Directional {
            values: Vec::new(),
            held: 0,
            known: 0,
        }
    }

    fn push(&mut self, seed: u64, check: Option<(bool, String)>) {
        match check {
            Some((ok, text)) => {
                self.known += 1;
                self.held += usize::from(ok);
                self.values.push(format!("seed {seed}: {text}{}", if ok { "" } else { " x" }));
            }
            None => self.values.push(format!("seed {seed}: missing")),
        }
    }

    fn outcome(self, id: u32, claim: &'static str) -> Outcome {
        Outcome {
            id,
            claim,
            pass: self.held >= 2,
            detail: format!("held on {}/{} seeds [{}]", self.held, SEEDS.len(), self.values.join("; ")),
        }
    }
}

struct Fixture<'a> {
    table: &'a SweepTable,
    summary: &'a AnalysisSummary,
    eps: f64,
}

impl Fixture<'_> {
    fn robust(&self, sc: Scenario, k: Scheme, seed: u64, tm: ThreatModel) -> Option<f64> {
        self.table.cell(sc, k, seed)?.report.robust_accuracy(tm, self.eps)
    }

    fn tm1(&self, sc: Scenario, k: Scheme, seed: u64) -> Option<f64> {
        self.robust(sc, k, seed, ThreatModel::I)
    }

    fn final_cka(&self, sc: Scenario, k: Scheme, seed: u64) -> Option<f64> {
        let e = self.summary.final_layer_cka.iter().find(|e| e.scenario == sc && e.scheme == k && e.seed == seed)?;
        e.cka
    }

    fn cross(&self, sc: Scenario, seed: u64) -> Option<f64> {
        let e = self.summary.cross_model.iter().find(|e| e.scenario == sc && e.seed == seed)?;
        e.upper_third
    }

    fn sweep(&self, seed: u64) -> Vec<(f64, Option<f64>)> {
        let mut pts: Vec<(f64, Option<f64>)> = self
            .summary
            .epsilon_sweep
            .iter()
            .filter(|e| e.seed == seed && e.scheme == Scheme::Cl)
            .map(|e| (e.train_epsilon, e.final_layer_cka))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }
}

fn pts(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

fn directional_criteria(f: &Fixture) -> Vec<Outcome> {
    use Scenario::*;
    use Scheme::*;
    let mut c6 = Directional::new();
    let mut c7 = Directional::new();
    let mut c8 = Directional::new();
    let mut c9 = Directional::new();
    let mut c10 = Directional::new();
    for seed in SEEDS {
        c6.push(seed, (|| {
            let (cl, scl, sl) = (f.tm1(St, Cl, seed)?, f.tm1(St, Scl, seed)?, f.tm1(St, Sl, seed)?);
            let (slcl, clscl) = (f.tm1(St, SlCl, seed)?, f.tm1(St, ClScl, seed)?);
            let ok = scl.min(sl) - cl >= 0.05 && slcl - cl >= 0.03 && clscl - cl >= 0.03;
            Some((
                ok,
                format!("CL {} SCL {} SL {} SL+CL {} CL+SCL {}", pts(cl), pts(scl), pts(sl), pts(slcl), pts(clscl)),
            ))
        })());
        c7.push(seed, (|| {
            let (at_cl, full_cl) = (f.tm1(At, Cl, seed)?, f.tm1(FullAt, Cl, seed)?);
            let (at_scl, full_scl) = (f.tm1(At, Scl, seed)?, f.tm1(FullAt, Scl, seed)?);
            let ok = full_cl - at_cl >= 0.05 && (full_scl - at_scl).abs() <= 0.05;
            Some((
                ok,
                format!(
                    "CL Full-AT {} vs AT {}, SCL Full-AT {} vs AT {}",
                    pts(full_cl),
                    pts(at_cl),
                    pts(full_scl),
                    pts(at_scl)
                ),
            ))
        })());
        c8.push(seed, (|| {
            let (st, at) = (f.final_cka(St, Cl, seed)?, f.final_cka(At, Cl, seed)?);
            let curve = f.sweep(seed);
            let vals: Vec<f64> = curve.iter().map(|p| p.1).collect::<Option<_>>()?;
            if vals.len() < 2 {
                return None;
            }
            let monotone = vals.windows(2).all(|w| w[1] >= w[0] - 0.02);
            let ok = at - st >= 0.2 && monotone;
            let text: Vec<String> = curve.iter().zip(&vals).map(|(p, v)| format!("{:.4}:{v:.3}", p.0)).collect();
            Some((ok, format!("AT {at:.3} - ST {st:.3} = {:.3}, by train eps [{}]", at - st, text.join(" "))))
        })());
        c9.push(seed, (|| {
            let (st, at) = (f.cross(St, seed)?, f.cross(At, seed)?);
            Some((at - st >= 0.1, format!("AT {at:.3} - ST {st:.3} = {:.3}", at - st)))
        })());
        c10.push(seed, (|| {
            let (tm1, tm2) = (f.tm1(At, Cl, seed)?, f.robust(At, Cl, seed, ThreatModel::II)?);
            Some((tm2 - tm1 >= 0.10, format!("TM-II {} vs TM-I {}", pts(tm2), pts(tm1))))
        })());
    }
    vec![
        c6.outcome(6, "ST robust ordering CL < min(SCL, SL) - 5, combined > CL + 3"),
        c7.outcome(7, "Full-AT(CL) >= AT(CL) + 5, |Full-AT(SCL) - AT(SCL)| <= 5"),
        c8.outcome(8, "final-layer clean-adv CKA AT - ST >= 0.2, non-decreasing in train eps"),
        c9.outcome(9, "upper-third cross-model CKA CL vs SL, AT - ST >= 0.1"),
        c10.outcome(10, "AT(CL) TM-II robust >= TM-I robust + 10"),
    ]
}

/// Reruns the sweep from the cells' manifests after a JSON round trip.
fn rerun_from_manifests(
    table: &SweepTable,
    dir: &Path,
    train: &robustlab::data::Dataset,
    test: &robustlab::data::Dataset,
    attacks: &[EvalAttack],
) -> Result<String, String> {
    let mut specs: Vec<ScenarioSpec> = Vec::new();
    for (k, cell) in table.cells.iter().enumerate() {
        let path = dir.join(format!("manifest_{k:02}.json"));
        cell.record.write_manifest(&path).map_err(|e| e.to_string())?;
        let text = fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        if m.dataset_fingerprint != train.fingerprint() {
            return Err(format!("manifest {k} names a different dataset"));
        }
        specs.push(m.spec);
    }
    let first = specs.first().ok_or("no cells")?.clone();
    let key = |s: &ScenarioSpec| {
        let mut s = s.clone();
        (s.scenario, s.loss.scheme, s.seed) = (first.scenario, first.loss.scheme, first.seed);
        s
    };
    if specs.iter().any(|s| key(s) != first) {
        return Err("manifests do not share one template".into());
    }
    let mut grid: Vec<(Scenario, Scheme)> = Vec::new();
    let mut seeds: Vec<u64> = Vec::new();
    for s in &specs {
        if !grid.contains(&(s.scenario, s.loss.scheme)) {
            grid.push((s.scenario, s.loss.scheme));
        }
        if !seeds.contains(&s.seed) {
            seeds.push(s.seed);
        }
    }
    let again = scenario_sweep(train, test, &first, &grid, &seeds, attacks).map_err(|e| e.to_string())?;
    Ok(again.results_csv())
}

fn main() {
    let clock = Instant::now();
    let mut outcomes = property_criteria();
    for o in &outcomes {
        print(o);
    }

    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mnist_subset.toml");
    let mut cfg = ExperimentConfig::load(&root).expect("image fixture config");
    cfg.materialize();
    cfg.validate().expect("image fixture config is valid");
    assert_eq!(cfg.sweep.seeds.as_deref(), Some(&SEEDS[..]), "fixture config must sweep seeds 0, 1, 2");
    let (train, test) = cfg.dataset.load(root.parent().unwrap(), cfg.seed).expect("image fixture data");
    let template = cfg.template();
    let attacks = cfg.eval_attacks();
    let eps = attacks
        .iter()
        .filter(|a| a.threat_model == ThreatModel::I)
        .map(|a| a.epsilon)
        .fold(0.0, f64::max);
    assert!((eps - 8.0 / 255.0).abs() < 1e-12, "fixture evaluates at {eps}, expected 8/255");

    let table = scenario_sweep(&train, &test, &template, &cfg.sweep_grid(), &SEEDS, &attacks).expect("sweep");
    for (sc, k, seed, e) in &table.failures {
        eprintln!("cell {sc} {k} seed {seed} failed: {e}");
    }
    let swept = clock.elapsed().as_secs_f64();
    let attack = cfg.analysis_attack(DataKind::Image).expect("analysis attack");
    let eps_list = cfg.analysis.epsilon_sweep.clone().unwrap_or_default();
    let (summary, _) =
        sweep_summary(&table, &train, &test, &template, &eps_list, &attack, cfg.analysis.cka_samples).expect("analysis");

    let out_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&out_dir).expect("output dir");
    let csv = table.results_csv();
    fs::write(out_dir.join("results.csv"), &csv).expect("write results");
    let json = serde_json::to_string_pretty(&summary).expect("summary json");
    fs::write(out_dir.join("analysis_summary.json"), json).expect("write summary");

    let fixture = Fixture {
        table: &table,
        summary: &summary,
        eps,
    };
    for o in directional_criteria(&fixture) {
        print(&o);
        outcomes.push(o);
    }

    let manifests = out_dir.join("manifests");
    fs::create_dir_all(&manifests).expect("manifest dir");
    let c11 = match rerun_from_manifests(&table, &manifests, &train, &test, &attacks) {
        Ok(again) => Outcome {
            id: 11,
            claim: "sweep rerun from manifests gives identical results.csv",
            pass: again.as_bytes() == csv.as_bytes() && table.failures.is_empty(),
            detail: format!(
                "{} cells, {} bytes, identical {}, failed cells {}",
                table.cells.len(),
                csv.len(),
                again.as_bytes() == csv.as_bytes(),
                table.failures.len()
            ),
        },
        Err(e) => Outcome {
            id: 11,
            claim: "sweep rerun from manifests gives identical results.csv",
            pass: false,
            detail: e,
        },
    };
    print(&c11);
    outcomes.push(c11);

    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed (sweep {swept:.0}s, total {:.0}s, outputs in {})",
        outcomes.len(),
        clock.elapsed().as_secs_f64(),
        out_dir.display()
    );
    if passed < outcomes.len() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
