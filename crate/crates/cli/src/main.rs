//! `robustlab` command-line front end.
//!
//! Every command reads an experiment config (TOML, or the `manifest.json` of
//! an earlier run), writes only below `<output_dir>/<command>/`, and finishes
//! with a `manifest.json` that lists every file it wrote.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use robustlab::analysis::{
    cka_heatmap, cross_model_cka, divergence_curve, linear_probe, sweep_summary, AnalysisSummary,
};
use robustlab::attacks::{AttackSpec, ThreatModel};
use robustlab::config::ExperimentConfig;
use robustlab::data::{save_csv, save_idx, DataKind, Dataset};
use robustlab::evaluation::{evaluate, results_csv, scenario_sweep};
use robustlab::models::ModelBundle;
use robustlab::report::{
    direction_checks, html_report, line_chart_svg, markdown_report, parse_results_csv, render_heatmap, Figure,
    ResultRow,
};
use robustlab::rng::derive_seed;
use robustlab::training::{run_scenario, RunManifest};

/// Environment variable that overrides `output_dir`.
const OUTPUT_ENV: &str = "ROBUSTLAB_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "robustlab", version, about = "Adversarial robustness experiments at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Experiment config (TOML) or a command manifest (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config value, e.g. `--set scenario.pretrain_epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or convert the dataset and write train/test files.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured scenario and save the model.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Clean and robust accuracy of a trained model.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<output_dir>/train/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// CKA heatmaps and the clean/adversarial divergence curve.
    Cka {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Second model for a cross-model grid.
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Linear probes on the configured layers.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate the scenario x scheme x seed grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Collate results, curves and heatmaps into report.html and report.md.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Cka { .. } => "cka",
            Command::Probe { .. } => "probe",
            Command::Sweep { .. } => "sweep",
            Command::Report { .. } => "report",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenData { common }
            | Command::Train { common }
            | Command::Evaluate { common, .. }
            | Command::Cka { common, .. }
            | Command::Probe { common, .. }
            | Command::Sweep { common }
            | Command::Report { common } => common,
        }
    }
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<robustlab::Error> for Failure {
    fn from(e: robustlab::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// What a command manifest records.
#[derive(Serialize, Deserialize)]
struct CommandManifest {
    command: String,
    config_hash: String,
    /// Canonical TOML of the config the command ran with.
    config: String,
    /// Directory that relative paths in `config` resolve against.
    config_dir: PathBuf,
    crate_version: String,
    /// Files written, relative to the command directory.
    files: Vec<String>,
    runs: Vec<RunManifest>,
}

struct Context {
    cfg: ExperimentConfig,
    base: PathBuf,
    /// `<output_dir>/<command>`.
    dir: PathBuf,
    output_dir: PathBuf,
    written: Vec<PathBuf>,
    runs: Vec<RunManifest>,
}

impl Context {
    fn path(&mut self, rel: impl AsRef<Path>) -> Outcome<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Failure::Runtime(format!("{}: {e}", parent.display())))?;
        }
        self.written.push(p.clone());
        Ok(p)
    }

    fn write(&mut self, rel: impl AsRef<Path>, body: impl AsRef<[u8]>) -> Outcome<()> {
        let p = self.path(rel)?;
        fs::write(&p, body).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))
    }

    fn data(&self) -> Outcome<(Dataset, Dataset)> {
        self.cfg
            .dataset
            .load(&self.base, self.cfg.seed)
            .map_err(|e| Failure::Invalid(format!("dataset: {e}")))
    }

    fn checkpoint(&self, explicit: Option<&PathBuf>) -> Outcome<ModelBundle> {
        let path = explicit.cloned().unwrap_or_else(|| self.output_dir.join("train").join("model.ckpt"));
        if !path.is_file() {
            return Err(Failure::Invalid(format!("checkpoint not found: {}", path.display())));
        }
        ModelBundle::load_checkpoint(&path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
    }

    /// Attack used for representation analysis: the strongest Threat
    /// Model-I evaluation attack.
    fn analysis_attack(&self, kind: DataKind) -> Outcome<AttackSpec> {
        self.cfg
            .analysis_attack(kind)
            .ok_or_else(|| Failure::Invalid("analysis needs a Threat Model-I evaluation attack".into()))
    }

    fn finish(mut self, command: &str) -> Outcome<()> {
        self.written.sort();
        self.written.dedup();
        let files = self
            .written
            .iter()
            .map(|p| p.strip_prefix(&self.dir).unwrap_or(p).to_string_lossy().replace('\\', "/"))
            .collect();
        let manifest = CommandManifest {
            command: command.to_string(),
            config_hash: self.cfg.hash(),
            config: self.cfg.to_toml(),
            config_dir: self.base.clone(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            files,
            runs: self.runs,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let p = self.dir.join("manifest.json");
        fs::write(&p, json + "\n").map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))
    }
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

/// Applies `key=value` overrides to the canonical TOML of `cfg`. Values are
/// parsed as TOML and fall back to plain strings.
fn apply_overrides(cfg: ExperimentConfig, overrides: &[String]) -> Outcome<ExperimentConfig> {
    if overrides.is_empty() {
        return Ok(cfg);
    }
    let mut table: toml::Table = toml::from_str(&cfg.to_toml()).expect("canonical TOML parses");
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Failure::Invalid(format!("override {o:?} is not KEY=VALUE")))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields one part");
        let mut cur = &mut table;
        for p in parents {
            cur = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Failure::Invalid(format!("override {key}: {p} is not a table")))?;
        }
        cur.insert(last.to_string(), value);
    }
    let text = toml::to_string(&table).expect("table serializes");
    ExperimentConfig::from_toml_str(&text).map_err(|e| Failure::Invalid(format!("after overrides: {e}")))
}

fn load_context(command: &str, common: &Common) -> Outcome<Context> {
    let path = &common.config;
    if !path.is_file() {
        return Err(Failure::Invalid(format!("config not found: {}", path.display())));
    }
    let is_manifest = path.extension().is_some_and(|e| e == "json");
    let (cfg, base) = if is_manifest {
        let text = fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        let m: CommandManifest = serde_json::from_str(&text)
            .map_err(|e| Failure::Invalid(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
        let cfg = ExperimentConfig::from_toml_str(&m.config)
            .map_err(|e| Failure::Invalid(format!("{} (embedded config): {e}", path.display())))?;
        (cfg, m.config_dir)
    } else {
        let cfg = ExperimentConfig::load(path).map_err(|e| Failure::Invalid(e.to_string()))?;
        let base = absolute(path).parent().map(Path::to_path_buf).unwrap_or_default();
        (cfg, base)
    };
    let mut cfg = apply_overrides(cfg, &common.overrides)?;
    if let Ok(dir) = std::env::var(OUTPUT_ENV) {
        cfg.output_dir = absolute(Path::new(&dir));
    }
    let output_dir = if cfg.output_dir.is_absolute() {
        cfg.output_dir.clone()
    } else {
        base.join(&cfg.output_dir)
    };
    let dir = output_dir.join(command);
    fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    Ok(Context {
        cfg,
        base,
        dir,
        output_dir,
        written: Vec::new(),
        runs: Vec::new(),
    })
}

fn cmd_gen_data(ctx: &mut Context) -> Outcome<()> {
    let (train, test) = ctx.data()?;
    match train.kind {
        DataKind::Vector => {
            let p = ctx.path("train.csv")?;
            save_csv(&train, &p)?;
            let p = ctx.path("test.csv")?;
            save_csv(&test, &p)?;
        }
        DataKind::Image => {
            for (d, name) in [(&train, "train"), (&test, "t10k")] {
                let images = ctx.path(format!("{name}-images-idx3-ubyte"))?;
                let labels = ctx.path(format!("{name}-labels-idx1-ubyte"))?;
                save_idx(d, images, labels)?;
            }
        }
    }
    let summary = format!(
        "split,n,classes,fingerprint\ntrain,{},{},{}\ntest,{},{},{}\n",
        train.len(),
        train.n_classes,
        train.fingerprint(),
        test.len(),
        test.n_classes,
        test.fingerprint()
    );
    ctx.write("datasets.csv", summary)
}

fn cmd_train(ctx: &mut Context) -> Outcome<()> {
    let (train, _) = ctx.data()?;
    let spec = ctx.cfg.template();
    spec.validate().map_err(|e| Failure::Invalid(e.to_string()))?;
    let record = run_scenario(&train, &spec)?;
    let p = ctx.path("model.ckpt")?;
    record.model.save_checkpoint(&p)?;
    if let Some(pre) = &record.pretrained {
        let p = ctx.path("pretrained.ckpt")?;
        pre.save_checkpoint(&p)?;
    }
    let p = ctx.path("losses.csv")?;
    record.write_loss_csv(&p)?;
    ctx.runs.push(record.manifest);
    Ok(())
}

fn cmd_evaluate(ctx: &mut Context, checkpoint: Option<&PathBuf>) -> Outcome<()> {
    let model = ctx.checkpoint(checkpoint)?;
    let (_, test) = ctx.data()?;
    let spec = ctx.cfg.template();
    let id = format!("{}_{}_seed{}", spec.scenario, spec.loss.scheme, spec.seed);
    let report = evaluate(
        &model,
        &test,
        &ctx.cfg.eval_attacks(),
        spec.scenario,
        spec.loss.scheme,
        (spec.loss.tau_cl, spec.loss.tau_scl),
        &id,
        spec.seed,
    )?;
    ctx.write("results.csv", results_csv(&[(&report, spec.seed, None)]))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    ctx.write("eval_report.json", json + "\n")
}

fn curve_csv(curve: &[Option<f64>], layers: &[String]) -> String {
    let mut s = String::from("layer,cka\n");
    for (l, v) in layers.iter().zip(curve) {
        s.push_str(&format!("{l},{}\n", v.map_or_else(|| "NA".to_string(), |v| v.to_string())));
    }
    s
}

fn cmd_cka(ctx: &mut Context, checkpoint: Option<&PathBuf>, against: Option<&PathBuf>) -> Outcome<()> {
    let model = ctx.checkpoint(checkpoint)?;
    let other = against.map(|p| ctx.checkpoint(Some(p))).transpose()?;
    let (_, test) = ctx.data()?;
    let attack = ctx.analysis_attack(test.kind)?;
    let n = ctx.cfg.analysis.cka_samples.min(test.len());
    let seed = derive_seed(ctx.cfg.seed, "analysis", 0);
    let clean = cka_heatmap(&model, &test, None, n, seed)?;
    let adv = cka_heatmap(&model, &test, Some(&attack), n, seed)?;
    for (m, stem) in [(&clean, "cka_clean-clean"), (&adv, "cka_clean-adv")] {
        ctx.write(format!("{stem}.csv"), m.to_csv())?;
        let p = ctx.path(format!("{stem}.svg"))?;
        ctx.written.push(p.with_extension("pgm"));
        render_heatmap(m, &p, stem)?;
    }
    let curve = divergence_curve(&model, &test, &attack, n, seed)?;
    ctx.write("divergence.csv", curve_csv(&curve, &adv.rows))?;
    if let Some(b) = other {
        for (attack, stem) in [(None, "cross_clean-clean"), (Some(&attack), "cross_adv-adv")] {
            let m = cross_model_cka(&model, &b, &test, attack, n, seed)?;
            ctx.write(format!("{stem}.csv"), m.to_csv())?;
            let p = ctx.path(format!("{stem}.svg"))?;
            ctx.written.push(p.with_extension("pgm"));
            render_heatmap(&m, &p, stem)?;
        }
    }
    Ok(())
}

fn cmd_probe(ctx: &mut Context, checkpoint: Option<&PathBuf>) -> Outcome<()> {
    let model = ctx.checkpoint(checkpoint)?;
    let (train, test) = ctx.data()?;
    let cfg = ctx.cfg.probe_config();
    let layers = ctx.cfg.analysis.probe_layers.clone().unwrap_or_default();
    let mut s = String::from("layer_id,train_accuracy,test_accuracy,n_train,n_test\n");
    for l in layers {
        let r = linear_probe(&model, &train, &test, l, &cfg)?;
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.layer_id, r.train_accuracy, r.test_accuracy, r.n_train, r.n_test
        ));
    }
    ctx.write("probes.csv", s)
}

fn cmd_sweep(ctx: &mut Context) -> Outcome<()> {
    let (train, test) = ctx.data()?;
    let template = ctx.cfg.template();
    let grid = ctx.cfg.sweep_grid();
    let seeds = ctx.cfg.sweep.seeds.clone().unwrap_or_else(|| vec![ctx.cfg.seed]);
    let mut table = scenario_sweep(&train, &test, &template, &grid, &seeds, &ctx.cfg.eval_attacks())?;
    table.record_runtime = ctx.cfg.record_runtime;
    let written = table.write(&ctx.dir)?;
    ctx.written.extend(written);
    if !table.failures.is_empty() {
        let mut s = String::from("scenario,scheme,seed,error\n");
        for (sc, k, seed, e) in &table.failures {
            s.push_str(&format!("{sc},{k},{seed},\"{}\"\n", e.replace('"', "'")));
        }
        ctx.write("failures.csv", s)?;
    }
    for c in &table.cells {
        let stem = format!(
            "{}_{}_seed{}",
            c.spec.scenario,
            c.spec.loss.scheme.as_str().replace('+', "-"),
            c.spec.seed
        );
        let p = ctx.path(format!("models/{stem}.ckpt"))?;
        c.record.model.save_checkpoint(&p)?;
        let p = ctx.path(format!("losses/{stem}.csv"))?;
        c.record.write_loss_csv(&p)?;
        ctx.runs.push(c.record.manifest.clone());
    }
    if ctx.cfg.analysis.cka && !table.cells.is_empty() {
        let attack = ctx.analysis_attack(test.kind)?;
        let eps = ctx.cfg.analysis.epsilon_sweep.clone().unwrap_or_default();
        let (summary, extra) = sweep_summary(
            &table,
            &train,
            &test,
            &template,
            &eps,
            &attack,
            ctx.cfg.analysis.cka_samples,
        )?;
        for (seed, e, record) in extra {
            let p = ctx.path(format!("models/AT_CL_eps{e}_seed{seed}.ckpt"))?;
            record.model.save_checkpoint(&p)?;
            ctx.runs.push(record.manifest);
        }
        let n = ctx.cfg.analysis.cka_samples.min(test.len());
        for c in &table.cells {
            let stem = format!(
                "cka/{}_{}_seed{}_clean-adv",
                c.spec.scenario,
                c.spec.loss.scheme.as_str().replace('+', "-"),
                c.spec.seed
            );
            let m = cka_heatmap(&c.record.model, &test, Some(&attack), n, derive_seed(c.spec.seed, "analysis", 0))?;
            ctx.write(format!("{stem}.csv"), m.to_csv())?;
            let p = ctx.path(format!("{stem}.svg"))?;
            ctx.written.push(p.with_extension("pgm"));
            render_heatmap(&m, &p, &stem[4..])?;
        }
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        ctx.write("analysis_summary.json", json + "\n")?;
    }
    Ok(())
}

fn read_results(output_dir: &Path) -> Outcome<(Vec<ResultRow>, PathBuf)> {
    for cmd in ["sweep", "evaluate"] {
        let p = output_dir.join(cmd).join("results.csv");
        if p.is_file() {
            let text = fs::read_to_string(&p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
            let rows = parse_results_csv(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))?;
            return Ok((rows, p));
        }
    }
    Err(Failure::Invalid(format!(
        "no results to report: run `sweep` or `evaluate` first (looked in {})",
        output_dir.display()
    )))
}

fn svg_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let Ok(entries) = fs::read_dir(dir) else { return out };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(svg_files(&p));
        } else if p.extension().is_some_and(|x| x == "svg") {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn cmd_report(ctx: &mut Context) -> Outcome<()> {
    let (rows, source) = read_results(&ctx.output_dir)?;
    let summary_path = source.with_file_name("analysis_summary.json");
    let summary: Option<AnalysisSummary> = match fs::read_to_string(&summary_path) {
        Ok(t) => Some(
            serde_json::from_str(&t).map_err(|e| Failure::Invalid(format!("{}: {e}", summary_path.display())))?,
        ),
        Err(_) => None,
    };
    let checks = direction_checks(&rows, summary.as_ref());
    let mut figures = Vec::new();

    let mut keys: Vec<(String, ThreatModel, u64)> = rows
        .iter()
        .map(|r| (r.scheme.to_string(), r.threat_model, r.seed))
        .collect();
    keys.sort_by(|a, b| (&a.0, a.1, a.2).cmp(&(&b.0, b.1, b.2)));
    keys.dedup();
    for (scheme, tm, seed) in keys {
        let sel: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.scheme.to_string() == scheme && r.threat_model == tm && r.seed == seed)
            .collect();
        let mut xs: Vec<f64> = sel.iter().map(|r| r.epsilon).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut scenarios: Vec<String> = sel.iter().map(|r| r.scenario.to_string()).collect();
        scenarios.sort();
        scenarios.dedup();
        let series: Vec<(String, Vec<Option<f64>>)> = scenarios
            .iter()
            .map(|sc| {
                let ys = xs
                    .iter()
                    .map(|x| {
                        sel.iter()
                            .find(|r| &r.scenario.to_string() == sc && r.epsilon == *x)
                            .and_then(|r| r.robust_acc)
                    })
                    .collect();
                (sc.clone(), ys)
            })
            .collect();
        if series.iter().all(|(_, ys)| ys.iter().all(Option::is_none)) {
            continue;
        }
        let title = format!("{scheme} robust accuracy, TM-{tm}, seed {seed}");
        let svg = line_chart_svg(&title, "epsilon", "accuracy", &xs, &series);
        let rel = format!("curve_{}_tm{tm}_seed{seed}.svg", scheme.replace('+', "-"));
        ctx.write(&rel, &svg)?;
        figures.push(Figure {
            caption: title,
            file: rel,
            svg,
        });
    }
    for dir in ["sweep", "cka"] {
        for p in svg_files(&ctx.output_dir.join(dir)) {
            let svg = fs::read_to_string(&p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
            let rel = pathdiff(&p, &ctx.dir);
            figures.push(Figure {
                caption: p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                file: rel,
                svg,
            });
        }
    }
    let title = format!("robustlab report ({})", &ctx.cfg.hash()[..12]);
    ctx.write("report.md", markdown_report(&title, &rows, &checks, &figures))?;
    ctx.write("report.html", html_report(&title, &rows, &checks, &figures))?;
    let json = serde_json::to_string_pretty(&checks).expect("checks serialize");
    ctx.write("checks.json", json + "\n")
}

/// `target` relative to `from` when both share `from`'s parent.
fn pathdiff(target: &Path, from: &Path) -> String {
    match (from.parent(), target.strip_prefix(from.parent().unwrap_or(from))) {
        (Some(_), Ok(rel)) => format!("../{}", rel.to_string_lossy()),
        _ => target.to_string_lossy().into_owned(),
    }
}

fn run(cli: Cli) -> Outcome<()> {
    let name = cli.command.name();
    let mut ctx = load_context(name, cli.command.common())?;
    match &cli.command {
        Command::GenData { .. } => cmd_gen_data(&mut ctx)?,
        Command::Train { .. } => cmd_train(&mut ctx)?,
        Command::Evaluate { checkpoint, .. } => cmd_evaluate(&mut ctx, checkpoint.as_ref())?,
        Command::Cka {
            checkpoint, against, ..
        } => cmd_cka(&mut ctx, checkpoint.as_ref(), against.as_ref())?,
        Command::Probe { checkpoint, .. } => cmd_probe(&mut ctx, checkpoint.as_ref())?,
        Command::Sweep { .. } => cmd_sweep(&mut ctx)?,
        Command::Report { .. } => cmd_report(&mut ctx)?,
    }
    let dir = ctx.dir.clone();
    ctx.finish(name)?;
    println!("{name}: wrote {}", dir.join("manifest.json").display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(2)
        }
    }
}
