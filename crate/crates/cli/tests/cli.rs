use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_robustlab");

fn config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"seed = 0
output_dir = "out"

[dataset]
source = "synthetic"
kind = "two_gaussians"
n = 200
dim = 20
n_classes = 2
separation = 8.0

[model]
head_dim = 8

[model.encoder]
kind = "dense"
layer_widths = [16, 8]
input_shape = [20]

[loss]
scheme = "SL"

[scenario]
scenario = "ST"
pretrain_epochs = 2
finetune_epochs = 2
optimizer = {{ lr = 3e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8 }}

[attacks]
training = {{ epsilon = 0.25, step_size = 0.125, steps = 2, random_start = false, driving_loss = "CE" }}
evaluation = [{{ threat_model = "I", epsilon = 0.25, steps = 3, random_start = true }}]

[analysis]
cka = false
cka_samples = 40
{extra}
"#
    );
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("ROBUSTLAB_OUTPUT_DIR").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_under(dir: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out
}

fn manifest_files(dir: &Path) -> BTreeSet<String> {
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
}

fn assert_no_orphans(dir: &Path) {
    let mut on_disk = files_under(dir);
    on_disk.remove("manifest.json");
    assert_eq!(on_disk, manifest_files(dir), "files in {} vs manifest", dir.display());
}

#[test]
fn train_writes_checkpoint_manifest_and_losses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let o = run(&["train", "-c", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("out/train");
    assert!(dir.join("model.ckpt").is_file());
    assert!(dir.join("losses.csv").is_file());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["runs"][0]["spec"]["scenario"], "ST");
    assert_no_orphans(&dir);
    let losses = fs::read_to_string(dir.join("losses.csv")).unwrap();
    assert!(losses.starts_with("epoch,phase,loss\n0,supervised,"));
}

#[test]
fn evaluate_without_checkpoint_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let o = run(&["evaluate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let expected = tmp.path().join("out").join("train").join("model.ckpt");
    assert!(stderr(&o).contains(&expected.display().to_string()), "{}", stderr(&o));
}

#[test]
fn invalid_config_exits_1_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("n_classes = 2", "n_classes = \"two\"");
    fs::write(&cfg, text).unwrap();
    let o = run(&["train", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exp.toml:9:"), "{}", stderr(&o));

    let o = run(&["train", "-c", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.toml"));
}

#[test]
fn runtime_failure_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    assert!(run(&["train", "-c", cfg.to_str().unwrap()]).status.success());
    // A 20-dimensional model against 10-dimensional data.
    let o = run(&[
        "evaluate",
        "-c",
        cfg.to_str().unwrap(),
        "--set",
        "dataset.dim=10",
        "--set",
        "model.encoder.input_shape=[10]",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sweep_emits_one_row_per_scenario_and_scheme_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "[sweep]\nschemes = [\"SL\", \"CL\"]\n");
    let o = run(&["sweep", "-c", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("out/sweep");
    let first = fs::read_to_string(dir.join("results.csv")).unwrap();
    for scheme in ["SL", "CL"] {
        let rows = first.lines().filter(|l| l.split(',').nth(1) == Some(scheme)).count();
        assert_eq!(rows, 4, "{scheme}:\n{first}");
    }
    assert_no_orphans(&dir);

    let snapshot = dir.parent().unwrap().join("first-manifest.json");
    fs::copy(dir.join("manifest.json"), &snapshot).unwrap();
    let o = run(&["sweep", "-c", snapshot.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(first, fs::read_to_string(dir.join("results.csv")).unwrap());
}

#[test]
fn output_dir_can_be_overridden_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let elsewhere = tmp.path().join("elsewhere");
    let o = Command::new(BIN)
        .args(["gen-data", "-c", cfg.to_str().unwrap()])
        .env("ROBUSTLAB_OUTPUT_DIR", &elsewhere)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = elsewhere.join("gen-data");
    assert!(dir.join("train.csv").is_file());
    assert!(!tmp.path().join("out").exists());
    assert_no_orphans(&dir);
}

#[test]
fn cka_probe_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let c = cfg.to_str().unwrap();
    assert!(run(&["train", "-c", c]).status.success());
    for cmd in ["evaluate", "cka", "probe", "report"] {
        let o = run(&[cmd, "-c", c]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        assert_no_orphans(&tmp.path().join("out").join(cmd));
    }
    let out = tmp.path().join("out");
    let pgm = fs::read(out.join("cka/cka_clean-clean.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n2 2\n255\n"));
    assert_eq!(pgm[pgm.len() - 4], 255);
    let probes = fs::read_to_string(out.join("probe/probes.csv")).unwrap();
    assert_eq!(probes.lines().count(), 4);
    let html = fs::read_to_string(out.join("report/report.html")).unwrap();
    assert!(html.contains("<svg"));
    assert!(html.contains("class=\"badge\""));
    assert!(out.join("report/report.md").is_file());
}
