//! End-to-end checks of the `cvrkit` binary: verb wiring, artifact layout,
//! determinism of reports, and error reporting.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cvrkit"))
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(
        &path,
        r#"
seed = 5

[data]
source = "generate"
n_impressions = 3000
field_cardinalities = [8, 8, 8]
n_days = 5

[model]
layer_widths = [8, 2]
epochs = 1

[sweep]
dropout_rates = [0.2]
alphas = [0.5]
unclick_ratios = [1.0]
k_values = [20]
repetitions = 1
"#,
    )
    .unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn generate_then_train_from_logfile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let gen_out = dir.path().join("gen");
    run_ok(bin().args(["generate", "--config"]).arg(&cfg).arg("--out").arg(&gen_out));
    assert!(gen_out.join("data.log").is_file());
    assert!(gen_out.join("oracle.txt").is_file());
    assert!(gen_out.join("manifest.txt").is_file());

    // retrain from the written log, re-linking the oracle
    let cfg2 = dir.path().join("config2.toml");
    fs::write(
        &cfg2,
        format!(
            r#"
seed = 5

[data]
source = "logfile"
path = "{}"
oracle_path = "{}"
n_days = 5

[model]
layer_widths = [8, 2]
epochs = 1
"#,
            gen_out.join("data.log").display(),
            gen_out.join("oracle.txt").display()
        ),
    )
    .unwrap();
    let train_out = dir.path().join("train");
    run_ok(
        bin()
            .args(["train", "--config"])
            .arg(&cfg2)
            .args(["--model", "joint", "--out"])
            .arg(&train_out),
    );
    let report = fs::read_to_string(train_out.join("report.txt")).unwrap();
    assert!(report.contains("model joint"));
    assert!(report.contains("auc_cvr "));
    // oracle AUC is available because the oracle file was re-linked
    assert!(!report.contains("oracle_auc_cvr_entire_space -"));
    assert!(train_out.join("model.ckpt").is_file());
    assert!(train_out.join("reports.csv").is_file());
}

#[test]
fn train_reports_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        run_ok(
            bin()
                .args(["train", "--config"])
                .arg(&cfg)
                .args(["--model", "esmm", "--out"])
                .arg(out),
        );
    }
    for file in ["report.txt", "reports.csv", "model.ckpt"] {
        assert_eq!(
            fs::read(out_a.join(file)).unwrap(),
            fs::read(out_b.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_ok(
        bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .args(["--model", "single-cvr", "--out"])
            .arg(&out_a),
    );
    run_ok(
        bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .args(["--model", "single-cvr", "--seed", "99", "--out"])
            .arg(&out_b),
    );
    assert_ne!(
        fs::read(out_a.join("report.txt")).unwrap(),
        fs::read(out_b.join("report.txt")).unwrap()
    );
}

#[test]
fn compare_emits_ranked_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("cmp");
    run_ok(
        bin()
            .args(["compare", "--config"])
            .arg(&cfg)
            .args(["--models", "single-cvr,joint", "--n-seeds", "1", "--out"])
            .arg(&out),
    );
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(table.starts_with("model,metric,mean,sd,rank\n"));
    assert!(table.contains("joint,auc_ctcvr,"));
    let reports = fs::read_to_string(out.join("reports.csv")).unwrap();
    assert_eq!(reports.lines().count(), 3, "header plus one row per model");
}

#[test]
fn sweep_and_noise_exp_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let sweep_out = dir.path().join("sweep");
    run_ok(bin().args(["sweep", "--config"]).arg(&cfg).arg("--out").arg(&sweep_out));
    let sweep = fs::read_to_string(sweep_out.join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("dropout_rate,alpha,unclick_ratio,seed,"));
    assert_eq!(sweep.lines().count(), 2);

    let noise_out = dir.path().join("noise");
    run_ok(bin().args(["noise-exp", "--config"]).arg(&cfg).arg("--out").arg(&noise_out));
    let noise = fs::read_to_string(noise_out.join("noise.csv")).unwrap();
    assert!(noise.starts_with("k,seed,mean_kl_noisy,mean_kl_clean\n"));
    assert_eq!(noise.lines().count(), 2);
    assert!(noise_out.join("summary.txt").is_file());
}

#[test]
fn errors_are_one_line_and_categorized() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());

    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--model", "bogus", "--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("usage-error: "));

    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "[model]\ngama = 1\n").unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&bad_cfg)
        .args(["--model", "joint", "--out"])
        .arg(dir.path().join("y"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("config-error: "));

    let out = bin()
        .args(["train", "--config"])
        .arg(dir.path().join("missing.toml"))
        .args(["--model", "joint", "--out"])
        .arg(dir.path().join("z"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("config-error: "));
}

#[test]
fn default_shipped_config_is_valid() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let path = manifest.join("../../configs/default.toml");
    let text = fs::read_to_string(path).unwrap();
    let cfg: cvrkit::config::ExperimentConfig = toml::from_str(&text).unwrap();
    cfg.validate().unwrap();
    // the shipped file spells out exactly the built-in defaults
    let mut expected = cvrkit::config::ExperimentConfig::default();
    expected.seed = 0;
    assert_eq!(cfg, expected);
}
