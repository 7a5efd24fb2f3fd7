use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mim-spectral"))
}

fn run_in(out: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("MIM_THREADS")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn alpha_c_prints_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["alpha-c", "--model", "norm-sq", "--p", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((summary["alpha_c"].as_f64().unwrap() - 2.0).abs() < 1e-9);

    let doc = read_json(&dir.path().join("alpha_c.json"));
    let manifest = read_json(&dir.path().join("alpha_c.manifest.json"));
    assert_eq!(doc["manifest"], manifest["id"]);
    for key in [
        "tool", "version", "id", "command_line", "model", "p", "seeds", "parameters", "wall_time_s",
        "outputs", "content_hash",
    ] {
        assert!(manifest.get(key).is_some(), "manifest lacks {key}");
    }
    assert_eq!(manifest["model"], "norm-sq");
    assert_eq!(manifest["p"], 4);
    assert!(manifest["outputs"]["alpha_c.json"].is_string());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| run_in(dir.path(), args).status.code();

    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["alpha-c", "--model", "no-such-model"]), Some(1));
    assert_eq!(code(&["alpha-c", "--model", "norm-sq"]), Some(1));
    assert_eq!(code(&["alpha-c", "--model", "product2", "--bogus"]), Some(1));
    assert_eq!(code(&["se-fixed-point", "--model", "product2", "--alpha", "-1"]), Some(1));
    // γ far below the dominant eigenvalue blows the iterates up.
    let diverged = [
        "gamp-trace", "--model", "product2", "--n", "100", "--d", "100", "--gamma", "0.001",
        "--iters", "40",
    ];
    assert_eq!(code(&diverged), Some(2));
}

#[test]
fn csv_output_is_byte_identical_across_runs() {
    let args = [
        "gamp-trace", "--model", "norm-sq", "--p", "2", "--n", "300", "--d", "100", "--iters", "5",
        "--trials", "2",
    ];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_in(a.path(), &args).status.success());
    assert!(run_in(b.path(), &args).status.success());

    let csv_a = std::fs::read(a.path().join("gamp_trace.csv")).unwrap();
    let csv_b = std::fs::read(b.path().join("gamp_trace.csv")).unwrap();
    assert_eq!(csv_a, csv_b);

    let text = String::from_utf8(csv_a).unwrap();
    let manifest = read_json(&a.path().join("gamp_trace.manifest.json"));
    let mut lines = text.split('\n');
    assert_eq!(lines.next().unwrap(), format!("# manifest {}", manifest["id"].as_str().unwrap()));
    let header = lines.next().unwrap();
    assert!(header.starts_with("seed,t,"), "{header}");
    assert!(header.ends_with("residual,m_se,se_deviation\r"), "{header}");
    // Header plus two seeds of 0..=5.
    assert_eq!(text.matches("\r\n").count(), 1 + 2 * 6);
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
}

#[test]
fn spectrum_dense_writes_every_eigenvalue() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["spectrum", "--model", "product2", "--n", "60", "--d", "40", "--dense"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    // n·p eigenvalues plus the comment and header lines.
    assert_eq!(text.lines().count(), 2 + 120);
    let summary = read_json(&dir.path().join("spectrum.json"));
    assert_eq!(summary["n_eigenvalues"], 120);
}

#[test]
fn custom_model_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("models.toml");
    std::fs::write(
        &config,
        r#"
[[model]]
name = "my-norm"
p = 2
sampler = { kind = "norm-sq" }
oracle = { samples = 200000, bins = 40, seed = 3 }
"#,
    )
    .unwrap();
    let out = bin()
        .arg("--out")
        .arg(dir.path())
        .arg("--config")
        .arg(&config)
        .args(["alpha-c", "--model", "my-norm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    // Built-in norm-sq with p = 2 has α_c = 1; the binned oracle is close.
    let ac = summary["alpha_c"].as_f64().unwrap();
    assert!((ac - 1.0).abs() < 0.1, "α_c = {ac}");
    let manifest = read_json(&dir.path().join("alpha_c.manifest.json"));
    assert_eq!(manifest["parameters"]["custom"]["sampler"]["kind"], "norm-sq");

    std::fs::write(&config, "[[model]]\nname = \"product2\"\np = 2\nsampler = { kind = \"product\" }\n")
        .unwrap();
    let out = bin()
        .arg("--out")
        .arg(dir.path())
        .arg("--config")
        .arg(&config)
        .args(["alpha-c", "--model", "product2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
