use std::fs;
use std::path::Path;
use std::process::Command;

use repfair::experiments::{run_experiment, ExperimentSpec};

fn spec_text(out: &Path) -> String {
    format!(
        r#"
name = "tiny"
seeds = [1, 2]
output_dir = "{}"
audit_samples = 500
quality_samples = 100

[dataset]
kind = "gauss2d"
n = 96
ratio = 0.5
separation = 0.8
spreads = [0.02, 0.3]

[train]
epochs = 2
batch_size = 16
generator_hidden = [8]
discriminator_hidden = [8]

[sweep]
axis = "c"
values = [0.5, 2.0]
"#,
        out.display()
    )
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|x| x.to_str()), Some("csv" | "svg")) {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn repeated_experiments_write_identical_csv_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_experiment(&ExperimentSpec::from_toml_str(&spec_text(&a)).unwrap()).unwrap();
    run_experiment(&ExperimentSpec::from_toml_str(&spec_text(&b)).unwrap()).unwrap();
    let (fa, fb) = (artifacts(&a), artifacts(&b));
    assert!(fa.iter().any(|(n, _)| n.ends_with("telemetry.csv")));
    assert!(fa.iter().any(|(n, _)| n.ends_with(".svg")));
    assert_eq!(fa, fb);
}

#[test]
fn cli_trains_renders_and_audits() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let spec = tmp.path().join("spec.toml");
    fs::write(&spec, spec_text(&out)).unwrap();
    let bin = env!("CARGO_BIN_EXE_repfair");

    let train = Command::new(bin)
        .args(["train", "--spec"])
        .arg(&spec)
        .args(["--c", "2", "--seeds", "3"])
        .output()
        .unwrap();
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let stdout = String::from_utf8_lossy(&train.stdout);
    assert!(stdout.contains("repfair"), "{stdout}");
    assert!(out.join("aggregate.csv").exists());

    let render = Command::new(bin).args(["render", "--dir"]).arg(&out).output().unwrap();
    assert!(render.status.success(), "{}", String::from_utf8_lossy(&render.stderr));
    assert!(String::from_utf8_lossy(&render.stdout).contains("frequencies.svg"));

    let bad = Command::new(bin)
        .args(["audit", "--checkpoint"])
        .arg(tmp.path().join("missing.json"))
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error:"));
}
