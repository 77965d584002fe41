use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pcaformer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcaformer")).args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let text = format!(
        r#"{{"dataset":{{"kind":"synthetic","timesteps":300,"channels":4,"latent":2,"noise":0.05,"seed":1}},
           "components":[2],"out_dir":"{}","save_checkpoints":false,
           "transformer":{{"d_model":8,"n_heads":2,"d_ff":16,"lookback":12,"label_len":6,"horizon":4,"epochs":1}}{extra}}}"#,
        dir.join("out").display()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn correlate_writes_pcc_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("lin.csv");
    let mut text = String::from("date,x,y,OT\n");
    for i in 0..20 {
        let x = f64::from(i);
        text.push_str(&format!("t{i},{x},{},{}\n", 2.0 * x, (x * 0.7).sin()));
    }
    fs::write(&csv, text).unwrap();
    let out = dir.path().join("pcc.csv");
    let o = pcaformer(&["correlate", csv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pcc = fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = pcc.lines().collect();
    assert_eq!(lines[0], "variable,x,y,OT");
    let xy: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!((xy - 1.0).abs() < 1e-12);
    assert_eq!(lines.len(), 4);
}

#[test]
fn correlate_rejects_an_unknown_target() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("a.csv");
    fs::write(&csv, "a,b\n1,2\n3,4\n").unwrap();
    let o = pcaformer(&["correlate", csv.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("a, b"));
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), r#","components":[9]"#);
    let o = pcaformer(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{ not json").unwrap();
    let o = pcaformer(&["sweep", "--config", broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let o = pcaformer(&["sweep", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("P=2") && stdout.contains("P=w/o PCA"), "{stdout}");
    let out = dir.path().join("out");
    let o = pcaformer(&["report", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("## Reductions"));
    assert!(out.join("report.md").exists());
}

#[test]
fn report_on_an_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = pcaformer(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fixture_check_passes_on_the_published_tables() {
    let o = pcaformer(&["fixture-check"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("60 of 60 cells"));
}

#[test]
fn fixture_check_flags_a_wrong_cell() {
    let dir = tempfile::tempdir().unwrap();
    let expected = dir.path().join("reductions.csv");
    let text = pcaformer::harness::PAPER_REDUCTIONS.replacen("88.68", "88.10", 1);
    fs::write(&expected, text).unwrap();
    let o = pcaformer(&["fixture-check", "--expected", expected.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("59 of 60"));
}
