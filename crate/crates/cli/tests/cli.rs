use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stablerules"));
    c.env_remove("STABLERULES_SEED");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn ok_or_capped(o: &Output) {
    assert!(
        matches!(code(o), 0 | 3),
        "exit {}: {}",
        code(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn synth_writes_data_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let o = run(&["synth", "--env", "nonlinear", "--n", "50", "--p", "5", "--r", "2.0", "--out", "d.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "S_0,S_1,V_0,V_1,V_2,Y");
    let side = json(&dir.path().join("d.json"));
    assert_eq!(side["command"], "synth");
    assert_eq!(side["seed"], 1);
    assert_eq!(side["data"]["beta_true"].as_array().unwrap().len(), 5);
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let dir = TempDir::new().unwrap();
    let o = run(&["synth", "--bogus", "--out", "d.csv"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_and_version_exit_0() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(&["--help"], dir.path())), 0);
    assert_eq!(code(&run(&["--version"], dir.path())), 0);
}

#[test]
fn config_typo_is_named() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"gama": 600}"#).unwrap();
    let o = run(&["--config", "c.json", "synth", "--out", "d.csv"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gama"));
}

#[test]
fn config_type_error_is_named() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"n": "many"}"#).unwrap();
    let o = run(&["--config", "c.json", "synth", "--out", "d.csv"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("`n`") || String::from_utf8_lossy(&o.stderr).contains(" n "));
}

#[test]
fn missing_input_exits_1() {
    let dir = TempDir::new().unwrap();
    let o = run(&["train", "--data", "absent.csv", "--model", "ols", "--out", "m.json"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn malformed_data_exits_2() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("d.csv"), "a,Y\n1,2\nx,3\n").unwrap();
    let o = run(&["train", "--data", "d.csv", "--model", "ols", "--out", "m.json"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_precedence_flag_env_file() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"seed": 5, "n": 20, "p": 4}"#).unwrap();
    let seed_of = |extra: &[&str], env: Option<&str>| -> Value {
        let mut c = bin();
        c.current_dir(dir.path());
        if let Some(e) = env {
            c.env("STABLERULES_SEED", e);
        }
        let mut args = vec!["--config", "c.json"];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["synth", "--out", "d.csv"]);
        let o = c.args(&args).output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        json(&dir.path().join("d.json"))["seed"].clone()
    };
    assert_eq!(seed_of(&["--seed", "9"], Some("7")), 9);
    assert_eq!(seed_of(&[], Some("7")), 7);
    assert_eq!(seed_of(&[], None), 5);
}

#[test]
fn table1_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let args = |out: &'static str| {
        vec![
            "--seed", "3", "reproduce-table1", "--n", "200", "--m", "6", "--repeats", "2", "--max-iters", "100",
            "--test-n", "200", "--out", out,
        ]
    };
    ok_or_capped(&run(&args("a.csv"), dir.path()));
    ok_or_capped(&run(&args("b.csv"), dir.path()));
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    let b = fs::read(dir.path().join("b.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(fs::read(dir.path().join("a_rmse.csv")).unwrap(), fs::read(dir.path().join("b_rmse.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 7);
}

#[test]
fn decorrelate_train_evaluate() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(&["synth", "--n", "300", "--p", "5", "--out", "d.csv"], d)), 0);
    ok_or_capped(&run(&["decorrelate", "--data", "d.csv", "--label", "Y", "--max-iters", "200", "--out", "w.csv"], d));
    let w = fs::read_to_string(d.join("w.csv")).unwrap();
    assert_eq!(w.lines().next(), Some("weight"));
    assert_eq!(w.lines().count(), 301);

    let o = run(&["train", "--data", "d.csv", "--model", "wsvr", "--weights", "w.csv", "--out", "m.json"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["evaluate", "--model", "m.json", "--data", "d.csv", "--truth", "d.json", "--out", "e.json"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(d.join("e.json")).unwrap();
    assert!(text.contains("rmse"), "{text}");
    assert!(text.contains("beta_s_err"), "{text}");

    // Weights whose row count disagrees with the data.
    fs::write(d.join("short.csv"), "weight\n1\n1\n").unwrap();
    let o = run(&["train", "--data", "d.csv", "--model", "wsvr", "--weights", "short.csv", "--out", "m2.json"], d);
    assert_eq!(code(&o), 2);
}

fn binary_table(n: usize) -> String {
    let mut s = String::from("A,B,C,D,label\n");
    let mut state: u64 = 12345;
    for _ in 0..n {
        let mut bits = [0u8; 4];
        for b in &mut bits {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *b = ((state >> 33) % 10 < 4) as u8;
        }
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let flip = (state >> 33) % 10 == 0;
        let y = ((bits[0] == 1 || bits[1] == 1) != flip) as u8;
        s.push_str(&format!("{},{},{},{},{y}\n", bits[0], bits[1], bits[2], bits[3]));
    }
    s
}

#[test]
fn mine_then_select() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("b.csv"), binary_table(300)).unwrap();
    let o = run(&["mine", "--data", "b.csv", "--label", "label", "--min-support", "0.05", "--min-confidence", "0.6", "--out", "rules.txt"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rules = fs::read_to_string(d.join("rules.txt")).unwrap();
    assert!(rules.lines().count() >= 2, "{rules}");

    let o = run(
        &["select", "--data", "b.csv", "--label", "label", "--rules", "rules.txt", "--max-rules", "4", "--item-reduce", "--out", "sel.txt"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let kept = fs::read_to_string(d.join("sel.txt")).unwrap();
    let n_kept = kept.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).count();
    assert!((1..=4).contains(&n_kept), "{kept}");
    assert_eq!(json(&d.join("sel.json"))["command"], "select");

    let o = run(&["select", "--data", "b.csv", "--label", "label", "--rules", "rules.txt", "--max-rules", "2", "--min-rules", "3", "--out", "x.txt"], d);
    assert_ne!(code(&o), 0);
}

#[test]
fn prepare_fits_and_replays() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let schema = r#"{"columns": [
        {"name": "age", "kind": "continuous"},
        {"name": "sex", "kind": "binary"},
        {"name": "cp", "kind": "categorical"},
        {"name": "target", "kind": "label"}
    ]}"#;
    fs::write(d.join("schema.json"), schema).unwrap();
    let mut train = String::from("age,sex,cp,target\n");
    for i in 0..40 {
        let age = if i == 3 { "NA".to_string() } else { (30 + (i * 7) % 40).to_string() };
        train.push_str(&format!("{age},{},{},{}\n", i % 2, ["a", "b", "c"][i % 3], (i % 4 == 0) as u8));
    }
    fs::write(d.join("train.csv"), train).unwrap();
    let o = run(&["prepare", "--data", "train.csv", "--schema", "schema.json", "--out", "p.csv"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let header = fs::read_to_string(d.join("p.csv")).unwrap().lines().next().unwrap().to_string();
    assert!(header.ends_with(",target"), "{header}");
    assert!(header.contains("cp=a"), "{header}");

    fs::write(d.join("test.csv"), "age,sex,cp,target\n99,1,b,1\n10,0,a,0\n").unwrap();
    let o = run(&["prepare", "--data", "test.csv", "--schema", "schema.json", "--pipeline", "p.json", "--out", "q.csv"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let q = fs::read_to_string(d.join("q.csv")).unwrap();
    assert_eq!(q.lines().next().unwrap(), header);
    assert_eq!(q.lines().count(), 3);
    let side = json(&d.join("q.json"));
    assert!(!side["clamped"].as_array().unwrap().is_empty(), "{side}");
}
