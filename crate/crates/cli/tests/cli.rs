use std::path::Path;
use std::process::{Command, Output};

fn pluc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pluc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const FAST: &str =
    "[grid]\nlambdas = [1.0, 4.0]\nbetas = [0.0, 0.25]\n[fw]\niterations = 6\n[sgd]\nmax_iterations = 150\n";

#[test]
fn simulate_is_deterministic_with_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = pluc(&[
            "simulate",
            "--scenario",
            "linear",
            "--n",
            "300",
            "--seed",
            "7",
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["data.csv", "counterfactuals.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let text = std::fs::read_to_string(a.join("data.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 301);
    assert_eq!(lines[0].split(',').count(), 13);
    assert!(lines[0].ends_with("x10,a,y,xi"));
}

#[test]
fn simulate_realistic_writes_preprocessing() {
    let dir = tempfile::tempdir().unwrap();
    let o = pluc(&[
        "simulate",
        "--scenario",
        "realistic",
        "--n",
        "200",
        "--seed",
        "1",
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success());
    let pre: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("preprocessing.json")).unwrap()).unwrap();
    assert_eq!(pre["transform"]["x_min"].as_array().unwrap().len(), 5);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"raw_scale\": true"));
}

#[test]
fn seed_is_drawn_and_recorded_when_omitted() {
    let dir = tempfile::tempdir().unwrap();
    let o = pluc(&[
        "simulate",
        "--scenario",
        "threshold",
        "--n",
        "30",
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success());
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(m["seed"].is_u64());
}

fn simulate(dir: &Path, n: &str) -> std::path::PathBuf {
    let out = dir.join("sim");
    assert!(pluc(&[
        "simulate",
        "--scenario",
        "linear",
        "--n",
        n,
        "--seed",
        "3",
        "--out",
        s(&out)
    ])
    .status
    .success());
    out.join("data.csv")
}

#[test]
fn never_treat_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "300");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "[grid]\nlambdas = [0.0]\nbetas = [0.0]\nalpha = 0.0\n[fw]\niterations = 4\n",
    )
    .unwrap();
    let out = dir.path().join("fit");
    let o = pluc(&[
        "fit",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--mode",
        "naive",
        "--seed",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let json = std::fs::read_to_string(out.join("result.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["selection"], "never_treat");
    let policy = std::fs::read_to_string(out.join("policy.json")).unwrap();
    assert!(policy.contains("\"constant\""));
}

#[test]
fn naive_and_pluc_share_grid_shape() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "450");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, FAST.replace("[fw]", "exhaustive_grid = true\n[fw]")).unwrap();
    let mut shapes = Vec::new();
    for mode in ["naive", "pluc"] {
        let out = dir.path().join(mode);
        let o = pluc(&[
            "fit",
            "--data",
            s(&data),
            "--config",
            s(&cfg),
            "--mode",
            mode,
            "--seed",
            "4",
            "--out",
            s(&out),
        ]);
        assert!(
            matches!(o.status.code(), Some(0) | Some(2)),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        let text = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        let rows: Vec<(String, String)> = text
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0].to_string(), f[1].to_string())
            })
            .collect();
        shapes.push(rows);
    }
    assert_eq!(shapes[0], shapes[1]);
    assert_eq!(shapes[0].len(), 5);
}

#[test]
fn oracle_mode_requires_a_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "60");
    let o = pluc(&[
        "fit",
        "--data",
        s(&data),
        "--mode",
        "oracle",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--scenario"));
}

#[test]
fn config_errors_point_at_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "60");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[grid]\nalpha = 0.1\nlamdas = [1.0]\n").unwrap();
    let o = pluc(&[
        "fit",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("lamdas"), "{err}");
}

fn write_policy(dir: &Path, name: &str, json: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p
}

#[test]
fn evaluate_constant_policies_against_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let never = write_policy(dir.path(), "never.json", r#"{"kind":"constant","p":0.0}"#);
    let all = write_policy(dir.path(), "all.json", r#"{"kind":"constant","p":1.0}"#);
    let o = pluc(&[
        "evaluate",
        "--policy",
        s(&never),
        "--scenario",
        "linear",
        "--mc-n",
        "1000",
        "--seed",
        "1",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["constraint"].as_f64().unwrap(), -0.1);
    let o = pluc(&[
        "evaluate",
        "--policy",
        s(&all),
        "--scenario",
        "small_adverse",
        "--mc-n",
        "400000",
        "--seed",
        "2",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["constraint"].as_f64().unwrap() + 0.0604).abs() < 2e-3, "{v}");
}

#[test]
fn evaluate_on_data_writes_an_assessment_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "300");
    let smooth = write_policy(
        dir.path(),
        "smooth.json",
        r#"{"kind":"smooth","beta":0.25,"score":[{"weight":1.0,"theta":[1,0,0,0,0,0,0,0,0,0,-0.5]}]}"#,
    );
    let out = dir.path().join("a.csv");
    let o = pluc(&["evaluate", "--policy", s(&smooth), "--data", s(&data), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("lambda,beta,s_star,s_upper,v_star,v_lower,var_s,var_v\n,0.25,"));
    let wrong = write_policy(
        dir.path(),
        "wrong.json",
        r#"{"kind":"smooth","beta":0,"score":[{"weight":1.0,"theta":[1,2,3]}]}"#,
    );
    let o = pluc(&["evaluate", "--policy", s(&wrong), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn certify_writes_a_clean_trace() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("toy.toml");
    std::fs::write(&spec, "lambda = 0.0\ngrid_steps = 21\nreference_iterations = 500\n").unwrap();
    let o = pluc(&[
        "certify",
        "--spec",
        s(&spec),
        "--iterations",
        "12",
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 14);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f[7], "true");
        assert!(f[4].parse::<f64>().unwrap() >= 0.0);
    }
}

#[test]
fn sweep_emits_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, FAST).unwrap();
    let out = dir.path().join("sweep.csv");
    let o = pluc(&[
        "sweep",
        "--replicates",
        "1",
        "--modes",
        "naive",
        "--n",
        "300",
        "--mc-n",
        "500",
        "--config",
        s(&cfg),
        "--seed",
        "5",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with(
        "replicate,mode,scenario,n,lambda,beta,value_oracle,constraint_oracle,s_upper,v_lower,selected\n"
    ));
    assert_eq!(text.lines().filter(|l| l.ends_with(",true")).count(), 1);
    assert!(out.with_extension("json").exists());
}
