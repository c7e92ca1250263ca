use std::path::Path;
use std::process::{Command, Output};

use gridobs::netmodel::{builtin_case, CaseFile};
use serde_json::Value;

fn gridobs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridobs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn convert_round_trips_and_warns() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("case9.m");
    std::fs::copy(data("case9.m"), &src).unwrap();
    let before = std::fs::read(&src).unwrap();
    let out = dir.path().join("case9.json");
    let o = gridobs(&["convert", src.to_str().unwrap(), out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("dropped unsupported fields: version, gencost"));
    assert_eq!(std::fs::read(&src).unwrap(), before);

    let text = std::fs::read_to_string(&out).unwrap();
    let parsed = CaseFile::from_json(&text).unwrap().into_case().unwrap();
    assert_eq!(parsed, builtin_case("case9").unwrap());
    assert_eq!(CaseFile::from_case(&parsed).to_json(), text);

    // Converting the canonical file again is the identity.
    let again = dir.path().join("again.json");
    let o = gridobs(&["convert", out.to_str().unwrap(), again.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(&again).unwrap(), text);
}

#[test]
fn convert_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    let o = gridobs(&["convert", "/no/such/case.m", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(!out.exists());

    let other = dir.path().join("grid.m");
    std::fs::copy(data("case9.m"), &other).unwrap();
    let o = gridobs(&["convert", other.to_str().unwrap(), out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("sidecar"));
    let o = gridobs(&[
        "convert",
        other.to_str().unwrap(),
        out.to_str().unwrap(),
        "--sidecar",
        &data("case9_gen.json"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn simulate_rows_and_equilibrium() {
    let o = gridobs(&["simulate", "--scheme", "bdf3", "--mu", "1e-6", "--alpha-l", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 302);
    assert!(text.lines().last().unwrap().starts_with("3.0000000000000000e1,"));

    let o = gridobs(&["simulate", "--alpha-l", "0", "--alpha-r", "0", "--t-end", "5"]);
    assert_eq!(code(&o), 0);
    let rows: Vec<Vec<f64>> = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 51);
    for r in &rows {
        for (a, b) in r.iter().zip(&rows[0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn newton_divergence_exits_2_with_step() {
    let o = gridobs(&["simulate", "--mu", "1e-2", "--alpha-l", "2", "--alpha-r", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("step "), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn validate_mu_rows() {
    let o = gridobs(&[
        "validate-mu",
        "--mus",
        "1e-4,1e-5,1e-6",
        "--alpha-l",
        "2",
        "--alpha-r",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "mu,converged,rmse,accumulated,bound");
    let rmse: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rmse.len(), 3);
    assert!(rmse.windows(2).all(|w| w[1] <= w[0]));

    let o = gridobs(&["validate-mu", "--mus", "1e-6"]);
    assert_eq!(stdout(&o).lines().count(), 2);

    // The NDAE reference itself cannot take this step.
    let o = gridobs(&["validate-mu", "--alpha-l", "400", "--mus", "1e-6"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn estimate_reports_and_rejects_empty() {
    let o = gridobs(&["estimate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    for key in ["x0_hat", "iterations", "residual_norms", "epsilon", "converged"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["x0_hat"].as_array().unwrap().len(), 36);
    // Noisy readings keep the residual above tolerance: capped, still exit 0.
    assert_eq!(v["converged"], Value::Bool(false));
    assert_eq!(v["iterations"], 200);

    let o = gridobs(&["estimate", "--noise", "0", "--buses", "1,4,9"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["buses"], serde_json::json!([1, 4, 9]));

    let o = gridobs(&["estimate", "--buses"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("not observable"));
}

#[test]
fn place_contracts() {
    let o = gridobs(&["place", "--p", "2", "--brute-force"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["p"], 2);
    assert_eq!(v["verified"], Value::Bool(true));
    assert_eq!(v["method"], "apriori");
    assert_eq!(v["Z_star"].as_array().unwrap().len(), 2);
    for key in ["objective", "condition_flag"] {
        assert!(v.get(key).is_some());
    }

    let o = gridobs(&["place", "--p", "0"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["Z_star"], serde_json::json!([]));
    assert_eq!(v["objective"], 0.0);

    let o = gridobs(&["place", "--p", "10"]);
    assert_eq!(code(&o), 3);

    let o = gridobs(&["place", "--p", "2,4"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn sweep_columns_and_nesting() {
    let o = gridobs(&["sweep"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(header.len(), 1 + 9 + 3);
    assert_eq!(header[1], "bus_1");
    assert_eq!(&header[10..], ["objective", "epsilon", "nested"]);
    assert_eq!(lines.len(), 5);
    let mut prev: Vec<u8> = vec![0; 9];
    for (l, p) in lines[1..].iter().zip([2, 4, 5, 7]) {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f[0], p.to_string());
        let bits: Vec<u8> = f[1..10].iter().map(|b| b.parse().unwrap()).collect();
        assert_eq!(bits.iter().map(|&b| b as usize).sum::<usize>(), p);
        assert!(prev.iter().zip(&bits).all(|(a, b)| a <= b));
        assert_eq!(f[12], "true");
        prev = bits;
    }

    let o = gridobs(&["sweep", "--fractions", "0.5"]);
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn outputs_are_deterministic_and_config_files_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"case": "case9", "p": [4], "study": {"noise_pct": 1.0, "seed": 7}}"#,
    )
    .unwrap();
    let before = std::fs::read(&cfg).unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (out, threads) in [(&a, "1"), (&b, "2")] {
        let o = gridobs(&[
            "--threads",
            threads,
            "place",
            "--config",
            cfg.to_str().unwrap(),
            "-o",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(&cfg).unwrap(), before);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(v["p"], 4);

    std::fs::write(&cfg, r#"{"study": {"noise": 1.0}}"#).unwrap();
    assert_eq!(code(&gridobs(&["place", "--config", cfg.to_str().unwrap()])), 3);
    assert_eq!(code(&gridobs(&["simulate", "--scheme", "rk4"])), 3);
    assert_eq!(code(&gridobs(&["simulate", "--no-such-flag"])), 3);
    assert_eq!(code(&gridobs(&["--help"])), 0);
}
