use std::process::Command;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde_json::Value;

use rdmkit::cli::{run, EXIT_MALFORMED, EXIT_OK, EXIT_RESOURCE, EXIT_USAGE, EXIT_VIOLATION};
use rdmkit::hamiltonians::hubbard_chain;
use rdmkit::oracle::{compute_rdm, ground_state, RdmTensor};

fn rdmkit(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("rdmkit").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn json(args: &[&str]) -> Value {
    let (code, out, err) = rdmkit(args);
    assert_eq!(code, EXIT_OK, "{err}");
    serde_json::from_str(&out).unwrap()
}

#[test]
fn oracle_examples() {
    let v = json(&["oracle", "--model", "hubbard", "--sites", "2", "--U", "4", "--periodic", "--n", "2"]);
    assert_eq!(v["N"], 2);
    assert_eq!(v["r"], 4);
    let u: f64 = 4.0;
    let expected = (u - (u * u + 16.0).sqrt()) / 2.0;
    assert!((v["energy"].as_f64().unwrap() - expected).abs() < 1e-12, "{v}");

    let v = json(&["oracle", "--model", "pairing", "--levels", "1", "--n", "2"]);
    assert!((v["energy"].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(v["gap"], Value::Null);

    let v = json(&["oracle", "--model", "random", "--r", "6", "--seed", "1", "--n", "3"]);
    assert!((v["energy"].as_f64().unwrap() + 10.868422902762216).abs() < 1e-10);
}

#[test]
fn usage_errors() {
    assert_eq!(rdmkit(&["oracle", "--model", "hubbard", "--sites", "2"]).0, EXIT_USAGE);
    assert_eq!(rdmkit(&["oracle", "--bogus"]).0, EXIT_USAGE);
    assert_eq!(rdmkit(&["oracle", "--model", "pairing", "--levels", "2", "--n", "9"]).0, EXIT_USAGE);
    assert_eq!(rdmkit(&["bound", "--model", "hubbard", "--sites", "2", "--n", "2", "--conditions", "X9"]).0, EXIT_USAGE);
    let (code, out, _) = rdmkit(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("oracle"));
}

#[test]
fn sector_cap_is_a_resource_error() {
    let (code, _, err) = rdmkit(&["oracle", "--model", "hubbard", "--sites", "3", "--n", "3", "--max-dim", "19"]);
    assert_eq!(code, EXIT_RESOURCE, "{err}");
}

#[test]
fn cancel_check_passes() {
    let v = json(&["audit", "--cancel-check", "--r", "5", "--draws", "2"]);
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r["passed"] == true));
    let v = json(&["audit", "--cancel-check", "--row", "3", "--dual"]);
    assert_eq!(v.as_array().unwrap().len(), 1);
}

#[test]
fn audit_of_ground_state_passes() {
    let v = json(&["audit", "--model", "hubbard", "--sites", "2", "--n", "2", "--restarts", "1"]);
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 7 + 16);
    assert!(rows.iter().all(|r| r["violated"] == false), "{v}");
}

#[test]
fn audit_flags_corrupted_rdm() {
    let dir = tempfile::tempdir().unwrap();
    let ham = hubbard_chain(2, 1.0, 4.0, false).unwrap();
    let d2 = compute_rdm(&ground_state(&ham, 2).unwrap().state, 2).unwrap();
    let mut bad = d2.clone();
    bad.matrix = DMatrix::zeros(6, 6);
    bad.matrix[(0, 0)] = C64::new(-1.0, 0.0);
    bad.matrix[(1, 1)] = C64::new(2.0, 0.0);
    let mixed = RdmTensor::mix(0.5, &d2, &bad).unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, mixed.to_json().unwrap()).unwrap();
    let (code, out, _) = rdmkit(&["audit", "--rdm", path.to_str().unwrap(), "--metrics-only"]);
    assert_eq!(code, EXIT_VIOLATION);
    let v: Value = serde_json::from_str(&out).unwrap();
    let d2_row = v.as_array().unwrap().iter().find(|r| r["kind"] == "D2").unwrap();
    assert_eq!(d2_row["violated"], true);

    let good = dir.path().join("good.json");
    std::fs::write(&good, d2.to_json().unwrap()).unwrap();
    assert_eq!(rdmkit(&["audit", "--rdm", good.to_str().unwrap(), "--metrics-only"]).0, EXIT_OK);
}

#[test]
fn malformed_rdm_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rdm.json");
    std::fs::write(&path, "{\"p\": 2, \"r\": 4").unwrap();
    assert_eq!(rdmkit(&["audit", "--rdm", path.to_str().unwrap()]).0, EXIT_MALFORMED);
    let missing = dir.path().join("absent.json");
    assert_eq!(rdmkit(&["audit", "--rdm", missing.to_str().unwrap()]).0, EXIT_MALFORMED);
}

#[test]
fn two_particle_sweep_is_exact() {
    let v = json(&["bound", "--model", "random", "--r", "4", "--seed", "2", "--n", "2"]);
    let oracle = v["oracle"].as_f64().unwrap();
    assert_eq!(v["monotone"], true);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    for row in rows {
        assert_eq!(row["converged"], true);
        assert!((row["energy"].as_f64().unwrap() - oracle).abs() < 1e-6, "{row}");
    }
}

#[test]
fn table_and_json_agree() {
    let args = ["oracle", "--model", "pairing", "--eps", "0,1,2", "--g", "0.7", "--n", "4"];
    let v = json(&args);
    let mut with_table = args.to_vec();
    with_table.extend(["--format", "table"]);
    let (code, table, _) = rdmkit(&with_table);
    assert_eq!(code, EXIT_OK);
    let fields: Vec<&str> = table.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(fields[0].parse::<f64>().unwrap(), v["energy"].as_f64().unwrap());
    assert_eq!(fields[1].parse::<u64>().unwrap(), v["N"].as_u64().unwrap());
    assert_eq!(fields[2].parse::<u64>().unwrap(), v["r"].as_u64().unwrap());
    assert_eq!(fields[4].parse::<f64>().unwrap(), v["gap"].as_f64().unwrap());
}

#[test]
fn output_file_and_d2_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bound.json");
    let d2 = dir.path().join("d2.json");
    let (code, stdout, err) = rdmkit(&[
        "bound", "--model", "hubbard", "--sites", "2", "--n", "2", "--conditions", "D2,Q2,G2",
        "--out", out.to_str().unwrap(), "--d2-out", d2.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["rows"][0]["conditions"], "D2Q2G2");
    let tensor = RdmTensor::from_json(&std::fs::read_to_string(&d2).unwrap()).unwrap();
    assert_eq!((tensor.p, tensor.r, tensor.n), (2, 4, 2));
    assert!((tensor.trace().re - 1.0).abs() < 1e-6);
}

#[test]
fn thread_variable_is_validated() {
    let bin = env!("CARGO_BIN_EXE_rdmkit");
    let output = Command::new(bin)
        .args(["oracle", "--model", "pairing", "--levels", "1", "--n", "2"])
        .env("RDMKIT_THREADS", "abc")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&output.stderr).contains("RDMKIT_THREADS"));
    let output = Command::new(bin)
        .args(["oracle", "--model", "pairing", "--levels", "1", "--n", "2"])
        .env("RDMKIT_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(EXIT_OK));
}
