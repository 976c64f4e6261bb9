use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn openvar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_openvar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn norm_prints_a_table() {
    let o = openvar(&[
        "norm", "--model", "ising", "--g", "5.4", "--J", "5", "--gamma", "1", "--alpha", "0,0,-0.5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(
        lines.next(),
        Some("value,overlap_part,disjoint_part,imag_residue")
    );
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((row[0] - row[1] - row[2]).abs() < 1e-12);
}

#[test]
fn bad_input_exits_with_one() {
    let o = openvar(&["norm", "--model", "toom", "--T", "3.0", "--alpha", "0,0,0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model.T"), "{}", stderr(&o));

    let o = openvar(&["norm", "--model", "ising", "--g", "1", "--alpha", "0,0,0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains('J'), "{}", stderr(&o));

    let o = openvar(&["norm", "--model", "ising", "--g", "abc"]);
    assert_eq!(o.status.code(), Some(1));

    let o = openvar(&["nonsense"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let o = openvar(&["--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("phasediag"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "[model]\nkind = \"toom\"\ntemprature = 0.5\n").unwrap();
    let o = openvar(&["norm", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("temprature"), "{}", stderr(&o));
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

const LANGEVIN: &[&str] = &[
    "langevin",
    "--model",
    "toom",
    "--T",
    "0.6",
    "--h",
    "0.01",
    "--L",
    "8",
    "--side",
    "4",
    "--samples",
    "4",
    "--t-max",
    "5",
    "--dt",
    "0.01",
    "--seed",
    "11",
];

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let mut args = LANGEVIN.to_vec();
        args.extend(["--out", dir.path().to_str().unwrap()]);
        let o = openvar(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);
}

#[test]
fn manifest_reproduces_the_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut args = LANGEVIN.to_vec();
    args.extend(["--out", a.path().to_str().unwrap()]);
    assert!(openvar(&args).status.success());

    let manifest = a.path().join("manifest.json");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(json["command"], "langevin");
    for out in json["outputs"].as_array().unwrap() {
        assert!(a.path().join(out["file"].as_str().unwrap()).exists());
        assert_eq!(out["sha256"].as_str().unwrap().len(), 64);
    }

    let o = openvar(&[
        "langevin",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        b.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_files(a.path()), csv_files(b.path()));
}
