use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rnls(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnls"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<_> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

const SMALL: &str = "n = 32\nlength = 12.0\nhorizon = 0.3\ndt = 0.01\nsample_every = 10\npaths = 20\nseed = 5\n";

#[test]
fn ensemble_with_zero_paths_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "paths = 0\n");
    let out = rnls(&["ensemble"], &cfg, &tmp.path().join("runs"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths"));
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn misspelled_key_reports_a_suggestion() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "horizn = 2.0\n");
    let out = rnls(&["path"], &cfg, &tmp.path().join("runs"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("horizn") && err.contains("horizon"), "{err}");
}

#[test]
fn experiment_key_must_match_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment = \"spectrum\"\n");
    let out = rnls(&["path"], &cfg, &tmp.path().join("runs"));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn path_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = rnls(&["path"], &cfg, out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (da, db) = (only_run_dir(&a), only_run_dir(&b));
    assert_eq!(da.file_name(), db.file_name());
    let name = da.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("path-") && name.ends_with("-seed5"), "{name}");
    for f in ["scalars.csv", "path.json", "summary.json", "config.resolved.json", "snapshots/psi_0000.bin"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(da.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert!(manifest["wall_time_seconds"].is_number());
    assert!(manifest["artifacts"]["scalars.csv"].is_string());
}

#[test]
fn ensemble_is_independent_of_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(threads);
        let o = Command::new(env!("CARGO_BIN_EXE_rnls"))
            .args(["ensemble", "--threads", threads, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let dir = only_run_dir(&out);
        outputs.push((fs::read(dir.join("ensemble.json")).unwrap(), fs::read(dir.join("joint_density.csv")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn seed_changes_directory_but_not_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("runs");
    for seed in ["1", "2"] {
        let o = Command::new(env!("CARGO_BIN_EXE_rnls"))
            .args(["path", "--seed", seed, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success());
    }
    let mut names: Vec<String> =
        fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names.len(), 2);
    assert_eq!(names[0].trim_end_matches("-seed1"), names[1].trim_end_matches("-seed2"));
}

#[test]
fn fit_decay_reads_a_path_scalar_table() {
    let tmp = tempfile::tempdir().unwrap();
    let table = tmp.path().join("scalars.csv");
    // sum norm of exactly t^{-1/2}
    let mut text = String::from("t,l2,suml2linf\n");
    for k in 1..=40 {
        let t = k as f64;
        text.push_str(&format!("{t},1,{}\n", t.powf(-0.5)));
    }
    fs::write(&table, text).unwrap();
    let cfg = write_config(tmp.path(), "fit_input = \"scalars.csv\"\nfit_window = [5.0, 40.0]\n");
    let out = tmp.path().join("runs");
    let o = rnls(&["fit-decay"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value =
        serde_json::from_slice(&fs::read(only_run_dir(&out).join("fit.json")).unwrap()).unwrap();
    assert!((fit["slope"].as_f64().unwrap() + 0.5).abs() < 1e-12);
}

#[test]
fn spectrum_of_default_family_is_dissipative() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "n = 32\nlength = 16.0\n");
    let out = tmp.path().join("runs");
    let o = rnls(&["spectrum"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = only_run_dir(&out);
    let csv = fs::read_to_string(dir.join("spectrum.csv")).unwrap();
    assert!(csv.starts_with("re,im,localization\n"));
    assert_eq!(csv.lines().count(), 1 + 64);
}
