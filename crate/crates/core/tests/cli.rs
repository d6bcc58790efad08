//! End-to-end runs of the `pointspec` binary.

use std::path::Path;
use std::process::{Command, Output};

fn pointspec(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointspec")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: [&str; 6] = ["n_train=16", "n_test=8", "n_points=64", "epochs=1", "batch_size=8", "threads=1"];

fn tiny(extra: &[&str]) -> Vec<String> {
    TINY.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_with(sub: &str, extra: &[&str], cwd: &Path) -> Output {
    let mut args = vec![sub.to_string()];
    args.extend(tiny(extra));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    pointspec(&refs, cwd)
}

#[test]
fn missing_config_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = pointspec(&["train", "no/such/run.cfg"], dir.path());
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("no/such/run.cfg"), "{}", stderr(&o));
}

#[test]
fn unknown_key_lists_valid_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = pointspec(&["train", "epoch=1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("valid keys") && stderr(&o).contains("epochs"));
}

#[test]
fn smoke_train_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("train", &["dataset=synth", "out_dir=run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "{csv}");
    assert_eq!(lines[0], "epoch,lr,train_loss,train_acc,test_metric,seconds");
    let manifest = std::fs::read_to_string(run.join("manifest.txt")).unwrap();
    let keys: Vec<&str> = manifest.lines().map(|l| l.split('=').next().unwrap()).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    for k in ["config.arch", "dataset_fingerprint", "seed", "start_time", "version"] {
        assert!(keys.contains(&k), "manifest lacks {k}");
    }
    assert!(run.join("model.ckpt").exists());

    let eval = pointspec(&["evaluate", "run/model.ckpt", "n_train=16", "n_test=8", "n_points=64"], dir.path());
    assert!(eval.status.success(), "{}", stderr(&eval));
    assert!(stdout(&eval).starts_with("instance_acc="));
}

#[test]
fn config_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "# tiny\nepochs = 3\nout_dir = from_file\n").unwrap();
    let o = pointspec(
        &["train", "run.cfg", "n_train=8", "n_test=4", "n_points=64", "batch_size=4", "epochs=2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("from_file/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn deterministic_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = run_with("train", &["deterministic=true", "epochs=2", &format!("out_dir={out}")], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn segmentation_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let o = pointspec(
        &["train", "dataset=synth_seg", "n_train=4", "n_test=2", "n_points=128", "epochs=1", "batch_size=2", "out_dir=seg"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let end = std::fs::read_to_string(dir.path().join("seg/run_end.txt")).unwrap();
    assert!(end.contains("miou="));
}

#[test]
fn ablate_has_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("ablate", &["seeds=2", "out_dir=abl"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("abl/ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,mean_acc,sd_acc,seconds,ordering_holds");
    assert_eq!(lines.len(), 4);
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["4l-pointnet++", "4l-spec-max", "4l-spec-cp"]);
    for l in &lines[1..] {
        let acc: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn export_then_train_from_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("export", &["out_dir=data"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("data/manifest.txt").exists());
    let o = run_with("train", &["dataset=dir:data", "out_dir=run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn spectra_two_points_and_two_clusters() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pair.xyz"), "0 0 0\n1 0 0\n").unwrap();
    let o = pointspec(&["spectra", "pair.xyz", "k=2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "point_index,phi1");
    assert_eq!(lines.len(), 3);

    // two tight groups far apart: the Fiedler vector's sign separates them
    let mut text = String::new();
    for i in 0..5 {
        text += &format!("{} 0 0\n", 0.01 * i as f64);
        text += &format!("{} 0.02 0\n", 4.0 + 0.01 * i as f64);
    }
    std::fs::write(dir.path().join("two.xyz"), &text).unwrap();
    let o = pointspec(&["spectra", "two.xyz", "k=10"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let again = pointspec(&["spectra", "two.xyz", "k=10"], dir.path());
    assert_eq!(o.stdout, again.stdout);
    let signs: Vec<(bool, bool)> = stdout(&o)
        .lines()
        .skip(1)
        .map(|row| {
            let f: Vec<&str> = row.split(',').collect();
            // even rows of the file are the group at x ≈ 0
            (f[0].parse::<usize>().unwrap() % 2 == 0, f[1].parse::<f64>().unwrap() > 0.0)
        })
        .collect();
    let first_group_sign = signs.iter().find(|s| s.0).unwrap().1;
    assert!(signs.iter().all(|&(even, pos)| even == (pos == first_group_sign)), "{signs:?}");

    let o = pointspec(&["spectra", "two.xyz", "k=4", "centroids=3", "out_dir=sp"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("sp/spectra_c002.csv").exists());
}

#[test]
fn bad_cloud_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.xyz"), "0 0 0\n1 zero 0\n").unwrap();
    let o = pointspec(&["spectra", "bad.xyz", "k=2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.xyz:2"), "{}", stderr(&o));
}

#[test]
fn selftest_catches_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = pointspec(&["selftest", "--inject-fault", "gft-sign"], dir.path());
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("spectral identities"), "{}", stderr(&o));
}
