//! `pointspec` command line: train, evaluate, ablate, spectra, selftest and
//! export. Exit codes: 0 ok, 1 usage/configuration, 2 data, 3 numerical.

pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};

use crate::data::{load_xyz, save_splits, Splits};
use crate::error::{Error, Result};
use crate::graph::{build_graph, WeightScheme};
use crate::model::{checkpoint, Variant};
use crate::sampling::{fps, knn};
use crate::suites::{self, Faults};
use crate::training::{evaluate, train_to_dir, Metrics};

pub use config::{RunConfig, KEYS};

#[derive(Parser, Debug)]
#[command(name = "pointspec", version, about = "Local spectral graph convolution for point sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one network; writes manifest.txt, metrics.csv, timing.csv and model.ckpt under out_dir.
    Train {
        /// Optional config file followed by key=value overrides.
        #[arg(value_name = "CONFIG|KEY=VALUE")]
        args: Vec<String>,
    },
    /// Evaluate a checkpoint on the test split of the configured dataset.
    Evaluate {
        checkpoint: PathBuf,
        #[arg(value_name = "CONFIG|KEY=VALUE")]
        args: Vec<String>,
    },
    /// Train point-MLP, spec-max and spec-cp on the same data and seeds; writes ablation.csv.
    Ablate {
        #[arg(value_name = "CONFIG|KEY=VALUE")]
        args: Vec<String>,
    },
    /// Dump spectral coordinates (eigenvectors 1-3) of k-NN neighborhoods as CSV.
    Spectra {
        /// Point cloud in xyz format.
        cloud: PathBuf,
        /// k=16, centroids=1, weight_scheme=gaussian, out_dir=<dir>
        #[arg(value_name = "KEY=VALUE")]
        args: Vec<String>,
    },
    /// Run the property suites; nonzero exit names the failed suites.
    Selftest {
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the configured dataset to out_dir as xyz files plus a manifest.
    Export {
        #[arg(value_name = "CONFIG|KEY=VALUE")]
        args: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Fault {
    /// Negate the graph Fourier transform.
    GftSign,
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Splits positional arguments into an optional config path (the single
/// argument without `=`) and `key=value` overrides.
fn split_args(args: &[String]) -> Result<(Option<PathBuf>, Vec<String>)> {
    let (overrides, paths): (Vec<String>, Vec<String>) = args.iter().cloned().partition(|a| a.contains('='));
    match paths.as_slice() {
        [] => Ok((None, overrides)),
        [p] => Ok((Some(PathBuf::from(p)), overrides)),
        _ => Err(Error::Config(format!("expected at most one config file, got {paths:?}"))),
    }
}

fn load_config(args: &[String]) -> Result<RunConfig> {
    let (path, overrides) = split_args(args)?;
    RunConfig::load(path.as_deref(), &overrides)
}

fn with_threads(cfg: &RunConfig, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    let threads = cfg.usize("threads")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(f)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { args } => {
            let cfg = load_config(&args)?;
            with_threads(&cfg, || cmd_train(&cfg))
        }
        Command::Evaluate { checkpoint, args } => {
            let cfg = load_config(&args)?;
            with_threads(&cfg, || cmd_evaluate(&checkpoint, &cfg))
        }
        Command::Ablate { args } => {
            let cfg = load_config(&args)?;
            with_threads(&cfg, || cmd_ablate(&cfg))
        }
        Command::Spectra { cloud, args } => cmd_spectra(&cloud, &args),
        Command::Selftest { inject_fault, seed } => {
            cmd_selftest(Faults { gft_sign_flip: matches!(inject_fault, Some(Fault::GftSign)) }, seed)
        }
        Command::Export { args } => {
            let cfg = load_config(&args)?;
            let splits = cfg.dataset()?;
            save_splits(&splits, &cfg.out_dir())?;
            println!("wrote {} train / {} test items to {}", splits.train.len(), splits.test.len(), cfg.out_dir().display());
            Ok(())
        }
    }
}

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Sorted `key=value` run manifest, written once before training starts.
pub fn manifest_text(cfg: &RunConfig, splits: &Splits, start_time: u64) -> Result<String> {
    let mut m = BTreeMap::new();
    for (k, v) in cfg.entries() {
        m.insert(format!("config.{k}"), v.to_string());
    }
    m.insert("dataset_fingerprint".into(), splits.fingerprint());
    m.insert("seed".into(), cfg.get("seed").to_string());
    m.insert("start_time".into(), start_time.to_string());
    m.insert("version".into(), env!("CARGO_PKG_VERSION").to_string());
    Ok(m.iter().map(|(k, v)| format!("{k}={v}\n")).collect())
}

fn metrics_text(m: &Metrics) -> String {
    let mut s = format!("instance_acc={:.6}\nclass_acc={:.6}\n", m.instance_acc, m.class_acc);
    if let Some(miou) = m.miou {
        writeln!(s, "miou={miou:.6}").expect("write to string");
    }
    s
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let tc = cfg.train_config()?;
    let splits = cfg.dataset()?;
    let arch = cfg.arch_for(cfg.variant()?, &splits)?;
    let out = cfg.out_dir();
    write_file(&out.join("manifest.txt"), &manifest_text(cfg, &splits, unix_time())?)?;
    let outcome = train_to_dir(&tc, &arch, &splits, &out)?;
    let summary = format!("end_time={}\n{}", unix_time(), metrics_text(&outcome.final_metrics));
    write_file(&out.join("run_end.txt"), &summary)?;
    println!(
        "{} on {}: test {:.4} after {} epochs ({})",
        arch.name,
        cfg.get("dataset"),
        outcome.final_metrics.headline(),
        tc.epochs,
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(ckpt: &Path, cfg: &RunConfig) -> Result<()> {
    let net = checkpoint::load(ckpt)?;
    let splits = cfg.dataset()?;
    let m = evaluate(&net, &splits.test, None)?;
    print!("{}", metrics_text(&m));
    Ok(())
}

/// Mean and sample standard deviation.
fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

pub const ABLATION_HEADER: &str = "variant,mean_acc,sd_acc,seconds,ordering_holds";
pub const ABLATION_ORDER: [Variant; 3] = [Variant::PointNet4, Variant::SpecMax4, Variant::SpecCp4];

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let base = cfg.train_config()?;
    let splits = cfg.dataset()?;
    let out = cfg.out_dir();
    write_file(&out.join("manifest.txt"), &manifest_text(cfg, &splits, unix_time())?)?;
    let seeds = cfg.usize("seeds")?;
    if seeds == 0 {
        return Err(Error::Config("seeds must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for variant in ABLATION_ORDER {
        let arch = cfg.arch_for(variant, &splits)?;
        let mut accs = Vec::with_capacity(seeds);
        let mut secs = 0.0;
        for s in 0..seeds as u64 {
            let tc = crate::training::TrainConfig { seed: base.seed + s, ..base.clone() };
            let start = Instant::now();
            let run_dir = out.join(format!("{}-seed{}", variant.name(), tc.seed));
            let outcome = train_to_dir(&tc, &arch, &splits, &run_dir)?;
            secs += start.elapsed().as_secs_f64();
            accs.push(outcome.final_metrics.headline());
            eprintln!("{} seed {}: {:.4}", variant.name(), tc.seed, outcome.final_metrics.headline());
        }
        let (mean, sd) = mean_sd(&accs);
        rows.push((variant, mean, sd, secs / seeds as f64));
    }
    let holds = rows[2].1 >= rows[1].1 && rows[1].1 >= rows[0].1;
    let mut csv = format!("{ABLATION_HEADER}\n");
    for (v, mean, sd, secs) in &rows {
        let secs = if base.deterministic { 0.0 } else { *secs };
        writeln!(csv, "{},{mean:.6},{sd:.6},{secs:.3},{holds}", v.name()).expect("write to string");
    }
    write_file(&out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

/// Spectral-coordinate CSV of one neighborhood: the member's index in the
/// cloud followed by eigenvector columns 1..=min(3, k−1).
pub fn spectra_csv(coords: &crate::Matrix, members: &[usize], scheme: &WeightScheme) -> Result<String> {
    let g = build_graph(&coords.select_rows(members), scheme)?;
    let cols = 3.min(members.len() - 1);
    let mut s = String::from("point_index");
    for j in 1..=cols {
        write!(s, ",phi{j}").expect("write to string");
    }
    s.push('\n');
    for (i, &m) in members.iter().enumerate() {
        write!(s, "{m}").expect("write to string");
        for j in 1..=cols {
            write!(s, ",{}", g.basis[(i, j)]).expect("write to string");
        }
        s.push('\n');
    }
    Ok(s)
}

const SPECTRA_KEYS: [&str; 4] = ["centroids", "k", "out_dir", "weight_scheme"];

fn cmd_spectra(path: &Path, args: &[String]) -> Result<()> {
    let mut opts: BTreeMap<&str, String> =
        [("centroids", "1"), ("k", "16"), ("weight_scheme", "gaussian")].into_iter().map(|(k, v)| (k, v.to_string())).collect();
    for a in args {
        let (k, v) = a.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {a:?}")))?;
        let key = SPECTRA_KEYS
            .iter()
            .find(|&&s| s == k.trim())
            .ok_or_else(|| Error::Config(format!("unknown key {k:?}; valid keys: {}", SPECTRA_KEYS.join(", "))))?;
        opts.insert(key, v.trim().to_string());
    }
    let num = |key: &str| -> Result<usize> {
        opts[key].parse().map_err(|_| Error::Config(format!("invalid value {:?} for {key}", opts[key])))
    };
    let (k, centroids) = (num("k")?, num("centroids")?);
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2 to have a Fiedler vector, got {k}")));
    }
    let scheme = WeightScheme::parse(&opts["weight_scheme"])?;
    let cloud = load_xyz(path)?;
    let centers = fps(&cloud.coords, centroids)?;
    let out_dir = opts.get("out_dir").map(PathBuf::from);
    if centers.len() == 1 && out_dir.is_none() {
        print!("{}", spectra_csv(&cloud.coords, &knn(&cloud.coords, centers[0], k)?, &scheme)?);
        return Ok(());
    }
    let dir = out_dir.unwrap_or_else(|| PathBuf::from("runs/spectra"));
    for (ci, &c) in centers.iter().enumerate() {
        let csv = spectra_csv(&cloud.coords, &knn(&cloud.coords, c, k)?, &scheme)?;
        write_file(&dir.join(format!("spectra_c{ci:03}.csv")), &csv)?;
    }
    println!("wrote {} neighborhoods to {}", centers.len(), dir.display());
    Ok(())
}

fn cmd_selftest(faults: Faults, seed: u64) -> Result<()> {
    let reports = suites::run_all(seed, faults)?;
    let mut failed = Vec::new();
    for r in &reports {
        println!("[{}] {}", if r.ok() { "PASS" } else { "FAIL" }, r.summary());
        if !r.ok() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        println!("selftest: all {} suites passed", reports.len());
        Ok(())
    } else {
        Err(Error::Numerical(format!("selftest failed suites: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn args_split_into_path_and_overrides() {
        let a = vec!["run.cfg".to_string(), "epochs=2".into()];
        let (p, o) = split_args(&a).unwrap();
        assert_eq!(p, Some(PathBuf::from("run.cfg")));
        assert_eq!(o, vec!["epochs=2".to_string()]);
        assert!(split_args(&["a".into(), "b".into()]).is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["pointspec", "frobnicate"]), 1);
        assert_eq!(run(["pointspec", "--help"]), 0);
        assert_eq!(run(["pointspec", "train", "epoch=1"]), 1);
    }

    #[test]
    fn spectra_of_two_points() {
        let coords = crate::Matrix::from_rows(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]]);
        let csv = spectra_csv(&coords, &[0, 1], &WeightScheme::gaussian()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "point_index,phi1");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn sample_sd() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
