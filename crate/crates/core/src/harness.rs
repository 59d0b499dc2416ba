//! Experiment orchestration: single runs, sweeps, CSV output and summaries.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::config::{ConfigError, ExperimentConfig};
use crate::data::{split_train_val, DataError};
use crate::training::{run_training, steps_per_epoch, Datasets, EpochMetrics, Method, TrainError, TrainedResult};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Seed of the train/validation split, shared by every run so that methods
/// and seeds are compared on the same held-out set.
pub const SPLIT_SEED: u64 = 0;

/// Loads the configured dataset and carves out the validation split.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Datasets, HarnessError> {
    let (train, test) = cfg.dataset.load(&cfg.dataset_dir())?;
    Ok(if cfg.val_fraction > 0.0 {
        let (train, val) = split_train_val(&train, cfg.val_fraction, SPLIT_SEED)?;
        Datasets::new(train, Some(val), test)
    } else {
        Datasets::new(train, None, test)
    })
}

/// Outcome of one run together with what is needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// Snapshot with `seeds = [seed]` and no sweep.
    pub config: ExperimentConfig,
    pub method: Method,
    pub arch: String,
    pub dist: String,
    pub rho: f64,
    pub p: f64,
    /// Resolved randomization period; `None` when nothing is randomized.
    pub k_per: Option<usize>,
    pub r: Option<f64>,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub final_test_acc: Option<f64>,
    pub randomizations: usize,
    pub wall_time_s: f64,
    pub config_hash: String,
    pub error: Option<String>,
}

fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    digest[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Runs `cfg` for one seed. Training failures are recorded, not returned.
pub fn run_single(cfg: &ExperimentConfig, seed: u64, data: &Datasets) -> RunRecord {
    let mut snapshot = cfg.clone();
    snapshot.seeds = vec![seed];
    snapshot.sweep = None;
    let params = snapshot.train_params(seed);
    let per_epoch = steps_per_epoch(data.train.len(), snapshot.batch);
    let rz = params.randomize_config(per_epoch);
    let randomized = rz.mode != crate::randomize::RandomizeMode::Off;
    let (k_per, r) = if randomized { (Some(rz.k_per), Some(rz.r)) } else { (None, None) };
    let run_id = format!(
        "{}-{}-{}-rho{}-p{}{}{}-s{}",
        snapshot.method,
        snapshot.arch,
        snapshot.dist_param.name(),
        snapshot.rho,
        snapshot.p,
        k_per.map(|k| format!("-k{k}")).unwrap_or_default(),
        r.map(|r| format!("-r{r}")).unwrap_or_default(),
        seed
    );
    let start = Instant::now();
    let result = run_training(&params, data, |_| {});
    let wall_time_s = start.elapsed().as_secs_f64();
    let (epochs, final_test_acc, randomizations, error) = match result {
        Ok(res) => {
            let error = if snapshot.save_checkpoints {
                save_checkpoint(&res, seed, &snapshot.output.join("checkpoints"), &run_id).err()
            } else {
                None
            };
            (res.epochs.clone(), Some(res.final_test_acc()), res.randomizations, error)
        }
        Err(e) => (Vec::new(), None, 0, Some(e.to_string())),
    };
    RunRecord {
        run_id,
        config_hash: config_hash(&snapshot),
        method: snapshot.method,
        arch: snapshot.arch.name().into(),
        dist: snapshot.dist_param.name().into(),
        rho: snapshot.rho,
        p: snapshot.p,
        k_per,
        r,
        seed,
        epochs,
        final_test_acc,
        randomizations,
        wall_time_s,
        error,
        config: snapshot,
    }
}

fn save_checkpoint(res: &TrainedResult, seed: u64, dir: &Path, run_id: &str) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let streams = res.streams.iter().map(|(_, s)| *s).collect();
    Checkpoint::capture(&res.net, seed, res.steps as u64, res.randomizations as u64, streams)
        .save(&dir.join(format!("{run_id}.ckpt")))
        .map_err(|e| e.to_string())
}

/// Configurations of a sweep: every (value, method, seed) combination, or the
/// seeds of `cfg` alone when it has no sweep.
pub fn expand_sweep(cfg: &ExperimentConfig) -> Result<Vec<(ExperimentConfig, u64)>, HarnessError> {
    let mut out = Vec::new();
    let Some(sweep) = &cfg.sweep else {
        return Ok(cfg.seeds.iter().map(|&s| (cfg.clone(), s)).collect());
    };
    let methods = if sweep.methods.is_empty() {
        vec![cfg.method]
    } else {
        sweep.methods.clone()
    };
    for &value in &sweep.values {
        for &method in &methods {
            let mut point = cfg.clone();
            point.sweep = None;
            point.method = method;
            point.apply_axis(sweep.axis, value)?;
            point.validate()?;
            for &seed in &cfg.seeds {
                out.push((point.clone(), seed));
            }
        }
    }
    Ok(out)
}

/// Executes every run of the sweep with up to `jobs` runs in parallel.
/// Records come back in expansion order.
pub fn run_sweep(cfg: &ExperimentConfig, data: &Datasets, jobs: usize) -> Result<Vec<RunRecord>, HarnessError> {
    let runs = expand_sweep(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    Ok(pool.install(|| {
        runs.par_iter()
            .map(|(c, seed)| run_single(c, *seed, data))
            .collect()
    }))
}

pub const EPOCH_CSV_HEADER: [&str; 13] = [
    "run_id", "method", "arch", "rho", "p", "K_per", "r", "seed", "epoch", "train_acc", "val_acc", "test_acc", "lr",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per (run, epoch).
pub fn write_epoch_csv<W: std::io::Write>(records: &[RunRecord], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EPOCH_CSV_HEADER)?;
    for rec in records {
        for e in &rec.epochs {
            w.write_record([
                rec.run_id.clone(),
                rec.method.to_string(),
                rec.arch.clone(),
                rec.rho.to_string(),
                rec.p.to_string(),
                opt(rec.k_per),
                opt(rec.r),
                rec.seed.to_string(),
                e.epoch.to_string(),
                e.train_acc.to_string(),
                opt(e.val_acc),
                e.test_acc.to_string(),
                e.lr.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

/// Mean and spread of final test accuracy over the seeds of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub arch: String,
    pub dist: String,
    pub rho: f64,
    pub p: f64,
    pub k_per: Option<usize>,
    pub r: Option<f64>,
    pub runs: usize,
    pub failed: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

/// Sample mean and standard deviation, independent of input order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups records by (method, arch, dist, rho, p, K_per, r) in a canonical order.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    type Key<'a> = (Method, &'a str, &'a str, f64, f64, Option<usize>, Option<f64>);
    let mut groups: Vec<(Key, Vec<f64>, usize)> = Vec::new();
    for rec in records {
        let key: Key = (rec.method, &rec.arch, &rec.dist, rec.rho, rec.p, rec.k_per, rec.r);
        let idx = match groups.iter().position(|(k, _, _)| *k == key) {
            Some(i) => i,
            None => {
                groups.push((key, Vec::new(), 0));
                groups.len() - 1
            }
        };
        match rec.final_test_acc {
            Some(a) => groups[idx].1.push(a),
            None => groups[idx].2 += 1,
        }
    }
    let cmp_opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        _ => a.is_some().cmp(&b.is_some()),
    };
    groups.sort_by(|(a, _, _), (b, _, _)| {
        a.0.cmp(&b.0)
            .then(a.1.cmp(b.1))
            .then(a.2.cmp(b.2))
            .then(a.3.total_cmp(&b.3))
            .then(a.4.total_cmp(&b.4))
            .then(a.5.cmp(&b.5))
            .then(cmp_opt(a.6, b.6))
    });
    groups
        .into_iter()
        .map(|((method, arch, dist, rho, p, k_per, r), accs, failed)| {
            let (mean, std) = mean_std(&accs);
            SummaryRow {
                method,
                arch: arch.into(),
                dist: dist.into(),
                rho,
                p,
                k_per,
                r,
                runs: accs.len(),
                failed,
                mean,
                std,
            }
        })
        .collect()
}

pub const SUMMARY_CSV_HEADER: [&str; 11] = [
    "method", "arch", "dist", "rho", "p", "K_per", "r", "runs", "failed", "mean_test_acc", "std_test_acc",
];

/// Human-readable table and CSV text of the summary of `records`.
pub fn emit_summary(records: &[RunRecord]) -> (String, String) {
    let rows = summarize(records);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_CSV_HEADER).expect("in-memory csv");
    for r in &rows {
        w.write_record([
            r.method.to_string(),
            r.arch.clone(),
            r.dist.clone(),
            r.rho.to_string(),
            r.p.to_string(),
            opt(r.k_per),
            opt(r.r),
            r.runs.to_string(),
            r.failed.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
        ])
        .expect("in-memory csv");
    }
    let csv_text = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8");

    let mut table = format!(
        "{:<11} {:<6} {:<4} {:>6} {:>5} {:>6} {:>5} {:>4}  {}\n",
        "method", "arch", "dist", "rho", "p", "K_per", "r", "runs", "test acc (%)"
    );
    for r in &rows {
        let _ = writeln!(
            table,
            "{:<11} {:<6} {:<4} {:>6} {:>5} {:>6} {:>5} {:>4}  {:.2} ± {:.2}{}",
            r.method.to_string(),
            r.arch,
            r.dist,
            r.rho,
            r.p,
            opt(r.k_per),
            opt(r.r),
            r.runs,
            100.0 * r.mean,
            100.0 * r.std,
            if r.failed > 0 { format!("  ({} failed)", r.failed) } else { String::new() }
        );
    }
    (table, csv_text)
}

/// Writes `runs.json`, `epochs.csv` and `summary.csv` into `dir`.
pub fn save_records(records: &[RunRecord], dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let runs = dir.join("runs.json");
    let json = serde_json::to_string_pretty(records).expect("records serialize");
    std::fs::write(&runs, json).map_err(io_err(&runs))?;
    let epochs = dir.join("epochs.csv");
    let file = std::fs::File::create(&epochs).map_err(io_err(&epochs))?;
    write_epoch_csv(records, file)?;
    let summary = dir.join("summary.csv");
    std::fs::write(&summary, emit_summary(records).1).map_err(io_err(&summary))?;
    Ok(())
}

/// Reads records written by [`save_records`].
pub fn load_records(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}
