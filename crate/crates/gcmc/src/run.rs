//! Per-seed runs on disk, bounded parallelism, resume and reports.
//!
//! A run for one seed writes into `<dir>/seed-<seed>/`:
//!
//! - `train_log.jsonl`: one `{epoch, train_loss, val_rmse}` object per epoch
//! - `timing.jsonl`: one `{epoch, wall_ms}` object per epoch
//! - `checkpoint.bin`: final parameters and EMA shadows
//! - `result.json`: the run result and a fingerprint of its inputs
//!
//! `result.json` is written last. A later invocation that finds it with a
//! matching fingerprint reuses the result instead of training again.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context};
use gcmc_core::dataset::{temporal_split, RatingsDataset, TemporalSplit};
use gcmc_core::eval::{constant_rmse, make_report, method_label, EvalReport, ReportRow, NO_SKILL_LABEL};
use gcmc_core::graph::SequenceMode;
use gcmc_core::train::{model_config_for, train, RunData, RunResult, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetSpec, RunSpec};
use crate::ingest::{hex, load};

/// A dataset read from disk and split.
pub struct Prepared {
    pub dataset: RatingsDataset,
    pub sha256: String,
    pub split: TemporalSplit,
}

impl Prepared {
    pub fn load(spec: &DatasetSpec) -> anyhow::Result<Self> {
        let loaded = load(&spec.path, spec.format)?;
        let split = temporal_split(&loaded.dataset, spec.test_frac, spec.val_frac)?;
        Ok(Prepared {
            dataset: loaded.dataset,
            sha256: loaded.sha256,
            split,
        })
    }

    pub fn data(&self) -> RunData<'_> {
        RunData {
            dataset: &self.dataset,
            split: &self.split,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexRange {
    pub start: usize,
    pub end: usize,
}

impl From<&std::ops::Range<usize>> for IndexRange {
    fn from(r: &std::ops::Range<usize>) -> Self {
        IndexRange {
            start: r.start,
            end: r.end,
        }
    }
}

/// Auditable description of a chronological split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub dataset: String,
    pub format: String,
    pub sha256: String,
    pub n_ratings: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub test_frac: f64,
    pub val_frac: f64,
    pub train: IndexRange,
    pub val: IndexRange,
    pub test: IndexRange,
    pub train_last_timestamp: u64,
    pub val_first_timestamp: u64,
    pub test_first_timestamp: u64,
}

impl SplitManifest {
    pub fn new(spec: &DatasetSpec, prepared: &Prepared) -> Self {
        let ds = &prepared.dataset;
        let s = &prepared.split;
        let ts = |i: usize| ds.ratings()[i].timestamp;
        SplitManifest {
            dataset: spec.path.display().to_string(),
            format: spec.format.name().into(),
            sha256: prepared.sha256.clone(),
            n_ratings: ds.len(),
            n_users: ds.n_users(),
            n_items: ds.n_items(),
            test_frac: spec.test_frac,
            val_frac: spec.val_frac,
            train: (&s.train).into(),
            val: (&s.val).into(),
            test: (&s.test).into(),
            train_last_timestamp: ts(s.train.end - 1),
            val_first_timestamp: ts(s.val.start),
            test_first_timestamp: ts(s.test.start),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredResult {
    fingerprint: String,
    result: RunResult,
}

/// Hash of everything that determines a run's outcome.
pub fn fingerprint(spec: &RunSpec, dataset_sha: &str, seed: u64) -> String {
    let key = serde_json::json!({
        "dataset_sha256": dataset_sha,
        "test_frac": spec.dataset.test_frac,
        "val_frac": spec.dataset.val_frac,
        "model": spec.model,
        "train": TrainConfig { seed, ..spec.train.clone() },
    });
    hex(&Sha256::digest(key.to_string().as_bytes()))
}

pub fn seed_dir(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}"))
}

/// Trains one seed into `seed_dir(dir, seed)`, or returns the stored result
/// of an earlier identical run.
pub fn run_seed(spec: &RunSpec, prepared: &Prepared, seed: u64, dir: &Path) -> anyhow::Result<RunResult> {
    let out = seed_dir(dir, seed);
    let fp = fingerprint(spec, &prepared.sha256, seed);
    let result_path = out.join("result.json");
    if let Ok(text) = fs::read_to_string(&result_path) {
        if let Ok(stored) = serde_json::from_str::<StoredResult>(&text) {
            if stored.fingerprint == fp {
                return Ok(stored.result);
            }
        }
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let config = model_config_for(&prepared.dataset, &spec.model.template());
    let cfg = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let mut log = BufWriter::new(File::create(out.join("train_log.jsonl"))?);
    let mut timing = BufWriter::new(File::create(out.join("timing.jsonl"))?);
    let start = Instant::now();
    let mut io_error = None;
    let (result, model) = train(&prepared.data(), &config, &cfg, |entry| {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        let wall_ms = start.elapsed().as_millis();
        let res = writeln!(log, "{line}")
            .and_then(|_| writeln!(timing, "{}", serde_json::json!({"epoch": entry.epoch, "wall_ms": wall_ms})))
            .and_then(|_| log.flush())
            .and_then(|_| timing.flush());
        if let Err(e) = res {
            io_error.get_or_insert(e);
        }
    })
    .with_context(|| format!("training seed {seed}"))?;
    if let Some(e) = io_error {
        return Err(e).context("writing training log");
    }

    Checkpoint {
        config,
        meta: serde_json::json!({
            "seed": seed,
            "dataset_sha256": prepared.sha256,
            "runspec": spec,
        }),
        params: model.params,
        ema: model.ema,
    }
    .write(&out.join("checkpoint.bin"))?;
    write_json(
        &result_path,
        &StoredResult {
            fingerprint: fp,
            result: result.clone(),
        },
    )?;
    Ok(result)
}

/// One unit of work for `run_tasks`.
pub struct Task<'a> {
    pub spec: &'a RunSpec,
    pub seed: u64,
    pub dir: PathBuf,
}

/// Runs tasks on at most `jobs` threads; results keep task order.
pub fn run_tasks(tasks: &[Task<'_>], prepared: &Prepared, jobs: usize) -> Vec<anyhow::Result<RunResult>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<anyhow::Result<RunResult>>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let workers = jobs.clamp(1, tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(k) else { break };
                let r = run_seed(task.spec, prepared, task.seed, &task.dir);
                *slots[k].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every task ran"))
        .collect()
}

pub fn mode_name(mode: SequenceMode) -> &'static str {
    match mode {
        SequenceMode::Static => "static",
        SequenceMode::Disjoint => "disjoint",
        SequenceMode::Incremental => "incremental",
    }
}

/// Report row for one variant, or the list of failed seeds.
pub fn variant_row(spec: &RunSpec, results: &[anyhow::Result<RunResult>]) -> anyhow::Result<ReportRow> {
    let mut rmses = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in spec.seeds.iter().zip(results) {
        match r {
            Ok(r) => rmses.push(r.test_rmse),
            Err(e) => failed.push(format!("seed {seed}: {e:#}")),
        }
    }
    if !failed.is_empty() {
        bail!("{} failed: {}", method_label(spec.model.cell, spec.model.mode), failed.join("; "));
    }
    Ok(ReportRow::from_runs(
        method_label(spec.model.cell, spec.model.mode),
        spec.dataset.format.name().into(),
        mode_name(spec.model.mode).into(),
        &rmses,
    )?)
}

/// Constant 3.0 predictor on the test split.
pub fn no_skill_row(spec: &DatasetSpec, prepared: &Prepared) -> anyhow::Result<ReportRow> {
    let data = prepared.data();
    let r = constant_rmse(3.0, &data.actual_values(data.test()))?;
    Ok(ReportRow::from_runs(NO_SKILL_LABEL.into(), spec.format.name().into(), "none".into(), &[r])?)
}

/// Writes `report.txt` and `report.json` into `dir` and returns the report.
pub fn write_report(dir: &Path, rows: Vec<ReportRow>) -> anyhow::Result<EvalReport> {
    let report = make_report(rows)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.txt"), report.render_text())?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}
