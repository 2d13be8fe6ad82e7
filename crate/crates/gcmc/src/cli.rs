//! Command-line interface.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gcmc_core::gradcheck::{check_gradients, GradCheckOptions, ToySpec};
use gcmc_core::graph::{NormScheme, SequenceMode};
use gcmc_core::model::{Accumulation, CellKind, GraphInput};
use gcmc_core::tape::Gradients;
use gcmc_core::train::{evaluate_rmse, training_sequence};
use serde::de::DeserializeOwned;

use crate::checkpoint::Checkpoint;
use crate::config::{RunSpec, RunSpecFile};
use crate::ingest::DatasetFormat;
use crate::run::{no_skill_row, run_tasks, variant_row, write_json, write_report, Prepared, SplitManifest, Task};

#[derive(Debug, Parser)]
#[command(name = "gcmc", version, about = "Graph convolutional matrix completion with temporal snapshots")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a chronological split manifest for a dataset.
    Split(Common),
    /// Train one model variant for every seed.
    Train(Common),
    /// Evaluate a checkpoint on its test split.
    Evaluate(EvaluateArgs),
    /// Train the static, disjoint and incremental variants and report them.
    Reproduce(Common),
    /// Compare analytic and finite-difference gradients on a toy instance.
    Gradcheck(GradcheckArgs),
}

fn lowercase_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|e| e.to_string())
}

/// Flags shared by the data commands. Each one overrides the config file.
#[derive(Debug, Default, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file (`u.data` or `ratings.dat`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset_format: Option<DatasetFormat>,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Concurrent seed runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// static, disjoint or incremental.
    #[arg(long, value_parser = lowercase_value::<SequenceMode>)]
    pub mode: Option<SequenceMode>,
    /// none, gru or lstm.
    #[arg(long, value_parser = lowercase_value::<CellKind>)]
    pub cell: Option<CellKind>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub output: Option<usize>,
    #[arg(long)]
    pub recurrent_hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// concat or sum.
    #[arg(long, value_parser = lowercase_value::<Accumulation>)]
    pub accumulation: Option<Accumulation>,
    /// left or symmetric.
    #[arg(long, value_parser = lowercase_value::<NormScheme>)]
    pub norm: Option<NormScheme>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
}

impl Common {
    /// Config file contents with flag overrides applied.
    pub fn merged(&self) -> anyhow::Result<RunSpecFile> {
        let mut f = match &self.config {
            Some(p) => RunSpecFile::load(p)?,
            None => RunSpecFile::default(),
        };
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = Some(v);
                }
            };
        }
        set!(f.dataset.path, self.data);
        set!(f.dataset.format, self.dataset_format);
        set!(f.dataset.test_frac, self.test_frac);
        set!(f.dataset.val_frac, self.val_frac);
        set!(f.out, self.out);
        set!(f.seeds, self.seeds);
        set!(f.seeds, self.seed.map(|s| vec![s]));
        set!(f.model.mode, self.mode);
        set!(f.model.cell, self.cell);
        set!(f.model.steps, self.steps);
        set!(f.model.hidden, self.hidden);
        set!(f.model.output, self.output);
        set!(f.model.recurrent_hidden, self.recurrent_hidden);
        set!(f.model.dropout, self.dropout);
        set!(f.model.accumulation, self.accumulation);
        set!(f.model.norm, self.norm);
        set!(f.train.epochs, self.epochs);
        set!(f.train.eval_every, self.eval_every);
        Ok(f)
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file; defaults to the path recorded in the checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Also write `evaluation.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Users and items in the toy instance.
    #[arg(long, default_value_t = 4)]
    pub size: usize,
    /// Refuse instances with more parameter scalars than this.
    #[arg(long, default_value_t = GradCheckOptions::default().max_scalars)]
    pub max_scalars: usize,
    /// Negate the analytic gradient of this parameter (harness self-test).
    #[arg(long, hide = true)]
    pub flip_sign: Option<String>,
}

/// Variants trained by `reproduce`: label slug, mode and cell.
pub const VARIANTS: [(&str, SequenceMode, CellKind); 5] = [
    ("static", SequenceMode::Static, CellKind::None),
    ("lstm-disjoint", SequenceMode::Disjoint, CellKind::Lstm),
    ("gru-disjoint", SequenceMode::Disjoint, CellKind::Gru),
    ("lstm-incremental", SequenceMode::Incremental, CellKind::Lstm),
    ("gru-incremental", SequenceMode::Incremental, CellKind::Gru),
];

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Split(c) => split(&c),
        Command::Train(c) => train(&c),
        Command::Evaluate(a) => evaluate(&a),
        Command::Reproduce(c) => reproduce(&c),
        Command::Gradcheck(a) => gradcheck(&a),
    }
}

fn split(c: &Common) -> anyhow::Result<()> {
    let spec = RunSpec::resolve(c.merged()?)?;
    let prepared = Prepared::load(&spec.dataset)?;
    let manifest = SplitManifest::new(&spec.dataset, &prepared);
    std::fs::create_dir_all(&spec.out)?;
    write_json(&spec.out.join("split.json"), &manifest)?;
    println!(
        "{}: {} ratings, {} users, {} items; train {} / val {} / test {}",
        manifest.format,
        manifest.n_ratings,
        manifest.n_users,
        manifest.n_items,
        manifest.train.end - manifest.train.start,
        manifest.val.end - manifest.val.start,
        manifest.test.end - manifest.test.start
    );
    Ok(())
}

fn train(c: &Common) -> anyhow::Result<()> {
    let spec = RunSpec::resolve(c.merged()?)?;
    let prepared = Prepared::load(&spec.dataset)?;
    std::fs::create_dir_all(&spec.out)?;
    write_json(&spec.out.join("runspec.json"), &spec)?;
    let tasks: Vec<Task> = spec
        .seeds
        .iter()
        .map(|&seed| Task {
            spec: &spec,
            seed,
            dir: spec.out.clone(),
        })
        .collect();
    let results = run_tasks(&tasks, &prepared, c.jobs);
    for (seed, r) in spec.seeds.iter().zip(&results) {
        if let Ok(r) = r {
            println!("seed {seed}: test RMSE {:.4}", r.test_rmse);
        }
    }
    let row = variant_row(&spec, &results)?;
    let report = write_report(&spec.out, vec![row])?;
    print!("{}", report.render_text());
    Ok(())
}

fn reproduce(c: &Common) -> anyhow::Result<()> {
    let mut base = c.merged()?;
    if base.seeds.is_none() {
        base.seeds = Some((0..5).collect());
    }
    let mut specs = Vec::new();
    for (slug, mode, cell) in VARIANTS {
        let mut f = base.clone();
        f.model.mode = Some(mode);
        f.model.cell = Some(cell);
        if cell == CellKind::None {
            f.model.steps = Some(1);
        }
        let mut spec = RunSpec::resolve(f)?;
        spec.out = spec.out.join(slug);
        specs.push(spec);
    }
    let dataset = specs[0].dataset.clone();
    let prepared = Prepared::load(&dataset)?;
    let root = specs[0].out.parent().expect("variant dir has a parent").to_path_buf();
    std::fs::create_dir_all(&root)?;

    let tasks: Vec<Task> = specs
        .iter()
        .flat_map(|spec| {
            spec.seeds.iter().map(move |&seed| Task {
                spec,
                seed,
                dir: spec.out.clone(),
            })
        })
        .collect();
    let mut results = run_tasks(&tasks, &prepared, c.jobs).into_iter();
    let mut rows = vec![no_skill_row(&dataset, &prepared)?];
    let mut failures = Vec::new();
    for spec in &specs {
        write_json(&spec.out.join("runspec.json"), spec).ok();
        let chunk: Vec<_> = results.by_ref().take(spec.seeds.len()).collect();
        match variant_row(spec, &chunk) {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(format!("{e:#}")),
        }
    }
    let report = write_report(&root, rows)?;
    print!("{}", report.render_text());
    if !failures.is_empty() {
        bail!("incomplete report: {}", failures.join("; "));
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::read(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let mut spec: RunSpec = serde_json::from_value(ckpt.meta["runspec"].clone())
        .context("checkpoint does not record its run specification")?;
    if let Some(p) = &a.data {
        spec.dataset.path = p.clone();
    }
    let prepared = Prepared::load(&spec.dataset)?;
    if ckpt.meta["dataset_sha256"].as_str() != Some(prepared.sha256.as_str()) {
        bail!("dataset {} differs from the one the checkpoint was trained on", spec.dataset.path.display());
    }
    let data = prepared.data();
    let seq = training_sequence(&data, &ckpt.config)?;
    let graph = GraphInput::build(&seq, &ckpt.config)?;
    let test_rmse = evaluate_rmse(&ckpt.ema, &ckpt.config, &graph, &data, data.test())?;
    let val_rmse = evaluate_rmse(&ckpt.ema, &ckpt.config, &graph, &data, data.val())?;
    let no_skill = no_skill_row(&spec.dataset, &prepared)?.rmse_mean;
    let summary = serde_json::json!({
        "checkpoint": a.checkpoint.display().to_string(),
        "seed": ckpt.meta["seed"],
        "val_rmse": val_rmse,
        "test_rmse": test_rmse,
        "no_skill_test_rmse": no_skill,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("evaluation.json"), &summary)?;
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> anyhow::Result<()> {
    let inst = ToySpec::sized(a.size).build(a.seed)?;
    let opts = GradCheckOptions {
        max_scalars: a.max_scalars,
        ..GradCheckOptions::default()
    };
    let flip = |g: &mut Gradients| {
        if let Some(t) = a.flip_sign.as_deref().and_then(|n| g.get_mut(n)) {
            for v in t.data_mut() {
                *v = -*v;
            }
        }
    };
    let report = check_gradients(&inst, a.seed, &opts, a.flip_sign.as_ref().map(|_| &flip as &dyn Fn(&mut Gradients)))?;
    for p in &report.params {
        let verdict = if p.max_rel_err <= report.tolerance { "ok" } else { "FAIL" };
        println!(
            "{verdict:4} {:28} checked {:4} skipped {:3} max rel err {:.3e}",
            p.name, p.checked, p.skipped, p.max_rel_err
        );
    }
    println!(
        "{} scalars checked, {} skipped at ReLU kinks, max rel err {:.3e} (tolerance {:.0e})",
        report.checked(),
        report.skipped(),
        report.max_rel_err(),
        report.tolerance
    );
    let failed: Vec<&str> = report.failures().map(|p| p.name.as_str()).collect();
    if !failed.is_empty() {
        bail!("gradient check failed for: {}", failed.join(", "));
    }
    Ok(())
}
