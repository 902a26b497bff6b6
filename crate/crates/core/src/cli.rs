//! Command implementations behind the `loop-pe` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::check::{self, Fault};
use crate::composite;
use crate::config::{load_config, KvConfig};
use crate::error::{Error, Result};
use crate::neural::{init_params, load_checkpoint, save_checkpoint, CheckpointMeta, ModelParams};
use crate::ops::count_ops;
use crate::oracle::time_solver;
use crate::pipeline::{
    evaluate, gap_summary, generate_dataset, header_line, read_dataset, timing_summary, train,
    write_dataset, write_report, Aggregate, DataGenConfig, Stats, TrainConfig,
};
use crate::problem::ProblemInstance;

#[derive(Debug, Parser)]
#[command(name = "loop-pe", version, about = "Learned dispatch with guaranteed feasibility")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset file from a data-generation config.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on the training split and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV; defaults to `<out>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Trailing samples held out from training.
        #[arg(long, default_value_t = 100)]
        n_test: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the test split and write report files.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Trailing samples to evaluate; 0 evaluates the whole file.
        #[arg(long, default_value_t = 100)]
        n_test: usize,
    },
    /// Time the exact solver against model inference.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 100)]
        n_test: usize,
    },
    /// Run the structural property suites.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "none", hide = true)]
        inject_fault: Fault,
    },
}

/// Process exit status: 0 success, 1 validation error, 2 runtime or numeric failure.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_validation() => 1,
        Err(_) => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => cmd_generate(config.as_deref(), &out, seed),
        Command::Train {
            data,
            config,
            out,
            history,
            n_test,
            seed,
        } => {
            let history = history.unwrap_or_else(|| history_path(&out));
            cmd_train(&data, config.as_deref(), &out, &history, n_test, seed)
        }
        Command::Eval {
            data,
            ckpt,
            out_dir,
            n_test,
        } => cmd_eval(&data, &ckpt, &out_dir, n_test).map(|_| ()),
        Command::Bench { data, ckpt, n_test } => cmd_bench(&data, &ckpt, n_test),
        Command::Check { seed, inject_fault } => cmd_check(seed, inject_fault),
    }
}

pub fn history_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".history.csv");
    checkpoint.with_file_name(name)
}

fn load_or_default<T: KvConfig>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => load_config(p),
        None => Ok(T::default()),
    }
}

pub fn cmd_generate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: DataGenConfig = load_or_default(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = generate_dataset(&cfg)?;
    write_dataset(out, &ds.instances, &header_line(cfg.seed, &cfg.digest()))?;
    println!(
        "wrote {} samples to {} (rejected draws: {}, seed {})",
        ds.instances.len(),
        out.display(),
        ds.rejections,
        cfg.seed
    );
    Ok(())
}

fn split_tail(data: &[ProblemInstance], n_test: usize) -> (&[ProblemInstance], &[ProblemInstance]) {
    data.split_at(data.len().saturating_sub(n_test))
}

pub fn cmd_train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    history: &Path,
    n_test: usize,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg: TrainConfig = load_or_default(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let all = read_dataset(data)?;
    let (train_set, _) = split_tail(&all, n_test);
    if train_set.is_empty() {
        return Err(Error::config(
            "n_test",
            format!("leaves no training samples out of {}", all.len()),
        ));
    }
    let params = init_params(cfg.hyper(), cfg.seed)?;
    println!(
        "training on {} samples ({} held out), {} epochs, loss {}",
        train_set.len(),
        all.len() - train_set.len(),
        cfg.epochs,
        cfg.loss_mode
    );
    let outcome = train(params, train_set, &cfg)?;
    let digest = cfg.digest();
    let meta = CheckpointMeta {
        tool: crate::TOOL_VERSION.to_string(),
        seed: cfg.seed,
        config_digest: digest.clone(),
    };
    save_checkpoint(out, &outcome.params, &meta)?;

    let mut csv = format!("{}\nepoch,loss\n", header_line(cfg.seed, &digest));
    for (i, loss) in outcome.history.iter().enumerate() {
        writeln!(csv, "{},{loss}", i + 1).expect("writing to a String");
    }
    fs::write(history, csv).map_err(|e| Error::io(history, e))?;
    println!(
        "loss {:.6} -> {:.6}; checkpoint {}, history {}",
        outcome.history[0],
        outcome.history.last().copied().unwrap_or(f64::NAN),
        out.display(),
        history.display()
    );
    Ok(())
}

fn load_model_and_data(data: &Path, ckpt: &Path) -> Result<(ModelParams, CheckpointMeta, Vec<ProblemInstance>)> {
    let (params, meta) = load_checkpoint(ckpt)?;
    let instances = read_dataset(data)?;
    // Dataset features are fixed at (p_cap, p_dem); the checkpoint must agree.
    if params.hyper.d_in != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: params.hyper.d_in,
        });
    }
    if params.hyper.d_out != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: params.hyper.d_out,
        });
    }
    Ok((params, meta, instances))
}

fn test_split(all: &[ProblemInstance], n_test: usize) -> &[ProblemInstance] {
    if n_test == 0 {
        all
    } else {
        split_tail(all, n_test).1
    }
}

pub fn cmd_eval(data: &Path, ckpt: &Path, out_dir: &Path, n_test: usize) -> Result<Aggregate> {
    let (params, meta, all) = load_model_and_data(data, ckpt)?;
    let test = test_split(&all, n_test);
    let report = evaluate(&params, test)?;
    write_report(&report, out_dir, &header_line(meta.seed, &meta.config_digest))?;
    print!("{}", gap_summary(&report.aggregate));
    println!();
    print!("{}", timing_summary(&report.aggregate));
    if report.aggregate.degenerate_samples > 0 {
        println!(
            "note: {} samples had a zero-norm optimum; their gap is absolute",
            report.aggregate.degenerate_samples
        );
    }
    println!("reports written to {}", out_dir.display());
    Ok(report.aggregate)
}

/// Operation count of one inference per agent count; `None` marks a count that
/// varied between samples of the same size.
pub fn inference_op_counts(params: &ModelParams, instances: &[ProblemInstance]) -> Result<BTreeMap<usize, Option<u64>>> {
    let mut counts: BTreeMap<usize, Option<u64>> = BTreeMap::new();
    for x in instances {
        let (result, ops) = count_ops(|| composite::predict(params, x));
        result?;
        counts
            .entry(x.len())
            .and_modify(|c| {
                if *c != Some(ops) {
                    *c = None;
                }
            })
            .or_insert(Some(ops));
    }
    Ok(counts)
}

pub fn cmd_bench(data: &Path, ckpt: &Path, n_test: usize) -> Result<()> {
    let (params, _, all) = load_model_and_data(data, ckpt)?;
    let test = test_split(&all, n_test);
    let mut oracle_us = Vec::with_capacity(test.len());
    let mut model_us = Vec::with_capacity(test.len());
    for x in test {
        let t = time_solver(x, &params)?;
        oracle_us.push(t.oracle.as_secs_f64() * 1e6);
        model_us.push(t.model.as_secs_f64() * 1e6);
    }
    let agg = Aggregate {
        samples: test.len(),
        opt_gap: Stats::of([]),
        feas_gap_kw: Stats::of([]),
        model_time_us: Stats::of(model_us),
        oracle_time_us: Stats::of(oracle_us),
        degenerate_samples: 0,
    };
    print!("{}", timing_summary(&agg));

    let counts = inference_op_counts(&params, test)?;
    let fixed = counts.values().all(Option::is_some);
    println!("\nInference operation count by agent count (fixed per size: {fixed})");
    for (n, c) in &counts {
        match c {
            Some(ops) => println!("  N = {n:>2}: {ops} ops"),
            None => println!("  N = {n:>2}: varies with input values"),
        }
    }
    if !fixed {
        return Err(Error::CheckFailed("inference op count depends on input values".into()));
    }
    Ok(())
}

pub fn cmd_check(seed: u64, fault: Fault) -> Result<()> {
    let results = check::run_all(seed, fault);
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Error::CheckFailed(format!("{failed} property suite(s) failed")));
    }
    println!("all {} suites passed (seed {seed})", results.len());
    Ok(())
}
