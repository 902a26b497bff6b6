use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::composite;
use crate::error::{Error, Result};
use crate::gauge::gauge_for;
use crate::neural::ModelParams;
use crate::oracle::{median_time, solve_exact, TIMING_REPEATS};
use crate::problem::{feasibility_gap, optimality_gap_or_absolute, DecisionVector, ProblemInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleReport {
    pub sample_id: usize,
    pub n_agents: usize,
    pub opt_gap: f64,
    /// Set when `‖u*‖ = 0` and `opt_gap` holds the absolute `‖u − u*‖²`.
    pub opt_gap_absolute: bool,
    pub feas_gap_kw: f64,
    pub model_time_us: f64,
    pub oracle_time_us: f64,
    pub u_model: DecisionVector,
    pub u_star: DecisionVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub avg: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut sum) = (0usize, 0.0);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            n += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        if n == 0 {
            return Stats {
                avg: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        Stats {
            avg: sum / n as f64,
            min,
            max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub samples: usize,
    pub opt_gap: Stats,
    pub feas_gap_kw: Stats,
    pub model_time_us: Stats,
    pub oracle_time_us: Stats,
    /// Samples whose optimality gap fell back to absolute units.
    pub degenerate_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub samples: Vec<SampleReport>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn from_samples(samples: Vec<SampleReport>) -> Self {
        let aggregate = aggregate_of(&samples);
        EvalReport { samples, aggregate }
    }
}

pub fn aggregate_of(samples: &[SampleReport]) -> Aggregate {
    Aggregate {
        samples: samples.len(),
        opt_gap: Stats::of(samples.iter().map(|s| s.opt_gap)),
        feas_gap_kw: Stats::of(samples.iter().map(|s| s.feas_gap_kw)),
        model_time_us: Stats::of(samples.iter().map(|s| s.model_time_us)),
        oracle_time_us: Stats::of(samples.iter().map(|s| s.oracle_time_us)),
        degenerate_samples: samples.iter().filter(|s| s.opt_gap_absolute).count(),
    }
}

/// Gaps of the composed model against the exact optimum on every sample,
/// with median-of-11 timings for both.
pub fn evaluate(params: &ModelParams, test: &[ProblemInstance]) -> Result<EvalReport> {
    evaluate_with(params, test, TIMING_REPEATS)
}

/// As [`evaluate`]; `timing_repeats = 0` skips timing and records zeros.
pub fn evaluate_with(params: &ModelParams, test: &[ProblemInstance], timing_repeats: usize) -> Result<EvalReport> {
    let mut samples = Vec::with_capacity(test.len());
    for (sample_id, x) in test.iter().enumerate() {
        let gd = gauge_for(x)
            .map_err(|e| Error::Infeasible(format!("test sample {sample_id}: {e}")))?;
        let u_star = solve_exact(x)?;
        let u_model = composite::predict_with_gauge(params, x, &gd)?.u;
        let (opt_gap, opt_gap_absolute) = optimality_gap_or_absolute(&u_model, &u_star)?;
        let feas_gap_kw = feasibility_gap(x, &u_model)?;
        let (model_time_us, oracle_time_us) = if timing_repeats == 0 {
            (0.0, 0.0)
        } else {
            let model = median_time(timing_repeats, || composite::predict(params, x).map(drop))?;
            let oracle = median_time(timing_repeats, || solve_exact(x).map(drop))?;
            (micros(model), micros(oracle))
        };
        samples.push(SampleReport {
            sample_id,
            n_agents: x.len(),
            opt_gap,
            opt_gap_absolute,
            feas_gap_kw,
            model_time_us,
            oracle_time_us,
            u_model,
            u_star,
        });
    }
    Ok(EvalReport::from_samples(samples))
}

fn micros(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

pub const SAMPLES_CSV: &str = "per_sample.csv";
pub const AGGREGATE_JSON: &str = "aggregate.json";
pub const SPECTRA_CSV: &str = "spectra.csv";

pub fn per_sample_csv(report: &EvalReport, header: &str) -> String {
    let mut out = format!("{header}\nsample_id,n_agents,opt_gap,feas_gap_kw,model_time_us,oracle_time_us\n");
    for s in &report.samples {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.sample_id, s.n_agents, s.opt_gap, s.feas_gap_kw, s.model_time_us, s.oracle_time_us
        )
        .expect("writing to a String");
    }
    out
}

pub fn spectra_csv(report: &EvalReport, header: &str) -> String {
    let mut out = format!("{header}\nsample_id,agent_idx,u_model_kw,u_star_kw\n");
    for s in &report.samples {
        for (i, (u, star)) in s.u_model.0.iter().zip(&s.u_star.0).enumerate() {
            writeln!(out, "{},{i},{u},{star}", s.sample_id).expect("writing to a String");
        }
    }
    out
}

#[derive(Serialize)]
struct AggregateFile<'a> {
    header: &'a str,
    #[serde(flatten)]
    aggregate: &'a Aggregate,
}

/// Writes the per-sample CSV, the aggregate JSON record, and the spectra CSV.
pub fn write_report(report: &EvalReport, out_dir: &Path, header: &str) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, text: String| {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    };
    write(SAMPLES_CSV, per_sample_csv(report, header))?;
    write(SPECTRA_CSV, spectra_csv(report, header))?;
    let record = AggregateFile {
        header,
        aggregate: &report.aggregate,
    };
    write(AGGREGATE_JSON, serde_json::to_string_pretty(&record)? + "\n")
}

/// Gap table (average / minimum / maximum) in the layout of the published summary.
pub fn gap_summary(agg: &Aggregate) -> String {
    format!(
        "Optimality and feasibility gaps ({} samples)\n\
         {:<26}{:>10}{:>10}{:>10}\n\
         {:<26}{:>10.4}{:>10.4}{:>10.4}\n\
         {:<26}{:>10.2e}{:>10.2e}{:>10.2e}\n",
        agg.samples,
        "",
        "average",
        "minimum",
        "maximum",
        "optimality gap",
        agg.opt_gap.avg,
        agg.opt_gap.min,
        agg.opt_gap.max,
        "feasibility gap (kW)",
        agg.feas_gap_kw.avg,
        agg.feas_gap_kw.min,
        agg.feas_gap_kw.max,
    )
}

/// Solver vs model wall-clock table in milliseconds.
pub fn timing_summary(agg: &Aggregate) -> String {
    let ms = |us: f64| us / 1000.0;
    format!(
        "Computation time (ms, median of {TIMING_REPEATS} runs per sample)\n\
         {:<12}{:>16}{:>16}\n\
         {:<12}{:>16.4}{:>16.4}\n\
         {:<12}{:>16.4}{:>16.4}\n\
         {:<12}{:>16.4}{:>16.4}\n",
        "",
        "exact solver",
        "model",
        "average",
        ms(agg.oracle_time_us.avg),
        ms(agg.model_time_us.avg),
        "minimum",
        ms(agg.oracle_time_us.min),
        ms(agg.model_time_us.min),
        "maximum",
        ms(agg.oracle_time_us.max),
        ms(agg.model_time_us.max),
    )
}
