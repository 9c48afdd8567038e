//! Experiment runner: `run`, `verify`, `sweep` and `list-instances`.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use bilevel_vi::oracle::{verify_bounds, BoundStatus, VerifyOptions, VerifyReport};
use bilevel_vi::outer::{run, OuterConfig, RunTrace};
use bilevel_vi::problems::catalog;

pub use config::{Beta, RunConfig, StartPoint, SweepAxis};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(#[from] bilevel_vi::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io(_) => 1,
            Self::Solver(_) => 2,
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl Invocation {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn apply(&self, mut cfg: RunConfig) -> RunConfig {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_path = Some(out.clone());
        }
        cfg
    }
}

fn output_path(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.output_path
        .clone()
        .ok_or_else(|| CliError::Config("no output path: set output_path or pass --out".into()))
}

fn outer_config(cfg: &RunConfig) -> OuterConfig {
    OuterConfig {
        k: cfg.k,
        t: cfg.t,
        beta: match cfg.beta {
            Beta::Auto => None,
            Beta::Fixed(b) => Some(b),
        },
        inner_tol: cfg.inner_tol,
        oracle_every: cfg.oracle_every,
        seed: cfg.seed,
        ..OuterConfig::default()
    }
}

/// Solves with the configured outer loop. Returns the exit code: `0` for a
/// completed run, `2` when the solver aborted part way.
pub fn cmd_run(cfg: RunConfig, inv: &Invocation) -> Result<i32, CliError> {
    let cfg = inv.apply(cfg);
    let out = output_path(&cfg)?;
    let entry = cfg.build_instance()?;
    let x0 = cfg.start_point(&entry)?;
    let trace = run(&entry.spec, &x0, &outer_config(&cfg))?;
    if cfg.beta == Beta::Auto {
        inv.log(format!(
            "beta = auto: L_f_hat = {:e}, beta = {:e}",
            trace.summary.l_f_hat, trace.summary.beta
        ));
    }
    output::write_trace_csv(&out, &trace.records)?;
    output::write_meta(&out, &run_meta(&cfg, &trace))?;
    if let Some(abort) = &trace.abort {
        eprintln!("solver aborted at k = {}: {}", abort.k, abort.error);
        return Ok(2);
    }
    if let Some(last) = trace.records.last() {
        inv.log(format!(
            "{} iterations, final f = {:e}, min |g|^2 = {:e}",
            trace.records.len(),
            last.f_value,
            trace.summary.min_grad_norm_sq
        ));
    }
    Ok(0)
}

fn run_meta(cfg: &RunConfig, trace: &RunTrace) -> serde_json::Value {
    let s = &trace.summary;
    json!({
        "command": "run",
        "config": cfg,
        "constants": {
            "beta": s.beta,
            "l_f_hat": s.l_f_hat,
            "l_s_hat": s.l_s_hat,
        },
        "summary": {
            "iterations": trace.records.len(),
            "min_grad_norm_sq": s.min_grad_norm_sq,
            "f_best": s.f_best,
            "x_final": trace.records.last().map(|r| r.x.as_slice().to_vec()),
        },
        "abort": trace.abort.as_ref().map(|a| json!({
            "k": a.k,
            "x": a.x.as_slice(),
            "error": a.error.to_string(),
        })),
    })
}

/// Checks the error bounds at `x0` for each `T` in `T_range`. Returns `0`
/// when every bound holds within the warning margin and `3` otherwise.
pub fn cmd_verify(cfg: RunConfig, inv: &Invocation) -> Result<i32, CliError> {
    let cfg = inv.apply(cfg);
    let out = output_path(&cfg)?;
    if cfg.t_range.is_empty() {
        return Err(CliError::Config("T_range is empty".into()));
    }
    let entry = cfg.build_instance()?;
    let x0 = cfg.start_point(&entry)?;
    let options = VerifyOptions {
        seed: cfg.seed,
        ..VerifyOptions::default()
    };
    let report = verify_bounds(&entry.spec, &x0, &cfg.t_range, options)?;
    output::write_verify_csv(&out, &report.rows)?;
    output::write_meta(&out, &verify_meta(&cfg, &report))?;
    let r = &report.report;
    if r.fd_grad.is_none() {
        inv.log("finite-difference stencil crosses a kink at x0; oracle comparison skipped");
    }
    let worst = r.lemma6.worst(r.prop1).worst(r.thm2);
    inv.log(format!(
        "lemma6 {}, prop1 {}, thm2 {}",
        r.lemma6.as_str(),
        r.prop1.as_str(),
        r.thm2.as_str()
    ));
    Ok(if worst == BoundStatus::Violated { 3 } else { 0 })
}

fn verify_meta(cfg: &RunConfig, report: &VerifyReport) -> serde_json::Value {
    let r = &report.report;
    let c = &r.constants;
    json!({
        "command": "verify",
        "config": cfg,
        "constants": {
            "q_hat": c.q_hat,
            "q_bound": c.q_bound,
            "c1_hat": c.c1_hat,
            "c2_hat": c.c2_hat,
            "delta_hat": c.delta_hat,
            "c_y_hat": c.c_y_hat,
            "c_prime_hat": c.c_prime_hat,
            "l_x_hat": c.l_x_hat,
            "l_y_hat": c.l_y_hat,
            "l_s_hat": c.l_s_hat,
            "l_f_hat": c.l_f_hat,
            "m_hat": c.m_hat,
        },
        "oracle": {
            "x": r.x.as_slice(),
            "fd_abs_err": r.abs_err,
            "fd_rel_err": r.rel_err,
        },
        "status": {
            "lemma6": r.lemma6.as_str(),
            "prop1": r.prop1.as_str(),
            "thm2": r.thm2.as_str(),
        },
        "thm2": {
            "measured": report.thm2_measured,
            "bound": report.thm2_bound,
        },
    })
}

/// One sweep point: the axis value, `min_k ‖∇f(y*(x_k), x_k)‖²` and that
/// minimum times `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub min_grad_norm_sq: f64,
    pub scaled_product: f64,
}

fn sweep_point(cfg: &RunConfig, axis: SweepAxis, value: f64) -> Result<SweepRow, CliError> {
    let mut point = cfg.clone();
    let as_count = |v: f64| -> Result<usize, CliError> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(CliError::Config(format!("sweep value {v} is not a count")))
        }
    };
    match axis {
        SweepAxis::K => point.k = as_count(value)?,
        SweepAxis::T => point.t = as_count(value)?,
        SweepAxis::Beta => point.beta = Beta::Fixed(value),
    }
    point.validate()?;
    let entry = point.build_instance()?;
    let x0 = point.start_point(&entry)?;
    let config = OuterConfig {
        grad_stop: None,
        track_true_gradient: true,
        ..outer_config(&point)
    };
    let trace = run(&entry.spec, &x0, &config)?;
    if let Some(abort) = trace.abort {
        return Err(abort.error.into());
    }
    let min = trace
        .summary
        .min_true_grad_norm_sq
        .unwrap_or(trace.summary.min_grad_norm_sq);
    Ok(SweepRow {
        axis_value: value,
        min_grad_norm_sq: min,
        scaled_product: point.k as f64 * min,
    })
}

/// Runs one outer solve per sweep value in parallel; rows keep the order of
/// `sweep_values`.
pub fn sweep_rows(cfg: &RunConfig) -> Result<Vec<SweepRow>, CliError> {
    let axis = cfg
        .sweep_axis
        .ok_or_else(|| CliError::Config("missing key 'sweep_axis'".into()))?;
    if cfg.sweep_values.is_empty() {
        return Err(CliError::Config("sweep_values is empty".into()));
    }
    cfg.sweep_values
        .par_iter()
        .map(|&v| sweep_point(cfg, axis, v))
        .collect()
}

pub fn cmd_sweep(cfg: RunConfig, inv: &Invocation) -> Result<i32, CliError> {
    let cfg = inv.apply(cfg);
    let out = output_path(&cfg)?;
    let rows = sweep_rows(&cfg)?;
    for r in &rows {
        inv.log(format!("{} -> min |g|^2 = {:e}", r.axis_value, r.min_grad_norm_sq));
    }
    output::write_sweep_csv(&out, &rows)?;
    output::write_meta(&out, &json!({ "command": "sweep", "config": cfg }))?;
    Ok(0)
}

/// One line per catalog entry: name, regime tags, notes.
pub fn list_instances() -> String {
    catalog(0)
        .iter()
        .map(|e| {
            let tags: Vec<String> = e.regime_tags.iter().map(ToString::to_string).collect();
            format!("{:<22} [{}] {}\n", e.name, tags.join(", "), e.notes)
        })
        .collect()
}

/// Loads a config file and dispatches. Errors become exit codes with the
/// message on standard error.
pub fn execute(command: &str, config: Option<&Path>, inv: &Invocation) -> i32 {
    if command == "list-instances" {
        print!("{}", list_instances());
        return 0;
    }
    let result = (|| {
        let path = config.ok_or_else(|| CliError::Config("--config is required".into()))?;
        let cfg = RunConfig::from_file(path)?;
        match command {
            "run" => cmd_run(cfg, inv),
            "verify" => cmd_verify(cfg, inv),
            "sweep" => cmd_sweep(cfg, inv),
            other => Err(CliError::Config(format!("unknown command '{other}'"))),
        }
    })();
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    })
}
