//! The `pinnflow` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{DataSource, ExperimentConfig, SweepAxis};
use crate::datagen::{samples_to_csv, TestSet};
use crate::error::{Error, Result};
use crate::eval::{self, HISTOGRAM_BINS};
use crate::io_util;
use crate::mlp::{Checkpoint, Mlp};
use crate::trainers;

#[derive(Debug, Parser)]
#[command(name = "pinnflow", version, about = "Physics-informed flow reconstruction from sparse samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a manufactured dataset: train.csv, meta.txt and optionally test.csv
    Generate(CommonArgs),
    /// Train the configured regime; writes checkpoint.bin and report.json
    Train(CommonArgs),
    /// Relative L2 errors of a checkpoint on the test split
    Eval(CheckpointArgs),
    /// Weighting-constant or architecture sweep
    Sweep(SweepArgs),
    /// Per-component gradient histograms of a checkpoint
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment file (INI)
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides run.seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides run.out; default `out`)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Concurrent training runs
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,
    /// Histogram bins (odd)
    #[arg(long, default_value_t = HISTOGRAM_BINS)]
    pub bins: usize,
}

fn load(c: &CommonArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::load(&c.config, c.seed)?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok((cfg, out))
}

fn dataset_id(cfg: &ExperimentConfig) -> String {
    match &cfg.data {
        DataSource::Generate(s) => format!("{}:seed={}", s.generator.name(), s.seed),
        DataSource::Dir(d) => d.display().to_string(),
        DataSource::Csv { train, .. } => train.display().to_string(),
    }
}

pub fn cmd_generate(args: &CommonArgs) -> Result<String> {
    let (cfg, out) = load(args)?;
    let DataSource::Generate(spec) = &cfg.data else {
        return Err(Error::config("generate needs [data] generator parameters"));
    };
    let split = spec.generate()?;
    io_util::write_atomic(&out.join("train.csv"), &samples_to_csv(split.schema, &split.train)?)?;
    io_util::write_atomic_str(&out.join("meta.txt"), &split.meta.to_text())?;
    if cfg.write_test {
        let mut all = Vec::new();
        split.test.for_each_step(|_, s| {
            all.extend_from_slice(s);
            Ok(())
        })?;
        io_util::write_atomic(&out.join("test.csv"), &samples_to_csv(split.schema, &all)?)?;
    }
    Ok(format!(
        "wrote {} training rows to {} (max residual {})",
        split.train.len(),
        out.display(),
        split.meta.get("max_residual").unwrap_or("?")
    ))
}

pub fn cmd_train(args: &CommonArgs) -> Result<String> {
    let (cfg, out) = load(args)?;
    let data = cfg.load_data()?;
    let mut res = trainers::train(&cfg.run, &data)?;
    res.report.config.extend(cfg.echo.clone());
    res.checkpoint().save(&out.join("checkpoint.bin"))?;
    io_util::write_atomic_str(&out.join("report.json"), &res.report.to_json()?)?;

    let mut losses = String::from("iteration,segment,total,data,pde,prevdata\n");
    for r in &res.report.loss_history {
        let _ = writeln!(
            losses,
            "{},{},{:e},{:e},{:e},{}",
            r.iteration,
            r.segment,
            r.loss.total,
            r.loss.data_total(),
            r.loss.pde_total(),
            r.loss.prevdata.map_or(String::new(), |p| format!("{p:e}"))
        );
    }
    io_util::write_atomic_str(&out.join("losses.csv"), &losses)?;
    if !res.report.weight_trajectory.is_empty() {
        let mut s = String::from("iteration,lambda_hat,lambda_d\n");
        for w in &res.report.weight_trajectory {
            let _ = writeln!(s, "{},{:e},{:e}", w.iteration, w.lambda_hat, w.lambda_d);
        }
        io_util::write_atomic_str(&out.join("weights.csv"), &s)?;
    }
    if !res.report.lambda_trajectory.is_empty() {
        let mut s = String::from("iteration,lambda\n");
        for (i, l) in &res.report.lambda_trajectory {
            let _ = writeln!(s, "{i},{l:e}");
        }
        io_util::write_atomic_str(&out.join("lambda.csv"), &s)?;
    }
    let last = res.report.loss_history.last().map_or(f64::NAN, |r| r.loss.total);
    Ok(format!(
        "trained {} for {} iterations in {:.1}s, final loss {last:e}; outputs in {}",
        res.report.regime,
        res.report.iterations,
        res.report.wall_clock_s,
        out.display()
    ))
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Mlp)> {
    let ck = Checkpoint::load(path)?;
    let net = Mlp::new(ck.config.clone())?;
    net.check_params(&ck.params)?;
    Ok((ck, net))
}

pub fn cmd_eval(args: &CheckpointArgs) -> Result<String> {
    let (cfg, out) = load(&args.common)?;
    let (ck, net) = load_checkpoint(&args.checkpoint)?;
    let data = cfg.load_data()?;
    if matches!(&data.test, TestSet::Samples(s) if s.is_empty()) {
        return Err(Error::config("dataset has no test split (set [data] test_csv)"));
    }
    let mut report = eval::evaluate(&net, &ck.params, &data.test, data.schema)?;
    report.meta.insert("checkpoint".into(), args.checkpoint.display().to_string());
    report.meta.insert("dataset".into(), dataset_id(&cfg));
    report.write(&out)?;
    let mut msg = String::new();
    for f in &report.fields {
        let _ = write!(msg, "{}={:.4e} ", f.field, f.arelative_l2);
    }
    Ok(format!("aRelative L2 over {} steps: {}", report.times.len(), msg.trim_end()))
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<String> {
    let (cfg, out) = load(&args.common)?;
    let axis = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::config("config has no [sweep] axis (weighting or architecture)"))?;
    let data = cfg.load_data()?;
    let rows = match &axis {
        SweepAxis::Weighting(c) => trainers::weighting_sweep(c, &cfg.run, &data, args.workers)?,
        SweepAxis::Architecture { layers, neurons } => {
            trainers::grid_search(layers, neurons, &cfg.run, &data, args.workers)?
        }
    };
    io_util::write_atomic_str(&out.join("sweep.csv"), &trainers::sweep_csv(&rows))?;
    let json = serde_json::to_string_pretty(&rows).map_err(|e| Error::config(e.to_string()))?;
    io_util::write_atomic_str(&out.join("sweep.json"), &json)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    Ok(format!("{} runs ({} failed); table in {}", rows.len(), failed, out.join("sweep.csv").display()))
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<String> {
    let (cfg, out) = load(&args.checkpoint.common)?;
    let (ck, net) = load_checkpoint(&args.checkpoint.checkpoint)?;
    let data = cfg.load_data()?;
    let mut run = cfg.run.clone();
    run.network = ck.config.clone();
    let grads = trainers::component_gradients(&run, &net, &ck.params, &data)?;
    let labelled: Vec<(&str, &[f64])> = grads.iter().map(|(l, g)| (l.as_str(), g.as_slice())).collect();
    let hists = eval::gradient_histograms(&labelled, args.bins)?;
    io_util::write_atomic_str(&out.join("histograms.csv"), &eval::histograms_csv(&hists))?;
    let mut s = String::from("component,max_abs,mean_abs,non_finite,count\n");
    for h in &hists {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{},{}",
            h.component,
            h.stats.max_abs,
            h.stats.mean_abs,
            h.non_finite,
            h.counts.iter().sum::<usize>()
        );
    }
    io_util::write_atomic_str(&out.join("histogram_stats.csv"), &s)?;
    let names: Vec<&str> = hists.iter().map(|h| h.component.as_str()).collect();
    Ok(format!("histograms for {} in {}", names.join(", "), out.display()))
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_usage() {
        1
    } else {
        2
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Messages go to stdout, diagnostics to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
