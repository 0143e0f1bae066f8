use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use alignflow::checkpoint;
use alignflow::trainer::{self, StopReason, TrainError, TrainState, TrajectoryLog};
use alignflow::Rule;

use crate::config::Config;
use crate::error::CliError;
use crate::experiment::{self, Job, Source};

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const RUNS_FILE: &str = "runs.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct RunSummary {
    pub width: usize,
    pub rule: Rule,
    pub seed: u64,
    pub steps: u64,
    pub stop: Option<StopReason>,
    pub aborted: bool,
    pub momentum: f64,
    pub train_samples: usize,
    pub flipped_labels: usize,
    pub loss_train: f64,
    pub acc_train: f64,
    pub loss_test: Option<f64>,
    pub acc_test: Option<f64>,
}

fn write_log(dir: &Path, log: &TrajectoryLog) -> Result<(), CliError> {
    let f = File::create(dir.join(METRICS_FILE))?;
    trainer::write_metrics_csv(log, BufWriter::new(f))?;
    Ok(())
}

fn summarize(job: &Job, log: &TrajectoryLog, aborted: bool, train_n: usize, flipped: usize) -> RunSummary {
    let last = log.last();
    RunSummary {
        width: job.width,
        rule: job.rule,
        seed: job.seed,
        steps: last.map(|e| e.step).unwrap_or(0),
        stop: (!aborted).then_some(log.stop),
        aborted,
        momentum: log.momentum,
        train_samples: train_n,
        flipped_labels: flipped,
        loss_train: last.map(|e| e.loss_train).unwrap_or(f64::NAN),
        acc_train: last.map(|e| e.acc_train).unwrap_or(f64::NAN),
        loss_test: last.and_then(|e| e.loss_test),
        acc_test: last.and_then(|e| e.acc_test),
    }
}

fn run_job(cfg: &Config, source: &Source, job: &Job, out: &Path, resume: Option<&Path>) -> Result<RunSummary, CliError> {
    let tc = experiment::train_config(cfg)?;
    let tc = alignflow::TrainConfig { seed: job.seed, ..tc };
    let (train, test) = source.datasets(cfg, job.seed)?;
    let state = match resume {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            checkpoint::load_checkpoint(f).map_err(|e| CliError::Config(format!("`resume`: {e}")))?
        }
        None => TrainState::fresh(experiment::build_network(cfg, job, train.dim(), tc.loss, &train)?),
    };
    let dir = out.join(job.dir_name());
    fs::create_dir_all(&dir)?;
    let flipped = train.meta().flipped.len();
    match trainer::train_from(state, &train, test.as_ref(), &tc) {
        Ok((state, log)) => {
            write_log(&dir, &log)?;
            checkpoint::save_checkpoint(&state, BufWriter::new(File::create(dir.join(CHECKPOINT_FILE))?)).map_err(|e| CliError::Io(e.to_string()))?;
            let summary = summarize(job, &log, false, train.len(), flipped);
            fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
            Ok(summary)
        }
        Err(TrainError::NonFinite { step, log }) => {
            write_log(&dir, &log)?;
            let summary = summarize(job, &log, true, train.len(), flipped);
            fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
            Err(CliError::Numerical(format!("{}: non-finite weights at step {step}", job.dir_name())))
        }
        Err(e) => Err(e.into()),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

pub fn write_runs(path: &Path, runs: &[RunSummary]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["width", "rule", "seed", "steps", "aborted", "loss_train", "acc_train", "loss_test", "acc_test"])?;
    for r in runs {
        w.write_record([
            r.width.to_string(),
            r.rule.to_string(),
            r.seed.to_string(),
            r.steps.to_string(),
            r.aborted.to_string(),
            format!("{:.16e}", r.loss_train),
            format!("{:.16e}", r.acc_train),
            fmt_opt(r.loss_test),
            fmt_opt(r.acc_test),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cfg: &Config, out: &Path, workers: usize) -> Result<Vec<RunSummary>, CliError> {
    let jobs = experiment::jobs(cfg)?;
    let resume = cfg.raw("resume").filter(|s| !s.is_empty()).map(Path::new);
    if resume.is_some() && jobs.len() != 1 {
        return Err(CliError::Config(format!("`resume` needs exactly one run, config describes {}", jobs.len())));
    }
    experiment::train_config(cfg)?;
    let source = Source::open(cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(RESOLVED_CONFIG), cfg.render())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let results: Vec<Result<RunSummary, CliError>> = pool.install(|| jobs.par_iter().map(|job| run_job(cfg, &source, job, out, resume)).collect());

    let mut runs = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(s) => runs.push(s),
            Err(e) => {
                eprintln!("{e}");
                // Numerical aborts outrank other failures for the exit code.
                let replace = match (&first_err, &e) {
                    (None, _) => true,
                    (Some(CliError::Numerical(_)), _) => false,
                    (_, CliError::Numerical(_)) => true,
                    _ => false,
                };
                if replace {
                    first_err = Some(e);
                }
            }
        }
    }
    write_runs(&out.join(RUNS_FILE), &runs)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(runs),
    }
}
