//! The `verify` command: trains the configured trajectories and runs the
//! selected checks over them, writing a versioned JSON report.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use alignflow::metrics;
use alignflow::network::Network;
use alignflow::suites;
use alignflow::trainer::{self, TrajectoryLog};
use alignflow::{Dataset, Rule};

use crate::config::Config;
use crate::error::CliError;
use crate::experiment::{self, Job, Source};
use crate::train::RESOLVED_CONFIG;

pub const REPORT_FILE: &str = "verify.json";
pub const SCHEMA: &str = "alignflow-verify-report";
pub const SCHEMA_VERSION: u32 = 1;

pub const VERIFIERS: &[&str] = &["gradcheck", "conservation", "sign-floor", "dale", "dominance", "envelope", "eq1-bookkeeping"];

const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOL: f64 = 1e-6;
const FLOOR_SLACK: f64 = 1e-12;
const FACTOR_TOL: f64 = 1e-10;
const ONE_STEP_STATES: usize = 20;
const ONE_STEP_ETA: f64 = 1e-6;
const ONE_STEP_TOL: f64 = 0.01;
const ADAFA_RATIO_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Nothing in the configured runs falls under this check.
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub run: String,
    pub step: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifierResult {
    pub name: String,
    pub status: Status,
    pub measured: Option<f64>,
    pub threshold: Option<f64>,
    /// How `measured` is compared with `threshold`.
    pub comparison: &'static str,
    pub checked: usize,
    pub first_violation: Option<Violation>,
    pub detail: String,
}

impl VerifierResult {
    fn new(name: &str, comparison: &'static str) -> Self {
        VerifierResult {
            name: name.to_string(),
            status: Status::Skipped,
            measured: None,
            threshold: None,
            comparison,
            checked: 0,
            first_violation: None,
            detail: String::new(),
        }
    }

    fn settle(mut self, ok: bool) -> Self {
        self.status = if self.checked == 0 {
            Status::Skipped
        } else if ok {
            Status::Pass
        } else {
            Status::Fail
        };
        self
    }

    pub fn line(&self) -> String {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        let num = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into());
        let mut s = format!("{tag} {} measured={} {} threshold={} checked={}", self.name, num(self.measured), self.comparison, num(self.threshold), self.checked);
        if let Some(v) = &self.first_violation {
            s.push_str(&format!(" first_violation={}@step{}", v.run, v.step));
        }
        if !self.detail.is_empty() {
            s.push_str(&format!(" ({})", self.detail));
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub version: u32,
    pub seed: u64,
    pub passed: bool,
    pub verifiers: Vec<VerifierResult>,
}

struct Run {
    job: Job,
    train: Dataset,
    initial: Network,
    log: TrajectoryLog,
}

fn train_runs(cfg: &Config, workers: usize) -> Result<Vec<Run>, CliError> {
    let tc = experiment::train_config(cfg)?;
    let source = Source::open(cfg)?;
    let jobs = experiment::jobs(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let (train, test) = source.datasets(cfg, job.seed)?;
                let net = experiment::build_network(cfg, job, train.dim(), tc.loss, &train)?;
                let tc = alignflow::TrainConfig { seed: job.seed, ..tc.clone() };
                let (_, log) = trainer::train(net.clone(), &train, test.as_ref(), &tc)?;
                Ok(Run { job: *job, train, initial: net, log })
            })
            .collect()
    })
}

fn gradcheck(cfg: &Config) -> Result<VerifierResult, CliError> {
    let mut r = VerifierResult::new("gradcheck", "<");
    let nets: usize = cfg.get("gradcheck_nets")?;
    let out = suites::gradcheck_random(nets, cfg.get("seed")?, GRADCHECK_STEP)?;
    r.checked = out.nets;
    r.measured = Some(out.max_rel_error);
    r.threshold = Some(GRADCHECK_TOL);
    r.detail = format!("worst net {}", out.worst_net);
    Ok(r.settle(out.max_rel_error < GRADCHECK_TOL))
}

fn conservation(cfg: &Config, runs: &[Run]) -> Result<VerifierResult, CliError> {
    let mut r = VerifierResult::new("conservation", "in");
    let refine: u64 = cfg.get("refine")?;
    if refine < 2 {
        return Err(CliError::Config("`refine` must be at least 2".into()));
    }
    let tc = experiment::train_config(cfg)?;
    let (lo_ok, hi_ok) = (refine as f64 / 2.0, refine as f64 * 2.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut worst_adafa: Option<f64> = None;
    let mut ok = true;
    for run in runs.iter().filter(|r| matches!(r.job.rule, Rule::Fa | Rule::AdaFa)) {
        for layer in 0..run.initial.architecture().hidden_layers() {
            let out = suites::conservation_richardson(&run.initial, &run.train, tc.loss, tc.lr, tc.steps, refine, layer)?;
            let (a, b) = out.ratio_range();
            if out.neuron_ratios.is_empty() {
                continue;
            }
            r.checked += out.neuron_ratios.len();
            lo = lo.min(a);
            hi = hi.max(b);
            ok &= a >= lo_ok && b <= hi_ok;
            if run.job.rule == Rule::AdaFa {
                if let Some(d) = out.fine_max_ratio_deviation() {
                    worst_adafa = Some(worst_adafa.map_or(d, |w: f64| w.max(d)));
                    ok &= d <= ADAFA_RATIO_TOL;
                }
            }
        }
    }
    r.measured = (r.checked > 0).then_some(lo);
    r.threshold = Some(lo_ok);
    r.detail = format!(
        "coarse/fine residual ratio range [{lo:.3}, {hi:.3}] required within [{lo_ok}, {hi_ok}]; adaFA fine ratio max |r-1| = {} (limit {ADAFA_RATIO_TOL})",
        worst_adafa.map(|d| format!("{d:.3e}")).unwrap_or_else(|| "-".into())
    );
    Ok(r.settle(ok))
}

fn first_step<F: Fn(&trainer::LogEntry) -> bool>(run: &Run, bad: F) -> Option<Violation> {
    run.log.entries.iter().find(|e| bad(e)).map(|e| Violation {
        run: run.job.dir_name(),
        step: e.step,
    })
}

fn sign_floor(runs: &[Run]) -> VerifierResult {
    let mut r = VerifierResult::new("sign-floor", ">=");
    let mut min_margin = f64::INFINITY;
    let mut min_cos = f64::INFINITY;
    let mut floor_at_min = None;
    let mut violations = 0;
    for run in runs {
        let scan = suites::scan_alignment_floors(&run.log, FLOOR_SLACK);
        if scan.checked == 0 {
            continue;
        }
        r.checked += scan.checked;
        violations += scan.violations;
        for e in &run.log.entries {
            for a in e.alignment.iter().filter(|a| a.floor.is_some()) {
                let c = a.cosine.unwrap_or(f64::NEG_INFINITY);
                if c - a.floor.unwrap() < min_margin {
                    min_margin = c - a.floor.unwrap();
                    min_cos = c;
                    floor_at_min = a.floor;
                }
            }
        }
        if r.first_violation.is_none() && scan.violations > 0 {
            r.first_violation = first_step(run, |e| e.alignment.iter().any(|a| !a.meets_floor(FLOOR_SLACK)));
        }
    }
    r.measured = (r.checked > 0).then_some(min_cos);
    r.threshold = floor_at_min;
    r.detail = format!("min cosine minus 1/sqrt(n) = {min_margin:.3e}; {violations} violations");
    r.settle(violations == 0)
}

fn dale(runs: &[Run]) -> VerifierResult {
    let mut r = VerifierResult::new("dale", ">");
    let mut min_w = f64::INFINITY;
    let mut violations = 0;
    for run in runs.iter().filter(|r| r.job.rule == Rule::Fa && r.log.entries.iter().any(|e| e.alignment.iter().any(|a| a.floor.is_some()))) {
        let scan = suites::scan_dale(&run.log);
        if scan.checked == 0 {
            continue;
        }
        r.checked += scan.checked;
        violations += scan.violations;
        min_w = min_w.min(scan.min_output_weight);
        if r.first_violation.is_none() && scan.violations > 0 {
            r.first_violation = first_step(run, |e| e.min_output_weight.is_some_and(|w| w <= 0.0));
        }
    }
    r.measured = (r.checked > 0).then_some(min_w);
    r.threshold = Some(0.0);
    r.detail = format!("smallest output weight over FA aligned-output runs; {violations} violations");
    r.settle(violations == 0)
}

fn dominance_runs(runs: &[Run]) -> impl Iterator<Item = &Run> {
    runs.iter().filter(|r| matches!(r.job.rule, Rule::Fa | Rule::SignFa))
}

fn dominance(cfg: &Config, runs: &[Run]) -> Result<VerifierResult, CliError> {
    let mut r = VerifierResult::new("dominance", ">");
    let beta: f64 = cfg.get("beta")?;
    let floor: f64 = cfg.get("loss_floor")?;
    let mut alpha = f64::INFINITY;
    for run in dominance_runs(runs) {
        let tr = metrics::dominance_trace(&run.log.entries, beta, floor)?;
        r.checked += tr.records.len() - tr.saturated_steps;
        alpha = alpha.min(tr.alpha_hat);
        if r.first_violation.is_none() {
            if let Some(&step) = tr.violating_steps.first() {
                r.first_violation = Some(Violation { run: run.job.dir_name(), step });
            }
        }
    }
    r.measured = (r.checked > 0).then_some(alpha);
    r.threshold = Some(0.0);
    r.detail = format!("smallest alpha_hat over FA and sign-FA runs at beta = {beta}");
    Ok(r.settle(alpha > 0.0 && alpha.is_finite()))
}

fn envelope(cfg: &Config, runs: &[Run]) -> Result<VerifierResult, CliError> {
    let mut r = VerifierResult::new("envelope", "==");
    let beta: f64 = cfg.get("beta")?;
    let floor: f64 = cfg.get("loss_floor")?;
    let tol: f64 = cfg.get("envelope_tolerance")?;
    let scale: f64 = cfg.get("alpha_scale")?;
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for run in dominance_runs(runs) {
        let tr = metrics::dominance_trace(&run.log.entries, beta, floor)?;
        if !(tr.alpha_hat > 0.0 && tr.alpha_hat.is_finite()) {
            skipped += 1;
            continue;
        }
        let env = metrics::convergence_envelope(&run.log.entries, scale * tr.alpha_hat, beta, floor, tol)?;
        r.checked += env.points.len();
        violations += env.violations;
        worst = worst.max(env.max_violation);
        if r.first_violation.is_none() {
            if let Some(step) = env.first_violation {
                r.first_violation = Some(Violation { run: run.job.dir_name(), step });
            }
        }
    }
    r.measured = (r.checked > 0).then_some(violations as f64);
    r.threshold = Some(0.0);
    r.detail = format!("alpha = {scale} x alpha_hat, tolerance {tol}; worst excess {worst:.3e}; {skipped} runs without positive alpha_hat");
    Ok(r.settle(violations == 0))
}

fn factorization(cfg: &Config, runs: &[Run]) -> Result<VerifierResult, CliError> {
    let mut r = VerifierResult::new("eq1-bookkeeping", "<");
    let mut worst: f64 = 0.0;
    for run in runs.iter().filter(|r| r.job.rule != Rule::Backprop) {
        r.checked += run.log.entries.len();
        let m = suites::max_factorization_mismatch(&run.log);
        if m >= FACTOR_TOL && r.first_violation.is_none() {
            r.first_violation = first_step(run, |e| metrics::factorization_mismatch(&e.global) >= FACTOR_TOL);
        }
        worst = worst.max(m);
    }
    let one = suites::one_step_prediction(ONE_STEP_STATES, ONE_STEP_ETA, cfg.get("seed")?)?;
    r.checked += one.states;
    r.measured = Some(worst);
    r.threshold = Some(FACTOR_TOL);
    r.detail = format!("one-step prediction max relative error {:.3e} (limit {ONE_STEP_TOL}) over {} states", one.max_rel_error, one.states);
    Ok(r.settle(worst < FACTOR_TOL && one.max_rel_error < ONE_STEP_TOL))
}

pub fn run(cfg: &Config, out: &Path, workers: usize) -> Result<Report, CliError> {
    let selected: Vec<String> = cfg.list("verifiers")?;
    if let Some(bad) = selected.iter().find(|v| !VERIFIERS.contains(&v.as_str())) {
        return Err(CliError::Config(format!("unknown verifier `{bad}` in `verifiers` (known: {})", VERIFIERS.join(", "))));
    }
    let momentum: f64 = cfg.get("momentum")?;
    if momentum != 0.0 {
        return Err(CliError::Config(format!("`momentum` must be 0 for verification, got {momentum}")));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join(RESOLVED_CONFIG), cfg.render())?;

    let needs_runs = selected.iter().any(|v| v != "gradcheck");
    let runs = if needs_runs { train_runs(cfg, workers)? } else { Vec::new() };

    let mut results = Vec::new();
    for v in VERIFIERS.iter().filter(|v| selected.iter().any(|s| s == *v)) {
        let res = match *v {
            "gradcheck" => gradcheck(cfg)?,
            "conservation" => conservation(cfg, &runs)?,
            "sign-floor" => sign_floor(&runs),
            "dale" => dale(&runs),
            "dominance" => dominance(cfg, &runs)?,
            "envelope" => envelope(cfg, &runs)?,
            _ => factorization(cfg, &runs)?,
        };
        println!("{}", res.line());
        results.push(res);
    }
    let report = Report {
        schema: SCHEMA,
        version: SCHEMA_VERSION,
        seed: cfg.get("seed")?,
        passed: results.iter().all(|r| r.status != Status::Fail),
        verifiers: results,
    };
    fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
