//! Full-batch explicit-Euler training with logging at a fixed cadence.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::linalg::{Matrix, SparseRows};
use crate::losses::{self, Loss, LossError};
use crate::metrics::{self, AlignmentRecord, MetricsError};
use crate::network::{InitStrategy, Network, NetworkError};
use crate::rules::{self, GlobalInner, Rule, RulesError};

/// Training stops once the loss falls below this.
pub const CONVERGED_LOSS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite value at step {step}")]
    NonFinite { step: u64, log: Box<TrajectoryLog> },
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Constant,
    /// `η_k = η₀ · factor^⌊k / every⌋`.
    StepDecay { factor: f64, every: u64 },
}

impl Schedule {
    pub fn lr_at(&self, lr0: f64, step: u64) -> f64 {
        match *self {
            Schedule::Constant => lr0,
            Schedule::StepDecay { factor, every } => lr0 * factor.powi((step / every) as i32),
        }
    }

    fn is_boundary(&self, step: u64) -> bool {
        matches!(*self, Schedule::StepDecay { every, .. } if step > 0 && step % every == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaturationPolicy {
    /// Stop at the first step whose loss hit the exponent clamp.
    Stop,
    /// Keep going; affected entries are flagged.
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub lr: f64,
    pub schedule: Schedule,
    /// Heavy-ball coefficient: `v ← μ v + Δ`, `W ← W - η v`.
    pub momentum: f64,
    /// Total step count, counted from step 0 even when resuming.
    pub steps: u64,
    pub log_every: u64,
    pub seed: u64,
    pub saturation: SaturationPolicy,
    /// How the network was initialized; only affects reported floors.
    pub init: InitStrategy,
    /// Compute per-layer conservation summaries at logged steps.
    pub track_conservation: bool,
    /// Extra weight snapshots every this many steps.
    pub snapshot_every: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: Loss::ExponentialMargin,
            lr: 1e-4,
            schedule: Schedule::Constant,
            momentum: 0.0,
            steps: 1000,
            log_every: 10,
            seed: 0,
            saturation: SaturationPolicy::Flag,
            init: InitStrategy::UniformScaled,
            track_conservation: true,
            snapshot_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(TrainError::Config(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.log_every == 0 {
            return Err(TrainError::Config("log_every must be at least 1".into()));
        }
        if let Schedule::StepDecay { factor, every } = self.schedule {
            if every == 0 || !(factor > 0.0) || !factor.is_finite() {
                return Err(TrainError::Config(format!("bad step-decay schedule: factor {factor}, every {every}")));
            }
        }
        if self.snapshot_every == Some(0) {
            return Err(TrainError::Config("snapshot_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationSummary {
    pub layer: usize,
    pub mean_abs_residual: f64,
    pub mean_ratio: Option<f64>,
    pub mean_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    /// Flow time `Σ η_k` over the steps taken so far.
    pub time: f64,
    pub lr: f64,
    pub loss_train: f64,
    pub acc_train: f64,
    pub loss_test: Option<f64>,
    pub acc_test: Option<f64>,
    pub saturated: bool,
    pub global: GlobalInner,
    pub alignment: Vec<AlignmentRecord>,
    pub conservation: Vec<ConservationSummary>,
    /// Smallest output weight, for scalar-output networks.
    pub min_output_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub label: String,
    pub network: Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Completed,
    Converged,
    Saturated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub rule: Rule,
    pub loss: Loss,
    /// Non-zero momentum means the run is not an Euler discretization.
    pub momentum: f64,
    pub entries: Vec<LogEntry>,
    pub snapshots: Vec<Snapshot>,
    pub stop: StopReason,
}

impl TrajectoryLog {
    pub fn last(&self) -> Option<&LogEntry> {
        self.entries.last()
    }

    pub fn uses_momentum(&self) -> bool {
        self.momentum != 0.0
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub network: Network,
    /// Reference point for conservation measurements.
    pub initial: Network,
    pub velocity: Option<Vec<Matrix>>,
    pub step: u64,
    pub time: f64,
}

impl TrainState {
    pub fn fresh(network: Network) -> Self {
        TrainState {
            initial: network.clone(),
            network,
            velocity: None,
            step: 0,
            time: 0.0,
        }
    }
}

/// Loss and accuracy of `net` on `ds`; forward pass only.
pub fn evaluate(net: &Network, ds: &Dataset, loss: Loss) -> Result<(f64, f64)> {
    let out = net.predict(ds.inputs())?;
    let eval = loss.evaluate(&out, ds.labels())?;
    Ok((eval.value, losses::accuracy(&out, ds.labels())))
}

fn check_compatible(net: &Network, ds: &Dataset, loss: Loss) -> Result<()> {
    let arch = net.architecture();
    if arch.input_dim() != ds.dim() {
        return Err(TrainError::Shape(format!("network expects {} inputs, dataset has {}", arch.input_dim(), ds.dim())));
    }
    let want = loss.output_dim(ds.labels());
    if arch.output_dim() != want {
        return Err(TrainError::Shape(format!("{loss} loss on these labels needs {want} outputs, network has {}", arch.output_dim())));
    }
    Ok(())
}

const SPARSE_BELOW: f64 = 0.5;

/// Trains a fresh network for `cfg.steps` steps.
pub fn train(net: Network, ds: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<(Network, TrajectoryLog)> {
    let (state, log) = train_from(TrainState::fresh(net), ds, test, cfg)?;
    Ok((state.network, log))
}

/// Continues from `state` until step `cfg.steps`. The first log entry is at
/// `state.step`.
pub fn train_from(mut state: TrainState, ds: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<(TrainState, TrajectoryLog)> {
    cfg.validate()?;
    check_compatible(&state.network, ds, cfg.loss)?;
    if let Some(t) = test {
        check_compatible(&state.network, t, cfg.loss)?;
    }
    let mut log = TrajectoryLog {
        rule: state.network.rule(),
        loss: cfg.loss,
        momentum: cfg.momentum,
        entries: Vec::new(),
        snapshots: vec![Snapshot {
            step: state.step,
            label: if state.step == 0 { "initial".into() } else { "resume".into() },
            network: state.network.clone(),
        }],
        stop: StopReason::Completed,
    };
    let depth = state.network.depth();
    let start = state.step;
    // Image inputs are mostly zeros; compressing them once saves rescanning
    // the dense batch twice per step.
    let sparse = Some(SparseRows::from_dense(ds.inputs())).filter(|xs| xs.density() < SPARSE_BELOW);

    loop {
        let k = state.step;
        let net = &state.network;
        let trace = net.forward_with(ds.inputs(), sparse.as_ref())?;
        let eval = cfg.loss.evaluate(trace.output(), ds.labels())?;
        if !eval.value.is_finite() {
            return Err(TrainError::NonFinite { step: k, log: Box::new(log) });
        }
        let stop = if k >= cfg.steps {
            Some(StopReason::Completed)
        } else if eval.value < CONVERGED_LOSS {
            Some(StopReason::Converged)
        } else if eval.saturated && cfg.saturation == SaturationPolicy::Stop {
            Some(StopReason::Saturated)
        } else {
            None
        };
        let logged = k % cfg.log_every == 0 || k == start || stop.is_some();

        let updates = if logged {
            let bundle = rules::backward_fa(&trace, net, &eval.grad, eval.value)?;
            let global = rules::global_inner(&bundle);
            let (loss_test, acc_test) = match test {
                Some(t) => {
                    let (l, a) = evaluate(net, t, cfg.loss)?;
                    (Some(l), Some(a))
                }
                None => (None, None),
            };
            let conservation = if cfg.track_conservation {
                (0..net.architecture().hidden_layers())
                    .map(|i| {
                        metrics::layer_conservation(net, &state.initial, i).map(|c| ConservationSummary {
                            layer: i,
                            mean_abs_residual: c.mean_abs_residual,
                            mean_ratio: c.mean_ratio,
                            mean_deviation: c.mean_deviation,
                        })
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?
            } else {
                Vec::new()
            };
            let out_w = net.weight(depth - 1);
            log.entries.push(LogEntry {
                step: k,
                time: state.time,
                lr: cfg.schedule.lr_at(cfg.lr, k),
                loss_train: eval.value,
                acc_train: losses::accuracy(trace.output(), ds.labels()),
                loss_test,
                acc_test,
                saturated: eval.saturated,
                global,
                alignment: metrics::all_alignments(net, cfg.init),
                conservation,
                min_output_weight: (out_w.cols() == 1).then(|| out_w.as_slice().iter().copied().fold(f64::INFINITY, f64::min)),
            });
            bundle.updates
        } else {
            rules::rule_updates(&trace, net, &eval.grad)?
        };
        drop(trace);

        if let Some(reason) = stop {
            log.stop = reason;
            break;
        }

        let lr = cfg.schedule.lr_at(cfg.lr, k);
        let direction = if cfg.momentum > 0.0 {
            let v = state.velocity.get_or_insert_with(|| updates.iter().map(|u| Matrix::zeros(u.rows(), u.cols())).collect());
            for (v, u) in v.iter_mut().zip(&updates) {
                *v = v.scale(cfg.momentum);
                v.add_scaled(1.0, u).map_err(NetworkError::from)?;
            }
            v.clone()
        } else {
            updates
        };
        for (l, d) in direction.iter().enumerate() {
            state.network.add_to_weight(l, -lr, d)?;
        }
        state.network.refresh_sign_feedback();
        state.step += 1;
        state.time += lr;

        if !state.network.is_finite() {
            return Err(TrainError::NonFinite {
                step: state.step,
                log: Box::new(log),
            });
        }
        let boundary = cfg.schedule.is_boundary(state.step);
        let periodic = cfg.snapshot_every.is_some_and(|e| state.step % e == 0);
        if (boundary || periodic) && state.step < cfg.steps {
            log.snapshots.push(Snapshot {
                step: state.step,
                label: if boundary { "schedule".into() } else { "periodic".into() },
                network: state.network.clone(),
            });
        }
    }
    log.snapshots.push(Snapshot {
        step: state.step,
        label: "final".into(),
        network: state.network.clone(),
    });
    Ok((state, log))
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}

/// Column names for a log whose entries carry `align` alignment records and
/// `cons` conservation summaries.
pub fn metrics_csv_header(log: &TrajectoryLog) -> Vec<String> {
    let mut cols: Vec<String> = ["step", "time", "loss_train", "loss_test", "acc_train", "acc_test"].iter().map(|s| s.to_string()).collect();
    if let Some(e) = log.entries.first() {
        cols.extend(e.alignment.iter().map(|a| format!("cos_align_{}", a.layer)));
        cols.extend(e.conservation.iter().map(|c| format!("cons_residual_{}_mean", c.layer)));
        cols.extend(e.conservation.iter().map(|c| format!("cons_ratio_{}_mean", c.layer)));
        cols.extend(e.conservation.iter().map(|c| format!("cons_dev_{}_mean", c.layer)));
    }
    cols.extend(["inner_global", "grad_norm", "fa_norm", "cos_omega"].iter().map(|s| s.to_string()));
    cols
}

/// One row per logged step. Floats carry 17 significant digits; undefined
/// values are empty cells.
pub fn write_metrics_csv(log: &TrajectoryLog, mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{}", metrics_csv_header(log).join(","))?;
    for e in &log.entries {
        let mut row = vec![
            e.step.to_string(),
            fmt17(e.time),
            fmt17(e.loss_train),
            fmt_opt(e.loss_test),
            fmt17(e.acc_train),
            fmt_opt(e.acc_test),
        ];
        row.extend(e.alignment.iter().map(|a| fmt_opt(a.cosine)));
        row.extend(e.conservation.iter().map(|c| fmt17(c.mean_abs_residual)));
        row.extend(e.conservation.iter().map(|c| fmt_opt(c.mean_ratio)));
        row.extend(e.conservation.iter().map(|c| fmt_opt(c.mean_deviation)));
        row.extend([e.global.inner, e.global.grad_norm, e.global.fa_norm, e.global.cos_omega].map(fmt17));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_orthogonal_separable, DatasetKind, DatasetMeta, Labels};
    use crate::linalg::Rng;
    use crate::network::Architecture;

    fn setup(rule: Rule, seed: u64) -> (Network, Dataset) {
        let mut rng = Rng::new(seed);
        let ds = gen_orthogonal_separable(12, 5, 0.5, &mut rng).unwrap();
        let arch = Architecture::two_layer(5, 8, 1, 0.1).unwrap();
        let net = Network::init(arch, InitStrategy::UniformScaled, rule, &mut rng).unwrap();
        (net, ds)
    }

    fn cfg(steps: u64, lr: f64) -> TrainConfig {
        TrainConfig {
            lr,
            steps,
            log_every: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_rate_leaves_weights_alone() {
        let (net, ds) = setup(Rule::Fa, 1);
        let (out, log) = train(net.clone(), &ds, None, &cfg(20, 0.0)).unwrap();
        assert_eq!(out.weights(), net.weights());
        let first = log.entries[0].loss_train;
        assert!(log.entries.iter().all(|e| e.loss_train == first));
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        for rule in Rule::ALL {
            let (net, ds) = setup(rule, 2);
            let a = train(net.clone(), &ds, Some(&ds), &cfg(30, 0.05)).unwrap();
            let b = train(net, &ds, Some(&ds), &cfg(30, 0.05)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn log_cadence_and_steps() {
        let (net, ds) = setup(Rule::SignFa, 3);
        let (_, log) = train(net, &ds, None, &TrainConfig { log_every: 7, ..cfg(30, 0.01) }).unwrap();
        let steps: Vec<u64> = log.entries.iter().map(|e| e.step).collect();
        assert_eq!(steps, vec![0, 7, 14, 21, 28, 30]);
        assert!(log.entries.windows(2).all(|w| w[0].step < w[1].step));
        assert!((log.last().unwrap().time - 0.3).abs() < 1e-12);
        assert_eq!(log.snapshots.first().unwrap().label, "initial");
        assert_eq!(log.snapshots.last().unwrap().step, 30);
    }

    #[test]
    fn bp_single_hidden_unit_descends_monotonically() {
        let inputs = Matrix::from_rows(&[&[1.0, 0.5], &[-0.5, -1.0]]);
        let ds = Dataset::new(inputs, Labels::Binary(vec![1.0, -1.0]), DatasetMeta::new(DatasetKind::Other, "pair")).unwrap();
        let arch = Architecture::two_layer(2, 1, 1, 0.1).unwrap();
        let net = Network::from_parts(arch, Rule::Backprop, 0, vec![Matrix::column(&[0.3, 0.2]), Matrix::filled(1, 1, 0.5)], vec![None, None]).unwrap();
        let (_, log) = train(net, &ds, None, &TrainConfig { log_every: 1, ..cfg(200, 1e-2) }).unwrap();
        assert!(log.entries.windows(2).all(|w| w[1].loss_train < w[0].loss_train));
    }

    #[test]
    fn step_decay_schedule() {
        let s = Schedule::StepDecay { factor: 0.1, every: 1000 };
        assert_eq!(s.lr_at(0.05, 0), 0.05);
        assert_eq!(s.lr_at(0.05, 999), 0.05);
        assert_eq!(s.lr_at(0.05, 1000), 0.05 * 0.1);
        assert_eq!(s.lr_at(0.05, 2500), 0.05 * 0.1f64.powi(2));
        assert_eq!(Schedule::Constant.lr_at(0.3, 12345), 0.3);
    }

    #[test]
    fn schedule_boundaries_are_snapshotted() {
        let (net, ds) = setup(Rule::Fa, 4);
        let c = TrainConfig {
            schedule: Schedule::StepDecay { factor: 0.5, every: 10 },
            ..cfg(25, 0.01)
        };
        let (_, log) = train(net, &ds, None, &c).unwrap();
        let steps: Vec<u64> = log.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 25]);
        assert!((log.last().unwrap().time - (10.0 * 0.01 + 10.0 * 0.005 + 5.0 * 0.0025)).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        for bad in [
            TrainConfig { lr: -1.0, ..cfg(1, 0.1) },
            TrainConfig { momentum: 1.0, ..cfg(1, 0.1) },
            TrainConfig { log_every: 0, ..cfg(1, 0.1) },
            TrainConfig {
                schedule: Schedule::StepDecay { factor: 0.1, every: 0 },
                ..cfg(1, 0.1)
            },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn divergence_aborts_with_partial_log() {
        let (net, ds) = setup(Rule::Backprop, 5);
        let c = TrainConfig {
            loss: Loss::CrossEntropy,
            ..cfg(50, 1e300)
        };
        let arch = Architecture::two_layer(5, 8, 2, 0.1).unwrap();
        let net2 = Network::init(arch, InitStrategy::UniformScaled, Rule::Backprop, &mut Rng::new(1)).unwrap();
        drop(net);
        match train(net2, &ds, None, &c) {
            Err(TrainError::NonFinite { step, log }) => {
                assert!(step >= 1);
                assert_eq!(log.entries[0].step, 0);
                assert!(log.entries.iter().all(|e| e.loss_train.is_finite()));
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (net, _) = setup(Rule::Fa, 6);
        let ds = gen_orthogonal_separable(4, 3, 0.5, &mut Rng::new(0)).unwrap();
        assert!(matches!(train(net, &ds, None, &cfg(1, 0.1)), Err(TrainError::Shape(_))));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (net, ds) = setup(Rule::Fa, 7);
        let c = TrainConfig { momentum: 0.5, ..cfg(40, 0.05) };
        let (full, _) = train_from(TrainState::fresh(net.clone()), &ds, None, &c).unwrap();
        let (half, _) = train_from(TrainState::fresh(net), &ds, None, &TrainConfig { steps: 17, ..c.clone() }).unwrap();
        let (resumed, log) = train_from(half, &ds, None, &c).unwrap();
        assert_eq!(resumed.network.weights(), full.network.weights());
        assert_eq!(resumed.time, full.time);
        assert_eq!(log.entries[0].step, 17);
    }

    #[test]
    fn evaluate_is_pure_and_perfect_margin_gives_full_accuracy() {
        let (net, ds) = setup(Rule::Fa, 8);
        assert_eq!(evaluate(&net, &ds, Loss::ExponentialMargin).unwrap(), evaluate(&net, &ds, Loss::ExponentialMargin).unwrap());
        // A single linear direction through the mean margin separates this data.
        let Labels::Binary(y) = ds.labels() else { panic!() };
        let mut u = vec![0.0; ds.dim()];
        for (i, yi) in y.iter().enumerate() {
            for (k, v) in ds.inputs().row(i).iter().enumerate() {
                u[k] += yi * v;
            }
        }
        let arch = Architecture::two_layer(ds.dim(), 1, 1, 0.1).unwrap();
        let w1 = Matrix::column(&u);
        let probe = Network::from_parts(arch, Rule::Backprop, 0, vec![w1, Matrix::filled(1, 1, 1.0)], vec![None, None]).unwrap();
        // Leaky units keep the sign of the pre-activation, so sign(f) = sign(⟨u, x⟩).
        assert_eq!(evaluate(&probe, &ds, Loss::ExponentialMargin).unwrap().1, 1.0);
    }

    #[test]
    fn conservation_tracked_from_initial_state() {
        let (net, ds) = setup(Rule::AdaFa, 9);
        let (_, log) = train(net, &ds, None, &cfg(10, 1e-3)).unwrap();
        let first = &log.entries[0].conservation[0];
        assert_eq!(first.mean_abs_residual, 0.0);
        assert_eq!(first.mean_ratio, Some(1.0));
    }

    #[test]
    fn dominance_and_envelope_on_a_log() {
        let (net, ds) = setup(Rule::Backprop, 10);
        let (_, log) = train(net, &ds, None, &TrainConfig { log_every: 1, ..cfg(200, 1e-3) }).unwrap();
        let dom = metrics::dominance_trace(&log.entries, 2.0, 0.0).unwrap();
        assert!(dom.alpha_hat > 0.0);
        assert!(dom.violating_steps.is_empty());
        let env = metrics::convergence_envelope(&log.entries, dom.alpha_hat, 2.0, 0.0, 0.05).unwrap();
        assert_eq!(env.violations, 0);
        let inflated = metrics::convergence_envelope(&log.entries, 10.0 * dom.alpha_hat, 2.0, 0.0, 0.05).unwrap();
        assert!(inflated.violations > 0);

        let mut broken = log.entries.clone();
        broken[3].global.inner = -1.0;
        let dom = metrics::dominance_trace(&broken, 2.0, 0.0).unwrap();
        assert!(dom.alpha_hat <= 0.0);
        assert_eq!(dom.violating_steps, vec![3]);
        assert_eq!(metrics::dominance_trace(&[], 2.0, 0.0), Err(MetricsError::EmptyLog));
    }

    #[test]
    fn csv_has_fixed_columns_and_round_trips_floats() {
        let (net, ds) = setup(Rule::Fa, 11);
        let (_, log) = train(net, &ds, Some(&ds), &cfg(10, 1e-2)).unwrap();
        let mut out = Vec::new();
        write_metrics_csv(&log, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,time,loss_train,loss_test,acc_train,acc_test,cos_align_1,cons_residual_0_mean,cons_ratio_0_mean,cons_dev_0_mean,inner_global,grad_norm,fa_norm,cos_omega"
        );
        let last: Vec<&str> = lines.last().unwrap().split(',').collect();
        assert_eq!(last[0], "10");
        assert_eq!(last[2].parse::<f64>().unwrap(), log.last().unwrap().loss_train);
    }
}
