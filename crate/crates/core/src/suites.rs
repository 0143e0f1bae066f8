//! Verification procedures built from the metrics: each runs a small
//! experiment or scans a trajectory and returns the measured quantities.
//! Thresholds are applied by the caller.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Labels};
use crate::linalg::{Matrix, Rng};
use crate::losses::Loss;
use crate::metrics::{self, LayerConservation};
use crate::network::{Architecture, InitStrategy, Network};
use crate::rules::{self, Rule};
use crate::trainer::{self, Schedule, TrainConfig, TrainError, TrajectoryLog};

/// Central differences of the mean loss with respect to every weight.
pub fn finite_difference_gradients(net: &Network, x: &Matrix, labels: &Labels, loss: Loss, h: f64) -> Result<Vec<Matrix>, TrainError> {
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(net.depth());
    for l in 0..net.depth() {
        let w = net.weight(l).clone();
        let mut g = Matrix::zeros(w.rows(), w.cols());
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                let mut eval_at = |v: f64| -> Result<f64, TrainError> {
                    let mut m = w.clone();
                    m.set(r, c, v);
                    probe.set_weight(l, m)?;
                    Ok(loss.evaluate(&probe.predict(x)?, labels)?.value)
                };
                let plus = eval_at(w.get(r, c) + h)?;
                let minus = eval_at(w.get(r, c) - h)?;
                g.set(r, c, (plus - minus) / (2.0 * h));
            }
        }
        probe.set_weight(l, w)?;
        out.push(g);
    }
    Ok(out)
}

/// `max |G - G_fd| / max(|G_fd|, |G|)` over all layers, infinity norms.
pub fn gradient_relative_error(net: &Network, x: &Matrix, labels: &Labels, loss: Loss, h: f64) -> Result<f64, TrainError> {
    let trace = net.forward(x)?;
    let eval = loss.evaluate(trace.output(), labels)?;
    let grads = rules::backward_bp(&trace, net, &eval.grad)?;
    let fd = finite_difference_gradients(net, x, labels, loss, h)?;
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (g, f) in grads.iter().zip(&fd) {
        diff = diff.max(g.max_abs_diff(f).map_err(crate::network::NetworkError::from)?);
        scale = scale.max(g.max_abs()).max(f.max_abs());
    }
    Ok(if scale == 0.0 { diff } else { diff / scale })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOutcome {
    pub nets: usize,
    pub max_rel_error: f64,
    pub worst_net: usize,
}

/// Random leaky-ReLU nets with at most three weight layers, widths at most
/// eight and batches at most sixteen. Inputs are redrawn until every hidden
/// pre-activation is at least `100 h` away from the kink.
pub fn gradcheck_random(nets: usize, seed: u64, h: f64) -> Result<GradcheckOutcome, TrainError> {
    let mut rng = Rng::new(seed);
    let mut worst = (0.0, 0);
    for k in 0..nets {
        let depth = 2 + rng.below(2);
        let mut widths: Vec<usize> = (0..depth).map(|_| 1 + rng.below(8)).collect();
        let loss = if rng.below(2) == 0 { Loss::ExponentialMargin } else { Loss::CrossEntropy };
        let classes = 2 + rng.below(3);
        widths.push(if loss == Loss::ExponentialMargin { 1 } else { classes });
        let slope = 0.01 + 0.5 * rng.next_f64();
        let arch = Architecture::new(widths.clone(), slope)?;
        let net = Network::init(arch, InitStrategy::Xavier, Rule::Backprop, &mut rng)?;
        let batch = 1 + rng.below(16);
        let x = loop {
            let x = rng.gaussian(batch, widths[0], 1.0);
            if net.forward(&x)?.min_abs_hidden_pre_activation() > 100.0 * h {
                break x;
            }
        };
        let labels = match loss {
            Loss::ExponentialMargin => Labels::Binary((0..batch).map(|_| if rng.below(2) == 0 { -1.0 } else { 1.0 }).collect()),
            Loss::CrossEntropy => Labels::Class {
                labels: (0..batch).map(|_| rng.below(classes)).collect(),
                classes,
            },
        };
        let err = gradient_relative_error(&net, &x, &labels, loss, h)?;
        if err > worst.0 {
            worst = (err, k);
        }
    }
    Ok(GradcheckOutcome {
        nets,
        max_rel_error: worst.0,
        worst_net: worst.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichardsonOutcome {
    pub coarse: LayerConservation,
    pub fine: LayerConservation,
    /// `|residual_coarse| / |residual_fine|` for every neuron with a nonzero
    /// fine residual.
    pub neuron_ratios: Vec<f64>,
}

impl RichardsonOutcome {
    pub fn ratio_range(&self) -> (f64, f64) {
        let lo = self.neuron_ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.neuron_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Largest `|ratio - 1|` of the fine run over neurons with a defined ratio.
    pub fn fine_max_ratio_deviation(&self) -> Option<f64> {
        self.fine
            .records
            .iter()
            .filter_map(|r| r.ratio)
            .map(|r| (r - 1.0).abs())
            .reduce(f64::max)
    }
}

/// Runs the same initial state to the same flow time `lr · steps` with rate
/// `lr` and with rate `lr / refine` (`refine` times the steps), and compares
/// the conservation residuals of hidden layer `layer`.
pub fn conservation_richardson(net0: &Network, ds: &Dataset, loss: Loss, lr: f64, steps: u64, refine: u64, layer: usize) -> Result<RichardsonOutcome, TrainError> {
    let run = |rate: f64, n: u64| -> Result<LayerConservation, TrainError> {
        let cfg = TrainConfig {
            loss,
            lr: rate,
            schedule: Schedule::Constant,
            momentum: 0.0,
            steps: n,
            log_every: n.max(1),
            track_conservation: false,
            ..TrainConfig::default()
        };
        let (net, _) = trainer::train(net0.clone(), ds, None, &cfg)?;
        Ok(metrics::layer_conservation(&net, net0, layer)?)
    };
    let coarse = run(lr, steps)?;
    let fine = run(lr / refine as f64, steps * refine)?;
    let neuron_ratios = coarse
        .records
        .iter()
        .zip(&fine.records)
        .filter(|(_, f)| f.residual != 0.0)
        .map(|(c, f)| c.residual.abs() / f.residual.abs())
        .collect();
    Ok(RichardsonOutcome {
        coarse,
        fine,
        neuron_ratios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorScan {
    pub checked: usize,
    pub violations: usize,
    /// Smallest `cosine - floor` seen.
    pub min_margin: f64,
}

/// Every alignment record with a floor, at every logged step.
pub fn scan_alignment_floors(log: &TrajectoryLog, slack: f64) -> FloorScan {
    let mut scan = FloorScan {
        checked: 0,
        violations: 0,
        min_margin: f64::INFINITY,
    };
    for e in &log.entries {
        for a in &e.alignment {
            let Some(floor) = a.floor else { continue };
            scan.checked += 1;
            let margin = a.cosine.map(|c| c - floor).unwrap_or(f64::NEG_INFINITY);
            scan.min_margin = scan.min_margin.min(margin);
            if !a.meets_floor(slack) {
                scan.violations += 1;
            }
        }
    }
    scan
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaleScan {
    pub checked: usize,
    pub violations: usize,
    pub min_output_weight: f64,
}

/// Output weights strictly positive at every logged step.
pub fn scan_dale(log: &TrajectoryLog) -> DaleScan {
    let mut scan = DaleScan {
        checked: 0,
        violations: 0,
        min_output_weight: f64::INFINITY,
    };
    for w in log.entries.iter().filter_map(|e| e.min_output_weight) {
        scan.checked += 1;
        scan.min_output_weight = scan.min_output_weight.min(w);
        if w <= 0.0 {
            scan.violations += 1;
        }
    }
    scan
}

/// Largest reconstruction mismatch of the loss-rate factorization over the log.
pub fn max_factorization_mismatch(log: &TrajectoryLog) -> f64 {
    log.entries.iter().map(|e| metrics::factorization_mismatch(&e.global)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepOutcome {
    pub states: usize,
    pub max_rel_error: f64,
}

/// Compares the actual loss change of one step `θ ← θ - η Δ` with the
/// first-order prediction `-η ⟨∇𝓛, Δ⟩` on random states, cycling through
/// the four rules.
pub fn one_step_prediction(states: usize, eta: f64, seed: u64) -> Result<OneStepOutcome, TrainError> {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for k in 0..states {
        let rule = Rule::ALL[k % 4];
        let d = 3 + rng.below(6);
        let arch = Architecture::new(vec![d, 4 + rng.below(12), 4 + rng.below(12), 1], 0.1)?;
        let net = Network::init(arch, InitStrategy::UniformScaled, rule, &mut rng)?;
        let n = 4 + rng.below(20);
        let x = rng.gaussian(n, d, 1.0);
        let labels = Labels::Binary((0..n).map(|_| if rng.below(2) == 0 { -1.0 } else { 1.0 }).collect());
        let trace = net.forward(&x)?;
        let eval = Loss::ExponentialMargin.evaluate(trace.output(), &labels)?;
        let bundle = rules::backward_fa(&trace, &net, &eval.grad, eval.value)?;
        let predicted = -eta * rules::global_inner(&bundle).inner;
        let mut next = net.clone();
        for (l, u) in bundle.updates.iter().enumerate() {
            next.add_to_weight(l, -eta, u)?;
        }
        let after = Loss::ExponentialMargin.evaluate(&next.predict(&x)?, &labels)?.value;
        let actual = after - eval.value;
        worst = worst.max((actual - predicted).abs() / predicted.abs());
    }
    Ok(OneStepOutcome {
        states,
        max_rel_error: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_orthogonal_separable;

    #[test]
    fn gradcheck_passes_on_a_few_nets() {
        let out = gradcheck_random(5, 1, 1e-5).unwrap();
        assert!(out.max_rel_error < 1e-6, "{out:?}");
    }

    #[test]
    fn gradcheck_detects_a_wrong_gradient() {
        // Finite differences of a different loss disagree with the exact gradient.
        let mut rng = Rng::new(2);
        let net = Network::init(Architecture::new(vec![3, 4, 1], 0.1).unwrap(), InitStrategy::Xavier, Rule::Backprop, &mut rng).unwrap();
        let x = rng.gaussian(5, 3, 1.0);
        let labels = Labels::Binary(vec![1.0, -1.0, 1.0, 1.0, -1.0]);
        let trace = net.forward(&x).unwrap();
        let eval = Loss::ExponentialMargin.evaluate(trace.output(), &labels).unwrap();
        let g = rules::backward_bp(&trace, &net, &eval.grad.scale(2.0)).unwrap();
        let fd = finite_difference_gradients(&net, &x, &labels, Loss::ExponentialMargin, 1e-5).unwrap();
        assert!(g[0].max_abs_diff(&fd[0]).unwrap() > 1e-3 * fd[0].max_abs());
    }

    #[test]
    fn richardson_on_a_tiny_problem() {
        let mut rng = Rng::new(3);
        let ds = gen_orthogonal_separable(10, 4, 0.5, &mut rng).unwrap();
        let net = Network::init(Architecture::two_layer(4, 6, 1, 0.1).unwrap(), InitStrategy::UniformScaled, Rule::Fa, &mut rng).unwrap();
        let out = conservation_richardson(&net, &ds, Loss::ExponentialMargin, 1e-2, 50, 10, 0).unwrap();
        let (lo, hi) = out.ratio_range();
        assert!(lo > 5.0 && hi < 20.0, "{lo} {hi}");
    }

    #[test]
    fn one_step_prediction_is_first_order() {
        let out = one_step_prediction(8, 1e-6, 4).unwrap();
        assert!(out.max_rel_error < 1e-2, "{out:?}");
    }
}
