//! Instruments read off network snapshots and trajectory logs.
//!
//! Layer indices follow the weight list: `W_l` maps layer `l` activations to
//! layer `l + 1`. Hidden neuron `j` of hidden layer `i` has incoming weights
//! `W_i[:, j]` and outgoing weights `W_{i+1}[j, :]`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Matrix};
use crate::network::{InitStrategy, Network};
use crate::rules::{GlobalInner, Rule};
use crate::trainer::LogEntry;

/// Below this the normalized conservation ratio is reported as undefined.
pub const RATIO_DENOMINATOR_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("networks differ in architecture or rule")]
    Incompatible,
    #[error("hidden layer {layer} neuron {neuron} out of range")]
    NeuronIndex { layer: usize, neuron: usize },
    #[error("layer {0} has no feedback weights")]
    NoFeedback(usize),
    #[error("dale check needs a scalar-output network, got {0} outputs")]
    NotScalarOutput(usize),
    #[error("empty trajectory log")]
    EmptyLog,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// The matrix the rule sends errors through for layer `l` (`W_l` itself for
/// backprop).
fn backward_matrix(net: &Network, layer: usize) -> Option<Cow<'_, Matrix>> {
    match net.rule() {
        Rule::Backprop => Some(Cow::Borrowed(net.weight(layer))),
        _ => net.effective_feedback(layer),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationRecord {
    pub layer: usize,
    pub neuron: usize,
    /// Change of `⟨W_{i+1}[j,:], B_{i+1}[j,:]⟩` since the reference state.
    pub lhs: f64,
    /// Change of `½‖W_i[:,j]‖²` since the reference state.
    pub rhs: f64,
    pub residual: f64,
    /// `(⟨w,b⟩ - ½‖v‖²)_t / (⟨w,b⟩ - ½‖v‖²)_0`, `None` when the denominator
    /// is below [`RATIO_DENOMINATOR_EPS`].
    pub ratio: Option<f64>,
}

fn neuron_terms(net: &Network, layer: usize, neuron: usize) -> Result<(f64, f64)> {
    let out = net.weight(layer + 1);
    let b = backward_matrix(net, layer + 1).ok_or(MetricsError::NoFeedback(layer + 1))?;
    let inner = dot(out.row(neuron), b.row(neuron));
    let w_in = net.weight(layer);
    let half_sq: f64 = 0.5 * (0..w_in.rows()).map(|r| w_in.get(r, neuron).powi(2)).sum::<f64>();
    Ok((inner, half_sq))
}

fn check_pair(net_t: &Network, net_0: &Network) -> Result<()> {
    if net_t.architecture() != net_0.architecture() || net_t.rule() != net_0.rule() {
        return Err(MetricsError::Incompatible);
    }
    Ok(())
}

fn check_neuron(net: &Network, layer: usize, neuron: usize) -> Result<()> {
    let arch = net.architecture();
    if layer >= arch.hidden_layers() || neuron >= arch.widths()[layer + 1] {
        return Err(MetricsError::NeuronIndex { layer, neuron });
    }
    Ok(())
}

pub fn conservation_residual(net_t: &Network, net_0: &Network, layer: usize, neuron: usize) -> Result<ConservationRecord> {
    check_pair(net_t, net_0)?;
    check_neuron(net_t, layer, neuron)?;
    let (inner_t, sq_t) = neuron_terms(net_t, layer, neuron)?;
    let (inner_0, sq_0) = neuron_terms(net_0, layer, neuron)?;
    let lhs = inner_t - inner_0;
    let rhs = sq_t - sq_0;
    let denom = inner_0 - sq_0;
    let ratio = (denom.abs() >= RATIO_DENOMINATOR_EPS).then(|| (inner_t - sq_t) / denom);
    Ok(ConservationRecord {
        layer,
        neuron,
        lhs,
        rhs,
        residual: lhs - rhs,
        ratio,
    })
}

/// Per-layer aggregate of [`conservation_residual`] over all neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConservation {
    pub layer: usize,
    pub records: Vec<ConservationRecord>,
    pub mean_abs_residual: f64,
    pub max_abs_residual: f64,
    /// Mean over neurons with a defined ratio.
    pub mean_ratio: Option<f64>,
    /// Mean `|ratio - 1|` over neurons with a defined ratio.
    pub mean_deviation: Option<f64>,
    pub undefined_ratios: usize,
}

pub fn layer_conservation(net_t: &Network, net_0: &Network, layer: usize) -> Result<LayerConservation> {
    check_pair(net_t, net_0)?;
    if layer >= net_t.architecture().hidden_layers() {
        return Err(MetricsError::NeuronIndex { layer, neuron: 0 });
    }
    let width = net_t.architecture().widths()[layer + 1];
    let records = (0..width)
        .map(|j| conservation_residual(net_t, net_0, layer, j))
        .collect::<Result<Vec<_>>>()?;
    let abs: Vec<f64> = records.iter().map(|r| r.residual.abs()).collect();
    let ratios: Vec<f64> = records.iter().filter_map(|r| r.ratio).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let devs: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
    Ok(LayerConservation {
        layer,
        mean_abs_residual: mean(&abs).unwrap_or(0.0),
        max_abs_residual: abs.iter().copied().fold(0.0, f64::max),
        mean_ratio: mean(&ratios),
        mean_deviation: mean(&devs),
        undefined_ratios: records.len() - ratios.len(),
        records,
    })
}

/// Backprop counterpart of the conservation law: the change of
/// `½‖W_{i+1}[j,:]‖² - ½‖W_i[:,j]‖²`, which vanishes under gradient flow.
pub fn balance_residual(net_t: &Network, net_0: &Network, layer: usize, neuron: usize) -> Result<f64> {
    check_pair(net_t, net_0)?;
    check_neuron(net_t, layer, neuron)?;
    let terms = |net: &Network| {
        let out = net.weight(layer + 1).row(neuron);
        let w_in = net.weight(layer);
        let sq_in: f64 = (0..w_in.rows()).map(|r| w_in.get(r, neuron).powi(2)).sum();
        0.5 * dot(out, out) - 0.5 * sq_in
    };
    Ok(terms(net_t) - terms(net_0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub layer: usize,
    /// `None` when either norm vanishes.
    pub cosine: Option<f64>,
    pub n_params: usize,
    pub floor: Option<f64>,
}

impl AlignmentRecord {
    pub fn meets_floor(&self, slack: f64) -> bool {
        match (self.cosine, self.floor) {
            (Some(c), Some(f)) => c >= f - slack,
            (None, Some(_)) => false,
            _ => true,
        }
    }
}

/// Cosine between forward and feedback weights of layer `l ≥ 1`, with the
/// guaranteed floor `1/√n_params` for sign-FA layers and for the FA output
/// layer of an aligned-output initialization.
pub fn layer_alignment(net: &Network, layer: usize, init: InitStrategy) -> Result<AlignmentRecord> {
    if layer == 0 || layer >= net.depth() {
        return Err(MetricsError::NoFeedback(layer));
    }
    let w = net.weight(layer);
    let b = backward_matrix(net, layer).ok_or(MetricsError::NoFeedback(layer))?;
    let norms = w.frobenius_norm() * b.frobenius_norm();
    let cosine = (norms > 0.0).then(|| (dot(w.as_slice(), b.as_slice()) / norms).clamp(-1.0, 1.0));
    let n_params = w.len();
    let guaranteed = match net.rule() {
        Rule::SignFa => true,
        Rule::Fa => init == InitStrategy::AlignedOutput && layer == net.depth() - 1,
        _ => false,
    };
    Ok(AlignmentRecord {
        layer,
        cosine,
        n_params,
        floor: guaranteed.then(|| 1.0 / (n_params as f64).sqrt()),
    })
}

pub fn all_alignments(net: &Network, init: InitStrategy) -> Vec<AlignmentRecord> {
    (1..net.depth())
        .filter_map(|l| layer_alignment(net, l, init).ok())
        .collect()
}

/// Empirical `(c, T_c)`: the smallest cosine observed at or after `burn_in`,
/// and the first logged time at or after it.
pub fn alignment_constant(times: &[f64], cosines: &[f64], burn_in: f64) -> Option<(f64, f64)> {
    let mut out: Option<(f64, f64)> = None;
    for (&t, &c) in times.iter().zip(cosines) {
        if t >= burn_in {
            out = Some(match out {
                None => (c, t),
                Some((m, tc)) => (m.min(c), tc),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaleReport {
    pub all_positive: bool,
    pub min_weight: f64,
    pub non_positive: usize,
}

/// Whether every output weight of a scalar-output network is strictly
/// positive.
pub fn dale_check(net: &Network) -> Result<DaleReport> {
    let w = net.weight(net.depth() - 1);
    if w.cols() != 1 {
        return Err(MetricsError::NotScalarOutput(w.cols()));
    }
    let min_weight = w.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let non_positive = w.as_slice().iter().filter(|&&v| v <= 0.0).count();
    Ok(DaleReport {
        all_positive: non_positive == 0,
        min_weight,
        non_positive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceRecord {
    pub step: u64,
    pub time: f64,
    pub inner: f64,
    pub gap: f64,
    pub beta: f64,
    /// `inner / gap^β`; `None` when the gap is zero.
    pub implied_alpha: Option<f64>,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceTrace {
    pub records: Vec<DominanceRecord>,
    /// Minimum implied α over non-saturated steps with a positive gap.
    pub alpha_hat: f64,
    /// Steps where the implied α is not positive.
    pub violating_steps: Vec<u64>,
    pub saturated_steps: usize,
}

pub fn dominance_trace(log: &[LogEntry], beta: f64, loss_floor: f64) -> Result<DominanceTrace> {
    if log.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    if !(beta > 0.0) {
        return Err(MetricsError::InvalidParameter(format!("β must be positive, got {beta}")));
    }
    let mut records = Vec::with_capacity(log.len());
    let mut alpha_hat = f64::INFINITY;
    let mut violating_steps = Vec::new();
    let mut saturated_steps = 0;
    for e in log {
        let gap = (e.loss_train - loss_floor).max(0.0);
        let implied_alpha = (gap > 0.0).then(|| e.global.inner / gap.powf(beta));
        if e.saturated {
            saturated_steps += 1;
        } else if let Some(a) = implied_alpha {
            alpha_hat = alpha_hat.min(a);
            if a <= 0.0 {
                violating_steps.push(e.step);
            }
        }
        records.push(DominanceRecord {
            step: e.step,
            time: e.time,
            inner: e.global.inner,
            gap,
            beta,
            implied_alpha,
            saturated: e.saturated,
        });
    }
    Ok(DominanceTrace {
        records,
        alpha_hat,
        violating_steps,
        saturated_steps,
    })
}

/// Upper bound on the loss at flow time `t` under `(α, β)`-dominance with
/// `𝓛* = 0`.
pub fn envelope_bound(loss0: f64, alpha: f64, beta: f64, t: f64) -> f64 {
    if beta == 1.0 {
        loss0 * (-alpha * t).exp()
    } else {
        // Integrating d𝓛/dt ≤ -α 𝓛^β from 𝓛₀.
        let k = beta - 1.0;
        (loss0.powf(-k) + k * alpha * t).powf(-1.0 / k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub step: u64,
    pub time: f64,
    pub loss: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub alpha: f64,
    pub beta: f64,
    pub tolerance: f64,
    pub points: Vec<EnvelopePoint>,
    pub violations: usize,
    pub first_violation: Option<u64>,
    /// Largest `loss / bound - 1` over the trajectory.
    pub max_violation: f64,
}

/// Compares logged losses (gap above `loss_floor`) with the envelope started
/// from the first entry. A step violates when `loss > bound · (1 + tol)`.
pub fn convergence_envelope(log: &[LogEntry], alpha: f64, beta: f64, loss_floor: f64, tolerance: f64) -> Result<EnvelopeReport> {
    let first = log.first().ok_or(MetricsError::EmptyLog)?;
    if !(alpha > 0.0) || !(beta >= 1.0) {
        return Err(MetricsError::InvalidParameter(format!("need α > 0 and β ≥ 1, got α={alpha}, β={beta}")));
    }
    let loss0 = first.loss_train - loss_floor;
    let t0 = first.time;
    let mut points = Vec::with_capacity(log.len());
    let mut violations = 0;
    let mut first_violation = None;
    let mut max_violation = f64::NEG_INFINITY;
    for e in log {
        let loss = e.loss_train - loss_floor;
        let bound = envelope_bound(loss0, alpha, beta, e.time - t0);
        let excess = loss / bound - 1.0;
        max_violation = max_violation.max(excess);
        if loss > bound * (1.0 + tolerance) {
            violations += 1;
            first_violation.get_or_insert(e.step);
        }
        points.push(EnvelopePoint {
            step: e.step,
            time: e.time,
            loss,
            bound,
        });
    }
    Ok(EnvelopeReport {
        alpha,
        beta,
        tolerance,
        points,
        violations,
        first_violation,
        max_violation,
    })
}

/// Relative mismatch between `cos ω · ‖∇𝓛‖ · ‖∇̃𝓛‖` and the inner product.
pub fn factorization_mismatch(g: &GlobalInner) -> f64 {
    let recon = g.cos_omega * g.grad_norm * g.fa_norm;
    let scale = g.inner.abs();
    if scale == 0.0 {
        recon.abs()
    } else {
        (recon - g.inner).abs() / scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenignRow {
    pub width: usize,
    pub rule: Rule,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenignSummary {
    pub rows: Vec<BenignRow>,
    pub min_test_accuracy: f64,
    /// Lowest train accuracy among runs at the largest width.
    pub train_accuracy_at_max_width: f64,
}

/// Rows sorted by width then rule, plus the two headline numbers.
pub fn benign_overfit_report(mut rows: Vec<BenignRow>) -> BenignSummary {
    rows.sort_by(|a, b| a.width.cmp(&b.width).then(a.rule.cmp(&b.rule)));
    let max_width = rows.iter().map(|r| r.width).max().unwrap_or(0);
    BenignSummary {
        min_test_accuracy: rows.iter().map(|r| r.test_accuracy).fold(f64::INFINITY, f64::min),
        train_accuracy_at_max_width: rows
            .iter()
            .filter(|r| r.width == max_width)
            .map(|r| r.train_accuracy)
            .fold(f64::INFINITY, f64::min),
        rows,
    }
}
