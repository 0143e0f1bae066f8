//! Backward passes for backpropagation and the feedback-alignment family.
//!
//! All rules share one recursion over the cached forward trace,
//!
//! ```text
//! δ_L = ∂𝓛/∂f,   δ_l = (δ_{l+1} M_{l+1}ᵀ) ∘ φ'(h_l),   update_l = a_{l-1}ᵀ δ_l
//! ```
//!
//! and differ only in the matrix `M` sent backwards: `W` for backprop, the
//! stored feedback `B` for FA and adaFA, and `sign(W)` for sign-FA. The
//! output layer never depends on `M`, so its update equals the true gradient
//! under every rule.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::network::{ForwardTrace, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    Backprop,
    /// Fixed random feedback.
    Fa,
    /// Feedback copied from the forward weights at initialization, then fixed.
    AdaFa,
    /// Feedback equal to `sign(W)` at every step.
    SignFa,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::Backprop, Rule::Fa, Rule::AdaFa, Rule::SignFa];

    pub fn uses_feedback(&self) -> bool {
        *self != Rule::Backprop
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Rule::Backprop => "bp",
            Rule::Fa => "fa",
            Rule::AdaFa => "adafa",
            Rule::SignFa => "signfa",
        })
    }
}

impl std::str::FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "bp" | "backprop" | "gd" => Ok(Rule::Backprop),
            "fa" => Ok(Rule::Fa),
            "adafa" => Ok(Rule::AdaFa),
            "signfa" | "usf" => Ok(Rule::SignFa),
            other => Err(format!("unknown rule `{other}`")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RulesError {
    #[error("forward trace is from revision {trace}, network is at revision {network}")]
    StaleTrace { trace: u64, network: u64 },
    #[error("loss gradient has shape {got:?}, outputs have shape {expected:?}")]
    LossGradShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("rule {rule} has no feedback matrix for layer {layer}")]
    MissingFeedback { rule: Rule, layer: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, RulesError>;

/// Rule updates and true gradients evaluated on the same forward trace.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBundle {
    pub rule: Rule,
    /// Direction the rule descends along, one per layer (`W ← W - η Δ`).
    pub updates: Vec<Matrix>,
    pub gradients: Vec<Matrix>,
    pub loss: f64,
}

fn check_inputs(trace: &ForwardTrace<'_>, net: &Network, loss_grad: &Matrix) -> Result<()> {
    if trace.revision() != net.revision() {
        return Err(RulesError::StaleTrace {
            trace: trace.revision(),
            network: net.revision(),
        });
    }
    if loss_grad.shape() != trace.output().shape() {
        return Err(RulesError::LossGradShape {
            expected: trace.output().shape(),
            got: loss_grad.shape(),
        });
    }
    Ok(())
}

fn propagate<'n>(
    trace: &ForwardTrace<'_>,
    depth: usize,
    loss_grad: &Matrix,
    mut backward_matrix: impl FnMut(usize) -> Result<Cow<'n, Matrix>>,
) -> Result<Vec<Matrix>> {
    let mut grads: Vec<Matrix> = Vec::with_capacity(depth);
    let mut delta = loss_grad.clone();
    for l in (0..depth).rev() {
        grads.push(trace.layer_input_t_matmul(l, &delta)?);
        if l > 0 {
            let m = backward_matrix(l)?;
            delta = delta.matmul_t(&m)?.hadamard(trace.gate(l - 1))?;
        }
    }
    grads.reverse();
    Ok(grads)
}

/// Exact gradient of the empirical risk for every layer.
pub fn backward_bp(trace: &ForwardTrace<'_>, net: &Network, loss_grad: &Matrix) -> Result<Vec<Matrix>> {
    check_inputs(trace, net, loss_grad)?;
    propagate(trace, net.depth(), loss_grad, |l| Ok(Cow::Borrowed(net.weight(l))))
}

/// The network's own rule updates only, skipping the true-gradient pass.
pub fn rule_updates(trace: &ForwardTrace<'_>, net: &Network, loss_grad: &Matrix) -> Result<Vec<Matrix>> {
    check_inputs(trace, net, loss_grad)?;
    let rule = net.rule();
    propagate(trace, net.depth(), loss_grad, |l| match rule {
        Rule::Backprop => Ok(Cow::Borrowed(net.weight(l))),
        _ => net
            .effective_feedback(l)
            .ok_or(RulesError::MissingFeedback { rule, layer: l }),
    })
}

/// Rule updates plus the true gradients from the same trace.
///
/// For backprop the updates are copies of the gradients. For sign-FA the
/// feedback is recomputed from the current weights, never read from a
/// possibly stale slot.
pub fn backward_fa(
    trace: &ForwardTrace<'_>,
    net: &Network,
    loss_grad: &Matrix,
    loss: f64,
) -> Result<UpdateBundle> {
    let gradients = backward_bp(trace, net, loss_grad)?;
    let mut updates = if net.rule() == Rule::Backprop {
        gradients.clone()
    } else {
        rule_updates(trace, net, loss_grad)?
    };
    // Same numbers either way; the copy makes the identity bit-exact by construction.
    let last = gradients.len() - 1;
    updates[last] = gradients[last].clone();
    Ok(UpdateBundle {
        rule: net.rule(),
        updates,
        gradients,
        loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalInner {
    /// `Σ_l ⟨G_l, Δ_l⟩`.
    pub inner: f64,
    pub grad_norm: f64,
    pub fa_norm: f64,
    pub cos_omega: f64,
}

/// Whole-parameter inner product of gradient and update and the cosine of
/// the angle between them; `d𝓛/dt = -inner` along the flow.
pub fn global_inner(bundle: &UpdateBundle) -> GlobalInner {
    let mut inner = 0.0;
    let mut g2 = 0.0;
    let mut d2 = 0.0;
    for (g, d) in bundle.gradients.iter().zip(&bundle.updates) {
        inner += crate::linalg::dot(g.as_slice(), d.as_slice());
        g2 += crate::linalg::dot(g.as_slice(), g.as_slice());
        d2 += crate::linalg::dot(d.as_slice(), d.as_slice());
    }
    let grad_norm = g2.sqrt();
    let fa_norm = d2.sqrt();
    let cos_omega = if grad_norm < 1e-300 || fa_norm < 1e-300 {
        0.0
    } else {
        inner / (grad_norm * fa_norm)
    };
    GlobalInner {
        inner,
        grad_norm,
        fa_norm,
        cos_omega,
    }
}
