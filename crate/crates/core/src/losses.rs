//! Training objectives and their output gradients `∂𝓛/∂f`.
//!
//! Gradients returned here already include the `1/n` batch average, so the
//! backward passes can use them directly as `δ_L`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Labels;
use crate::linalg::Matrix;

/// Largest exponent fed to `exp`; beyond it the loss is flagged saturated.
pub const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("label {0} is not ±1")]
    NotSigned(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{loss} needs {expected} output column(s), got {got}")]
    OutputWidth {
        loss: Loss,
        expected: usize,
        got: usize,
    },
    #[error("{outputs} outputs for {labels} labels")]
    BatchMismatch { outputs: usize, labels: usize },
    #[error("exponential margin loss needs binary ±1 labels")]
    NeedsBinary,
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    /// `ℓ(f, y) = exp(-y f)` on a scalar output; infimum `0`.
    ExponentialMargin,
    /// Mean softmax cross-entropy over class logits.
    CrossEntropy,
}

impl std::fmt::Display for Loss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Loss::ExponentialMargin => "exp",
            Loss::CrossEntropy => "ce",
        })
    }
}

impl std::str::FromStr for Loss {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exp" | "exp-margin" | "exponential" => Ok(Loss::ExponentialMargin),
            "ce" | "cross-entropy" | "xent" => Ok(Loss::CrossEntropy),
            other => Err(format!("unknown loss `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpMargin {
    pub value: f64,
    pub grad: f64,
    pub saturated: bool,
}

pub fn exp_margin(f: f64, y: f64) -> Result<ExpMargin> {
    if y != 1.0 && y != -1.0 {
        return Err(LossError::NotSigned(y));
    }
    let mut exponent = -y * f;
    let saturated = exponent > EXP_CLAMP;
    if saturated {
        exponent = EXP_CLAMP;
    }
    let value = exponent.exp();
    Ok(ExpMargin {
        value,
        grad: -y * value,
        saturated,
    })
}

/// Mean cross-entropy of `logits` (batch × classes) against class indices,
/// and its gradient `(softmax - onehot) / n`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(LossError::BatchMismatch {
            outputs: logits.rows(),
            labels: labels.len(),
        });
    }
    let classes = logits.cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(LossError::LabelOutOfRange { label, classes });
    }
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(logits.rows(), classes);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_norm = max + sum.ln();
        total += log_norm - row[label];
        let g = grad.row_mut(i);
        for (c, &z) in row.iter().enumerate() {
            let p = (z - log_norm).exp();
            g[c] = (p - if c == label { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((total / n, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// `∂𝓛/∂f`, shaped like the outputs.
    pub grad: Matrix,
    pub saturated: bool,
}

impl Loss {
    /// The infimum `𝓛*` assumed by the convergence bounds.
    pub fn floor(&self) -> f64 {
        0.0
    }

    pub fn output_dim(&self, labels: &Labels) -> usize {
        match (self, labels) {
            (Loss::ExponentialMargin, _) => 1,
            (Loss::CrossEntropy, Labels::Binary(_)) => 2,
            (Loss::CrossEntropy, Labels::Class { classes, .. }) => *classes,
        }
    }

    pub fn evaluate(&self, outputs: &Matrix, labels: &Labels) -> Result<LossEval> {
        if outputs.rows() != labels.len() {
            return Err(LossError::BatchMismatch {
                outputs: outputs.rows(),
                labels: labels.len(),
            });
        }
        let expected = self.output_dim(labels);
        if outputs.cols() != expected {
            return Err(LossError::OutputWidth {
                loss: *self,
                expected,
                got: outputs.cols(),
            });
        }
        match self {
            Loss::ExponentialMargin => {
                let Labels::Binary(ys) = labels else {
                    return Err(LossError::NeedsBinary);
                };
                let n = ys.len() as f64;
                let mut grad = Matrix::zeros(ys.len(), 1);
                let mut total = 0.0;
                let mut saturated = false;
                for (i, &y) in ys.iter().enumerate() {
                    let e = exp_margin(outputs.get(i, 0), y)?;
                    total += e.value;
                    saturated |= e.saturated;
                    grad.set(i, 0, e.grad / n);
                }
                Ok(LossEval {
                    value: total / n,
                    grad,
                    saturated,
                })
            }
            Loss::CrossEntropy => {
                let classes = labels.class_indices();
                let (value, grad) = cross_entropy(outputs, &classes)?;
                Ok(LossEval {
                    value,
                    grad,
                    saturated: false,
                })
            }
        }
    }
}

/// Fraction of rows classified correctly: `sign(f)` against `±1` labels for a
/// scalar output, argmax otherwise.
pub fn accuracy(outputs: &Matrix, labels: &Labels) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = match labels {
        Labels::Binary(ys) if outputs.cols() == 1 => ys
            .iter()
            .enumerate()
            .filter(|&(i, &y)| (outputs.get(i, 0) > 0.0) == (y > 0.0))
            .count(),
        _ => labels
            .class_indices()
            .iter()
            .enumerate()
            .filter(|&(i, &c)| argmax(outputs.row(i)) == c)
            .count(),
    };
    correct as f64 / labels.len() as f64
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
