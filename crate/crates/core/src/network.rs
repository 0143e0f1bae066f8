//! Bias-free feedforward leaky-ReLU networks.
//!
//! Layers use the row-batch convention `h_l = a_{l-1} W_l`, `a_l = φ(h_l)`,
//! with a linear output `f = h_L`. Layer indices in this module are
//! zero-based: `weights[l]` maps width `widths[l]` to `widths[l + 1]`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix, Rng, SparseRows};
use crate::rules::Rule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("aligned-output initialization needs a scalar output, got {0} outputs")]
    AlignedOutputNeedsScalar(usize),
    #[error("input has {got} columns, network expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("layer {layer} out of range for a {depth}-layer network")]
    LayerIndex { layer: usize, depth: usize },
    #[error("layer {layer}: expected shape {expected:?}, got {got:?}")]
    LayerShape {
        layer: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("rule {rule} keeps no feedback matrix for layer {layer}")]
    NoFeedback { rule: Rule, layer: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[inline]
pub fn leaky_relu(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

/// Derivative with the subgradient `φ'(0) = slope`, so gates are never zero.
#[inline]
pub fn leaky_relu_prime(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        slope
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArchitectureRepr")]
pub struct Architecture {
    widths: Vec<usize>,
    leaky_slope: f64,
}

#[derive(Deserialize)]
struct ArchitectureRepr {
    widths: Vec<usize>,
    leaky_slope: f64,
}

impl TryFrom<ArchitectureRepr> for Architecture {
    type Error = NetworkError;

    fn try_from(r: ArchitectureRepr) -> Result<Self> {
        Architecture::new(r.widths, r.leaky_slope)
    }
}

impl Architecture {
    /// `widths` is `[d, m_1, ..., m_{L-1}, out]`.
    pub fn new(widths: Vec<usize>, leaky_slope: f64) -> Result<Self> {
        if widths.len() < 3 {
            return Err(NetworkError::InvalidArchitecture(format!(
                "need at least two layers, got widths {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(NetworkError::InvalidArchitecture(format!(
                "zero width in {widths:?}"
            )));
        }
        if !(leaky_slope > 0.0 && leaky_slope < 1.0) {
            return Err(NetworkError::InvalidArchitecture(format!(
                "leaky slope {leaky_slope} outside (0, 1)"
            )));
        }
        Ok(Architecture {
            widths,
            leaky_slope,
        })
    }

    pub fn two_layer(input: usize, hidden: usize, output: usize, leaky_slope: f64) -> Result<Self> {
        Self::new(vec![input, hidden, output], leaky_slope)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_shape(&self, layer: usize) -> (usize, usize) {
        (self.widths[layer], self.widths[layer + 1])
    }

    pub fn param_count(&self, layer: usize) -> usize {
        let (r, c) = self.layer_shape(layer);
        r * c
    }

    /// Number of hidden layers (`L - 1`).
    pub fn hidden_layers(&self) -> usize {
        self.depth() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitStrategy {
    /// `U[-1/√m, 1/√m)` where `m` is the hidden width a layer touches.
    UniformScaled,
    /// Scalar output only: output weights and output feedback all ones,
    /// incoming columns of the last hidden layer scaled to norm at most one.
    AlignedOutput,
    Xavier,
}

impl std::str::FromStr for InitStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "uniform-scaled" => Ok(InitStrategy::UniformScaled),
            "aligned" | "aligned-output" => Ok(InitStrategy::AlignedOutput),
            "xavier" => Ok(InitStrategy::Xavier),
            other => Err(format!("unknown init strategy `{other}`")),
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitStrategy::UniformScaled => "uniform",
            InitStrategy::AlignedOutput => "aligned",
            InitStrategy::Xavier => "xavier",
        })
    }
}

/// Forward weights, feedback weights and the rule that trains them.
///
/// `feedback[l]` is present for `l >= 1` whenever the rule uses feedback;
/// `feedback[0]` is always `None` because no error is sent below the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    rule: Rule,
    seed: u64,
    weights: Vec<Matrix>,
    feedback: Vec<Option<Matrix>>,
    revision: u64,
}

fn uniform_scale(arch: &Architecture, layer: usize) -> f64 {
    let depth = arch.depth();
    // Hidden width on the output side, except for the output layer which
    // uses the hidden width feeding it.
    let m = if layer + 1 < depth {
        arch.widths[layer + 1]
    } else {
        arch.widths[layer]
    };
    1.0 / (m as f64).sqrt()
}

fn sample_layer(
    arch: &Architecture,
    strategy: InitStrategy,
    layer: usize,
    rng: &mut Rng,
) -> Result<Matrix> {
    let (r, c) = arch.layer_shape(layer);
    let bound = match strategy {
        InitStrategy::Xavier => (6.0 / (r + c) as f64).sqrt(),
        InitStrategy::UniformScaled | InitStrategy::AlignedOutput => uniform_scale(arch, layer),
    };
    Ok(rng.uniform(r, c, -bound, bound)?)
}

impl Network {
    pub fn init(arch: Architecture, strategy: InitStrategy, rule: Rule, rng: &mut Rng) -> Result<Self> {
        let depth = arch.depth();
        if strategy == InitStrategy::AlignedOutput && arch.output_dim() != 1 {
            return Err(NetworkError::AlignedOutputNeedsScalar(arch.output_dim()));
        }
        let seed = rng.seed();
        let mut weights = Vec::with_capacity(depth);
        for l in 0..depth {
            weights.push(sample_layer(&arch, strategy, l, rng)?);
        }
        if strategy == InitStrategy::AlignedOutput {
            weights[depth - 1] = Matrix::ones(arch.widths[depth - 1], 1);
            let last_hidden = &mut weights[depth - 2];
            for j in 0..last_hidden.cols() {
                let norm = last_hidden.col(j).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1.0 {
                    for i in 0..last_hidden.rows() {
                        let v = last_hidden.get(i, j) / norm;
                        last_hidden.set(i, j, v);
                    }
                }
            }
        }

        let mut feedback: Vec<Option<Matrix>> = vec![None; depth];
        match rule {
            Rule::Backprop => {}
            Rule::Fa => {
                for l in 1..depth {
                    feedback[l] = Some(sample_layer(&arch, strategy, l, rng)?);
                }
                if strategy == InitStrategy::AlignedOutput {
                    feedback[depth - 1] = Some(Matrix::ones(arch.widths[depth - 1], 1));
                }
            }
            Rule::AdaFa => {
                for l in 1..depth {
                    feedback[l] = Some(weights[l].clone());
                }
            }
            Rule::SignFa => {
                for l in 1..depth {
                    feedback[l] = Some(weights[l].sign_of());
                }
            }
        }
        Ok(Network {
            arch,
            rule,
            seed,
            weights,
            feedback,
            revision: 0,
        })
    }

    /// Reassembles a network from stored parts, validating every shape.
    pub fn from_parts(
        arch: Architecture,
        rule: Rule,
        seed: u64,
        weights: Vec<Matrix>,
        feedback: Vec<Option<Matrix>>,
    ) -> Result<Self> {
        let depth = arch.depth();
        if weights.len() != depth || feedback.len() != depth {
            return Err(NetworkError::InvalidArchitecture(format!(
                "expected {depth} weight and feedback slots, got {} and {}",
                weights.len(),
                feedback.len()
            )));
        }
        for (l, w) in weights.iter().enumerate() {
            check_shape(&arch, l, w)?;
            if !w.is_finite() {
                return Err(LinalgError::NonFinite {
                    index: l,
                    value: f64::NAN,
                }
                .into());
            }
        }
        for (l, b) in feedback.iter().enumerate() {
            match b {
                Some(b) => check_shape(&arch, l, b)?,
                None if l >= 1 && rule != Rule::Backprop => {
                    return Err(NetworkError::NoFeedback { rule, layer: l })
                }
                None => {}
            }
        }
        Ok(Network {
            arch,
            rule,
            seed,
            weights,
            feedback,
            revision: 0,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> usize {
        self.arch.depth()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weight(&self, layer: usize) -> &Matrix {
        &self.weights[layer]
    }

    pub fn feedback_slots(&self) -> &[Option<Matrix>] {
        &self.feedback
    }

    pub fn feedback(&self, layer: usize) -> Option<&Matrix> {
        self.feedback.get(layer).and_then(|b| b.as_ref())
    }

    /// The feedback matrix the rule would use for `layer` right now. Sign-FA
    /// recomputes `sign(W)` so the result is never stale, and it is defined
    /// for every layer including the first.
    pub fn effective_feedback(&self, layer: usize) -> Option<Cow<'_, Matrix>> {
        match self.rule {
            Rule::Backprop => None,
            Rule::SignFa => Some(Cow::Owned(self.weights[layer].sign_of())),
            Rule::Fa | Rule::AdaFa => self.feedback(layer).map(Cow::Borrowed),
        }
    }

    /// Changes on every mutation; forward traces record it.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.depth() {
            return Err(NetworkError::LayerIndex {
                layer,
                depth: self.depth(),
            });
        }
        Ok(())
    }

    pub fn set_weight(&mut self, layer: usize, w: Matrix) -> Result<()> {
        self.check_layer(layer)?;
        check_shape(&self.arch, layer, &w)?;
        self.weights[layer] = w;
        self.revision += 1;
        Ok(())
    }

    pub fn set_feedback(&mut self, layer: usize, b: Matrix) -> Result<()> {
        self.check_layer(layer)?;
        check_shape(&self.arch, layer, &b)?;
        self.feedback[layer] = Some(b);
        self.revision += 1;
        Ok(())
    }

    /// `W_l += alpha · delta`.
    pub fn add_to_weight(&mut self, layer: usize, alpha: f64, delta: &Matrix) -> Result<()> {
        self.check_layer(layer)?;
        self.weights[layer].add_scaled(alpha, delta)?;
        self.revision += 1;
        Ok(())
    }

    /// Sets `B_l = sign(W_l)` for every stored feedback slot. No-op for other
    /// rules.
    pub fn refresh_sign_feedback(&mut self) {
        if self.rule != Rule::SignFa {
            return;
        }
        for l in 1..self.depth() {
            self.feedback[l] = Some(self.weights[l].sign_of());
        }
        self.revision += 1;
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
    }

    pub fn forward<'a>(&self, x: &'a Matrix) -> Result<ForwardTrace<'a>> {
        self.forward_with(x, None)
    }

    /// Forward pass that multiplies by `sparse`, a compressed copy of `x`,
    /// in the first layer and keeps it for the backward pass.
    pub fn forward_with<'a>(&self, x: &'a Matrix, sparse: Option<&'a SparseRows>) -> Result<ForwardTrace<'a>> {
        if let Some(xs) = sparse {
            if xs.shape() != x.shape() {
                return Err(NetworkError::Linalg(LinalgError::ShapeMismatch {
                    op: "sparse input",
                    left: xs.shape(),
                    right: x.shape(),
                }));
            }
        }
        if x.cols() != self.arch.input_dim() {
            return Err(NetworkError::InputWidth {
                expected: self.arch.input_dim(),
                got: x.cols(),
            });
        }
        let slope = self.arch.leaky_slope;
        let depth = self.depth();
        let mut pre = Vec::with_capacity(depth);
        let mut act: Vec<Matrix> = Vec::with_capacity(depth - 1);
        let mut gates = Vec::with_capacity(depth - 1);
        for l in 0..depth {
            let h = match (l, sparse) {
                (0, Some(xs)) => xs.matmul(&self.weights[0])?,
                (0, None) => x.matmul(&self.weights[0])?,
                _ => act[l - 1].matmul(&self.weights[l])?,
            };
            if l + 1 < depth {
                act.push(h.map(|z| leaky_relu(z, slope)));
                gates.push(h.map(|z| leaky_relu_prime(z, slope)));
            }
            pre.push(h);
        }
        Ok(ForwardTrace {
            input: x,
            sparse_input: sparse,
            pre,
            act,
            gates,
            revision: self.revision,
        })
    }

    /// Outputs only, without keeping the trace.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.pre.pop().unwrap())
    }
}

fn check_shape(arch: &Architecture, layer: usize, m: &Matrix) -> Result<()> {
    let expected = arch.layer_shape(layer);
    if m.shape() != expected {
        return Err(NetworkError::LayerShape {
            layer,
            expected,
            got: m.shape(),
        });
    }
    Ok(())
}

/// Cached intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<'a> {
    input: &'a Matrix,
    sparse_input: Option<&'a SparseRows>,
    pre: Vec<Matrix>,
    act: Vec<Matrix>,
    gates: Vec<Matrix>,
    revision: u64,
}

impl<'a> ForwardTrace<'a> {
    pub fn input(&self) -> &'a Matrix {
        self.input
    }

    pub fn output(&self) -> &Matrix {
        self.pre.last().unwrap()
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// Pre-activation of weight layer `layer` (zero-based), i.e. `h_{layer+1}`.
    pub fn pre_activation(&self, layer: usize) -> &Matrix {
        &self.pre[layer]
    }

    /// Input to weight layer `layer`: the batch for `0`, else the previous
    /// layer's activation.
    pub fn layer_input(&self, layer: usize) -> &Matrix {
        if layer == 0 {
            self.input
        } else {
            &self.act[layer - 1]
        }
    }

    /// `layer_input(layer)ᵀ · b`.
    pub fn layer_input_t_matmul(&self, layer: usize, b: &Matrix) -> std::result::Result<Matrix, LinalgError> {
        match (layer, self.sparse_input) {
            (0, Some(xs)) => xs.t_matmul(b),
            _ => self.layer_input(layer).t_matmul(b),
        }
    }

    /// Gate mask `φ'(h)` of hidden layer `hidden` (zero-based).
    pub fn gate(&self, hidden: usize) -> &Matrix {
        &self.gates[hidden]
    }

    pub fn hidden_activation(&self, hidden: usize) -> &Matrix {
        &self.act[hidden]
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Smallest `|h|` over all hidden pre-activations; distance to the
    /// nearest activation kink.
    pub fn min_abs_hidden_pre_activation(&self) -> f64 {
        self.pre[..self.pre.len() - 1]
            .iter()
            .flat_map(|h| h.as_slice().iter())
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }
}
