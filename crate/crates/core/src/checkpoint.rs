//! JSON checkpoints: network weights, feedback, the conservation reference
//! state and the optimizer position.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::network::{Architecture, Network, NetworkError};
use crate::rules::Rule;
use crate::trainer::TrainState;

pub const CHECKPOINT_FORMAT: &str = "alignflow-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: format tag `{0}`")]
    BadFormat(String),
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("optimizer state does not match the network: {0}")]
    Optimizer(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParts {
    pub architecture: Architecture,
    pub rule: Rule,
    pub seed: u64,
    pub weights: Vec<Matrix>,
    pub feedback: Vec<Option<Matrix>>,
}

impl NetworkParts {
    pub fn from_network(net: &Network) -> Self {
        NetworkParts {
            architecture: net.architecture().clone(),
            rule: net.rule(),
            seed: net.seed(),
            weights: net.weights().to_vec(),
            feedback: net.feedback_slots().to_vec(),
        }
    }

    pub fn into_network(self) -> Result<Network> {
        Ok(Network::from_parts(self.architecture, self.rule, self.seed, self.weights, self.feedback)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub time: f64,
    pub velocity: Option<Vec<Matrix>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub network: NetworkParts,
    pub initial: NetworkParts,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            network: NetworkParts::from_network(&state.network),
            initial: NetworkParts::from_network(&state.initial),
            optimizer: OptimizerState {
                step: state.step,
                time: state.time,
                velocity: state.velocity.clone(),
            },
        }
    }

    pub fn into_state(self) -> Result<TrainState> {
        let network = self.network.into_network()?;
        let initial = self.initial.into_network()?;
        if network.architecture() != initial.architecture() || network.rule() != initial.rule() {
            return Err(CheckpointError::Optimizer("initial network differs in architecture or rule".into()));
        }
        if let Some(v) = &self.optimizer.velocity {
            let ok = v.len() == network.depth() && v.iter().zip(network.weights()).all(|(a, b)| a.shape() == b.shape());
            if !ok {
                return Err(CheckpointError::Optimizer("velocity shapes differ from weights".into()));
            }
        }
        Ok(TrainState {
            network,
            initial,
            velocity: self.optimizer.velocity,
            step: self.optimizer.step,
            time: self.optimizer.time,
        })
    }
}

pub fn save_checkpoint(state: &TrainState, w: impl Write) -> Result<()> {
    serde_json::to_writer(w, &Checkpoint::from_state(state))?;
    Ok(())
}

pub fn load_checkpoint(r: impl Read) -> Result<TrainState> {
    let value: serde_json::Value = serde_json::from_reader(r)?;
    let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::BadFormat(format.to_string()));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let ck: Checkpoint = serde_json::from_value(value)?;
    ck.into_state()
}
