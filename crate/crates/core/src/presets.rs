//! Named experiment settings.

use serde::{Deserialize, Serialize};

use crate::losses::Loss;
use crate::network::InitStrategy;
use crate::rules::Rule;
use crate::trainer::{SaturationPolicy, Schedule, TrainConfig};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Width sweep on a noisy MNIST subset with a clean test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPreset {
    pub name: String,
    pub widths: Vec<usize>,
    pub rules: Vec<Rule>,
    pub noise: f64,
    pub train_size: usize,
    /// `None` keeps all ten digits.
    pub classes: Option<Vec<usize>>,
    pub replicates: usize,
    pub leaky_slope: f64,
    pub init: InitStrategy,
    pub train: TrainConfig,
}

/// Two-layer aligned-output networks on certified synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominancePreset {
    pub name: String,
    pub samples: usize,
    pub dim: usize,
    pub gamma: f64,
    pub width: usize,
    pub rules: Vec<Rule>,
    pub replicates: usize,
    pub beta: f64,
    pub envelope_tolerance: f64,
    pub leaky_slope: f64,
    pub train: TrainConfig,
}

pub fn mnist_noisy_sweep() -> SweepPreset {
    SweepPreset {
        name: "mnist-noisy-sweep".into(),
        widths: vec![15, 30, 45, 60, 75, 100, 125, 150, 175, 200],
        rules: Rule::ALL.to_vec(),
        noise: 0.2,
        train_size: 4000,
        classes: None,
        replicates: 6,
        leaky_slope: DEFAULT_LEAKY_SLOPE,
        init: InitStrategy::UniformScaled,
        train: TrainConfig {
            loss: Loss::CrossEntropy,
            lr: 0.05,
            schedule: Schedule::StepDecay { factor: 0.1, every: 1000 },
            momentum: 0.05,
            steps: 6000,
            log_every: 5,
            seed: 0,
            saturation: SaturationPolicy::Flag,
            init: InitStrategy::UniformScaled,
            track_conservation: true,
            snapshot_every: None,
        },
    }
}

pub fn ortho_dominance() -> DominancePreset {
    DominancePreset {
        name: "ortho-dominance".into(),
        samples: 20,
        dim: 10,
        gamma: 0.5,
        width: 50,
        rules: vec![Rule::Fa, Rule::SignFa],
        replicates: 6,
        beta: 2.0,
        envelope_tolerance: 0.05,
        leaky_slope: DEFAULT_LEAKY_SLOPE,
        train: TrainConfig {
            loss: Loss::ExponentialMargin,
            lr: 1e-4,
            schedule: Schedule::Constant,
            momentum: 0.0,
            steps: 10_000,
            log_every: 1,
            seed: 0,
            saturation: SaturationPolicy::Flag,
            init: InitStrategy::AlignedOutput,
            track_conservation: false,
            snapshot_every: None,
        },
    }
}

pub fn names() -> &'static [&'static str] {
    &["mnist-noisy-sweep", "ortho-dominance"]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_matches_published_protocol() {
        let p = mnist_noisy_sweep();
        assert_eq!(p.widths, vec![15, 30, 45, 60, 75, 100, 125, 150, 175, 200]);
        assert_eq!((p.noise, p.train_size, p.replicates), (0.2, 4000, 6));
        assert_eq!(p.rules.len(), 4);
        assert_eq!((p.train.lr, p.train.momentum, p.train.steps), (0.05, 0.05, 6000));
        assert_eq!(p.train.schedule, Schedule::StepDecay { factor: 0.1, every: 1000 });
        assert!(p.train.validate().is_ok());
    }

    #[test]
    fn dominance_preset_is_momentum_free() {
        let p = ortho_dominance();
        assert_eq!(p.train.momentum, 0.0);
        assert_eq!(p.train.init, InitStrategy::AlignedOutput);
        assert!(p.train.validate().is_ok());
    }
}
