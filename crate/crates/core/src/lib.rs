//! Feedback-alignment training of deep leaky-ReLU networks, with the
//! diagnostics needed to check the implicit-regularization and convergence
//! results for FA, adaFA, sign-FA and backprop.

pub mod checkpoint;
pub mod data;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod presets;
pub mod rules;
pub mod suites;
pub mod trainer;

pub use data::{Dataset, DatasetKind, DatasetMeta, Labels};
pub use linalg::{Matrix, Rng};
pub use losses::Loss;
pub use network::{Architecture, InitStrategy, Network};
pub use rules::Rule;
pub use trainer::{train, TrainConfig, TrajectoryLog};
