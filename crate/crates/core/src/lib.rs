//! Learning basic robot actions with a multiple-timescale recurrent network and
//! generating new ones by sweeping its two-dimensional parametric-bias (PB) space.
//!
//! The crate is organised bottom-up:
//!
//! - [`trajectory`]: joint-space trajectories and their softmax-encoded form
//! - [`codec`]: analog ⇄ sparse softmax conversion
//! - [`dataset`]: CSV ingestion and the synthetic boxing set
//! - [`network`]: PB activation and the leaky-integrator forward dynamics
//! - [`trainer`]: KL loss, BPTT gradients, Adam and the training loop
//! - [`checkpoint`]: self-contained model files and closed-loop rollouts
//! - [`metrics`]: DTW, appropriateness filtering, novelty and diversity
//! - [`explorer`]: PB grid sweeps, reports and map rendering
//!
//! Data-parallel work (per-pattern gradients, per-cell generation, pairwise DTW)
//! goes through [`Exec`], which uses rayon when the `parallel` feature is on and
//! runs sequentially otherwise. Both paths produce bit-identical results.

pub mod checkpoint;
pub mod codec;
pub mod dataset;
pub mod error;
pub mod explorer;
pub mod metrics;
pub mod network;
mod parallel;
pub mod trainer;
pub mod trajectory;

pub use checkpoint::Checkpoint;
pub use codec::CodecSpec;
pub use dataset::{SynthConfig, TrainingSet, TrainingStats};
pub use error::{Error, Result};
pub use explorer::{GridSpec, SweepConfig, SweepResult};
pub use metrics::{AppropriatenessRule, PatternClass, PatternLabel};
pub use network::{NetworkParams, NetworkSpec, NetworkState, PbPoint};
pub use parallel::Exec;
pub use trainer::{LearningCurve, TrainingConfig};
pub use trajectory::{JointTrajectory, SoftmaxSequence};
