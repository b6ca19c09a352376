//! Self-contained model files.
//!
//! A checkpoint carries everything needed to generate and classify actions:
//! network parameters with the PB table, the codec, training statistics, the
//! training configuration and the raw training trajectories.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::CodecSpec;
use crate::dataset::{TrainingSet, TrainingStats};
use crate::error::{Error, Result};
use crate::network::{NetworkParams, NetworkSpec, PbPoint};
use crate::trainer::TrainingConfig;
use crate::trajectory::{JointTrajectory, SoftmaxSequence};

pub const FORMAT: &str = "novact-ckpt/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub params: NetworkParams,
    pub codec: CodecSpec,
    pub stats: TrainingStats,
    pub config: TrainingConfig,
    /// Epoch whose parameters these are.
    pub epoch: usize,
    pub loss: f64,
    pub training: TrainingSet,
}

impl Checkpoint {
    pub fn spec(&self) -> &NetworkSpec {
        &self.params.spec
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let format = value
            .get("format")
            .and_then(|f| f.as_str())
            .ok_or_else(|| Error::CorruptCheckpoint("missing format tag".into()))?;
        if format != FORMAT {
            return Err(Error::VersionMismatch {
                found: format.to_string(),
                expected: FORMAT,
            });
        }
        let cp: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        cp.validate()
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        Ok(cp)
    }

    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let spec = self.spec();
        if self.codec.dims() != spec.joints || self.codec.units != spec.units {
            return Err(Error::ShapeMismatch(
                "codec does not match the network spec".into(),
            ));
        }
        if self.stats.home.len() != spec.joints || self.training.dims() != spec.joints {
            return Err(Error::ShapeMismatch(
                "training data does not match the network spec".into(),
            ));
        }
        if self.params.pb.len() != self.training.len() {
            return Err(Error::ShapeMismatch(
                "one PB vector per training pattern expected".into(),
            ));
        }
        Ok(())
    }

    /// Encoded home posture: the first input of every closed-loop rollout.
    pub fn home_input(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.codec.width()];
        self.codec.encode_frame_into(&self.stats.home, &mut out);
        out
    }

    /// Default rollout length: the longest training pattern.
    pub fn default_steps(&self) -> usize {
        self.stats.max_steps
    }

    pub fn learned_pb(&self, pattern: usize) -> PbPoint {
        self.params.pb.point(pattern)
    }

    /// Closed-loop softmax predictions from the home posture.
    pub fn generate(&self, pb: &PbPoint, steps: usize) -> Result<SoftmaxSequence> {
        let (seq, _) = self.params.generate(pb, steps, 1.0, &self.home_input(), None)?;
        Ok(seq)
    }

    /// Mental simulation of a whole action in radians: `steps` frames, the
    /// home posture as seen through the codec followed by `steps - 1`
    /// closed-loop predictions.
    pub fn rollout(&self, pb: &PbPoint, steps: usize) -> Result<JointTrajectory> {
        if steps == 0 {
            return Err(Error::InvalidArgument("rollout needs at least one frame".into()));
        }
        let home = self.home_input();
        let mut values = Vec::with_capacity(steps * self.spec().joints);
        values.extend(self.codec.decode_frame(&home)?);
        if steps > 1 {
            let (seq, _) = self.params.generate(pb, steps - 1, 1.0, &home, None)?;
            for frame in seq.frames() {
                values.extend(self.codec.decode_frame(frame)?);
            }
        }
        let name = format!("pb{:?}", pb.as_slice());
        JointTrajectory::new(name, self.spec().joints, values)
    }

    /// Training patterns as the network can represent them (`decode ∘ encode`).
    /// Generated actions are compared against these.
    pub fn reference_set(&self) -> Result<TrainingSet> {
        self.training.map_trajectories(|t| self.codec.roundtrip(t))
    }
}
