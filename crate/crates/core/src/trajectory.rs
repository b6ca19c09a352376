//! Row-major time series containers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One robot action: `len × dims` joint angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub name: String,
    dims: usize,
    values: Vec<f64>,
}

impl JointTrajectory {
    pub fn new(name: impl Into<String>, dims: usize, values: Vec<f64>) -> Result<Self> {
        if dims == 0 || values.is_empty() || !values.len().is_multiple_of(dims) {
            return Err(Error::DimensionMismatch(format!(
                "{} values cannot form frames of {} joints",
                values.len(),
                dims
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite joint value at frame {}, joint {}",
                i / dims,
                i % dims
            )));
        }
        Ok(Self {
            name: name.into(),
            dims,
            values,
        })
    }

    pub fn from_frames(name: impl Into<String>, frames: &[Vec<f64>]) -> Result<Self> {
        let dims = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != dims) {
            return Err(Error::DimensionMismatch("ragged frames".into()));
        }
        Self::new(name, dims, frames.concat())
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dims)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn joint(&self, d: usize) -> impl Iterator<Item = f64> + '_ {
        self.frames().map(move |f| f[d])
    }

    /// Largest absolute change of any joint between consecutive frames.
    pub fn max_step_change(&self) -> f64 {
        self.values
            .windows(self.dims + 1)
            .map(|w| (w[self.dims] - w[0]).abs())
            .fold(0.0, f64::max)
    }

    /// `max - min` for each joint.
    pub fn joint_ranges(&self) -> Vec<f64> {
        (0..self.dims)
            .map(|d| {
                let (lo, hi) = self
                    .joint(d)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    });
                hi - lo
            })
            .collect()
    }

    /// Sum of absolute per-step changes of joint `d`.
    pub fn path_length(&self, d: usize) -> f64 {
        let col: Vec<f64> = self.joint(d).collect();
        col.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

/// Softmax-encoded sequence: `len × width`, where `width = dims × units` and
/// each contiguous block of `units` entries is a probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxSequence {
    units: usize,
    width: usize,
    values: Vec<f64>,
}

impl SoftmaxSequence {
    pub fn new(units: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if units == 0 || width == 0 || !width.is_multiple_of(units) || !values.len().is_multiple_of(width) {
            return Err(Error::ShapeMismatch(format!(
                "{} values, width {width}, {units} units per group",
                values.len()
            )));
        }
        Ok(Self { units, width, values })
    }

    pub fn with_capacity(units: usize, width: usize, frames: usize) -> Self {
        Self {
            units,
            width,
            values: Vec::with_capacity(frames * width),
        }
    }

    pub fn push_frame(&mut self, frame: &[f64]) {
        assert_eq!(frame.len(), self.width, "frame width");
        self.values.extend_from_slice(frame);
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn groups(&self) -> usize {
        self.width / self.units
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.width..(t + 1) * self.width]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest deviation of any block sum from one, or `None` if some entry is negative.
    pub fn max_block_error(&self) -> Option<f64> {
        if self.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return None;
        }
        Some(
            self.values
                .chunks_exact(self.units)
                .map(|b| (b.iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max),
        )
    }
}
