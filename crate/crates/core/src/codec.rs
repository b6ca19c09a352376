//! Analog joint angle ⇄ sparse softmax representation.
//!
//! Each joint is represented by `units` softmax neurons placed at linearly
//! spaced reference angles. Encoding weights every reference by
//! `exp(-(ref - x)^2 / sigma)` and normalises; decoding is the
//! probability-weighted mean of the references.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{JointTrajectory, SoftmaxSequence};

pub const DEFAULT_UNITS: usize = 10;
pub const DEFAULT_SIGMA: f64 = 0.5;

const DEGENERATE_RANGE: f64 = 1e-9;
const ZERO_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecSpec {
    pub units: usize,
    pub sigma: f64,
    /// One strictly increasing, linearly spaced vector of `units` angles per joint.
    pub references: Vec<Vec<f64>>,
}

impl CodecSpec {
    /// References spanning `[min_d, max_d]` of every joint over all frames of all trajectories.
    pub fn from_training<'a, I>(trajectories: I, units: usize, sigma: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a JointTrajectory>,
    {
        if units < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 units, got {units}"
            )));
        }
        let mut bounds: Vec<(f64, f64)> = Vec::new();
        for traj in trajectories {
            if bounds.is_empty() {
                bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); traj.dims()];
            } else if bounds.len() != traj.dims() {
                return Err(Error::DimensionMismatch(format!(
                    "trajectory {:?} has {} joints, expected {}",
                    traj.name,
                    traj.dims(),
                    bounds.len()
                )));
            }
            for frame in traj.frames() {
                for (b, &v) in bounds.iter_mut().zip(frame) {
                    b.0 = b.0.min(v);
                    b.1 = b.1.max(v);
                }
            }
        }
        if bounds.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let references = bounds
            .iter()
            .enumerate()
            .map(|(dim, &(lo, hi))| {
                if hi - lo < DEGENERATE_RANGE {
                    Err(Error::DegenerateRange { dim, range: hi - lo })
                } else {
                    Ok(linspace(lo, hi, units))
                }
            })
            .collect::<Result<_>>()?;
        Self::new(units, sigma, references)
    }

    pub fn new(units: usize, sigma: f64, references: Vec<Vec<f64>>) -> Result<Self> {
        if units < 2 || !(sigma > 0.0) || references.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "codec needs units >= 2, sigma > 0 and at least one joint (units={units}, sigma={sigma})"
            )));
        }
        for (d, refs) in references.iter().enumerate() {
            if refs.len() != units || refs.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidArgument(format!(
                    "references of joint {d} must be {units} strictly increasing values"
                )));
            }
        }
        Ok(Self {
            units,
            sigma,
            references,
        })
    }

    pub fn dims(&self) -> usize {
        self.references.len()
    }

    /// Encoded width, `dims × units`.
    pub fn width(&self) -> usize {
        self.dims() * self.units
    }

    pub fn encode_frame_into(&self, frame: &[f64], out: &mut [f64]) {
        for ((&x, refs), block) in frame
            .iter()
            .zip(&self.references)
            .zip(out.chunks_exact_mut(self.units))
        {
            encode_into(x, refs, self.sigma, block);
        }
    }

    pub fn encode_frame(&self, frame: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(frame.len())?;
        let mut out = vec![0.0; self.width()];
        self.encode_frame_into(frame, &mut out);
        Ok(out)
    }

    pub fn decode_frame(&self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() != self.width() {
            return Err(Error::DimensionMismatch(format!(
                "frame width {} != {}",
                frame.len(),
                self.width()
            )));
        }
        frame
            .chunks_exact(self.units)
            .zip(&self.references)
            .map(|(block, refs)| decode_softmax(block, refs))
            .collect()
    }

    pub fn encode_trajectory(&self, traj: &JointTrajectory) -> Result<SoftmaxSequence> {
        if traj.is_empty() {
            return Err(Error::DimensionMismatch("empty trajectory".into()));
        }
        self.check_dims(traj.dims())?;
        let mut seq = SoftmaxSequence::with_capacity(self.units, self.width(), traj.len());
        let mut buf = vec![0.0; self.width()];
        for frame in traj.frames() {
            self.encode_frame_into(frame, &mut buf);
            seq.push_frame(&buf);
        }
        Ok(seq)
    }

    pub fn decode_trajectory(
        &self,
        seq: &SoftmaxSequence,
        name: impl Into<String>,
    ) -> Result<JointTrajectory> {
        if seq.is_empty() || seq.units() != self.units || seq.width() != self.width() {
            return Err(Error::DimensionMismatch(format!(
                "sequence of {} frames × {} ({} units) does not match codec {} × {}",
                seq.len(),
                seq.width(),
                seq.units(),
                self.dims(),
                self.units
            )));
        }
        let mut values = Vec::with_capacity(seq.len() * self.dims());
        for frame in seq.frames() {
            values.extend(self.decode_frame(frame)?);
        }
        JointTrajectory::new(name, self.dims(), values)
    }

    /// `decode(encode(traj))`: the trajectory as the network can represent it.
    pub fn roundtrip(&self, traj: &JointTrajectory) -> Result<JointTrajectory> {
        self.decode_trajectory(&self.encode_trajectory(traj)?, traj.name.clone())
    }

    fn check_dims(&self, dims: usize) -> Result<()> {
        if dims != self.dims() {
            return Err(Error::DimensionMismatch(format!(
                "{dims} joints, codec has {}",
                self.dims()
            )));
        }
        Ok(())
    }
}

/// `n` evenly spaced values from `lo` to `hi`, both endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

pub fn encode_analog(value: f64, refs: &[f64], sigma: f64) -> Vec<f64> {
    let mut out = vec![0.0; refs.len()];
    encode_into(value, refs, sigma, &mut out);
    out
}

fn encode_into(value: f64, refs: &[f64], sigma: f64, out: &mut [f64]) {
    // Shift by the largest logit so values far outside the reference span stay finite.
    let mut top = f64::NEG_INFINITY;
    for (o, &r) in out.iter_mut().zip(refs) {
        let d = r - value;
        *o = -(d * d) / sigma;
        top = top.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - top).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Probability-weighted mean of `refs`. The block is renormalised first so
/// edited or filtered inputs that do not sum to one still decode.
pub fn decode_softmax(block: &[f64], refs: &[f64]) -> Result<f64> {
    if block.len() != refs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} softmax entries for {} references",
            block.len(),
            refs.len()
        )));
    }
    if block.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "softmax entries must be finite and non-negative".into(),
        ));
    }
    if block.iter().all(|&v| v < ZERO_MASS) {
        return Err(Error::AllZero);
    }
    let mass: f64 = block.iter().sum();
    Ok(block.iter().zip(refs).map(|(p, r)| p * r).sum::<f64>() / mass)
}
