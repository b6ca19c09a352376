//! Training trajectories: CSV ingestion and a synthetic boxing set.
//!
//! Synthetic actions are built from raised-cosine extend/retract bumps added
//! to a shared guard posture, so every action starts and ends at home.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::JointTrajectory;

pub const JOINT_NAMES: [&str; 8] = [
    "RShoulderPitch",
    "RShoulderRoll",
    "RElbowYaw",
    "RElbowRoll",
    "LShoulderPitch",
    "LShoulderRoll",
    "LElbowYaw",
    "LElbowRoll",
];

pub const ACTION_LABELS: [&str; 6] = ["L.Jab", "R.Straight", "L.Hook", "R.Hook", "L.Upper", "R.Upper"];

/// Guard posture, right arm then left arm.
pub const HOME_POSTURE: [f64; 8] = [0.8, -0.25, 1.0, 1.35, 0.8, 0.25, -1.0, -1.35];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub label: String,
    pub trajectory: JointTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub patterns: Vec<Pattern>,
    pub joint_names: Vec<String>,
    pub sample_period_s: f64,
}

impl TrainingSet {
    pub fn new(patterns: Vec<Pattern>, joint_names: Vec<String>, sample_period_s: f64) -> Result<Self> {
        let first = patterns
            .first()
            .ok_or_else(|| Error::InvalidArgument("training set has no patterns".into()))?;
        let dims = first.trajectory.dims();
        if joint_names.len() != dims {
            return Err(Error::DimensionMismatch(format!(
                "{} joint names for {dims} joints",
                joint_names.len()
            )));
        }
        for (i, p) in patterns.iter().enumerate() {
            if p.trajectory.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "pattern {:?} has {} joints, expected {dims}",
                    p.label,
                    p.trajectory.dims()
                )));
            }
            if p.trajectory.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "pattern {:?} has fewer than 2 frames",
                    p.label
                )));
            }
            if patterns[..i].iter().any(|q| q.label == p.label) {
                return Err(Error::InvalidArgument(format!("duplicate label {:?}", p.label)));
            }
        }
        Ok(Self {
            patterns,
            joint_names,
            sample_period_s,
        })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.joint_names.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.patterns.iter().map(|p| p.label.as_str())
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &JointTrajectory> {
        self.patterns.iter().map(|p| &p.trajectory)
    }

    /// Apply `f` to every trajectory, keeping labels and metadata.
    pub fn map_trajectories<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&JointTrajectory) -> Result<JointTrajectory>,
    {
        let patterns = self
            .patterns
            .iter()
            .map(|p| {
                Ok(Pattern {
                    label: p.label.clone(),
                    trajectory: f(&p.trajectory)?,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(patterns, self.joint_names.clone(), self.sample_period_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub joint_min: Vec<f64>,
    pub joint_max: Vec<f64>,
    /// Largest per-step change of any joint over all patterns (rad/step).
    pub max_velocity: f64,
    pub max_steps: usize,
    /// Mean of the first frames.
    pub home: Vec<f64>,
}

impl TrainingStats {
    pub fn joint_ranges(&self) -> Vec<f64> {
        self.joint_max
            .iter()
            .zip(&self.joint_min)
            .map(|(hi, lo)| hi - lo)
            .collect()
    }
}

pub fn training_stats(set: &TrainingSet) -> TrainingStats {
    let dims = set.dims();
    let mut joint_min = vec![f64::INFINITY; dims];
    let mut joint_max = vec![f64::NEG_INFINITY; dims];
    let mut home = vec![0.0; dims];
    let mut max_velocity = 0.0f64;
    let mut max_steps = 0;
    for traj in set.trajectories() {
        for frame in traj.frames() {
            for d in 0..dims {
                joint_min[d] = joint_min[d].min(frame[d]);
                joint_max[d] = joint_max[d].max(frame[d]);
            }
        }
        for (h, v) in home.iter_mut().zip(traj.frame(0)) {
            *h += v;
        }
        max_velocity = max_velocity.max(traj.max_step_change());
        max_steps = max_steps.max(traj.len());
    }
    for h in &mut home {
        *h /= set.len() as f64;
    }
    TrainingStats {
        joint_min,
        joint_max,
        max_velocity,
        max_steps,
        home,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub steps: usize,
    /// Per-action amplitude multipliers, in `ACTION_LABELS` order.
    pub amplitudes: [f64; 6],
    /// Half-width of the uniform per-frame noise (rad), tapered to zero at both ends.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            amplitudes: [1.0; 6],
            noise: 0.005,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy)]
enum Arm {
    Right,
    Left,
}

/// One raised-cosine excursion of a right-arm joint (0..4) between normalised times `from` and `to`.
struct Bump {
    joint: usize,
    amplitude: f64,
    from: f64,
    to: f64,
}

const fn bump(joint: usize, amplitude: f64, from: f64, to: f64) -> Bump {
    Bump {
        joint,
        amplitude,
        from,
        to,
    }
}

// Joint offsets within an arm.
const PITCH: usize = 0;
const ROLL: usize = 1;
const YAW: usize = 2;
const ELBOW: usize = 3;

const GUARD_SCALE: f64 = 0.08;

fn action_bumps(action: usize) -> (Arm, Vec<Bump>) {
    match action {
        // jab: short, quick extension
        0 => (
            Arm::Left,
            vec![
                bump(PITCH, -0.7, 0.05, 0.55),
                bump(ROLL, 0.1, 0.05, 0.5),
                bump(YAW, 0.2, 0.1, 0.5),
                bump(ELBOW, -1.0, 0.1, 0.55),
            ],
        ),
        // straight: full extension, slower retract
        1 => (
            Arm::Right,
            vec![
                bump(PITCH, -0.9, 0.1, 0.8),
                bump(ROLL, 0.15, 0.15, 0.75),
                bump(YAW, 0.3, 0.1, 0.7),
                bump(ELBOW, -1.2, 0.15, 0.8),
            ],
        ),
        // hook: swing out then across with the elbow kept bent
        2 | 3 => (
            if action == 2 { Arm::Left } else { Arm::Right },
            vec![
                bump(PITCH, -0.5, 0.1, 0.85),
                bump(ROLL, -0.8, 0.1, 0.6),
                bump(ROLL, 0.3, 0.5, 0.9),
                bump(YAW, 0.6, 0.2, 0.8),
                bump(ELBOW, -0.3, 0.2, 0.7),
            ],
        ),
        // uppercut: drop, then drive upward with forearm rotation
        _ => (
            if action == 4 { Arm::Left } else { Arm::Right },
            vec![
                bump(PITCH, 0.3, 0.05, 0.4),
                bump(PITCH, -1.0, 0.3, 0.85),
                bump(ROLL, 0.1, 0.3, 0.8),
                bump(YAW, -0.5, 0.2, 0.8),
                bump(ELBOW, -0.2, 0.3, 0.8),
            ],
        ),
    }
}

fn raised_cosine(s: f64, from: f64, to: f64) -> f64 {
    if s <= from || s >= to {
        0.0
    } else {
        let x = (PI * (s - from) / (to - from)).sin();
        x * x
    }
}

/// Left-arm joints mirror the right arm: roll, yaw and elbow roll flip sign.
fn mirror_sign(joint: usize) -> f64 {
    if joint == PITCH {
        1.0
    } else {
        -1.0
    }
}

pub fn synthesize_boxing_set(cfg: &SynthConfig) -> Result<TrainingSet> {
    if cfg.steps < 10 || !(cfg.noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "synthetic set needs steps >= 10 and noise >= 0 (steps={}, noise={})",
            cfg.steps, cfg.noise
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let last = (cfg.steps - 1) as f64;
    let mut patterns = Vec::with_capacity(6);
    for (action, label) in ACTION_LABELS.iter().enumerate() {
        let (arm, bumps) = action_bumps(action);
        let scale = cfg.amplitudes[action];
        let (active, guard) = match arm {
            Arm::Right => (0, 4),
            Arm::Left => (4, 0),
        };
        let mut values = Vec::with_capacity(cfg.steps * 8);
        for t in 0..cfg.steps {
            let s = t as f64 / last;
            let mut frame = HOME_POSTURE;
            for b in &bumps {
                let p = raised_cosine(s, b.from, b.to);
                let sign = if active == 4 { mirror_sign(b.joint) } else { 1.0 };
                frame[active + b.joint] += sign * scale * b.amplitude * p;
                // The guard arm tightens slightly as the punch goes out.
                let gsign = if guard == 4 { mirror_sign(b.joint) } else { 1.0 };
                frame[guard + b.joint] -= gsign * scale * GUARD_SCALE * b.amplitude.abs() * p;
            }
            if cfg.noise > 0.0 {
                let taper = (PI * s).sin();
                for v in &mut frame {
                    *v += taper * rng.gen_range(-cfg.noise..=cfg.noise);
                }
            }
            values.extend_from_slice(&frame);
        }
        patterns.push(Pattern {
            label: (*label).to_string(),
            trajectory: JointTrajectory::new(*label, 8, values)?,
        });
    }
    TrainingSet::new(
        patterns,
        JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        0.05,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    patterns: Vec<ManifestEntry>,
    sample_period_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    label: String,
    file: String,
}

pub fn load_training_set(manifest_path: impl AsRef<Path>) -> Result<TrainingSet> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(manifest_path, e))?;
    if manifest.patterns.is_empty() {
        return Err(Error::parse(manifest_path, "manifest lists no patterns"));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut joint_names: Option<Vec<String>> = None;
    let mut patterns = Vec::with_capacity(manifest.patterns.len());
    for entry in &manifest.patterns {
        let path = base.join(&entry.file);
        let (names, traj) = read_trajectory_csv(&path, &entry.label)?;
        match &joint_names {
            None => joint_names = Some(names),
            Some(expected) if expected.len() != names.len() => {
                return Err(Error::InconsistentDims {
                    path,
                    expected: expected.len(),
                    found: names.len(),
                })
            }
            Some(_) => {}
        }
        patterns.push(Pattern {
            label: entry.label.clone(),
            trajectory: traj,
        });
    }
    TrainingSet::new(
        patterns,
        joint_names.unwrap_or_default(),
        manifest.sample_period_s,
    )
}

/// Header row of joint names, then one row of radians per time step.
pub fn read_trajectory_csv(path: &Path, name: &str) -> Result<(Vec<String>, JointTrajectory)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::parse(path, "missing header row"));
    }
    let dims = names.len();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, .. } => Error::InconsistentDims {
                path: path.to_path_buf(),
                expected: dims,
                found: *len as usize,
            },
            _ => Error::parse(path, &e),
        })?;
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|e| Error::parse(path, format!("row {}, column {col}: {e}", row + 1)))?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: path.to_path_buf(),
                    row: row + 1,
                    col,
                });
            }
            values.push(v);
        }
    }
    if values.len() < 2 * dims {
        return Err(Error::parse(path, "need at least two time steps"));
    }
    Ok((names, JointTrajectory::new(name, dims, values)?))
}

pub fn write_trajectory_csv(path: &Path, joint_names: &[String], traj: &JointTrajectory) -> Result<()> {
    let mut out = String::new();
    out.push_str(&joint_names.join(","));
    out.push('\n');
    for frame in traj.frames() {
        let row: Vec<String> = frame.iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write one CSV per pattern plus `manifest.json` into `dir`; returns the manifest path.
pub fn save_training_set(set: &TrainingSet, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(set.len());
    for (i, p) in set.patterns.iter().enumerate() {
        let stem: String = p
            .label
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_lowercase()
                } else {
                    '_'
                }
            })
            .collect();
        let file = format!("{i:02}_{stem}.csv");
        write_trajectory_csv(&dir.join(&file), &set.joint_names, &p.trajectory)?;
        entries.push(ManifestEntry {
            label: p.label.clone(),
            file,
        });
    }
    let manifest = Manifest {
        patterns: entries,
        sample_period_s: set.sample_period_s,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}
