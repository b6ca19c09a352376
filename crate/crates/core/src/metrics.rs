//! Creativity measures over generated actions.
//!
//! Generated trajectories are first filtered for appropriateness (too fast or
//! not moving), then compared to the training patterns with dynamic time
//! warping. Novelty is the mean distance to the nearest training pattern and
//! diversity the mean pairwise distance, both estimated over repeated random
//! subsamples.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{TrainingSet, TrainingStats};
use crate::error::{Error, Result};
use crate::parallel::Exec;
use crate::trajectory::JointTrajectory;

pub const VELOCITY_FACTOR: f64 = 1.5;
pub const MOVEMENT_FLOOR_FRACTION: f64 = 0.05;
/// Default learned/unlearned threshold as a fraction of the smallest DTW
/// distance between two distinct training patterns.
pub const THRESHOLD_FRACTION: f64 = 0.25;

/// DTW settings, echoed into reports. Only one configuration exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwConfig {
    pub local_distance: String,
    pub window: Option<usize>,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self {
            local_distance: "euclidean".into(),
            window: None,
        }
    }
}

#[inline]
fn frame_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

/// Unconstrained DTW with Euclidean frame cost:
/// `D(i,j) = cost(i,j) + min(D(i-1,j), D(i,j-1), D(i-1,j-1))`, returning `D(n-1, m-1)`.
pub fn dtw_distance(a: &JointTrajectory, b: &JointTrajectory) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "DTW between {} and {} joints",
            a.dims(),
            b.dims()
        )));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for (i, fa) in a.frames().enumerate() {
        for (j, fb) in b.frames().enumerate() {
            let cost = frame_distance(fa, fb);
            cur[j] = if i == 0 && j == 0 {
                cost
            } else {
                let up = prev[j];
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if j > 0 { prev[j - 1] } else { f64::INFINITY };
                cost + up.min(left).min(diag)
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Nearest reference pattern by DTW: `(index, distance)`. First wins on ties.
pub fn nearest_pattern(traj: &JointTrajectory, references: &TrainingSet) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for (k, r) in references.trajectories().enumerate() {
        let d = dtw_distance(traj, r)?;
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppropriatenessRule {
    /// Largest admissible per-step change of any joint (rad/step).
    pub velocity_limit: f64,
    /// Per-joint range below which the joint counts as still (rad).
    pub movement_floor: Vec<f64>,
}

impl AppropriatenessRule {
    pub fn from_stats(stats: &TrainingStats) -> Self {
        Self::with_factors(stats, VELOCITY_FACTOR, MOVEMENT_FLOOR_FRACTION)
    }

    pub fn with_factors(stats: &TrainingStats, velocity_factor: f64, floor_fraction: f64) -> Self {
        Self {
            velocity_limit: velocity_factor * stats.max_velocity,
            movement_floor: stats
                .joint_ranges()
                .into_iter()
                .map(|r| floor_fraction * r)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternClass {
    AppropriateUnlearned,
    AppropriateLearned,
    Fluctuating,
    NonMoving,
}

impl PatternClass {
    pub const ALL: [PatternClass; 4] = [
        PatternClass::AppropriateUnlearned,
        PatternClass::AppropriateLearned,
        PatternClass::Fluctuating,
        PatternClass::NonMoving,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternClass::AppropriateUnlearned => "appropriate-unlearned",
            PatternClass::AppropriateLearned => "appropriate-learned",
            PatternClass::Fluctuating => "fluctuating",
            PatternClass::NonMoving => "non-moving",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn is_appropriate(self) -> bool {
        matches!(
            self,
            PatternClass::AppropriateLearned | PatternClass::AppropriateUnlearned
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternLabel {
    pub class: PatternClass,
    /// Present iff the pattern is appropriate.
    pub nearest: Option<String>,
    pub min_dtw: Option<f64>,
}

/// Fluctuating if any joint moves faster than the limit; otherwise non-moving
/// if every joint stays within its floor; otherwise learned or unlearned by
/// the DTW distance to the nearest reference pattern.
pub fn classify_pattern(
    traj: &JointTrajectory,
    rule: &AppropriatenessRule,
    references: &TrainingSet,
    learned_threshold: f64,
) -> Result<PatternLabel> {
    if traj.max_step_change() > rule.velocity_limit {
        return Ok(PatternLabel {
            class: PatternClass::Fluctuating,
            nearest: None,
            min_dtw: None,
        });
    }
    let ranges = traj.joint_ranges();
    if ranges.len() != rule.movement_floor.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} joints, rule covers {}",
            ranges.len(),
            rule.movement_floor.len()
        )));
    }
    if ranges
        .iter()
        .zip(&rule.movement_floor)
        .all(|(r, floor)| r < floor)
    {
        return Ok(PatternLabel {
            class: PatternClass::NonMoving,
            nearest: None,
            min_dtw: None,
        });
    }
    let (k, d) = nearest_pattern(traj, references)?;
    let class = if d <= learned_threshold {
        PatternClass::AppropriateLearned
    } else {
        PatternClass::AppropriateUnlearned
    };
    Ok(PatternLabel {
        class,
        nearest: Some(references.patterns[k].label.clone()),
        min_dtw: Some(d),
    })
}

/// `THRESHOLD_FRACTION` of the smallest DTW distance between two distinct patterns.
pub fn default_learned_threshold(references: &TrainingSet) -> Result<f64> {
    let trajs: Vec<&JointTrajectory> = references.trajectories().collect();
    if trajs.len() < 2 {
        return Err(Error::InsufficientPatterns {
            needed: 2,
            available: trajs.len(),
        });
    }
    let mut min = f64::INFINITY;
    for i in 0..trajs.len() {
        for j in i + 1..trajs.len() {
            min = min.min(dtw_distance(trajs[i], trajs[j])?);
        }
    }
    Ok(THRESHOLD_FRACTION * min)
}

/// Mean ± sample standard deviation across resampling iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stdev: f64,
}

impl Estimate {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stdev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, stdev }
    }
}

/// `iterations` index sets, each `sample_size` distinct indices from `0..population`.
pub fn draw_samples(
    population: usize,
    iterations: usize,
    sample_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if population < sample_size || sample_size == 0 {
        return Err(Error::InsufficientPatterns {
            needed: sample_size.max(1),
            available: population,
        });
    }
    if iterations == 0 {
        return Err(Error::InvalidArgument("need at least one iteration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..iterations)
        .map(|_| index::sample(&mut rng, population, sample_size).into_vec())
        .collect())
}

/// Novelty over precomputed samples of `pool`.
pub fn novelty_over(
    pool: &[JointTrajectory],
    samples: &[Vec<usize>],
    training: &TrainingSet,
    exec: Exec,
) -> Result<Estimate> {
    let min_dtw = exec
        .map_slice(pool, |t| nearest_pattern(t, training).map(|(_, d)| d))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let per_iteration: Vec<f64> = samples
        .iter()
        .map(|s| s.iter().map(|&i| min_dtw[i]).sum::<f64>() / s.len() as f64)
        .collect();
    Ok(Estimate::from_values(&per_iteration))
}

/// Diversity over precomputed samples of `pool`.
pub fn diversity_over(pool: &[JointTrajectory], samples: &[Vec<usize>], exec: Exec) -> Result<Estimate> {
    let mut per_iteration = Vec::with_capacity(samples.len());
    for s in samples {
        if s.len() < 2 {
            return Err(Error::InsufficientPatterns {
                needed: 2,
                available: s.len(),
            });
        }
        let pairs: Vec<(usize, usize)> = (0..s.len())
            .flat_map(|a| (a + 1..s.len()).map(move |b| (a, b)))
            .collect();
        let dists = exec
            .map_slice(&pairs, |&(a, b)| dtw_distance(&pool[s[a]], &pool[s[b]]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        per_iteration.push(dists.iter().sum::<f64>() / dists.len() as f64);
    }
    Ok(Estimate::from_values(&per_iteration))
}

/// Mean minimum DTW distance from generated patterns to the training set,
/// over `iterations` random subsamples of `sample_size` patterns.
pub fn novelty(
    generated: &[JointTrajectory],
    training: &TrainingSet,
    iterations: usize,
    sample_size: usize,
    seed: u64,
) -> Result<Estimate> {
    let samples = draw_samples(generated.len(), iterations, sample_size, seed)?;
    novelty_over(generated, &samples, training, Exec::default())
}

/// Mean pairwise DTW distance among generated patterns, over random subsamples.
pub fn diversity(
    generated: &[JointTrajectory],
    iterations: usize,
    sample_size: usize,
    seed: u64,
) -> Result<Estimate> {
    if sample_size < 2 {
        return Err(Error::InsufficientPatterns {
            needed: 2,
            available: sample_size,
        });
    }
    let samples = draw_samples(generated.len(), iterations, sample_size, seed)?;
    diversity_over(generated, &samples, Exec::default())
}
