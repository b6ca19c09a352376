//! PB-space sweeps: generate an action at every grid cell, classify it, and
//! summarise the resulting map.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::codec::linspace;
use crate::dataset::training_stats;
use crate::error::{Error, Result};
use crate::metrics::{
    classify_pattern, default_learned_threshold, diversity_over, draw_samples, novelty_over,
    AppropriatenessRule, DtwConfig, Estimate, PatternClass, PatternLabel, MOVEMENT_FLOOR_FRACTION,
    VELOCITY_FACTOR,
};
use crate::network::PbPoint;
use crate::parallel::Exec;
use crate::trajectory::JointTrajectory;

/// Square grid over `[-1, 1]²`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { resolution: 200 }
    }
}

impl GridSpec {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid resolution must be at least 2, got {resolution}"
            )));
        }
        Ok(Self { resolution })
    }

    pub fn cells(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn axis(&self) -> Vec<f64> {
        linspace(-1.0, 1.0, self.resolution)
    }

    /// Row-major: cell `iy * resolution + ix` has PB `(axis[ix], axis[iy])`.
    pub fn points(&self) -> Vec<PbPoint> {
        let axis = self.axis();
        let mut out = Vec::with_capacity(self.cells());
        for &y in &axis {
            for &x in &axis {
                out.push(PbPoint::new(vec![x, y]).expect("grid axis stays within [-1, 1]"));
            }
        }
        out
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.resolution, index / self.resolution)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplePool {
    /// Only appropriate (learned or unlearned) cells enter novelty/diversity.
    #[default]
    Appropriate,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Rollout length; `None` uses the longest training pattern.
    pub steps: Option<usize>,
    /// Learned/unlearned DTW threshold; `None` derives it from the training set.
    pub learned_threshold: Option<f64>,
    pub velocity_factor: f64,
    pub movement_floor_fraction: f64,
    pub iterations: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub pool: SamplePool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            steps: None,
            learned_threshold: None,
            velocity_factor: VELOCITY_FACTOR,
            movement_floor_fraction: MOVEMENT_FLOOR_FRACTION,
            iterations: 30,
            sample_size: 30,
            seed: 0,
            pool: SamplePool::Appropriate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub ix: usize,
    pub iy: usize,
    pub pb: [f64; 2],
    pub label: PatternLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassShare {
    pub class: PatternClass,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub label: String,
    /// Appropriate cells whose nearest training pattern is `label`.
    pub cells: usize,
    pub learned: usize,
}

/// Settings the sweep ran with, so a report can be reproduced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEcho {
    pub resolution: usize,
    pub steps: usize,
    pub learned_threshold: f64,
    pub rule: AppropriatenessRule,
    pub dtw: DtwConfig,
    pub sweep: SweepConfig,
    pub gamma: f64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub total: usize,
    pub classes: Vec<ClassShare>,
    pub appropriate_percent: f64,
    /// Learned share of the appropriate cells (0 when there are none).
    pub learned_fraction: f64,
    pub novelty: Option<Estimate>,
    pub diversity: Option<Estimate>,
    /// Why novelty/diversity are missing, if they are.
    pub sampling_note: Option<String>,
    pub regions: Vec<Region>,
    pub config: SweepEcho,
}

impl SweepReport {
    pub fn count(&self, class: PatternClass) -> usize {
        self.classes
            .iter()
            .find(|c| c.class == class)
            .map_or(0, |c| c.count)
    }

    pub fn percent(&self, class: PatternClass) -> f64 {
        self.classes
            .iter()
            .find(|c| c.class == class)
            .map_or(0.0, |c| c.percent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: GridSpec,
    pub steps: usize,
    pub learned_threshold: f64,
    pub cells: Vec<SweepCell>,
    pub report: SweepReport,
}

struct Resolved {
    steps: usize,
    threshold: f64,
    rule: AppropriatenessRule,
}

fn resolve(cp: &Checkpoint, config: &SweepConfig) -> Result<Resolved> {
    let steps = config.steps.unwrap_or_else(|| cp.default_steps());
    if steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "sweep needs at least 2 steps, got {steps}"
        )));
    }
    let refs = cp.reference_set()?;
    let threshold = match config.learned_threshold {
        Some(t) if t.is_finite() && t >= 0.0 => t,
        Some(t) => return Err(Error::InvalidArgument(format!("bad learned threshold {t}"))),
        None => default_learned_threshold(&refs)?,
    };
    // Generated actions live in decoded space, so the velocity and movement
    // baselines come from the training set as the codec represents it.
    let rule = AppropriatenessRule::with_factors(
        &training_stats(&refs),
        config.velocity_factor,
        config.movement_floor_fraction,
    );
    Ok(Resolved {
        steps,
        threshold,
        rule,
    })
}

pub fn sweep(cp: &Checkpoint, grid: GridSpec, config: &SweepConfig, exec: Exec) -> Result<SweepResult> {
    let grid = GridSpec::new(grid.resolution)?;
    let r = resolve(cp, config)?;
    let refs = cp.reference_set()?;
    let points = grid.points();
    let labels = exec
        .map_slice(&points, |pb| {
            let traj = cp.rollout(pb, r.steps)?;
            classify_pattern(&traj, &r.rule, &refs, r.threshold)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<SweepCell> = labels
        .into_iter()
        .zip(&points)
        .enumerate()
        .map(|(i, (label, pb))| {
            let (ix, iy) = grid.coords(i);
            SweepCell {
                ix,
                iy,
                pb: [pb.as_slice()[0], pb.as_slice()[1]],
                label,
            }
        })
        .collect();
    let report = summarize(cp, grid, &cells, config, exec)?;
    Ok(SweepResult {
        grid,
        steps: r.steps,
        learned_threshold: r.threshold,
        cells,
        report,
    })
}

/// Class shares, per-pattern regions and resampled novelty/diversity.
/// Sampled cells are regenerated from the checkpoint rather than stored.
pub fn summarize(
    cp: &Checkpoint,
    grid: GridSpec,
    cells: &[SweepCell],
    config: &SweepConfig,
    exec: Exec,
) -> Result<SweepReport> {
    if cells.len() != grid.cells() {
        return Err(Error::ShapeMismatch(format!(
            "{} cells for a {}x{} grid",
            cells.len(),
            grid.resolution,
            grid.resolution
        )));
    }
    let r = resolve(cp, config)?;
    let total = cells.len();
    let mut counts: BTreeMap<PatternClass, usize> = BTreeMap::new();
    for c in cells {
        *counts.entry(c.label.class).or_default() += 1;
    }
    let classes: Vec<ClassShare> = PatternClass::ALL
        .into_iter()
        .map(|class| {
            let count = counts.get(&class).copied().unwrap_or(0);
            ClassShare {
                class,
                count,
                percent: 100.0 * count as f64 / total as f64,
            }
        })
        .collect();
    let learned = counts
        .get(&PatternClass::AppropriateLearned)
        .copied()
        .unwrap_or(0);
    let appropriate = learned
        + counts
            .get(&PatternClass::AppropriateUnlearned)
            .copied()
            .unwrap_or(0);

    let regions = cp
        .training
        .labels()
        .map(|label| {
            let mine = cells.iter().filter(|c| c.label.nearest.as_deref() == Some(label));
            let (mut n, mut l) = (0, 0);
            for c in mine {
                n += 1;
                if c.label.class == PatternClass::AppropriateLearned {
                    l += 1;
                }
            }
            Region {
                label: label.to_string(),
                cells: n,
                learned: l,
            }
        })
        .collect();

    let pool: Vec<usize> = match config.pool {
        SamplePool::Appropriate => (0..total)
            .filter(|&i| cells[i].label.class.is_appropriate())
            .collect(),
        SamplePool::All => (0..total).collect(),
    };
    let (novelty, diversity, sampling_note) = match sampled_measures(cp, &pool, cells, &r, config, exec) {
        Ok((n, d)) => (Some(n), Some(d), None),
        Err(Error::InsufficientPatterns { needed, available }) => (
            None,
            None,
            Some(format!(
                "pool has {available} patterns, {needed} needed per sample"
            )),
        ),
        Err(e) => return Err(e),
    };

    Ok(SweepReport {
        total,
        classes,
        appropriate_percent: 100.0 * appropriate as f64 / total as f64,
        learned_fraction: if appropriate == 0 {
            0.0
        } else {
            learned as f64 / appropriate as f64
        },
        novelty,
        diversity,
        sampling_note,
        regions,
        config: SweepEcho {
            resolution: grid.resolution,
            steps: r.steps,
            learned_threshold: r.threshold,
            rule: r.rule,
            dtw: DtwConfig::default(),
            sweep: config.clone(),
            gamma: cp.config.gamma,
            epoch: cp.epoch,
        },
    })
}

fn sampled_measures(
    cp: &Checkpoint,
    pool: &[usize],
    cells: &[SweepCell],
    r: &Resolved,
    config: &SweepConfig,
    exec: Exec,
) -> Result<(Estimate, Estimate)> {
    if config.sample_size < 2 {
        return Err(Error::InsufficientPatterns {
            needed: 2,
            available: config.sample_size,
        });
    }
    let samples = draw_samples(pool.len(), config.iterations, config.sample_size, config.seed)?;
    // Regenerate only the cells that were drawn.
    let mut used: Vec<usize> = samples.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let slot: BTreeMap<usize, usize> = used.iter().enumerate().map(|(s, &p)| (p, s)).collect();
    let trajs: Vec<JointTrajectory> = exec
        .map_slice(&used, |&p| {
            let c = &cells[pool[p]];
            cp.rollout(&PbPoint::new(c.pb.to_vec())?, r.steps)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let remapped: Vec<Vec<usize>> = samples
        .iter()
        .map(|s| s.iter().map(|p| slot[p]).collect())
        .collect();
    let refs = cp.reference_set()?;
    let n = novelty_over(&trajs, &remapped, &refs, exec)?;
    let d = diversity_over(&trajs, &remapped, exec)?;
    Ok((n, d))
}

/// One JSON object per line, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub ix: usize,
    pub iy: usize,
    pub pb: [f64; 2],
    pub class: PatternClass,
    pub nearest: Option<String>,
    pub min_dtw: Option<f64>,
}

impl From<&SweepCell> for SweepRecord {
    fn from(c: &SweepCell) -> Self {
        Self {
            ix: c.ix,
            iy: c.iy,
            pb: c.pb,
            class: c.label.class,
            nearest: c.label.nearest.clone(),
            min_dtw: c.label.min_dtw,
        }
    }
}

impl From<SweepRecord> for SweepCell {
    fn from(r: SweepRecord) -> Self {
        Self {
            ix: r.ix,
            iy: r.iy,
            pb: r.pb,
            label: PatternLabel {
                class: r.class,
                nearest: r.nearest,
                min_dtw: r.min_dtw,
            },
        }
    }
}

pub fn write_records(path: impl AsRef<Path>, cells: &[SweepCell]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for c in cells {
        serde_json::to_writer(&mut out, &SweepRecord::from(c))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads records and checks they form a complete row-major square grid.
pub fn read_records(path: impl AsRef<Path>) -> Result<(GridSpec, Vec<SweepCell>)> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut cells = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SweepRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))?;
        cells.push(SweepCell::from(rec));
    }
    let res = (cells.len() as f64).sqrt().round() as usize;
    if res < 2 || res * res != cells.len() {
        return Err(Error::parse(
            path,
            format!("{} records do not form a square grid", cells.len()),
        ));
    }
    let grid = GridSpec::new(res)?;
    for (i, c) in cells.iter().enumerate() {
        if grid.coords(i) != (c.ix, c.iy) {
            return Err(Error::parse(
                path,
                format!("record {} is out of row-major order", i + 1),
            ));
        }
    }
    Ok((grid, cells))
}

pub const FLUCTUATING_COLOR: [u8; 3] = [128, 0, 160];
pub const NON_MOVING_COLOR: [u8; 3] = [255, 150, 200];
pub const PATTERN_PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [245, 130, 48],
    [0, 130, 200],
    [0, 128, 128],
    [170, 110, 40],
    [128, 128, 0],
    [0, 0, 128],
];
/// Distances at or beyond this multiple of the learned threshold render at minimum brightness.
pub const SIMILARITY_CLIP: f64 = 4.0;

/// 1 at zero distance, falling linearly to 0 at `SIMILARITY_CLIP × threshold`.
pub fn similarity(min_dtw: f64, threshold: f64) -> f64 {
    let scale = SIMILARITY_CLIP * threshold;
    if scale <= 0.0 {
        return if min_dtw <= 0.0 { 1.0 } else { 0.0 };
    }
    (1.0 - min_dtw / scale).clamp(0.0, 1.0)
}

pub fn pattern_color(k: usize) -> [u8; 3] {
    PATTERN_PALETTE[k % PATTERN_PALETTE.len()]
}

/// Blend from a pale tint of `base` (similarity 0) to `base` itself (similarity 1).
pub fn shade(base: [u8; 3], sim: f64) -> [u8; 3] {
    let s = 0.25 + 0.75 * sim.clamp(0.0, 1.0);
    let mut out = [0u8; 3];
    for (o, b) in out.iter_mut().zip(base) {
        *o = (255.0 * (1.0 - s) + b as f64 * s).round() as u8;
    }
    out
}

pub fn cell_color(label: &PatternLabel, labels: &[String], threshold: f64) -> [u8; 3] {
    match label.class {
        PatternClass::Fluctuating => FLUCTUATING_COLOR,
        PatternClass::NonMoving => NON_MOVING_COLOR,
        _ => {
            let k = label
                .nearest
                .as_deref()
                .and_then(|n| labels.iter().position(|l| l == n))
                .unwrap_or(0);
            shade(
                pattern_color(k),
                similarity(label.min_dtw.unwrap_or(f64::INFINITY), threshold),
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub name: String,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Legend {
    pub entries: Vec<LegendEntry>,
    pub x_axis: String,
    pub y_axis: String,
    /// Where `(PB1, PB2) = (-1, +1)` lands in the image.
    pub origin: String,
    pub brightness: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapImage {
    pub width: usize,
    pub height: usize,
    /// RGB, top row first. The top row is PB2 = +1.
    pub pixels: Vec<u8>,
    pub legend: Legend,
}

pub fn render_map(
    grid: GridSpec,
    cells: &[SweepCell],
    labels: &[String],
    threshold: f64,
) -> Result<MapImage> {
    if cells.len() != grid.cells() {
        return Err(Error::ShapeMismatch(format!(
            "{} cells for a {}x{} grid",
            cells.len(),
            grid.resolution,
            grid.resolution
        )));
    }
    let res = grid.resolution;
    let mut pixels = vec![0u8; res * res * 3];
    for c in cells {
        let row = res - 1 - c.iy;
        let at = (row * res + c.ix) * 3;
        pixels[at..at + 3].copy_from_slice(&cell_color(&c.label, labels, threshold));
    }
    let mut entries: Vec<LegendEntry> = labels
        .iter()
        .enumerate()
        .map(|(k, l)| LegendEntry {
            name: l.clone(),
            color: pattern_color(k),
        })
        .collect();
    entries.push(LegendEntry {
        name: PatternClass::Fluctuating.as_str().into(),
        color: FLUCTUATING_COLOR,
    });
    entries.push(LegendEntry {
        name: PatternClass::NonMoving.as_str().into(),
        color: NON_MOVING_COLOR,
    });
    Ok(MapImage {
        width: res,
        height: res,
        pixels,
        legend: Legend {
            entries,
            x_axis: "PB1 (left = -1, right = +1)".into(),
            y_axis: "PB2 (bottom = -1, top = +1)".into(),
            origin: "top-left pixel".into(),
            brightness: format!(
                "full colour at DTW 0, palest at {SIMILARITY_CLIP} x learned threshold ({threshold:.4})"
            ),
        },
    })
}

impl MapImage {
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        let mut encoder = png::Encoder::new(file, self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)?;
        out.flush()?;
        Ok(())
    }

    /// PNG unless the extension is `.ppm`; the legend goes next to it as `<stem>.legend.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ppm") => self.write_ppm(path)?,
            _ => self.write_png(path)?,
        }
        fs::write(
            path.with_extension("legend.json"),
            serde_json::to_string_pretty(&self.legend)?,
        )?;
        Ok(())
    }
}
