//! Read-only HTTP API over a checkpoint and an optional sweep record file.
//!
//! - `GET  /api/info`
//! - `POST /api/generate` with `{"pb": [x, y], "steps": n}`
//! - `GET  /api/map?resolution=n`
//!
//! Errors are `{"error": code, "message": text}` with a 4xx status.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use novact::dataset::training_stats;
use novact::explorer::{cell_color, read_records, similarity, Legend, LegendEntry, SweepCell};
use novact::metrics::{classify_pattern, default_learned_threshold};
use novact::{
    AppropriatenessRule, Checkpoint, GridSpec, NetworkSpec, PatternClass, PatternLabel, PbPoint, TrainingSet,
};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub checkpoint: PathBuf,
    pub records: Option<PathBuf>,
    pub addr: String,
    pub max_steps: usize,
}

/// Everything the handlers need, computed once at startup.
pub struct AppState {
    checkpoint: Checkpoint,
    references: TrainingSet,
    rule: AppropriatenessRule,
    threshold: f64,
    max_steps: usize,
    labels: Vec<String>,
    sweep: Option<(GridSpec, Vec<SweepCell>)>,
}

impl AppState {
    pub fn new(
        checkpoint: Checkpoint,
        sweep: Option<(GridSpec, Vec<SweepCell>)>,
        max_steps: usize,
    ) -> novact::Result<Self> {
        if max_steps == 0 {
            return Err(novact::Error::InvalidArgument(
                "max steps must be at least 1".into(),
            ));
        }
        let references = checkpoint.reference_set()?;
        let rule = AppropriatenessRule::from_stats(&training_stats(&references));
        let threshold = default_learned_threshold(&references)?;
        let labels = checkpoint.training.labels().map(str::to_string).collect();
        Ok(Self {
            checkpoint,
            references,
            rule,
            threshold,
            max_steps,
            labels,
            sweep,
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/info", get(info))
        .route("/api/generate", post(generate))
        .route("/api/map", get(map))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(config: ServeConfig) -> anyhow::Result<()> {
    let checkpoint = Checkpoint::load(&config.checkpoint)
        .with_context(|| format!("loading checkpoint {}", config.checkpoint.display()))?;
    let sweep = match &config.records {
        Some(path) => Some(read_records(path).with_context(|| format!("loading {}", path.display()))?),
        None => None,
    };
    let state = Arc::new(AppState::new(checkpoint, sweep, config.max_steps)?);
    let listener = tokio::net::TcpListener::bind(&config.addr)
        .await
        .with_context(|| format!("binding {}", config.addr))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub message: String,
}

fn api_error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    let body = ApiError {
        error: code.to_string(),
        message: message.into(),
    };
    (status, Json(body)).into_response()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LearnedPb {
    pub label: String,
    pub pb: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InfoResponse {
    pub spec: NetworkSpec,
    pub gamma: f64,
    pub epoch: usize,
    pub loss: f64,
    pub joint_names: Vec<String>,
    pub sample_period_s: f64,
    pub patterns: Vec<LearnedPb>,
    pub default_steps: usize,
    pub max_steps: usize,
    pub learned_threshold: f64,
    pub sweep_resolution: Option<usize>,
}

async fn info(State(s): State<Arc<AppState>>) -> Json<InfoResponse> {
    let cp = &s.checkpoint;
    let patterns = s
        .labels
        .iter()
        .enumerate()
        .map(|(k, label)| LearnedPb {
            label: label.clone(),
            pb: cp.learned_pb(k).as_slice().to_vec(),
        })
        .collect();
    Json(InfoResponse {
        spec: cp.spec().clone(),
        gamma: cp.config.gamma,
        epoch: cp.epoch,
        loss: cp.loss,
        joint_names: cp.training.joint_names.clone(),
        sample_period_s: cp.training.sample_period_s,
        patterns,
        default_steps: cp.default_steps().min(s.max_steps),
        max_steps: s.max_steps,
        learned_threshold: s.threshold,
        sweep_resolution: s.sweep.as_ref().map(|(g, _)| g.resolution),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub pb: Vec<f64>,
    pub steps: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub pb: Vec<f64>,
    pub steps: usize,
    pub joint_names: Vec<String>,
    /// `steps` frames of joint angles in radians.
    pub trajectory: Vec<Vec<f64>>,
    pub label: PatternLabel,
}

async fn generate(State(s): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: GenerateRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return api_error(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    let dim = s.checkpoint.spec().pb_dim;
    if req.pb.len() != dim {
        return api_error(
            StatusCode::BAD_REQUEST,
            "bad_request",
            format!("pb needs {dim} components, got {}", req.pb.len()),
        );
    }
    let pb = match PbPoint::new(req.pb.clone()) {
        Ok(pb) => pb,
        Err(e) => return api_error(StatusCode::BAD_REQUEST, "pb_out_of_range", e.to_string()),
    };
    let steps = req
        .steps
        .unwrap_or_else(|| s.checkpoint.default_steps().min(s.max_steps));
    if steps == 0 || steps > s.max_steps {
        return api_error(
            StatusCode::BAD_REQUEST,
            "steps_out_of_range",
            format!("steps must lie in 1..={}, got {steps}", s.max_steps),
        );
    }
    let result = s
        .checkpoint
        .rollout(&pb, steps)
        .and_then(|traj| classify_pattern(&traj, &s.rule, &s.references, s.threshold).map(|l| (traj, l)));
    match result {
        Ok((traj, label)) => Json(GenerateResponse {
            pb: req.pb,
            steps,
            joint_names: s.checkpoint.training.joint_names.clone(),
            trajectory: traj.frames().map(<[f64]>::to_vec).collect(),
            label,
        })
        .into_response(),
        Err(e) => api_error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
pub struct MapQuery {
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    pub class: PatternClass,
    pub nearest: Option<String>,
    /// 1 = identical to the nearest training pattern, 0 = at or beyond the brightness clip.
    pub similarity: Option<f64>,
    pub color: [u8; 3],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MapResponse {
    pub resolution: usize,
    pub source_resolution: usize,
    /// Row-major, `iy * resolution + ix`, PB1 along x and PB2 along y, both from -1.
    pub cells: Vec<MapCell>,
    pub legend: Legend,
}

async fn map(State(s): State<Arc<AppState>>, Query(q): Query<MapQuery>) -> Response {
    let Some((grid, cells)) = &s.sweep else {
        return api_error(
            StatusCode::NOT_FOUND,
            "no_sweep",
            "no sweep record file is loaded",
        );
    };
    let source = grid.resolution;
    let res = q.resolution.unwrap_or(source);
    if res == 0 || res > source || source % res != 0 {
        return api_error(
            StatusCode::BAD_REQUEST,
            "bad_request",
            format!("resolution must divide the sweep resolution {source}, got {res}"),
        );
    }
    let factor = source / res;
    let mut out = Vec::with_capacity(res * res);
    for by in 0..res {
        for bx in 0..res {
            let block: Vec<&SweepCell> = (0..factor)
                .flat_map(|dy| (0..factor).map(move |dx| (by * factor + dy) * source + bx * factor + dx))
                .map(|i| &cells[i])
                .collect();
            out.push(downsample(&block, &s.labels, s.threshold));
        }
    }
    let mut entries: Vec<LegendEntry> = s
        .labels
        .iter()
        .enumerate()
        .map(|(k, l)| LegendEntry {
            name: l.clone(),
            color: novact::explorer::pattern_color(k),
        })
        .collect();
    entries.push(LegendEntry {
        name: PatternClass::Fluctuating.as_str().into(),
        color: novact::explorer::FLUCTUATING_COLOR,
    });
    entries.push(LegendEntry {
        name: PatternClass::NonMoving.as_str().into(),
        color: novact::explorer::NON_MOVING_COLOR,
    });
    Json(MapResponse {
        resolution: res,
        source_resolution: source,
        cells: out,
        legend: Legend {
            entries,
            x_axis: "PB1".into(),
            y_axis: "PB2".into(),
            origin: "cell 0 is (PB1, PB2) = (-1, -1)".into(),
            brightness: "similarity scales colour intensity".into(),
        },
    })
    .into_response()
}

/// Majority class of the block (ties go to the earlier class in `PatternClass::ALL`),
/// then the majority nearest label and mean similarity among the cells of that class.
fn downsample(block: &[&SweepCell], labels: &[String], threshold: f64) -> MapCell {
    let mut counts: BTreeMap<PatternClass, usize> = BTreeMap::new();
    for c in block {
        *counts.entry(c.label.class).or_default() += 1;
    }
    let class = PatternClass::ALL
        .into_iter()
        .max_by(|a, b| {
            let (ca, cb) = (counts.get(a).unwrap_or(&0), counts.get(b).unwrap_or(&0));
            // on equal counts prefer the earlier class
            ca.cmp(cb).then_with(|| b.cmp(a))
        })
        .expect("four classes");
    let members: Vec<&&SweepCell> = block.iter().filter(|c| c.label.class == class).collect();
    let mut near: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &members {
        if let Some(n) = c.label.nearest.as_deref() {
            *near.entry(n).or_default() += 1;
        }
    }
    let nearest = labels
        .iter()
        .filter_map(|l| near.get(l.as_str()).map(|&n| (l, n)))
        .fold(None::<(&String, usize)>, |best, (l, n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((l, n)),
        })
        .map(|(l, _)| l.clone());
    let dists: Vec<f64> = members.iter().filter_map(|c| c.label.min_dtw).collect();
    let min_dtw = (!dists.is_empty()).then(|| dists.iter().sum::<f64>() / dists.len() as f64);
    let label = PatternLabel {
        class,
        nearest: nearest.clone(),
        min_dtw,
    };
    MapCell {
        class,
        nearest,
        similarity: min_dtw.map(|d| similarity(d, threshold)),
        color: cell_color(&label, labels, threshold),
    }
}
