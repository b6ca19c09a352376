//! HTTP API exercised in-process.

use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use novact::dataset::{synthesize_boxing_set, training_stats};
use novact::explorer::sweep;
use novact::metrics::{classify_pattern, default_learned_threshold};
use novact::trainer::train_with;
use novact::{
    AppropriatenessRule, Checkpoint, Exec, GridSpec, NetworkSpec, PbPoint, SweepConfig, SweepResult,
    SynthConfig, TrainingConfig,
};
use novact_cli::service::{router, AppState};

fn checkpoint() -> &'static Checkpoint {
    static CP: OnceLock<Checkpoint> = OnceLock::new();
    CP.get_or_init(|| {
        let set = synthesize_boxing_set(&SynthConfig {
            steps: 20,
            ..Default::default()
        })
        .unwrap();
        let config = TrainingConfig {
            epochs: 30,
            seed: 4,
            ..Default::default()
        };
        train_with(&set, &NetworkSpec::default(), &config, Exec::Parallel, |_| {})
            .unwrap()
            .0
    })
}

fn swept() -> &'static SweepResult {
    static SW: OnceLock<SweepResult> = OnceLock::new();
    SW.get_or_init(|| {
        let config = SweepConfig {
            iterations: 2,
            sample_size: 3,
            ..Default::default()
        };
        sweep(checkpoint(), GridSpec::new(4).unwrap(), &config, Exec::Parallel).unwrap()
    })
}

fn app(with_sweep: bool) -> axum::Router {
    let records = with_sweep.then(|| (swept().grid, swept().cells.clone()));
    router(Arc::new(
        AppState::new(checkpoint().clone(), records, 50).unwrap(),
    ))
}

async fn call(app: axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(body: &str) -> Request<Body> {
    Request::post("/api/generate")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn info_lists_learned_pbs() {
    let (status, v) = call(app(false), get("/api/info")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["patterns"].as_array().unwrap().len(), 6);
    assert_eq!(v["joint_names"].as_array().unwrap().len(), 8);
    assert_eq!(v["max_steps"], 50);
    assert_eq!(v["default_steps"], 20);
    assert!(v["sweep_resolution"].is_null());
    let pb = checkpoint().learned_pb(0);
    assert_eq!(v["patterns"][0]["pb"][0].as_f64().unwrap(), pb.as_slice()[0]);
}

#[tokio::test]
async fn generate_matches_library() {
    let (status, v) = call(app(false), post(r#"{"pb": [0.3, -0.7], "steps": 12}"#)).await;
    assert_eq!(status, StatusCode::OK);
    let cp = checkpoint();
    let pb = PbPoint::new(vec![0.3, -0.7]).unwrap();
    let traj = cp.rollout(&pb, 12).unwrap();
    let rows = v["trajectory"].as_array().unwrap();
    assert_eq!(rows.len(), 12);
    for (t, row) in rows.iter().enumerate() {
        let row: Vec<f64> = row
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        assert_eq!(row, traj.frame(t));
    }
    let refs = cp.reference_set().unwrap();
    let rule = AppropriatenessRule::from_stats(&training_stats(&refs));
    let label = classify_pattern(&traj, &rule, &refs, default_learned_threshold(&refs).unwrap()).unwrap();
    assert_eq!(v["label"], serde_json::to_value(&label).unwrap());

    let (_, again) = call(app(false), post(r#"{"pb": [0.3, -0.7], "steps": 12}"#)).await;
    assert_eq!(again, v);
}

#[tokio::test]
async fn generate_single_step_and_default_steps() {
    let (status, v) = call(app(false), post(r#"{"pb": [0, 0], "steps": 1}"#)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["trajectory"].as_array().unwrap().len(), 1);
    let (status, v) = call(app(false), post(r#"{"pb": [1, -1]}"#)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["steps"], 20);
}

#[tokio::test]
async fn generate_rejects_bad_input() {
    for (body, code) in [
        (r#"{"pb": [1.5, 0]}"#, "pb_out_of_range"),
        (r#"{"pb": [0]}"#, "bad_request"),
        (r#"{"pb": [0, 0], "steps": 0}"#, "steps_out_of_range"),
        (r#"{"pb": [0, 0], "steps": 51}"#, "steps_out_of_range"),
        ("not json", "bad_request"),
    ] {
        let (status, v) = call(app(false), post(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(v["error"], code, "{body}");
    }
}

#[tokio::test]
async fn map_without_records_is_not_found() {
    let (status, v) = call(app(false), get("/api/map")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "no_sweep");
}

#[tokio::test]
async fn map_passes_records_through() {
    let (status, v) = call(app(true), get("/api/map")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["resolution"], 4);
    let cells = v["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 16);
    for (cell, rec) in cells.iter().zip(&swept().cells) {
        assert_eq!(cell["class"], serde_json::to_value(rec.label.class).unwrap());
        assert_eq!(cell["nearest"], json!(rec.label.nearest));
    }
    assert_eq!(v["legend"]["entries"].as_array().unwrap().len(), 8);
}

#[tokio::test]
async fn map_downsamples_by_majority() {
    let (status, v) = call(app(true), get("/api/map?resolution=2")).await;
    assert_eq!(status, StatusCode::OK);
    let cells = v["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 4);
    let src = &swept().cells;
    for (b, cell) in cells.iter().enumerate() {
        let (bx, by) = (b % 2, b / 2);
        let block: Vec<_> = [(0, 0), (1, 0), (0, 1), (1, 1)]
            .iter()
            .map(|(dx, dy)| &src[(2 * by + dy) * 4 + 2 * bx + dx].label.class)
            .collect();
        let class: novact::PatternClass = serde_json::from_value(cell["class"].clone()).unwrap();
        let n = block.iter().filter(|&&&c| c == class).count();
        assert!(block
            .iter()
            .all(|&&c| block.iter().filter(|&&&d| d == c).count() <= n));
    }

    let (status, v) = call(app(true), get("/api/map?resolution=3")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "bad_request");
}
