use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sketchxai_app::service::{router, AppState, SampleSource};
use sketchxai_core::model::ModelConfig;
use sketchxai_core::sli::Frame;
use sketchxai_core::{run_sli, synth, Checkpoint, Point, Sketch, SliConfig, Stroke, TaskKind};
use tower::ServiceExt;

fn model() -> Checkpoint {
    let cats: Vec<String> = synth::SYNTH_CATEGORIES.iter().map(|s| s.to_string()).collect();
    Checkpoint::new(ModelConfig::micro(cats.len()), cats, 11).unwrap()
}

fn state() -> Arc<AppState> {
    AppState::new(model(), "test".into(), SampleSource::Synthetic)
}

fn sketch() -> Sketch {
    Sketch::new(
        vec![
            Stroke::new(vec![Point::new(-0.5, -0.5), Point::new(0.5, -0.4), Point::new(0.3, 0.2)]),
            Stroke::new(vec![Point::new(0.0, 0.5), Point::new(0.2, 0.7)]),
            Stroke::new(vec![Point::new(-0.3, 0.1), Point::new(-0.6, 0.4), Point::new(-0.2, 0.8)]),
        ],
        Some(2),
    )
}

fn sketch_json() -> Value {
    json!({ "strokes": sketch().strokes, "label": 2 })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn probs(v: &Value) -> Vec<f64> {
    v["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_f64().unwrap())
        .collect()
}

/// Polls until the run finishes and returns all frames.
async fn collect_frames(app: &Router, id: &str) -> (Vec<Frame>, Value) {
    let mut frames: Vec<Frame> = Vec::new();
    loop {
        let uri = format!("/sli/{id}/frames?from={}&wait_ms=2000", frames.len());
        let (status, body) = call(app, "GET", &uri, None).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["from"].as_u64().unwrap() as usize, frames.len());
        let batch: Vec<Frame> = serde_json::from_value(body["frames"].clone()).unwrap();
        // append-consistent: the batch continues exactly where we left off
        for (i, f) in batch.iter().enumerate() {
            assert_eq!(f.t, frames.len() + i);
        }
        frames.extend(batch);
        assert_eq!(body["next"].as_u64().unwrap() as usize, frames.len());
        match body["status"].as_str().unwrap() {
            "done" | "failed" => return (frames, body),
            _ => {}
        }
    }
}

#[tokio::test]
async fn categories_lists_checkpoint_classes() {
    let app = router(state());
    let (status, body) = call(&app, "GET", "/categories", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["categories"].as_array().unwrap().len(), 10);
    assert_eq!(body["checkpoint_id"], "test");
}

#[tokio::test]
async fn classify_returns_a_distribution() {
    let app = router(state());
    let (status, body) = call(&app, "POST", "/classify", Some(json!({ "sketch": sketch_json() }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let p = probs(&body);
    assert_eq!(p.len(), 10);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    let expected = model().classify_sketch(&sketch()).unwrap();
    assert_eq!(p, expected.probabilities);
    assert_eq!(body["predicted"].as_u64().unwrap() as usize, expected.predicted());
}

#[tokio::test]
async fn whatif_without_moves_matches_classify() {
    let app = router(state());
    let (_, classified) = call(&app, "POST", "/classify", Some(json!({ "sketch": sketch_json() }))).await;
    let (s1, unmoved) = call(&app, "POST", "/whatif", Some(json!({ "sketch": sketch_json(), "moves": [] }))).await;
    assert_eq!(s1, StatusCode::OK);
    assert_eq!(probs(&unmoved), probs(&classified));

    // moving a stroke to where it already starts is also the identity
    let first = sketch().strokes[1].first().unwrap();
    let (_, same) = call(
        &app,
        "POST",
        "/whatif",
        Some(json!({ "sketch": sketch_json(), "moves": [{ "stroke": 1, "to": first }] })),
    )
    .await;
    let d: f64 = probs(&same).iter().zip(probs(&classified)).map(|(a, b)| (a - b).abs()).sum();
    assert!(d < 1e-6, "{d}");
}

#[tokio::test]
async fn whatif_move_equals_classifying_the_moved_sketch() {
    let app = router(state());
    let to = Point::new(0.6, -0.7);
    let (status, moved) = call(
        &app,
        "POST",
        "/whatif",
        Some(json!({ "sketch": sketch_json(), "moves": [{ "stroke": 2, "to": to }] })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let mut s = sketch();
    let by = to.sub(s.strokes[2].first().unwrap());
    s.strokes[2] = s.strokes[2].translate(by);
    let expected = model().classify_sketch(&s).unwrap().probabilities;
    for (a, b) in probs(&moved).iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[tokio::test]
async fn errors_carry_status_and_field_path() {
    let app = router(state());
    let (status, body) = call(
        &app,
        "POST",
        "/whatif",
        Some(json!({ "sketch": sketch_json(), "moves": [{ "stroke": 9, "to": [0, 0] }] })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["path"], "moves[0].stroke");

    let bad_label = json!({ "sketch": { "strokes": sketch().strokes, "label": 40 } });
    let (status, body) = call(&app, "POST", "/classify", Some(bad_label)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["path"], "sketch.label");

    let unknown = json!({ "sketch": { "strokes": sketch().strokes, "label": "zebra" } });
    let (status, body) = call(&app, "POST", "/classify", Some(unknown)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["kind"], "not_found");

    let (status, body) = call(&app, "POST", "/classify", Some(json!({ "sketch": { "strokes": "no" } }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["path"], "body");

    let (status, _) = call(&app, "GET", "/sli/nope/frames", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "DELETE", "/sli/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/samples?category=zebra", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = call(
        &app,
        "POST",
        "/sli",
        Some(json!({ "sketch": sketch_json(), "config": { "task": "transfer" } })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["path"], "target");

    let (status, body) = call(
        &app,
        "POST",
        "/sli",
        Some(json!({ "sketch": sketch_json(), "config": { "steps": 0 } })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["path"], "config.steps");
}

#[tokio::test]
async fn samples_come_from_the_generator() {
    let app = router(state());
    let (status, body) = call(&app, "GET", "/samples?category=star&n=12", None).await;
    assert_eq!(status, StatusCode::OK);
    let items = body["samples"].as_array().unwrap();
    assert_eq!(items.len(), 12);
    for item in items {
        let strokes = item["sketch"]["strokes"].as_array().unwrap();
        assert!(!strokes.is_empty());
    }
    // deterministic per request
    let (_, again) = call(&app, "GET", "/samples?category=star&n=12", None).await;
    assert_eq!(body, again);
}

#[tokio::test]
async fn samples_from_a_dataset_may_be_empty() {
    let mut per_class = vec![Vec::new(); 10];
    per_class[0].push(sketchxai_core::dataset::Sample { id: 5, sketch: sketch() });
    let app = router(AppState::new(model(), "d".into(), SampleSource::Dataset(per_class)));
    let (_, body) = call(&app, "GET", "/samples?category=bed&n=4", None).await;
    assert_eq!(body["samples"].as_array().unwrap().len(), 1);
    assert_eq!(body["samples"][0]["id"], 5);
    let (status, body) = call(&app, "GET", "/samples?category=chair", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["samples"].as_array().unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sli_run_streams_all_frames() {
    let app = router(state());
    let cfg = json!({ "steps": 20, "seed": 3 });
    let (status, started) = call(&app, "POST", "/sli", Some(json!({ "sketch": sketch_json(), "config": cfg }))).await;
    assert_eq!(status, StatusCode::OK, "{started}");
    let id = started["run_id"].as_str().unwrap().to_owned();
    let (frames, last) = collect_frames(&app, &id).await;
    assert_eq!(frames.len(), 21);
    assert_eq!(last["status"], "done");
    assert_eq!(last["header"]["target_label"], 2);

    // re-reading from an offset returns the same suffix
    let (_, tail) = call(&app, "GET", &format!("/sli/{id}/frames?from=15"), None).await;
    let tail: Vec<Frame> = serde_json::from_value(tail["frames"].clone()).unwrap();
    assert_eq!(tail, frames[15..]);

    let (status, body) = call(&app, "DELETE", &format!("/sli/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["cancelled"], true);
    let (status, _) = call(&app, "GET", &format!("/sli/{id}/frames"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_runs_match_sequential_runs() {
    let st = state();
    let app = router(st.clone());
    let configs = [
        SliConfig {
            steps: 30,
            seed: 5,
            ..SliConfig::default()
        },
        SliConfig {
            task: TaskKind::Transfer,
            target: Some(7),
            steps: 30,
            seed: 9,
            ..SliConfig::default()
        },
        SliConfig {
            steps: 30,
            seed: 6,
            ..SliConfig::default()
        },
    ];
    let mut ids = Vec::new();
    for cfg in &configs {
        let (status, started) = call(&app, "POST", "/sli", Some(json!({ "sketch": sketch_json(), "config": cfg }))).await;
        assert_eq!(status, StatusCode::OK, "{started}");
        ids.push(started["run_id"].as_str().unwrap().to_owned());
    }
    let results = futures_join(&app, &ids).await;
    for (cfg, frames) in configs.iter().zip(results) {
        let expected = run_sli(&st.model, &sketch(), cfg).unwrap();
        assert_eq!(frames, expected.frames);
    }
}

async fn futures_join(app: &Router, ids: &[String]) -> Vec<Vec<Frame>> {
    let handles: Vec<_> = ids
        .iter()
        .map(|id| {
            let app = app.clone();
            let id = id.clone();
            tokio::spawn(async move { collect_frames(&app, &id).await.0 })
        })
        .collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn long_poll_times_out_on_finished_cursor() {
    let app = router(state());
    let (_, started) = call(
        &app,
        "POST",
        "/sli",
        Some(json!({ "sketch": sketch_json(), "config": { "steps": 3 } })),
    )
    .await;
    let id = started["run_id"].as_str().unwrap();
    let (frames, _) = collect_frames(&app, id).await;
    assert_eq!(frames.len(), 4);
    // past the end of a finished run: returns immediately with nothing new
    let t = std::time::Instant::now();
    let (_, body) = call(&app, "GET", &format!("/sli/{id}/frames?from=4&wait_ms=5000"), None).await;
    assert!(t.elapsed() < Duration::from_secs(2));
    assert!(body["frames"].as_array().unwrap().is_empty());
    assert_eq!(body["next"], 4);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn idle_sessions_expire() {
    let st = state().with_idle_timeout(Duration::from_millis(50));
    let app = router(st.clone());
    let (_, started) = call(
        &app,
        "POST",
        "/sli",
        Some(json!({ "sketch": sketch_json(), "config": { "steps": 2 } })),
    )
    .await;
    let id = started["run_id"].as_str().unwrap();
    assert_eq!(st.session_count(), 1);
    assert_eq!(st.expire_idle(), 0);
    tokio::time::sleep(Duration::from_millis(120)).await;
    assert_eq!(st.expire_idle(), 1);
    let (status, _) = call(&app, "GET", &format!("/sli/{id}/frames"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
