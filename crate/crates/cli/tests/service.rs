use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use pvss_cli::config::ServiceConfig;
use pvss_cli::service::{router, Service};
use pvss_cli::workspace::{self, DataDir, SearchRequest, State};
use pvss_core::feature_index::similarity;
use pvss_core::synth_world::{load_identities, WorldSpec};
use pvss_core::track_store::{TrackRef, TrackStore};

fn world(dir: &DataDir) {
    world_with(
        dir,
        WorldSpec {
            n_vehicles: 40,
            ..WorldSpec::default()
        },
    );
}

fn world_with(dir: &DataDir, spec: WorldSpec) {
    workspace::gen(dir, &spec).unwrap();
    let (params, _) = workspace::fit_fusion(&dir.train_dir(), &ServiceConfig::default()).unwrap();
    params.save(dir.fusion()).unwrap();
    workspace::learn_weights(dir, &dir.world_dir().join("graph.txt"), &dir.world_dir().join("transits.txt")).unwrap();
}

fn service(dir: &DataDir) -> (Arc<Service>, Router) {
    let config = ServiceConfig {
        data_dir: dir.root().to_path_buf(),
        k: 10,
        ..ServiceConfig::default()
    };
    let svc = Arc::new(Service::open(config).unwrap());
    (svc.clone(), router(svc))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn tracks_json(dir: &DataDir) -> Value {
    let store = TrackStore::load(dir.world_dir().join("tracks.txt")).unwrap();
    json!({ "tracks": store.iter().collect::<Vec<_>>() })
}

fn query() -> Value {
    json!({
        "query": {"track": {"camera_id": 2, "vehicle_id": 0}},
        "time_range": [0.0, 7200.0],
        "scope": {"hops": {"start": 2, "max_hops": 3}},
        "k": 5
    })
}

#[tokio::test]
async fn ingest_build_and_search_match_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = DataDir::new(tmp.path());
    world(&dir);
    let (svc, app) = service(&dir);

    // no index yet
    let (status, body) = call(&app, "POST", "/search", Some(query())).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["error"]["kind"], "conflict");

    let (status, body) = call(&app, "POST", "/ingest", Some(tracks_json(&dir))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (status, body) = call(&app, "POST", "/index/build", None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(dir.index().exists() && dir.tracks().exists());

    let (status, body) = call(&app, "POST", "/search", Some(query())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let records: Vec<Value> = body.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let last = records.last().unwrap();
    assert_eq!(last["type"], "final");

    // same list as a direct library call on the persisted state
    let config = ServiceConfig {
        data_dir: dir.root().to_path_buf(),
        k: 10,
        ..ServiceConfig::default()
    };
    let state = State::load(&dir, &config).unwrap();
    let req: SearchRequest = serde_json::from_value(query()).unwrap();
    let mut lines = String::new();
    workspace::run_search(&state, &req, &config, |r| lines.push_str(&r.line(Default::default()))).unwrap();
    assert_eq!(lines, body);

    let (status, text) = call(&app, "POST", "/search?format=text", Some(query())).await;
    assert_eq!(status, StatusCode::OK);
    assert!(text.lines().last().unwrap().starts_with("final list=["));
    assert_eq!(svc.snapshot().store.len(), state.store.len());
}

#[tokio::test]
async fn request_errors_map_to_statuses() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = DataDir::new(tmp.path());
    world(&dir);
    let (_, app) = service(&dir);
    call(&app, "POST", "/ingest", Some(tracks_json(&dir))).await;
    call(&app, "POST", "/index/build", None).await;

    let (status, _) = call(&app, "POST", "/search", Some(json!({"query": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let mut bad_range = query();
    bad_range["time_range"] = json!([100.0, 0.0]);
    let (status, _) = call(&app, "POST", "/search", Some(bad_range)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let mut unknown = query();
    unknown["query"] = json!({"track": {"camera_id": 2, "vehicle_id": 9999}});
    let (status, _) = call(&app, "POST", "/search", Some(unknown)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = call(&app, "POST", "/pivot", Some(json!({"track": {"camera_id": 99, "vehicle_id": 0}, "window_s": 60.0, "max_hops": 1}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // a duplicate track rejects the whole batch
    let before = call(&app, "GET", "/cameras", None).await.1;
    let (status, _) = call(&app, "POST", "/ingest", Some(tracks_json(&dir))).await;
    assert!(status.is_client_error(), "{status}");
    assert_eq!(call(&app, "GET", "/cameras", None).await.1, before);
}

#[tokio::test]
async fn pivot_graph_cameras_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = DataDir::new(tmp.path());
    world(&dir);
    let (_, app) = service(&dir);
    call(&app, "POST", "/ingest", Some(tracks_json(&dir))).await;
    call(&app, "POST", "/index/build", None).await;

    let (status, body) = call(
        &app,
        "POST",
        "/pivot",
        Some(json!({"track": {"camera_id": 2, "vehicle_id": 0}, "window_s": 1800.0, "max_hops": 1})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let triplet: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(triplet["query"], json!({"track": {"camera_id": 2, "vehicle_id": 0}}));
    assert_eq!(triplet["scope"], json!({"hops": {"start": 2, "max_hops": 1}}));
    let t = triplet["time_range"].as_array().unwrap();
    assert_eq!(t[0].as_f64().unwrap() + 1800.0, t[1].as_f64().unwrap());

    let (status, body) = call(&app, "GET", "/cameras", None).await;
    assert_eq!(status, StatusCode::OK);
    let cams: Vec<Value> = serde_json::from_str(&body).unwrap();
    assert_eq!(cams.len(), 20);
    let total: u64 = cams.iter().map(|c| c["tracks"].as_u64().unwrap()).sum();
    assert!(total > 0);

    let (status, body) = call(&app, "GET", "/graph", None).await;
    assert_eq!(status, StatusCode::OK);
    let g: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(g["nodes"].as_array().unwrap().len(), 20);

    let (status, body) = call(&app, "GET", "/eval/report", None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body.lines().count(), 3);
    let (status, text) = call(&app, "GET", "/eval/report?format=text", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(text.contains("App+Plate"));
    assert!(dir.report_lines().exists());
}

async fn ready(dir: &DataDir) -> Router {
    let (_, app) = service(dir);
    assert_eq!(call(&app, "POST", "/ingest", Some(tracks_json(dir))).await.0, StatusCode::OK);
    assert_eq!(call(&app, "POST", "/index/build", None).await.0, StatusCode::OK);
    app
}

fn final_list(body: &str) -> Vec<Value> {
    let last: Value = serde_json::from_str(body.lines().last().unwrap()).unwrap();
    assert_eq!(last["type"], "final");
    last["list"]["entries"].as_array().unwrap().clone()
}

#[tokio::test]
async fn exhaustive_search_matches_brute_force_top_ten() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = DataDir::new(tmp.path());
    world(&dir);
    let app = ready(&dir).await;
    let store = TrackStore::load(dir.world_dir().join("tracks.txt")).unwrap();
    let pooled = |t: TrackRef| store.get(t).unwrap().appearance_feature.clone();

    for q in [TrackRef::new(0, 0), TrackRef::new(3, 1), TrackRef::new(7, 2)] {
        let req = json!({
            "query": {"track": q},
            "time_range": [0.0, 1e9],
            "scope": {"hops": {"start": q.camera_id, "max_hops": 99}},
            "k": 10, "mode": "appearance", "exhaustive": true
        });
        let (status, body) = call(&app, "POST", "/search", Some(req)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let got: Vec<(TrackRef, f64)> = final_list(&body)
            .iter()
            .map(|e| (serde_json::from_value(e["track"].clone()).unwrap(), e["score"].as_f64().unwrap()))
            .collect();

        let qv = pooled(q);
        let mut all: Vec<(TrackRef, f64)> = store
            .iter()
            .map(|m| m.track_ref())
            .filter(|t| *t != q)
            .map(|t| (t, similarity(&qv, &pooled(t)).unwrap()))
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(10);
        assert_eq!(got, all, "query {q}");
    }
}

#[tokio::test]
async fn pivot_triplet_finds_the_planted_next_hop() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = DataDir::new(tmp.path());
    world_with(
        &dir,
        WorldSpec {
            n_vehicles: 60,
            ..WorldSpec::default().noiseless()
        },
    );
    let app = ready(&dir).await;
    let store = TrackStore::load(dir.world_dir().join("tracks.txt")).unwrap();
    let identities = load_identities(dir.truth()).unwrap();
    let mut paths: std::collections::BTreeMap<u32, Vec<TrackRef>> = Default::default();
    for (t, id) in &identities {
        paths.entry(*id).or_default().push(*t);
    }
    let time = |t: &TrackRef| store.get(*t).unwrap().timestamp_s;

    let mut checked = 0;
    for path in paths.values_mut() {
        path.sort_by(|a, b| time(a).total_cmp(&time(b)));
        let Some([from, next]) = path.get(..2).map(|p| [p[0], p[1]]) else { continue };
        let (_, body) = call(&app, "POST", "/pivot", Some(json!({"track": from, "window_s": 1800.0, "max_hops": 1}))).await;
        let mut req: Value = serde_json::from_str(&body).unwrap();
        // only unambiguous cases: the next sighting is the vehicle's only one
        // in the pivot's scope
        let (_, g) = call(&app, "GET", "/graph", None).await;
        let g: Value = serde_json::from_str(&g).unwrap();
        let neighbors: Vec<u32> = g["edges"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|e| e["from"] == from.camera_id)
            .map(|e| e["to"].as_u64().unwrap() as u32)
            .collect();
        let in_scope: Vec<&TrackRef> = path[1..]
            .iter()
            .filter(|t| time(t) - time(&from) <= 1800.0 && neighbors.contains(&t.camera_id))
            .collect();
        if in_scope != [&next] {
            continue;
        }
        req["k"] = json!(5);
        req["exclude_query_camera"] = json!(true);
        let (status, body) = call(&app, "POST", "/search", Some(req)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let top: TrackRef = serde_json::from_value(final_list(&body)[0]["track"].clone()).unwrap();
        assert_eq!(top, next, "pivot from {from}");
        checked += 1;
        if checked == 10 {
            break;
        }
    }
    assert_eq!(checked, 10);
}

#[tokio::test]
async fn scope_without_candidates_streams_empty_lists() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = DataDir::new(tmp.path());
    world(&dir);
    let app = ready(&dir).await;
    let mut req = query();
    req["time_range"] = json!([1e8, 1e8 + 10.0]);
    let (status, body) = call(&app, "POST", "/search", Some(req)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let records: Vec<Value> = body.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(records.len() >= 2);
    let mut layer = -1;
    for r in &records[..records.len() - 1] {
        assert_eq!(r["type"], "snapshot");
        assert!(r["list"]["entries"].as_array().unwrap().is_empty());
        let l = r["layer"].as_i64().unwrap();
        assert!(l > layer);
        layer = l;
    }
    assert!(final_list(&body).is_empty());

    // no cameras at all is a malformed triplet
    let mut req = query();
    req["scope"] = json!({"cameras": []});
    assert_eq!(call(&app, "POST", "/search", Some(req)).await.0, StatusCode::BAD_REQUEST);
}
