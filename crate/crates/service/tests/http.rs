use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use boneforge::geometry::{load_mesh, save_mesh};
use boneforge::transform::exp_so3;
use boneforge::{parse_rig, RigidTransform, SkinnedSurface, Vec3};
use boneforge_service::protocol::TransformRecord;
use boneforge_service::{router, AppState, Catalog, ServerConfig, StateView};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> (axum::Router, Arc<AppState>) {
    let state = AppState::new(Catalog::builtin(0).unwrap(), ServerConfig::default());
    (router(state.clone()), state)
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_of(app: &axum::Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn create(app: &axum::Router, rig: &str) -> StateView {
    let (s, b) = call(app, Method::POST, "/sessions", Some(&json!({"rig_id": rig}).to_string())).await;
    assert_eq!(s, StatusCode::CREATED);
    serde_json::from_slice(&b).unwrap()
}

fn mesh_vertices(v: &Value) -> Vec<Vec3> {
    v["vertices"].as_array().unwrap().iter().map(|p| Vec3::new(p[0].as_f64().unwrap(), p[1].as_f64().unwrap(), p[2].as_f64().unwrap())).collect()
}

#[tokio::test]
async fn lists_builtin_rigs() {
    let (app, _) = app();
    let (s, v) = json_of(&app, Method::GET, "/rigs", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["v"], 1);
    let ids: Vec<&str> = v["rigs"].as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert!(ids.contains(&"synth-chain-3") && ids.contains(&"synth-quadruped"));
}

#[tokio::test]
async fn session_state_matches_loaded_rig() {
    let (app, state) = app();
    let view = create(&app, "synth-quadruped").await;
    let rig = &state.catalog.get("synth-quadruped").unwrap().rig;
    assert_eq!(view.bones.len(), rig.len());
    assert_eq!(view.max_depth, 2);
    let (s, v) = json_of(&app, Method::GET, &format!("/sessions/{}/state", view.session_id), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["bones"].as_array().unwrap().len(), rig.len());
    assert_eq!(v["dirty"], false);
}

#[tokio::test]
async fn http_errors() {
    let (app, _) = app();
    assert_eq!(call(&app, Method::GET, "/sessions/nope/state", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, Method::GET, "/sessions/nope/mesh", None).await.0, StatusCode::NOT_FOUND);
    let (s, v) = json_of(&app, Method::POST, "/sessions", Some(r#"{"rig_id":"unicorn"}"#)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "unknown_rig");
    assert_eq!(call(&app, Method::POST, "/sessions", Some(r#"{"rig":"x"}"#)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, Method::POST, "/sessions", Some("{")).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let id = create(&app, "synth-chain-3").await.session_id;
    let uri = format!("/sessions/{id}/mesh?pose=sideways");
    assert_eq!(call(&app, Method::GET, &uri, None).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let pose_uri = format!("/sessions/{id}/pose");
    let (s, v) = json_of(&app, Method::PUT, &pose_uri, Some(r#"{"locals": {"0": {"rotation": [1,0,0,0,1,0,0,0,2], "translation": [0,0,0]}}}"#)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "invalid_pose");
    let partial = r#"{"locals": {"0": {"rotation": [1,0,0,0,1,0,0,0,1], "translation": [0,0,0]}}}"#;
    assert_eq!(call(&app, Method::PUT, &pose_uri, Some(partial)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, Method::PUT, &pose_uri, Some("[]")).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, Method::GET, &format!("/sessions/{id}/state"), None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn canonical_mesh_is_returned_unchanged() {
    let (app, state) = app();
    let id = create(&app, "synth-chain-5").await.session_id;
    let canonical = &state.catalog.get("synth-chain-5").unwrap().canonical;
    let (s, v) = json_of(&app, Method::GET, &format!("/sessions/{id}/mesh?format=json"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(mesh_vertices(&v), canonical.vertices);
    let tris: Vec<[u32; 3]> = serde_json::from_value(v["triangles"].clone()).unwrap();
    assert_eq!(tris, canonical.triangles);

    let (s, bin) = call(&app, Method::GET, &format!("/sessions/{id}/mesh"), None).await;
    assert_eq!(s, StatusCode::OK);
    let n = canonical.vertices.len();
    let verts = boneforge_service::protocol::decode_vertices(&bin[..4 + 12 * n]).unwrap();
    for (a, b) in verts.iter().zip(&canonical.vertices) {
        assert_eq!(*a, [b.x as f32, b.y as f32, b.z as f32]);
    }
    let m = u32::from_le_bytes(bin[4 + 12 * n..8 + 12 * n].try_into().unwrap()) as usize;
    assert_eq!(m, canonical.triangles.len());
    assert_eq!(bin.len(), 8 + 12 * n + 12 * m);
}

#[tokio::test]
async fn edited_mesh_matches_cli_animate() {
    let (app, state) = app();
    let view = create(&app, "synth-chain-3").await;
    let id = &view.session_id;
    let entry = state.catalog.get("synth-chain-3").unwrap();
    let root = view.roots[0];
    let mut locals = serde_json::Map::new();
    for b in &view.bones {
        let mut rec = b.local;
        if b.id == root {
            let t = RigidTransform::new(exp_so3(&Vec3::new(0.0, 0.0, 30f64.to_radians())), Vec3::zeros());
            rec = TransformRecord::from(&(t * rec.to_transform().unwrap()));
        }
        locals.insert(b.id.to_string(), serde_json::to_value(rec).unwrap());
    }
    let body = json!({"locals": locals}).to_string();
    let (s, v) = json_of(&app, Method::PUT, &format!("/sessions/{id}/pose"), Some(&body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["dirty"], true);
    let (_, mesh) = json_of(&app, Method::GET, &format!("/sessions/{id}/mesh?format=json"), None).await;
    let served = mesh_vertices(&mesh);

    let (_, rig_doc) = call(&app, Method::GET, &format!("/sessions/{id}/rig"), None).await;
    let (rig, poses) = parse_rig(std::str::from_utf8(&rig_doc).unwrap()).unwrap();
    let skinned = SkinnedSurface::new(&entry.canonical, &rig, None).unwrap();
    assert_eq!(served, skinned.deform(&rig, &poses[0]).unwrap());
    assert_ne!(served, entry.canonical.vertices);

    let dir = tempfile::tempdir().unwrap();
    let rig_path = dir.path().join("rig.json");
    std::fs::write(&rig_path, &rig_doc).unwrap();
    let mesh_path = dir.path().join("canonical.ply");
    save_mesh(&mesh_path, &entry.canonical).unwrap();
    let out = dir.path().join("anim");
    let code = boneforge_cli::run([
        "boneforge", "animate", "--out", out.to_str().unwrap(), "--rig", rig_path.to_str().unwrap(), "--mesh",
        mesh_path.to_str().unwrap(), "--threads", "1",
    ]);
    assert_eq!(code, 0);
    let exported = load_mesh(out.join("frames/frame_0000.ply")).unwrap();
    assert_eq!(exported.vertices, served);
}
