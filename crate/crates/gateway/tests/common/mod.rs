#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use hearth_core::fixture_a;
use hearth_core::flowcap::Salt;
use hearth_core::household::HouseholdDeps;
use hearth_core::time::DAY_MS;
use hearth_core::{Household, HouseholdConfig, ManualClock, Stage};
use hearth_gateway::{router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

pub const TOKEN: &str = "test-admin-token";

pub struct Harness {
    pub dir: TempDir,
    pub household: Arc<Household>,
    pub state: AppState,
    pub app: Router,
    pub clock: Arc<ManualClock>,
    pub pcap: PathBuf,
}

impl Harness {
    /// Fixture-A's fixtures loaded and its capture written, nothing replayed.
    pub fn new(stage: Stage) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fixtures = dir.path().join("fixture-a.tsv");
        std::fs::write(&fixtures, fixture_a::FIXTURES_TSV).unwrap();
        let pcap = dir.path().join("fixture-a.pcap");
        fixture_a::write_pcap(std::fs::File::create(&pcap).unwrap()).unwrap();
        let clock = Arc::new(ManualClock::new(fixture_a::START_MS + DAY_MS));
        let deps = HouseholdDeps {
            clock: clock.clone(),
            ..HouseholdDeps::new(Salt::new(b"gateway-tests".to_vec()).unwrap())
        };
        let household = Arc::new(
            Household::open(
                HouseholdConfig {
                    data_dir: Some(dir.path().join("data")),
                    fixtures_path: Some(fixtures),
                    stage: Some(stage),
                    ..Default::default()
                },
                deps,
            )
            .unwrap(),
        );
        let state = AppState::new(household.clone(), TOKEN);
        let app = router(state.clone());
        Self {
            dir,
            household,
            state,
            app,
            clock,
            pcap,
        }
    }

    /// Fixture-A replayed through the API.
    pub async fn fixture_a(stage: Stage) -> Self {
        let h = Self::new(stage);
        let body = serde_json::json!({
            "path": h.pcap,
            "device_map": fixture_a::DEVICE_MAP,
        });
        let (status, summary) = h.call("POST", "/v1/replay", Some(body)).await;
        assert_eq!(status, StatusCode::OK, "{summary}");
        h
    }

    pub async fn raw(&self, req: Request<Body>) -> (StatusCode, Bytes) {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes())
    }

    async fn send(&self, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let (status, bytes) = self.raw(req).await;
        let value = serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()));
        (status, value)
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        self.send(method, uri, body, None).await
    }

    pub async fn admin(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        self.send(method, uri, body, Some(TOKEN)).await
    }

    pub async fn get(&self, uri: &str) -> Value {
        let (status, v) = self.call("GET", uri, None).await;
        assert_eq!(status, StatusCode::OK, "GET {uri}: {v}");
        v
    }

    pub fn device_id(&self, name: &str) -> String {
        self.household
            .devices()
            .into_iter()
            .find(|d| d.friendly_name == name)
            .unwrap_or_else(|| panic!("no device named {name}"))
            .device_id
            .0
    }
}

/// Serialises a module result the way the API does.
pub fn canon<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap()
}
