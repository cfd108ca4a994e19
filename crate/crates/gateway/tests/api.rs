mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::{canon, Harness};
use hearth_core::exposure::SeriesFilter;
use hearth_core::fixture_a::{self, PHONE_NAME, TV_NAME};
use hearth_core::flowcap::DeviceId;
use hearth_core::resolver::HomeRegion;
use hearth_core::store::FlowQuery;
use hearth_core::{Stage, TimeWindow};
use serde_json::{json, Value};

#[tokio::test]
async fn read_routes_equal_module_results() {
    let h = Harness::fixture_a(Stage::Display).await;
    let hh = &h.household;
    let all = TimeWindow::all();
    let none = SeriesFilter::default();
    assert_eq!(h.get("/v1/profile").await, canon(&hh.profile(&none, &all)));
    assert_eq!(h.get("/v1/buckets").await, canon(&hh.buckets(&none, &all)));
    let span = TimeWindow::new(fixture_a::START_MS, fixture_a::START_MS + 86_400_000).unwrap();
    assert_eq!(
        h.get(&format!(
            "/v1/timeseries?width_ms=3600000&start_ms={}&end_ms={}",
            span.start_ms, span.end_ms
        ))
        .await,
        canon(&hh.timeseries(&none, &span, 3_600_000).unwrap())
    );
    // Without a window the series covers the stored data.
    let points = h.get("/v1/timeseries").await;
    let total: u64 = points
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["byte_count"].as_u64().unwrap())
        .sum();
    assert_eq!(total, fixture_a::OUTBOUND_BYTES);
    assert_eq!(
        h.get("/v1/report?top_n=3&home_region=EU").await,
        canon(&hh.stats_report(&all, 3, Some(&HomeRegion::eu())).unwrap())
    );
    assert_eq!(h.get("/v1/devices").await, canon(&hh.devices()));
    assert_eq!(h.get("/v1/companies").await, canon(&hh.companies()));
    assert_eq!(h.get("/v1/directives").await, canon(&hh.directives()));
    assert_eq!(h.get("/v1/ruleset").await, canon(&*hh.ruleset()));
    assert_eq!(h.get("/v1/stage").await, canon(&hh.stage()));
    assert_eq!(h.get("/v1/redactions").await, canon(&hh.audit_log()));

    let phone = h.device_id(PHONE_NAME);
    let f = SeriesFilter {
        device: Some(DeviceId(phone.clone())),
        company: Some("A".into()),
    };
    assert_eq!(
        h.get(&format!("/v1/profile?device={phone}&company=A")).await,
        canon(&hh.profile(&f, &all))
    );

    let page = h.get("/v1/flows?limit=5&offset=2").await;
    let flows = hh.flows(&FlowQuery::default());
    assert_eq!(page["total"], flows.len());
    assert_eq!(page["flows"], canon(&flows[2..7].to_vec()));

    let start = fixture_a::START_MS;
    let mid = start + 3 * 3_600_000;
    let uri = format!(
        "/v1/compare?a_start_ms={start}&a_end_ms={mid}&b_start_ms={mid}&b_end_ms={}",
        mid + 3 * 3_600_000
    );
    let cmp = hh.compare_periods(
        &TimeWindow::new(start, mid).unwrap(),
        &TimeWindow::new(mid, mid + 3 * 3_600_000).unwrap(),
        &none,
    );
    assert_eq!(h.get(&uri).await, canon(&cmp));
}

#[tokio::test]
async fn fixture_a_report_over_http() {
    let h = Harness::fixture_a(Stage::Display).await;
    let r = h.get("/v1/report?top_n=3&home_region=EU").await;
    assert_eq!(r["top_n_share"], json!(0.74));
    assert_eq!(r["out_of_region_share"], json!(0.54));
    assert_eq!(r["total_bytes"], json!(fixture_a::OUTBOUND_BYTES));
    assert_eq!(r["distinct_devices"], json!(2));
    assert_eq!(r["distinct_companies"], json!(6));
}

#[tokio::test]
async fn stage_gate_refusal_is_structured() {
    let h = Harness::fixture_a(Stage::Curriculum).await;
    let body = json!({"device_scope": {"kind": "all"}, "company_scope": {"kind": "company", "name": "A"}});
    let (status, err) = h.call("POST", "/v1/directives", Some(body)).await;
    assert_eq!(status, StatusCode::LOCKED);
    assert_eq!(err["error"], "stage_gate");
    assert_eq!(err["required_stage"], 3);
    assert_eq!(err["current_stage"], 2);
    assert_eq!(err["feature"], "controls");
    assert!(h.household.directives().is_empty());
}

#[tokio::test]
async fn set_stage_needs_the_admin_token() {
    let h = Harness::new(Stage::Display);
    let (status, err) = h.call("PUT", "/v1/stage", Some(json!({"stage": 2}))).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(err["error"], "unauthorized");
    let req = Request::put("/v1/stage")
        .header("authorization", "Bearer nope")
        .header("content-type", "application/json")
        .body(Body::from(r#"{"stage":2}"#))
        .unwrap();
    assert_eq!(h.raw(req).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(h.household.stage().stage(), Stage::Display);

    // 1 -> 2 unlocks the curriculum.
    let (status, cfg) = h.admin("PUT", "/v1/stage", Some(json!({"stage": 2}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(cfg["stage"], 2);
    assert!(cfg["features"].as_array().unwrap().contains(&json!("curriculum")));
    let (status, _) = h.call("GET", "/v1/curriculum/internet-basics", None).await;
    assert_eq!(status, StatusCode::OK);

    // 2 -> 1 needs the override.
    let (status, err) = h.admin("PUT", "/v1/stage", Some(json!({"stage": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT, "{err}");
    let (status, _) = h
        .admin("PUT", "/v1/stage", Some(json!({"stage": 1, "allow_regression": true})))
        .await;
    assert_eq!(status, StatusCode::OK);

    // 1 -> 3 skips forward.
    let (status, cfg) = h.admin("PUT", "/v1/stage", Some(json!({"stage": 3}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(cfg["features"], json!(["display", "curriculum", "controls"]));

    let (status, err) = h.admin("PUT", "/v1/stage", Some(json!({"stage": 4}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "stage");
}

#[tokio::test]
async fn validation_errors_name_the_field() {
    let h = Harness::fixture_a(Stage::Controls).await;
    let (status, err) = h
        .call("POST", "/v1/directives", Some(json!({"device_scope": {"kind": "all"}})))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "validation");
    assert_eq!(err["field"], "company_scope");

    let (status, err) = h
        .call(
            "POST",
            "/v1/directives",
            Some(json!({"device_scope": {"kind": "all"}, "company_scope": {"kind": "planet"}})),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "company_scope.kind");

    let (status, err) = h.call("GET", "/v1/profile?start_ms=soon", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "start_ms");

    let (status, err) = h.call("GET", "/v1/profile?start_ms=10&end_ms=5", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "end_ms");

    let (status, err) = h.call("GET", "/v1/report?home_region=Atlantis", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "home_region");

    let (status, err) = h
        .call("POST", "/v1/replay", Some(json!({"path": h.pcap, "speed": -1.0})))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "speed");

    let req = Request::post("/v1/directives")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(h.raw(req).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_things_are_404() {
    let h = Harness::new(Stage::Controls);
    let (status, err) = h.call("GET", "/v1/nothing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "not_found");
    let (status, _) = h.call("POST", "/v1/directives/d-missing/enable", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = h.call("PUT", "/v1/devices/nobody", Some(json!({"name": "x"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn directive_lifecycle() {
    let h = Harness::fixture_a(Stage::Controls).await;
    let draft = json!({"device_scope": {"kind": "all"}, "company_scope": {"kind": "company", "name": "A"}});

    let (status, preview) = h.call("POST", "/v1/directives/preview", Some(draft.clone())).await;
    assert_eq!(status, StatusCode::OK, "{preview}");
    assert_eq!(preview["matched_bytes"], json!(40_000));
    assert_eq!(preview["directive_id"], "draft");

    let (status, d) = h.call("POST", "/v1/directives", Some(draft)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(d["state"], "DISABLED");
    let id = d["id"].as_str().unwrap().to_owned();
    let v0 = h.household.ruleset().version;

    let (status, p) = h.call("POST", &format!("/v1/directives/{id}/preview"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(p["matched_bytes"], json!(40_000));

    let (status, armed) = h.call("POST", &format!("/v1/directives/{id}/enable"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(armed["directive"]["state"], "ENABLED");
    assert!(armed["ruleset_version"].as_u64().unwrap() > v0);
    assert_eq!(h.get("/v1/ruleset").await["version"], armed["ruleset_version"]);

    let (status, _) = h.call("GET", &format!("/v1/directives/{id}/suggestions"), None).await;
    assert_eq!(status, StatusCode::OK);

    let (status, off) = h.call("POST", &format!("/v1/directives/{id}/disable"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(off["directive"]["state"], "DISABLED");

    // Export then import into a fresh household: everything arrives disarmed.
    let export = h.get("/v1/directives/export").await;
    let other = Harness::fixture_a(Stage::Controls).await;
    let (status, imported) = other.call("POST", "/v1/directives/import", Some(export)).await;
    assert_eq!(status, StatusCode::OK, "{imported}");
    assert!(imported.as_array().unwrap().iter().all(|d| d["state"] == "DISABLED"));
}

#[tokio::test]
async fn blocklist_routes() {
    let h = Harness::fixture_a(Stage::Controls).await;
    let (status, list) = h
        .call(
            "PUT",
            "/v1/blocklists/mine",
            Some(json!({"name": "Mine", "text": "# trackers\nF\n198.51.100.128/27\n"})),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{list}");
    assert_eq!(list["source"], "USER");
    let (status, _) = h.call("POST", "/v1/blocklists/mine/disable", None).await;
    assert_eq!(status, StatusCode::OK);
    let lists = h.get("/v1/blocklists").await;
    let mine = lists.as_array().unwrap().iter().find(|l| l["id"] == "mine").unwrap();
    assert_eq!(mine["enabled"], false);
    let (status, err) = h
        .call(
            "PUT",
            "/v1/blocklists/bad%20id",
            Some(json!({"name": "x", "text": "A"})),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "id");
}

#[tokio::test]
async fn curriculum_routes() {
    let h = Harness::fixture_a(Stage::Curriculum).await;
    let c = h.get("/v1/curriculum").await;
    assert_eq!(c["modules"].as_array().unwrap().len(), 6);
    assert_eq!(h.get("/v1/curriculum/due").await["due"], c["due"]);
    let due = c["due"][0].as_str().unwrap().to_owned();
    let rendered = h.get(&format!("/v1/curriculum/{due}")).await;
    assert!(!rendered["body"].as_str().unwrap().contains("{{"));
    let ctx = h.get("/v1/curriculum/context").await;
    assert_eq!(ctx, canon(&h.household.curriculum_context(&TimeWindow::all())));
    let (status, m) = h.call("POST", &format!("/v1/curriculum/{due}/complete"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(m["completed_at_ms"].is_i64());

    let early = Harness::new(Stage::Display);
    let (status, err) = early
        .call("POST", "/v1/curriculum/internet-basics/complete", None)
        .await;
    assert_eq!(status, StatusCode::LOCKED);
    assert_eq!(err["required_stage"], 2);
}

#[tokio::test]
async fn device_rename_and_fixture_reload() {
    let h = Harness::fixture_a(Stage::Display).await;
    let tv = h.device_id(TV_NAME);
    let (status, d) = h
        .call("PUT", &format!("/v1/devices/{tv}"), Some(json!({"name": "Den TV"})))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(d["friendly_name"], "Den TV");
    let path = h.dir.path().join("fixture-a.tsv");
    let (status, loaded) = h.call("POST", "/v1/fixtures", Some(json!({"path": path}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(loaded["loaded"], 6);
    let (status, err) = h
        .call("POST", "/v1/fixtures", Some(json!({"path": "/nonexistent.tsv"})))
        .await;
    assert!(status.is_client_error() || status.is_server_error(), "{err}");
}

#[tokio::test]
async fn replay_is_idempotent_and_empty_capture_is_fine() {
    let h = Harness::fixture_a(Stage::Display).await;
    let body = json!({"path": h.pcap, "device_map": fixture_a::DEVICE_MAP});
    let (_, again) = h.call("POST", "/v1/replay", Some(body)).await;
    assert_eq!(again["stored"], 0);
    assert!(again["duplicates"].as_u64().unwrap() > 0);

    let empty = h.dir.path().join("empty.pcap");
    hearth_core::synth::PcapWriter::new(std::fs::File::create(&empty).unwrap()).unwrap();
    let (status, s) = h.call("POST", "/v1/replay", Some(json!({"path": empty}))).await;
    assert_eq!(status, StatusCode::OK, "{s}");
    assert_eq!(s["flows"], 0);
    assert_eq!(s["packets"], 0);
}

#[tokio::test]
async fn redaction_and_audit() {
    let h = Harness::fixture_a(Stage::Display).await;
    let phone = h.device_id(PHONE_NAME);
    let (status, r) = h
        .call(
            "POST",
            "/v1/redactions",
            Some(json!({"kind": "device", "device_id": phone})),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED, "{r}");
    assert!(r["rows_removed"].as_u64().unwrap() > 0);
    let audit = h.get("/v1/redactions").await;
    assert_eq!(audit.as_array().unwrap().len(), 1);
    assert_eq!(h.get(&format!("/v1/flows?device={phone}")).await["total"], 0);

    let (status, err) = h
        .call(
            "POST",
            "/v1/redactions",
            Some(json!({"kind": "range", "start_ms": 9, "end_ms": 3})),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{err}");
}

#[tokio::test]
async fn flow_export_round_trips_through_import() {
    let h = Harness::fixture_a(Stage::Display).await;
    let req = Request::get("/v1/flows/export").body(Body::empty()).unwrap();
    let (status, dump) = h.raw(req).await;
    assert_eq!(status, StatusCode::OK);
    let first: Value = serde_json::from_slice(dump.split(|b| *b == b'\n').next().unwrap()).unwrap();
    assert_eq!(first["schema"], "hearth-flows");

    let fresh = Harness::new(Stage::Display);
    let req = Request::post("/v1/flows/import")
        .body(Body::from(dump.clone()))
        .unwrap();
    let (status, summary) = fresh.raw(req).await;
    assert_eq!(status, StatusCode::OK);
    let summary: Value = serde_json::from_slice(&summary).unwrap();
    assert_eq!(summary["imported"], h.household.flows(&FlowQuery::default()).len());
    let req = Request::get("/v1/flows/export").body(Body::empty()).unwrap();
    assert_eq!(fresh.raw(req).await.1, dump);
    assert_eq!(fresh.get("/v1/profile").await, h.get("/v1/profile").await);
}
