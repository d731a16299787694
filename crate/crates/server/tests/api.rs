use std::collections::BTreeSet;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use ctxprompt::annotation::{AnnotationStore, ComparisonSet, Permutation, ReplayFixture, Tally};
use ctxprompt_server::{router, shared, SharedStore};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn sets() -> Vec<ComparisonSet> {
    (0..2)
        .map(|c| ComparisonSet {
            conversation_id: format!("c{c}"),
            user_turns: (1..=5).map(|t| format!("user {t}")).collect(),
            responses: (1..=5)
                .map(|t| (1..=4).map(|m| format!("method-{m} turn-{t}")).collect())
                .collect(),
        })
        .collect()
}

fn app() -> (Router, SharedStore) {
    let store = shared(AnnotationStore::in_memory(sets(), 4).unwrap());
    (router(store.clone()), store)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
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
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

#[tokio::test]
async fn health_reports_ok() {
    let (app, _) = app();
    let (s, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["status"], "ok");
}

#[tokio::test]
async fn session_flow_never_leaks_permutation() {
    let (app, store) = app();
    let (s, body) = call(&app, "POST", "/sessions", Some(json!({"annotator": "ann", "seed": 3}))).await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    let view: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(view["conversations"], json!(["c0", "c1"]));
    assert!(!body.contains("permutation"));

    let (s, body) = call(&app, "GET", "/sessions/ann/next", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(!body.contains("permutation"), "{body}");
    let shown: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(shown["conversation_id"], "c0");
    assert_eq!(shown["turns"].as_array().unwrap().len(), 5);

    // displayed agent order follows the server-side permutation
    let p: Permutation = store.read().unwrap().permutation("ann").unwrap().clone();
    let first = shown["turns"][0]["responses"].as_array().unwrap();
    for (d, text) in first.iter().enumerate() {
        let m = p.method_of(d + 1).unwrap();
        assert_eq!(text.as_str().unwrap(), format!("method-{m} turn-1"));
    }
}

#[tokio::test]
async fn submit_validation_and_conflicts() {
    let (app, _) = app();
    call(&app, "POST", "/sessions", Some(json!({"annotator": "ann", "seed": 1}))).await;

    let partial = json!({"conversation_id": "c0", "turn_winners": [[1], [2]], "conversation_winners": [1]});
    let (s, body) = call(&app, "POST", "/sessions/ann/records", Some(partial)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body.contains("[3, 4, 5]"), "{body}");

    let empty = json!({"conversation_id": "c0", "turn_winners": [[1], [], [1], [1], [1]], "conversation_winners": [1]});
    let (s, _) = call(&app, "POST", "/sessions/ann/records", Some(empty)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let ok =
        json!({"conversation_id": "c0", "turn_winners": [[1], [3, 4], [2], [4], [4]], "conversation_winners": [3, 4]});
    let (s, body) = call(&app, "POST", "/sessions/ann/records", Some(ok.clone())).await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    let (s, _) = call(&app, "POST", "/sessions/ann/records", Some(ok)).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, _) = call(&app, "GET", "/sessions/nobody/next", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"annotator": "x", "conversations": ["zz"]})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn tally_and_export_are_remapped() {
    let (app, store) = app();
    call(&app, "POST", "/sessions", Some(json!({"annotator": "ann", "seed": 9}))).await;
    let p = store.read().unwrap().permutation("ann").unwrap().clone();
    // the annotator picks whatever is shown as method 4, and ties methods 3 and 4 once
    let four = p.displayed_of(4).unwrap();
    let tie: Vec<usize> = p.to_displayed(&BTreeSet::from([3, 4])).into_iter().collect();
    let rec = json!({
        "conversation_id": "c0",
        "turn_winners": [[four], [four], tie, [four], [four]],
        "conversation_winners": [four]
    });
    let (s, _) = call(&app, "POST", "/sessions/ann/records", Some(rec)).await;
    assert_eq!(s, StatusCode::CREATED);

    let (_, body) = call(&app, "GET", "/tally", None).await;
    let t: Tally = serde_json::from_str(&body).unwrap();
    assert_eq!(t.turn_wins, vec![0, 0, 0, 4]);
    assert_eq!(t.turn_ties, 1);
    assert_eq!(t.conversation_wins, vec![0, 0, 0, 1]);

    let (s, csv) = call(&app, "GET", "/export", None).await;
    assert_eq!(s, StatusCode::OK);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[3], "ann,c0,3,\"[3,4]\",");
    assert_eq!(lines[5], "ann,c0,5,4,4");
}

#[tokio::test]
async fn replay_over_http_matches_reported_counts() {
    let fx = ReplayFixture::default();
    let store = shared(AnnotationStore::in_memory(fx.sets.clone(), 4).unwrap());
    let app = router(store.clone());
    for (annotator, convs, seed) in &fx.sessions {
        let (s, _) = call(
            &app,
            "POST",
            "/sessions",
            Some(json!({"annotator": annotator, "conversations": convs, "seed": seed})),
        )
        .await;
        assert_eq!(s, StatusCode::CREATED);
    }
    for r in &fx.truth {
        let p = store.read().unwrap().permutation(&r.annotator).unwrap().clone();
        let turns: Vec<BTreeSet<usize>> = r.turn_winners.iter().map(|s| p.to_displayed(s)).collect();
        let body = json!({
            "conversation_id": r.conversation_id,
            "turn_winners": turns,
            "conversation_winners": p.to_displayed(&r.conversation_winners),
        });
        let (s, _) = call(&app, "POST", &format!("/sessions/{}/records", r.annotator), Some(body)).await;
        assert_eq!(s, StatusCode::CREATED);
    }
    let (_, body) = call(&app, "GET", "/tally", None).await;
    let t: Tally = serde_json::from_str(&body).unwrap();
    assert_eq!((t.turns, t.turn_ties), (728, 596));
    assert_eq!(t.turn_wins, vec![12, 22, 33, 65]);
    assert_eq!((t.conversations, t.conversation_ties), (100, 37));
    assert_eq!(t.conversation_wins[2] + t.conversation_wins[3], 53);
}
