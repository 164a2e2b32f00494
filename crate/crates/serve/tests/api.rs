use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use cbm_core::concept_space::{Normalizer, PoolingMode};
use cbm_core::interpret::{export_sankey, instance_contributions, InstanceInterpretation, SankeyExport};
use cbm_core::intervene::{what_if, InterventionRequest, InterventionResult};
use cbm_core::linear_head::{evaluate, train, LabeledVectors, LinearHead, TrainConfig, WeightMatrix};
use cbm_core::synth::{generate, RawSplits, SynthConfig};
use cbm_core::tensor_io::{load_concepts, load_dataset, Split};
use cbm_serve::{router, ItemEntry, ItemSummary, ServeError, ServiceState};
use http_body_util::BodyExt;
use tower::ServiceExt;

fn head() -> LinearHead {
    let w = WeightMatrix::from_rows(&[vec![1.5, -0.5, 0.25], vec![-1.0, 2.0, 0.75]]).unwrap();
    LinearHead::new(
        vec!["a".into(), "b".into()],
        vec!["x".into(), "y".into(), "z".into()],
        w,
        Normalizer::GlobalAffine,
        PoolingMode::Avg,
    )
    .unwrap()
}

fn items() -> Vec<ItemEntry> {
    [
        ("i0", 0, Split::Train, [0.9, 0.1, 0.5]),
        ("i1", 1, Split::Val, [0.2, 0.7, 0.4]),
        ("i2", 1, Split::Test, [0.6, 0.6, 0.6]),
    ]
    .into_iter()
    .map(|(id, label, split, v)| ItemEntry {
        id: id.into(),
        label,
        split,
        concepts: v.to_vec(),
    })
    .collect()
}

fn app() -> Router {
    router(Arc::new(ServiceState::new(head(), items()).unwrap()), None).unwrap()
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    call(app, Method::GET, uri, None).await
}

fn error_text(body: &[u8]) -> String {
    let v: serde_json::Value = serde_json::from_slice(body).unwrap();
    v["error"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn items_listing_matches_forward() {
    let app = app();
    let (status, body) = get(&app, "/items").await;
    assert_eq!(status, StatusCode::OK);
    let listed: Vec<ItemSummary> = serde_json::from_slice(&body).unwrap();
    assert_eq!(listed.len(), 3);
    let h = head();
    for (s, item) in listed.iter().zip(items()) {
        assert_eq!(s.id, item.id);
        assert_eq!(s.predicted_class, h.forward(&item.concepts).unwrap().predicted_class);
    }
    // accuracy recomputed from the listing agrees with evaluate
    let data = LabeledVectors::new(
        items().into_iter().map(|i| i.concepts).collect(),
        items().into_iter().map(|i| i.label).collect(),
    )
    .unwrap();
    let correct = listed.iter().filter(|s| s.predicted_class == s.label).count();
    assert_eq!(correct as f64 / 3.0, evaluate(h.weights(), &data).unwrap());
}

#[tokio::test]
async fn empty_dataset_lists_nothing() {
    let app = router(Arc::new(ServiceState::new(head(), vec![]).unwrap()), None).unwrap();
    assert_eq!(get(&app, "/items").await, (StatusCode::OK, b"[]".to_vec()));
}

#[tokio::test]
async fn unknown_route_is_404() {
    let (status, _) = get(&app(), "/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app(), Method::DELETE, "/items", None).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn interpretation_defaults_to_predicted_class() {
    let app = app();
    let (status, body) = get(&app, "/items/i1/interpretation").await;
    assert_eq!(status, StatusCode::OK);
    let e = &items()[1].concepts;
    let expected = instance_contributions(&head(), e, 1, None, Some("i1")).unwrap();
    assert_eq!(body, serde_json::to_vec(&expected).unwrap());

    let parsed: InstanceInterpretation = serde_json::from_slice(&body).unwrap();
    let sum: f64 = {
        let mut by_index = parsed.contributions.clone();
        by_index.sort_by_key(|c| c.concept_index);
        by_index.iter().fold(0.0, |acc, c| acc + c.contribution)
    };
    assert_eq!(sum, head().forward(e).unwrap().logits[1]);
    assert_eq!(parsed.logit, sum);
}

#[tokio::test]
async fn interpretation_parameters() {
    let app = app();
    let (status, body) = get(&app, "/items/i0/interpretation?class=1&top_k=2").await;
    assert_eq!(status, StatusCode::OK);
    let parsed: InstanceInterpretation = serde_json::from_slice(&body).unwrap();
    assert_eq!(parsed.contributions.len(), 2);
    assert_eq!(parsed.target_class, 1);

    assert_eq!(get(&app, "/items/i0/interpretation?class=99").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/items/i0/interpretation?class=-1").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/items/i0/interpretation?top_k=x").await.0, StatusCode::BAD_REQUEST);
    let (status, body) = get(&app, "/items/missing/interpretation").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(error_text(&body).contains("missing"));
}

#[tokio::test]
async fn intervention_matches_library() {
    let app = app();
    let (status, body) = call(
        &app,
        Method::POST,
        "/intervene",
        Some(r#"{"item_id":"i1","overrides":{"1":0.0}}"#),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let e = &items()[1].concepts;
    let expected = what_if(&head(), e, &InterventionRequest::new([(1, 0.0)])).unwrap();
    assert_eq!(body, serde_json::to_vec(&expected).unwrap());
    let parsed: InterventionResult = serde_json::from_slice(&body).unwrap();
    for c in 0..2 {
        assert!((parsed.logit_deltas[c] + head().weights().get(c, 1) * e[1]).abs() < 1e-12);
    }
}

#[tokio::test]
async fn empty_overrides_leave_prediction_alone() {
    let (status, body) = call(&app(), Method::POST, "/intervene", Some(r#"{"item_id":"i2","overrides":{}}"#)).await;
    assert_eq!(status, StatusCode::OK);
    let parsed: InterventionResult = serde_json::from_slice(&body).unwrap();
    assert_eq!(parsed.before, parsed.after);
    assert!(!parsed.changed_class);
    let (status, _) = call(&app(), Method::POST, "/intervene", Some(r#"{"item_id":"i2"}"#)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn intervention_errors() {
    let app = app();
    let (status, body) = call(&app, Method::POST, "/intervene", Some(r#"{"item_id":"i0","overrides":{"0":2.0}}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(error_text(&body).contains("score out of range"));

    let (status, _) = call(&app, Method::POST, "/intervene", Some(r#"{"item_id":"i0","overrides":{"7":0.5}}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = call(&app, Method::POST, "/intervene", Some(r#"{"item_id":"zzz","overrides":{}}"#)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = call(&app, Method::POST, "/intervene", Some("not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::POST, "/intervene", Some(r#"{"overrides":{}}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn weights_endpoint_mirrors_export() {
    let app = app();
    let (status, body) = get(&app, "/model/weights").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, serde_json::to_vec(&export_sankey(&head(), None, None)).unwrap());

    let (_, body) = get(&app, "/model/weights?threshold=0.6&hard_threshold=1.2").await;
    let expected = export_sankey(&head(), Some(0.6), Some(1.2));
    assert_eq!(body, serde_json::to_vec(&expected).unwrap());
    let parsed: SankeyExport = serde_json::from_slice(&body).unwrap();
    assert_eq!(parsed.links.len(), 2);

    assert_eq!(get(&app, "/model/weights?threshold=-0.1").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/model/weights?hard_threshold=-1").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn concurrent_requests_agree_with_sequential() {
    let app = app();
    let uris = ["/items", "/items/i0/interpretation", "/model/weights?threshold=0.3"];
    let mut sequential = Vec::new();
    for uri in uris {
        sequential.push(get(&app, uri).await);
    }
    let handles: Vec<_> = (0..30)
        .map(|i| {
            let app = app.clone();
            let uri = uris[i % 3];
            tokio::spawn(async move { get(&app, uri).await })
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        assert_eq!(h.await.unwrap(), sequential[i % 3]);
    }
}

#[tokio::test]
async fn cors_origin_is_opt_in() {
    let state = Arc::new(ServiceState::new(head(), items()).unwrap());
    let origin = "http://localhost:5173";
    let req = || {
        Request::builder()
            .uri("/items")
            .header(header::ORIGIN, origin)
            .body(Body::empty())
            .unwrap()
    };
    let with = router(state.clone(), Some(origin)).unwrap().oneshot(req()).await.unwrap();
    assert_eq!(
        with.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(),
        origin
    );
    let without = router(state.clone(), None).unwrap().oneshot(req()).await.unwrap();
    assert!(without.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
    assert!(matches!(router(state, Some("bad\norigin")), Err(ServeError::InvalidOrigin(_))));
}

#[test]
fn state_rejects_inconsistent_inputs() {
    let mut bad = items();
    bad[0].concepts.pop();
    assert!(ServiceState::new(head(), bad).is_err());
    let mut dup = items();
    dup[1].id = "i0".into();
    assert!(matches!(ServiceState::new(head(), dup), Err(ServeError::DuplicateItem(_))));
}

#[tokio::test]
async fn state_from_written_dataset() {
    let cfg = SynthConfig {
        dim: 16,
        height: 2,
        width: 2,
        n_train: 40,
        n_val: 20,
        n_test: 20,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write_to(dir.path()).unwrap();
    let (normalizer, splits) = RawSplits::concept_scores(&ds, PoolingMode::Avg)
        .unwrap()
        .normalized()
        .unwrap();
    let tc = TrainConfig {
        max_epochs: 50,
        patience: 10,
        ..TrainConfig::default()
    };
    let (trained, _) = train(&splits, &tc, ds.class_names.clone(), ds.concepts.texts(), normalizer, PoolingMode::Avg).unwrap();

    let dataset = load_dataset(dir.path().join("manifest.json")).unwrap();
    let concepts = load_concepts(dir.path().join("concepts.json")).unwrap();
    let state = ServiceState::from_dataset(trained.clone(), &dataset, &concepts).unwrap();
    assert_eq!(state.items().len(), 80);
    // precomputed vectors equal the training inputs for the train split
    for (entry, v) in state.items().iter().zip(&splits.train.vectors) {
        assert_eq!(&entry.concepts, v);
    }

    let app = router(Arc::new(state), None).unwrap();
    let (status, body) = get(&app, "/items").await;
    assert_eq!(status, StatusCode::OK);
    let listed: Vec<ItemSummary> = serde_json::from_slice(&body).unwrap();
    let test_correct = listed
        .iter()
        .filter(|s| s.split == Split::Test && s.predicted_class == s.label)
        .count();
    let test_acc = evaluate(trained.weights(), splits.test.as_ref().unwrap()).unwrap();
    assert_eq!(test_correct as f64 / 20.0, test_acc);

    let other = ds.concepts.select(&[0, 1]).unwrap();
    assert!(matches!(
        ServiceState::from_dataset(trained, &dataset, &other),
        Err(ServeError::ConceptMismatch)
    ));
}
