use std::path::PathBuf;
use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use driftscope_core::align::{procrustes, AlignOptions};
use driftscope_core::detector::{
    detect, EvaluationReport, MetricId, ModelArtifacts, ModelKind, ScoreOptions, ScoreOutcome,
    ThresholdPolicy,
};
use driftscope_core::metrics::Distance;
use driftscope_core::sgns::{train_op_pair, train_wi, SgnsConfig};
use driftscope_core::storage::{RankingArtifact, Registry};
use driftscope_core::synthetic::{confusion_fixture, drift_corpus};
use driftscope_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

const STATIC: [Distance; 3] = [Distance::Euclidean, Distance::Manhattan, Distance::Cosine];

/// A registry with a fixed-count evaluation run and a trained drift run.
fn fixture_home() -> PathBuf {
    static HOME: OnceLock<TempDir> = OnceLock::new();
    HOME.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let registry = Registry::open(dir.path()).unwrap();

        let mut table = registry.create_run(Some("counts"), Value::Null).unwrap();
        let (scores, gold) = confusion_fixture(39, 0, 2, 12);
        let outcome = ScoreOutcome {
            scores,
            ..ScoreOutcome::default()
        };
        let metric = MetricId::Static(Distance::Euclidean);
        let report = EvaluationReport::from_outcome(
            "counts:sgns-op",
            metric,
            outcome,
            &gold,
            ThresholdPolicy::Absolute(0.5),
        )
        .unwrap();
        table.save_evaluation(ModelKind::SgnsOp, &report).unwrap();

        let mut drift = registry.create_run(Some("drift"), Value::Null).unwrap();
        let fx = drift_corpus(5, 12_000);
        drift.save_corpus(&fx.corpus).unwrap();
        let cfg = SgnsConfig {
            vector_size: 30,
            seed: 5,
            threads: 1,
            ..SgnsConfig::default()
        };
        let (a, b) = train_op_pair(&fx.corpus, &cfg).unwrap();
        let pair = procrustes(&a, &b, AlignOptions::default()).unwrap();
        drift.save_aligned(&pair).unwrap();
        let mut targets = fx.target_set();
        targets.extend(fx.context_words.iter().take(9).cloned());
        let wi = train_wi(&fx.corpus, &targets, '⊕', &cfg).unwrap();
        drift.save_wi(&wi).unwrap();
        let gold = fx.gold();
        for (kind, artifacts) in [
            (ModelKind::SgnsOp, ModelArtifacts::Aligned(&pair)),
            (ModelKind::SgnsWi, ModelArtifacts::Injected(&wi)),
        ] {
            let id = drift.model_ref(kind).to_string();
            for d in STATIC {
                let report = detect(
                    artifacts,
                    &id,
                    MetricId::Static(d),
                    &gold,
                    ThresholdPolicy::Mean,
                    &ScoreOptions::default(),
                )
                .unwrap();
                drift.save_evaluation(kind, &report).unwrap();
            }
        }
        // A ranking without gold lists.
        let canberra = detect(
            ModelArtifacts::Aligned(&pair),
            "drift:sgns-op",
            MetricId::Static(Distance::Canberra),
            &gold,
            ThresholdPolicy::Mean,
            &ScoreOptions::default(),
        )
        .unwrap();
        drift
            .save_ranking(
                ModelKind::SgnsOp,
                &RankingArtifact {
                    ranking: canberra.ranking,
                    unscoreable: vec![],
                    nonconverged: vec![],
                },
            )
            .unwrap();
        dir
    })
    .path()
    .to_path_buf()
}

fn app_at(home: &std::path::Path) -> Router {
    router(
        AppState::new(Registry::open(home).unwrap(), Default::default()),
        None,
    )
}

fn app() -> Router {
    app_at(&fixture_home())
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, bytes) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn empty_registry_lists_nothing() {
    let dir = TempDir::new().unwrap();
    let (status, body) = get(&app_at(dir.path()), "/api/models").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["schema_version"], 1);
    assert_eq!(body["models"], serde_json::json!([]));
    assert_eq!(body["warnings"], serde_json::json!([]));
}

#[tokio::test]
async fn lists_models_of_every_run() {
    let (status, body) = get(&app(), "/api/models").await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = body["models"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["counts:sgns-op", "drift:sgns-op", "drift:sgns-wi"]);
    let op = &body["models"][1];
    assert_eq!(op["model"], "SGNS-OP");
    assert_eq!(
        op["metrics"],
        serde_json::json!(["euclidean", "manhattan", "canberra", "cosine"])
    );
    assert_eq!(
        op["evaluated"],
        serde_json::json!(["euclidean", "manhattan", "cosine"])
    );
}

#[tokio::test]
async fn malformed_run_is_omitted_with_warning() {
    let dir = TempDir::new().unwrap();
    let registry = Registry::open(dir.path()).unwrap();
    let mut run = registry.create_run(Some("good"), Value::Null).unwrap();
    let (scores, _) = confusion_fixture(1, 1, 0, 0);
    let ranking = driftscope_core::detector::ChangeRanking::build(
        "good:sgns-wi",
        MetricId::Static(Distance::Cosine),
        scores,
        ThresholdPolicy::Mean,
    )
    .unwrap();
    run.save_ranking(
        ModelKind::SgnsWi,
        &RankingArtifact {
            ranking,
            unscoreable: vec![],
            nonconverged: vec![],
        },
    )
    .unwrap();
    std::fs::create_dir_all(dir.path().join("runs/bad")).unwrap();
    std::fs::write(
        dir.path().join("runs/bad/run.json"),
        "{\"format_version\": 1, \"kin",
    )
    .unwrap();
    let (status, body) = get(&app_at(dir.path()), "/api/models").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["models"].as_array().unwrap().len(), 1);
    assert_eq!(body["models"][0]["id"], "good:sgns-wi");
    let warnings = body["warnings"].as_array().unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].as_str().unwrap().contains("bad"));
}

#[tokio::test]
async fn fixture_results_carry_counts_and_score() {
    let (status, body) = get(
        &app(),
        "/api/models/counts:sgns-op/results?metric=euclidean",
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let eval = &body["evaluation"];
    assert_eq!(
        (
            eval["tp"].as_u64(),
            eval["tn"].as_u64(),
            eval["fp"].as_u64(),
            eval["fn"].as_u64()
        ),
        (Some(39), Some(0), Some(2), Some(12))
    );
    // 39/53 = 0.7358..., shown at two decimals.
    assert_eq!(eval["score"].as_f64().unwrap(), 39.0 / 53.0);
    assert_eq!(eval["display_score"].as_f64().unwrap(), 0.74);
    assert_eq!(body["ranking"]["entries"].as_array().unwrap().len(), 53);
    assert_eq!(body["model_id"], "counts:sgns-op");
}

#[tokio::test]
async fn unevaluated_ranking_has_null_evaluation() {
    let (status, body) = get(&app(), "/api/models/drift:sgns-op/results?metric=canberra").await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["evaluation"].is_null());
    assert_eq!(body["ranking"]["entries"].as_array().unwrap().len(), 11);
}

#[tokio::test]
async fn results_errors() {
    let app = app();
    for uri in [
        "/api/models/nope:sgns-op/results?metric=cosine",
        "/api/models/counts:sgns-wi/results?metric=cosine",
        "/api/models/garbage/results?metric=cosine",
    ] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(body["error"]["kind"], "not-found");
    }
    let (status, body) = get(&app, "/api/models/counts:sgns-op/results?metric=hamming").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["kind"], "unknown-metric");
    let valid: Vec<&str> = body["error"]["valid_metrics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(
        valid,
        [
            "euclidean",
            "manhattan",
            "canberra",
            "cosine",
            "bray-curtis",
            "correlation"
        ]
    );
    let (status, body) = get(&app, "/api/models/counts:sgns-op/results?metric=jsd").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["kind"], "metric-not-applicable");
    let (status, _) = get(&app, "/api/models/counts:sgns-op/results").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = get(&app, "/api/models/counts:sgns-op/results?metric=cosine").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn compare_two_metrics_gives_equal_length_series() {
    let req =
        serde_json::json!({"model_ids": ["drift:sgns-op"], "metric_ids": ["euclidean", "cosine"]});
    let (status, body) = post(&app(), "/api/compare", req).await;
    assert_eq!(status, StatusCode::OK);
    let words = body["words"].as_array().unwrap();
    assert_eq!(words.len(), 11);
    let series = body["series"].as_array().unwrap();
    assert_eq!(series.len(), 2);
    for s in series {
        assert_eq!(s["scores"].as_array().unwrap().len(), words.len());
        assert_eq!(s["changed"].as_array().unwrap().len(), words.len());
    }
    assert_eq!(series[0]["metric"], "euclidean");
    assert!(body.get("explanation").is_none());
}

#[tokio::test]
async fn compare_models_across_metrics() {
    let req = serde_json::json!({
        "model_ids": ["drift:sgns-op", "drift:sgns-wi"],
        "metric_ids": ["euclidean", "manhattan", "cosine"],
    });
    let (status, body) = post(&app(), "/api/compare", req).await;
    assert_eq!(status, StatusCode::OK);
    let series = body["series"].as_array().unwrap();
    assert_eq!(series.len(), 6);
    let corr = body["correlations"].as_array().unwrap();
    assert_eq!(corr.len(), 6);
    for (i, row) in corr.iter().enumerate() {
        assert!((row[i].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
    // Euclidean and Manhattan rankings of one model move together.
    for base in [0, 3] {
        let r = corr[base][base + 1].as_f64().unwrap();
        assert!(r > 0.9, "euclidean/manhattan correlation {r}");
    }
}

#[tokio::test]
async fn compare_word_filter_and_disjoint_models() {
    let app = app();
    let req = serde_json::json!({
        "model_ids": ["drift:sgns-op"],
        "metric_ids": ["euclidean", "cosine"],
        "words": ["leaf", "absent"],
    });
    let (_, body) = post(&app, "/api/compare", req).await;
    assert_eq!(body["words"], serde_json::json!(["leaf"]));

    let req = serde_json::json!({"model_ids": ["counts:sgns-op", "drift:sgns-op"], "metric_ids": ["euclidean"]});
    let (status, body) = post(&app, "/api/compare", req).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["words"], serde_json::json!([]));
    for s in body["series"].as_array().unwrap() {
        assert_eq!(s["scores"], serde_json::json!([]));
    }
    assert!(body["explanation"].as_str().unwrap().contains("share no"));
}

#[tokio::test]
async fn compare_rejects_bad_requests() {
    let app = app();
    let cases = [
        (
            serde_json::json!({"model_ids": ["drift:sgns-op"], "metric_ids": ["cosine"]}),
            StatusCode::BAD_REQUEST,
        ),
        (
            serde_json::json!({"model_ids": [], "metric_ids": ["cosine", "euclidean"]}),
            StatusCode::BAD_REQUEST,
        ),
        (
            serde_json::json!({"metric_ids": ["cosine"]}),
            StatusCode::BAD_REQUEST,
        ),
        (
            serde_json::json!({"model_ids": ["drift:sgns-op"], "metric_ids": ["cosine", "nope"]}),
            StatusCode::BAD_REQUEST,
        ),
        (
            serde_json::json!({"model_ids": ["x:sgns-op", "drift:sgns-op"], "metric_ids": ["cosine"]}),
            StatusCode::NOT_FOUND,
        ),
        (
            serde_json::json!({"model_ids": ["drift:sgns-op"], "metric_ids": ["cosine", "bray-curtis"]}),
            StatusCode::NOT_FOUND,
        ),
    ];
    for (req, expected) in cases {
        let (status, body) = post(&app, "/api/compare", req.clone()).await;
        assert_eq!(status, expected, "{req}");
        assert!(body["error"]["message"].is_string());
    }
}

#[tokio::test]
async fn one_word_projects_to_two_linked_points() {
    let (status, body) = get(
        &app(),
        "/api/models/drift:sgns-op/projection?words=leaf&perplexity=0.3",
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let projection = &body["projection"];
    assert_eq!(projection["points"].as_array().unwrap().len(), 2);
    assert_eq!(projection["links"], serde_json::json!([[0, 1]]));
    assert_eq!(projection["points"][0]["period"], "pre1900");
    assert_eq!(projection["points"][1]["period"], "post1900");
}

#[tokio::test]
async fn too_few_points_for_perplexity_is_rejected() {
    let (status, body) = get(
        &app(),
        "/api/models/drift:sgns-op/projection?words=leaf,water&perplexity=30",
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["kind"], "perplexity-too-high");
    let (status, body) = get(&app(), "/api/models/drift:sgns-op/projection").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["kind"], "missing-words");
    let (status, _) = get(&app(), "/api/models/drift:elmo-prev/projection?words=leaf").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn drift_projection_links_every_word() {
    let home = fixture_home();
    let fx = drift_corpus(5, 12_000);
    let mut words = fx.targets();
    words.extend(fx.context_words.iter().take(9).cloned());
    assert_eq!(words.len(), 20);
    for model in ["sgns-op", "sgns-wi"] {
        let uri = format!(
            "/api/models/drift:{model}/projection?words={}&iterations=500",
            words.join(",")
        );
        let (status, body) = get(&app_at(&home), &uri).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let points = body["projection"]["points"].as_array().unwrap();
        let links = body["projection"]["links"].as_array().unwrap();
        assert_eq!(points.len(), 40, "{model}");
        assert_eq!(links.len(), 20, "{model}");
        for link in links {
            let (i, j) = (
                link[0].as_u64().unwrap() as usize,
                link[1].as_u64().unwrap() as usize,
            );
            assert_eq!(points[i]["word"], points[j]["word"]);
            assert_ne!(points[i]["period"], points[j]["period"]);
        }
    }
}

#[tokio::test]
async fn repeated_requests_are_byte_identical() {
    let state = AppState::new(Registry::open(fixture_home()).unwrap(), Default::default());
    let app = router(state.clone(), None);
    let gets = [
        "/api/models",
        "/api/models/counts:sgns-op/results?metric=euclidean",
        "/api/models/drift:sgns-wi/results?metric=cosine",
        "/api/models/drift:sgns-op/projection?words=leaf,water,stone,lift&perplexity=1",
        "/api/models/nope:sgns-op/results?metric=cosine",
    ];
    for uri in gets {
        let first = send(&app, Request::get(uri).body(Body::empty()).unwrap()).await;
        let second = send(&app, Request::get(uri).body(Body::empty()).unwrap()).await;
        assert_eq!(first, second, "{uri}");
        // A fresh service over the same registry answers identically too.
        let fresh = send(
            &app_at(&fixture_home()),
            Request::get(uri).body(Body::empty()).unwrap(),
        )
        .await;
        assert_eq!(first, fresh, "{uri}");
    }
    assert_eq!(state.cached_projections(), 1);
    let req = || {
        Request::post("/api/compare")
            .body(Body::from(
                r#"{"model_ids":["drift:sgns-op","drift:sgns-wi"],"metric_ids":["cosine"]}"#,
            ))
            .unwrap()
    };
    assert_eq!(send(&app, req()).await, send(&app, req()).await);
}

#[tokio::test]
async fn concurrent_projection_requests_compute_once() {
    let state = AppState::new(Registry::open(fixture_home()).unwrap(), Default::default());
    let app = router(state.clone(), None);
    let uri = "/api/models/drift:sgns-wi/projection?words=leaf,water,stone&perplexity=1&seed=3";
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(
                async move { send(&app, Request::get(uri).body(Body::empty()).unwrap()).await },
            )
        })
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        bodies.push(h.await.unwrap());
    }
    assert!(bodies.iter().all(|b| b == &bodies[0]));
    assert_eq!(bodies[0].0, StatusCode::OK);
    assert_eq!(state.cached_projections(), 1);
}

#[tokio::test]
async fn cors_and_static_assets() {
    let assets = TempDir::new().unwrap();
    std::fs::write(assets.path().join("index.html"), "<html>ui</html>").unwrap();
    let app = router(
        AppState::new(Registry::open(fixture_home()).unwrap(), Default::default()),
        Some(assets.path()),
    );
    let (status, bytes) = send(
        &app,
        Request::get("/index.html").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, b"<html>ui</html>");
    let resp = app
        .clone()
        .oneshot(
            Request::get("/api/models")
                .header("origin", "http://localhost:5173")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}
