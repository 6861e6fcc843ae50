//! Read-only JSON API over a run registry.
//!
//! | route | body |
//! |---|---|
//! | `GET /api/models` | run/model summaries plus warnings for skipped runs |
//! | `GET /api/models/{id}/results?metric=m` | ranking and, when gold lists were given, its evaluation |
//! | `POST /api/compare` | per-metric score series over the words every series shares |
//! | `GET /api/models/{id}/projection?words=a,b,c` | 3-D t-SNE layout with same-word links |
//!
//! Model ids have the form `<run_id>:<model>`, e.g. `run-1:sgns-op`. Every
//! body carries `schema_version`. Nothing is written to the registry;
//! projections are cached in memory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path as FsPath, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use driftscope_core::detector::{
    ChangeRanking, Confusion, EvaluationReport, MetricId, ModelKind, Unscoreable,
};
use driftscope_core::projection::{project_pair, ProjectionError, ProjectionResult, TsneParams};
use driftscope_core::storage::{projection_key, ModelRef, Registry, Run, StorageError};
use serde::{Deserialize, Serialize};
use tokio::sync::OnceCell;
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_PORT: u16 = 8571;
/// Exact t-SNE is quadratic; larger word lists are refused.
pub const MAX_PROJECTION_WORDS: usize = 500;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub home: PathBuf,
    pub host: IpAddr,
    pub port: u16,
    /// Built UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Defaults for projection requests.
    pub tsne: TsneParams,
}

impl ServiceConfig {
    pub fn new(home: impl Into<PathBuf>) -> Self {
        Self {
            home: home.into(),
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            static_dir: None,
            tsne: TsneParams::default(),
        }
    }
}

type ProjectionCell = Arc<OnceCell<Bytes>>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    registry: Registry,
    tsne: TsneParams,
    projections: Mutex<HashMap<String, ProjectionCell>>,
}

impl AppState {
    pub fn new(registry: Registry, tsne: TsneParams) -> Self {
        Self {
            inner: Arc::new(Inner {
                registry,
                tsne,
                projections: Mutex::new(HashMap::new()),
            }),
        }
    }

    /// Number of projections held in the cache.
    pub fn cached_projections(&self) -> usize {
        let cache = self.inner.projections.lock().expect("cache lock");
        cache.values().filter(|c| c.initialized()).count()
    }
}

pub fn router(state: AppState, static_dir: Option<&FsPath>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    let api = Router::new()
        .route("/api/models", get(list_models))
        .route("/api/models/{id}/results", get(results))
        .route("/api/models/{id}/projection", get(projection))
        .route("/api/compare", post(compare))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async {
            ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such route")
        }),
    };
    app.layer(cors)
}

pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let registry = Registry::open(&config.home).map_err(std::io::Error::other)?;
    let app = router(
        AppState::new(registry, config.tsne),
        config.static_dir.as_deref(),
    );
    let listener = tokio::net::TcpListener::bind((config.host, config.port)).await?;
    log::info!(
        "serving {} on http://{}",
        config.home.display(),
        listener.local_addr()?
    );
    axum::serve(listener, app).await
}

/// Runs [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(config: ServiceConfig) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(config))
}

#[derive(Debug, Clone, Serialize)]
struct Envelope<T> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

fn json_bytes<T: Serialize>(body: T) -> Bytes {
    let envelope = Envelope {
        schema_version: SCHEMA_VERSION,
        body,
    };
    Bytes::from(serde_json::to_vec(&envelope).expect("response types serialize"))
}

fn json_response(status: StatusCode, bytes: Bytes) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    valid_metrics: Option<Vec<String>>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
            valid_metrics: None,
        }
    }

    fn bad_request(kind: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, kind, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", message)
    }

    fn with_metrics(mut self, metrics: impl IntoIterator<Item = MetricId>) -> Self {
        self.valid_metrics = Some(metrics.into_iter().map(MetricId::name).collect());
        self
    }
}

impl From<StorageError> for ApiError {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::NotFound(_)
            | StorageError::InvalidModelId(_)
            | StorageError::InvalidRunId(_) => ApiError::not_found(e.to_string()),
            other => {
                log::error!("{other}");
                ApiError::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "storage",
                    other.to_string(),
                )
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Body<'a> {
            error: &'a ApiError,
        }
        json_response(self.status, json_bytes(Body { error: &self }))
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok<T: Serialize>(body: T) -> ApiResult {
    Ok(json_response(StatusCode::OK, json_bytes(body)))
}

/// Resolves `<run>:<model>` to a run that has the model.
fn open_model(registry: &Registry, id: &str) -> Result<(Run, ModelRef), ApiError> {
    let model: ModelRef = id
        .parse()
        .map_err(|_| ApiError::not_found(format!("unknown model `{id}`")))?;
    let run = registry.run(&model.run_id)?;
    if !run.has_model(model.kind) {
        return Err(ApiError::not_found(format!("unknown model `{id}`")));
    }
    Ok((run, model))
}

fn parse_metric(name: &str, kind: ModelKind) -> Result<MetricId, ApiError> {
    let valid = MetricId::for_kind(kind);
    match name.parse::<MetricId>() {
        Ok(m) if valid.contains(&m) => Ok(m),
        Ok(m) => Err(ApiError::bad_request(
            "metric-not-applicable",
            format!("metric `{}` does not apply to {}", m.name(), kind.name()),
        )
        .with_metrics(valid)),
        Err(_) => Err(
            ApiError::bad_request("unknown-metric", format!("unknown metric `{name}`"))
                .with_metrics(valid),
        ),
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            format!("worker failed: {e}"),
        )
    })?
}

#[derive(Debug, Serialize)]
struct ModelSummary {
    id: String,
    run_id: String,
    model: ModelKind,
    created_at: String,
    fingerprint: Option<String>,
    /// Metrics with a stored ranking.
    metrics: Vec<MetricId>,
    /// Metrics whose ranking was also evaluated against gold lists.
    evaluated: Vec<MetricId>,
}

#[derive(Debug, Serialize)]
struct ModelsResponse {
    models: Vec<ModelSummary>,
    warnings: Vec<String>,
}

async fn list_models(State(state): State<AppState>) -> ApiResult {
    let body = blocking(move || {
        let registry = &state.inner.registry;
        let listing = registry.list_runs()?;
        let mut warnings = listing.warnings;
        let mut models = Vec::new();
        for record in listing.runs {
            let run = match registry.run(&record.run_id) {
                Ok(run) => run,
                Err(e) => {
                    warnings.push(format!("skipping run `{}`: {e}", record.run_id));
                    continue;
                }
            };
            for kind in run.models() {
                models.push(ModelSummary {
                    id: run.model_ref(kind).to_string(),
                    run_id: record.run_id.clone(),
                    model: kind,
                    created_at: record.created_at.to_rfc3339(),
                    fingerprint: record.fingerprint.clone(),
                    metrics: run.ranked_metrics(kind),
                    evaluated: run.evaluated_metrics(kind),
                });
            }
        }
        Ok(ModelsResponse { models, warnings })
    })
    .await?;
    ok(body)
}

#[derive(Debug, Serialize)]
struct EvaluationSummary {
    #[serde(flatten)]
    confusion: Confusion,
    score: f64,
    display_score: f64,
    stable_ranks: BTreeMap<String, usize>,
}

#[derive(Debug, Serialize)]
struct ResultsResponse {
    model_id: String,
    metric: MetricId,
    evaluation: Option<EvaluationSummary>,
    ranking: ChangeRanking,
    unscoreable: Vec<Unscoreable>,
    nonconverged: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ResultsQuery {
    metric: Option<String>,
}

async fn results(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ResultsQuery>,
) -> ApiResult {
    let body = blocking(move || {
        let (run, model) = open_model(&state.inner.registry, &id)?;
        let Some(name) = q.metric else {
            return Err(
                ApiError::bad_request("missing-metric", "add ?metric=<name>")
                    .with_metrics(run.ranked_metrics(model.kind)),
            );
        };
        let metric = parse_metric(&name, model.kind)?;
        let not_stored = || {
            ApiError::not_found(format!("no results for `{}` under {}", id, metric.name()))
                .with_metrics(run.ranked_metrics(model.kind))
        };
        match run.load_evaluation(model.kind, metric) {
            Ok(report) => {
                let EvaluationReport {
                    confusion,
                    score,
                    display_score,
                    stable_ranks,
                    ranking,
                    unscoreable,
                    nonconverged,
                    ..
                } = report;
                Ok(ResultsResponse {
                    model_id: model.to_string(),
                    metric,
                    evaluation: Some(EvaluationSummary {
                        confusion,
                        score,
                        display_score,
                        stable_ranks,
                    }),
                    ranking,
                    unscoreable,
                    nonconverged,
                })
            }
            Err(StorageError::NotFound(_)) => match run.load_ranking(model.kind, metric) {
                Ok(r) => Ok(ResultsResponse {
                    model_id: model.to_string(),
                    metric,
                    evaluation: None,
                    ranking: r.ranking,
                    unscoreable: r.unscoreable,
                    nonconverged: r.nonconverged,
                }),
                Err(StorageError::NotFound(_)) => Err(not_stored()),
                Err(e) => Err(e.into()),
            },
            Err(e) => Err(e.into()),
        }
    })
    .await?;
    ok(body)
}

#[derive(Debug, Clone, Deserialize)]
pub struct CompareRequest {
    pub model_ids: Vec<String>,
    pub metric_ids: Vec<String>,
    /// Restrict the comparison to these words.
    #[serde(default)]
    pub words: Option<Vec<String>>,
}

#[derive(Debug, Serialize)]
struct Series {
    model_id: String,
    metric: MetricId,
    /// Scores in the order of the response's `words`.
    scores: Vec<f64>,
    changed: Vec<bool>,
}

#[derive(Debug, Serialize)]
struct CompareResponse {
    words: Vec<String>,
    series: Vec<Series>,
    /// Pearson correlation between series `i` and `j`; null when undefined.
    correlations: Vec<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    explanation: Option<String>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    let denom = (sxx * syy).sqrt();
    (denom > 0.0).then(|| sxy / denom)
}

async fn compare(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let req: CompareRequest = serde_json::from_slice(&body).map_err(|e| {
        ApiError::bad_request("invalid-request", format!("invalid compare request: {e}"))
    })?;
    if req.model_ids.is_empty() || req.metric_ids.is_empty() {
        return Err(ApiError::bad_request(
            "invalid-request",
            "model_ids and metric_ids must be non-empty",
        ));
    }
    if req.model_ids.len() < 2 && req.metric_ids.len() < 2 {
        return Err(ApiError::bad_request(
            "nothing-to-compare",
            "select at least two models or at least two metrics",
        ));
    }
    let body = blocking(move || {
        let registry = &state.inner.registry;
        let mut rankings = Vec::new();
        for id in &req.model_ids {
            let (run, model) = open_model(registry, id)?;
            for name in &req.metric_ids {
                let metric = parse_metric(name, model.kind)?;
                let artifact = run
                    .load_any_ranking(model.kind, metric)
                    .map_err(|e| match e {
                        StorageError::NotFound(_) => ApiError::not_found(format!(
                            "no results for `{id}` under {}",
                            metric.name()
                        ))
                        .with_metrics(run.ranked_metrics(model.kind)),
                        other => other.into(),
                    })?;
                rankings.push((model.to_string(), artifact.ranking));
            }
        }

        let mut shared: Option<BTreeSet<&str>> = None;
        for (_, ranking) in &rankings {
            let words: BTreeSet<&str> = ranking.entries.iter().map(|e| e.word.as_str()).collect();
            shared = Some(match shared {
                None => words,
                Some(s) => s.intersection(&words).copied().collect(),
            });
        }
        let mut shared = shared.unwrap_or_default();
        if let Some(filter) = &req.words {
            let filter: BTreeSet<&str> = filter.iter().map(String::as_str).collect();
            shared.retain(|w| filter.contains(w));
        }
        let words: Vec<String> = shared.iter().map(|w| w.to_string()).collect();

        let series: Vec<Series> = rankings
            .iter()
            .map(|(model_id, ranking)| {
                let by_word: HashMap<&str, f64> = ranking
                    .entries
                    .iter()
                    .map(|e| (e.word.as_str(), e.score))
                    .collect();
                Series {
                    model_id: model_id.clone(),
                    metric: ranking.metric,
                    scores: words.iter().map(|w| by_word[w.as_str()]).collect(),
                    changed: words.iter().map(|w| ranking.verdicts[w]).collect(),
                }
            })
            .collect();
        let correlations = series
            .iter()
            .map(|a| {
                series
                    .iter()
                    .map(|b| pearson(&a.scores, &b.scores))
                    .collect()
            })
            .collect();
        let explanation = words.is_empty().then(|| {
            if req.words.is_some() {
                "none of the requested words is scored in every selected series".to_string()
            } else {
                "the selected series share no scored words".to_string()
            }
        });
        Ok(CompareResponse {
            words,
            series,
            correlations,
            explanation,
        })
    })
    .await?;
    ok(body)
}

#[derive(Debug, Serialize)]
struct ProjectionResponse<'a> {
    model_id: String,
    words: &'a [String],
    projection: &'a ProjectionResult,
}

fn projection_params(
    defaults: &TsneParams,
    q: &HashMap<String, String>,
) -> Result<TsneParams, ApiError> {
    fn field<T: std::str::FromStr>(
        q: &HashMap<String, String>,
        name: &str,
    ) -> Result<Option<T>, ApiError> {
        q.get(name)
            .map(|v| {
                v.parse().map_err(|_| {
                    ApiError::bad_request(
                        "invalid-parameter",
                        format!("bad value for `{name}`: {v}"),
                    )
                })
            })
            .transpose()
    }
    let mut params = defaults.clone();
    if let Some(p) = field(q, "perplexity")? {
        params.perplexity = Some(p);
    }
    if let Some(i) = field(q, "iterations")? {
        params.iterations = i;
    }
    if let Some(s) = field(q, "seed")? {
        params.seed = s;
    }
    Ok(params)
}

impl From<ProjectionError> for ApiError {
    fn from(e: ProjectionError) -> Self {
        let kind = match e {
            ProjectionError::PerplexityTooHigh { .. } => "perplexity-too-high",
            ProjectionError::TooFewPoints { .. } => "too-few-points",
            _ => "invalid-projection",
        };
        ApiError::bad_request(kind, e.to_string())
    }
}

async fn projection(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let mut seen = BTreeSet::new();
    let words: Vec<String> = q
        .get("words")
        .map(|w| {
            w.split(',')
                .map(str::trim)
                .filter(|w| !w.is_empty() && seen.insert(w.to_string()))
                .map(String::from)
                .collect()
        })
        .unwrap_or_default();
    if words.is_empty() {
        return Err(ApiError::bad_request(
            "missing-words",
            "add ?words=<w1>,<w2>,...",
        ));
    }
    if words.len() > MAX_PROJECTION_WORDS {
        return Err(ApiError::bad_request(
            "too-many-words",
            format!("at most {MAX_PROJECTION_WORDS} words per projection"),
        ));
    }
    let params = projection_params(&state.inner.tsne, &q)?;
    let model: ModelRef = id
        .parse()
        .map_err(|_| ApiError::not_found(format!("unknown model `{id}`")))?;
    let key = projection_key(&words, &params);
    let cell = {
        let mut cache = state.inner.projections.lock().expect("cache lock");
        cache.entry(format!("{model}/{key}")).or_default().clone()
    };
    let bytes = cell
        .get_or_try_init(|| {
            let state = state.clone();
            blocking(move || {
                let (run, model) = open_model(&state.inner.registry, &id)?;
                let result = match run.load_projection(model.kind, &key) {
                    Ok(stored) => stored,
                    Err(StorageError::NotFound(_)) => {
                        let loaded = run.load_model(model.kind)?;
                        project_pair(loaded.artifacts(), &words, &params)?
                    }
                    Err(e) => return Err(e.into()),
                };
                Ok(json_bytes(ProjectionResponse {
                    model_id: model.to_string(),
                    words: &words,
                    projection: &result,
                }))
            })
        })
        .await?;
    Ok(json_response(StatusCode::OK, bytes.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_matches_hand_values() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]), Some(1.0));
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn error_bodies_are_versioned() {
        let bytes = json_bytes(serde_json::json!({"x": 1}));
        assert_eq!(&bytes[..], br#"{"schema_version":1,"x":1}"#);
    }

    #[test]
    fn projection_params_override_defaults() {
        let q: HashMap<String, String> = [("perplexity", "2.5"), ("seed", "9")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let p = projection_params(&TsneParams::default(), &q).unwrap();
        assert_eq!(p.perplexity, Some(2.5));
        assert_eq!(p.seed, 9);
        assert_eq!(p.iterations, TsneParams::default().iterations);
        let bad: HashMap<String, String> = [("iterations".to_string(), "many".to_string())].into();
        assert_eq!(
            projection_params(&TsneParams::default(), &bad)
                .unwrap_err()
                .kind,
            "invalid-parameter"
        );
    }
}
