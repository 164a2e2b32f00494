//! Read-only HTTP+JSON service over a trained head.
//!
//! Endpoints:
//! - `GET /items`
//! - `GET /items/{id}/interpretation?class=&top_k=`
//! - `POST /intervene` with `{"item_id": ..., "overrides": {"<index>": value}}`
//! - `GET /model/weights?threshold=&hard_threshold=`
//!
//! Every success payload is the `serde_json` serialization of the matching library result.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cbm_core::concept_space::score_dataset;
use cbm_core::interpret::{export_sankey, instance_contributions};
use cbm_core::intervene::{what_if, InterventionRequest};
use cbm_core::linear_head::LinearHead;
use cbm_core::tensor_io::{ConceptSet, Dataset, Split};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("concept texts of the model and the concept set differ")]
    ConceptMismatch,
    #[error("model has {model} classes, dataset has {dataset}")]
    ClassMismatch { model: usize, dataset: usize },
    #[error("duplicate item id {0}")]
    DuplicateItem(String),
    #[error("invalid CORS origin {0:?}")]
    InvalidOrigin(String),
    #[error(transparent)]
    Core(#[from] cbm_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One item with its normalized concept vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEntry {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub concepts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub predicted_class: usize,
}

/// Immutable after construction.
#[derive(Debug)]
pub struct ServiceState {
    head: LinearHead,
    items: Vec<ItemEntry>,
    index: HashMap<String, usize>,
}

impl ServiceState {
    pub fn new(head: LinearHead, items: Vec<ItemEntry>) -> Result<Self, ServeError> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if item.concepts.len() != head.num_concepts() {
                return Err(cbm_core::Error::DimensionMismatch {
                    what: "item concept vector",
                    expected: head.num_concepts(),
                    found: item.concepts.len(),
                }
                .into());
            }
            if index.insert(item.id.clone(), i).is_some() {
                return Err(ServeError::DuplicateItem(item.id.clone()));
            }
        }
        Ok(Self { head, items, index })
    }

    /// Scores and normalizes every dataset item with the head's pooling mode and normalizer.
    pub fn from_dataset(head: LinearHead, dataset: &Dataset, concepts: &ConceptSet) -> Result<Self, ServeError> {
        if concepts.texts() != head.concept_texts() {
            return Err(ServeError::ConceptMismatch);
        }
        let classes = dataset.manifest().num_classes();
        if classes != head.num_classes() {
            return Err(ServeError::ClassMismatch {
                model: head.num_classes(),
                dataset: classes,
            });
        }
        let scores = score_dataset(dataset, concepts, head.pooling_mode())?;
        let items = dataset
            .items()
            .iter()
            .zip(scores)
            .map(|(record, raw)| {
                Ok(ItemEntry {
                    id: record.id.clone(),
                    label: record.label,
                    split: record.split,
                    concepts: head.normalizer().apply_scores(&raw)?,
                })
            })
            .collect::<Result<Vec<_>, cbm_core::Error>>()?;
        log::info!("precomputed concept vectors for {} items", items.len());
        Self::new(head, items)
    }

    pub fn head(&self) -> &LinearHead {
        &self.head
    }

    pub fn items(&self) -> &[ItemEntry] {
        &self.items
    }

    pub fn item(&self, id: &str) -> Option<&ItemEntry> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn summaries(&self) -> Result<Vec<ItemSummary>, cbm_core::Error> {
        self.items
            .iter()
            .map(|item| {
                Ok(ItemSummary {
                    id: item.id.clone(),
                    label: item.label,
                    split: item.split,
                    predicted_class: self.head.forward(&item.concepts)?.predicted_class,
                })
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn unknown_item(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown item {id:?}"))
    }
}

impl From<cbm_core::Error> for ApiError {
    fn from(e: cbm_core::Error) -> Self {
        use cbm_core::Error as E;
        let status = match e {
            E::ScoreOutOfRange(_) | E::ConceptOutOfRange { .. } | E::ClassOutOfRange { .. } => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Response, ApiError> {
    let body = serde_json::to_vec(value).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

type Shared = Arc<ServiceState>;

async fn list_items(State(state): State<Shared>) -> Result<Response, ApiError> {
    json_bytes(&state.summaries()?)
}

#[derive(Debug, Deserialize)]
struct InterpretationQuery {
    class: Option<usize>,
    top_k: Option<usize>,
}

async fn interpretation(
    State(state): State<Shared>,
    Path(id): Path<String>,
    query: Result<Query<InterpretationQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(query) = query?;
    let item = state.item(&id).ok_or_else(|| ApiError::unknown_item(&id))?;
    let head = state.head();
    let class = match query.class {
        Some(c) => c,
        None => head.forward(&item.concepts)?.predicted_class,
    };
    json_bytes(&instance_contributions(head, &item.concepts, class, query.top_k, Some(&id))?)
}

#[derive(Debug, Deserialize)]
struct InterveneBody {
    item_id: String,
    #[serde(default)]
    overrides: BTreeMap<usize, f64>,
}

async fn intervene(
    State(state): State<Shared>,
    body: Result<Json<InterveneBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(body) = body?;
    let item = state
        .item(&body.item_id)
        .ok_or_else(|| ApiError::unknown_item(&body.item_id))?;
    let request = InterventionRequest {
        overrides: body.overrides,
    };
    json_bytes(&what_if(state.head(), &item.concepts, &request)?)
}

#[derive(Debug, Deserialize)]
struct WeightsQuery {
    threshold: Option<f64>,
    hard_threshold: Option<f64>,
}

async fn model_weights(
    State(state): State<Shared>,
    query: Result<Query<WeightsQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(query) = query?;
    for (name, value) in [("threshold", query.threshold), ("hard_threshold", query.hard_threshold)] {
        if let Some(v) = value {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ApiError::bad_request(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
    }
    json_bytes(&export_sankey(state.head(), query.threshold, query.hard_threshold))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such route")
}

/// Builds the router. With `cors_origin` set, that origin may call the API cross-origin.
pub fn router(state: Arc<ServiceState>, cors_origin: Option<&str>) -> Result<Router, ServeError> {
    let mut app = Router::new()
        .route("/items", get(list_items))
        .route("/items/{id}/interpretation", get(interpretation))
        .route("/intervene", post(intervene))
        .route("/model/weights", get(model_weights))
        .fallback(not_found)
        .with_state(state);
    if let Some(origin) = cors_origin {
        let value = HeaderValue::from_str(origin).map_err(|_| ServeError::InvalidOrigin(origin.to_string()))?;
        app = app.layer(
            CorsLayer::new()
                .allow_origin(value)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    Ok(app)
}

/// Serves until the process is stopped.
pub async fn serve(state: ServiceState, addr: SocketAddr, cors_origin: Option<&str>) -> Result<(), ServeError> {
    let app = router(Arc::new(state), cors_origin)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
