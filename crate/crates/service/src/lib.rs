//! HTTP+JSON service for the annotation workflow: list articles, hand out pre-annotated
//! drafts, store reviewed drafts with optimistic versioning, run advisory model
//! verification, and export the reviewed gold lists as a dataset file.
//!
//! Routes:
//!
//! | method | path | body | answer |
//! |---|---|---|---|
//! | GET | `/articles` | | `[ArticleSummary]` |
//! | GET | `/articles/{id}` | | `Article` |
//! | GET | `/articles/{id}/draft/{class}` | | `AnnotationDraft` |
//! | PUT | `/articles/{id}/draft/{class}` | `AnnotationDraft` | `{"version": n}` |
//! | POST | `/articles/{id}/verify/{class}` | `{"model_id"?}` | `[VerificationResult]` |
//! | POST | `/export` | `{"dataset_name"}` | dataset file |
//!
//! Failures answer `{"code", "message"}`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;

use finner_core::bench::{
    draft_from_prediction, export_gold, is_safe_name, validate_draft, verify_draft,
    AnnotationDraft, ApiError, ArticleSummary, ClassVersions, EntrySource, ExportRequest,
    StoredVersion, VerifyRequest,
};
use finner_core::corpus::{Article, Dataset, EntityClass};
use finner_core::extraction::{Extractor, Prediction};
use finner_core::gateway::{ChatParams, Gateway};
use finner_core::prompts::{PromptSet, PromptVariant};

mod store;

pub use store::DraftStore;

/// Model access for verification and pipeline pre-annotation.
#[derive(Clone)]
pub struct LlmSettings {
    pub gateway: Arc<Gateway>,
    pub prompts: Arc<PromptSet>,
    /// Default model for verification and pipeline pre-annotation.
    pub model_id: String,
    pub structuring_model: String,
    pub params: ChatParams,
}

pub enum Preannotation {
    None,
    /// Predictions read from a file, e.g. an ingested baseline.
    Predictions {
        predictions: Vec<Prediction>,
        source: EntrySource,
    },
    /// Runs the extraction pipeline with the base prompt on first request.
    Pipeline,
}

pub struct BenchConfig {
    pub dataset: Dataset,
    pub drafts_dir: PathBuf,
    pub export_dir: PathBuf,
    pub preannotation: Preannotation,
    pub llm: Option<LlmSettings>,
}

type Key = (String, EntityClass);

pub struct BenchState {
    dataset: Dataset,
    store: DraftStore,
    export_dir: PathBuf,
    predictions: Option<(HashMap<Key, Prediction>, EntrySource)>,
    pipeline: bool,
    llm: Option<LlmSettings>,
    pipeline_cache: Mutex<HashMap<Key, AnnotationDraft>>,
}

impl BenchState {
    pub fn new(config: BenchConfig) -> Self {
        let (predictions, pipeline) = match config.preannotation {
            Preannotation::None => (None, false),
            Preannotation::Predictions {
                predictions,
                source,
            } => {
                let by_key = predictions
                    .into_iter()
                    .map(|p| ((p.article_id.clone(), p.entity_class), p))
                    .collect();
                (Some((by_key, source)), false)
            }
            Preannotation::Pipeline => (None, true),
        };
        Self {
            dataset: config.dataset,
            store: DraftStore::new(config.drafts_dir),
            export_dir: config.export_dir,
            predictions,
            pipeline,
            llm: config.llm,
            pipeline_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &DraftStore {
        &self.store
    }
}

/// A failed request: HTTP status plus the JSON error body.
#[derive(Debug)]
pub struct Failure(pub StatusCode, pub ApiError);

impl Failure {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self(status, ApiError::new(code, message))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type Reply<T> = Result<Json<T>, Failure>;

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, Failure> {
    serde_json::from_slice(body)
        .map_err(|e| Failure::new(StatusCode::BAD_REQUEST, "invalid_json", e.to_string()))
}

fn parse_class(raw: &str) -> Result<EntityClass, Failure> {
    EntityClass::ALL
        .into_iter()
        .find(|c| c.as_str() == raw)
        .ok_or_else(|| {
            Failure::new(
                StatusCode::BAD_REQUEST,
                "invalid_class",
                format!("unknown entity class '{raw}', expected individual or organization"),
            )
        })
}

fn find_article<'a>(state: &'a BenchState, id: &str) -> Result<&'a Article, Failure> {
    state.dataset.article(id).ok_or_else(|| {
        Failure::new(
            StatusCode::NOT_FOUND,
            "article_not_found",
            format!("no article with id '{id}'"),
        )
    })
}

fn routes(state: Arc<BenchState>) -> Router {
    Router::new()
        .route("/articles", get(list_articles))
        .route("/articles/{id}", get(get_article))
        .route(
            "/articles/{id}/draft/{class}",
            get(get_draft).put(put_draft),
        )
        .route("/articles/{id}/verify/{class}", post(verify))
        .route("/export", post(export))
        .method_not_allowed_fallback(|| async {
            Failure::new(
                StatusCode::METHOD_NOT_ALLOWED,
                "method_not_allowed",
                "method not allowed",
            )
        })
        .with_state(state)
}

/// The API plus a static single-page app served for every other path.
pub fn router_with_ui(state: Arc<BenchState>, ui_dir: PathBuf) -> Router {
    routes(state).fallback_service(tower_http::services::ServeDir::new(ui_dir))
}

/// The API with JSON 404s for unknown paths.
pub fn api_router(state: Arc<BenchState>) -> Router {
    routes(state)
        .fallback(|| async { Failure::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
}

async fn list_articles(State(state): State<Arc<BenchState>>) -> Reply<Vec<ArticleSummary>> {
    let mut out = Vec::new();
    for article in &state.dataset.articles {
        let mut versions = ClassVersions::default();
        for class in EntityClass::ALL {
            let v = state
                .store
                .current_version(&article.id, class)
                .map_err(Failure::internal)?;
            versions.set(class, v);
        }
        out.push(ArticleSummary {
            id: article.id.clone(),
            title: article.title.clone(),
            case_label: article.case_label.clone(),
            versions,
        });
    }
    Ok(Json(out))
}

async fn get_article(
    State(state): State<Arc<BenchState>>,
    Path(id): Path<String>,
) -> Reply<Article> {
    Ok(Json(find_article(&state, &id)?.clone()))
}

async fn preannotate(
    state: &BenchState,
    article: &Article,
    class: EntityClass,
) -> Result<AnnotationDraft, Failure> {
    if let Some((by_key, source)) = &state.predictions {
        let prediction = by_key.get(&(article.id.clone(), class));
        return Ok(draft_from_prediction(
            &article.id,
            class,
            prediction,
            *source,
        ));
    }
    let llm = match (&state.llm, state.pipeline) {
        (Some(llm), true) => llm,
        _ => {
            return Err(Failure::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "no_preannotation_source",
                "no pre-annotation source is configured",
            ))
        }
    };
    let key = (article.id.clone(), class);
    if let Some(d) = state.pipeline_cache.lock().expect("cache").get(&key) {
        return Ok(d.clone());
    }
    let prediction = Extractor::new(&llm.gateway, &llm.prompts)
        .structuring_model(llm.structuring_model.clone())
        .params(llm.params.clone())
        .extract_entities(article, &PromptVariant::base(class), &llm.model_id)
        .await
        .map_err(|e| Failure::new(StatusCode::BAD_GATEWAY, "gateway_error", e.to_string()))?;
    let draft = draft_from_prediction(&article.id, class, Some(&prediction), EntrySource::Llm);
    state
        .pipeline_cache
        .lock()
        .expect("cache")
        .insert(key, draft.clone());
    Ok(draft)
}

async fn get_draft(
    State(state): State<Arc<BenchState>>,
    Path((id, class)): Path<(String, String)>,
) -> Reply<AnnotationDraft> {
    let article = find_article(&state, &id)?;
    let class = parse_class(&class)?;
    match state.store.latest(&id, class).map_err(Failure::internal)? {
        Some(d) => Ok(Json(d)),
        None => {
            // hold the stream lock so concurrent first reads share one pipeline run
            let lock = state.store.lock(&id, class);
            let _guard = lock.lock().await;
            Ok(Json(preannotate(&state, article, class).await?))
        }
    }
}

async fn put_draft(
    State(state): State<Arc<BenchState>>,
    Path((id, class)): Path<(String, String)>,
    body: Bytes,
) -> Reply<StoredVersion> {
    find_article(&state, &id)?;
    let class = parse_class(&class)?;
    let draft: AnnotationDraft = parse_body(&body)?;
    validate_draft(&draft, &id, class).map_err(|e| {
        Failure::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_draft",
            e.to_string(),
        )
    })?;

    let lock = state.store.lock(&id, class);
    let _guard = lock.lock().await;
    let current = state
        .store
        .current_version(&id, class)
        .map_err(Failure::internal)?;
    if draft.version != current {
        return Err(Failure::new(
            StatusCode::CONFLICT,
            "version_conflict",
            format!(
                "draft is based on version {} but version {current} is stored",
                draft.version
            ),
        ));
    }
    let version = state.store.append(&draft).map_err(Failure::internal)?;
    tracing::info!(article = %id, %class, version, "draft stored");
    Ok(Json(StoredVersion { version }))
}

async fn verify(
    State(state): State<Arc<BenchState>>,
    Path((id, class)): Path<(String, String)>,
    body: Bytes,
) -> Reply<Vec<finner_core::bench::VerificationResult>> {
    let article = find_article(&state, &id)?;
    let class = parse_class(&class)?;
    let request: VerifyRequest = if body.iter().all(u8::is_ascii_whitespace) {
        VerifyRequest::default()
    } else {
        parse_body(&body)?
    };
    let draft = state
        .store
        .latest(&id, class)
        .map_err(Failure::internal)?
        .ok_or_else(|| {
            Failure::new(
                StatusCode::NOT_FOUND,
                "draft_not_found",
                format!("no stored {class} draft for article '{id}'"),
            )
        })?;
    let llm = state.llm.as_ref().ok_or_else(|| {
        Failure::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "no_gateway",
            "no model gateway is configured",
        )
    })?;
    let model = request.model_id.as_deref().unwrap_or(&llm.model_id);
    let results = verify_draft(
        &llm.gateway,
        &llm.prompts,
        article,
        &draft,
        model,
        &llm.params,
    )
    .await
    .map_err(|e| Failure::new(StatusCode::BAD_GATEWAY, "gateway_error", e.to_string()))?;
    Ok(Json(results))
}

async fn export(State(state): State<Arc<BenchState>>, body: Bytes) -> Reply<Dataset> {
    let request: ExportRequest = parse_body(&body)?;
    if !is_safe_name(&request.dataset_name) {
        return Err(Failure::new(
            StatusCode::BAD_REQUEST,
            "invalid_name",
            format!(
                "dataset name '{}' must use only letters, digits, '-', '_' and '.'",
                request.dataset_name
            ),
        ));
    }
    let mut read_error = None;
    let exported = export_gold(&state.dataset.articles, |id, class| {
        match state.store.latest(id, class) {
            Ok(d) => d,
            Err(e) => {
                read_error.get_or_insert(e);
                None
            }
        }
    });
    if let Some(e) = read_error {
        return Err(Failure::internal(e));
    }
    let dataset = exported
        .map_err(|e| Failure::new(StatusCode::CONFLICT, "unreviewed_articles", e.to_string()))?;
    dataset.validate().map_err(|e| {
        Failure::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_dataset",
            e.to_string(),
        )
    })?;
    std::fs::create_dir_all(&state.export_dir).map_err(Failure::internal)?;
    let path = state
        .export_dir
        .join(format!("{}.json", request.dataset_name));
    dataset.write(&path).map_err(Failure::internal)?;
    tracing::info!(path = %path.display(), "dataset exported");
    Ok(Json(dataset))
}

/// Serves until the listener fails.
pub async fn serve(app: Router, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, app).await
}
