//! Typed client for the annotation service.

use reqwest::{Method, StatusCode, Url};
use serde::de::DeserializeOwned;
use serde::Serialize;

use finner_core::bench::{
    AnnotationDraft, ApiError, ArticleSummary, ExportRequest, StoredVersion, VerificationResult,
    VerifyRequest,
};
use finner_core::corpus::{Article, Dataset, EntityClass};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid base url '{0}'")]
    BaseUrl(String),
    #[error("HTTP {status}: {error}")]
    Api { status: u16, error: ApiError },
    #[error(transparent)]
    Http(#[from] reqwest::Error),
}

impl ClientError {
    /// The service's error code, for failures the service answered.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { error, .. } => Some(&error.code),
            _ => None,
        }
    }

    pub fn is_conflict(&self) -> bool {
        matches!(self, ClientError::Api { status, .. } if *status == StatusCode::CONFLICT.as_u16())
    }
}

#[derive(Debug, Clone)]
pub struct BenchClient {
    base: Url,
    http: reqwest::Client,
}

impl BenchClient {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let base = Url::parse(base_url).map_err(|_| ClientError::BaseUrl(base_url.to_string()))?;
        if base.cannot_be_a_base() {
            return Err(ClientError::BaseUrl(base_url.to_string()));
        }
        Ok(Self {
            base,
            http: reqwest::Client::new(),
        })
    }

    fn url(&self, segments: &[&str]) -> Url {
        let mut url = self.base.clone();
        url.path_segments_mut()
            .expect("checked in new")
            .pop_if_empty()
            .extend(segments);
        url
    }

    async fn send<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        segments: &[&str],
        body: Option<&B>,
    ) -> Result<T, ClientError> {
        let mut request = self.http.request(method, self.url(segments));
        if let Some(b) = body {
            request = request.json(b);
        }
        let response = request.send().await?;
        let status = response.status();
        if status.is_success() {
            return Ok(response.json().await?);
        }
        let bytes = response.bytes().await?;
        let error = serde_json::from_slice::<ApiError>(&bytes).unwrap_or_else(|_| {
            ApiError::new("http_error", String::from_utf8_lossy(&bytes).into_owned())
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            error,
        })
    }

    pub async fn articles(&self) -> Result<Vec<ArticleSummary>, ClientError> {
        self.send::<(), _>(Method::GET, &["articles"], None).await
    }

    pub async fn article(&self, id: &str) -> Result<Article, ClientError> {
        self.send::<(), _>(Method::GET, &["articles", id], None)
            .await
    }

    /// The stored draft, or the pre-annotation at version 0.
    pub async fn draft(
        &self,
        id: &str,
        class: EntityClass,
    ) -> Result<AnnotationDraft, ClientError> {
        self.send::<(), _>(
            Method::GET,
            &["articles", id, "draft", class.as_str()],
            None,
        )
        .await
    }

    /// Stores `draft`, which must carry the version it was based on. Returns the new version.
    pub async fn put_draft(&self, draft: &AnnotationDraft) -> Result<u64, ClientError> {
        let stored: StoredVersion = self
            .send(
                Method::PUT,
                &[
                    "articles",
                    &draft.article_id,
                    "draft",
                    draft.entity_class.as_str(),
                ],
                Some(draft),
            )
            .await?;
        Ok(stored.version)
    }

    pub async fn verify(
        &self,
        id: &str,
        class: EntityClass,
        model_id: Option<&str>,
    ) -> Result<Vec<VerificationResult>, ClientError> {
        let body = VerifyRequest {
            model_id: model_id.map(str::to_string),
        };
        self.send(
            Method::POST,
            &["articles", id, "verify", class.as_str()],
            Some(&body),
        )
        .await
    }

    pub async fn export(&self, dataset_name: &str) -> Result<Dataset, ClientError> {
        let body = ExportRequest {
            dataset_name: dataset_name.to_string(),
        };
        self.send(Method::POST, &["export"], Some(&body)).await
    }
}
