//! One article through prompt, model, validation, structuring fallback and salvage.

mod parse;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Article, EntityClass};
use crate::gateway::{ChatParams, ChatRequest, Gateway, GatewayError, Purpose};
use crate::prompts::{PromptError, PromptSet, PromptVariant};
use crate::text::dedup_normalized;

pub(crate) use parse::{first_json_array, json_objects};
pub use parse::{salvage_parse, validate_response, Invalid};

pub const DEFAULT_EXTRACTION_MODEL: &str = "gemma2:9b";
pub const DEFAULT_STRUCTURING_MODEL: &str = "qwen2:7b";

fn default_variant_label() -> String {
    "-".to_string()
}

/// Entities extracted from one article for one class, with parsing provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub article_id: String,
    pub entity_class: EntityClass,
    #[serde(default)]
    pub entities: Vec<String>,
    pub model_id: String,
    #[serde(default = "default_variant_label")]
    pub variant_label: String,
    #[serde(default)]
    pub raw_response: String,
    #[serde(default)]
    pub structuring_invoked: bool,
    #[serde(default)]
    pub json_error: bool,
    #[serde(default)]
    pub salvaged: bool,
    #[serde(default)]
    pub latency_s: f64,
}

impl Prediction {
    /// `json_error` implies `structuring_invoked`; `salvaged` implies `json_error`.
    pub fn flags_consistent(&self) -> bool {
        (!self.json_error || self.structuring_invoked) && (!self.salvaged || self.json_error)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, thiserror::Error)]
pub enum PredictionsFileError {
    #[error("cannot access {path}: {message}")]
    Io { path: String, message: String },
    #[error("predictions file does not match the schema: {0}")]
    Schema(String),
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, PredictionsFileError> {
    let raw = std::fs::read_to_string(path).map_err(|e| PredictionsFileError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&raw).map_err(|e| PredictionsFileError::Schema(e.to_string()))
}

pub fn write_predictions(
    path: &Path,
    predictions: &[Prediction],
) -> Result<(), PredictionsFileError> {
    let mut body = serde_json::to_string_pretty(predictions).expect("predictions serialize");
    body.push('\n');
    std::fs::write(path, body).map_err(|e| PredictionsFileError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Runs the extraction flow against a gateway.
pub struct Extractor<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptSet,
    structuring_model: String,
    params: ChatParams,
}

impl<'a> Extractor<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptSet) -> Self {
        Self {
            gateway,
            prompts,
            structuring_model: DEFAULT_STRUCTURING_MODEL.to_string(),
            params: ChatParams::default(),
        }
    }

    pub fn structuring_model(mut self, model_id: impl Into<String>) -> Self {
        self.structuring_model = model_id.into();
        self
    }

    pub fn params(mut self, params: ChatParams) -> Self {
        self.params = params;
        self
    }

    async fn ask(
        &self,
        model: &str,
        prompt: String,
        purpose: Purpose,
    ) -> Result<(String, f64), GatewayError> {
        let exchange = self
            .gateway
            .chat(ChatRequest::new(model, prompt, purpose).with_params(self.params.clone()))
            .await?;
        Ok((exchange.response_text, exchange.latency_s))
    }

    /// Extracts one class of entities from one article.
    ///
    /// An invalid first answer is sent once to the structuring model. If that answer is
    /// invalid too, the prediction is flagged `json_error` and salvage is attempted on
    /// the structured answer, then on the original one; when both fail the entity list
    /// is empty. Parse-level failures never surface as errors.
    pub async fn extract_entities(
        &self,
        article: &Article,
        variant: &PromptVariant,
        model_id: &str,
    ) -> Result<Prediction, ExtractionError> {
        let class = variant.entity_class();
        let prompt = self.prompts.render_extraction_prompt(article, variant)?;
        let (raw, mut latency) = self.ask(model_id, prompt, Purpose::Extraction).await?;

        let mut prediction = Prediction {
            article_id: article.id.clone(),
            entity_class: class,
            entities: Vec::new(),
            model_id: model_id.to_string(),
            variant_label: variant.label(),
            raw_response: raw,
            structuring_invoked: false,
            json_error: false,
            salvaged: false,
            latency_s: 0.0,
        };

        let names = match validate_response(&prediction.raw_response, class) {
            Ok(names) => names,
            Err(reason) => {
                tracing::debug!(article = %article.id, %reason, "invalid response; structuring");
                prediction.structuring_invoked = true;
                let structured = match self
                    .prompts
                    .render_structuring_prompt(&prediction.raw_response, class)
                {
                    Ok(p) => {
                        let (text, l) = self
                            .ask(&self.structuring_model, p, Purpose::Structuring)
                            .await?;
                        latency += l;
                        Some(text)
                    }
                    Err(PromptError::EmptyInput(_)) => None,
                    Err(e) => return Err(e.into()),
                };
                match structured.as_deref().map(|t| validate_response(t, class)) {
                    Some(Ok(names)) => names,
                    _ => {
                        prediction.json_error = true;
                        let salvaged = structured
                            .as_deref()
                            .and_then(|t| salvage_parse(t, class).ok())
                            .or_else(|| salvage_parse(&prediction.raw_response, class).ok());
                        prediction.salvaged = salvaged.is_some();
                        salvaged.unwrap_or_default()
                    }
                }
            }
        };
        prediction.entities = dedup_normalized(names);
        prediction.latency_s = latency;
        Ok(prediction)
    }
}
