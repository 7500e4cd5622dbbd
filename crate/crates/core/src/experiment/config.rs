//! TOML run configuration.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::EntityClass;
use crate::extraction::{DEFAULT_EXTRACTION_MODEL, DEFAULT_STRUCTURING_MODEL};
use crate::gateway::{resolve_endpoint, ChatParams, GatewayConfig, GatewayMode};
use crate::matching::DEFAULT_MATCHING_MODEL;
use crate::prompts::{enumerate_variants, PromptVariant};

use super::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    Llm,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySection {
    #[serde(default = "default_mode", with = "mode_str")]
    pub mode: GatewayMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub strict_replay: bool,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_seed", skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

fn default_mode() -> GatewayMode {
    GatewayMode::Replay
}
fn yes() -> bool {
    true
}
fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> u64 {
    500
}
fn default_in_flight() -> usize {
    1
}
fn default_seed() -> Option<u64> {
    Some(42)
}

mod mode_str {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::gateway::GatewayMode;

    pub fn serialize<S: Serializer>(mode: &GatewayMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match mode {
            GatewayMode::Live => "live",
            GatewayMode::Record => "record",
            GatewayMode::Replay => "replay",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<GatewayMode, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

impl Default for GatewaySection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl GatewaySection {
    pub fn params(&self) -> ChatParams {
        ChatParams {
            temperature: self.temperature,
            seed: self.seed,
            max_tokens: self.max_tokens,
        }
    }

    /// Gateway settings with the endpoint resolved against the environment override.
    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            mode: self.mode,
            endpoint: resolve_endpoint(self.endpoint.as_deref()),
            fixture_dir: self.fixture_dir.clone(),
            strict_replay: self.strict_replay,
            timeout: Duration::from_secs(self.timeout_s),
            retries: self.retries,
            backoff: Duration::from_millis(self.backoff_ms),
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub entity_class: EntityClass,
    #[serde(default = "default_models")]
    pub models: Vec<String>,
    #[serde(default = "default_structuring")]
    pub structuring_model: String,
    #[serde(default = "default_matching_model")]
    pub matching_model: String,
    /// Defaults to on for organizations and off for individuals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matching: Option<bool>,
    #[serde(default = "default_matcher")]
    pub matcher: MatcherKind,
    /// Addition-id sets; `[]` is the base prompt.
    #[serde(default = "default_variants")]
    pub variants: Vec<Vec<u8>>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    /// Predictions files from external taggers, scored next to the models.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baselines: Vec<PathBuf>,
    /// Articles processed at once within a pass. Above 1 the timings are not comparable.
    #[serde(default = "default_concurrency")]
    pub concurrent_articles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub gateway: GatewaySection,
}

fn default_models() -> Vec<String> {
    vec![DEFAULT_EXTRACTION_MODEL.to_string()]
}
fn default_structuring() -> String {
    DEFAULT_STRUCTURING_MODEL.to_string()
}
fn default_matching_model() -> String {
    DEFAULT_MATCHING_MODEL.to_string()
}
fn default_matcher() -> MatcherKind {
    MatcherKind::Llm
}
fn default_variants() -> Vec<Vec<u8>> {
    vec![Vec::new()]
}
fn default_repetitions() -> u32 {
    1
}
fn default_concurrency() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// A config with defaults for everything but the dataset and class.
    pub fn new(dataset: impl Into<PathBuf>, entity_class: EntityClass) -> Self {
        Self {
            dataset: dataset.into(),
            entity_class,
            models: default_models(),
            structuring_model: default_structuring(),
            matching_model: default_matching_model(),
            matching: None,
            matcher: default_matcher(),
            variants: default_variants(),
            repetitions: 1,
            baselines: Vec::new(),
            concurrent_articles: 1,
            prompt_dir: None,
            out_dir: default_out(),
            gateway: GatewaySection::default(),
        }
    }

    pub fn matching_enabled(&self) -> bool {
        self.matching
            .unwrap_or(self.entity_class == EntityClass::Organization)
    }

    pub fn prompt_variants(&self) -> Result<Vec<PromptVariant>, ExperimentError> {
        Ok(enumerate_variants(self.entity_class, &self.variants)?)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.repetitions < 1 {
            return bad("repetitions must be at least 1");
        }
        if self.models.is_empty() && self.baselines.is_empty() {
            return bad("nothing to run: no models and no baselines");
        }
        if self.models.iter().any(|m| m.trim().is_empty()) {
            return bad("empty model id");
        }
        if self.concurrent_articles < 1 {
            return bad("concurrent_articles must be at least 1");
        }
        if self.gateway.temperature < 0.0 {
            return bad("temperature must be non-negative");
        }
        self.prompt_variants()?;
        Ok(())
    }

    /// Parses TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml(raw: &str, base_dir: &Path) -> Result<Self, ExperimentError> {
        let mut config: Self =
            toml::from_str(raw).map_err(|e| ExperimentError::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut config.dataset);
        resolve(&mut config.out_dir);
        config.baselines.iter_mut().for_each(resolve);
        if let Some(p) = config.prompt_dir.as_mut() {
            resolve(p);
        }
        if let Some(p) = config.gateway.fixture_dir.as_mut() {
            resolve(p);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&raw, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
