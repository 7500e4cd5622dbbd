//! Model x variant x repetition grid, external baseline scoring, and run directories.

mod config;
mod report;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use futures::{StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use crate::corpus::{load_dataset, Article, CorpusError, Dataset, EntityClass};
use crate::extraction::{
    read_predictions, write_predictions, ExtractionError, Extractor, Prediction,
    PredictionsFileError,
};
use crate::gateway::{ChatParams, Gateway, GatewayError, GatewayMode};
use crate::matching::{oracle_match, rename, MatchError, MatchResult, Matcher};
use crate::prompts::{PromptError, PromptSet, PromptVariant};
use crate::scoring::{aggregate, failure_percent, score, ScoreCard, ScoringError};
use crate::text::dedup_normalized;

pub use config::{ExperimentConfig, GatewaySection, MatcherKind};
pub use report::{
    emit_report, parse_csv_rows, render_report, ReportFormat, ReportRow, RunReport, StructuringRow,
};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Matching(#[from] MatchError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Predictions(#[from] PredictionsFileError),
    #[error("{path}: prediction for unknown article id \"{id}\"")]
    UnknownArticle { path: String, id: String },
    #[error("{path}: {message}")]
    InvalidPrediction { path: String, message: String },
    #[error("model server does not serve: {}", .0.join(", "))]
    HealthCheck(Vec<String>),
    #[error("cannot access {path}: {message}")]
    Io { path: String, message: String },
    #[error("report: {0}")]
    Report(String),
    #[error("run aborted, partial results in {}: {source}", run_dir.display())]
    Aborted {
        run_dir: PathBuf,
        source: Box<ExperimentError>,
    },
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// One article's prediction after optional matching and renaming.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub final_entities: Vec<String>,
    pub card: ScoreCard,
    pub matched: Option<MatchResult>,
    pub latency_s: f64,
}

/// Matching record persisted in `matches.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchLogEntry {
    pub model_id: String,
    pub variant_label: String,
    pub repetition: u32,
    pub article_id: String,
    #[serde(rename = "match")]
    pub matched: MatchResult,
}

/// Rows and matching records from scoring a predictions set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<ReportRow>,
    pub matches: Vec<MatchLogEntry>,
}

/// Extraction and evaluation against one dataset through one gateway.
pub struct Harness<'a> {
    pub dataset: &'a Dataset,
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub structuring_model: String,
    pub matching_model: String,
    pub matcher: MatcherKind,
    pub params: ChatParams,
    pub concurrent_articles: usize,
}

impl<'a> Harness<'a> {
    pub fn new(dataset: &'a Dataset, gateway: &'a Gateway, prompts: &'a PromptSet) -> Self {
        let defaults = ExperimentConfig::new("", EntityClass::Individual);
        Self {
            dataset,
            gateway,
            prompts,
            structuring_model: defaults.structuring_model,
            matching_model: defaults.matching_model,
            matcher: defaults.matcher,
            params: ChatParams::default(),
            concurrent_articles: 1,
        }
    }

    pub fn from_config(
        config: &ExperimentConfig,
        dataset: &'a Dataset,
        gateway: &'a Gateway,
        prompts: &'a PromptSet,
    ) -> Self {
        Self {
            dataset,
            gateway,
            prompts,
            structuring_model: config.structuring_model.clone(),
            matching_model: config.matching_model.clone(),
            matcher: config.matcher,
            params: config.gateway.params(),
            concurrent_articles: config.concurrent_articles,
        }
    }

    fn extractor(&self) -> Extractor<'_> {
        Extractor::new(self.gateway, self.prompts)
            .structuring_model(&self.structuring_model)
            .params(self.params.clone())
    }

    fn replaying(&self) -> bool {
        self.gateway.mode() == GatewayMode::Replay
    }

    /// Scores one prediction against its gold list, matching and renaming first when
    /// `matching` is on. The prediction itself is never modified.
    pub async fn score_prediction(
        &self,
        prediction: &Prediction,
        matching: bool,
    ) -> Result<Scored, ExperimentError> {
        let gold = self
            .dataset
            .gold_entities(&prediction.article_id, prediction.entity_class);
        if !matching {
            return Ok(Scored {
                final_entities: prediction.entities.clone(),
                card: score(gold, &prediction.entities),
                matched: None,
                latency_s: 0.0,
            });
        }
        let (m, latency_s) = match self.matcher {
            MatcherKind::Oracle => (oracle_match(gold, &prediction.entities), 0.0),
            MatcherKind::Llm => {
                Matcher::new(self.gateway, self.prompts)
                    .model(&self.matching_model)
                    .params(self.params.clone())
                    .llm_match_timed(gold, &prediction.entities)
                    .await?
            }
        };
        let final_entities = rename(&prediction.entities, &m)?;
        Ok(Scored {
            card: score(gold, &final_entities),
            final_entities,
            matched: Some(m),
            latency_s,
        })
    }

    async fn process(
        &self,
        article: &Article,
        variant: &PromptVariant,
        model_id: &str,
        matching: bool,
    ) -> Result<(Prediction, Scored), ExperimentError> {
        let prediction = self
            .extractor()
            .extract_entities(article, variant, model_id)
            .await?;
        let scored = self.score_prediction(&prediction, matching).await?;
        Ok((prediction, scored))
    }

    async fn run_pass(
        &self,
        variant: &PromptVariant,
        model_id: &str,
        matching: bool,
    ) -> Result<(Vec<(Prediction, Scored)>, f64), ExperimentError> {
        let start = Instant::now();
        let outcomes: Vec<(Prediction, Scored)> = futures::stream::iter(&self.dataset.articles)
            .map(|a| self.process(a, variant, model_id, matching))
            .buffered(self.concurrent_articles.max(1))
            .try_collect()
            .await?;
        let elapsed = if self.replaying() {
            outcomes
                .iter()
                .map(|(p, s)| p.latency_s + s.latency_s)
                .sum()
        } else {
            start.elapsed().as_secs_f64()
        };
        Ok((outcomes, elapsed))
    }

    /// Extracts one class from every article, in dataset order.
    pub async fn extract_all(
        &self,
        variant: &PromptVariant,
        model_id: &str,
    ) -> Result<Vec<Prediction>, ExperimentError> {
        let extractor = self.extractor();
        let preds = futures::stream::iter(&self.dataset.articles)
            .map(|a| extractor.extract_entities(a, variant, model_id))
            .buffered(self.concurrent_articles.max(1))
            .try_collect()
            .await?;
        Ok(preds)
    }

    /// Scores a predictions set, one row per (model, variant) in order of first
    /// appearance. The n-th prediction for an article within a group belongs to
    /// repetition n; an article missing from a repetition counts as predicting nothing.
    /// Pass time is the sum of recorded latencies plus matching latencies.
    pub async fn evaluate(
        &self,
        class: EntityClass,
        predictions: &[Prediction],
        matching: bool,
    ) -> Result<Evaluation, ExperimentError> {
        let mut out = Evaluation::default();
        for group in group_predictions(predictions, class) {
            let mut cards = Vec::new();
            let mut times = Vec::new();
            let mut json_errors = 0;
            for (rep, by_article) in group.reps.iter().enumerate() {
                let mut pass_cards = Vec::new();
                let mut time = 0.0;
                for article in &self.dataset.articles {
                    let prediction = match by_article.get(article.id.as_str()) {
                        Some(p) => (*p).clone(),
                        None => empty_prediction(
                            &article.id,
                            class,
                            &group.model_id,
                            &group.variant_label,
                        ),
                    };
                    json_errors += usize::from(prediction.json_error);
                    let scored = self.score_prediction(&prediction, matching).await?;
                    time += prediction.latency_s + scored.latency_s;
                    if let Some(m) = scored.matched {
                        out.matches.push(MatchLogEntry {
                            model_id: group.model_id.clone(),
                            variant_label: group.variant_label.clone(),
                            repetition: rep as u32 + 1,
                            article_id: article.id.clone(),
                            matched: m,
                        });
                    }
                    pass_cards.push(scored.card);
                }
                cards.push(ScoreCard::pooled(&pass_cards));
                times.push(time);
            }
            let total = group.reps.len() * self.dataset.articles.len();
            out.rows.push(make_row(
                &group.model_id,
                &group.variant_label,
                &cards,
                &times,
                matching,
                json_errors,
                total,
            )?);
        }
        Ok(out)
    }
}

fn empty_prediction(
    article_id: &str,
    class: EntityClass,
    model_id: &str,
    label: &str,
) -> Prediction {
    Prediction {
        article_id: article_id.to_string(),
        entity_class: class,
        entities: Vec::new(),
        model_id: model_id.to_string(),
        variant_label: label.to_string(),
        raw_response: String::new(),
        structuring_invoked: false,
        json_error: false,
        salvaged: false,
        latency_s: 0.0,
    }
}

struct Group<'p> {
    model_id: String,
    variant_label: String,
    reps: Vec<HashMap<&'p str, &'p Prediction>>,
}

fn group_predictions(predictions: &[Prediction], class: EntityClass) -> Vec<Group<'_>> {
    let mut groups: Vec<Group> = Vec::new();
    for p in predictions.iter().filter(|p| p.entity_class == class) {
        let idx = match groups
            .iter()
            .position(|g| g.model_id == p.model_id && g.variant_label == p.variant_label)
        {
            Some(i) => i,
            None => {
                groups.push(Group {
                    model_id: p.model_id.clone(),
                    variant_label: p.variant_label.clone(),
                    reps: Vec::new(),
                });
                groups.len() - 1
            }
        };
        let reps = &mut groups[idx].reps;
        match reps
            .iter_mut()
            .find(|r| !r.contains_key(p.article_id.as_str()))
        {
            Some(rep) => {
                rep.insert(&p.article_id, p);
            }
            None => reps.push(HashMap::from([(p.article_id.as_str(), p)])),
        }
    }
    groups
}

fn make_row(
    model_id: &str,
    variant_label: &str,
    cards: &[ScoreCard],
    times: &[f64],
    matching: bool,
    json_errors: usize,
    total_iterations: usize,
) -> Result<ReportRow, ExperimentError> {
    let agg = aggregate(cards, times)?;
    Ok(ReportRow {
        model_id: model_id.to_string(),
        variant_label: variant_label.to_string(),
        accuracy: agg.accuracy,
        precision: agg.precision,
        recall: agg.recall,
        f1: agg.f1,
        iteration_time_s: agg.iteration_time_s,
        matching_enabled: matching,
        json_errors,
        total_iterations,
        failure_percent: failure_percent(json_errors, total_iterations.max(1))?,
        baseline: false,
    })
}

/// Loads an external tagger's predictions file and checks it against the dataset.
/// Entity lists are normalized and deduplicated like model output.
pub fn ingest_external_predictions(
    path: &Path,
    dataset: &Dataset,
) -> Result<Vec<Prediction>, ExperimentError> {
    let mut predictions = read_predictions(path)?;
    let where_ = path.display().to_string();
    for p in &mut predictions {
        if dataset.article(&p.article_id).is_none() {
            return Err(ExperimentError::UnknownArticle {
                path: where_,
                id: p.article_id.clone(),
            });
        }
        if p.model_id.trim().is_empty() {
            return Err(ExperimentError::InvalidPrediction {
                path: where_,
                message: format!("empty model_id for article \"{}\"", p.article_id),
            });
        }
        if !p.flags_consistent() {
            return Err(ExperimentError::InvalidPrediction {
                path: where_,
                message: format!("inconsistent flags for article \"{}\"", p.article_id),
            });
        }
        p.entities = dedup_normalized(&p.entities);
    }
    Ok(predictions)
}

/// Everything one experiment produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub run_dir: PathBuf,
    pub predictions: Vec<Prediction>,
}

/// Creates `run-<UTC timestamp>` under `out_dir`, suffixed when the name is taken.
pub fn create_run_dir(out_dir: &Path) -> Result<PathBuf, ExperimentError> {
    std::fs::create_dir_all(out_dir).map_err(|e| ExperimentError::io(out_dir, e))?;
    let stamp = chrono::Utc::now().format("run-%Y%m%dT%H%M%SZ").to_string();
    for n in 1.. {
        let name = if n == 1 {
            stamp.clone()
        } else {
            format!("{stamp}-{n}")
        };
        let dir = out_dir.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(ExperimentError::io(&dir, e)),
        }
    }
    unreachable!()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut body = serde_json::to_string_pretty(value).expect("serializable");
    body.push('\n');
    std::fs::write(path, body).map_err(|e| ExperimentError::io(path, e))
}

#[derive(Default)]
struct Collected {
    rows: Vec<ReportRow>,
    predictions: Vec<Prediction>,
    matches: Vec<MatchLogEntry>,
}

/// Wraps rows in a report, adding the per-model structuring summary.
pub fn build_report(
    config: &ExperimentConfig,
    dataset: &Dataset,
    rows: Vec<ReportRow>,
) -> RunReport {
    let mut structuring: Vec<StructuringRow> = Vec::new();
    for row in rows.iter().filter(|r| !r.baseline) {
        match structuring.iter_mut().find(|s| s.model_id == row.model_id) {
            Some(s) => {
                s.json_errors += row.json_errors;
                s.iterations += row.total_iterations;
            }
            None => structuring.push(StructuringRow {
                model_id: row.model_id.clone(),
                json_errors: row.json_errors,
                iterations: row.total_iterations,
                failure_percent: 0.0,
            }),
        }
    }
    for s in &mut structuring {
        s.failure_percent = failure_percent(s.json_errors, s.iterations.max(1)).unwrap_or(0.0);
    }
    RunReport {
        entity_class: config.entity_class,
        article_count: dataset.articles.len(),
        repetitions: config.repetitions,
        concurrent_articles: config.concurrent_articles,
        rows,
        structuring,
    }
}

fn persist(
    run_dir: &Path,
    report: &RunReport,
    collected: &Collected,
    gateway: &Gateway,
) -> Result<(), ExperimentError> {
    if !report.rows.is_empty() {
        for format in ReportFormat::ALL {
            emit_report(report, format, run_dir)?;
        }
    }
    write_predictions(&run_dir.join("predictions.json"), &collected.predictions)?;
    write_json(&run_dir.join("matches.json"), &collected.matches)?;
    if gateway.mode() != GatewayMode::Replay {
        write_json(&run_dir.join("exchanges.json"), &gateway.take_log())?;
    }
    Ok(())
}

/// Loads dataset, prompts and gateway from the config and runs the grid.
pub async fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    config.validate()?;
    let dataset = load_dataset(&config.dataset)?;
    let prompts = match &config.prompt_dir {
        Some(dir) => PromptSet::load_dir(dir)?,
        None => PromptSet::builtin(),
    };
    let gateway = Gateway::from_config(&config.gateway.gateway_config())?;
    run_with(config, &dataset, &prompts, &gateway).await
}

/// Runs the grid with an already-built gateway. Each (model, variant) repetition is one
/// full pass over the articles; external baselines are scored once, without and (when
/// matching is on) with matching. Reports, predictions, matches, the config and, outside
/// replay, the exchange log land in a fresh run directory. On failure the rows finished
/// so far are flushed before the error is returned.
pub async fn run_with(
    config: &ExperimentConfig,
    dataset: &Dataset,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<RunOutcome, ExperimentError> {
    config.validate()?;
    let variants = config.prompt_variants()?;
    let matching = config.matching_enabled();
    let harness = Harness::from_config(config, dataset, gateway, prompts);
    gateway.set_logging(gateway.mode() != GatewayMode::Replay);

    if gateway.mode() != GatewayMode::Replay {
        let mut needed: Vec<&str> = config.models.iter().map(String::as_str).collect();
        needed.push(&config.structuring_model);
        if matching && config.matcher == MatcherKind::Llm {
            needed.push(&config.matching_model);
        }
        needed.dedup();
        let mut missing = Vec::new();
        for model in needed {
            if !missing.contains(&model.to_string()) && !gateway.health_check(model).await {
                missing.push(model.to_string());
            }
        }
        if !missing.is_empty() {
            return Err(ExperimentError::HealthCheck(missing));
        }
    }

    let run_dir = create_run_dir(&config.out_dir)?;
    std::fs::write(run_dir.join("config.toml"), config.to_toml())
        .map_err(|e| ExperimentError::io(&run_dir, e))?;

    let mut collected = Collected::default();
    let result = run_grid(
        config,
        dataset,
        &harness,
        &variants,
        matching,
        &mut collected,
    )
    .await;
    let report = build_report(config, dataset, std::mem::take(&mut collected.rows));
    let persisted = persist(&run_dir, &report, &collected, gateway);
    match result {
        Ok(()) => {
            persisted?;
            Ok(RunOutcome {
                report,
                run_dir,
                predictions: collected.predictions,
            })
        }
        Err(e) => Err(ExperimentError::Aborted {
            run_dir,
            source: Box::new(e),
        }),
    }
}

async fn run_grid(
    config: &ExperimentConfig,
    dataset: &Dataset,
    harness: &Harness<'_>,
    variants: &[PromptVariant],
    matching: bool,
    collected: &mut Collected,
) -> Result<(), ExperimentError> {
    for model_id in &config.models {
        for variant in variants {
            let mut cards = Vec::new();
            let mut times = Vec::new();
            let mut json_errors = 0;
            for rep in 1..=config.repetitions {
                tracing::info!(model = %model_id, variant = %variant.label(), rep, "pass");
                let (outcomes, elapsed) = harness.run_pass(variant, model_id, matching).await?;
                let mut pass_cards = Vec::new();
                for (prediction, scored) in outcomes {
                    json_errors += usize::from(prediction.json_error);
                    if let Some(m) = scored.matched {
                        collected.matches.push(MatchLogEntry {
                            model_id: model_id.clone(),
                            variant_label: prediction.variant_label.clone(),
                            repetition: rep,
                            article_id: prediction.article_id.clone(),
                            matched: m,
                        });
                    }
                    pass_cards.push(scored.card);
                    collected.predictions.push(prediction);
                }
                cards.push(ScoreCard::pooled(&pass_cards));
                times.push(elapsed);
            }
            let total = config.repetitions as usize * dataset.articles.len();
            collected.rows.push(make_row(
                model_id,
                &variant.label(),
                &cards,
                &times,
                matching,
                json_errors,
                total,
            )?);
        }
    }

    for path in &config.baselines {
        let predictions = ingest_external_predictions(path, dataset)?;
        let settings: &[bool] = if matching { &[false, true] } else { &[false] };
        for &m in settings {
            let eval = harness
                .evaluate(config.entity_class, &predictions, m)
                .await?;
            collected
                .rows
                .extend(eval.rows.into_iter().map(|r| ReportRow {
                    baseline: true,
                    ..r
                }));
            collected.matches.extend(eval.matches);
        }
    }
    Ok(())
}
