//! `finner`: extraction, evaluation and experiment runs over a gold dataset, corpus
//! statistics, baseline ingestion, and the annotation service.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use finner_core::bench::EntrySource;
use finner_core::corpus::{compute_stats, load_dataset, Dataset, EntityClass};
use finner_core::experiment::{
    build_report, create_run_dir, emit_report, ingest_external_predictions, render_report,
    run_experiment, ExperimentConfig, ExperimentError, Harness, MatcherKind, ReportFormat,
};
use finner_core::extraction::write_predictions;
use finner_core::gateway::{Gateway, GatewayMode};
use finner_core::prompts::PromptSet;
use finner_service::{
    api_router, router_with_ui, serve, BenchConfig, BenchState, LlmSettings, Preannotation,
};

/// `println!` that ends the process quietly once stdout is closed, e.g. piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    }};
}

#[derive(Parser)]
#[command(
    name = "finner",
    version,
    about = "LLM entity extraction and evaluation for financial-crime news"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "file")]
    config: Option<PathBuf>,
    /// Gateway mode, overriding the config.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Entity class, overriding the config.
    #[arg(long, global = true, value_enum)]
    class: Option<Class>,
    /// Matching and renaming before scoring, overriding the config.
    #[arg(long, global = true, value_enum)]
    matching: Option<Switch>,
    /// Output directory, overriding the config.
    #[arg(long, global = true, value_name = "dir")]
    out: Option<PathBuf>,
    /// Dataset file; replaces the config's, or stands in for a config.
    #[arg(long, global = true, value_name = "file")]
    dataset: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Live,
    Record,
    Replay,
}

#[derive(Clone, Copy, ValueEnum)]
enum Class {
    Individual,
    Organization,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Matcher {
    Llm,
    Oracle,
}

#[derive(Subcommand)]
enum Command {
    /// Extract entities with every configured model and variant; writes predictions.json.
    Extract {
        /// Articles processed at once; timings are then not comparable.
        #[arg(long, value_name = "n")]
        concurrent_articles: Option<usize>,
    },
    /// Score a predictions file against the dataset.
    Evaluate {
        predictions: PathBuf,
        #[arg(long, value_enum)]
        matcher: Option<Matcher>,
    },
    /// Run the full model x variant x repetition grid and write reports.
    Experiment {
        #[arg(long, value_name = "n")]
        concurrent_articles: Option<usize>,
        #[arg(long, value_enum)]
        matcher: Option<Matcher>,
    },
    /// Corpus size statistics and gold list totals.
    Stats {
        #[arg(long)]
        json: bool,
    },
    /// Check an external tagger's predictions file and write it normalized.
    IngestBaseline { predictions: PathBuf },
    /// Host the annotation service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Predictions file used as pre-annotation (e.g. a baseline tagger's output).
        #[arg(long, value_name = "file", conflicts_with = "preannotate_with_model")]
        preannotate: Option<PathBuf>,
        /// Pre-annotate by running the extraction pipeline with the base prompt.
        #[arg(long)]
        preannotate_with_model: bool,
        /// Model for verification and pipeline pre-annotation; defaults to the first configured model.
        #[arg(long)]
        model: Option<String>,
        /// Directory with a static web UI served next to the API.
        #[arg(long, value_name = "dir")]
        ui: Option<PathBuf>,
    },
}

impl Common {
    /// The config file (or a default config around `--dataset`) with overrides applied.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match (&self.config, &self.dataset) {
            (Some(path), _) => ExperimentConfig::load(path)
                .with_context(|| format!("loading {}", path.display()))?,
            (None, Some(dataset)) => ExperimentConfig::new(dataset, EntityClass::Individual),
            (None, None) => bail!("either --config or --dataset is required"),
        };
        if let (Some(_), Some(dataset)) = (&self.config, &self.dataset) {
            config.dataset = dataset.clone();
        }
        if let Some(mode) = self.mode {
            config.gateway.mode = match mode {
                Mode::Live => GatewayMode::Live,
                Mode::Record => GatewayMode::Record,
                Mode::Replay => GatewayMode::Replay,
            };
        }
        if let Some(class) = self.class {
            config.entity_class = match class {
                Class::Individual => EntityClass::Individual,
                Class::Organization => EntityClass::Organization,
            };
        }
        if let Some(switch) = self.matching {
            config.matching = Some(matches!(switch, Switch::On));
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        Ok(config)
    }
}

fn apply_matcher(config: &mut ExperimentConfig, matcher: Option<Matcher>) {
    if let Some(m) = matcher {
        config.matcher = match m {
            Matcher::Llm => MatcherKind::Llm,
            Matcher::Oracle => MatcherKind::Oracle,
        };
    }
}

fn load_prompts(config: &ExperimentConfig) -> Result<PromptSet> {
    Ok(match &config.prompt_dir {
        Some(dir) => PromptSet::load_dir(dir)?,
        None => PromptSet::builtin(),
    })
}

fn write_config(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml()).with_context(|| format!("writing {}", path.display()))
}

async fn health_check(gateway: &Gateway, models: &[&str]) -> Result<()> {
    if gateway.mode() == GatewayMode::Replay {
        return Ok(());
    }
    let mut missing = Vec::new();
    for m in models {
        if !gateway.health_check(m).await {
            missing.push(m.to_string());
        }
    }
    if !missing.is_empty() {
        return Err(ExperimentError::HealthCheck(missing).into());
    }
    Ok(())
}

async fn extract(config: ExperimentConfig) -> Result<()> {
    config.validate()?;
    if config.models.is_empty() {
        bail!("no models configured");
    }
    let dataset = load_dataset(&config.dataset)?;
    let prompts = load_prompts(&config)?;
    let gateway = Gateway::from_config(&config.gateway.gateway_config())?;
    let mut needed: Vec<&str> = config.models.iter().map(String::as_str).collect();
    needed.push(&config.structuring_model);
    health_check(&gateway, &needed).await?;
    gateway.set_logging(gateway.mode() != GatewayMode::Replay);

    let harness = Harness::from_config(&config, &dataset, &gateway, &prompts);
    let run_dir = create_run_dir(&config.out_dir)?;
    write_config(&run_dir, &config)?;
    let mut predictions = Vec::new();
    for model in &config.models {
        for variant in config.prompt_variants()? {
            for _ in 0..config.repetitions {
                predictions.extend(harness.extract_all(&variant, model).await?);
            }
        }
    }
    let path = run_dir.join("predictions.json");
    write_predictions(&path, &predictions)?;
    if gateway.mode() != GatewayMode::Replay {
        let log = serde_json::to_string_pretty(&gateway.take_log())?;
        std::fs::write(run_dir.join("exchanges.json"), log + "\n")?;
    }
    let errors = predictions.iter().filter(|p| p.json_error).count();
    out!("{} predictions, {errors} json errors", predictions.len());
    out!("{}", path.display());
    Ok(())
}

async fn evaluate(config: ExperimentConfig, predictions_path: &Path) -> Result<()> {
    config.validate()?;
    let dataset = load_dataset(&config.dataset)?;
    let prompts = load_prompts(&config)?;
    let gateway = Gateway::from_config(&config.gateway.gateway_config())?;
    let matching = config.matching_enabled();
    if matching && config.matcher == MatcherKind::Llm {
        health_check(&gateway, &[&config.matching_model]).await?;
    }
    let predictions = ingest_external_predictions(predictions_path, &dataset)?;
    let harness = Harness::from_config(&config, &dataset, &gateway, &prompts);
    let evaluation = harness
        .evaluate(config.entity_class, &predictions, matching)
        .await?;
    // files without any raw model answer come from a conventional tagger
    let from_models: std::collections::HashSet<&str> = predictions
        .iter()
        .filter(|p| !p.raw_response.is_empty())
        .map(|p| p.model_id.as_str())
        .collect();
    let mut evaluation = evaluation;
    for row in &mut evaluation.rows {
        row.baseline = !from_models.contains(row.model_id.as_str());
    }
    if evaluation.rows.is_empty() {
        bail!(
            "{} has no {} predictions",
            predictions_path.display(),
            config.entity_class
        );
    }
    let mut shown = config.clone();
    let articles = dataset.articles.len().max(1) as u32;
    shown.repetitions = evaluation
        .rows
        .iter()
        .map(|r| r.total_iterations as u32 / articles)
        .max()
        .unwrap_or(1);
    let report = build_report(&shown, &dataset, evaluation.rows);
    let run_dir = create_run_dir(&config.out_dir)?;
    write_config(&run_dir, &config)?;
    for format in ReportFormat::ALL {
        emit_report(&report, format, &run_dir)?;
    }
    let matches = serde_json::to_string_pretty(&evaluation.matches)?;
    std::fs::write(run_dir.join("matches.json"), matches + "\n")?;
    out!(
        "{}\n{}",
        render_report(&report, ReportFormat::Markdown)?,
        run_dir.display()
    );
    Ok(())
}

async fn experiment(config: ExperimentConfig) -> Result<()> {
    let outcome = run_experiment(&config).await?;
    let report = render_report(&outcome.report, ReportFormat::Markdown)?;
    out!("{report}\n{}", outcome.run_dir.display());
    Ok(())
}

fn stats(dataset: &Dataset, json: bool) -> Result<()> {
    let stats = compute_stats(&dataset.articles);
    let gold = dataset.gold_summary();
    if json {
        let value = serde_json::json!({ "corpus": stats, "gold": gold });
        out!("{}", serde_json::to_string_pretty(&value)?);
        return Ok(());
    }
    out!("articles             {}", stats.article_count);
    out!("sentences            {}", stats.sentence_count);
    out!("words                {}", stats.word_count);
    out!("characters           {}", stats.char_count);
    out!("words per sentence   {:.1}", stats.avg_sentence_len_words);
    out!(
        "individuals          {} ({} to {} per article)",
        gold.individuals,
        gold.individuals_per_article.0,
        gold.individuals_per_article.1
    );
    out!(
        "organizations        {} ({} to {} per article)",
        gold.organizations,
        gold.organizations_per_article.0,
        gold.organizations_per_article.1
    );
    Ok(())
}

fn ingest_baseline(dataset: &Dataset, path: &Path, out: Option<&Path>) -> Result<()> {
    let predictions = ingest_external_predictions(path, dataset)?;
    for class in EntityClass::ALL {
        let of_class: Vec<_> = predictions
            .iter()
            .filter(|p| p.entity_class == class)
            .collect();
        let entities: usize = of_class.iter().map(|p| p.entities.len()).sum();
        out!(
            "{class}: {} predictions, {entities} entities",
            of_class.len()
        );
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let name = path
            .file_name()
            .context("predictions path has no file name")?;
        let target = dir.join(name);
        write_predictions(&target, &predictions)?;
        out!("{}", target.display());
    }
    Ok(())
}

struct ServeArgs {
    addr: SocketAddr,
    preannotate: Option<PathBuf>,
    preannotate_with_model: bool,
    model: Option<String>,
    ui: Option<PathBuf>,
}

async fn serve_bench(common: &Common, config: ExperimentConfig, args: ServeArgs) -> Result<()> {
    let dataset = load_dataset(&config.dataset)?;
    let gateway_config = config.gateway.gateway_config();
    let llm = if common.config.is_none() && common.mode.is_none() {
        None
    } else {
        let gateway = Gateway::from_config(&gateway_config)?;
        let model = args
            .model
            .clone()
            .or_else(|| config.models.first().cloned())
            .context("no model for verification; pass --model")?;
        Some(LlmSettings {
            gateway: Arc::new(gateway),
            prompts: Arc::new(load_prompts(&config)?),
            model_id: model,
            structuring_model: config.structuring_model.clone(),
            params: config.gateway.params(),
        })
    };
    let preannotation = match (&args.preannotate, args.preannotate_with_model) {
        (Some(path), _) => Preannotation::Predictions {
            predictions: ingest_external_predictions(path, &dataset)?,
            source: EntrySource::Baseline,
        },
        (None, true) => {
            if llm.is_none() {
                bail!("--preannotate-with-model needs a gateway: pass --config or --mode");
            }
            Preannotation::Pipeline
        }
        (None, false) => Preannotation::None,
    };
    // the config default "runs" belongs to experiments
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("bench"));
    let state = Arc::new(BenchState::new(BenchConfig {
        dataset,
        drafts_dir: out.join("drafts"),
        export_dir: out.join("datasets"),
        preannotation,
        llm,
    }));
    let app = match args.ui {
        Some(dir) => router_with_ui(state, dir),
        None => api_router(state),
    };
    let listener = tokio::net::TcpListener::bind(args.addr)
        .await
        .with_context(|| format!("binding {}", args.addr))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    serve(app, listener).await?;
    Ok(())
}

async fn run(cli: Cli) -> Result<()> {
    let mut config = cli.common.resolve()?;
    match cli.command {
        Command::Extract {
            concurrent_articles,
        } => {
            if let Some(n) = concurrent_articles {
                config.concurrent_articles = n;
            }
            extract(config).await
        }
        Command::Evaluate {
            predictions,
            matcher,
        } => {
            apply_matcher(&mut config, matcher);
            evaluate(config, &predictions).await
        }
        Command::Experiment {
            concurrent_articles,
            matcher,
        } => {
            if let Some(n) = concurrent_articles {
                config.concurrent_articles = n;
            }
            apply_matcher(&mut config, matcher);
            experiment(config).await
        }
        Command::Stats { json } => stats(&load_dataset(&config.dataset)?, json),
        Command::IngestBaseline { predictions } => ingest_baseline(
            &load_dataset(&config.dataset)?,
            &predictions,
            cli.common.out.as_deref(),
        ),
        Command::Serve {
            addr,
            preannotate,
            preannotate_with_model,
            model,
            ui,
        } => {
            let args = ServeArgs {
                addr,
                preannotate,
                preannotate_with_model,
                model,
                ui,
            };
            serve_bench(&cli.common, config, args).await
        }
    }
}

#[tokio::main]
async fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    match run(Cli::parse()).await {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
