use std::path::{Path, PathBuf};
use std::sync::Arc;

use finner_core::corpus::{load_dataset, Article, Dataset, EntityClass, GoldRecord};
use finner_core::experiment::{
    ingest_external_predictions, parse_csv_rows, run_experiment, run_with, ExperimentConfig,
    ExperimentError, Harness, MatchLogEntry, MatcherKind, RunReport,
};
use finner_core::extraction::{read_predictions, write_predictions, Prediction};
use finner_core::gateway::{
    BackendError, ChatBackend, ChatRequest, Gateway, GatewayConfig, GatewayMode, Purpose,
    ScriptedBackend,
};
use finner_core::prompts::PromptSet;

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

fn demo_config(name: &str, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::load(&demo().join(name)).unwrap();
    c.out_dir = out.into();
    c
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[tokio::test]
async fn demo_organization_run_in_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&demo_config("organization.toml", tmp.path()))
        .await
        .unwrap();
    let report = &outcome.report;
    // 2 models x 3 variants, then the baseline without and with matching
    assert_eq!(report.rows.len(), 8);
    assert!(report.rows[..6]
        .iter()
        .all(|r| r.matching_enabled && !r.baseline));
    let labels: Vec<&str> = report.rows[..3]
        .iter()
        .map(|r| r.variant_label.as_str())
        .collect();
    assert_eq!(labels, ["-", "4)", "1),4),5)"]);
    let (raw, matched) = (&report.rows[6], &report.rows[7]);
    assert!(raw.baseline && matched.baseline);
    assert!(!raw.matching_enabled && matched.matching_enabled);
    assert!(matched.f1 > raw.f1, "{} vs {}", matched.f1, raw.f1);

    // json errors recount from the persisted prediction log
    let persisted = read_predictions(&outcome.run_dir.join("predictions.json")).unwrap();
    assert_eq!(persisted, outcome.predictions);
    assert_eq!(persisted.len(), 2 * 3 * 2 * 3);
    let recount = persisted.iter().filter(|p| p.json_error).count();
    let reported: usize = report.rows.iter().map(|r| r.json_errors).sum();
    assert_eq!(recount, reported);
    assert!(persisted
        .iter()
        .any(|p| p.structuring_invoked && !p.json_error));

    // matching rewrote the FBI alias
    let matches: Vec<MatchLogEntry> =
        serde_json::from_str(&read(&outcome.run_dir, "matches.json")).unwrap();
    assert!(matches.iter().any(|m| m
        .matched
        .pairs()
        .any(|p| p == ("Federal Bureau of Investigations", "FBI"))));

    for f in [
        "report.md",
        "report.csv",
        "report.json",
        "config.toml",
        "predictions.json",
        "matches.json",
    ] {
        assert!(outcome.run_dir.join(f).is_file(), "{f}");
    }
    assert!(!outcome.run_dir.join("exchanges.json").exists());
    let csv_rows = parse_csv_rows(&read(&outcome.run_dir, "report.csv")).unwrap();
    assert_eq!(csv_rows, report.rows);
    let json: RunReport = serde_json::from_str(&read(&outcome.run_dir, "report.json")).unwrap();
    assert_eq!(&json, report);
}

#[tokio::test]
async fn replay_reports_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for _ in 0..2 {
        dirs.push(
            run_experiment(&demo_config("individual.toml", tmp.path()))
                .await
                .unwrap()
                .run_dir,
        );
    }
    assert_ne!(dirs[0], dirs[1]);
    for f in [
        "report.md",
        "report.csv",
        "report.json",
        "predictions.json",
        "matches.json",
    ] {
        assert_eq!(read(&dirs[0], f), read(&dirs[1], f), "{f}");
    }
}

#[tokio::test]
async fn individual_demo_counts_a_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&demo_config("individual.toml", tmp.path()))
        .await
        .unwrap();
    let report = &outcome.report;
    assert_eq!(report.rows.len(), 7);
    assert!(report.rows.iter().all(|r| !r.matching_enabled));
    let qwen = report
        .structuring
        .iter()
        .find(|s| s.model_id == "qwen2:7b")
        .unwrap();
    // one unusable answer per pass: 3 variants x 2 repetitions
    assert_eq!((qwen.json_errors, qwen.iterations), (6, 18));
    assert_eq!(qwen.failure_percent, 33.33);
    let gemma = report
        .structuring
        .iter()
        .find(|s| s.model_id == "gemma2:9b")
        .unwrap();
    assert_eq!(gemma.json_errors, 0);
    let md = read(&outcome.run_dir, "report.md");
    assert!(md.contains("| gemma2:9b | 0 | 18 | 0% |"), "{md}");
    assert!(md.contains("| qwen2:7b | 6 | 18 | 33.33% |"), "{md}");
}

fn synthetic(n: usize) -> Dataset {
    Dataset {
        articles: (0..n)
            .map(|i| {
                Article::new(
                    format!("s{i:02}"),
                    format!("Article {i}: Person{i} paid Agent{i}."),
                )
            })
            .collect(),
        gold: (0..n)
            .map(|i| GoldRecord {
                article_id: format!("s{i:02}"),
                individuals: vec![format!("Person{i}"), format!("Agent{i}")],
                organizations: vec![],
            })
            .collect(),
    }
}

fn synthetic_answer(r: &ChatRequest) -> String {
    let index = |marker: &str| -> usize {
        let tail = &r.prompt[r.prompt.rfind(marker).map_or(0, |i| i + marker.len())..];
        tail.chars()
            .take_while(char::is_ascii_digit)
            .collect::<String>()
            .parse()
            .unwrap_or(0)
    };
    match r.purpose {
        Purpose::Extraction => {
            let i = index("Article ");
            // every fourth article needs structuring, every eighth is beyond repair
            if i % 8 == 0 {
                "none".into()
            } else if i % 4 == 0 {
                format!("Person{i}")
            } else {
                format!(r#"{{"individuals": ["Person{i}"]}}"#)
            }
        }
        _ if r.prompt.ends_with("Response:\nnone") => "none".into(),
        _ => {
            let i = index("Response:\nPerson");
            format!(r#"{{"individuals": ["Person{i}", "Agent{i}"]}}"#)
        }
    }
}

fn without_latency(mut preds: Vec<Prediction>) -> Vec<Prediction> {
    preds.iter_mut().for_each(|p| p.latency_s = 0.0);
    preds
}

#[tokio::test]
async fn five_by_seven_by_fifteen_is_525_iterations() {
    let dataset = synthetic(15);
    let tmp = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::new("unused.json", EntityClass::Individual);
    config.variants = vec![
        vec![],
        vec![1],
        vec![2],
        vec![3],
        vec![4],
        vec![1, 4],
        vec![2, 4],
    ];
    config.repetitions = 5;
    config.out_dir = tmp.path().join("runs");
    config.gateway.fixture_dir = Some(tmp.path().join("fx"));
    config.gateway.mode = GatewayMode::Record;
    let prompts = PromptSet::builtin();

    let backend: Arc<dyn ChatBackend> =
        Arc::new(ScriptedBackend::new(synthetic_answer).serving(["gemma2:9b", "qwen2:7b"]));
    let gw = Gateway::with_backend(&config.gateway.gateway_config(), Some(backend)).unwrap();
    let recorded = run_with(&config, &dataset, &prompts, &gw).await.unwrap();
    assert!(recorded.run_dir.join("exchanges.json").is_file());

    config.gateway.mode = GatewayMode::Replay;
    let gw = Gateway::with_backend(&config.gateway.gateway_config(), None).unwrap();
    let replayed = run_with(&config, &dataset, &prompts, &gw).await.unwrap();
    // each repetition re-calls the backend while recording; the stored latency is the last one
    assert_eq!(
        without_latency(replayed.predictions),
        without_latency(recorded.predictions)
    );

    let report = replayed.report;
    assert_eq!(report.rows.len(), 7);
    assert!(report.rows.iter().all(|r| r.total_iterations == 75));
    let s = &report.structuring[0];
    assert_eq!(s.iterations, 525);
    // articles 0 and 8 fail in every pass
    assert_eq!(s.json_errors, 2 * 35);
    assert_eq!(s.failure_percent, 13.33);
    // nothing predicted is wrong; the plain JSON answers miss the agents
    let row = &report.rows[0];
    assert!(row.recall < 1.0 && row.precision == 1.0, "{row:?}");
}

#[tokio::test]
async fn health_check_failure_stops_before_any_call() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::new("unused.json", EntityClass::Individual);
    config.out_dir = tmp.path().into();
    config.gateway.mode = GatewayMode::Live;
    let backend: Arc<dyn ChatBackend> =
        Arc::new(ScriptedBackend::new(synthetic_answer).serving(["gemma2:9b"]));
    let gw = Gateway::with_backend(&config.gateway.gateway_config(), Some(backend)).unwrap();
    let err = run_with(&config, &synthetic(2), &PromptSet::builtin(), &gw)
        .await
        .unwrap_err();
    assert!(
        matches!(&err, ExperimentError::HealthCheck(m) if m == &["qwen2:7b"]),
        "{err}"
    );
    assert_eq!(gw.total_calls(), 0);
}

#[tokio::test]
async fn gateway_failure_flushes_partial_report() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::new("unused.json", EntityClass::Individual);
    config.models = vec!["gemma2:9b".into(), "llama3:8b".into()];
    config.out_dir = tmp.path().into();
    config.gateway.mode = GatewayMode::Live;
    config.gateway.retries = 0;
    let backend: Arc<dyn ChatBackend> = Arc::new(
        ScriptedBackend::fallible(|r: &ChatRequest| {
            if r.model_id == "llama3:8b" {
                Err(BackendError::Status {
                    status: 500,
                    body: "out of memory".into(),
                })
            } else {
                Ok(synthetic_answer(r))
            }
        })
        .serving(["gemma2:9b", "llama3:8b", "qwen2:7b"]),
    );
    let gw = Gateway::with_backend(&config.gateway.gateway_config(), Some(backend)).unwrap();
    let err = run_with(&config, &synthetic(3), &PromptSet::builtin(), &gw)
        .await
        .unwrap_err();
    let ExperimentError::Aborted { run_dir, .. } = err else {
        panic!("{err}")
    };
    let partial: RunReport = serde_json::from_str(&read(&run_dir, "report.json")).unwrap();
    assert_eq!(partial.rows.len(), 1);
    assert_eq!(partial.rows[0].model_id, "gemma2:9b");
    assert!(run_dir.join("exchanges.json").is_file());
}

#[tokio::test]
async fn grid_size_is_models_times_variants() {
    let dataset = synthetic(3);
    let tmp = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::new("unused.json", EntityClass::Individual);
    config.models = vec!["gemma2:9b".into(), "llama3:8b".into()];
    config.variants = vec![vec![], vec![4], vec![1, 4]];
    config.out_dir = tmp.path().into();
    config.gateway.mode = GatewayMode::Live;
    config.concurrent_articles = 3;
    let backend: Arc<dyn ChatBackend> = Arc::new(ScriptedBackend::new(synthetic_answer).serving([
        "gemma2:9b",
        "llama3:8b",
        "qwen2:7b",
    ]));
    let gw = Gateway::with_backend(&config.gateway.gateway_config(), Some(backend)).unwrap();
    let outcome = run_with(&config, &dataset, &PromptSet::builtin(), &gw)
        .await
        .unwrap();
    assert_eq!(outcome.report.rows.len(), 6);
    // article order is kept even when articles run concurrently
    let ids: Vec<&str> = outcome.predictions[..3]
        .iter()
        .map(|p| p.article_id.as_str())
        .collect();
    assert_eq!(ids, ["s00", "s01", "s02"]);
    assert!(read(&outcome.run_dir, "report.md").contains("3 at a time"));
}

#[test]
fn ingest_checks_article_ids() {
    let dataset = load_dataset(&demo().join("dataset.json")).unwrap();
    let ok =
        ingest_external_predictions(&demo().join("baseline_predictions.json"), &dataset).unwrap();
    assert_eq!(ok.len(), 6);
    assert!(ok.iter().all(|p| !p.json_error && !p.structuring_invoked));

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    let mut bad = ok.clone();
    bad[0].article_id = "x9".into();
    write_predictions(&path, &bad).unwrap();
    let err = ingest_external_predictions(&path, &dataset).unwrap_err();
    assert!(err.to_string().contains("\"x9\""), "{err}");

    std::fs::write(&path, r#"[{"article_id": "a01"}]"#).unwrap();
    assert!(matches!(
        ingest_external_predictions(&path, &dataset),
        Err(ExperimentError::Predictions(_))
    ));
}

#[tokio::test]
async fn baseline_scores_differ_with_matching() {
    let dataset = load_dataset(&demo().join("dataset.json")).unwrap();
    let preds =
        ingest_external_predictions(&demo().join("baseline_predictions.json"), &dataset).unwrap();
    let gw = Gateway::with_backend(
        &GatewayConfig {
            mode: GatewayMode::Live,
            ..GatewayConfig::default()
        },
        Some(Arc::new(ScriptedBackend::new(|_: &ChatRequest| {
            "[]".to_string()
        }))),
    )
    .unwrap();
    let prompts = PromptSet::builtin();
    let mut harness = Harness::new(&dataset, &gw, &prompts);
    harness.matcher = MatcherKind::Oracle;
    let raw = harness
        .evaluate(EntityClass::Organization, &preds, false)
        .await
        .unwrap();
    let matched = harness
        .evaluate(EntityClass::Organization, &preds, true)
        .await
        .unwrap();
    assert_eq!(raw.rows.len(), 1);
    assert_eq!(raw.rows[0].model_id, "en_core_web_sm");
    assert_eq!(raw.rows[0].total_iterations, 3);
    // the oracle only pairs spelling variants, so aliases such as "FBI" stay unmatched
    assert!(matched.rows[0].f1 >= raw.rows[0].f1);
    assert!(matched
        .matches
        .iter()
        .all(|m| m.matched.pairs().all(|(g, p)| g == p)));
    assert_eq!(gw.total_calls(), 0);
}

#[tokio::test]
async fn evaluate_splits_repeated_articles_into_repetitions() {
    let dataset = synthetic(2);
    let gw = Gateway::with_backend(
        &GatewayConfig {
            mode: GatewayMode::Live,
            ..GatewayConfig::default()
        },
        Some(Arc::new(ScriptedBackend::new(|_: &ChatRequest| {
            String::new()
        }))),
    )
    .unwrap();
    let prompts = PromptSet::builtin();
    let harness = Harness::new(&dataset, &gw, &prompts);
    let p = |id: &str, names: &[&str], latency: f64| Prediction {
        article_id: id.into(),
        entity_class: EntityClass::Individual,
        entities: names.iter().map(|s| s.to_string()).collect(),
        model_id: "m".into(),
        variant_label: "-".into(),
        raw_response: String::new(),
        structuring_invoked: false,
        json_error: false,
        salvaged: false,
        latency_s: latency,
    };
    let preds = vec![
        p("s00", &["Person0", "Agent0"], 1.0),
        p("s01", &["Person1", "Agent1"], 1.0),
        p("s00", &["Person0"], 2.0),
    ];
    let eval = harness
        .evaluate(EntityClass::Individual, &preds, false)
        .await
        .unwrap();
    let row = &eval.rows[0];
    assert_eq!(row.total_iterations, 4);
    // rep 1 perfect; rep 2: tp 1, fn 3 (s01 missing) -> recall 0.25
    assert_eq!(row.recall, round3((1.0 + 0.25) / 2.0));
    assert_eq!(row.iteration_time_s, 2.0);
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}
