//! Regenerates `fixtures/demo`: a three-article dataset, two run configs, a baseline
//! predictions file, and the recorded exchanges that let both configs run in replay,
//! plus one matching exchange for the bare FBI alias pair.
//!
//! The exchanges come from a scripted backend, not a real model, and their latencies
//! are rewritten to fixed values. Run again after editing any prompt template:
//!
//!     cargo run -p finner-core --example gen_demo_fixtures

use std::path::{Path, PathBuf};
use std::sync::Arc;

use finner_core::corpus::{Article, Dataset, GoldRecord};
use finner_core::experiment::{run_with, ExperimentConfig};
use finner_core::extraction::{write_predictions, Prediction};
use finner_core::gateway::{
    ChatBackend, ChatRequest, Gateway, GatewayMode, Purpose, ScriptedBackend,
};
use finner_core::matching::Matcher;
use finner_core::prompts::PromptSet;

const ARTICLES: &[(&str, &str, &str)] = &[
    (
        "a01",
        "Former deputy minister charged over port contracts",
        "Prosecutors in Vilnius charged former deputy minister Arturas Kairys with accepting bribes from Baltic Freight Holdings. According to the indictment, Kairys received EUR 2.1 million through accounts at Nordvik Bank between 2016 and 2019. The Federal Bureau of Investigations assisted with tracing transfers routed through New York. Kairys denies the charges.",
    ),
    (
        "a02",
        "Lagos court freezes assets in oil revenue case",
        "A court in Lagos froze assets linked to businessman Chidi Okafor and his associate Maria Lindqvist. Investigators from the Economic and Financial Crimes Commission say Okafor used Sunrise Petroleum Ltd to divert public oil revenue. Lindqvist, a Swedish national, managed shell companies in Cyprus.",
    ),
    (
        "a03",
        "Assistance request names former customs official",
        "The Office of International Affairs confirmed that it had received a mutual legal assistance request concerning Olena Hrytsenko, a former customs official. Hrytsenko is accused of laundering proceeds through Danube Trade Consulting. No charges have been filed against the company's director, Petr Novak.",
    ),
];

fn gold() -> Vec<GoldRecord> {
    let rec = |id: &str, ind: &[&str], org: &[&str]| GoldRecord {
        article_id: id.into(),
        individuals: ind.iter().map(|s| s.to_string()).collect(),
        organizations: org.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        rec(
            "a01",
            &["Arturas Kairys"],
            &[
                "Baltic Freight Holdings",
                "Nordvik Bank",
                "Federal Bureau of Investigations",
            ],
        ),
        rec(
            "a02",
            &["Chidi Okafor", "Maria Lindqvist"],
            &[
                "Economic and Financial Crimes Commission",
                "Sunrise Petroleum Ltd",
            ],
        ),
        rec(
            "a03",
            &["Olena Hrytsenko", "Petr Novak"],
            &["Office of International Affairs", "Danube Trade Consulting"],
        ),
    ]
}

const KNOWN_NAMES: &[&str] = &[
    "Arturas Kairys",
    "Chidi Okafor",
    "Maria Lindqvist",
    "Olena Hrytsenko",
    "Petr Novak",
    "Baltic Freight Holdings",
    "Nordvik Bank",
    "Economic and Financial Crimes Commission",
    "Sunrise Petroleum Ltd",
    "Danube Trade Consulting",
];

const ALIASES: &[(&str, &str)] = &[
    ("FBI", "Federal Bureau of Investigations"),
    (
        "General Office of International Affairs",
        "Office of International Affairs",
    ),
];

fn json_list(key: &str, names: &[&str]) -> String {
    serde_json::json!({ key: names }).to_string()
}

fn extraction_answer(r: &ChatRequest) -> String {
    let article = ARTICLES
        .iter()
        .find(|(_, _, body)| r.prompt.contains(body))
        .map(|a| a.0)
        .expect("prompt embeds a known article");
    let organizations = r.prompt.contains("\"organizations\"");
    let step_by_step = r.prompt.to_lowercase().contains("step by step");
    let small = r.model_id != "gemma2:9b";
    if organizations {
        match article {
            "a01" if small => json_list("organizations", &["Baltic Freight Holdings", "FBI", "New York"]),
            "a01" => json_list("organizations", &["Baltic Freight Holdings", "Nordvik Bank", "FBI"]),
            // prose answer: needs the structuring model
            "a02" => "The organizations are Economic and Financial Crimes Commission and Sunrise Petroleum Ltd.".into(),
            _ if step_by_step => format!(
                "Reasoning first.\n```json\n{}\n```",
                json_list("organizations", &["General Office of International Affairs", "Danube Trade Consulting"])
            ),
            _ => json_list("organizations", &["General Office of International Affairs", "Danube Trade Consulting", "Cyprus"]),
        }
    } else {
        match article {
            "a01" => json_list("individuals", &["Arturas Kairys"]),
            // unusable answer: structuring fails too, counted as a json error
            "a02" if small => "I cannot determine that.".into(),
            "a02" => "Individuals: Chidi Okafor; Maria Lindqvist".into(),
            _ if step_by_step => json_list("individuals", &["Olena Hrytsenko", "Petr Novak"]),
            _ => json_list("individuals", &["Olena Hrytsenko", "Kairys"]),
        }
    }
}

fn structuring_answer(r: &ChatRequest) -> String {
    if r.prompt.contains("I cannot determine") {
        return "Sorry, there is nothing to structure.".into();
    }
    let key = if r.prompt.contains("\"organizations\"") {
        "organizations"
    } else {
        "individuals"
    };
    let mut names: Vec<(usize, &str)> = KNOWN_NAMES
        .iter()
        .filter_map(|n| r.prompt.find(&format!(" {n}")).map(|i| (i, *n)))
        .collect();
    names.sort();
    let names: Vec<&str> = names.into_iter().map(|(_, n)| n).collect();
    json_list(key, &names)
}

/// Reads "1. name" lines following `header`.
fn numbered_list<'a>(prompt: &'a str, header: &str) -> Vec<&'a str> {
    let Some(start) = prompt.find(header) else {
        return Vec::new();
    };
    prompt[start + header.len()..]
        .lines()
        .skip_while(|l| l.trim().is_empty())
        .take_while(|l| !l.trim().is_empty())
        .filter_map(|l| l.split_once(". ").map(|(_, name)| name))
        .collect()
}

fn matching_answer(r: &ChatRequest) -> String {
    let gold = numbered_list(&r.prompt, "List 1:");
    let pred = numbered_list(&r.prompt, "List 2:");
    let mut pairs = Vec::new();
    for p in &pred {
        let target = ALIASES
            .iter()
            .find(|(a, _)| a == p)
            .map(|(_, g)| *g)
            .unwrap_or(p);
        if gold.contains(&target) {
            pairs.push([target, *p]);
        }
    }
    serde_json::to_string(&pairs).unwrap()
}

fn respond(r: &ChatRequest) -> String {
    match r.purpose {
        Purpose::Extraction => extraction_answer(r),
        Purpose::Structuring => structuring_answer(r),
        Purpose::Matching => matching_answer(r),
        Purpose::Verification => r#"{"verdict": "confirm", "note": ""}"#.into(),
    }
}

fn baseline() -> Vec<Prediction> {
    let rows: &[(&str, &[&str], &[&str])] = &[
        (
            "a01",
            &["Arturas Kairys", "Kairys"],
            &["Baltic Freight Holdings", "Nordvik Bank", "FBI", "EUR"],
        ),
        (
            "a02",
            &["Chidi Okafor", "Maria Lindqvist", "Lindqvist"],
            &[
                "the Economic and Financial Crimes Commission",
                "Sunrise Petroleum Ltd",
            ],
        ),
        (
            "a03",
            &["Olena Hrytsenko", "Petr Novak"],
            &[
                "General Office of International Affairs",
                "Danube Trade Consulting",
            ],
        ),
    ];
    let mut out = Vec::new();
    for (id, ind, org) in rows {
        for (class, names) in [
            (finner_core::corpus::EntityClass::Individual, ind),
            (finner_core::corpus::EntityClass::Organization, org),
        ] {
            out.push(Prediction {
                article_id: id.to_string(),
                entity_class: class,
                entities: names.iter().map(|s| s.to_string()).collect(),
                model_id: "en_core_web_sm".into(),
                variant_label: "-".into(),
                raw_response: String::new(),
                structuring_invoked: false,
                json_error: false,
                salvaged: false,
                latency_s: 0.02,
            });
        }
    }
    out
}

const ORGANIZATION_TOML: &str = r#"# Organization run over the demo set. Replays the recorded exchanges.
dataset = "dataset.json"
entity_class = "organization"
models = ["gemma2:9b", "qwen2:7b"]
variants = [[], [4], [1, 4, 5]]
repetitions = 2
baselines = ["baseline_predictions.json"]
out_dir = "runs"

[gateway]
mode = "replay"
fixture_dir = "exchanges"
"#;

const INDIVIDUAL_TOML: &str = r#"# Individual run over the demo set. Matching is off by default for this class.
dataset = "dataset.json"
entity_class = "individual"
models = ["gemma2:9b", "qwen2:7b"]
variants = [[], [4], [1, 4]]
repetitions = 2
baselines = ["baseline_predictions.json"]
out_dir = "runs"

[gateway]
mode = "replay"
fixture_dir = "exchanges"
"#;

fn latency_for(purpose: Purpose, key: &str) -> f64 {
    // fixed per purpose, with a small key-derived spread
    let spread = u64::from_str_radix(&key[..4], 16).unwrap() % 10;
    let base = match purpose {
        Purpose::Extraction => 3.2,
        Purpose::Structuring => 1.4,
        Purpose::Matching => 0.9,
        Purpose::Verification => 0.5,
    };
    base + spread as f64 / 10.0
}

#[tokio::main]
async fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo"));
    let exchanges = out.join("exchanges");
    if exchanges.exists() {
        std::fs::remove_dir_all(&exchanges).unwrap();
    }
    std::fs::create_dir_all(&exchanges).unwrap();

    let dataset = Dataset {
        articles: ARTICLES
            .iter()
            .map(|(id, title, body)| Article {
                title: Some(title.to_string()),
                case_label: Some("demo".into()),
                ..Article::new(*id, *body)
            })
            .collect(),
        gold: gold(),
    };
    dataset.validate().unwrap();
    dataset.write(&out.join("dataset.json")).unwrap();
    write_predictions(&out.join("baseline_predictions.json"), &baseline()).unwrap();
    std::fs::write(out.join("organization.toml"), ORGANIZATION_TOML).unwrap();
    std::fs::write(out.join("individual.toml"), INDIVIDUAL_TOML).unwrap();

    let prompts = PromptSet::builtin();
    let scratch = tempfile::tempdir().unwrap();
    for name in ["organization.toml", "individual.toml"] {
        let mut config = ExperimentConfig::load(&out.join(name)).unwrap();
        config.gateway.mode = GatewayMode::Record;
        config.out_dir = scratch.path().into();
        let backend: Arc<dyn ChatBackend> =
            Arc::new(ScriptedBackend::new(respond).serving(["gemma2:9b", "qwen2:7b"]));
        let gateway =
            Gateway::with_backend(&config.gateway.gateway_config(), Some(backend)).unwrap();
        let outcome = run_with(&config, &dataset, &prompts, &gateway)
            .await
            .unwrap();
        println!("{name}: {} rows", outcome.report.rows.len());
    }

    // the bare alias pair, matched on its own
    let config = ExperimentConfig::load(&out.join("organization.toml")).unwrap();
    let mut section = config.gateway.clone();
    section.mode = GatewayMode::Record;
    let backend: Arc<dyn ChatBackend> = Arc::new(ScriptedBackend::new(respond));
    let gateway = Gateway::with_backend(&section.gateway_config(), Some(backend)).unwrap();
    let m = Matcher::new(&gateway, &prompts)
        .model(&config.matching_model)
        .params(section.params())
        .llm_match(&["Federal Bureau of Investigations"], &["FBI"])
        .await
        .unwrap();
    assert_eq!(m.len(), 1);

    let gateway = Gateway::with_backend(
        &finner_core::gateway::GatewayConfig {
            mode: GatewayMode::Replay,
            fixture_dir: Some(exchanges.clone()),
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let store = gateway.store().unwrap();
    let recorded = store.list().unwrap();
    for mut ex in recorded.iter().cloned() {
        let key = finner_core::gateway::fixture_key(&ex.request);
        ex.latency_s = latency_for(ex.request.purpose, &key);
        ex.retries = 0;
        store.put(&ex).await.unwrap();
    }
    println!("{} exchanges in {}", recorded.len(), exchanges.display());
}
