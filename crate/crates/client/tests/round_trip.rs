use std::sync::Arc;

use finner_client::BenchClient;
use finner_core::bench::{DraftEntry, EntrySource, EntryStatus};
use finner_core::corpus::{load_dataset, Article, Dataset, EntityClass};
use finner_core::extraction::Prediction;
use finner_service::{api_router, serve, BenchConfig, BenchState, Preannotation};

fn prediction(id: &str, class: EntityClass, entities: &[&str]) -> Prediction {
    Prediction {
        article_id: id.into(),
        entity_class: class,
        entities: entities.iter().map(|s| s.to_string()).collect(),
        model_id: "en_core_web_sm".into(),
        variant_label: "-".into(),
        raw_response: String::new(),
        structuring_invoked: false,
        json_error: false,
        salvaged: false,
        latency_s: 0.0,
    }
}

async fn start(dir: &std::path::Path) -> BenchClient {
    let state = BenchState::new(BenchConfig {
        dataset: Dataset {
            articles: vec![
                Article::new("case/7", "The FBI questioned Ana Silva."),
                Article::new("b2", "Omar Haddad paid Europol nothing."),
            ],
            gold: Vec::new(),
        },
        drafts_dir: dir.join("drafts"),
        export_dir: dir.join("datasets"),
        preannotation: Preannotation::Predictions {
            predictions: vec![
                prediction("case/7", EntityClass::Organization, &["FBI"]),
                prediction("case/7", EntityClass::Individual, &["Ana Silva"]),
                prediction("b2", EntityClass::Individual, &["Omar Haddad"]),
            ],
            source: EntrySource::Baseline,
        },
        llm: None,
    });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(api_router(Arc::new(state)), listener));
    BenchClient::new(&format!("http://{addr}")).unwrap()
}

#[tokio::test]
async fn accept_all_add_one_export() {
    let dir = tempfile::tempdir().unwrap();
    let client = start(dir.path()).await;

    let listed = client.articles().await.unwrap();
    assert_eq!(
        listed.iter().map(|a| a.id.as_str()).collect::<Vec<_>>(),
        ["case/7", "b2"]
    );
    assert_eq!(
        client.article("case/7").await.unwrap().body,
        "The FBI questioned Ana Silva."
    );

    for summary in &listed {
        for class in EntityClass::ALL {
            let mut d = client.draft(&summary.id, class).await.unwrap();
            assert_eq!(d.version, 0);
            for e in &mut d.entries {
                e.status = EntryStatus::Accepted;
            }
            if (summary.id.as_str(), class) == ("b2", EntityClass::Organization) {
                d.entries.push(DraftEntry::new(
                    "Europol",
                    EntryStatus::Added,
                    EntrySource::Human,
                ));
            }
            assert_eq!(client.put_draft(&d).await.unwrap(), 1);
        }
    }
    let exported = client.export("bench").await.unwrap();
    let loaded = load_dataset(&dir.path().join("datasets/bench.json")).unwrap();
    assert_eq!(loaded, exported);
    assert_eq!(
        loaded.gold_entities("b2", EntityClass::Organization),
        ["Europol"]
    );
    assert_eq!(
        loaded.gold_entities("case/7", EntityClass::Organization),
        ["FBI"]
    );
    assert!(dir
        .path()
        .join("drafts")
        .join(format!("_{}", "636173652f37"))
        .exists());
}

#[tokio::test]
async fn conflicts_are_surfaced() {
    let dir = tempfile::tempdir().unwrap();
    let client = start(dir.path()).await;
    let first = client.draft("b2", EntityClass::Individual).await.unwrap();
    let mut second = first.clone();

    let mut mine = first.clone();
    mine.entries[0].status = EntryStatus::Accepted;
    client.put_draft(&mine).await.unwrap();

    second.entries[0].status = EntryStatus::Rejected;
    let err = client.put_draft(&second).await.unwrap_err();
    assert!(err.is_conflict());
    assert_eq!(err.code(), Some("version_conflict"));

    let stored = client.draft("b2", EntityClass::Individual).await.unwrap();
    assert_eq!(stored.version, 1);
    assert_eq!(stored.entries[0].status, EntryStatus::Accepted);
}

#[tokio::test]
async fn service_errors_carry_codes() {
    let dir = tempfile::tempdir().unwrap();
    let client = start(dir.path()).await;
    assert_eq!(
        client.article("zz").await.unwrap_err().code(),
        Some("article_not_found")
    );
    assert_eq!(
        client.export("bench").await.unwrap_err().code(),
        Some("unreviewed_articles")
    );
    let err = client
        .verify("b2", EntityClass::Individual, None)
        .await
        .unwrap_err();
    assert_eq!(err.code(), Some("draft_not_found"));
}
