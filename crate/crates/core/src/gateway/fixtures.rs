use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tokio::sync::Mutex;

use super::{ChatExchange, ChatParams, ChatRequest, GatewayError};

/// Content-addressed store of recorded exchanges: one JSON file per exchange, named by
/// the request key.
#[derive(Debug)]
pub struct FixtureStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    model_id: &'a str,
    prompt: String,
    params: &'a ChatParams,
}

/// Hex SHA-256 of the canonical request: model, prompt with `\r\n`/`\r` line endings
/// turned into `\n`, and sampling parameters. The purpose tag is not part of the key.
pub fn fixture_key(request: &ChatRequest) -> String {
    let canonical = CanonicalRequest {
        model_id: &request.model_id,
        prompt: request.prompt.replace("\r\n", "\n").replace('\r', "\n"),
        params: &request.params,
    };
    let bytes = serde_json::to_vec(&canonical).expect("request serializes");
    hex::encode(Sha256::digest(&bytes))
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub async fn get(&self, key: &str) -> Result<Option<ChatExchange>, GatewayError> {
        let path = self.path_for(key);
        match tokio::fs::read(&path).await {
            Ok(bytes) => {
                serde_json::from_slice(&bytes)
                    .map(Some)
                    .map_err(|e| GatewayError::Fixture {
                        path,
                        message: e.to_string(),
                    })
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(GatewayError::Fixture {
                path,
                message: e.to_string(),
            }),
        }
    }

    /// Writes an exchange under its request key. Writes are serialized.
    pub async fn put(&self, exchange: &ChatExchange) -> Result<PathBuf, GatewayError> {
        let _guard = self.write_lock.lock().await;
        let path = self.path_for(&fixture_key(&exchange.request));
        let fail = |message: String| GatewayError::Fixture {
            path: path.clone(),
            message,
        };
        tokio::fs::create_dir_all(&self.dir)
            .await
            .map_err(|e| fail(e.to_string()))?;
        let mut body = serde_json::to_string_pretty(exchange).map_err(|e| fail(e.to_string()))?;
        body.push('\n');
        tokio::fs::write(&path, body)
            .await
            .map_err(|e| fail(e.to_string()))?;
        Ok(path)
    }

    /// Every stored exchange, sorted by file name.
    pub fn list(&self) -> Result<Vec<ChatExchange>, GatewayError> {
        let mut paths: Vec<PathBuf> = match std::fs::read_dir(&self.dir) {
            Ok(entries) => entries
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => {
                return Err(GatewayError::Fixture {
                    path: self.dir.clone(),
                    message: e.to_string(),
                })
            }
        };
        paths.sort();
        paths
            .into_iter()
            .map(|path| {
                let bytes = std::fs::read(&path).map_err(|e| GatewayError::Fixture {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                serde_json::from_slice(&bytes).map_err(|e| GatewayError::Fixture {
                    path,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}
