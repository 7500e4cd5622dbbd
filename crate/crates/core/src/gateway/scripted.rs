use async_trait::async_trait;

use super::{BackendError, ChatBackend, ChatRequest};

type Responder = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

/// In-process backend answering from a closure. Used to record fixtures without a model
/// server and to drive the pipeline in tests.
pub struct ScriptedBackend {
    respond: Box<Responder>,
    models: Vec<String>,
}

impl ScriptedBackend {
    pub fn new<F>(respond: F) -> Self
    where
        F: Fn(&ChatRequest) -> String + Send + Sync + 'static,
    {
        Self {
            respond: Box::new(move |r| Ok(respond(r))),
            models: Vec::new(),
        }
    }

    pub fn fallible<F>(respond: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self {
            respond: Box::new(respond),
            models: Vec::new(),
        }
    }

    pub fn serving(mut self, models: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.models = models.into_iter().map(Into::into).collect();
        self
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (self.respond)(request)
    }

    async fn list_models(&self) -> Result<Vec<String>, BackendError> {
        Ok(self.models.clone())
    }
}
