use std::collections::VecDeque;
use std::sync::Mutex;

use super::{BackendError, CompletionBackend, ModelRequest, Reply};

/// FIFO backend: each call pops the next scripted result and logs the prompt.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<Result<String, BackendError>>>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_results(responses.into_iter().map(|s| Ok(s.into())).collect())
    }

    pub fn from_results(results: Vec<Result<String, BackendError>>) -> Self {
        Self {
            queue: Mutex::new(results.into()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn push(&self, result: Result<String, BackendError>) {
        self.queue.lock().unwrap().push_back(result);
    }

    /// Prompts received so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &ModelRequest) -> Result<Reply, BackendError> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        self.queue
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or(Err(BackendError::Exhausted))
            .map(Reply::from)
    }
}

type Responder = dyn Fn(&ModelRequest) -> Result<String, BackendError> + Send + Sync;

/// Backend computing each response from the request. Deterministic as long
/// as the closure is, which makes it suitable for concurrent golden runs.
pub struct FnBackend {
    responder: Box<Responder>,
    calls: Mutex<Vec<String>>,
}

impl FnBackend {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&ModelRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self {
            responder: Box::new(f),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    pub fn prompts(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }
}

impl CompletionBackend for FnBackend {
    fn complete(&self, request: &ModelRequest) -> Result<Reply, BackendError> {
        self.calls.lock().unwrap().push(request.prompt.clone());
        (self.responder)(request).map(Reply::from)
    }
}
