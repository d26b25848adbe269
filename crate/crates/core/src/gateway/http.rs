use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use ureq::Agent;

use super::{BackendError, CompletionBackend, EmbeddingBackend, ModelRequest, Reply};

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    /// e.g. `https://api.example.com/v1`; `/chat/completions` and
    /// `/embeddings` are appended.
    pub base_url: String,
    /// Environment variable holding the credential. Unset means no auth header.
    pub api_key_env: Option<String>,
    pub auth_header: String,
    /// `{key}` is replaced by the credential.
    pub auth_template: String,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            api_key_env: Some("CLAIMGRAPH_API_KEY".into()),
            auth_header: "Authorization".into(),
            auth_template: "Bearer {key}".into(),
            timeout_secs: 120,
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: Agent,
    auth: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let auth = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .map(|key| config.auth_template.replace("{key}", &key));
        Self { config, agent, auth }
    }

    fn post(&self, path: &str, body: Value) -> Result<Value, BackendError> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(auth) = &self.auth {
            req = req.header(self.config.auth_header.as_str(), auth.as_str());
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string())),
            408 | 429 | 500..=599 => Err(BackendError::Transport(format!("HTTP {status}: {text}"))),
            _ => {
                let parsed: Option<Value> = serde_json::from_str(&text).ok();
                let code = parsed
                    .as_ref()
                    .and_then(|v| v.pointer("/error/code"))
                    .and_then(Value::as_str);
                if code == Some("content_policy_violation") || code == Some("content_filter") {
                    Err(BackendError::Refusal(text))
                } else {
                    Err(BackendError::Protocol(format!("HTTP {status}: {text}")))
                }
            }
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &ModelRequest) -> Result<Reply, BackendError> {
        let body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        });
        let resp = self.post("chat/completions", body)?;
        parse_chat_response(&resp).map(Reply::from)
    }
}

impl EmbeddingBackend for HttpBackend {
    fn embed_batch(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let resp = self.post("embeddings", json!({"model": model, "input": texts}))?;
        parse_embedding_response(&resp, texts.len())
    }
}

pub(crate) fn parse_chat_response(resp: &Value) -> Result<String, BackendError> {
    let choice = resp
        .pointer("/choices/0")
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    if let Some(refusal) = choice.pointer("/message/refusal").and_then(Value::as_str) {
        return Err(BackendError::Refusal(refusal.to_string()));
    }
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Err(BackendError::Refusal("content filtered".into()));
    }
    choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Protocol("choice has no message content".into()))
}

pub(crate) fn parse_embedding_response(resp: &Value, expected: usize) -> Result<Vec<Vec<f64>>, BackendError> {
    let data = resp
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::Protocol("embedding response has no data array".into()))?;
    let mut out: Vec<Option<Vec<f64>>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let vector: Vec<f64> = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Protocol("embedding item without vector".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| BackendError::Protocol("non-numeric embedding".into())))
            .collect::<Result<_, _>>()?;
        let slot = out
            .get_mut(index)
            .ok_or_else(|| BackendError::Protocol(format!("embedding index {index} out of range")))?;
        *slot = Some(vector);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| BackendError::Protocol(format!("missing embedding {i}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;

    /// Serves one canned HTTP response per connection and returns the
    /// request bodies it saw.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn backend(base_url: String) -> HttpBackend {
        HttpBackend::new(HttpConfig {
            base_url,
            api_key_env: None,
            timeout_secs: 5,
            ..HttpConfig::default()
        })
    }

    #[test]
    fn chat_completion_round_trip() {
        let (url, handle) = serve(vec![(
            200,
            r#"{"choices":[{"message":{"content":"half-true"},"finish_reason":"stop"}]}"#.into(),
        )]);
        let reply = backend(url)
            .complete(&ModelRequest::completion("m1", "classify"))
            .unwrap();
        assert_eq!(reply.text, "half-true");
        let bodies = handle.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "m1");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["messages"][0]["content"], "classify");
    }

    #[test]
    fn server_errors_are_transport_and_4xx_are_protocol() {
        let (url, handle) = serve(vec![(503, "{}".into()), (400, r#"{"error":{"code":"bad"}}"#.into())]);
        let b = backend(url);
        let req = ModelRequest::completion("m", "p");
        assert!(matches!(b.complete(&req), Err(BackendError::Transport(_))));
        assert!(matches!(b.complete(&req), Err(BackendError::Protocol(_))));
        handle.join().unwrap();
    }

    #[test]
    fn embeddings_round_trip() {
        let (url, handle) = serve(vec![(
            200,
            r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#.into(),
        )]);
        let v = backend(url)
            .embed_batch("e", &["a".to_string(), "b".to_string()])
            .unwrap();
        assert_eq!(v, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        handle.join().unwrap();
    }

    #[test]
    fn refusals_are_detected() {
        let r = json!({"choices":[{"message":{"content":null,"refusal":"cannot"}}]});
        assert_eq!(parse_chat_response(&r), Err(BackendError::Refusal("cannot".into())));
        let r = json!({"choices":[{"message":{"content":""},"finish_reason":"content_filter"}]});
        assert!(matches!(parse_chat_response(&r), Err(BackendError::Refusal(_))));
        assert!(matches!(parse_chat_response(&json!({})), Err(BackendError::Protocol(_))));
    }
}
