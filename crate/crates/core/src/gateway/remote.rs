//! Chat-completion HTTP backend.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{Backend, CompletionRequest, Part, TransportError};

pub const ENDPOINT_VAR: &str = "WEBTASK_ENDPOINT";
pub const API_KEY_VAR: &str = "WEBTASK_API_KEY";
pub const MODEL_VAR: &str = "WEBTASK_MODEL";

/// Posts JSON chat-completion requests, images inlined as base64 PNG data URLs.
#[derive(Debug, Clone)]
pub struct RemoteChatBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteChatBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(120))
            .build();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent,
        }
    }

    /// Reads the endpoint, model, and key from the environment. `endpoint`
    /// overrides the environment variable when given.
    pub fn from_env(endpoint: Option<&str>) -> Result<Self, String> {
        let endpoint = match endpoint {
            Some(e) => e.to_string(),
            None => std::env::var(ENDPOINT_VAR).map_err(|_| format!("{ENDPOINT_VAR} is not set"))?,
        };
        let model = std::env::var(MODEL_VAR).unwrap_or_else(|_| "default".into());
        let api_key = std::env::var(API_KEY_VAR).ok();
        Ok(Self::new(endpoint, model, api_key))
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Result<Value, TransportError> {
        let mut messages = Vec::with_capacity(request.messages.len());
        for m in &request.messages {
            let mut content = Vec::with_capacity(m.parts.len());
            for p in &m.parts {
                match p {
                    Part::Text(t) => content.push(json!({"type": "text", "text": t})),
                    Part::Image(r) => {
                        let png = r
                            .encode_png()
                            .map_err(|e| TransportError::Permanent(e.to_string()))?;
                        let url = format!("data:image/png;base64,{}", STANDARD.encode(png));
                        content.push(json!({"type": "image_url", "image_url": {"url": url}}));
                    }
                }
            }
            messages.push(json!({"role": m.role.as_str(), "content": content}));
        }
        Ok(json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "max_tokens": request.sampling.max_output_units,
        }))
    }
}

fn extract_text(body: &Value) -> Option<String> {
    let content = &body["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

impl Backend for RemoteChatBackend {
    fn send(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        let body = self.request_body(request)?;
        let mut req = self
            .agent
            .post(&self.endpoint)
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let payload = serde_json::to_vec(&body).map_err(|e| TransportError::Permanent(e.to_string()))?;
        match req.send_bytes(&payload) {
            Ok(resp) => {
                let value: Value = resp
                    .into_json()
                    .map_err(|e| TransportError::Retryable(format!("bad response body: {e}")))?;
                if let Some(reason) = value["choices"][0]["finish_reason"].as_str() {
                    if reason == "content_filter" {
                        return Err(TransportError::Refusal("content filter".into()));
                    }
                }
                extract_text(&value)
                    .ok_or_else(|| TransportError::Permanent(format!("no message content in {value}")))
            }
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                if code == 429 || code >= 500 {
                    Err(TransportError::Retryable(format!("HTTP {code}: {text}")))
                } else {
                    Err(TransportError::Permanent(format!("HTTP {code}: {text}")))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(TransportError::Retryable(t.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, RequestKind, Role, SamplingConfig};
    use crate::raster::Raster;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serves one canned HTTP response per connection and returns the request bodies.
    fn one_shot_server(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut s = stream;
                write!(
                    s,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    fn request() -> CompletionRequest {
        CompletionRequest {
            kind: RequestKind::Chat,
            messages: vec![
                ChatMessage::text(Role::System, "sys"),
                ChatMessage {
                    role: Role::User,
                    parts: vec![
                        Part::Text("look".into()),
                        Part::Image(Arc::new(Raster::filled(2, 2, [1, 2, 3]))),
                    ],
                },
            ],
            sampling: SamplingConfig::GENERAL,
            tag: None,
        }
    }

    #[test]
    fn posts_chat_shape_and_reads_content() {
        let reply = r#"{"choices":[{"message":{"role":"assistant","content":"In summary, the next action I will perform is ```click [11]```"}}]}"#;
        let (url, server) = one_shot_server(vec![(200, reply.to_string())]);
        let backend = RemoteChatBackend::new(url, "m", Some("k".into()));
        let text = backend.send(&request()).unwrap();
        assert!(text.ends_with("```click [11]```"));
        let bodies = server.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["temperature"], 1.0);
        assert_eq!(sent["top_p"], 0.9);
        assert_eq!(sent["messages"][1]["content"][1]["type"], "image_url");
        assert!(sent["messages"][1]["content"][1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,"));
    }

    #[test]
    fn status_codes_map_to_retry_classes() {
        let (url, server) = one_shot_server(vec![
            (503, "{}".into()),
            (400, "{\"error\":\"bad\"}".into()),
        ]);
        let backend = RemoteChatBackend::new(url, "m", None);
        assert!(matches!(backend.send(&request()), Err(TransportError::Retryable(_))));
        assert!(matches!(backend.send(&request()), Err(TransportError::Permanent(_))));
        server.join().unwrap();
    }

    #[test]
    fn connection_refused_is_retryable() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let backend = RemoteChatBackend::new(format!("http://{addr}/"), "m", None);
        assert!(matches!(backend.send(&request()), Err(TransportError::Retryable(_))));
    }
}
