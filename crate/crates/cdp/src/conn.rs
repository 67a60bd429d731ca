//! One websocket to the browser, multiplexing flattened target sessions.

use std::collections::VecDeque;
use std::io;
use std::net::TcpStream;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use crate::CdpError;

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub session: Option<String>,
    pub method: String,
    pub params: Value,
}

pub struct Connection {
    ws: WebSocket<MaybeTlsStream<TcpStream>>,
    next_id: u64,
    events: VecDeque<Event>,
}

impl Connection {
    pub fn open(url: &str) -> Result<Self, CdpError> {
        let (ws, _) = tungstenite::connect(url).map_err(|e| CdpError::Socket(format!("connect {url}: {e}")))?;
        Ok(Self {
            ws,
            next_id: 1,
            events: VecDeque::new(),
        })
    }

    fn set_read_timeout(&mut self, t: Duration) -> Result<(), CdpError> {
        // a zero timeout means "block forever" to the OS
        let t = t.max(Duration::from_millis(1));
        match self.ws.get_mut() {
            MaybeTlsStream::Plain(s) => s.set_read_timeout(Some(t)).map_err(|e| CdpError::Socket(e.to_string())),
            _ => Ok(()),
        }
    }

    /// Reads one frame, or `None` if nothing arrived within `wait`.
    fn read(&mut self, wait: Duration) -> Result<Option<Value>, CdpError> {
        self.set_read_timeout(wait)?;
        loop {
            match self.ws.read() {
                Ok(Message::Text(text)) => {
                    return serde_json::from_str(&text)
                        .map(Some)
                        .map_err(|e| CdpError::Malformed(format!("{e}: {text}")));
                }
                Ok(Message::Binary(bytes)) => {
                    return serde_json::from_slice(&bytes)
                        .map(Some)
                        .map_err(|e| CdpError::Malformed(e.to_string()));
                }
                Ok(Message::Close(_)) => return Err(CdpError::Socket("browser closed the connection".into())),
                Ok(_) => continue,
                Err(tungstenite::Error::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Ok(None)
                }
                Err(e) => return Err(CdpError::Socket(e.to_string())),
            }
        }
    }

    fn push_event(&mut self, msg: Value) {
        self.events.push_back(Event {
            session: msg.get("sessionId").and_then(Value::as_str).map(str::to_string),
            method: msg["method"].as_str().unwrap_or_default().to_string(),
            params: msg.get("params").cloned().unwrap_or(Value::Null),
        });
    }

    /// Sends a command and waits for its reply; events read meanwhile are queued.
    pub fn call(&mut self, session: Option<&str>, method: &str, params: Value, timeout: Duration) -> Result<Value, CdpError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut msg = json!({"id": id, "method": method, "params": params});
        if let Some(s) = session {
            msg["sessionId"] = json!(s);
        }
        tracing::trace!(%method, id, "cdp call");
        self.ws
            .send(Message::Text(msg.to_string()))
            .map_err(|e| CdpError::Socket(e.to_string()))?;
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(CdpError::Timeout(method.to_string()));
            }
            let Some(reply) = self.read(left)? else { continue };
            if reply.get("id").and_then(Value::as_u64) == Some(id) {
                if let Some(err) = reply.get("error") {
                    return Err(CdpError::Remote {
                        method: method.to_string(),
                        code: err["code"].as_i64().unwrap_or(0),
                        message: err["message"].as_str().unwrap_or("unknown error").to_string(),
                    });
                }
                return Ok(reply.get("result").cloned().unwrap_or(Value::Null));
            }
            if reply.get("method").is_some() {
                self.push_event(reply);
            }
        }
    }

    /// Next event, waiting up to `wait` for one to arrive.
    pub fn next_event(&mut self, wait: Duration) -> Result<Option<Event>, CdpError> {
        if let Some(ev) = self.events.pop_front() {
            return Ok(Some(ev));
        }
        let deadline = Instant::now() + wait;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            match self.read(left)? {
                Some(msg) if msg.get("method").is_some() => {
                    self.push_event(msg);
                    return Ok(self.events.pop_front());
                }
                Some(_) => continue,
                None => return Ok(None),
            }
        }
    }

    /// Events already received, without touching the socket.
    pub fn drain_queued(&mut self) -> Vec<Event> {
        self.events.drain(..).collect()
    }

    pub fn close(&mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}
