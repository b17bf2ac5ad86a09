#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use msr_core::corpus::{Cohort, TokenizedDocument};
use msr_core::matching::MaximalMatch;
use msr_core::prompt::{build_transcript, segment, Transcript, DEFAULT_SYSTEM_PROMPT};

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

/// Minimal HTTP/1.1 server answering each request through `respond`, which
/// returns a status code and a body.
pub struct StubServer {
    pub base_url: String,
    pub requests: Arc<Mutex<Vec<RecordedRequest>>>,
}

impl StubServer {
    pub fn start<F>(respond: F) -> Self
    where
        F: Fn(usize, &RecordedRequest) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        let respond = Arc::new(respond);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let log = log.clone();
                let respond = respond.clone();
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut request_line = String::new();
                    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                        return;
                    }
                    let mut parts = request_line.split_whitespace();
                    let method = parts.next().unwrap_or_default().to_string();
                    let path = parts.next().unwrap_or_default().to_string();
                    let mut content_length = 0;
                    let mut authorization = None;
                    loop {
                        let mut line = String::new();
                        reader.read_line(&mut line).unwrap();
                        let line = line.trim_end();
                        if line.is_empty() {
                            break;
                        }
                        let (name, value) = line.split_once(':').unwrap();
                        match name.to_ascii_lowercase().as_str() {
                            "content-length" => content_length = value.trim().parse().unwrap(),
                            "authorization" => authorization = Some(value.trim().to_string()),
                            _ => {}
                        }
                    }
                    let mut body = vec![0u8; content_length];
                    reader.read_exact(&mut body).unwrap();
                    let req = RecordedRequest {
                        method,
                        path,
                        authorization,
                        body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
                    };
                    let index = {
                        let mut log = log.lock().unwrap();
                        log.push(req.clone());
                        log.len() - 1
                    };
                    let (status, body) = respond(index, &req);
                    let response = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(response.as_bytes());
                    let _ = stream.flush();
                });
            }
        });
        Self {
            base_url: format!("http://{addr}/v1"),
            requests,
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

pub fn completion_body(text: &str) -> String {
    serde_json::json!({
        "id": "cmpl-1",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
    })
    .to_string()
}

pub fn transcript(tag: usize, words: usize) -> Transcript {
    let text = (0..words).map(|i| format!("doc{tag}word{i}")).collect::<Vec<_>>().join(" ");
    let doc = TokenizedDocument::from_parts(format!("doc{tag}"), Cohort::Pre, text).unwrap();
    let seg = segment(&doc, 6).unwrap();
    build_transcript(&doc, &seg, DEFAULT_SYSTEM_PROMPT).unwrap()
}

/// Tests every (i, j, k) triple directly for equality and non-extendability.
pub fn brute_force_matches(a: &[u8], b: &[u8]) -> Vec<MaximalMatch> {
    let mut out = Vec::new();
    for i in 0..a.len() {
        for j in 0..b.len() {
            let left_open = i == 0 || j == 0 || a[i - 1] != b[j - 1];
            if !left_open {
                continue;
            }
            for k in 1..=(a.len() - i).min(b.len() - j) {
                let equal = (0..k).all(|t| a[i + t] == b[j + t]);
                let right_closed = i + k == a.len() || j + k == b.len() || a[i + k] != b[j + k];
                if equal && right_closed {
                    out.push(MaximalMatch { pos_ref: i, pos_gen: j, length: k });
                }
            }
        }
    }
    out.sort();
    out
}

