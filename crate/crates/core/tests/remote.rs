//! Remote score source against an in-process HTTP server speaking the
//! sidecar's wire schema.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use cloze_core::scoring::{
    rank_vocabulary, table_from_json, table_to_json, RemoteConfig, RemoteSource, ScoreQuery, ScoreSource,
    ScoringError, MASK_TOKEN,
};
use serde_json::{json, Value};

type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

struct MockSidecar {
    url: String,
    requests: Arc<Mutex<Vec<Value>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<Value> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    assert!(line.starts_with("POST /score "), "unexpected request line {line:?}");
    let mut length = 0;
    loop {
        line.clear();
        reader.read_line(&mut line).ok()?;
        let header = line.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    serde_json::from_slice(&body).ok()
}

impl MockSidecar {
    fn start(handler: Box<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let Some(body) = read_request(&mut stream) else { continue };
                let n = {
                    let mut seen = seen.lock().unwrap();
                    seen.push(body.clone());
                    seen.len() - 1
                };
                let (status, payload) = handler(n, &body);
                let reason = if status == 200 { "OK" } else { "Error" };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            }
        });
        MockSidecar { url, requests }
    }

    fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }
}

/// Scores the requested candidates, or a fixed vocabulary when none are given.
fn scoring_handler(_: usize, body: &Value) -> (u16, String) {
    let vocab = [("crying", 0.5), ("shouting", 0.2), ("laughing", 0.15), ("##ing", 0.1), ("singing", 0.05)];
    let entries: Vec<Value> = match body.get("candidates").and_then(Value::as_array) {
        Some(cands) => cands
            .iter()
            .map(|c| {
                let p = vocab.iter().find(|(w, _)| Some(*w) == c.as_str()).map_or(0.01, |(_, p)| *p);
                json!({"token": c, "prob": p})
            })
            .collect(),
        None => vocab.iter().map(|(w, p)| json!({"token": w, "prob": p})).collect(),
    };
    let top_k = body["top_k"].as_u64().unwrap() as usize;
    let entries: Vec<Value> = entries.into_iter().take(top_k).collect();
    (200, json!({ "entries": entries }).to_string())
}

fn fast_config(url: &str) -> RemoteConfig {
    let mut cfg = RemoteConfig::new(url);
    cfg.backoff = Duration::from_millis(10);
    cfg.timeout = Duration::from_secs(5);
    cfg
}

fn stem() -> String {
    format!("she was {MASK_TOKEN} her heart out")
}

#[test]
fn request_body_follows_the_wire_schema() {
    let mock = MockSidecar::start(Box::new(scoring_handler));
    let src = RemoteSource::new("remote", fast_config(&mock.url));
    let q = ScoreQuery::new("q1", stem(), 10).with_key("crying");
    src.raw_scores(&q).unwrap();
    let q = q.with_candidates(vec!["crying".into(), "shouting".into()]);
    src.raw_scores(&q).unwrap();

    let reqs = mock.requests();
    assert_eq!(reqs[0], json!({"masked_stem": stem(), "top_k": 10}));
    assert_eq!(
        reqs[1],
        json!({"masked_stem": stem(), "top_k": 10, "candidates": ["crying", "shouting"]})
    );
    // The gold answer never leaves the process.
    assert!(reqs.iter().all(|r| !r.to_string().contains("key")));
}

#[test]
fn candidates_come_back_exactly() {
    let mock = MockSidecar::start(Box::new(scoring_handler));
    let src = RemoteSource::new("remote", fast_config(&mock.url));
    let q = ScoreQuery::new("q", stem(), 10).with_candidates(vec!["crying".into(), "shouting".into()]);
    let table = rank_vocabulary(&q, &src, 1).unwrap();
    let tokens: Vec<&str> = table.entries().iter().map(|e| e.token.as_str()).collect();
    assert_eq!(tokens, ["crying", "shouting"]);
    assert_eq!(table.source_id, "remote");
}

#[test]
fn responses_are_normalized_like_any_source() {
    let mock = MockSidecar::start(Box::new(scoring_handler));
    let src = RemoteSource::new("remote", fast_config(&mock.url));
    let table = rank_vocabulary(&ScoreQuery::new("q", stem(), 10), &src, 1).unwrap();
    let tokens: Vec<&str> = table.entries().iter().map(|e| e.token.as_str()).collect();
    // The sub-word fragment is dropped.
    assert_eq!(tokens, ["crying", "shouting", "laughing", "singing"]);
}

#[test]
fn approximate_entries_are_filtered() {
    let mock = MockSidecar::start(Box::new(|_, _| {
        let body = json!({"entries": [
            {"token": "crying", "prob": 0.6},
            {"token": "sobbing", "prob": 0.3, "approximate": true},
            {"token": "laughing", "prob": "0.1"},
        ]});
        (200, body.to_string())
    }));
    let src = RemoteSource::new("remote", fast_config(&mock.url));
    let table = rank_vocabulary(&ScoreQuery::new("q", stem(), 10), &src, 1).unwrap();
    assert_eq!(table.prob_of("sobbing"), None);
    assert_eq!(table.prob_of("laughing"), Some(0.1));
}

#[test]
fn not_ready_is_retried() {
    let mock = MockSidecar::start(Box::new(|n, body| {
        if n < 2 {
            (503, r#"{"error":"loading"}"#.into())
        } else {
            scoring_handler(n, body)
        }
    }));
    let src = RemoteSource::new("remote", fast_config(&mock.url));
    let raw = src.raw_scores(&ScoreQuery::new("q", stem(), 3)).unwrap();
    assert_eq!(raw.len(), 3);
    assert_eq!(mock.requests().len(), 3);
}

#[test]
fn exhausted_retries_report_unavailable() {
    let mock = MockSidecar::start(Box::new(|_, _| (503, "{}".into())));
    let mut cfg = fast_config(&mock.url);
    cfg.retries = 1;
    let src = RemoteSource::new("remote", cfg);
    let err = src.raw_scores(&ScoreQuery::new("q", stem(), 3)).unwrap_err();
    assert!(matches!(err, ScoringError::SourceUnavailable { ref source_id, .. } if source_id == "remote"));
    assert_eq!(mock.requests().len(), 2);
}

#[test]
fn malformed_mask_is_not_retried() {
    let mock = MockSidecar::start(Box::new(|_, _| (400, r#"{"error":"malformed mask"}"#.into())));
    let src = RemoteSource::new("remote", fast_config(&mock.url));
    let err = src.raw_scores(&ScoreQuery::new("q", stem(), 3)).unwrap_err();
    assert!(matches!(err, ScoringError::SourceUnavailable { .. }));
    assert_eq!(mock.requests().len(), 1);
}

#[test]
fn custom_mask_token_is_substituted() {
    let mock = MockSidecar::start(Box::new(scoring_handler));
    let mut cfg = fast_config(&mock.url);
    cfg.mask_token = "<mask>".into();
    let src = RemoteSource::new("remote", cfg);
    src.raw_scores(&ScoreQuery::new("q", stem(), 3)).unwrap();
    assert_eq!(mock.requests()[0]["masked_stem"], "she was <mask> her heart out");
}

/// A sidecar reply carries entries in exactly the score-table entry layout, so
/// entries cut from a fixture record are a valid reply and vice versa.
#[test]
fn wire_entries_match_score_table_entries() {
    let record = r#"{"item_id":"q","source_id":"remote","entries":[{"token":"crying","prob":"0.7"},{"token":"shouting","prob":"0.3"}]}"#;
    let table = table_from_json(record).unwrap();
    assert_eq!(table_to_json(&table), record);

    let entries: Value = serde_json::from_str::<Value>(record).unwrap()["entries"].clone();
    let reply = json!({ "entries": entries }).to_string();
    let mock = MockSidecar::start(Box::new(move |_, _| (200, reply.clone())));
    let src = RemoteSource::new("remote", fast_config(&mock.url));
    let fetched = rank_vocabulary(&ScoreQuery::new("q", stem(), 10), &src, 1).unwrap();
    assert_eq!(fetched, table);
    assert_eq!(table_to_json(&fetched), record);
}

#[test]
fn concurrent_queries_are_served() {
    let mock = MockSidecar::start(Box::new(scoring_handler));
    let src = Arc::new(RemoteSource::new("remote", fast_config(&mock.url)));
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let src = Arc::clone(&src);
            thread::spawn(move || src.raw_scores(&ScoreQuery::new(format!("q{i}"), stem(), 5)).unwrap().len())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), 5);
    }
    assert_eq!(mock.requests().len(), 8);
}
