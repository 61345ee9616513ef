//! HTTP client for the scoring sidecar.
//!
//! `POST {url}/score` with `{masked_stem, top_k, candidates?}`; the reply
//! carries `entries: [{token, prob, approximate?}]` in the score-table entry
//! schema. Requests are idempotent and retried on transport errors and 503.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{wire_to_raw, RawEntry, ScoreQuery, ScoreSource, ScoringError, WireEntry, MASK_TOKEN};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub url: String,
    pub max_in_flight: usize,
    pub retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
    /// Mask token the sidecar's model expects.
    pub mask_token: String,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            max_in_flight: 4,
            retries: 2,
            backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(30),
            mask_token: MASK_TOKEN.to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
pub(crate) struct ScoreRequest<'a> {
    pub masked_stem: &'a str,
    pub top_k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<&'a [String]>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct ScoreResponse {
    pub entries: Vec<WireEntry>,
}

/// Counting semaphore bounding concurrent requests.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteSource {
    id: String,
    config: RemoteConfig,
    agent: ureq::Agent,
    permits: Permits,
}

impl RemoteSource {
    pub fn new(id: impl Into<String>, config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        RemoteSource {
            id: id.into(),
            permits: Permits {
                free: Mutex::new(config.max_in_flight.max(1)),
                cv: Condvar::new(),
            },
            config,
            agent,
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/score", self.config.url.trim_end_matches('/'))
    }

    fn unavailable(&self, reason: String) -> ScoringError {
        ScoringError::SourceUnavailable {
            source_id: self.id.clone(),
            reason,
        }
    }

    fn post_once(&self, body: &ScoreRequest<'_>) -> Result<ScoreResponse, (bool, String)> {
        let _permit = self.permits.acquire();
        match self.agent.post(&self.endpoint()).send_json(body) {
            Ok(resp) => resp
                .into_body()
                .read_json::<ScoreResponse>()
                .map_err(|e| (false, format!("bad response body: {e}"))),
            Err(ureq::Error::StatusCode(503)) => Err((true, "sidecar not ready (503)".into())),
            Err(ureq::Error::StatusCode(code)) => Err((false, format!("status {code}"))),
            Err(e) => Err((true, e.to_string())),
        }
    }
}

impl ScoreSource for RemoteSource {
    fn source_id(&self) -> &str {
        &self.id
    }

    fn raw_scores(&self, query: &ScoreQuery) -> Result<Vec<RawEntry>, ScoringError> {
        let stem = query.masked_stem.replace(MASK_TOKEN, &self.config.mask_token);
        let body = ScoreRequest {
            masked_stem: &stem,
            top_k: query.top_k,
            candidates: query.candidate_filter.as_deref(),
        };
        let mut attempt = 0;
        loop {
            match self.post_once(&body) {
                Ok(resp) => return Ok(wire_to_raw(resp.entries)),
                Err((retryable, reason)) => {
                    if !retryable || attempt >= self.config.retries {
                        return Err(self.unavailable(reason));
                    }
                    attempt += 1;
                    log::debug!("{}: retry {attempt} after {reason}", self.id);
                    thread::sleep(self.config.backoff * attempt);
                }
            }
        }
    }
}
