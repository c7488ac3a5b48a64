//! Blocking JSON-over-HTTP clients.

use std::thread;
use std::time::Duration;

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    AsrClient, AudioSpan, BackendError, BackendProfile, DecodeParams, Limiter, LlmClient,
    MtClient, Scorer,
};
use crate::model::Hypothesis;

/// Shared transport: retry with exponential backoff plus an in-flight cap.
pub struct HttpTransport {
    profile: BackendProfile,
    agent: ureq::Agent,
    limiter: Limiter,
    auth: Option<String>,
}

impl HttpTransport {
    pub fn new(profile: BackendProfile) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(profile.timeout_s))
            .build();
        let limiter = Limiter::new(profile.parallelism);
        let auth = std::env::var("CASCADE_API_KEY").ok().filter(|k| !k.is_empty());
        HttpTransport {
            profile,
            agent,
            limiter,
            auth,
        }
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    pub fn in_flight(&self) -> usize {
        self.limiter.in_flight()
    }

    /// POSTs `body`; retries transport failures, 5xx and 429 exactly
    /// `max_retries` times, sleeping `backoff_ms * 2^attempt` in between.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let body = serde_json::to_value(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let attempts = self.profile.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.profile.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            let permit = self.limiter.acquire();
            let mut req = self.agent.post(&self.profile.endpoint);
            if let Some(key) = &self.auth {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            let outcome = req.send_json(body.clone());
            let msg = match outcome {
                Ok(resp) => {
                    let parsed = resp.into_json::<Value>();
                    drop(permit);
                    let value = parsed.map_err(|e| {
                        BackendError::Protocol(format!("response is not JSON: {e}"))
                    })?;
                    return serde_json::from_value(value)
                        .map_err(|e| BackendError::Protocol(format!("unexpected response shape: {e}")));
                }
                Err(ureq::Error::Status(status, resp)) => {
                    let text = resp.into_string().unwrap_or_default();
                    drop(permit);
                    if status < 500 && status != 429 {
                        return Err(BackendError::Http { status, body: text });
                    }
                    format!("HTTP {status}: {text}")
                }
                Err(ureq::Error::Transport(t)) => {
                    drop(permit);
                    t.to_string()
                }
            };
            warn!(
                "{} request to {} failed (attempt {}/{}): {msg}",
                self.profile.kind.name(),
                self.profile.endpoint,
                attempt + 1,
                attempts
            );
            last = msg;
        }
        Err(BackendError::Transport {
            attempts,
            message: last,
        })
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AsrRequest {
    pub audio: String,
    pub start_s: f64,
    pub end_s: f64,
    pub n_best: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AsrResponse {
    pub hypotheses: Vec<Hypothesis>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MtRequest {
    pub sentences: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MtResponse {
    pub translations: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct LlmRequest {
    pub prompt: String,
    pub beam: usize,
    pub max_new_tokens: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct LlmResponse {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreRequest {
    pub sources: Vec<String>,
    pub hypotheses: Vec<String>,
    pub references: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreResponse {
    pub score: f64,
}

pub struct HttpAsr(pub HttpTransport);

impl HttpAsr {
    pub fn new(profile: BackendProfile) -> Self {
        HttpAsr(HttpTransport::new(profile))
    }
}

impl AsrClient for HttpAsr {
    fn beam(&self) -> usize {
        self.0.profile().beam
    }

    fn transcribe(&self, span: &AudioSpan, n_best: usize) -> Result<Vec<Hypothesis>, BackendError> {
        let resp: AsrResponse = self.0.post(&AsrRequest {
            audio: span.audio.clone(),
            start_s: span.start_s,
            end_s: span.end_s,
            n_best,
        })?;
        Ok(resp.hypotheses)
    }
}

pub struct HttpMt(pub HttpTransport);

impl HttpMt {
    pub fn new(profile: BackendProfile) -> Self {
        HttpMt(HttpTransport::new(profile))
    }
}

impl MtClient for HttpMt {
    fn translate(&self, sentences: &[String]) -> Result<Vec<String>, BackendError> {
        let resp: MtResponse = self.0.post(&MtRequest {
            sentences: sentences.to_vec(),
        })?;
        Ok(resp.translations)
    }
}

pub struct HttpLlm(pub HttpTransport);

impl HttpLlm {
    pub fn new(profile: BackendProfile) -> Self {
        HttpLlm(HttpTransport::new(profile))
    }
}

impl LlmClient for HttpLlm {
    fn complete(&self, prompt: &str, params: &DecodeParams) -> Result<String, BackendError> {
        let resp: LlmResponse = self.0.post(&LlmRequest {
            prompt: prompt.to_string(),
            beam: params.beam,
            max_new_tokens: params.max_new_tokens,
        })?;
        Ok(resp.text)
    }
}

pub struct HttpScorer(pub HttpTransport);

impl HttpScorer {
    pub fn new(profile: BackendProfile) -> Self {
        HttpScorer(HttpTransport::new(profile))
    }
}

impl Scorer for HttpScorer {
    fn score(
        &self,
        sources: &[String],
        hypotheses: &[String],
        references: &[String],
    ) -> Result<f64, BackendError> {
        let resp: ScoreResponse = self.0.post(&ScoreRequest {
            sources: sources.to_vec(),
            hypotheses: hypotheses.to_vec(),
            references: references.to_vec(),
        })?;
        Ok(resp.score)
    }
}
