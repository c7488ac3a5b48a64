//! Client contracts for the external inference services.
//!
//! Every model the pipeline uses (ASR, MT, LLM, punctuation, COMET) sits
//! behind one of the traits below. [`http`] speaks the JSON wire protocol,
//! [`mock`] provides deterministic stand-ins, and [`server`] exposes any
//! client over HTTP so the real transport can be tested end to end.
//!
//! Wire schemas (JSON over HTTP POST to the configured URL):
//!
//! | kind   | request                                                  | response                                   |
//! |--------|----------------------------------------------------------|--------------------------------------------|
//! | asr    | `{audio, start_s, end_s, n_best}`                        | `{hypotheses: [{text, score}]}`            |
//! | mt     | `{sentences: [..]}`                                      | `{translations: [..]}`                     |
//! | llm    | `{prompt, beam, max_new_tokens}`                         | `{text}`                                   |
//! | scorer | `{sources: [..], hypotheses: [..], references: [..]}`    | `{score}`                                  |

pub mod http;
pub mod mock;
pub mod server;

use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BackendMode, PipelineConfig};
use crate::model::{Hypothesis, NBestList, Talk};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no {0} backend configured")]
    NotConfigured(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Asr,
    Mt,
    Llm,
    Scorer,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Asr => "asr",
            BackendKind::Mt => "mt",
            BackendKind::Llm => "llm",
            BackendKind::Scorer => "scorer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub kind: BackendKind,
    pub endpoint: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub parallelism: usize,
    pub beam: usize,
    pub max_new_tokens: usize,
}

impl BackendProfile {
    pub fn new(kind: BackendKind, endpoint: impl Into<String>) -> Self {
        BackendProfile {
            kind,
            endpoint: endpoint.into(),
            timeout_s: 60.0,
            max_retries: 3,
            backoff_ms: 200,
            parallelism: 4,
            beam: 5,
            max_new_tokens: 512,
        }
    }

    pub fn from_config(kind: BackendKind, endpoint: &str, cfg: &PipelineConfig) -> Self {
        let beam = match kind {
            BackendKind::Asr => cfg.asr_beam,
            BackendKind::Mt => cfg.mt_beam,
            BackendKind::Llm => cfg.llm_beam,
            BackendKind::Scorer => 1,
        };
        BackendProfile {
            kind,
            endpoint: endpoint.to_string(),
            timeout_s: cfg.timeout_s,
            max_retries: cfg.max_retries,
            backoff_ms: cfg.backoff_ms,
            parallelism: cfg.parallelism,
            beam,
            max_new_tokens: cfg.max_new_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.timeout_s > 0.0) {
            return Err(BackendError::Precondition("timeout must be positive".into()));
        }
        if self.beam == 0 {
            return Err(BackendError::Precondition("beam must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(BackendError::Precondition("parallelism must be at least 1".into()));
        }
        Ok(())
    }
}

/// Audio region handed to the ASR service by server-visible path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioSpan {
    pub audio: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub beam: usize,
    pub max_new_tokens: usize,
}

impl DecodeParams {
    pub fn llm(cfg: &PipelineConfig) -> Self {
        DecodeParams {
            beam: cfg.llm_beam,
            max_new_tokens: cfg.max_new_tokens,
        }
    }
}

pub trait AsrClient: Send + Sync {
    /// Beam size the service decodes with; bounds the usable N-best depth.
    fn beam(&self) -> usize;
    fn transcribe(&self, span: &AudioSpan, n_best: usize) -> Result<Vec<Hypothesis>, BackendError>;
}

pub trait MtClient: Send + Sync {
    fn translate(&self, sentences: &[String]) -> Result<Vec<String>, BackendError>;
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str, params: &DecodeParams) -> Result<String, BackendError>;
}

pub trait Scorer: Send + Sync {
    fn score(
        &self,
        sources: &[String],
        hypotheses: &[String],
        references: &[String],
    ) -> Result<f64, BackendError>;
}

/// Transcribes one span and checks the N-best contract.
pub fn asr_transcribe(
    client: &dyn AsrClient,
    utterance_id: &str,
    span: &AudioSpan,
    n_best: usize,
) -> Result<NBestList, BackendError> {
    if n_best == 0 || n_best > client.beam() {
        return Err(BackendError::Precondition(format!(
            "n_best={n_best} must lie in 1..={} (beam size)",
            client.beam()
        )));
    }
    let mut hyps = client.transcribe(span, n_best)?;
    if hyps.is_empty() {
        return Err(BackendError::Protocol("ASR returned no hypotheses".into()));
    }
    hyps.truncate(n_best);
    NBestList::new(utterance_id, hyps).map_err(|e| BackendError::Protocol(e.to_string()))
}

/// Translates a batch, enforcing the 1:1 order-preserving contract.
pub fn mt_translate(client: &dyn MtClient, sentences: &[String]) -> Result<Vec<String>, BackendError> {
    if sentences.is_empty() {
        return Err(BackendError::Precondition("empty MT batch".into()));
    }
    let out = client.translate(sentences)?;
    if out.len() != sentences.len() {
        return Err(BackendError::Protocol(format!(
            "MT returned {} translations for {} sentences",
            out.len(),
            sentences.len()
        )));
    }
    Ok(out)
}

pub fn llm_complete(
    client: &dyn LlmClient,
    prompt: &str,
    params: &DecodeParams,
) -> Result<String, BackendError> {
    if prompt.is_empty() {
        return Err(BackendError::Precondition("empty prompt".into()));
    }
    client.complete(prompt, params)
}

/// Counting semaphore capping in-flight requests.
#[derive(Debug)]
pub struct Limiter {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub fn new(limit: usize) -> Self {
        Limiter {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap()
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap();
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Stand-in for a service the configuration does not name.
pub struct Unconfigured(pub &'static str);

impl AsrClient for Unconfigured {
    fn beam(&self) -> usize {
        usize::MAX
    }
    fn transcribe(&self, _: &AudioSpan, _: usize) -> Result<Vec<Hypothesis>, BackendError> {
        Err(BackendError::NotConfigured(self.0))
    }
}

impl MtClient for Unconfigured {
    fn translate(&self, _: &[String]) -> Result<Vec<String>, BackendError> {
        Err(BackendError::NotConfigured(self.0))
    }
}

impl LlmClient for Unconfigured {
    fn complete(&self, _: &str, _: &DecodeParams) -> Result<String, BackendError> {
        Err(BackendError::NotConfigured(self.0))
    }
}

/// The full set of services one pipeline run talks to.
#[derive(Clone)]
pub struct Backends {
    pub asr: Arc<dyn AsrClient>,
    pub mt: Arc<dyn MtClient>,
    pub llm: Arc<dyn LlmClient>,
    pub punctuator: Option<Arc<dyn MtClient>>,
    pub scorer: Option<Arc<dyn Scorer>>,
    /// Human-readable description of each service, recorded in run manifests.
    pub profiles: Vec<serde_json::Value>,
}

impl Backends {
    /// HTTP clients for every URL in the configuration. Missing ASR/MT/LLM
    /// URLs yield clients that fail with [`BackendError::NotConfigured`].
    pub fn http(cfg: &PipelineConfig) -> Result<Self, BackendError> {
        let mut profiles = Vec::new();
        let mut profile = |kind, url: &Option<String>| -> Result<Option<BackendProfile>, BackendError> {
            match url {
                Some(u) => {
                    let p = BackendProfile::from_config(kind, u, cfg);
                    p.validate()?;
                    profiles.push(serde_json::to_value(&p).expect("profile serializes"));
                    Ok(Some(p))
                }
                None => Ok(None),
            }
        };
        let asr: Arc<dyn AsrClient> = match profile(BackendKind::Asr, &cfg.asr_url)? {
            Some(p) => Arc::new(http::HttpAsr::new(p)),
            None => Arc::new(Unconfigured("asr")),
        };
        let mt: Arc<dyn MtClient> = match profile(BackendKind::Mt, &cfg.mt_url)? {
            Some(p) => Arc::new(http::HttpMt::new(p)),
            None => Arc::new(Unconfigured("mt")),
        };
        let llm: Arc<dyn LlmClient> = match profile(BackendKind::Llm, &cfg.llm_url)? {
            Some(p) => Arc::new(http::HttpLlm::new(p)),
            None => Arc::new(Unconfigured("llm")),
        };
        let punctuator = profile(BackendKind::Mt, &cfg.punct_url)?
            .map(|p| Arc::new(http::HttpMt::new(p)) as Arc<dyn MtClient>);
        let scorer = profile(BackendKind::Scorer, &cfg.comet_url)?
            .map(|p| Arc::new(http::HttpScorer::new(p)) as Arc<dyn Scorer>);
        Ok(Backends {
            asr,
            mt,
            llm,
            punctuator,
            scorer,
            profiles,
        })
    }
}

impl Backends {
    /// Reference-echoing mocks built from `talks`: every stage reproduces
    /// the references, so a full run must score perfectly.
    pub fn oracle(talks: &[Talk], cfg: &PipelineConfig) -> Self {
        Backends {
            asr: Arc::new(mock::OracleAsr::from_talks(talks, cfg.asr_beam)),
            mt: Arc::new(mock::TableMt::from_talks(talks)),
            llm: Arc::new(mock::OracleLlm::from_talks(talks)),
            punctuator: None,
            scorer: Some(Arc::new(mock::ChrfScorer)),
            profiles: vec![serde_json::json!({ "kind": "oracle" })],
        }
    }

    /// Backends selected by `cfg.backend`; `talks` feed the oracle mocks.
    pub fn from_config(cfg: &PipelineConfig, talks: &[Talk]) -> Result<Self, BackendError> {
        match cfg.backend {
            BackendMode::Http => Backends::http(cfg),
            BackendMode::Oracle => Ok(Backends::oracle(talks, cfg)),
        }
    }
}
