//! Pipeline configuration: a flat TOML key/value document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::WerNorm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    /// Real inference services over HTTP.
    #[default]
    Http,
    /// In-process reference-echoing mocks built from the input corpus.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// N-best candidates fed to the refinement prompt.
    pub nbest_k: usize,
    /// Source-side token budget per post-editing chunk.
    pub token_budget: usize,
    pub chunk_s: f64,
    pub overlap_s: f64,
    /// Tokens searched at each side of a long-form joint.
    pub stitch_window: usize,
    pub payload_sentences: usize,
    pub asr_beam: usize,
    pub mt_beam: usize,
    pub llm_beam: usize,
    pub max_new_tokens: usize,
    pub degeneracy_factor: f64,
    pub repeat_ngram: usize,
    pub repeat_count: usize,
    pub wer_lowercase: bool,
    pub wer_strip_punct: bool,
    pub bleu_smoothing: bool,
    pub resegment: bool,
    /// Extra abbreviations for sentence splitting, one per line.
    pub rules_file: Option<String>,
    pub long_form: bool,
    pub llm_refine: bool,
    /// Talks routed around both LLM stages regardless of `llm_refine`.
    pub skip_llm_talks: Vec<String>,
    pub parallelism: usize,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub backend: BackendMode,
    pub asr_url: Option<String>,
    pub mt_url: Option<String>,
    pub llm_url: Option<String>,
    pub punct_url: Option<String>,
    pub comet_url: Option<String>,
    pub half_a_asr_url: Option<String>,
    pub half_a_mt_url: Option<String>,
    pub half_b_asr_url: Option<String>,
    pub half_b_mt_url: Option<String>,
    pub seed: u64,
    pub noise_rate: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            nbest_k: 5,
            token_budget: 256,
            chunk_s: 30.0,
            overlap_s: 10.0,
            stitch_window: 20,
            payload_sentences: 2,
            asr_beam: 5,
            mt_beam: 5,
            llm_beam: 3,
            max_new_tokens: 512,
            degeneracy_factor: 1.5,
            repeat_ngram: 4,
            repeat_count: 3,
            wer_lowercase: true,
            wer_strip_punct: true,
            bleu_smoothing: true,
            resegment: true,
            rules_file: None,
            long_form: false,
            llm_refine: true,
            skip_llm_talks: Vec::new(),
            parallelism: 4,
            timeout_s: 60.0,
            max_retries: 3,
            backoff_ms: 200,
            backend: BackendMode::Http,
            asr_url: None,
            mt_url: None,
            llm_url: None,
            punct_url: None,
            comet_url: None,
            half_a_asr_url: None,
            half_a_mt_url: None,
            half_b_asr_url: None,
            half_b_mt_url: None,
            seed: 0,
            noise_rate: 0.1,
        }
    }
}

/// Checks every configuration invariant.
pub fn validate_config(cfg: PipelineConfig) -> Result<PipelineConfig> {
    let bad = |msg: String| Err(Error::Config(msg));
    if cfg.nbest_k == 0 {
        return bad("nbest_k must be at least 1".into());
    }
    if cfg.asr_beam == 0 || cfg.mt_beam == 0 || cfg.llm_beam == 0 {
        return bad("beam sizes must be at least 1".into());
    }
    if cfg.nbest_k > cfg.asr_beam {
        return bad(format!(
            "nbest_k ({}) cannot exceed asr_beam ({})",
            cfg.nbest_k, cfg.asr_beam
        ));
    }
    if !(cfg.overlap_s > 0.0 && cfg.overlap_s < cfg.chunk_s && cfg.chunk_s.is_finite()) {
        return bad(format!(
            "need 0 < overlap_s < chunk_s, got overlap_s={} chunk_s={}",
            cfg.overlap_s, cfg.chunk_s
        ));
    }
    if cfg.token_budget == 0 {
        return bad("token_budget must be at least 1".into());
    }
    if !(cfg.degeneracy_factor > 1.0) {
        return bad(format!(
            "degeneracy_factor must exceed 1, got {}",
            cfg.degeneracy_factor
        ));
    }
    if cfg.repeat_ngram == 0 || cfg.repeat_count < 2 {
        return bad("repeat_ngram must be >= 1 and repeat_count >= 2".into());
    }
    if cfg.stitch_window == 0 {
        return bad("stitch_window must be at least 1".into());
    }
    if cfg.parallelism == 0 {
        return bad("parallelism must be at least 1".into());
    }
    if !(cfg.timeout_s > 0.0) {
        return bad("timeout_s must be positive".into());
    }
    if !(0.0..=1.0).contains(&cfg.noise_rate) {
        return bad("noise_rate must lie in [0, 1]".into());
    }
    Ok(cfg)
}

impl PipelineConfig {
    /// Parses a TOML document; absent keys take their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        validate_config(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Overrides endpoints from `CASCADE_*_URL` environment variables.
    pub fn apply_env(&mut self) {
        let vars: [(&str, &mut Option<String>); 5] = [
            ("CASCADE_ASR_URL", &mut self.asr_url),
            ("CASCADE_MT_URL", &mut self.mt_url),
            ("CASCADE_LLM_URL", &mut self.llm_url),
            ("CASCADE_PUNCT_URL", &mut self.punct_url),
            ("CASCADE_COMET_URL", &mut self.comet_url),
        ];
        for (name, slot) in vars {
            if let Ok(v) = std::env::var(name) {
                if !v.is_empty() {
                    *slot = Some(v);
                }
            }
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn wer_norm(&self) -> WerNorm {
        WerNorm {
            lowercase: self.wer_lowercase,
            strip_punct: self.wer_strip_punct,
        }
    }

    /// Whether the LLM stages run for this talk.
    pub fn refine_enabled_for(&self, talk_id: &str) -> bool {
        self.llm_refine && !self.skip_llm_talks.iter().any(|t| t == talk_id)
    }
}
