//! N-best refinement with an LLM.
//!
//! The top candidates are packed into a fixed instruction template, the
//! model writes one punctuated hypothesis, and a guard swaps degenerate
//! answers for the rank-1 candidate.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::backends::{llm_complete, DecodeParams, LlmClient};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::guard::DegeneracyGuard;
use crate::model::{words, NBestList, JOINER};
use crate::parallel::parallel_map;

const ASR_HEADER: &str = "Punctuate and Post-edit the hypothesis\nbased on the predictions:\n";
pub const ASR_ANSWER_MARKER: &str = "Post-edited Hypothesis:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub utterance_id: String,
    pub refined: String,
    pub used_fallback: bool,
    pub reason: Option<String>,
}

/// The first `min(k, n)` candidates in rank order, `<SS>`-joined.
pub fn build_asr_prompt(nbest: &NBestList, k: usize) -> Result<String> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    let hyps: Vec<&str> = nbest.top(k).iter().map(|h| h.text.as_str()).collect();
    Ok(format!("{ASR_HEADER}{}\n{ASR_ANSWER_MARKER}\n", hyps.join(JOINER)))
}

/// Inverse of [`build_asr_prompt`]; `None` for any other text.
pub fn parse_asr_prompt(prompt: &str) -> Option<Vec<String>> {
    let body = prompt
        .strip_prefix(ASR_HEADER)?
        .strip_suffix(&format!("\n{ASR_ANSWER_MARKER}\n"))?;
    Some(body.split(JOINER).map(String::from).collect())
}

/// Drops everything through the last answer marker, if echoed.
pub fn strip_echo(output: &str) -> &str {
    let tail = match output.rfind(ASR_ANSWER_MARKER) {
        Some(pos) => &output[pos + ASR_ANSWER_MARKER.len()..],
        None => output,
    };
    tail.trim()
}

pub fn refine_transcript(
    nbest: &NBestList,
    llm: &dyn LlmClient,
    cfg: &PipelineConfig,
) -> Result<RefinementResult> {
    let prompt = build_asr_prompt(nbest, cfg.nbest_k)?;
    let raw = llm_complete(llm, &prompt, &DecodeParams::llm(cfg))?;
    let output = strip_echo(&raw);
    let longest = nbest
        .top(cfg.nbest_k)
        .iter()
        .map(|h| words(&h.text).len())
        .max()
        .unwrap_or(0);
    let result = match DegeneracyGuard::from_config(cfg).check(output, longest) {
        None => RefinementResult {
            utterance_id: nbest.utterance_id.clone(),
            refined: output.to_string(),
            used_fallback: false,
            reason: None,
        },
        Some(d) => RefinementResult {
            utterance_id: nbest.utterance_id.clone(),
            refined: nbest.best().text.clone(),
            used_fallback: true,
            reason: Some(d.reason().to_string()),
        },
    };
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStatus {
    Ok,
    /// Some utterances failed; the rest were refined.
    Partial,
    AllFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub refined: usize,
    pub fallback: usize,
    pub failed: usize,
    pub status: BatchStatus,
}

#[derive(Debug)]
pub struct BatchRefinement {
    /// Successful results in input order; failed utterances are absent.
    pub results: Vec<RefinementResult>,
    pub failures: Vec<(String, Error)>,
    pub summary: BatchSummary,
}

pub fn batch_refine(
    lists: &[NBestList],
    llm: &dyn LlmClient,
    cfg: &PipelineConfig,
) -> BatchRefinement {
    let outcomes = parallel_map(lists, cfg.parallelism, |_, nb| refine_transcript(nb, llm, cfg));
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (nb, outcome) in lists.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => {
                warn!("refinement of {} failed: {e}", nb.utterance_id);
                failures.push((nb.utterance_id.clone(), e));
            }
        }
    }
    let fallback = results.iter().filter(|r| r.used_fallback).count();
    let status = if failures.is_empty() {
        BatchStatus::Ok
    } else if results.is_empty() {
        BatchStatus::AllFailed
    } else {
        BatchStatus::Partial
    };
    let summary = BatchSummary {
        refined: results.len() - fallback,
        fallback,
        failed: failures.len(),
        status,
    };
    BatchRefinement {
        results,
        failures,
        summary,
    }
}
