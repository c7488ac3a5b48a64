//! Evaluation: WER, resegmentation, BLEU, chrF2 and the report that ties
//! them together.

mod bleu;
mod chrf;
mod edit;

pub use bleu::{bleu, bleu_detailed, tokenize_13a, BleuScore};
pub use chrf::chrf2;
pub use edit::{edit_cost, edit_distance, mwer_resegment, Alignment, EditOp, Resegmentation};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backends::Scorer;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::model::{words, Talk};

/// Text normalization applied before word error counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerNorm {
    pub lowercase: bool,
    /// Removes every character that is neither alphanumeric nor whitespace.
    pub strip_punct: bool,
}

impl Default for WerNorm {
    fn default() -> Self {
        WerNorm {
            lowercase: true,
            strip_punct: true,
        }
    }
}

impl WerNorm {
    /// Normalizes one token; may return an empty string.
    pub fn token(&self, token: &str) -> String {
        let t: String = if self.strip_punct {
            token.chars().filter(|c| c.is_alphanumeric()).collect()
        } else {
            token.to_string()
        };
        if self.lowercase {
            t.to_lowercase()
        } else {
            t
        }
    }

    pub fn words(&self, text: &str) -> Vec<String> {
        words(text)
            .into_iter()
            .map(|w| self.token(w))
            .filter(|w| !w.is_empty())
            .collect()
    }
}

/// Word error rate in percent; may exceed 100.
pub fn wer(hyp: &str, reference: &str, norm: WerNorm) -> Result<f64> {
    wer_corpus(&[hyp], &[reference], norm)
}

/// Total edits over total reference words.
pub fn wer_corpus<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], norm: WerNorm) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::CountMismatch(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let (mut edits, mut ref_words) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let r = norm.words(r.as_ref());
        edits += edit_cost(&norm.words(h.as_ref()), &r);
        ref_words += r.len();
    }
    if ref_words == 0 {
        return Err(Error::Precondition("reference is empty after normalization".into()));
    }
    Ok(100.0 * edits as f64 / ref_words as f64)
}

/// Cuts the concatenated hypothesis sentences along the reference
/// segmentation. Alignment compares normalized tokens; pieces keep the
/// original surface tokens.
pub fn resegment_text<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    norm: WerNorm,
) -> Result<Vec<String>> {
    let stream: Vec<&str> = hyps.iter().flat_map(|h| words(h.as_ref())).collect();
    let keys: Vec<String> = stream.iter().map(|w| norm.token(w)).collect();
    let segments: Vec<Vec<String>> = refs
        .iter()
        .map(|r| words(r.as_ref()).into_iter().map(|w| norm.token(w)).collect())
        .collect();
    let r = mwer_resegment(&keys, &segments)?;
    Ok(r.ranges.iter().map(|range| stream[range.clone()].join(" ")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wer: f64,
    pub bleu: f64,
    pub chrf2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comet: Option<f64>,
    pub talks: usize,
    pub hyp_segments: usize,
    pub ref_segments: usize,
    /// Talks whose hypothesis segmentation was realigned to the reference.
    pub resegmented_talks: usize,
    pub wer_lowercase: bool,
    pub wer_strip_punct: bool,
    pub bleu_smoothing: bool,
}

/// Scores hypothesis talks against reference talks matched by id. The
/// transcript of each hypothesis sentence is scored against the reference
/// `src`; its final translation (`ape`, else `mt`) against `ref`.
pub fn evaluate(
    hyps: &[Talk],
    refs: &[Talk],
    cfg: &PipelineConfig,
    scorer: Option<&dyn Scorer>,
) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, &Talk> = hyps.iter().map(|t| (t.talk_id.as_str(), t)).collect();
    if let Some(extra) = by_id.keys().find(|id| !refs.iter().any(|r| r.talk_id == **id)) {
        return Err(Error::CountMismatch(format!("hypothesis talk {extra} has no reference")));
    }
    let norm = cfg.wer_norm();
    let mut sources = Vec::new();
    let (mut asr_hyp, mut asr_ref) = (Vec::new(), Vec::new());
    let (mut mt_hyp, mut mt_ref) = (Vec::new(), Vec::new());
    let (mut hyp_segments, mut resegmented) = (0, 0);
    for r in refs {
        let h = by_id.get(r.talk_id.as_str()).ok_or_else(|| {
            Error::CountMismatch(format!("reference talk {} has no hypothesis", r.talk_id))
        })?;
        let ref_src: Vec<&str> = r.sentences.iter().map(|s| s.src.as_str()).collect();
        let ref_tgt = r
            .sentences
            .iter()
            .map(|s| {
                s.reference.as_deref().ok_or_else(|| {
                    Error::Precondition(format!(
                        "reference talk {} sentence {} has no reference translation",
                        r.talk_id, s.index
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let hyp_src: Vec<&str> = h.sentences.iter().map(|s| s.src.as_str()).collect();
        let hyp_tgt = h
            .sentences
            .iter()
            .map(|s| {
                s.translation().ok_or_else(|| {
                    Error::Precondition(format!(
                        "hypothesis talk {} sentence {} has no translation",
                        h.talk_id, s.index
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        hyp_segments += h.sentences.len();
        if h.sentences.len() == r.sentences.len() {
            asr_hyp.extend(hyp_src.iter().map(|s| s.to_string()));
            mt_hyp.extend(hyp_tgt.iter().map(|s| s.to_string()));
        } else if cfg.resegment {
            resegmented += 1;
            asr_hyp.extend(resegment_text(&hyp_src, &ref_src, norm)?);
            mt_hyp.extend(resegment_text(&hyp_tgt, &ref_tgt, norm)?);
        } else {
            return Err(Error::CountMismatch(format!(
                "talk {}: {} hypothesis sentences for {} reference sentences (resegmentation disabled)",
                r.talk_id,
                h.sentences.len(),
                r.sentences.len()
            )));
        }
        sources.extend(ref_src.iter().map(|s| s.to_string()));
        asr_ref.extend(ref_src.iter().map(|s| s.to_string()));
        mt_ref.extend(ref_tgt.iter().map(|s| s.to_string()));
    }
    let bleu = bleu_detailed(&mt_hyp, &mt_ref, cfg.bleu_smoothing)?.score;
    let comet = scorer
        .map(|s| s.score(&sources, &mt_hyp, &mt_ref))
        .transpose()?;
    Ok(EvalReport {
        wer: wer_corpus(&asr_hyp, &asr_ref, norm)?,
        bleu,
        chrf2: chrf2(&mt_hyp, &mt_ref)?,
        comet,
        talks: refs.len(),
        hyp_segments,
        ref_segments: mt_ref.len(),
        resegmented_talks: resegmented,
        wer_lowercase: norm.lowercase,
        wer_strip_punct: norm.strip_punct,
        bleu_smoothing: cfg.bleu_smoothing,
    })
}
