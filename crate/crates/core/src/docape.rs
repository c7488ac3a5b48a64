//! Document-level post-editing of sentence translations.
//!
//! A talk is packed into chunks under a source token budget. Chunks are
//! decoded in order, each prompt carrying the last few already-emitted
//! sentence pairs as committed context (the payload). Answers are split on
//! `<SS>`; any answer that does not align one-to-one with the chunk keeps
//! the original MT for the whole chunk.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::{llm_complete, DecodeParams, LlmClient};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::guard::DegeneracyGuard;
use crate::model::{words, SentenceRecord, Talk, DELIMITER, JOINER};

/// Counts the tokens a sentence costs against the chunk budget.
pub trait TokenCounter: Sync {
    fn count(&self, text: &str) -> usize;
}

/// Word runs and single punctuation marks.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctCounter;

impl TokenCounter for WordPunctCounter {
    fn count(&self, text: &str) -> usize {
        static TOKEN: OnceLock<Regex> = OnceLock::new();
        TOKEN
            .get_or_init(|| Regex::new(r"\w+|[^\w\s]").unwrap())
            .find_iter(text)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocChunk<'a> {
    pub index: usize,
    /// Position of the first sentence within the talk.
    pub first: usize,
    pub sentences: &'a [SentenceRecord],
    pub src_tokens: usize,
    /// A single sentence longer than the budget.
    pub oversized: bool,
}

impl DocChunk<'_> {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.first..self.first + self.sentences.len()
    }

    fn mts(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(|s| s.mt.as_deref().unwrap_or_default())
    }
}

/// Greedy packing in sentence order under a source-side budget.
pub fn chunk_document<'a>(
    talk: &'a Talk,
    budget: usize,
    counter: &dyn TokenCounter,
) -> Result<Vec<DocChunk<'a>>> {
    if budget == 0 {
        return Err(Error::Precondition("token budget must be at least 1".into()));
    }
    if let Some(s) = talk.sentences.iter().find(|s| s.mt.is_none()) {
        return Err(Error::Precondition(format!(
            "talk {} sentence {} has no MT output",
            talk.talk_id, s.index
        )));
    }
    let mut chunks = Vec::new();
    let mut push = |first: usize, end: usize, tokens: usize, oversized: bool| {
        chunks.push(DocChunk {
            index: chunks.len(),
            first,
            sentences: &talk.sentences[first..end],
            src_tokens: tokens,
            oversized,
        })
    };
    let mut first = 0;
    let mut tokens = 0;
    for (i, s) in talk.sentences.iter().enumerate() {
        let n = counter.count(&s.src);
        if n > budget {
            if i > first {
                push(first, i, tokens, false);
            }
            push(i, i + 1, n, true);
            first = i + 1;
            tokens = 0;
            continue;
        }
        if i > first && tokens + n > budget {
            push(first, i, tokens, false);
            first = i;
            tokens = 0;
        }
        tokens += n;
    }
    if first < talk.sentences.len() {
        push(first, talk.sentences.len(), tokens, false);
    }
    Ok(chunks)
}

/// Display name of a language code in prompts; unknown codes pass through.
pub fn language_name(code: &str) -> &str {
    match code {
        "en" => "English",
        "de" => "German",
        "fr" => "French",
        "es" => "Spanish",
        "it" => "Italian",
        "nl" => "Dutch",
        "pt" => "Portuguese",
        "ru" => "Russian",
        "ja" => "Japanese",
        "zh" => "Chinese",
        "ar" => "Arabic",
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApeWindowState {
    pub talk_id: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub next_chunk: usize,
    /// (source, emitted target) pairs, oldest first.
    pub payload: Vec<(String, String)>,
}

impl ApeWindowState {
    pub fn new(talk: &Talk) -> Self {
        ApeWindowState {
            talk_id: talk.talk_id.clone(),
            src_lang: talk.src_lang.clone(),
            tgt_lang: talk.tgt_lang.clone(),
            next_chunk: 0,
            payload: Vec::new(),
        }
    }

    /// Appends a chunk's emitted pairs and keeps the last `size`.
    pub fn advance(&mut self, emitted: impl IntoIterator<Item = (String, String)>, size: usize) {
        self.payload.extend(emitted);
        let excess = self.payload.len().saturating_sub(size);
        self.payload.drain(..excess);
        self.next_chunk += 1;
    }
}

pub fn build_ape_prompt(chunk: &DocChunk, state: &ApeWindowState) -> String {
    let src = language_name(&state.src_lang);
    let tgt = language_name(&state.tgt_lang);
    let sources: Vec<&str> = state
        .payload
        .iter()
        .map(|(s, _)| s.as_str())
        .chain(chunk.sentences.iter().map(|s| s.src.as_str()))
        .collect();
    let targets: Vec<&str> = state
        .payload
        .iter()
        .map(|(_, t)| t.as_str())
        .chain(chunk.mts())
        .collect();
    let mut answer = String::new();
    for (_, t) in &state.payload {
        answer.push_str(t);
        answer.push_str(JOINER);
    }
    format!(
        "Noisy {src} Transcript:\n{}\n{tgt} Translations:\n{}\nPost-Edited {tgt} Translations:\n{answer}",
        sources.join(JOINER),
        targets.join(JOINER)
    )
}

/// Sections recovered from a post-editing prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ApePromptParts {
    pub src_language: String,
    pub tgt_language: String,
    /// Payload sources followed by chunk sources.
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    /// Pre-filled answer sentences.
    pub payload: Vec<String>,
}

impl ApePromptParts {
    pub fn chunk_sources(&self) -> &[String] {
        &self.sources[self.payload.len()..]
    }

    pub fn chunk_targets(&self) -> &[String] {
        &self.targets[self.payload.len()..]
    }
}

/// Inverse of [`build_ape_prompt`]; `None` for any other text.
pub fn parse_ape_prompt(prompt: &str) -> Option<ApePromptParts> {
    let lines: Vec<&str> = prompt.split('\n').collect();
    let [head, sources, mid, targets, tail, answer] = lines.as_slice() else {
        return None;
    };
    let src_language = head.strip_prefix("Noisy ")?.strip_suffix(" Transcript:")?;
    let tgt_language = mid.strip_suffix(" Translations:")?;
    if tail.strip_prefix("Post-Edited ")?.strip_suffix(" Translations:")? != tgt_language {
        return None;
    }
    let split = |s: &str| s.split(JOINER).map(String::from).collect::<Vec<_>>();
    let sources = split(sources);
    let targets = split(targets);
    let payload = if answer.is_empty() {
        Vec::new()
    } else {
        split(answer.strip_suffix(JOINER)?)
    };
    if sources.len() != targets.len() || payload.len() >= sources.len() {
        return None;
    }
    Some(ApePromptParts {
        src_language: src_language.to_string(),
        tgt_language: tgt_language.to_string(),
        sources,
        targets,
        payload,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApeParse {
    Sentences(Vec<String>),
    /// The answer does not align with the chunk.
    Mismatch { raw: String, found: usize },
}

/// Splits an answer into `expected` sentences. Template echo is removed
/// first; an answer that repeats the `payload` pre-filled sentences has
/// them dropped.
pub fn parse_ape_output(raw: &str, expected: usize, payload: usize) -> ApeParse {
    static MARKER: OnceLock<Regex> = OnceLock::new();
    let marker = MARKER.get_or_init(|| Regex::new(r"Post-Edited [^\n]*Translations:").unwrap());
    let body = match marker.find_iter(raw).last() {
        Some(m) => &raw[m.end()..],
        None => raw,
    };
    let mut pieces: Vec<String> = body.split(DELIMITER).map(|p| p.trim().to_string()).collect();
    let found = pieces.len();
    if payload > 0 && found == expected + payload {
        pieces.drain(..payload);
    } else if found != expected {
        return ApeParse::Mismatch {
            raw: raw.to_string(),
            found,
        };
    }
    if pieces.iter().any(String::is_empty) {
        return ApeParse::Mismatch {
            raw: raw.to_string(),
            found,
        };
    }
    ApeParse::Sentences(pieces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkDetail {
    pub index: usize,
    pub first_sentence: usize,
    pub last_sentence: usize,
    pub oversized: bool,
    pub postedited: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApeReport {
    pub chunks: usize,
    pub postedited: usize,
    pub fallbacks: usize,
    /// Fallbacks caused by a sentence-count mismatch.
    pub mismatches: usize,
    pub details: Vec<ChunkDetail>,
}

impl ApeReport {
    pub fn absorb(&mut self, other: &ApeReport) {
        self.chunks += other.chunks;
        self.postedited += other.postedited;
        self.fallbacks += other.fallbacks;
        self.mismatches += other.mismatches;
    }
}

/// Post-edits every chunk of `talk` in order and fills `ape` on each
/// sentence. The output always has the input's sentence count.
pub fn postedit_document(
    talk: &Talk,
    llm: &dyn LlmClient,
    cfg: &PipelineConfig,
    counter: &dyn TokenCounter,
) -> Result<(Talk, ApeReport)> {
    let chunks = chunk_document(talk, cfg.token_budget, counter)?;
    let guard = DegeneracyGuard::from_config(cfg);
    let params = DecodeParams::llm(cfg);
    let mut state = ApeWindowState::new(talk);
    let mut report = ApeReport::default();
    let mut out = talk.clone();
    for chunk in &chunks {
        let prompt = build_ape_prompt(chunk, &state);
        let raw = llm_complete(llm, &prompt, &params).map_err(|source| Error::ApeChunk {
            talk_id: talk.talk_id.clone(),
            chunk: chunk.index,
            source,
        })?;
        let mt_tokens = chunk.mts().map(|m| words(m).len()).sum();
        let verdict = match parse_ape_output(&raw, chunk.sentences.len(), state.payload.len()) {
            ApeParse::Mismatch { found, .. } => Err(format!(
                "count mismatch: {found} sentences for {}",
                chunk.sentences.len()
            )),
            ApeParse::Sentences(s) => match guard.check(&s.join(" "), mt_tokens) {
                Some(d) => Err(d.reason().to_string()),
                None => Ok(s),
            },
        };
        let (emitted, reason) = match verdict {
            Ok(s) => {
                report.postedited += 1;
                (s, None)
            }
            Err(reason) => {
                log::warn!(
                    "talk {} chunk {}: keeping MT ({reason})",
                    talk.talk_id,
                    chunk.index
                );
                report.fallbacks += 1;
                if reason.starts_with("count mismatch") {
                    report.mismatches += 1;
                }
                (chunk.mts().map(String::from).collect(), Some(reason))
            }
        };
        for (rec, text) in out.sentences[chunk.range()].iter_mut().zip(&emitted) {
            rec.ape = Some(text.clone());
        }
        state.advance(
            chunk
                .sentences
                .iter()
                .map(|s| s.src.clone())
                .zip(emitted),
            cfg.payload_sentences,
        );
        report.details.push(ChunkDetail {
            index: chunk.index,
            first_sentence: chunk.first,
            last_sentence: chunk.range().end - 1,
            oversized: chunk.oversized,
            postedited: reason.is_none(),
            reason,
        });
    }
    report.chunks = chunks.len();
    Ok((out, report))
}
