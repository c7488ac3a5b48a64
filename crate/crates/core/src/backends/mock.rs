//! Deterministic mock backends. Every mock is a pure function of its input
//! and (where it has one) its seed.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{AsrClient, AudioSpan, BackendError, DecodeParams, LlmClient, MtClient, Scorer};
use crate::docape::parse_ape_prompt;
use crate::model::{words, Hypothesis, Talk, JOINER};
use crate::refine::parse_asr_prompt;

/// Replacement words for injected substitutions.
const FILLER: &[&str] = &[
    "actually", "basically", "banana", "river", "yellow", "quantum", "seven", "table", "window",
    "purple", "engine", "garden", "silver", "monday", "pencil", "ocean", "rocket", "candle",
    "forest", "marble", "thunder", "violin", "copper", "meadow", "lantern", "harbor", "velvet",
    "glacier", "saddle", "orbit", "pepper", "falcon",
];

/// RNG derived from a seed and the input text, so outputs depend on nothing else.
pub fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Seeded word-substitution noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub rate: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(rate: f64, seed: u64) -> Self {
        NoiseModel { rate, seed }
    }

    /// Replaces each token with probability `rate` by a different word.
    /// Token count is preserved.
    pub fn corrupt(&self, text: &str) -> String {
        if self.rate <= 0.0 {
            return text.to_string();
        }
        let mut rng = keyed_rng(self.seed, text);
        words(text)
            .into_iter()
            .map(|w| {
                if rng.gen::<f64>() < self.rate {
                    loop {
                        let sub = FILLER[rng.gen_range(0..FILLER.len())];
                        if !sub.eq_ignore_ascii_case(w) {
                            break sub.to_string();
                        }
                    }
                } else {
                    w.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn span_key(audio: &str, start_s: f64, end_s: f64) -> String {
    format!("{audio}|{start_s:.3}|{end_s:.3}")
}

/// Returns configured N-best lists keyed on `(audio, start_s, end_s)`.
#[derive(Debug, Clone, Default)]
pub struct TableAsr {
    beam: usize,
    table: HashMap<String, Vec<Hypothesis>>,
}

impl TableAsr {
    pub fn new(beam: usize) -> Self {
        TableAsr {
            beam,
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, span: &AudioSpan, hyps: Vec<Hypothesis>) {
        self.table
            .insert(span_key(&span.audio, span.start_s, span.end_s), hyps);
    }
}

impl AsrClient for TableAsr {
    fn beam(&self) -> usize {
        self.beam
    }

    fn transcribe(&self, span: &AudioSpan, n_best: usize) -> Result<Vec<Hypothesis>, BackendError> {
        let hyps = self
            .table
            .get(&span_key(&span.audio, span.start_s, span.end_s))
            .ok_or_else(|| {
                BackendError::Protocol(format!(
                    "no mock transcript for {} [{}, {}]",
                    span.audio, span.start_s, span.end_s
                ))
            })?;
        Ok(hyps.iter().take(n_best).cloned().collect())
    }
}

/// Time-stamped word stream per audio file; a span returns the words whose
/// timestamp falls inside `[start_s, end_s)`.
#[derive(Debug, Clone, Default)]
pub struct OracleAsr {
    beam: usize,
    timelines: HashMap<String, Vec<(f64, String)>>,
    noise: Option<NoiseModel>,
}

impl OracleAsr {
    pub fn new(beam: usize) -> Self {
        OracleAsr {
            beam,
            timelines: HashMap::new(),
            noise: None,
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn add_timeline(&mut self, audio: impl Into<String>, words: Vec<(f64, String)>) {
        self.timelines.insert(audio.into(), words);
    }

    /// Places each reference transcript sentence on the talk's timeline:
    /// sentence `i` inside segment `i` when the two align one to one,
    /// otherwise spread evenly over the whole recording.
    pub fn from_talks(talks: &[Talk], beam: usize) -> Self {
        let mut asr = OracleAsr::new(beam);
        for talk in talks {
            let Some(audio) = &talk.audio else { continue };
            let mut timeline = Vec::new();
            if !talk.segments.is_empty() && talk.segments.len() == talk.sentences.len() {
                for (seg, sent) in talk.segments.iter().zip(&talk.sentences) {
                    spread(&mut timeline, &sent.src, seg.start_s, seg.end_s);
                }
            } else if let Some(d) = audio.duration_s {
                let all: Vec<&str> = talk.sentences.iter().map(|s| s.src.as_str()).collect();
                spread(&mut timeline, &all.join(" "), 0.0, d);
            }
            asr.add_timeline(audio.path.clone(), timeline);
        }
        asr
    }

    pub fn truth(&self, span: &AudioSpan) -> Option<String> {
        let line = self.timelines.get(&span.audio)?;
        let picked: Vec<&str> = line
            .iter()
            .filter(|(t, _)| *t >= span.start_s && *t < span.end_s)
            .map(|(_, w)| w.as_str())
            .collect();
        Some(picked.join(" "))
    }
}

fn spread(timeline: &mut Vec<(f64, String)>, text: &str, start: f64, end: f64) {
    let ws = words(text);
    let step = (end - start) / ws.len().max(1) as f64;
    for (j, w) in ws.into_iter().enumerate() {
        timeline.push((start + (j as f64 + 0.5) * step, w.to_string()));
    }
}

/// Rank-1 is `best`; lower ranks drop one word each, with falling scores.
fn nbest_variants(best: &str, n_best: usize) -> Vec<Hypothesis> {
    let ws = words(best);
    (0..n_best)
        .map(|i| {
            let text = if i == 0 || ws.len() < 2 {
                best.to_string()
            } else {
                let drop = (i - 1) % ws.len();
                ws.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != drop)
                    .map(|(_, w)| *w)
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            Hypothesis::new(text, -(i as f64) * 0.5)
        })
        .collect()
}

impl AsrClient for OracleAsr {
    fn beam(&self) -> usize {
        self.beam
    }

    fn transcribe(&self, span: &AudioSpan, n_best: usize) -> Result<Vec<Hypothesis>, BackendError> {
        let truth = self
            .truth(span)
            .ok_or_else(|| BackendError::Protocol(format!("unknown audio {}", span.audio)))?;
        let best = match &self.noise {
            Some(n) => n.corrupt(&truth),
            None => truth,
        };
        Ok(nbest_variants(&best, n_best))
    }
}

pub struct IdentityMt;

impl MtClient for IdentityMt {
    fn translate(&self, sentences: &[String]) -> Result<Vec<String>, BackendError> {
        Ok(sentences.to_vec())
    }
}

/// Word-by-word dictionary translation; unknown words pass through.
#[derive(Debug, Clone, Default)]
pub struct DictionaryMt {
    pub words: HashMap<String, String>,
}

impl DictionaryMt {
    pub fn new<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        DictionaryMt {
            words: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

impl MtClient for DictionaryMt {
    fn translate(&self, sentences: &[String]) -> Result<Vec<String>, BackendError> {
        Ok(sentences
            .iter()
            .map(|s| {
                words(s)
                    .into_iter()
                    .map(|w| self.words.get(w).map(String::as_str).unwrap_or(w))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect())
    }
}

/// Sentence lookup table; unknown sentences pass through unchanged.
#[derive(Debug, Clone, Default)]
pub struct TableMt {
    pub table: HashMap<String, String>,
    pub noise: Option<NoiseModel>,
}

impl TableMt {
    pub fn new(table: HashMap<String, String>) -> Self {
        TableMt { table, noise: None }
    }

    /// Maps each reference transcript sentence to its reference translation.
    pub fn from_talks(talks: &[Talk]) -> Self {
        let table = talks
            .iter()
            .flat_map(|t| &t.sentences)
            .filter_map(|s| s.reference.as_ref().map(|r| (s.src.clone(), r.clone())))
            .collect();
        TableMt::new(table)
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = Some(noise);
        self
    }
}

impl MtClient for TableMt {
    fn translate(&self, sentences: &[String]) -> Result<Vec<String>, BackendError> {
        Ok(sentences
            .iter()
            .map(|s| {
                let out = self.table.get(s).cloned().unwrap_or_else(|| s.clone());
                match &self.noise {
                    Some(n) => n.corrupt(&out),
                    None => out,
                }
            })
            .collect())
    }
}

fn unrecognised() -> BackendError {
    BackendError::Protocol("mock LLM does not recognise the prompt".into())
}

/// Answers refinement prompts with the rank-1 hypothesis and post-editing
/// prompts with the MT sentences of the chunk, i.e. changes nothing.
pub struct IdentityLlm;

impl LlmClient for IdentityLlm {
    fn complete(&self, prompt: &str, _: &DecodeParams) -> Result<String, BackendError> {
        if let Some(hyps) = parse_asr_prompt(prompt) {
            return Ok(hyps[0].clone());
        }
        if let Some(p) = parse_ape_prompt(prompt) {
            return Ok(p.chunk_targets().join(JOINER));
        }
        Err(unrecognised())
    }
}

/// Reference-echoing LLM. Refinement prompts map the rank-1 hypothesis
/// through `transcripts`; post-editing prompts map each chunk source
/// sentence through `translations`. Misses fall back to identity.
#[derive(Debug, Clone, Default)]
pub struct OracleLlm {
    pub transcripts: HashMap<String, String>,
    pub translations: HashMap<String, String>,
}

impl OracleLlm {
    pub fn from_talks(talks: &[Talk]) -> Self {
        let translations = talks
            .iter()
            .flat_map(|t| &t.sentences)
            .filter_map(|s| s.reference.as_ref().map(|r| (s.src.clone(), r.clone())))
            .collect();
        OracleLlm {
            transcripts: HashMap::new(),
            translations,
        }
    }
}

impl LlmClient for OracleLlm {
    fn complete(&self, prompt: &str, _: &DecodeParams) -> Result<String, BackendError> {
        if let Some(hyps) = parse_asr_prompt(prompt) {
            let best = &hyps[0];
            return Ok(self.transcripts.get(best).unwrap_or(best).clone());
        }
        if let Some(p) = parse_ape_prompt(prompt) {
            let out: Vec<&str> = p
                .chunk_sources()
                .iter()
                .zip(p.chunk_targets())
                .map(|(src, mt)| self.translations.get(src).map(String::as_str).unwrap_or(mt))
                .collect();
            return Ok(out.join(JOINER));
        }
        Err(unrecognised())
    }
}

/// Prompt → completion table with an optional default.
#[derive(Debug, Clone, Default)]
pub struct ScriptedLlm {
    pub table: HashMap<String, String>,
    pub default: Option<String>,
}

impl ScriptedLlm {
    pub fn constant(text: impl Into<String>) -> Self {
        ScriptedLlm {
            table: HashMap::new(),
            default: Some(text.into()),
        }
    }
}

impl LlmClient for ScriptedLlm {
    fn complete(&self, prompt: &str, _: &DecodeParams) -> Result<String, BackendError> {
        self.table
            .get(prompt)
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(unrecognised)
    }
}

/// Misbehaving LLMs for exercising the fallback paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adversary {
    /// Emits a four-token phrase ten times.
    Repetition,
    /// Post-edits correctly but drops the last sentence.
    WrongCount,
    /// Post-edits correctly plus one extra sentence.
    ExtraSentence,
    Empty,
    /// Only delimiters.
    Delimiters,
    /// Random words and delimiters, seeded by the prompt.
    Garbage,
    /// Echoes the whole prompt before an identity answer.
    EchoPrompt,
    /// Output far longer than the input.
    Verbose,
}

pub const ADVERSARIES: [Adversary; 8] = [
    Adversary::Repetition,
    Adversary::WrongCount,
    Adversary::ExtraSentence,
    Adversary::Empty,
    Adversary::Delimiters,
    Adversary::Garbage,
    Adversary::EchoPrompt,
    Adversary::Verbose,
];

pub struct AdversarialLlm {
    pub mode: Adversary,
    pub seed: u64,
}

impl AdversarialLlm {
    pub fn new(mode: Adversary, seed: u64) -> Self {
        AdversarialLlm { mode, seed }
    }
}

impl LlmClient for AdversarialLlm {
    fn complete(&self, prompt: &str, params: &DecodeParams) -> Result<String, BackendError> {
        let identity = IdentityLlm.complete(prompt, params);
        Ok(match self.mode {
            Adversary::Repetition => ["and so on then"; 10].join(" "),
            Adversary::WrongCount => {
                let id = identity?;
                let mut parts: Vec<&str> = id.split(JOINER).collect();
                parts.pop();
                parts.join(JOINER)
            }
            Adversary::ExtraSentence => format!("{}{JOINER}Noch ein Satz.", identity?),
            Adversary::Empty => String::new(),
            Adversary::Delimiters => "<SS> <SS> <SS>".to_string(),
            Adversary::Garbage => {
                let mut rng = keyed_rng(self.seed, prompt);
                let n = rng.gen_range(0..60);
                (0..n)
                    .map(|_| {
                        if rng.gen_bool(0.15) {
                            "<SS>"
                        } else {
                            FILLER[rng.gen_range(0..FILLER.len())]
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            }
            Adversary::EchoPrompt => format!("{prompt}{}", identity?),
            Adversary::Verbose => {
                let id = identity?;
                let n = words(&id).len().max(1);
                vec!["sehr"; n * 3 + 4].join(" ")
            }
        })
    }
}

/// Records every call before delegating.
pub struct RecordingLlm<L> {
    pub inner: L,
    pub calls: Mutex<Vec<(String, DecodeParams)>>,
}

impl<L> RecordingLlm<L> {
    pub fn new(inner: L) -> Self {
        RecordingLlm {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<(String, DecodeParams)> {
        self.calls.lock().unwrap().clone()
    }
}

impl<L: LlmClient> LlmClient for RecordingLlm<L> {
    fn complete(&self, prompt: &str, params: &DecodeParams) -> Result<String, BackendError> {
        self.calls
            .lock()
            .unwrap()
            .push((prompt.to_string(), *params));
        self.inner.complete(prompt, params)
    }
}

/// Fails every call with a transport error when `fail_on` matches the prompt.
pub struct FailingLlm<L> {
    pub inner: L,
    pub fail_on: Box<dyn Fn(&str) -> bool + Send + Sync>,
}

impl<L> FailingLlm<L> {
    /// Fails prompts containing `needle`.
    pub fn new(inner: L, needle: &str) -> Self {
        let needle = needle.to_string();
        FailingLlm {
            inner,
            fail_on: Box::new(move |p| p.contains(&needle)),
        }
    }
}

impl<L: LlmClient> LlmClient for FailingLlm<L> {
    fn complete(&self, prompt: &str, params: &DecodeParams) -> Result<String, BackendError> {
        if (self.fail_on)(prompt) {
            Err(BackendError::Transport {
                attempts: 1,
                message: "injected failure".into(),
            })
        } else {
            self.inner.complete(prompt, params)
        }
    }
}

/// Stand-in for a neural metric: corpus chrF2 scaled to [0, 1].
pub struct ChrfScorer;

impl Scorer for ChrfScorer {
    fn score(&self, _: &[String], hyps: &[String], refs: &[String]) -> Result<f64, BackendError> {
        crate::metrics::chrf2(hyps, refs)
            .map(|s| s / 100.0)
            .map_err(|e| BackendError::Protocol(e.to_string()))
    }
}
