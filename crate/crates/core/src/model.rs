//! Domain types shared by every pipeline stage.
//!
//! All types are plain data: immutable after construction, `Send + Sync`,
//! and cheap to clone when a stage needs its own copy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentence separator used in every prompt and completion.
pub const DELIMITER: &str = "<SS>";

/// Delimiter with the surrounding spaces used when joining sentences.
pub const JOINER: &str = " <SS> ";

#[derive(Debug, Clone, PartialEq)]
pub struct AudioRef {
    pub path: String,
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRecord {
    pub index: usize,
    pub src: String,
    pub mt: Option<String>,
    pub ape: Option<String>,
    pub reference: Option<String>,
}

impl SentenceRecord {
    pub fn new(index: usize, src: impl Into<String>) -> Self {
        SentenceRecord {
            index,
            src: src.into(),
            mt: None,
            ape: None,
            reference: None,
        }
    }

    /// Final translation: the post-edit when present, else the MT output.
    pub fn translation(&self) -> Option<&str> {
        self.ape.as_deref().or(self.mt.as_deref())
    }
}

/// One recording / document.
#[derive(Debug, Clone, PartialEq)]
pub struct Talk {
    pub talk_id: String,
    pub audio: Option<AudioRef>,
    pub src_lang: String,
    pub tgt_lang: String,
    pub segments: Vec<Segment>,
    pub sentences: Vec<SentenceRecord>,
}

impl Talk {
    pub fn new(talk_id: impl Into<String>) -> Self {
        Talk {
            talk_id: talk_id.into(),
            audio: None,
            src_lang: "en".to_string(),
            tgt_lang: "de".to_string(),
            segments: Vec::new(),
            sentences: Vec::new(),
        }
    }

    pub fn duration_s(&self) -> Option<f64> {
        self.audio.as_ref().and_then(|a| a.duration_s)
    }

    /// Checks the in-memory invariants that loading also enforces.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Precondition(format!("talk {}: {msg}", self.talk_id)));
        if self.talk_id.trim().is_empty() {
            return fail("empty talk_id".into());
        }
        if let Some(d) = self.duration_s() {
            if !(d.is_finite() && d > 0.0) {
                return fail(format!("duration {d} must be positive"));
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for seg in &self.segments {
            if !(seg.start_s >= 0.0 && seg.start_s < seg.end_s && seg.end_s.is_finite()) {
                return fail(format!("segment [{}, {}] is not a valid span", seg.start_s, seg.end_s));
            }
            if let Some(d) = self.duration_s() {
                if seg.end_s > d {
                    return fail(format!("segment end {} exceeds duration {d}", seg.end_s));
                }
            }
            if seg.start_s < prev {
                return fail("segments are not ordered by start time".into());
            }
            prev = seg.start_s;
        }
        for (i, s) in self.sentences.iter().enumerate() {
            if s.index != i {
                return fail(format!("sentence at position {i} has index {}", s.index));
            }
            if let Some((field, msg)) = sentence_violation(s) {
                return fail(format!("sentence {i} field `{field}`: {msg}"));
            }
        }
        Ok(())
    }
}

/// First violated sentence invariant, as `(field, message)`.
pub(crate) fn sentence_violation(s: &SentenceRecord) -> Option<(&'static str, String)> {
    if s.src.trim().is_empty() {
        return Some(("src", "must be non-empty".into()));
    }
    let fields = [
        ("src", Some(&s.src)),
        ("mt", s.mt.as_ref()),
        ("ape", s.ape.as_ref()),
        ("ref", s.reference.as_ref()),
    ];
    for (name, value) in fields {
        if let Some(v) = value {
            if v.contains(DELIMITER) {
                return Some((name, format!("contains the reserved delimiter {DELIMITER}")));
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    pub score: f64,
}

impl Hypothesis {
    pub fn new(text: impl Into<String>, score: f64) -> Self {
        Hypothesis {
            text: text.into(),
            score,
        }
    }
}

/// Ranked ASR candidates for one utterance. List order is rank order and is
/// never permuted after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNBest")]
pub struct NBestList {
    pub utterance_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub talk_id: Option<String>,
    hypotheses: Vec<Hypothesis>,
    #[serde(rename = "ref", skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNBest {
    utterance_id: String,
    #[serde(default)]
    talk_id: Option<String>,
    hypotheses: Vec<Hypothesis>,
    #[serde(rename = "ref", default)]
    reference: Option<String>,
}

impl TryFrom<RawNBest> for NBestList {
    type Error = String;

    fn try_from(raw: RawNBest) -> std::result::Result<Self, String> {
        let mut list = NBestList::new(raw.utterance_id, raw.hypotheses).map_err(|e| e.to_string())?;
        list.talk_id = raw.talk_id;
        list.reference = raw.reference;
        Ok(list)
    }
}

impl NBestList {
    pub fn new(utterance_id: impl Into<String>, hypotheses: Vec<Hypothesis>) -> Result<Self> {
        let utterance_id = utterance_id.into();
        if hypotheses.is_empty() {
            return Err(Error::Precondition(format!(
                "N-best list for {utterance_id} is empty"
            )));
        }
        for pair in hypotheses.windows(2) {
            if !(pair[0].score >= pair[1].score) {
                return Err(Error::Precondition(format!(
                    "N-best list for {utterance_id}: scores must be non-increasing ({} then {})",
                    pair[0].score, pair[1].score
                )));
            }
        }
        if let Some(h) = hypotheses.iter().find(|h| !h.score.is_finite()) {
            return Err(Error::Precondition(format!(
                "N-best list for {utterance_id}: non-finite score {}",
                h.score
            )));
        }
        Ok(NBestList {
            utterance_id,
            talk_id: None,
            hypotheses,
            reference: None,
        })
    }

    pub fn with_talk(mut self, talk_id: impl Into<String>) -> Self {
        self.talk_id = Some(talk_id.into());
        self
    }

    pub fn with_reference(mut self, reference: impl Into<String>) -> Self {
        self.reference = Some(reference.into());
        self
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn best(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The first `k` candidates in rank order.
    pub fn top(&self, k: usize) -> &[Hypothesis] {
        &self.hypotheses[..k.min(self.hypotheses.len())]
    }
}

/// Whitespace tokens, the unit for stitching, guards and word metrics.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}
