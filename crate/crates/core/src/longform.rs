//! Chunked long-form decoding.
//!
//! The recording is cut into fixed-length windows that overlap their
//! neighbours, each window is transcribed on its own, and adjacent
//! transcripts are joined where their overlap regions agree: the longest
//! common run of tokens between the tail of the left text and the head of
//! the right text is kept once.

use serde::{Deserialize, Serialize};

use crate::backends::{asr_transcribe, AsrClient, AudioSpan};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::model::{words, Talk};
use crate::parallel::parallel_map;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub spans: Vec<(f64, f64)>,
}

/// Windows of `chunk_s` advancing by `chunk_s - overlap_s`; the last window
/// is clamped to end at `duration_s`.
pub fn plan_chunks(duration_s: f64, chunk_s: f64, overlap_s: f64) -> Result<ChunkPlan> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::Precondition(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    if !(overlap_s > 0.0 && overlap_s < chunk_s && chunk_s.is_finite()) {
        return Err(Error::Precondition(format!(
            "need 0 < overlap_s < chunk_s, got overlap_s={overlap_s} chunk_s={chunk_s}"
        )));
    }
    let stride = chunk_s - overlap_s;
    let mut spans = Vec::new();
    for i in 0.. {
        let start = i as f64 * stride;
        let end = start + chunk_s;
        if end >= duration_s {
            spans.push((start, duration_s));
            break;
        }
        spans.push((start, end));
    }
    Ok(ChunkPlan { spans })
}

/// Longest shared run between the two overlap windows, in absolute token
/// positions of `left` and `right`. `len == 0` means no shared token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StitchMatch {
    pub left_start: usize,
    pub right_start: usize,
    pub len: usize,
}

impl StitchMatch {
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Keep `left[..cut_left]` followed by `right[cut_right..]`.
    pub fn cuts(&self) -> (usize, usize) {
        (self.left_start + self.len, self.right_start + self.len)
    }
}

/// Searches the last `window` tokens of `left` and the first `window` tokens
/// of `right` for their longest common contiguous run, comparing
/// case-folded tokens. Ties go to the run ending latest in `left`, then to
/// the one starting earliest in `right`.
pub fn stitch_pair<S: AsRef<str>>(left: &[S], right: &[S], window: usize) -> StitchMatch {
    let lw = left.len().min(window);
    let rw = right.len().min(window);
    let l0 = left.len() - lw;
    let lf: Vec<String> = left[l0..].iter().map(|t| t.as_ref().to_lowercase()).collect();
    let rf: Vec<String> = right[..rw].iter().map(|t| t.as_ref().to_lowercase()).collect();

    // run[j] = length of the common suffix ending at lf[i], rf[j]
    let mut prev = vec![0usize; rw + 1];
    let mut cur = vec![0usize; rw + 1];
    let mut best = StitchMatch {
        left_start: left.len(),
        right_start: 0,
        len: 0,
    };
    let mut best_end = 0usize;
    for i in 0..lw {
        for j in 0..rw {
            cur[j + 1] = if lf[i] == rf[j] { prev[j] + 1 } else { 0 };
            let len = cur[j + 1];
            if len > 0 && (len > best.len || (len == best.len && i + 1 > best_end)) {
                best_end = i + 1;
                best = StitchMatch {
                    left_start: l0 + i + 1 - len,
                    right_start: j + 1 - len,
                    len,
                };
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Fallback cuts when the windows share nothing: keep the first half of the
/// left window and the second half of the right window.
pub fn midpoint_cuts(left_len: usize, right_len: usize, window: usize) -> (usize, usize) {
    let lw = left_len.min(window);
    let rw = right_len.min(window);
    (left_len - lw + lw / 2, rw / 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrace {
    pub talk_id: String,
    pub joint: usize,
    pub left_window: Vec<String>,
    pub right_window: Vec<String>,
    pub shared: Vec<String>,
    pub cut_left: usize,
    pub cut_right: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkOutput {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongformTranscript {
    pub talk_id: String,
    pub text: String,
    pub chunks: Vec<ChunkOutput>,
    pub joints: Vec<JointTrace>,
}

/// Left-to-right fold of chunk texts. Surface forms in a shared run come
/// from the left chunk.
pub fn stitch_texts<S: AsRef<str>>(talk_id: &str, chunks: &[S], window: usize) -> (String, Vec<JointTrace>) {
    let mut merged: Vec<String> = Vec::new();
    let mut joints = Vec::new();
    for chunk in chunks {
        let right: Vec<String> = words(chunk.as_ref()).into_iter().map(String::from).collect();
        if right.is_empty() {
            continue;
        }
        if merged.is_empty() {
            merged = right;
            continue;
        }
        let m = stitch_pair(&merged, &right, window);
        let fallback = m.is_empty();
        let (cut_left, cut_right) = if fallback {
            midpoint_cuts(merged.len(), right.len(), window)
        } else {
            m.cuts()
        };
        let lw = merged.len().min(window);
        joints.push(JointTrace {
            talk_id: talk_id.to_string(),
            joint: joints.len(),
            left_window: merged[merged.len() - lw..].to_vec(),
            right_window: right[..right.len().min(window)].to_vec(),
            shared: merged[m.left_start..m.left_start + m.len].to_vec(),
            cut_left,
            cut_right,
            fallback,
        });
        merged.truncate(cut_left);
        merged.extend(right.into_iter().skip(cut_right));
    }
    (merged.join(" "), joints)
}

/// Concatenation without overlap removal, the baseline stitching beats.
pub fn naive_concat<S: AsRef<str>>(chunks: &[S]) -> String {
    chunks
        .iter()
        .flat_map(|c| words(c.as_ref()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Transcribes a whole talk chunk by chunk and stitches the results.
pub fn transcribe_longform(
    talk: &Talk,
    asr: &dyn AsrClient,
    cfg: &PipelineConfig,
) -> Result<LongformTranscript> {
    let audio = talk.audio.as_ref().ok_or_else(|| {
        Error::Precondition(format!("talk {} has no audio reference", talk.talk_id))
    })?;
    let duration = audio.duration_s.ok_or_else(|| {
        Error::Precondition(format!("talk {} has no audio duration", talk.talk_id))
    })?;
    let plan = plan_chunks(duration, cfg.chunk_s, cfg.overlap_s)?;
    let results = parallel_map(&plan.spans, cfg.parallelism, |i, &(start_s, end_s)| {
        let span = AudioSpan {
            audio: audio.path.clone(),
            start_s,
            end_s,
        };
        let id = format!("{}_chunk{i:04}", talk.talk_id);
        asr_transcribe(asr, &id, &span, 1)
            .map(|nb| ChunkOutput {
                index: i,
                start_s,
                end_s,
                text: nb.best().text.clone(),
            })
            .map_err(|source| Error::Chunk {
                index: i,
                start_s,
                end_s,
                source,
            })
    });
    let chunks = results.into_iter().collect::<Result<Vec<_>>>()?;
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let (text, joints) = stitch_texts(&talk.talk_id, &texts, cfg.stitch_window);
    Ok(LongformTranscript {
        talk_id: talk.talk_id.clone(),
        text,
        chunks,
        joints,
    })
}
