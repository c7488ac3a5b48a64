//! Fine-tuning data: N-best refinement records and cross-fitted
//! post-editing records.
//!
//! Post-editing inputs must carry realistic errors, so each half of the
//! corpus is decoded by models trained on the other half.

use std::collections::HashMap;
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::backends::mock::{NoiseModel, OracleAsr, TableMt};
use crate::backends::http::{HttpAsr, HttpMt};
use crate::backends::{asr_transcribe, BackendKind, BackendProfile, mt_translate, AsrClient, AudioSpan, MtClient};
use crate::config::PipelineConfig;
use crate::docape::{build_ape_prompt, chunk_document, ApeWindowState, TokenCounter};
use crate::error::{Error, Result};
use crate::model::{NBestList, Talk, JOINER};
use crate::parallel::parallel_map;
use crate::refine::build_asr_prompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Half {
    A,
    B,
}

impl Half {
    pub fn other(self) -> Half {
        match self {
            Half::A => Half::B,
            Half::B => Half::A,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftTask {
    AsrRefine,
    DocApe,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SftMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub talk_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utterance_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_sentence: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_sentence: Option<usize>,
    /// Half the talk belongs to.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half: Option<Half>,
    /// Half the hypothesis-producing models were trained on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_half: Option<Half>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub task: SftTask,
    pub prompt: String,
    pub completion: String,
    pub meta: SftMeta,
}

/// Alternating assignment over talks sorted by id.
pub fn split_halves(talks: &[Talk]) -> Result<(Vec<Talk>, Vec<Talk>)> {
    if talks.len() < 2 {
        return Err(Error::Precondition(format!(
            "splitting into halves needs at least 2 talks, got {}",
            talks.len()
        )));
    }
    let mut sorted: Vec<&Talk> = talks.iter().collect();
    sorted.sort_by(|a, b| a.talk_id.cmp(&b.talk_id));
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, t) in sorted.into_iter().enumerate() {
        if i % 2 == 0 { &mut a } else { &mut b }.push(t.clone());
    }
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsrSft {
    pub records: Vec<SftRecord>,
    /// Utterances without a reference.
    pub skipped: usize,
}

/// One record per utterance with a reference. `held_out` states that the
/// ASR model never saw these utterances in training; otherwise a warning is
/// logged because the N-best lists will be cleaner than at test time.
pub fn make_asr_sft(lists: &[NBestList], k: usize, held_out: bool) -> Result<AsrSft> {
    if !held_out && !lists.is_empty() {
        warn!(
            "N-best lists decoded on the ASR model's own training data understate test-time errors; \
             prefer held-out or cross-fitted decoding"
        );
    }
    let mut records = Vec::new();
    let mut skipped = 0;
    for nb in lists {
        let Some(reference) = nb.reference.as_deref().filter(|r| !r.trim().is_empty()) else {
            skipped += 1;
            continue;
        };
        records.push(SftRecord {
            task: SftTask::AsrRefine,
            prompt: build_asr_prompt(nb, k)?,
            completion: reference.to_string(),
            meta: SftMeta {
                talk_id: nb.talk_id.clone(),
                utterance_id: Some(nb.utterance_id.clone()),
                ..Default::default()
            },
        });
    }
    if skipped > 0 {
        warn!("skipped {skipped} utterances without a reference");
    }
    Ok(AsrSft { records, skipped })
}

/// A talk whose `src`/`mt` come from models trained on `model_half`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitTalk {
    pub talk: Talk,
    pub half: Option<Half>,
    pub model_half: Option<Half>,
}

impl CrossFitTalk {
    pub fn plain(talk: Talk) -> Self {
        CrossFitTalk {
            talk,
            half: None,
            model_half: None,
        }
    }
}

/// One record per chunk: empty-payload prompt, references as completion.
pub fn make_ape_sft(
    triples: &[CrossFitTalk],
    budget: usize,
    counter: &dyn TokenCounter,
) -> Result<Vec<SftRecord>> {
    let mut sorted: Vec<&CrossFitTalk> = triples.iter().collect();
    sorted.sort_by(|a, b| a.talk.talk_id.cmp(&b.talk.talk_id));
    let mut records = Vec::new();
    for ct in sorted {
        let talk = &ct.talk;
        for s in &talk.sentences {
            let missing = if s.mt.is_none() {
                Some("mt")
            } else if s.reference.is_none() {
                Some("ref")
            } else {
                None
            };
            if let Some(field) = missing {
                return Err(Error::Precondition(format!(
                    "talk {} sentence {}: missing {field}",
                    talk.talk_id, s.index
                )));
            }
        }
        let state = ApeWindowState::new(talk);
        for chunk in chunk_document(talk, budget, counter)? {
            let refs: Vec<&str> = chunk
                .sentences
                .iter()
                .filter_map(|s| s.reference.as_deref())
                .collect();
            records.push(SftRecord {
                task: SftTask::DocApe,
                prompt: build_ape_prompt(&chunk, &state),
                completion: refs.join(JOINER),
                meta: SftMeta {
                    talk_id: Some(talk.talk_id.clone()),
                    chunk_index: Some(chunk.index),
                    first_sentence: Some(chunk.first),
                    last_sentence: Some(chunk.range().end - 1),
                    half: ct.half,
                    model_half: ct.model_half,
                    ..Default::default()
                },
            });
        }
    }
    Ok(records)
}

/// ASR and MT models trained on one half.
#[derive(Clone)]
pub struct HalfModels {
    pub trained_on: Half,
    pub asr: Arc<dyn AsrClient>,
    pub mt: Arc<dyn MtClient>,
}

/// Decodes each half with the models trained on the other half, using the
/// gold segments as utterance boundaries. Sentence `i` pairs with segment `i`.
pub fn cross_infer(
    halves: (&[Talk], &[Talk]),
    models: &[HalfModels],
    parallelism: usize,
) -> Result<Vec<CrossFitTalk>> {
    let model_for = |trained_on: Half| {
        models
            .iter()
            .find(|m| m.trained_on == trained_on)
            .ok_or_else(|| Error::Config(format!("no models trained on half {trained_on:?}")))
    };
    let jobs: Vec<(&Talk, Half)> = halves
        .0
        .iter()
        .map(|t| (t, Half::A))
        .chain(halves.1.iter().map(|t| (t, Half::B)))
        .collect();
    let results = parallel_map(&jobs, parallelism, |_, &(talk, half)| {
        let m = model_for(half.other())?;
        infer_talk(talk, m.asr.as_ref(), m.mt.as_ref())
            .map(|t| CrossFitTalk {
                talk: t,
                half: Some(half),
                model_half: Some(m.trained_on),
            })
            .map_err(|e| e.in_talk(&talk.talk_id))
    });
    let mut out = results.into_iter().collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.talk.talk_id.cmp(&b.talk.talk_id));
    Ok(out)
}

fn infer_talk(talk: &Talk, asr: &dyn AsrClient, mt: &dyn MtClient) -> Result<Talk> {
    let audio = talk
        .audio
        .as_ref()
        .ok_or_else(|| Error::Precondition("talk has no audio reference".into()))?;
    if talk.segments.len() != talk.sentences.len() {
        return Err(Error::CountMismatch(format!(
            "{} gold segments for {} reference sentences",
            talk.segments.len(),
            talk.sentences.len()
        )));
    }
    let mut srcs = Vec::with_capacity(talk.segments.len());
    for (i, seg) in talk.segments.iter().enumerate() {
        let span = AudioSpan {
            audio: audio.path.clone(),
            start_s: seg.start_s,
            end_s: seg.end_s,
        };
        let nb = asr_transcribe(asr, &format!("{}_{i:04}", talk.talk_id), &span, 1)?;
        let text = nb.best().text.trim().to_string();
        if text.is_empty() {
            return Err(Error::Precondition(format!("empty ASR output for segment {i}")));
        }
        srcs.push(text);
    }
    let mts = if srcs.is_empty() {
        Vec::new()
    } else {
        mt_translate(mt, &srcs)?
    };
    let mut out = talk.clone();
    for ((s, src), m) in out.sentences.iter_mut().zip(srcs).zip(mts) {
        s.src = src;
        s.mt = Some(m);
        s.ape = None;
    }
    out.validate()?;
    Ok(out)
}

/// Desk stand-in for models trained on each half: seeded word substitution
/// at `rate` on the transcript and on the reference translation. The model
/// labelled as trained on one half is built from, and only ever applied to,
/// the other half.
pub fn noise_oracle_models(halves: (&[Talk], &[Talk]), rate: f64, seed: u64) -> Result<Vec<HalfModels>> {
    let build = |targets: &[Talk], trained_on: Half| -> Result<HalfModels> {
        let salt = match trained_on {
            Half::A => 0,
            Half::B => 1,
        };
        let asr = OracleAsr::from_talks(targets, 5).with_noise(NoiseModel::new(rate, seed.wrapping_mul(4).wrapping_add(salt)));
        let mut table = HashMap::new();
        for talk in targets {
            let Some(audio) = &talk.audio else { continue };
            for (seg, sent) in talk.segments.iter().zip(&talk.sentences) {
                let span = AudioSpan {
                    audio: audio.path.clone(),
                    start_s: seg.start_s,
                    end_s: seg.end_s,
                };
                let noisy = asr.transcribe(&span, 1)?.remove(0).text;
                if let Some(r) = &sent.reference {
                    table.insert(noisy, r.clone());
                }
            }
        }
        let mt = TableMt::new(table).with_noise(NoiseModel::new(rate, seed.wrapping_mul(4).wrapping_add(2 + salt)));
        Ok(HalfModels {
            trained_on,
            asr: Arc::new(asr),
            mt: Arc::new(mt),
        })
    };
    Ok(vec![build(halves.1, Half::A)?, build(halves.0, Half::B)?])
}

/// Cross-fit models served over HTTP, one ASR and one MT endpoint per
/// training half.
pub fn http_half_models(cfg: &PipelineConfig) -> Result<Vec<HalfModels>> {
    let url = |name: &str, v: &Option<String>| {
        v.clone()
            .ok_or_else(|| Error::Config(format!("cross-fit generation needs {name}")))
    };
    let build = |trained_on: Half, asr_url: String, mt_url: String| -> Result<HalfModels> {
        let asr = BackendProfile::from_config(BackendKind::Asr, &asr_url, cfg);
        let mt = BackendProfile::from_config(BackendKind::Mt, &mt_url, cfg);
        asr.validate()?;
        mt.validate()?;
        Ok(HalfModels {
            trained_on,
            asr: Arc::new(HttpAsr::new(asr)),
            mt: Arc::new(HttpMt::new(mt)),
        })
    };
    Ok(vec![
        build(
            Half::A,
            url("half_a_asr_url", &cfg.half_a_asr_url)?,
            url("half_a_mt_url", &cfg.half_a_mt_url)?,
        )?,
        build(
            Half::B,
            url("half_b_asr_url", &cfg.half_b_asr_url)?,
            url("half_b_mt_url", &cfg.half_b_mt_url)?,
        )?,
    ])
}
