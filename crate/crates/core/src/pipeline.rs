//! End-to-end orchestration. Every stage reads and writes files in one
//! output directory, so running the stages one at a time through the CLI
//! produces the same bytes as [`run_pipeline`].
//!
//! Stage order: ingest, transcribe (segmented or long-form), refine,
//! segment, translate, post-edit, and evaluation when the corpus carries
//! references.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{asr_transcribe, mt_translate, AsrClient, AudioSpan, Backends, LlmClient, MtClient};
use crate::config::PipelineConfig;
use crate::corpus::{corpus_to_string, load_corpus, read_jsonl, write_jsonl};
use crate::docape::{postedit_document, ApeReport, WordPunctCounter};
use crate::error::{Error, Result};
use crate::longform::{transcribe_longform, JointTrace};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{Hypothesis, NBestList, SentenceRecord, Talk, DELIMITER};
use crate::parallel::parallel_map;
use crate::refine::{batch_refine, BatchStatus, BatchSummary, RefinementResult};
use crate::sentseg::{restore_punctuation, split_sentences, SegmentationRules};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const ASR_FILE: &str = "asr.jsonl";
pub const STITCH_FILE: &str = "stitch.jsonl";
pub const REFINED_FILE: &str = "refined.jsonl";
pub const SEGMENTED_FILE: &str = "segmented.jsonl";
pub const TRANSLATED_FILE: &str = "translated.jsonl";
pub const APE_FILE: &str = "ape.jsonl";
pub const APE_REPORT_FILE: &str = "ape_report.json";
pub const EVAL_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Reason recorded for utterances of talks routed around the LLM.
pub const SKIPPED: &str = "skipped";

#[derive(Debug, Clone, Default)]
pub struct Transcription {
    pub lists: Vec<NBestList>,
    pub joints: Vec<JointTrace>,
}

enum AsrJob<'a> {
    Segment { talk: &'a Talk, index: usize },
    LongForm { talk: &'a Talk },
}

/// N-best lists for every talk, in corpus order. Talks are decoded per gold
/// segment (`{talk}_{i:04}`, `nbest_k` candidates) unless `long_form` is set
/// or the talk has no segments, in which case the whole recording is decoded
/// in overlapping chunks and stitched into one list `{talk}_lf`.
pub fn transcribe(talks: &[Talk], asr: &dyn AsrClient, cfg: &PipelineConfig) -> Result<Transcription> {
    let mut jobs = Vec::new();
    for talk in talks {
        if cfg.long_form || talk.segments.is_empty() {
            jobs.push(AsrJob::LongForm { talk });
        } else {
            jobs.extend((0..talk.segments.len()).map(|index| AsrJob::Segment { talk, index }));
        }
    }
    // long-form talks parallelize over their own chunks
    let outcomes = parallel_map(&jobs, cfg.parallelism, |_, job| match job {
        AsrJob::Segment { talk, index } => transcribe_segment(talk, *index, asr, cfg).map(|nb| (nb, Vec::new())),
        AsrJob::LongForm { talk } => transcribe_longform(talk, asr, cfg)
            .and_then(|lf| {
                let list = NBestList::new(format!("{}_lf", talk.talk_id), vec![Hypothesis::new(lf.text, 0.0)])?;
                Ok((list.with_talk(&talk.talk_id), lf.joints))
            })
            .map_err(|e| e.in_talk(&talk.talk_id)),
    });
    let mut out = Transcription::default();
    for outcome in outcomes {
        let (list, joints) = outcome?;
        out.lists.push(list);
        out.joints.extend(joints);
    }
    Ok(out)
}

fn transcribe_segment(talk: &Talk, index: usize, asr: &dyn AsrClient, cfg: &PipelineConfig) -> Result<NBestList> {
    let audio = talk
        .audio
        .as_ref()
        .ok_or_else(|| Error::Precondition("talk has no audio reference".into()).in_talk(&talk.talk_id))?;
    let seg = &talk.segments[index];
    let span = AudioSpan {
        audio: audio.path.clone(),
        start_s: seg.start_s,
        end_s: seg.end_s,
    };
    let id = format!("{}_{index:04}", talk.talk_id);
    let list = asr_transcribe(asr, &id, &span, cfg.nbest_k).map_err(|e| Error::from(e).in_talk(&talk.talk_id))?;
    Ok(list.with_talk(&talk.talk_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub results: Vec<RefinementResult>,
    pub summary: BatchSummary,
    pub skipped: usize,
}

/// One result per list, in input order. Talks routed around the LLM keep
/// their rank-1 hypothesis with reason [`SKIPPED`]; utterances whose request
/// failed keep rank-1 with the error as reason. Fails only when every routed
/// request failed.
pub fn refine(lists: &[NBestList], llm: &dyn LlmClient, cfg: &PipelineConfig) -> Result<Refinement> {
    let routed: Vec<NBestList> = lists
        .iter()
        .filter(|nb| nb.talk_id.as_deref().is_none_or(|t| cfg.refine_enabled_for(t)))
        .cloned()
        .collect();
    let batch = batch_refine(&routed, llm, cfg);
    if batch.summary.status == BatchStatus::AllFailed {
        let (id, err) = batch.failures.into_iter().next().expect("all-failed batch has a failure");
        warn!("every refinement request failed; first was {id}");
        return Err(err);
    }
    let mut done: HashMap<String, RefinementResult> = batch
        .results
        .into_iter()
        .map(|r| (r.utterance_id.clone(), r))
        .collect();
    let failed: HashMap<String, String> = batch
        .failures
        .into_iter()
        .map(|(id, e)| (id, format!("error: {e}")))
        .collect();
    let mut skipped = 0;
    let results = lists
        .iter()
        .map(|nb| {
            if let Some(r) = done.remove(&nb.utterance_id) {
                return r;
            }
            let (used_fallback, reason) = match failed.get(&nb.utterance_id) {
                Some(e) => (true, e.clone()),
                None => {
                    skipped += 1;
                    (false, SKIPPED.to_string())
                }
            };
            RefinementResult {
                utterance_id: nb.utterance_id.clone(),
                refined: nb.best().text.clone(),
                used_fallback,
                reason: Some(reason),
            }
        })
        .collect();
    Ok(Refinement {
        results,
        summary: batch.summary,
        skipped,
    })
}

/// Joins each talk's refined utterances, restores punctuation and splits
/// into sentences. Utterances without a refinement use their rank-1
/// hypothesis. Stray delimiters produced by the LLM are removed so the
/// sentences stay valid prompt material.
pub fn segment(
    talks: &[Talk],
    lists: &[NBestList],
    refined: &[RefinementResult],
    rules: &SegmentationRules,
    punctuator: Option<&dyn MtClient>,
) -> Result<Vec<Talk>> {
    rules.validate()?;
    let by_id: HashMap<&str, &str> = refined
        .iter()
        .map(|r| (r.utterance_id.as_str(), r.refined.as_str()))
        .collect();
    let mut per_talk: HashMap<&str, Vec<&str>> = HashMap::new();
    for nb in lists {
        let talk_id = nb.talk_id.as_deref().ok_or_else(|| {
            Error::Precondition(format!("N-best list {} carries no talk_id", nb.utterance_id))
        })?;
        let text = by_id
            .get(nb.utterance_id.as_str())
            .copied()
            .unwrap_or(nb.best().text.as_str());
        per_talk.entry(talk_id).or_default().push(text);
    }
    let mut out = Vec::with_capacity(talks.len());
    for talk in talks {
        let joined = per_talk
            .get(talk.talk_id.as_str())
            .map(|texts| texts.join(" ").replace(DELIMITER, " "))
            .unwrap_or_default();
        let joined = joined.split_whitespace().collect::<Vec<_>>().join(" ");
        let mut hyp = Talk {
            segments: Vec::new(),
            sentences: Vec::new(),
            ..talk.clone()
        };
        if !joined.is_empty() {
            let text = restore_punctuation(&joined, punctuator).map_err(|e| e.in_talk(&talk.talk_id))?;
            hyp.sentences = split_sentences(&text, rules)
                .into_iter()
                .enumerate()
                .map(|(i, s)| SentenceRecord::new(i, s))
                .collect();
        }
        hyp.validate()?;
        out.push(hyp);
    }
    Ok(out)
}

/// Sentence-level MT for every talk, one request per talk.
pub fn translate(talks: &[Talk], mt: &dyn MtClient, cfg: &PipelineConfig) -> Result<Vec<Talk>> {
    let outcomes = parallel_map(talks, cfg.parallelism, |_, talk| {
        let mut out = talk.clone();
        if talk.sentences.is_empty() {
            return Ok(out);
        }
        let srcs: Vec<String> = talk.sentences.iter().map(|s| s.src.clone()).collect();
        let mts = mt_translate(mt, &srcs).map_err(|e| Error::from(e).in_talk(&talk.talk_id))?;
        for (s, m) in out.sentences.iter_mut().zip(mts) {
            s.mt = Some(m);
            s.ape = None;
        }
        Ok(out)
    });
    outcomes.into_iter().collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PosteditRun {
    pub chunks: usize,
    pub postedited: usize,
    pub fallbacks: usize,
    pub mismatches: usize,
    pub skipped_talks: Vec<String>,
    pub talks: BTreeMap<String, ApeReport>,
}

/// Document-level post-editing of every talk routed through the LLM.
pub fn postedit(talks: &[Talk], llm: &dyn LlmClient, cfg: &PipelineConfig) -> Result<(Vec<Talk>, PosteditRun)> {
    let outcomes = parallel_map(talks, cfg.parallelism, |_, talk| {
        if !cfg.refine_enabled_for(&talk.talk_id) {
            return Ok((talk.clone(), None));
        }
        postedit_document(talk, llm, cfg, &WordPunctCounter).map(|(t, r)| (t, Some(r)))
    });
    let mut run = PosteditRun::default();
    let mut out = Vec::with_capacity(talks.len());
    for (talk, outcome) in talks.iter().zip(outcomes) {
        let (edited, report) = outcome?;
        match report {
            Some(r) => {
                run.chunks += r.chunks;
                run.postedited += r.postedited;
                run.fallbacks += r.fallbacks;
                run.mismatches += r.mismatches;
                run.talks.insert(talk.talk_id.clone(), r);
            }
            None => run.skipped_talks.push(talk.talk_id.clone()),
        }
        out.push(edited);
    }
    Ok((out, run))
}

/// True when every sentence of a non-empty corpus has a reference translation.
pub fn has_references(talks: &[Talk]) -> bool {
    let mut sentences = talks.iter().flat_map(|t| &t.sentences).peekable();
    sentences.peek().is_some() && sentences.all(|s| s.reference.is_some())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types always serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path.display().to_string(), e.line(), "<json>", e.to_string()))
}

pub fn load_rules(cfg: &PipelineConfig) -> Result<SegmentationRules> {
    match &cfg.rules_file {
        Some(p) => SegmentationRules::from_file(Path::new(p)),
        None => Ok(SegmentationRules::default()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Relative to the run's output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the configuration and the canonical input corpus.
    pub run_id: String,
    pub config: PipelineConfig,
    pub backends: Vec<serde_json::Value>,
    pub stages: Vec<StageRecord>,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record wall-clock seconds per stage. Off by default so manifests
    /// are reproducible byte for byte.
    pub timings: bool,
}

struct Recorder<'a> {
    dir: &'a Path,
    manifest: RunManifest,
    timings: bool,
}

impl Recorder<'_> {
    fn hashes(&self, names: &[&str]) -> Result<Vec<FileHash>> {
        names
            .iter()
            .map(|n| {
                Ok(FileHash {
                    path: n.to_string(),
                    sha256: hash_file(&self.dir.join(n))?,
                })
            })
            .collect()
    }

    /// Runs one stage, then records the hashes of its inputs and outputs.
    fn stage(&mut self, name: &str, inputs: &[&str], outputs: &[&str], body: impl FnOnce() -> Result<()>) -> Result<()> {
        info!("stage {name}");
        let started = Instant::now();
        let inputs = self.hashes(inputs)?;
        body()?;
        let outputs = self.hashes(outputs)?;
        self.manifest.stages.push(StageRecord {
            stage: name.to_string(),
            inputs,
            outputs,
            seconds: self.timings.then(|| started.elapsed().as_secs_f64()),
        });
        Ok(())
    }

    fn write(&self) -> Result<()> {
        write_json(&self.dir.join(MANIFEST_FILE), &self.manifest)
    }
}

/// Runs every stage into `out_dir` and writes `manifest.json`. On failure
/// the manifest is still written, listing the stages that completed and
/// the error, and the error is returned.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    out_dir: &Path,
    backends: &Backends,
    opts: RunOptions,
) -> Result<RunManifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let talks = load_corpus(corpus_path)?;
    let canonical = corpus_to_string(&talks);
    let mut id_src = cfg.to_toml_string().into_bytes();
    id_src.extend_from_slice(sha256_hex(canonical.as_bytes()).as_bytes());
    let mut rec = Recorder {
        dir: out_dir,
        manifest: RunManifest {
            run_id: sha256_hex(&id_src),
            config: cfg.clone(),
            backends: backends.profiles.clone(),
            stages: Vec::new(),
            complete: false,
            error: None,
        },
        timings: opts.timings,
    };
    let outcome = run_stages(&mut rec, cfg, &talks, &canonical, backends);
    match outcome {
        Ok(()) => {
            rec.manifest.complete = true;
            rec.write()?;
            Ok(rec.manifest)
        }
        Err(e) => {
            rec.manifest.error = Some(e.to_string());
            rec.write()?;
            Err(e)
        }
    }
}

fn run_stages(rec: &mut Recorder, cfg: &PipelineConfig, talks: &[Talk], canonical: &str, b: &Backends) -> Result<()> {
    let dir = rec.dir;
    let path = |n: &str| dir.join(n);
    rec.stage("ingest", &[], &[CORPUS_FILE], || {
        fs::write(path(CORPUS_FILE), canonical).map_err(|e| Error::io(path(CORPUS_FILE), e))
    })?;
    rec.stage("transcribe", &[CORPUS_FILE], &[ASR_FILE, STITCH_FILE], || {
        let t = transcribe(talks, b.asr.as_ref(), cfg)?;
        write_jsonl(path(ASR_FILE), &t.lists)?;
        write_jsonl(path(STITCH_FILE), &t.joints)
    })?;
    rec.stage("refine", &[ASR_FILE], &[REFINED_FILE], || {
        let lists: Vec<NBestList> = read_jsonl(path(ASR_FILE))?;
        let r = refine(&lists, b.llm.as_ref(), cfg)?;
        info!(
            "refinement: {} refined, {} fallback, {} failed, {} skipped",
            r.summary.refined, r.summary.fallback, r.summary.failed, r.skipped
        );
        write_jsonl(path(REFINED_FILE), &r.results)
    })?;
    rec.stage("segment", &[CORPUS_FILE, ASR_FILE, REFINED_FILE], &[SEGMENTED_FILE], || {
        let lists: Vec<NBestList> = read_jsonl(path(ASR_FILE))?;
        let refined: Vec<RefinementResult> = read_jsonl(path(REFINED_FILE))?;
        let rules = load_rules(cfg)?;
        let out = segment(talks, &lists, &refined, &rules, b.punctuator.as_deref())?;
        crate::corpus::save_corpus(&out, path(SEGMENTED_FILE))
    })?;
    rec.stage("translate", &[SEGMENTED_FILE], &[TRANSLATED_FILE], || {
        let hyps = load_corpus(path(SEGMENTED_FILE))?;
        crate::corpus::save_corpus(&translate(&hyps, b.mt.as_ref(), cfg)?, path(TRANSLATED_FILE))
    })?;
    rec.stage("doc-ape", &[TRANSLATED_FILE], &[APE_FILE, APE_REPORT_FILE], || {
        let hyps = load_corpus(path(TRANSLATED_FILE))?;
        let (out, report) = postedit(&hyps, b.llm.as_ref(), cfg)?;
        crate::corpus::save_corpus(&out, path(APE_FILE))?;
        write_json(&path(APE_REPORT_FILE), &report)
    })?;
    if has_references(talks) {
        rec.stage("eval", &[APE_FILE, CORPUS_FILE], &[EVAL_FILE], || {
            let hyps = load_corpus(path(APE_FILE))?;
            let refs = load_corpus(path(CORPUS_FILE))?;
            let report: EvalReport = evaluate(&hyps, &refs, cfg, b.scorer.as_deref())?;
            write_json(&path(EVAL_FILE), &report)
        })?;
    } else {
        info!("corpus has no reference translations; skipping evaluation");
    }
    Ok(())
}

/// Re-hashes every file a manifest names and checks that each stage input
/// matches the output recorded by the stage that produced it.
pub fn verify_manifest(out_dir: &Path) -> Result<RunManifest> {
    let manifest: RunManifest = read_json(&out_dir.join(MANIFEST_FILE))?;
    let mut produced: HashMap<&str, &str> = HashMap::new();
    for stage in &manifest.stages {
        for input in &stage.inputs {
            match produced.get(input.path.as_str()) {
                Some(h) if *h == input.sha256 => {}
                Some(_) => {
                    return Err(Error::Precondition(format!(
                        "stage {} consumed {} with a hash that differs from the one produced",
                        stage.stage, input.path
                    )))
                }
                None => {
                    return Err(Error::Precondition(format!(
                        "stage {} consumed {} which no earlier stage produced",
                        stage.stage, input.path
                    )))
                }
            }
        }
        for output in &stage.outputs {
            produced.insert(&output.path, &output.sha256);
        }
    }
    for (name, hash) in &produced {
        let actual = hash_file(&out_dir.join(name))?;
        if actual != *hash {
            return Err(Error::Precondition(format!(
                "{name} changed since the run: recorded {hash}, found {actual}"
            )));
        }
    }
    Ok(manifest)
}
