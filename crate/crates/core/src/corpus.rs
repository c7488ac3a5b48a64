//! JSON Lines corpus manifests.
//!
//! A corpus is one JSONL file or a directory of `*.jsonl` files. Each line is
//! one of three record kinds, told apart by their keys:
//!
//! * talk:     `{talk_id, audio?, duration_s?, src_lang, tgt_lang}`
//! * segment:  `{talk_id, start_s, end_s, text?}`
//! * sentence: `{talk_id, index, src, mt?, ape?, ref?}`
//!
//! [`save_corpus`] writes the canonical form: talks sorted by id, each talk
//! record followed by its segments and then its sentences.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{sentence_violation, AudioRef, Segment, SentenceRecord, Talk};

#[derive(Serialize)]
struct TalkLine<'a> {
    talk_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    audio: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    duration_s: Option<f64>,
    src_lang: &'a str,
    tgt_lang: &'a str,
}

#[derive(Serialize)]
struct SegmentLine<'a> {
    talk_id: &'a str,
    start_s: f64,
    end_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
}

#[derive(Serialize)]
struct SentenceLine<'a> {
    talk_id: &'a str,
    index: usize,
    src: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    mt: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ape: Option<&'a str>,
    #[serde(rename = "ref", skip_serializing_if = "Option::is_none")]
    reference: Option<&'a str>,
}

/// Where a record came from, for error reporting.
#[derive(Debug, Clone)]
struct Loc {
    file: String,
    line: usize,
}

impl Loc {
    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::data(&self.file, self.line, field, message)
    }
}

struct Fields<'a> {
    map: &'a Map<String, Value>,
    loc: &'a Loc,
}

impl Fields<'_> {
    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(self.loc.err(k, "unknown field")),
            None => Ok(()),
        }
    }

    fn opt_str(&self, key: &str) -> Result<Option<String>> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.loc.err(key, "expected a string")),
        }
    }

    fn str(&self, key: &str) -> Result<String> {
        self.opt_str(key)?
            .ok_or_else(|| self.loc.err(key, "missing required field"))
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() => Ok(Some(x)),
                _ => Err(self.loc.err(key, "expected a finite number")),
            },
        }
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.opt_f64(key)?
            .ok_or_else(|| self.loc.err(key, "missing required field"))
    }

    fn index(&self, key: &str) -> Result<usize> {
        match self.map.get(key) {
            None => Err(self.loc.err(key, "missing required field")),
            Some(v) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| self.loc.err(key, "expected a non-negative integer")),
        }
    }
}

struct TalkBuilder {
    talk: Talk,
    header: Option<Loc>,
    segments: Vec<(Segment, Loc)>,
    sentences: Vec<(SentenceRecord, Loc)>,
}

impl TalkBuilder {
    fn new(talk_id: &str) -> Self {
        TalkBuilder {
            talk: Talk::new(talk_id),
            header: None,
            segments: Vec::new(),
            sentences: Vec::new(),
        }
    }

    fn finish(mut self) -> Result<Talk> {
        let duration = self.talk.duration_s();
        for (seg, loc) in &self.segments {
            if seg.start_s < 0.0 {
                return Err(loc.err("start_s", "must be non-negative"));
            }
            if seg.end_s <= seg.start_s {
                return Err(loc.err("end_s", "must be greater than start_s"));
            }
            if let Some(d) = duration {
                if seg.end_s > d {
                    return Err(loc.err("end_s", format!("exceeds talk duration {d}")));
                }
            }
        }
        self.segments
            .sort_by(|a, b| a.0.start_s.total_cmp(&b.0.start_s));
        self.sentences.sort_by_key(|(s, _)| s.index);
        for (pos, (s, loc)) in self.sentences.iter().enumerate() {
            if s.index != pos {
                let msg = if s.index < pos {
                    format!("duplicate sentence index {}", s.index)
                } else {
                    format!("sentence indices are not contiguous: expected {pos}, found {}", s.index)
                };
                return Err(loc.err("index", msg));
            }
        }
        self.talk.segments = self.segments.into_iter().map(|(s, _)| s).collect();
        self.talk.sentences = self.sentences.into_iter().map(|(s, _)| s).collect();
        Ok(self.talk)
    }
}

fn parse_record(
    map: &Map<String, Value>,
    loc: &Loc,
    talks: &mut BTreeMap<String, TalkBuilder>,
) -> Result<()> {
    let f = Fields { map, loc };
    let talk_id = f.str("talk_id")?;
    if talk_id.trim().is_empty() {
        return Err(loc.err("talk_id", "must be non-empty"));
    }
    let builder = talks
        .entry(talk_id.clone())
        .or_insert_with(|| TalkBuilder::new(&talk_id));

    if map.contains_key("index") {
        f.check_keys(&["talk_id", "index", "src", "mt", "ape", "ref"])?;
        let record = SentenceRecord {
            index: f.index("index")?,
            src: f.str("src")?,
            mt: f.opt_str("mt")?,
            ape: f.opt_str("ape")?,
            reference: f.opt_str("ref")?,
        };
        if let Some((field, msg)) = sentence_violation(&record) {
            return Err(loc.err(field, msg));
        }
        builder.sentences.push((record, loc.clone()));
    } else if map.contains_key("start_s") || map.contains_key("end_s") {
        f.check_keys(&["talk_id", "start_s", "end_s", "text"])?;
        let seg = Segment {
            start_s: f.f64("start_s")?,
            end_s: f.f64("end_s")?,
            text: f.opt_str("text")?,
        };
        builder.segments.push((seg, loc.clone()));
    } else {
        f.check_keys(&["talk_id", "audio", "duration_s", "src_lang", "tgt_lang"])?;
        if let Some(first) = &builder.header {
            return Err(loc.err(
                "talk_id",
                format!("duplicate talk record (first at {}:{})", first.file, first.line),
            ));
        }
        let audio = f.opt_str("audio")?;
        let duration_s = f.opt_f64("duration_s")?;
        if let Some(d) = duration_s {
            if d <= 0.0 {
                return Err(loc.err("duration_s", "must be positive"));
            }
        }
        builder.talk.audio = match (audio, duration_s) {
            (Some(path), duration_s) => Some(AudioRef { path, duration_s }),
            (None, Some(_)) => return Err(loc.err("duration_s", "given without `audio`")),
            (None, None) => None,
        };
        builder.talk.src_lang = f.str("src_lang")?;
        builder.talk.tgt_lang = f.str("tgt_lang")?;
        builder.header = Some(loc.clone());
    }
    Ok(())
}

fn corpus_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files = Vec::new();
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            if p.extension().is_some_and(|e| e == "jsonl") {
                files.push(p);
            }
        }
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

/// Visits every non-blank line of a JSONL file as a JSON object.
fn for_each_object(
    path: &Path,
    mut visit: impl FnMut(&Map<String, Value>, &Loc) -> Result<()>,
) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = Loc {
            file: name.clone(),
            line: i + 1,
        };
        let value: Value =
            serde_json::from_str(&line).map_err(|e| loc.err("<json>", e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(loc.err("<json>", "expected a JSON object"));
        };
        visit(&map, &loc)?;
    }
    Ok(())
}

/// Loads every talk in a corpus file or directory, ordered by `talk_id`.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Talk>> {
    let mut talks = BTreeMap::new();
    for file in corpus_files(path.as_ref())? {
        for_each_object(&file, |map, loc| parse_record(map, loc, &mut talks))?;
    }
    talks.into_values().map(TalkBuilder::finish).collect()
}

/// Serializes talks in canonical form.
pub fn corpus_to_string(talks: &[Talk]) -> String {
    let mut ordered: Vec<&Talk> = talks.iter().collect();
    ordered.sort_by(|a, b| a.talk_id.cmp(&b.talk_id));
    let mut out = String::new();
    for talk in ordered {
        push_line(&mut out, &TalkLine {
            talk_id: &talk.talk_id,
            audio: talk.audio.as_ref().map(|a| a.path.as_str()),
            duration_s: talk.duration_s(),
            src_lang: &talk.src_lang,
            tgt_lang: &talk.tgt_lang,
        });
        for seg in &talk.segments {
            push_line(&mut out, &SegmentLine {
                talk_id: &talk.talk_id,
                start_s: seg.start_s,
                end_s: seg.end_s,
                text: seg.text.as_deref(),
            });
        }
        for s in &talk.sentences {
            push_line(&mut out, &SentenceLine {
                talk_id: &talk.talk_id,
                index: s.index,
                src: &s.src,
                mt: s.mt.as_deref(),
                ape: s.ape.as_deref(),
                reference: s.reference.as_deref(),
            });
        }
    }
    out
}

fn push_line<T: Serialize>(out: &mut String, record: &T) {
    out.push_str(&serde_json::to_string(record).expect("corpus records always serialize"));
    out.push('\n');
}

pub fn save_corpus(talks: &[Talk], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, corpus_to_string(talks)).map_err(|e| Error::io(path, e))
}

/// Reads a JSONL file of `T` records. Parse failures name the file and line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for_each_object(path, |map, loc| {
        let record = T::deserialize(Value::Object(map.clone())).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<record>".to_string());
            loc.err(&field, msg)
        })?;
        out.push(record);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
