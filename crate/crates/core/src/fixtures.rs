//! Seeded synthetic corpora for tests and demos.
//!
//! Sentences are capitalized, end in a terminator, contain no other
//! terminator and no abbreviation, so rule-based splitting recovers them
//! exactly. Speech runs at two words per second, which keeps every
//! long-form overlap region inside the default stitch window.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::backends::mock::keyed_rng;
use crate::model::{AudioRef, Segment, SentenceRecord, Talk};

const LEXICON: [(&str, &str); 48] = [
    ("the", "die"),
    ("people", "leute"),
    ("world", "welt"),
    ("idea", "idee"),
    ("we", "wir"),
    ("think", "denken"),
    ("about", "über"),
    ("water", "wasser"),
    ("energy", "energie"),
    ("cities", "städte"),
    ("grow", "wachsen"),
    ("very", "sehr"),
    ("fast", "schnell"),
    ("children", "kinder"),
    ("learn", "lernen"),
    ("music", "musik"),
    ("every", "jeden"),
    ("day", "tag"),
    ("science", "wissenschaft"),
    ("changes", "verändert"),
    ("how", "wie"),
    ("see", "sehen"),
    ("data", "daten"),
    ("shows", "zeigt"),
    ("that", "dass"),
    ("our", "unsere"),
    ("planet", "planet"),
    ("needs", "braucht"),
    ("help", "hilfe"),
    ("this", "dieses"),
    ("project", "projekt"),
    ("started", "begann"),
    ("ten", "zehn"),
    ("years", "jahre"),
    ("ago", "zuvor"),
    ("and", "und"),
    ("it", "es"),
    ("works", "funktioniert"),
    ("today", "heute"),
    ("some", "einige"),
    ("doctors", "ärzte"),
    ("build", "bauen"),
    ("small", "kleine"),
    ("machines", "maschinen"),
    ("in", "in"),
    ("africa", "afrika"),
    ("really", "wirklich"),
    ("matters", "zählt"),
];

const TERMINATORS: [&str; 3] = [".", "?", "!"];
pub const WORDS_PER_SECOND: f64 = 2.0;

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// `n_talks` talks with audio, gold segments aligned one to one with
/// sentences, transcripts and reference translations.
pub fn synthetic_corpus(n_talks: usize, seed: u64) -> Vec<Talk> {
    (0..n_talks)
        .map(|i| synthetic_talk(&format!("talk{i:03}"), seed))
        .collect()
}

pub fn synthetic_talk(talk_id: &str, seed: u64) -> Talk {
    let mut rng = keyed_rng(seed, talk_id);
    let mut talk = Talk::new(talk_id);
    let n_sentences = rng.gen_range(4..=12);
    let mut clock = 0.5;
    for index in 0..n_sentences {
        let len = rng.gen_range(3..=12);
        let end = *TERMINATORS.choose(&mut rng).unwrap();
        let picks: Vec<(&str, &str)> = (0..len).map(|_| *LEXICON.choose(&mut rng).unwrap()).collect();
        let render = |side: fn(&(&'static str, &'static str)) -> &'static str| {
            let ws: Vec<String> = picks
                .iter()
                .enumerate()
                .map(|(k, p)| if k == 0 { capitalize(side(p)) } else { side(p).to_string() })
                .collect();
            format!("{}{end}", ws.join(" "))
        };
        let mut s = SentenceRecord::new(index, render(|p| p.0));
        s.reference = Some(render(|p| p.1));
        talk.sentences.push(s);
        let dur = len as f64 / WORDS_PER_SECOND;
        talk.segments.push(Segment {
            start_s: clock,
            end_s: clock + dur,
            text: None,
        });
        clock += dur + rng.gen_range(0.2..0.8);
    }
    talk.audio = Some(AudioRef {
        path: format!("{talk_id}.wav"),
        duration_s: Some((clock + 0.5).ceil()),
    });
    talk
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sentseg::{split_sentences, SegmentationRules};

    #[test]
    fn deterministic_and_valid() {
        let a = synthetic_corpus(5, 9);
        assert_eq!(a, synthetic_corpus(5, 9));
        assert_ne!(a, synthetic_corpus(5, 10));
        for t in &a {
            t.validate().unwrap();
            assert_eq!(t.segments.len(), t.sentences.len());
        }
    }

    #[test]
    fn sentences_survive_segmentation() {
        let rules = SegmentationRules::default();
        for t in synthetic_corpus(10, 2) {
            let srcs: Vec<&str> = t.sentences.iter().map(|s| s.src.as_str()).collect();
            assert_eq!(split_sentences(&srcs.join(" "), &rules), srcs);
        }
    }
}
