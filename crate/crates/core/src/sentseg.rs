//! Punctuation restoration hook and rule-based sentence splitting.

use std::collections::BTreeSet;
use std::path::Path;

use crate::backends::{mt_translate, MtClient};
use crate::error::{Error, Result};

const DEFAULT_ABBREVIATIONS: [&str; 8] = ["Mr.", "Dr.", "e.g.", "i.e.", "etc.", "vs.", "No.", "U.S."];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '”', '’', '»'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '{', '“', '‘', '«'];

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationRules {
    pub terminators: BTreeSet<char>,
    pub abbreviations: BTreeSet<String>,
    pub min_sentence_tokens: usize,
}

impl Default for SegmentationRules {
    fn default() -> Self {
        SegmentationRules {
            terminators: ['.', '!', '?'].into_iter().collect(),
            abbreviations: DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()).collect(),
            min_sentence_tokens: 1,
        }
    }
}

impl SegmentationRules {
    /// Defaults extended with the abbreviations in `path`, one per line.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rules = SegmentationRules::default();
        for (i, line) in text.lines().enumerate() {
            let abbr = line.trim();
            if abbr.is_empty() || abbr.starts_with('#') {
                continue;
            }
            if !abbr.ends_with(|c| rules.terminators.contains(&c)) {
                return Err(Error::data(
                    path.display().to_string(),
                    i + 1,
                    "abbreviation",
                    format!("{abbr:?} does not end with a terminator"),
                ));
            }
            rules.abbreviations.insert(abbr.to_string());
        }
        Ok(rules)
    }

    pub fn validate(&self) -> Result<()> {
        if self.terminators.is_empty() {
            return Err(Error::Config("segmentation rules need at least one terminator".into()));
        }
        if let Some(a) = self
            .abbreviations
            .iter()
            .find(|a| !a.ends_with(|c| self.terminators.contains(&c)))
        {
            return Err(Error::Config(format!("abbreviation {a:?} does not end with a terminator")));
        }
        Ok(())
    }

    fn ends_sentence(&self, token: &str) -> bool {
        let core = token.trim_end_matches(CLOSERS);
        match core.chars().last() {
            Some(c) if self.terminators.contains(&c) => {}
            _ => return false,
        }
        !self.abbreviations.contains(core.trim_start_matches(OPENERS))
    }
}

/// Returns the punctuator's output when one is configured, else `text`.
pub fn restore_punctuation(text: &str, punctuator: Option<&dyn MtClient>) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::Precondition("cannot punctuate empty text".into()));
    }
    match punctuator {
        None => Ok(text.to_string()),
        Some(client) => {
            let mut out = mt_translate(client, &[text.to_string()])?;
            Ok(out.remove(0))
        }
    }
}

/// Splits after a terminator (optionally followed by closing quotes or
/// brackets) when whitespace and an uppercase letter or digit follow, unless
/// the token is a protected abbreviation. Sentences are trimmed slices of
/// `text`; whitespace inside a sentence is kept.
pub fn split_sentences<'a>(text: &'a str, rules: &SegmentationRules) -> Vec<&'a str> {
    let tokens: Vec<(usize, &str)> = text
        .split_whitespace()
        .map(|t| (t.as_ptr() as usize - text.as_ptr() as usize, t))
        .collect();
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut count = 0;
    for (i, &(pos, tok)) in tokens.iter().enumerate() {
        let begin = *start.get_or_insert(pos);
        count += 1;
        let Some(&(_, next)) = tokens.get(i + 1) else {
            out.push(&text[begin..pos + tok.len()]);
            break;
        };
        let opens = next
            .chars()
            .next()
            .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit());
        if opens && count >= rules.min_sentence_tokens && rules.ends_sentence(tok) {
            out.push(&text[begin..pos + tok.len()]);
            start = None;
            count = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::TableMt;
    use proptest::prelude::*;

    fn split(text: &str) -> Vec<&str> {
        split_sentences(text, &SegmentationRules::default())
    }

    #[test]
    fn examples() {
        assert_eq!(split("I saw Dr. Smith. He waved."), ["I saw Dr. Smith.", "He waved."]);
        assert_eq!(split("no punctuation at all"), ["no punctuation at all"]);
        assert_eq!(split("One. Two. Three."), ["One.", "Two.", "Three."]);
    }

    #[test]
    fn lowercase_continuation_and_quotes() {
        assert_eq!(split("It costs 3.5 dollars. ok then."), ["It costs 3.5 dollars. ok then."]);
        assert_eq!(split("He said \"Stop!\" Then left."), ["He said \"Stop!\"", "Then left."]);
        assert_eq!(split("Was it 1999? 2000 came."), ["Was it 1999?", "2000 came."]);
        assert_eq!(split("We met in the U.S. Later we left."), ["We met in the U.S. Later we left."]);
        assert!(split("   ").is_empty());
    }

    #[test]
    fn min_tokens_merges_short_sentences() {
        let rules = SegmentationRules {
            min_sentence_tokens: 2,
            ..Default::default()
        };
        assert_eq!(split_sentences("Yes. That is right. Ok.", &rules), ["Yes. That is right.", "Ok."]);
    }

    #[test]
    fn rules_file_extends_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.txt");
        std::fs::write(&path, "# extra\nProf.\n\nFig.\n").unwrap();
        let rules = SegmentationRules::from_file(&path).unwrap();
        assert!(rules.abbreviations.contains("Prof.") && rules.abbreviations.contains("Dr."));
        assert_eq!(split_sentences("Ask Prof. Lee. Now.", &rules), ["Ask Prof. Lee.", "Now."]);
        std::fs::write(&path, "Prof\n").unwrap();
        assert!(SegmentationRules::from_file(&path).is_err());
    }

    #[test]
    fn punctuation_restoration() {
        assert_eq!(restore_punctuation("Hello there.", None).unwrap(), "Hello there.");
        let p = TableMt::new([("hello there".to_string(), "Hello there.".to_string())].into());
        assert_eq!(restore_punctuation("hello there", Some(&p)).unwrap(), "Hello there.");
        assert!(restore_punctuation("", None).is_err());
    }

    fn sentence() -> impl Strategy<Value = String> {
        let word = prop::sample::select(vec![
            "alpha", "Beta", "gamma", "Dr.", "e.g.", "U.S.", "No.", "3.5", "x", "Mr.", "etc.", "vs.",
        ]);
        (prop::collection::vec(word, 0..6), prop::sample::select(vec![".", "!", "?"]))
            .prop_map(|(ws, end)| {
                let mut s = String::from("Start");
                for w in ws {
                    s.push(' ');
                    s.push_str(w);
                }
                s.push_str(end);
                s
            })
    }

    proptest! {
        #[test]
        fn lossless_and_idempotent(parts in prop::collection::vec(sentence(), 1..6), gaps in prop::collection::vec("[ \t\n]{1,3}", 6)) {
            let mut text = String::new();
            for (i, p) in parts.iter().enumerate() {
                if i > 0 { text.push_str(&gaps[i]); }
                text.push_str(p);
            }
            let out = split(&text);
            prop_assert!(out.iter().all(|s| !s.is_empty()));
            let collapse = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(collapse(&out.join(" ")), collapse(&text));
            for s in &out {
                prop_assert_eq!(split(s), vec![*s]);
            }
        }

        #[test]
        fn never_splits_after_abbreviation(parts in prop::collection::vec(sentence(), 1..6)) {
            let text = parts.join(" ");
            let rules = SegmentationRules::default();
            for s in split(&text) {
                let last = s.split_whitespace().last().unwrap();
                prop_assert!(!rules.abbreviations.contains(last));
            }
        }
    }
}
