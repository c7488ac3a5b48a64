//! Corpus chrF2: character 1..6-grams, whitespace removed, β = 2.

use std::collections::HashMap;

use crate::error::{Error, Result};

const CHAR_ORDER: usize = 6;
const BETA: f64 = 2.0;

/// Per-order (hypothesis, reference, matched) n-gram counts.
type Stats = [[usize; 3]; CHAR_ORDER];

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    for g in chars.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

fn sentence_stats(hyp: &str, reference: &str, stats: &mut Stats) {
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    for n in 1..=CHAR_ORDER {
        let hc = char_ngrams(&h, n);
        let rc = char_ngrams(&r, n);
        let s = &mut stats[n - 1];
        s[0] += h.len().saturating_sub(n - 1);
        s[1] += r.len().saturating_sub(n - 1);
        s[2] += hc
            .iter()
            .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
            .sum::<usize>();
    }
}

/// Precision and recall are averaged over orders present on both sides,
/// then combined into one F-score.
fn f_score(stats: &Stats) -> f64 {
    let (mut prec, mut rec, mut effective) = (0.0, 0.0, 0usize);
    for &[n_hyp, n_ref, n_match] in stats {
        if n_hyp > 0 && n_ref > 0 {
            prec += n_match as f64 / n_hyp as f64;
            rec += n_match as f64 / n_ref as f64;
            effective += 1;
        }
    }
    if effective == 0 {
        return 0.0;
    }
    prec /= effective as f64;
    rec /= effective as f64;
    if prec + rec == 0.0 {
        return 0.0;
    }
    let b2 = BETA * BETA;
    100.0 * (1.0 + b2) * prec * rec / (b2 * prec + rec)
}

pub fn chrf2<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::CountMismatch(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut stats = [[0; 3]; CHAR_ORDER];
    for (h, r) in hyps.iter().zip(refs) {
        sentence_stats(h.as_ref(), r.as_ref(), &mut stats);
    }
    Ok(f_score(&stats))
}
