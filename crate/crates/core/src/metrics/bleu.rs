//! Corpus BLEU with 13a tokenization, scored the way sacreBLEU 2.x does.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;

struct Rules13a {
    punct: Regex,
    period_comma_before: Regex,
    period_comma_after: Regex,
    dash: Regex,
}

fn rules() -> &'static Rules13a {
    static RULES: OnceLock<Rules13a> = OnceLock::new();
    RULES.get_or_init(|| Rules13a {
        punct: Regex::new(r"([{-~\[-` -&(-+:-@/])").unwrap(),
        period_comma_before: Regex::new(r"([^0-9])([.,])").unwrap(),
        period_comma_after: Regex::new(r"([.,])([^0-9])").unwrap(),
        dash: Regex::new(r"([0-9])(-)").unwrap(),
    })
}

/// The mteval-v13a tokenizer.
pub fn tokenize_13a(line: &str) -> Vec<String> {
    let mut line = line
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let r = rules();
    let line = format!(" {line} ");
    let line = r.punct.replace_all(&line, " ${1} ");
    let line = r.period_comma_before.replace_all(&line, "${1} ${2} ");
    let line = r.period_comma_after.replace_all(&line, " ${1} ${2}");
    let line = r.dash.replace_all(&line, "${1} ${2} ");
    line.split_whitespace().map(String::from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub sys_len: usize,
    pub ref_len: usize,
}

/// Corpus BLEU with exponential smoothing.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    bleu_detailed(hyps, refs, true).map(|b| b.score)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Without `smoothing`, any order with no matches makes the score 0.
pub fn bleu_detailed<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    smoothing: bool,
) -> Result<BleuScore> {
    if hyps.len() != refs.len() {
        return Err(Error::CountMismatch(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if refs.is_empty() {
        return Err(Error::Precondition("BLEU needs at least one reference".into()));
    }
    let mut correct = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut sys_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let ht = tokenize_13a(h.as_ref());
        let rt = tokenize_13a(r.as_ref());
        sys_len += ht.len();
        ref_len += rt.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&ht, n);
            let rc = ngram_counts(&rt, n);
            total[n - 1] += ht.len().saturating_sub(n - 1);
            correct[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    let brevity_penalty = if sys_len >= ref_len {
        1.0
    } else if sys_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / sys_len as f64).exp()
    };
    let mut precisions = [0.0; MAX_ORDER];
    // ln of each precision as a fraction
    let mut logs = [f64::NEG_INFINITY; MAX_ORDER];
    if correct.iter().any(|&c| c > 0) {
        let mut smooth = 1.0;
        for n in 0..MAX_ORDER {
            if total[n] == 0 {
                break;
            }
            if correct[n] == 0 {
                if !smoothing {
                    continue;
                }
                smooth *= 2.0;
                precisions[n] = 100.0 / (smooth * total[n] as f64);
                logs[n] = (1.0 / (smooth * total[n] as f64)).ln();
            } else {
                precisions[n] = 100.0 * correct[n] as f64 / total[n] as f64;
                logs[n] = (correct[n] as f64 / total[n] as f64).ln();
            }
        }
    }
    let score = if logs.iter().any(|l| l.is_infinite()) {
        0.0
    } else {
        brevity_penalty * 100.0 * (logs.iter().sum::<f64>() / MAX_ORDER as f64).exp()
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty,
        sys_len,
        ref_len,
    })
}
