//! Word-level Levenshtein alignment and hypothesis resegmentation.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One step turning the hypothesis into the reference. Positions index the
/// hypothesis and reference word sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    Match { hyp: usize, reference: usize },
    Substitute { hyp: usize, reference: usize },
    /// A reference word missing from the hypothesis.
    Insert { reference: usize },
    /// A hypothesis word absent from the reference.
    Delete { hyp: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub ops: Vec<EditOp>,
    pub cost: usize,
}

impl Alignment {
    /// Replays the ops on `hyp`; yields `reference` for a valid alignment.
    pub fn apply<'a, S: AsRef<str>>(&self, hyp: &'a [S], reference: &'a [S]) -> Vec<&'a str> {
        self.ops
            .iter()
            .filter_map(|op| match *op {
                EditOp::Match { hyp: h, .. } => Some(hyp[h].as_ref()),
                EditOp::Substitute { reference: r, .. } | EditOp::Insert { reference: r } => {
                    Some(reference[r].as_ref())
                }
                EditOp::Delete { .. } => None,
            })
            .collect()
    }
}

/// Minimal uniform-cost alignment. Ties in the backtrace prefer match,
/// then substitution, deletion, insertion.
pub fn edit_distance<A: AsRef<str>, B: AsRef<str>>(hyp: &[A], reference: &[B]) -> Alignment {
    let (n, m) = (hyp.len(), reference.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(hyp[i - 1].as_ref() != reference[j - 1].as_ref());
            d[i * w + j] = diag.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = hyp[i - 1].as_ref() == reference[j - 1].as_ref();
            let diag = d[(i - 1) * w + j - 1];
            if same && diag == here {
                ops.push(EditOp::Match { hyp: i - 1, reference: j - 1 });
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && diag + 1 == here {
                ops.push(EditOp::Substitute { hyp: i - 1, reference: j - 1 });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            ops.push(EditOp::Delete { hyp: i - 1 });
            i -= 1;
        } else {
            ops.push(EditOp::Insert { reference: j - 1 });
            j -= 1;
        }
    }
    ops.reverse();
    Alignment {
        ops,
        cost: d[n * w + m],
    }
}

/// Distance only, in linear memory.
fn intern<'a, S: AsRef<str>>(words: &'a [S], ids: &mut HashMap<&'a str, u32>) -> Vec<u32> {
    words
        .iter()
        .map(|w| {
            let next = ids.len() as u32;
            *ids.entry(w.as_ref()).or_insert(next)
        })
        .collect()
}

pub fn edit_cost<A: AsRef<str>, B: AsRef<str>>(hyp: &[A], reference: &[B]) -> usize {
    // integer ids keep the inner loop free of string comparisons
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let h = intern(hyp, &mut ids);
    let r = intern(reference, &mut ids);
    let mut prev: Vec<usize> = (0..=r.len()).collect();
    let mut cur = vec![0; r.len() + 1];
    for (i, &hw) in h.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &rw) in r.iter().enumerate() {
            let sub = prev[j] + usize::from(hw != rw);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[r.len()]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resegmentation {
    /// One contiguous, possibly empty, hypothesis range per reference segment.
    pub ranges: Vec<Range<usize>>,
    /// Summed word edit distance of the pieces to their segments.
    pub cost: usize,
}

impl Resegmentation {
    pub fn pieces<'a, S: AsRef<str>>(&self, hyp: &'a [S]) -> Vec<Vec<&'a str>> {
        self.ranges
            .iter()
            .map(|r| hyp[r.clone()].iter().map(AsRef::as_ref).collect())
            .collect()
    }
}

/// Cuts `hyp` into `segments.len()` contiguous pieces minimising the summed
/// edit distance to the segments. Among optimal cuts the lexicographically
/// earliest are returned.
pub fn mwer_resegment<A: AsRef<str>, B: AsRef<str>>(
    hyp: &[A],
    segments: &[Vec<B>],
) -> Result<Resegmentation> {
    if segments.is_empty() {
        return Err(Error::Precondition("resegmentation needs at least one reference segment".into()));
    }
    let n = hyp.len();
    let reference: Vec<&str> = segments.iter().flatten().map(AsRef::as_ref).collect();
    let m = reference.len();
    let mut bounds = vec![0usize];
    for s in segments {
        bounds.push(bounds.last().unwrap() + s.len());
    }

    // suffix[k][i]: cost of aligning hyp[i..] to segments k.. with a cut at i.
    // Backward DP over reference columns, keeping only boundary columns.
    let k_count = segments.len();
    let mut suffix = vec![Vec::new(); k_count + 1];
    let mut col: Vec<usize> = (0..=n).map(|i| n - i).collect();
    // the last cut is pinned to the end of the hypothesis
    suffix[k_count] = (0..=n).map(|i| if i == n { 0 } else { usize::MAX / 2 }).collect();
    let mut next_bound = k_count;
    // empty trailing segments share column m
    while next_bound > 0 && bounds[next_bound - 1] == m {
        next_bound -= 1;
        suffix[next_bound] = col.clone();
    }
    let mut new = vec![0usize; n + 1];
    for j in (0..m).rev() {
        new[n] = m - j;
        for i in (0..n).rev() {
            let sub = col[i + 1] + usize::from(hyp[i].as_ref() != reference[j]);
            new[i] = sub.min(col[i] + 1).min(new[i + 1] + 1);
        }
        std::mem::swap(&mut col, &mut new);
        while next_bound > 0 && bounds[next_bound - 1] == j {
            next_bound -= 1;
            suffix[next_bound] = col.clone();
        }
    }
    // empty leading segments share column 0
    while next_bound > 0 {
        next_bound -= 1;
        suffix[next_bound] = col.clone();
    }

    let mut ranges = Vec::with_capacity(k_count);
    let mut start = 0;
    for (k, seg) in segments.iter().enumerate() {
        let target = suffix[k][start];
        // dist(hyp[start..c], seg) for every c, row by row
        let mut row: Vec<usize> = (0..=seg.len()).collect();
        let mut cut = None;
        for c in start..=n {
            if c > start {
                let h = hyp[c - 1].as_ref();
                let mut next = vec![row[0] + 1; seg.len() + 1];
                for (j, r) in seg.iter().enumerate() {
                    let sub = row[j] + usize::from(h != r.as_ref());
                    next[j + 1] = sub.min(row[j + 1] + 1).min(next[j] + 1);
                }
                row = next;
            }
            if row[seg.len()] + suffix[k + 1][c] == target {
                cut = Some(c);
                break;
            }
        }
        let cut = cut.expect("an optimal cut exists at every stage");
        ranges.push(start..cut);
        start = cut;
    }
    Ok(Resegmentation {
        ranges,
        cost: suffix[0][0],
    })
}
