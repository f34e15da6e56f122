//! Recovering a permutation from free-form model output.
//!
//! The parser is total: whatever the model says, the result is a valid
//! permutation of `1..=m`. Digit runs are read left to right as
//! identifiers; out-of-range identifiers are dropped, repeats are counted
//! and skipped, and anything never mentioned is appended in its original
//! order. Text without a single usable identifier is a rejection and maps
//! to the identity order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomalies {
    pub repetition: usize,
    pub missing: usize,
    pub rejected: bool,
}

impl Anomalies {
    pub fn is_clean(&self) -> bool {
        *self == Anomalies::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPermutation {
    /// 1-indexed identifiers, most relevant first.
    pub order: Vec<usize>,
    /// True when the raw text needed any correction.
    pub repaired: bool,
    pub anomalies: Anomalies,
}

/// Every maximal run of ASCII digits, as a number; runs too long for `u64`
/// come back as `None`.
fn digit_runs(text: &str) -> impl Iterator<Item = Option<u64>> + '_ {
    let bytes = text.as_bytes();
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < bytes.len() && !bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i >= bytes.len() {
            return None;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        Some(text[start..i].parse::<u64>().ok())
    })
}

pub fn parse_permutation(text: &str, m: usize) -> ParsedPermutation {
    let mut seen = vec![false; m];
    let mut order = Vec::with_capacity(m);
    let mut repetition = 0;
    let mut dropped = 0;
    for run in digit_runs(text) {
        match run {
            Some(id) if id >= 1 && id <= m as u64 => {
                let id = id as usize;
                if seen[id - 1] {
                    repetition += 1;
                } else {
                    seen[id - 1] = true;
                    order.push(id);
                }
            }
            _ => dropped += 1,
        }
    }
    if order.is_empty() {
        return ParsedPermutation {
            order: (1..=m).collect(),
            repaired: true,
            anomalies: Anomalies {
                rejected: true,
                ..Anomalies::default()
            },
        };
    }
    let before = order.len();
    order.extend((1..=m).filter(|&id| !seen[id - 1]));
    let missing = order.len() - before;
    ParsedPermutation {
        order,
        repaired: repetition > 0 || missing > 0 || dropped > 0,
        anomalies: Anomalies {
            repetition,
            missing,
            rejected: false,
        },
    }
}
