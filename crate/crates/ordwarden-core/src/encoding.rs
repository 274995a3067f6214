//! Ordinal encoding: unwrap raw sequence values, rank a window by send
//! order, derive signed order differences, filter overruns, and render one
//! of the four coding strings.
//!
//! The stages are exposed separately so each is testable in isolation:
//! `unwrap_sequences` → `rank_window` → `compute_diffs` →
//! `apply_overrun_filter` → `encode`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::flow::{FlowKey, OrderWindow, SeqFieldBits};

/// The four coding rules turning a diff into string tokens.
///
/// c1 = `str(diff)`, c2 = `str(|diff|)`, c3 = c1 plus a parity letter,
/// c4 = c2 plus a parity letter ('A' when |diff| is odd, 'B' otherwise).
/// c4 is the default; it separates the traffic classes best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodingId {
    C1,
    C2,
    C3,
    C4,
}

impl Default for CodingId {
    fn default() -> Self {
        CodingId::C4
    }
}

impl CodingId {
    pub fn as_str(&self) -> &'static str {
        match self {
            CodingId::C1 => "c1",
            CodingId::C2 => "c2",
            CodingId::C3 => "c3",
            CodingId::C4 => "c4",
        }
    }
}

impl fmt::Display for CodingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CodingId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "c1" => Ok(CodingId::C1),
            "c2" => Ok(CodingId::C2),
            "c3" => Ok(CodingId::C3),
            "c4" => Ok(CodingId::C4),
            _ => Err(()),
        }
    }
}

/// A window together with its rendered coding string S.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedWindow {
    pub window: OrderWindow,
    pub coding: CodingId,
    pub s: Vec<u8>,
}

/// Compensates sequence-field wraparounds so ranking reflects true send
/// order. A wrap is flagged when a raw delta is negative and its magnitude
/// exceeds five times the previously seen positive delta; all subsequent
/// values are lifted by the field modulus.
pub fn unwrap_sequences(seqs: &[u64], bits: SeqFieldBits) -> Vec<u64> {
    let modulus = bits.modulus();
    let mut out = Vec::with_capacity(seqs.len());
    let mut offset: u64 = 0;
    let mut prev_positive_delta: i64 = 1;
    let mut prev_value: Option<i64> = None;

    for &raw in seqs {
        let mut value = (raw + offset) as i64;
        if let Some(prev) = prev_value {
            let delta = value - prev;
            if delta < 0 && -delta > 5 * prev_positive_delta {
                offset += modulus;
                value += modulus as i64;
            }
            let delta = value - prev;
            if delta > 0 {
                prev_positive_delta = delta;
            }
        }
        prev_value = Some(value);
        out.push(value as u64);
    }
    out
}

/// Assigns each packet its 1-based send-order position within the window.
///
/// Equal values get stable ranks by arrival, so the result is always a
/// permutation of 1..=len and retransmitted duplicates stay adjacent.
pub fn rank_window(seqs: &[u64]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&i| (seqs[i], i));
    let mut ranks = vec![0u32; seqs.len()];
    for (rank0, &i) in order.iter().enumerate() {
        ranks[i] = rank0 as u32 + 1;
    }
    ranks
}

/// Differences between consecutive ranks, before any filtering.
pub fn compute_diffs(ranks: &[u32]) -> Vec<i32> {
    ranks.windows(2).map(|w| w[1] as i32 - w[0] as i32).collect()
}

/// The overrun filter: a diff is suppressed when `olddiff > diff * 5`,
/// where `olddiff` is the preceding diff (suppressed or not). The first
/// diff is always retained. Returns the retained diffs and the count of
/// suppressed ones.
///
/// The comparison is signed: a small negative diff right after a positive
/// one trips the filter, which is what keeps randomized orderings from
/// compressing as well as legitimate traffic does.
pub fn apply_overrun_filter(diffs: &[i32]) -> (Vec<i32>, u32) {
    let mut retained = Vec::with_capacity(diffs.len());
    let mut dropped = 0u32;
    let mut olddiff: Option<i64> = None;
    for &d in diffs {
        match olddiff {
            Some(old) if old > 5 * i64::from(d) => dropped += 1,
            _ => retained.push(d),
        }
        olddiff = Some(i64::from(d));
    }
    (retained, dropped)
}

/// Renders the retained diffs as the coding string S, one token per diff
/// in arrival order.
pub fn encode(diffs: &[i32], coding: CodingId) -> Vec<u8> {
    let mut s = Vec::with_capacity(diffs.len() * 2);
    for &d in diffs {
        match coding {
            CodingId::C1 => {
                s.extend_from_slice(d.to_string().as_bytes());
            }
            CodingId::C2 => {
                s.extend_from_slice(d.unsigned_abs().to_string().as_bytes());
            }
            CodingId::C3 => {
                s.extend_from_slice(d.to_string().as_bytes());
                s.push(parity_letter(d));
            }
            CodingId::C4 => {
                s.extend_from_slice(d.unsigned_abs().to_string().as_bytes());
                s.push(parity_letter(d));
            }
        }
    }
    s
}

fn parity_letter(d: i32) -> u8 {
    if d.unsigned_abs() % 2 == 1 {
        b'A'
    } else {
        b'B'
    }
}

/// Runs the full reduction for one window of raw sequence values.
pub fn build_window(flow: FlowKey, raw_seqs: &[u64], bits: SeqFieldBits) -> OrderWindow {
    let unwrapped = unwrap_sequences(raw_seqs, bits);
    let ranks = rank_window(&unwrapped);
    let raw_diffs = compute_diffs(&ranks);
    let (diffs, dropped_overruns) = apply_overrun_filter(&raw_diffs);
    OrderWindow { flow, ranks, diffs, dropped_overruns }
}

/// Builds and encodes a window in one step.
pub fn encode_window(flow: FlowKey, raw_seqs: &[u64], bits: SeqFieldBits, coding: CodingId) -> EncodedWindow {
    let window = build_window(flow, raw_seqs, bits);
    let s = encode(&window.diffs, coding);
    EncodedWindow { window, coding, s }
}
