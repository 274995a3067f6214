//! Glue running a flow through window cutting, ordinal encoding and
//! compression to produce scored flows.

use thiserror::Error;

use crate::compress::{compress_len, CompressError, CompressorSpec};
use crate::encoding::{encode_window, CodingId};
use crate::flow::{FlowKey, PduRecord, ScoredFlow, SeqFieldBits};
use crate::ingest::{cut_windows, IngestError, WindowMode};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Compress(#[from] CompressError),
}

/// One κ measurement; `window_index` is nonzero only in sliding mode.
#[derive(Debug, Clone)]
pub struct FlowScore {
    pub scored: ScoredFlow,
    pub window_index: usize,
    pub dropped_overruns: u32,
}

/// Scores one window's worth of raw sequence values.
pub fn score_seqs(
    flow: FlowKey,
    seqs: &[u64],
    bits: SeqFieldBits,
    coding: CodingId,
    cspec: &CompressorSpec,
) -> Result<FlowScore, ScoreError> {
    let ew = encode_window(flow, seqs, bits, coding);
    let c_len = compress_len(&ew.s, cspec)?;
    Ok(FlowScore {
        scored: ScoredFlow {
            flow,
            coding,
            s_len: ew.s.len() as u64,
            c_len,
            label: None,
        },
        window_index: 0,
        dropped_overruns: ew.window.dropped_overruns,
    })
}

/// Scores every window of one flow under the given windowing mode.
pub fn score_records(
    records: &[PduRecord],
    coding: CodingId,
    mode: WindowMode,
    cspec: &CompressorSpec,
) -> Result<Vec<FlowScore>, ScoreError> {
    let windows = cut_windows(records, mode)?;
    let mut out = Vec::with_capacity(windows.len());
    for (i, w) in windows.into_iter().enumerate() {
        let seqs: Vec<u64> = w.iter().map(|r| r.seq_raw).collect();
        let mut score = score_seqs(w[0].flow, &seqs, w[0].seq_field_bits, coding, cspec)?;
        score.window_index = i;
        out.push(score);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Transport;
    use crate::synth::{generate_legit, synth_flow_key, LegitSpec};
    use num_rational::Ratio;

    #[test]
    fn in_order_flow_scores_the_anchor_value() {
        let spec = LegitSpec { p_reorder: 0.0, p_retransmit: 0.0, tail: None, ..LegitSpec::default() };
        let f = generate_legit(&spec, synth_flow_key(Transport::Generic, 0, 0), 1).unwrap();
        let scores = score_records(&f.records, CodingId::C4, WindowMode::First, &CompressorSpec::default()).unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!(scores[0].scored.s_len, 400);
        assert_eq!(scores[0].scored.c_len, 27);
        assert_eq!(scores[0].scored.kappa(), Ratio::new(400, 27));
    }

    #[test]
    fn sliding_mode_scores_every_window() {
        let spec = LegitSpec { length: 603, ..LegitSpec::default() };
        let f = generate_legit(&spec, synth_flow_key(Transport::Generic, 0, 1), 2).unwrap();
        let scores = score_records(&f.records, CodingId::C4, WindowMode::Sliding { stride: 201 }, &CompressorSpec::default()).unwrap();
        assert!(scores.len() >= 2);
        assert_eq!(scores[1].window_index, 1);
    }
}
