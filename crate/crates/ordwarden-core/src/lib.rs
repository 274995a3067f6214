//! Detection toolkit for message-ordering network covert channels.
//!
//! Flows are reduced to a window of packet-order ranks, the rank
//! differences are rendered as a short string, and the string's gzip
//! compressibility κ = |S|/|C| separates randomized orderings (low κ)
//! from normal traffic (high κ, peaking at 400/27 for a fully in-order
//! window). Classification is a κ threshold or a small learned decision
//! tree; a built-in synthesizer produces labeled covert and legitimate
//! corpora for end-to-end evaluation.

pub mod compress;
pub mod detect;
pub mod encoding;
pub mod flow;
pub mod ingest;
pub mod score;
pub mod synth;

pub use compress::{compress_len, kappa, CompressorSpec};
pub use detect::{
    metrics, paper_thresholds, sweep, train_tree, Model, ModelFile, ThresholdModel, TreeModel,
};
pub use encoding::{encode_window, CodingId, EncodedWindow};
pub use flow::{
    validate_pdu, FlowKey, Label, OrderWindow, PduRecord, ScoredFlow, SeqFieldBits, Transport,
    Verdict, WINDOW_DIFFS, WINDOW_PDUS,
};
pub use ingest::{cut_windows, ingest_capture, ingest_jsonl, CaptureStats, SeqExtractor, WindowMode};
pub use score::{score_records, score_seqs, FlowScore};
pub use synth::{
    decode_covert, generate_covert, generate_legit, CovertSpec, LegitSpec, Randomization, SynthFlow,
};
