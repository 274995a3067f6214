//! Capture ingestion: read pcap or JSONL inputs, assemble per-direction
//! flows, extract sequence fields, and cut fixed scoring windows.

pub mod pcap;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{validate_pdu, FlowKey, PduRecord, SeqFieldBits, Transport, WINDOW_PDUS};
use pcap::{parse_frame, PcapReader};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed capture: {0}")]
    BadCapture(String),
    #[error("no flow reaches {WINDOW_PDUS} usable packets")]
    NoUsableFlows { stats: CaptureStats },
    #[error("flow has {len} packets, one window needs {WINDOW_PDUS}")]
    FlowTooShort { len: usize },
    #[error("sliding stride must be positive")]
    BadStride,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where in a packet the sequence field lives.
///
/// `Tcp32` reads the TCP header sequence number. The generic extractors
/// read the field out of the transport payload at a byte offset, the way
/// CCEAP-style tools carry an 8-bit counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqExtractor {
    Tcp32,
    Generic8 { offset: usize },
    Generic32 { offset: usize },
}

impl SeqExtractor {
    pub fn bits(&self) -> SeqFieldBits {
        match self {
            SeqExtractor::Tcp32 | SeqExtractor::Generic32 { .. } => SeqFieldBits::B32,
            SeqExtractor::Generic8 { .. } => SeqFieldBits::B8,
        }
    }

    fn transport(&self) -> Transport {
        match self {
            SeqExtractor::Tcp32 => Transport::Tcp,
            _ => Transport::Generic,
        }
    }
}

/// Counters accumulated over one ingestion pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CaptureStats {
    pub packets_read: u64,
    pub flows_seen: u64,
    /// Flows with at least one full scoring window.
    pub flows_with_window: u64,
    pub packets_skipped: u64,
}

/// One packet of the JSONL flow format, the capture bypass used by tests
/// and the synthesizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonlPacket {
    pub flow: String,
    pub i: u64,
    pub seq: u64,
    pub bits: u32,
    pub ts_us: i64,
}

pub type FlowMap = BTreeMap<FlowKey, Vec<PduRecord>>;

/// Reads a classic pcap capture and assembles per-direction flows in
/// capture order. Packets without an extractable sequence field are
/// counted as skipped. Errors with `NoUsableFlows` when nothing reaches a
/// full window.
pub fn ingest_capture(
    path: &Path,
    extractor: SeqExtractor,
    filter: Option<&dyn Fn(&FlowKey) -> bool>,
) -> Result<(FlowMap, CaptureStats), IngestError> {
    let mut reader = PcapReader::new(BufReader::new(File::open(path)?))?;
    let mut flows: FlowMap = BTreeMap::new();
    let mut stats = CaptureStats::default();
    let link_type = reader.link_type;

    while let Some(frame) = reader.next_frame()? {
        stats.packets_read += 1;
        let Some((key, seq_raw)) = extract_pdu(&frame.data, link_type, extractor) else {
            stats.packets_skipped += 1;
            continue;
        };
        if let Some(f) = filter {
            if !f(&key) {
                stats.packets_skipped += 1;
                continue;
            }
        }
        let records = flows.entry(key).or_default();
        records.push(PduRecord {
            flow: key,
            arrival_index: records.len() as u64,
            seq_raw,
            seq_field_bits: extractor.bits(),
            timestamp_us: frame.ts_us,
        });
    }
    finish_stats(flows, stats)
}

fn extract_pdu(data: &[u8], link_type: u32, extractor: SeqExtractor) -> Option<(FlowKey, u64)> {
    let p = parse_frame(data, link_type)?;
    let seq_raw = match extractor {
        SeqExtractor::Tcp32 => u64::from(p.tcp_seq?),
        SeqExtractor::Generic8 { offset } => u64::from(*p.payload.get(offset)?),
        SeqExtractor::Generic32 { offset } => {
            let b = p.payload.get(offset..offset + 4)?;
            u64::from(u32::from_be_bytes(b.try_into().unwrap()))
        }
    };
    let src = SocketAddr::new(IpAddr::V4(Ipv4Addr::from(p.src_ip)), p.src_port);
    let dst = SocketAddr::new(IpAddr::V4(Ipv4Addr::from(p.dst_ip)), p.dst_port);
    let key = FlowKey::directed(extractor.transport(), src, dst).ok()?;
    Some((key, seq_raw))
}

/// Reads the JSONL flow format. Each line carries its own field width and
/// arrival index; indices must increase strictly within a flow.
pub fn ingest_jsonl<R: Read>(
    input: R,
    filter: Option<&dyn Fn(&FlowKey) -> bool>,
) -> Result<(FlowMap, CaptureStats), IngestError> {
    let mut flows: FlowMap = BTreeMap::new();
    let mut stats = CaptureStats::default();

    for (lineno, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.packets_read += 1;
        let pkt: JsonlPacket = serde_json::from_str(&line)
            .map_err(|e| IngestError::BadCapture(format!("line {}: {e}", lineno + 1)))?;
        let bits = SeqFieldBits::from_bits(pkt.bits)
            .ok_or_else(|| IngestError::BadCapture(format!("line {}: bits must be 8 or 32", lineno + 1)))?;
        let key = pkt.flow.parse::<FlowKey>().unwrap_or_else(|_| FlowKey::from_opaque_name(&pkt.flow));
        if let Some(f) = filter {
            if !f(&key) {
                stats.packets_skipped += 1;
                continue;
            }
        }
        let records = flows.entry(key).or_default();
        let record = PduRecord {
            flow: key,
            arrival_index: pkt.i,
            seq_raw: pkt.seq,
            seq_field_bits: bits,
            timestamp_us: pkt.ts_us,
        };
        let prev = records.last().map(|r| r.arrival_index);
        validate_pdu(&record, prev)
            .map_err(|e| IngestError::BadCapture(format!("line {}: {e}", lineno + 1)))?;
        records.push(record);
    }
    finish_stats(flows, stats)
}

/// Dispatches on file extension: `.jsonl`/`.ndjson` use the JSONL reader,
/// anything else is treated as pcap.
pub fn ingest_path(
    path: &Path,
    extractor: SeqExtractor,
    filter: Option<&dyn Fn(&FlowKey) -> bool>,
) -> Result<(FlowMap, CaptureStats), IngestError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("ndjson") => ingest_jsonl(File::open(path)?, filter),
        _ => ingest_capture(path, extractor, filter),
    }
}

fn finish_stats(flows: FlowMap, mut stats: CaptureStats) -> Result<(FlowMap, CaptureStats), IngestError> {
    stats.flows_seen = flows.len() as u64;
    stats.flows_with_window = flows.values().filter(|r| r.len() >= WINDOW_PDUS).count() as u64;
    if stats.flows_with_window == 0 {
        return Err(IngestError::NoUsableFlows { stats });
    }
    Ok((flows, stats))
}

/// Windowing policy: one score per flow, or a sliding surveillance mode
/// for long flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    First,
    Sliding { stride: usize },
}

/// Cuts raw windows of [`WINDOW_PDUS`] packets out of one flow.
pub fn cut_windows(records: &[PduRecord], mode: WindowMode) -> Result<Vec<&[PduRecord]>, IngestError> {
    if records.len() < WINDOW_PDUS {
        return Err(IngestError::FlowTooShort { len: records.len() });
    }
    match mode {
        WindowMode::First => Ok(vec![&records[..WINDOW_PDUS]]),
        WindowMode::Sliding { stride } => {
            if stride == 0 {
                return Err(IngestError::BadStride);
            }
            Ok((0..=records.len() - WINDOW_PDUS)
                .step_by(stride)
                .map(|start| &records[start..start + WINDOW_PDUS])
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Label;
    use crate::synth::{generate_legit, synth_flow_key, LegitSpec};

    fn records(n: usize) -> Vec<PduRecord> {
        let spec = LegitSpec {
            length: n as u32,
            p_reorder: 0.0,
            p_retransmit: 0.0,
            tail: None,
            ..LegitSpec::default()
        };
        generate_legit(&spec, synth_flow_key(Transport::Generic, 0, 0), 1).unwrap().records
    }

    #[test]
    fn first_mode_yields_one_window() {
        let r = records(201);
        let w = cut_windows(&r, WindowMode::First).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].len(), 201);

        let r = records(500);
        let w = cut_windows(&r, WindowMode::First).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0][0].arrival_index, 0);
        assert_eq!(w[0][200].arrival_index, 200);
    }

    #[test]
    fn sliding_mode_counts_windows() {
        let r = records(402);
        let w = cut_windows(&r, WindowMode::Sliding { stride: 201 }).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1][0].arrival_index, 201);

        let w = cut_windows(&r, WindowMode::Sliding { stride: 100 }).unwrap();
        assert_eq!(w.len(), (402 - 201) / 100 + 1);
    }

    #[test]
    fn short_flow_is_rejected() {
        let r = records(150);
        assert!(matches!(cut_windows(&r, WindowMode::First), Err(IngestError::FlowTooShort { len: 150 })));
    }

    #[test]
    fn jsonl_round_trip_preserves_records() {
        let spec = LegitSpec::default();
        let f = generate_legit(&spec, synth_flow_key(Transport::Generic, 0, 3), 42).unwrap();
        let mut buf = Vec::new();
        crate::synth::emit::write_jsonl(std::slice::from_ref(&f), &mut buf).unwrap();

        let (flows, stats) = ingest_jsonl(&buf[..], None).unwrap();
        assert_eq!(stats.flows_seen, 1);
        assert_eq!(stats.flows_with_window, 1);
        assert_eq!(stats.packets_read, f.records.len() as u64);
        assert_eq!(flows.values().next().unwrap(), &f.records);
        assert_eq!(f.label, Label::Legitimate);
    }

    #[test]
    fn jsonl_rejects_regressed_arrival_index() {
        let lines = r#"{"flow":"a","i":1,"seq":10,"bits":8,"ts_us":0}
{"flow":"a","i":0,"seq":11,"bits":8,"ts_us":1}"#;
        assert!(matches!(ingest_jsonl(lines.as_bytes(), None), Err(IngestError::BadCapture(_))));
    }

    #[test]
    fn jsonl_rejects_out_of_range_seq() {
        let line = r#"{"flow":"a","i":0,"seq":256,"bits":8,"ts_us":0}"#;
        assert!(matches!(ingest_jsonl(line.as_bytes(), None), Err(IngestError::BadCapture(_))));
    }

    #[test]
    fn below_window_flows_trigger_no_usable_flows() {
        let f = generate_legit(
            &LegitSpec { length: 150, ..LegitSpec::default() },
            synth_flow_key(Transport::Generic, 0, 1),
            2,
        )
        .unwrap();
        let mut buf = Vec::new();
        crate::synth::emit::write_jsonl(std::slice::from_ref(&f), &mut buf).unwrap();
        match ingest_jsonl(&buf[..], None) {
            Err(IngestError::NoUsableFlows { stats }) => {
                assert_eq!(stats.flows_seen, 1);
                assert_eq!(stats.flows_with_window, 0);
            }
            other => panic!("expected NoUsableFlows, got {other:?}"),
        }
    }

    #[test]
    fn filter_drops_flows() {
        let spec = LegitSpec::default();
        let a = generate_legit(&spec, synth_flow_key(Transport::Generic, 0, 0), 1).unwrap();
        let b = generate_legit(&spec, synth_flow_key(Transport::Generic, 0, 1), 2).unwrap();
        let mut buf = Vec::new();
        crate::synth::emit::write_jsonl(&[a.clone(), b], &mut buf).unwrap();

        let keep = a.flow;
        let pred = move |k: &FlowKey| *k == keep;
        let (flows, stats) = ingest_jsonl(&buf[..], Some(&pred)).unwrap();
        assert_eq!(flows.len(), 1);
        assert!(stats.packets_skipped > 0);
    }
}
