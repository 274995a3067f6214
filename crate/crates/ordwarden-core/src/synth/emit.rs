//! Serialization of synthesized flows: classic pcap, the JSONL flow
//! format, and the ground-truth labels sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::Path;

use thiserror::Error;

use super::SynthFlow;
use crate::flow::{PduRecord, SeqFieldBits, Transport};
use crate::ingest::pcap::{LINKTYPE_ETHERNET, MAGIC_NATIVE};
use crate::ingest::JsonlPacket;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("nothing to emit")]
    NoFlows,
    #[error("TCP framing requires 32-bit sequence numbers")]
    TcpNeedsWideSeq,
    #[error("pcap framing needs IPv4 endpoints")]
    NeedsIpv4,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Pcap,
    Jsonl,
}

impl std::str::FromStr for EmitFormat {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "pcap" => Ok(EmitFormat::Pcap),
            "jsonl" => Ok(EmitFormat::Jsonl),
            _ => Err(()),
        }
    }
}

/// Writes flows to `path` in the requested format.
pub fn emit(flows: &[SynthFlow], format: EmitFormat, path: &Path) -> Result<(), EmitError> {
    if flows.is_empty() {
        return Err(EmitError::NoFlows);
    }
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        EmitFormat::Pcap => write_pcap(flows, &mut w)?,
        EmitFormat::Jsonl => write_jsonl(flows, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

/// One JSONL object per packet, flows concatenated in order.
pub fn write_jsonl<W: Write>(flows: &[SynthFlow], w: &mut W) -> Result<(), EmitError> {
    for f in flows {
        for r in &f.records {
            let pkt = JsonlPacket {
                flow: f.flow.to_string(),
                i: r.arrival_index,
                seq: r.seq_raw,
                bits: r.seq_field_bits.bits(),
                ts_us: r.timestamp_us,
            };
            serde_json::to_writer(&mut *w, &pkt).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Classic pcap (Ethernet link type), packets from all flows merged in
/// timestamp order. UDP frames carry the sequence bytes at payload offset
/// zero; TCP frames carry the value in the real header sequence field.
pub fn write_pcap<W: Write>(flows: &[SynthFlow], w: &mut W) -> Result<(), EmitError> {
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (fi, f) in flows.iter().enumerate() {
        for ri in 0..f.records.len() {
            order.push((fi, ri));
        }
    }
    order.sort_by_key(|&(fi, ri)| {
        let r = &flows[fi].records[ri];
        (r.timestamp_us, flows[fi].flow, r.arrival_index)
    });

    // global header
    w.write_all(&MAGIC_NATIVE.to_le_bytes())?;
    w.write_all(&2u16.to_le_bytes())?;
    w.write_all(&4u16.to_le_bytes())?;
    w.write_all(&0i32.to_le_bytes())?; // thiszone
    w.write_all(&0u32.to_le_bytes())?; // sigfigs
    w.write_all(&65535u32.to_le_bytes())?;
    w.write_all(&LINKTYPE_ETHERNET.to_le_bytes())?;

    for (fi, ri) in order {
        let f = &flows[fi];
        let r = &f.records[ri];
        let frame = build_frame(f, r)?;
        let ts_sec = (r.timestamp_us / 1_000_000) as u32;
        let ts_usec = (r.timestamp_us % 1_000_000) as u32;
        w.write_all(&ts_sec.to_le_bytes())?;
        w.write_all(&ts_usec.to_le_bytes())?;
        w.write_all(&(frame.len() as u32).to_le_bytes())?;
        w.write_all(&(frame.len() as u32).to_le_bytes())?;
        w.write_all(&frame)?;
    }
    Ok(())
}

fn ipv4_octets(addr: SocketAddr) -> Result<[u8; 4], EmitError> {
    match addr.ip() {
        IpAddr::V4(ip) => Ok(ip.octets()),
        IpAddr::V6(_) => Err(EmitError::NeedsIpv4),
    }
}

fn build_frame(f: &SynthFlow, r: &PduRecord) -> Result<Vec<u8>, EmitError> {
    let src = f.flow.sender();
    let dst = if src == f.flow.endpoint_a { f.flow.endpoint_b } else { f.flow.endpoint_a };

    let (proto, transport_bytes) = match f.flow.transport {
        Transport::Tcp => {
            if r.seq_field_bits != SeqFieldBits::B32 {
                return Err(EmitError::TcpNeedsWideSeq);
            }
            let mut t = Vec::with_capacity(21);
            t.extend_from_slice(&src.port().to_be_bytes());
            t.extend_from_slice(&dst.port().to_be_bytes());
            t.extend_from_slice(&(r.seq_raw as u32).to_be_bytes());
            t.extend_from_slice(&0u32.to_be_bytes()); // ack
            t.extend_from_slice(&[0x50, 0x10]); // data offset 5, ACK
            t.extend_from_slice(&0xffffu16.to_be_bytes()); // window
            t.extend_from_slice(&[0, 0, 0, 0]); // checksum, urgent
            t.push(0); // one payload byte keeps the byte stream consistent
            (6u8, t)
        }
        Transport::Generic => {
            let payload: Vec<u8> = match r.seq_field_bits {
                SeqFieldBits::B8 => vec![r.seq_raw as u8],
                SeqFieldBits::B32 => (r.seq_raw as u32).to_be_bytes().to_vec(),
            };
            let mut t = Vec::with_capacity(8 + payload.len());
            t.extend_from_slice(&src.port().to_be_bytes());
            t.extend_from_slice(&dst.port().to_be_bytes());
            t.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
            t.extend_from_slice(&[0, 0]); // checksum optional over IPv4
            t.extend_from_slice(&payload);
            (17u8, t)
        }
    };

    let total_len = 20 + transport_bytes.len();
    let mut ip = Vec::with_capacity(total_len);
    ip.push(0x45);
    ip.push(0);
    ip.extend_from_slice(&(total_len as u16).to_be_bytes());
    ip.extend_from_slice(&(r.arrival_index as u16).to_be_bytes()); // id
    ip.extend_from_slice(&[0x40, 0x00]); // DF
    ip.push(64); // ttl
    ip.push(proto);
    ip.extend_from_slice(&[0, 0]); // checksum placeholder
    ip.extend_from_slice(&ipv4_octets(src)?);
    ip.extend_from_slice(&ipv4_octets(dst)?);
    let csum = ipv4_checksum(&ip[..20]);
    ip[10..12].copy_from_slice(&csum.to_be_bytes());
    ip.extend_from_slice(&transport_bytes);

    let mut frame = Vec::with_capacity(14 + ip.len());
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]); // dst mac
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]); // src mac
    frame.extend_from_slice(&0x0800u16.to_be_bytes());
    frame.extend_from_slice(&ip);
    Ok(frame)
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum = 0u32;
    for chunk in header.chunks(2) {
        sum += u32::from(u16::from_be_bytes([chunk[0], chunk[1]]));
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Ground-truth sidecar: `flow_id,label,n,m,seed`, one row per flow.
pub fn write_labels<W: Write>(flows: &[SynthFlow], w: &mut W) -> Result<(), EmitError> {
    writeln!(w, "flow_id,label,n,m,seed")?;
    for f in flows {
        let n = f.group_size.map(|v| v.to_string()).unwrap_or_default();
        let m = f.groups.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", f.flow, f.label.as_str(), n, m, f.seed)?;
    }
    Ok(())
}

/// Writes the labels sidecar to a file.
pub fn emit_labels(flows: &[SynthFlow], path: &Path) -> Result<(), EmitError> {
    if flows.is_empty() {
        return Err(EmitError::NoFlows);
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_labels(flows, &mut w)?;
    w.flush()?;
    Ok(())
}
