//! Shared domain types: flow identity, per-packet records, order windows,
//! scored flows and ground-truth labels.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of packets in one scoring window.
pub const WINDOW_PDUS: usize = 201;

/// Number of order differences a full window yields before filtering.
pub const WINDOW_DIFFS: usize = WINDOW_PDUS - 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("sequence value {seq} does not fit in a {bits}-bit field")]
    SeqOutOfRange { seq: u64, bits: u32 },
    #[error("arrival index regressed: {next} after {prev}")]
    NonMonotonicArrival { prev: u64, next: u64 },
    #[error("flow endpoints must be distinct")]
    IdenticalEndpoints,
}

/// Transport that carries the sequence field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Generic,
}

impl Transport {
    pub fn as_str(&self) -> &'static str {
        match self {
            Transport::Tcp => "tcp",
            Transport::Generic => "gen",
        }
    }
}

/// Which of the two normalized endpoints is the sender of the scored
/// sequence space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    AToB,
    BToA,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::AToB => "ab",
            Direction::BToA => "ba",
        }
    }
}

/// Direction-normalized flow identity. The lexicographically smaller
/// endpoint is always `endpoint_a`; `direction` records which endpoint
/// sent the packets being scored. Each direction of a connection is a
/// distinct key, since sequence numbers are per-direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub transport: Transport,
    pub endpoint_a: SocketAddr,
    pub endpoint_b: SocketAddr,
    pub direction: Direction,
}

impl FlowKey {
    /// Build the key for packets sent from `src` to `dst`.
    pub fn directed(transport: Transport, src: SocketAddr, dst: SocketAddr) -> Result<Self, FlowError> {
        if src == dst {
            return Err(FlowError::IdenticalEndpoints);
        }
        let (a, b, direction) = if endpoint_key(&src) <= endpoint_key(&dst) {
            (src, dst, Direction::AToB)
        } else {
            (dst, src, Direction::BToA)
        };
        Ok(FlowKey { transport, endpoint_a: a, endpoint_b: b, direction })
    }

    /// The endpoint that sent the scored packets.
    pub fn sender(&self) -> SocketAddr {
        match self.direction {
            Direction::AToB => self.endpoint_a,
            Direction::BToA => self.endpoint_b,
        }
    }

    /// Deterministic key derived from an opaque flow name, for inputs
    /// that carry no real addressing (JSONL fixtures, synthetic flows).
    pub fn from_opaque_name(name: &str) -> Self {
        let h = fnv1a(name.as_bytes());
        let a = SocketAddr::new(
            IpAddr::V4(Ipv4Addr::new(10, (h >> 8) as u8, h as u8, 1)),
            40000 + ((h >> 16) % 20000) as u16,
        );
        let b = SocketAddr::new(
            IpAddr::V4(Ipv4Addr::new(10, (h >> 24) as u8, (h >> 32) as u8, 2)),
            40000 + ((h >> 40) % 20000) as u16,
        );
        FlowKey::directed(Transport::Generic, a, b).expect("hash-derived endpoints differ")
    }
}

fn endpoint_key(ep: &SocketAddr) -> (IpAddr, u16) {
    (ep.ip(), ep.port())
}

fn fnv1a(data: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in data {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}-{}:{}",
            self.transport.as_str(),
            self.endpoint_a,
            self.endpoint_b,
            self.direction.as_str()
        )
    }
}

impl FromStr for FlowKey {
    type Err = ();

    /// Parses the canonical rendering, e.g. `tcp:1.2.3.4:80-5.6.7.8:1024:ab`.
    fn from_str(s: &str) -> Result<Self, ()> {
        let (transport, rest) = match s.split_once(':') {
            Some(("tcp", rest)) => (Transport::Tcp, rest),
            Some(("gen", rest)) => (Transport::Generic, rest),
            _ => return Err(()),
        };
        let (rest, dir) = rest.rsplit_once(':').ok_or(())?;
        let direction = match dir {
            "ab" => Direction::AToB,
            "ba" => Direction::BToA,
            _ => return Err(()),
        };
        let (a, b) = rest.split_once('-').ok_or(())?;
        let endpoint_a: SocketAddr = a.parse().map_err(|_| ())?;
        let endpoint_b: SocketAddr = b.parse().map_err(|_| ())?;
        if endpoint_key(&endpoint_a) > endpoint_key(&endpoint_b) {
            return Err(());
        }
        Ok(FlowKey { transport, endpoint_a, endpoint_b, direction })
    }
}

/// Width of the protocol's sequence-number field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeqFieldBits {
    B8,
    B32,
}

impl SeqFieldBits {
    pub fn bits(&self) -> u32 {
        match self {
            SeqFieldBits::B8 => 8,
            SeqFieldBits::B32 => 32,
        }
    }

    /// 2^bits, the wraparound modulus of the field.
    pub fn modulus(&self) -> u64 {
        1u64 << self.bits()
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(SeqFieldBits::B8),
            32 => Some(SeqFieldBits::B32),
            _ => None,
        }
    }
}

/// One captured packet reduced to its sequence metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PduRecord {
    pub flow: FlowKey,
    /// 0-based position within the flow, in capture order.
    pub arrival_index: u64,
    /// Raw value of the sequence field, still subject to wraparound.
    pub seq_raw: u64,
    pub seq_field_bits: SeqFieldBits,
    /// Microseconds since the epoch.
    pub timestamp_us: i64,
}

/// Checks a record's invariants: the sequence value fits its field and the
/// arrival index did not regress relative to `prev_arrival`.
pub fn validate_pdu(p: &PduRecord, prev_arrival: Option<u64>) -> Result<&PduRecord, FlowError> {
    if p.seq_raw >= p.seq_field_bits.modulus() {
        return Err(FlowError::SeqOutOfRange { seq: p.seq_raw, bits: p.seq_field_bits.bits() });
    }
    if let Some(prev) = prev_arrival {
        if p.arrival_index <= prev {
            return Err(FlowError::NonMonotonicArrival { prev, next: p.arrival_index });
        }
    }
    Ok(p)
}

/// A window of [`WINDOW_PDUS`] packets reduced to send-order ranks and the
/// retained signed order differences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderWindow {
    pub flow: FlowKey,
    /// Send-order position (1-based) of each arrived packet.
    pub ranks: Vec<u32>,
    /// Differences between consecutive ranks that survived the overrun filter.
    pub diffs: Vec<i32>,
    /// Differences suppressed by the overrun filter.
    pub dropped_overruns: u32,
}

/// Ground truth for a synthesized or annotated flow. Covert labels carry
/// the PDU-group size so per-type evaluation needs no side tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Legitimate,
    Covert2,
    Covert3,
    Covert4,
}

impl Label {
    pub fn is_covert(&self) -> bool {
        !matches!(self, Label::Legitimate)
    }

    pub fn verdict(&self) -> Verdict {
        if self.is_covert() {
            Verdict::Covert
        } else {
            Verdict::Legitimate
        }
    }

    pub fn covert(group_size: u8) -> Option<Label> {
        match group_size {
            2 => Some(Label::Covert2),
            3 => Some(Label::Covert3),
            4 => Some(Label::Covert4),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Legitimate => "legitimate",
            Label::Covert2 => "covert2",
            Label::Covert3 => "covert3",
            Label::Covert4 => "covert4",
        }
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "legitimate" => Ok(Label::Legitimate),
            "covert2" => Ok(Label::Covert2),
            "covert3" => Ok(Label::Covert3),
            "covert4" => Ok(Label::Covert4),
            _ => Err(()),
        }
    }
}

/// Classifier output. Covert group sizes all collapse to the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Legitimate,
    Covert,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Legitimate => "legitimate",
            Verdict::Covert => "covert",
        }
    }
}

/// A flow reduced to its compressibility score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredFlow {
    pub flow: FlowKey,
    pub coding: crate::encoding::CodingId,
    pub s_len: u64,
    pub c_len: u64,
    pub label: Option<Label>,
}

impl ScoredFlow {
    /// κ = |S| / |C|, kept exact.
    pub fn kappa(&self) -> Ratio<u64> {
        Ratio::new(self.s_len, self.c_len)
    }

    pub fn kappa_f64(&self) -> f64 {
        self.s_len as f64 / self.c_len as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(s: &str) -> SocketAddr {
        s.parse().unwrap()
    }

    fn pdu(seq_raw: u64, bits: SeqFieldBits) -> PduRecord {
        PduRecord {
            flow: FlowKey::from_opaque_name("t"),
            arrival_index: 0,
            seq_raw,
            seq_field_bits: bits,
            timestamp_us: 0,
        }
    }

    #[test]
    fn validate_accepts_boundary_values() {
        assert!(validate_pdu(&pdu(255, SeqFieldBits::B8), None).is_ok());
        assert!(validate_pdu(&pdu((1u64 << 32) - 1, SeqFieldBits::B32), None).is_ok());
    }

    #[test]
    fn validate_rejects_one_past_max() {
        assert_eq!(
            validate_pdu(&pdu(256, SeqFieldBits::B8), None),
            Err(FlowError::SeqOutOfRange { seq: 256, bits: 8 })
        );
        assert!(validate_pdu(&pdu(1u64 << 32, SeqFieldBits::B32), None).is_err());
    }

    #[test]
    fn validate_rejects_regressed_arrival() {
        let mut p = pdu(1, SeqFieldBits::B8);
        p.arrival_index = 5;
        assert!(validate_pdu(&p, Some(4)).is_ok());
        assert_eq!(
            validate_pdu(&p, Some(5)),
            Err(FlowError::NonMonotonicArrival { prev: 5, next: 5 })
        );
    }

    #[test]
    fn flow_key_normalizes_endpoint_order() {
        let x = addr("10.0.0.2:5000");
        let y = addr("10.0.0.1:80");
        let k = FlowKey::directed(Transport::Tcp, x, y).unwrap();
        assert_eq!(k.endpoint_a, y);
        assert_eq!(k.endpoint_b, x);
        assert_eq!(k.direction, Direction::BToA);
        assert_eq!(k.sender(), x);

        let reverse = FlowKey::directed(Transport::Tcp, y, x).unwrap();
        assert_eq!(reverse.endpoint_a, y);
        assert_eq!(reverse.direction, Direction::AToB);
        assert_ne!(k, reverse);
    }

    #[test]
    fn flow_key_rejects_identical_endpoints() {
        let x = addr("10.0.0.1:80");
        assert_eq!(FlowKey::directed(Transport::Tcp, x, x), Err(FlowError::IdenticalEndpoints));
    }

    #[test]
    fn flow_key_display_round_trips() {
        let k = FlowKey::directed(Transport::Tcp, addr("10.0.0.2:5000"), addr("10.0.0.1:80")).unwrap();
        let s = k.to_string();
        assert_eq!(s.parse::<FlowKey>().unwrap(), k);

        let opaque = FlowKey::from_opaque_name("flow-17");
        assert_eq!(opaque, FlowKey::from_opaque_name("flow-17"));
        assert_ne!(opaque, FlowKey::from_opaque_name("flow-18"));
        assert_eq!(opaque.to_string().parse::<FlowKey>().unwrap(), opaque);
    }

    #[test]
    fn labels_collapse_to_positive_class() {
        assert_eq!(Label::Covert2.verdict(), Verdict::Covert);
        assert_eq!(Label::Covert3.verdict(), Verdict::Covert);
        assert_eq!(Label::Covert4.verdict(), Verdict::Covert);
        assert_eq!(Label::Legitimate.verdict(), Verdict::Legitimate);
    }

    #[test]
    fn kappa_is_exact() {
        let f = ScoredFlow {
            flow: FlowKey::from_opaque_name("t"),
            coding: crate::encoding::CodingId::C4,
            s_len: 400,
            c_len: 27,
            label: None,
        };
        assert_eq!(f.kappa(), Ratio::new(400u64, 27u64));
    }
}
