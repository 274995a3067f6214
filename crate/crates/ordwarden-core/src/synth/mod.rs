//! Ground-truth traffic synthesis: message-ordering covert flows and a
//! legitimate-traffic model standing in for real captures.

pub mod emit;
pub mod perm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::flow::{FlowKey, Label, PduRecord, SeqFieldBits, Transport};
use perm::{factorial, permutation_of_rank, rank_of_permutation, PermutationCode};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(&'static str),
}

/// How a covert flow picks each group's ordering.
///
/// `BitBlocks` consumes ⌊log₂ n!⌋ payload bits per group through the
/// Lehmer block code — what a real sender/receiver pair does.
/// `UniformOrder` draws every ordering uniformly from all n!, modeling a
/// channel carrying encrypted (maximum-entropy) content; this is the
/// default for evaluation corpora. Ground truth is recorded either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Randomization {
    BitBlocks,
    UniformOrder,
}

/// Parameters of a synthetic message-ordering covert flow.
#[derive(Debug, Clone)]
pub struct CovertSpec {
    /// PDUs per group.
    pub n: u8,
    /// Number of groups; the flow has exactly n·m packets.
    pub m: u32,
    pub iat_us: (u64, u64),
    pub seq_field_bits: SeqFieldBits,
    pub randomization: Randomization,
}

impl CovertSpec {
    pub fn new(n: u8, m: u32) -> Self {
        CovertSpec {
            n,
            m,
            iat_us: (10_000, 500_000),
            seq_field_bits: SeqFieldBits::B32,
            randomization: Randomization::UniformOrder,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if !(2..=5).contains(&self.n) {
            return Err(SynthError::InvalidSpec("group size must be 2..=5"));
        }
        if self.m == 0 {
            return Err(SynthError::InvalidSpec("need at least one group"));
        }
        if self.iat_us.0 > self.iat_us.1 {
            return Err(SynthError::InvalidSpec("inter-arrival range is inverted"));
        }
        Ok(())
    }
}

/// Heavy-tailed per-flow path quality. Both event probabilities are scaled
/// by one Pareto-distributed multiplier, so most flows are clean while a
/// small fraction is badly reordered — the shape real mixed captures show.
#[derive(Debug, Clone, Copy)]
pub struct ParetoTail {
    pub xm: f64,
    pub alpha: f64,
}

impl Default for ParetoTail {
    fn default() -> Self {
        ParetoTail { xm: 0.25, alpha: 1.2 }
    }
}

/// Parameters of a synthetic legitimate flow.
#[derive(Debug, Clone)]
pub struct LegitSpec {
    pub length: u32,
    /// Probability a packet is displaced 1–3 positions.
    pub p_reorder: f64,
    /// Probability a packet's sequence value is duplicated 1–3 positions later.
    pub p_retransmit: f64,
    pub iat_us: (u64, u64),
    pub seq_field_bits: SeqFieldBits,
    pub tail: Option<ParetoTail>,
}

impl Default for LegitSpec {
    fn default() -> Self {
        LegitSpec {
            length: 300,
            p_reorder: 0.01,
            p_retransmit: 0.005,
            iat_us: (10_000, 500_000),
            seq_field_bits: SeqFieldBits::B32,
            tail: Some(ParetoTail::default()),
        }
    }
}

impl LegitSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if self.length == 0 {
            return Err(SynthError::InvalidSpec("flow length must be positive"));
        }
        if !(0.0..1.0).contains(&self.p_reorder) || !(0.0..1.0).contains(&self.p_retransmit) {
            return Err(SynthError::InvalidSpec("probabilities must be in [0, 1)"));
        }
        if self.iat_us.0 > self.iat_us.1 {
            return Err(SynthError::InvalidSpec("inter-arrival range is inverted"));
        }
        Ok(())
    }
}

/// One synthesized flow with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthFlow {
    pub flow: FlowKey,
    pub label: Label,
    pub records: Vec<PduRecord>,
    /// Covert payload bits; empty for legitimate flows.
    pub ground_truth: Vec<bool>,
    pub group_size: Option<u8>,
    pub groups: Option<u32>,
    pub seed: u64,
}

const TS_BASE_US: i64 = 1_600_000_000_000_000;

fn push_rank_bits(bits: &mut Vec<bool>, rank: u64, width: u32) {
    for i in (0..width).rev() {
        bits.push(rank >> i & 1 == 1);
    }
}

/// Generates one covert flow: sequence numbers 1,2,3,… in send order,
/// emitted group-by-group in the ordering each group's rank selects.
/// Deterministic under `seed`.
pub fn generate_covert(spec: &CovertSpec, flow: FlowKey, seed: u64) -> Result<SynthFlow, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let code = PermutationCode::new(spec.n).expect("validated group size");
    let n = usize::from(spec.n);
    let modulus = spec.seq_field_bits.modulus();

    let mut records = Vec::with_capacity(n * spec.m as usize);
    let mut ground_truth = Vec::new();
    let mut ts = TS_BASE_US;
    let mut arrival: u64 = 0;

    for g in 0..u64::from(spec.m) {
        let rank = match spec.randomization {
            Randomization::BitBlocks => {
                let block = rng.gen_range(0..1u64 << code.bits_per_group());
                push_rank_bits(&mut ground_truth, block, code.bits_per_group());
                block
            }
            Randomization::UniformOrder => {
                let rank = rng.gen_range(0..factorial(spec.n));
                push_rank_bits(&mut ground_truth, rank, code.rank_bits());
                rank
            }
        };
        let perm = permutation_of_rank(rank, spec.n);
        for &p in &perm {
            let seq = g * n as u64 + u64::from(p) + 1;
            ts += rng.gen_range(spec.iat_us.0..=spec.iat_us.1) as i64;
            records.push(PduRecord {
                flow,
                arrival_index: arrival,
                seq_raw: seq % modulus,
                seq_field_bits: spec.seq_field_bits,
                timestamp_us: ts,
            });
            arrival += 1;
        }
    }

    Ok(SynthFlow {
        flow,
        label: Label::covert(spec.n).unwrap_or(Label::Covert4),
        records,
        ground_truth,
        group_size: Some(spec.n),
        groups: Some(spec.m),
        seed,
    })
}

/// Recovers the payload bits from a covert flow's arrival order — the
/// receiver side of the channel.
pub fn decode_covert(records: &[PduRecord], spec: &CovertSpec) -> Result<Vec<bool>, SynthError> {
    spec.validate()?;
    let code = PermutationCode::new(spec.n).expect("validated group size");
    let n = usize::from(spec.n);
    let modulus = spec.seq_field_bits.modulus();
    if records.len() % n != 0 {
        return Err(SynthError::InvalidSpec("flow length is not a whole number of groups"));
    }

    let mut bits = Vec::new();
    for block in records.chunks_exact(n) {
        let mut values: Vec<u64> = block.iter().map(|r| r.seq_raw).collect();
        let max = *values.iter().max().unwrap();
        let min = *values.iter().min().unwrap();
        // a group's true values are n consecutive integers mod 2^bits; a
        // wider spread means the group straddles a wraparound
        if max - min >= n as u64 {
            for v in values.iter_mut() {
                if *v < n as u64 {
                    *v += modulus;
                }
            }
        }
        let base = *values.iter().min().unwrap();
        let perm: Vec<u8> = values.iter().map(|&v| (v - base) as u8).collect();
        let rank = rank_of_permutation(&perm, spec.n)
            .map_err(|_| SynthError::InvalidSpec("arrival block is not a group permutation"))?;
        let width = match spec.randomization {
            Randomization::BitBlocks => code.bits_per_group(),
            Randomization::UniformOrder => code.rank_bits(),
        };
        push_rank_bits(&mut bits, rank, width);
    }
    Ok(bits)
}

/// Generates one legitimate flow: an in-order stream with occasional
/// displacement and duplicate injections. Deterministic under `seed`.
pub fn generate_legit(spec: &LegitSpec, flow: FlowKey, seed: u64) -> Result<SynthFlow, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let len = spec.length as usize;
    let modulus = spec.seq_field_bits.modulus();

    let quality = match spec.tail {
        Some(t) => {
            let u: f64 = rng.gen();
            t.xm / (1.0 - u).powf(1.0 / t.alpha)
        }
        None => 1.0,
    };
    let p_reorder = (spec.p_reorder * quality).min(0.6);
    let p_retransmit = (spec.p_retransmit * quality).min(0.3);

    // displacement: a delayed packet sorts after natives at its landing slot
    let mut keyed: Vec<(u64, u64)> = Vec::with_capacity(len);
    for i in 0..len as u64 {
        if rng.gen::<f64>() < p_reorder {
            let d: u64 = rng.gen_range(1..=3);
            keyed.push((2 * (i + d) + 1, i + 1));
        } else {
            keyed.push((2 * i, i + 1));
        }
    }
    keyed.sort();
    let mut seqs: Vec<u64> = keyed.into_iter().map(|(_, s)| s).collect();

    // retransmissions: duplicate value lands 1-3 positions after the original
    let mut inserts: Vec<(usize, u64)> = Vec::new();
    for p in 0..seqs.len() {
        if rng.gen::<f64>() < p_retransmit {
            let d: usize = rng.gen_range(1..=3);
            inserts.push((p + d, seqs[p]));
        }
    }
    inserts.sort();
    for &(at, seq) in inserts.iter().rev() {
        let at = at.min(seqs.len());
        seqs.insert(at, seq);
    }

    let mut records = Vec::with_capacity(seqs.len());
    let mut ts = TS_BASE_US;
    for (i, seq) in seqs.into_iter().enumerate() {
        ts += rng.gen_range(spec.iat_us.0..=spec.iat_us.1) as i64;
        records.push(PduRecord {
            flow,
            arrival_index: i as u64,
            seq_raw: seq % modulus,
            seq_field_bits: spec.seq_field_bits,
            timestamp_us: ts,
        });
    }

    Ok(SynthFlow {
        flow,
        label: Label::Legitimate,
        records,
        ground_truth: Vec::new(),
        group_size: None,
        groups: None,
        seed,
    })
}

/// Deterministic, collision-free flow key for the i-th synthesized flow of
/// a class. `class_octet` keeps covert and legitimate corpora disjoint.
pub fn synth_flow_key(transport: Transport, class_octet: u8, index: u32) -> FlowKey {
    use std::net::{IpAddr, Ipv4Addr, SocketAddr};
    let hi = (index >> 8) as u8;
    let lo = index as u8;
    let ip = IpAddr::V4(Ipv4Addr::new(10, class_octet, hi, lo));
    let a = SocketAddr::new(ip, 40000 + (index % 20000) as u16);
    let b = SocketAddr::new(ip, 20000 + (index % 10000) as u16);
    FlowKey::directed(transport, a, b).expect("ports differ")
}

/// Builds a labeled covert corpus; flow i is seeded with `master_seed ^ i`.
pub fn covert_corpus(
    spec: &CovertSpec,
    transport: Transport,
    flows: u32,
    master_seed: u64,
) -> Result<Vec<SynthFlow>, SynthError> {
    (0..flows)
        .map(|i| {
            let key = synth_flow_key(transport, spec.n, i);
            generate_covert(spec, key, master_seed ^ u64::from(i))
        })
        .collect()
}

/// Builds a labeled legitimate corpus; flow i is seeded with `master_seed ^ i`.
pub fn legit_corpus(
    spec: &LegitSpec,
    transport: Transport,
    flows: u32,
    master_seed: u64,
) -> Result<Vec<SynthFlow>, SynthError> {
    (0..flows)
        .map(|i| {
            let key = synth_flow_key(transport, 0, i);
            generate_legit(spec, key, master_seed ^ u64::from(i))
        })
        .collect()
}
