//! Deterministic gzip compression of coding strings and the
//! compressibility score κ = |S| / |C|.
//!
//! |C| counts the whole gzip member (header, DEFLATE stream, CRC32 and
//! ISIZE trailer), reproducing `gzip -9 --no-name` byte for byte: the
//! in-order anchor string "1A"×200 must compress to exactly 27 bytes or
//! every threshold in the detector shifts.

use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::{Compression, Crc};
use num_rational::Ratio;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompressError {
    #[error("cannot compress an empty string")]
    EmptyInput,
    #[error("|S| and |C| must both be positive")]
    DivisionByZero,
}

/// Pinned compressor contract. Identical input bytes produce identical
/// output bytes across runs and platforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressorSpec {
    /// DEFLATE effort; fixed at the `-9` setting.
    pub level: u32,
    /// Header MTIME field; `--no-name` behavior pins it to zero.
    pub mtime: u32,
    /// Header OS byte, pinned so output is platform-independent.
    pub os_byte: u8,
}

impl Default for CompressorSpec {
    fn default() -> Self {
        CompressorSpec { level: 9, mtime: 0, os_byte: 0x03 }
    }
}

/// Produces the full gzip member for `s`.
pub fn gzip_member(s: &[u8], spec: &CompressorSpec) -> Result<Vec<u8>, CompressError> {
    if s.is_empty() {
        return Err(CompressError::EmptyInput);
    }
    let mut out = Vec::with_capacity(s.len() / 4 + 32);
    // header: magic, CM=8 (deflate), FLG=0 (no FNAME), MTIME, XFL, OS
    out.extend_from_slice(&[0x1f, 0x8b, 0x08, 0x00]);
    out.extend_from_slice(&spec.mtime.to_le_bytes());
    let xfl = match spec.level {
        9 => 0x02,
        1 => 0x04,
        _ => 0x00,
    };
    out.push(xfl);
    out.push(spec.os_byte);

    let mut enc = DeflateEncoder::new(out, Compression::new(spec.level));
    enc.write_all(s).expect("writing to Vec cannot fail");
    let mut out = enc.finish().expect("deflate of in-memory buffer cannot fail");

    let mut crc = Crc::new();
    crc.update(s);
    out.extend_from_slice(&crc.sum().to_le_bytes());
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    Ok(out)
}

/// Size in bytes of the gzip member for `s`.
pub fn compress_len(s: &[u8], spec: &CompressorSpec) -> Result<u64, CompressError> {
    Ok(gzip_member(s, spec)?.len() as u64)
}

/// κ = |S| / |C|, exact.
pub fn kappa(s_len: u64, c_len: u64) -> Result<Ratio<u64>, CompressError> {
    if s_len == 0 || c_len == 0 {
        return Err(CompressError::DivisionByZero);
    }
    Ok(Ratio::new(s_len, c_len))
}

/// Cross-validation escape hatch: compress via the system `gzip -9
/// --no-name` binary. Returns `None` when the binary is unavailable.
/// Meant for tests that check the embedded compressor against the real
/// tool, not for scoring.
pub fn system_gzip_len(s: &[u8]) -> Option<u64> {
    use std::process::{Command, Stdio};
    let mut child = Command::new("gzip")
        .args(["-9", "--no-name", "-c"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .ok()?;
    child.stdin.take()?.write_all(s).ok()?;
    let out = child.wait_with_output().ok()?;
    if out.status.success() {
        Some(out.stdout.len() as u64)
    } else {
        None
    }
}
