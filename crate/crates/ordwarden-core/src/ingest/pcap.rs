//! Minimal classic-pcap reader: both byte orders, Ethernet and raw-IP
//! link types, IPv4 with TCP or UDP on top. Anything else is skipped and
//! counted, not fatal.

use std::io::Read;

use super::IngestError;

pub const MAGIC_NATIVE: u32 = 0xa1b2_c3d4;
pub const MAGIC_SWAPPED: u32 = 0xd4c3_b2a1;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW_IP: u32 = 101;

const MAX_PACKET: u32 = 256 * 1024;

/// One captured frame: timestamp plus link-layer bytes.
#[derive(Debug)]
pub struct RawFrame {
    pub ts_us: i64,
    pub data: Vec<u8>,
}

pub struct PcapReader<R: Read> {
    inner: R,
    big_endian: bool,
    pub link_type: u32,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, IngestError> {
        let mut header = [0u8; 24];
        inner
            .read_exact(&mut header)
            .map_err(|e| IngestError::BadCapture(format!("short global header: {e}")))?;
        let magic = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let big_endian = match magic {
            MAGIC_NATIVE => false,
            MAGIC_SWAPPED => true,
            other => {
                return Err(IngestError::BadCapture(format!("unknown pcap magic {other:#010x}")));
            }
        };
        let link_type = read_u32(&header[20..24], big_endian);
        if link_type != LINKTYPE_ETHERNET && link_type != LINKTYPE_RAW_IP {
            return Err(IngestError::BadCapture(format!("unsupported link type {link_type}")));
        }
        Ok(PcapReader { inner, big_endian, link_type })
    }

    /// Reads the next frame; `Ok(None)` at a clean end of file.
    pub fn next_frame(&mut self) -> Result<Option<RawFrame>, IngestError> {
        let mut rec = [0u8; 16];
        match read_fully(&mut self.inner, &mut rec).map_err(|e| IngestError::BadCapture(e.to_string()))? {
            0 => return Ok(None),
            16 => {}
            _ => return Err(IngestError::BadCapture("truncated record header".into())),
        }
        let ts_sec = read_u32(&rec[0..4], self.big_endian);
        let ts_usec = read_u32(&rec[4..8], self.big_endian);
        let incl_len = read_u32(&rec[8..12], self.big_endian);
        if incl_len > MAX_PACKET {
            return Err(IngestError::BadCapture(format!("implausible record length {incl_len}")));
        }
        let mut data = vec![0u8; incl_len as usize];
        self.inner
            .read_exact(&mut data)
            .map_err(|_| IngestError::BadCapture("truncated record body".into()))?;
        Ok(Some(RawFrame {
            ts_us: i64::from(ts_sec) * 1_000_000 + i64::from(ts_usec),
            data,
        }))
    }
}

/// Reads until the buffer is full or EOF; returns bytes read.
fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

fn read_u32(b: &[u8], big_endian: bool) -> u32 {
    let arr: [u8; 4] = b.try_into().unwrap();
    if big_endian {
        u32::from_be_bytes(arr)
    } else {
        u32::from_le_bytes(arr)
    }
}

/// An IPv4 TCP or UDP packet picked apart far enough to key a flow and
/// locate the sequence field.
#[derive(Debug)]
pub struct ParsedPacket<'a> {
    pub src_ip: [u8; 4],
    pub dst_ip: [u8; 4],
    pub src_port: u16,
    pub dst_port: u16,
    pub is_tcp: bool,
    /// TCP header sequence number; None for UDP.
    pub tcp_seq: Option<u32>,
    pub payload: &'a [u8],
}

/// Dissects a frame down to the transport payload. Returns None for
/// anything out of scope (non-IPv4, fragments, other protocols, truncated
/// headers); the caller counts those as skipped.
pub fn parse_frame(data: &[u8], link_type: u32) -> Option<ParsedPacket<'_>> {
    let ip = match link_type {
        LINKTYPE_ETHERNET => {
            if data.len() < 14 {
                return None;
            }
            let ethertype = u16::from_be_bytes([data[12], data[13]]);
            if ethertype != 0x0800 {
                return None;
            }
            &data[14..]
        }
        LINKTYPE_RAW_IP => data,
        _ => return None,
    };
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return None;
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    if ihl < 20 || ip.len() < ihl {
        return None;
    }
    let flags_frag = u16::from_be_bytes([ip[6], ip[7]]);
    if flags_frag & 0x3fff != 0 {
        return None; // fragment reassembly is out of scope
    }
    let proto = ip[9];
    let src_ip = [ip[12], ip[13], ip[14], ip[15]];
    let dst_ip = [ip[16], ip[17], ip[18], ip[19]];
    let transport = &ip[ihl..];

    match proto {
        6 => {
            if transport.len() < 20 {
                return None;
            }
            let doff = usize::from(transport[12] >> 4) * 4;
            if doff < 20 || transport.len() < doff {
                return None;
            }
            Some(ParsedPacket {
                src_ip,
                dst_ip,
                src_port: u16::from_be_bytes([transport[0], transport[1]]),
                dst_port: u16::from_be_bytes([transport[2], transport[3]]),
                is_tcp: true,
                tcp_seq: Some(u32::from_be_bytes([
                    transport[4], transport[5], transport[6], transport[7],
                ])),
                payload: &transport[doff..],
            })
        }
        17 => {
            if transport.len() < 8 {
                return None;
            }
            Some(ParsedPacket {
                src_ip,
                dst_ip,
                src_port: u16::from_be_bytes([transport[0], transport[1]]),
                dst_port: u16::from_be_bytes([transport[2], transport[3]]),
                is_tcp: false,
                tcp_seq: None,
                payload: &transport[8..],
            })
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic() {
        let data = [0u8; 24];
        assert!(matches!(PcapReader::new(&data[..]), Err(IngestError::BadCapture(_))));
    }

    #[test]
    fn rejects_unsupported_link_type() {
        let mut header = Vec::new();
        header.extend_from_slice(&MAGIC_NATIVE.to_le_bytes());
        header.extend_from_slice(&[2, 0, 4, 0]); // version 2.4
        header.extend_from_slice(&[0; 8]); // thiszone, sigfigs
        header.extend_from_slice(&65535u32.to_le_bytes());
        header.extend_from_slice(&228u32.to_le_bytes()); // LINKTYPE_IPV4 unsupported
        assert!(PcapReader::new(&header[..]).is_err());
    }

    #[test]
    fn reads_swapped_byte_order() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC_NATIVE.to_be_bytes()); // file written big-endian
        buf.extend_from_slice(&[0, 2, 0, 4]);
        buf.extend_from_slice(&[0; 8]);
        buf.extend_from_slice(&65535u32.to_be_bytes());
        buf.extend_from_slice(&LINKTYPE_RAW_IP.to_be_bytes());
        // one 4-byte record
        buf.extend_from_slice(&7u32.to_be_bytes()); // ts_sec
        buf.extend_from_slice(&9u32.to_be_bytes()); // ts_usec
        buf.extend_from_slice(&4u32.to_be_bytes());
        buf.extend_from_slice(&4u32.to_be_bytes());
        buf.extend_from_slice(&[1, 2, 3, 4]);

        let mut r = PcapReader::new(&buf[..]).unwrap();
        let f = r.next_frame().unwrap().unwrap();
        assert_eq!(f.ts_us, 7_000_009);
        assert_eq!(f.data, vec![1, 2, 3, 4]);
        assert!(r.next_frame().unwrap().is_none());
    }

    #[test]
    fn truncated_body_is_an_error() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC_NATIVE.to_le_bytes());
        buf.extend_from_slice(&[2, 0, 4, 0]);
        buf.extend_from_slice(&[0; 8]);
        buf.extend_from_slice(&65535u32.to_le_bytes());
        buf.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
        buf.extend_from_slice(&[0; 8]); // ts
        buf.extend_from_slice(&100u32.to_le_bytes()); // claims 100 bytes
        buf.extend_from_slice(&100u32.to_le_bytes());
        buf.extend_from_slice(&[0; 10]); // provides 10
        let mut r = PcapReader::new(&buf[..]).unwrap();
        assert!(r.next_frame().is_err());
    }
}
