//! RTP data packet and RTCP compound packet codecs.
//!
//! Everything here is a pure function over byte slices. Header extensions and
//! padding are understood on receive but never generated; SDES carries only
//! CNAME on the way out.

use thiserror::Error;

pub const RTP_VERSION: u8 = 2;
pub const RTP_HEADER_LEN: usize = 12;

pub const RTCP_SR: u8 = 200;
pub const RTCP_RR: u8 = 201;
pub const RTCP_SDES: u8 = 202;
pub const RTCP_BYE: u8 = 203;

pub const SDES_END: u8 = 0;
pub const SDES_CNAME: u8 = 1;

const REPORT_BLOCK_LEN: usize = 24;
const SENDER_INFO_LEN: usize = 20;
const MAX_COUNT: usize = 31;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated packet: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unsupported RTP version {0}")]
    BadVersion(u8),
    #[error("padding count {pad} exceeds {available} available bytes")]
    BadPadding { pad: usize, available: usize },
    #[error("invalid field `{0}`")]
    InvalidField(&'static str),
    #[error("compound RTCP packet must begin with SR or RR")]
    BadCompoundOrder,
    #[error("RTCP buffer length {0} is not a multiple of 4")]
    Misaligned(usize),
}

pub type Result<T> = std::result::Result<T, WireError>;

/// An RTP data packet. The CSRC count is implied by `csrc.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RtpPacket {
    pub padding: bool,
    pub extension: bool,
    pub marker: bool,
    pub payload_type: u8,
    pub sequence: u16,
    pub timestamp: u32,
    pub ssrc: u32,
    pub csrc: Vec<u32>,
    pub payload: Vec<u8>,
}

impl RtpPacket {
    pub fn new(payload_type: u8, sequence: u16, timestamp: u32, ssrc: u32, payload: Vec<u8>) -> Self {
        Self {
            payload_type,
            sequence,
            timestamp,
            ssrc,
            payload,
            ..Self::default()
        }
    }

    pub fn header_len(&self) -> usize {
        RTP_HEADER_LEN + 4 * self.csrc.len()
    }
}

pub fn encode_rtp(pkt: &RtpPacket) -> Result<Vec<u8>> {
    if pkt.csrc.len() > 15 {
        return Err(WireError::InvalidField("csrc_count"));
    }
    if pkt.payload_type > 127 {
        return Err(WireError::InvalidField("payload_type"));
    }
    if pkt.padding {
        return Err(WireError::InvalidField("padding"));
    }
    if pkt.extension {
        return Err(WireError::InvalidField("extension"));
    }

    let mut out = Vec::with_capacity(pkt.header_len() + pkt.payload.len());
    out.push((RTP_VERSION << 6) | pkt.csrc.len() as u8);
    out.push(((pkt.marker as u8) << 7) | pkt.payload_type);
    out.extend_from_slice(&pkt.sequence.to_be_bytes());
    out.extend_from_slice(&pkt.timestamp.to_be_bytes());
    out.extend_from_slice(&pkt.ssrc.to_be_bytes());
    for csrc in &pkt.csrc {
        out.extend_from_slice(&csrc.to_be_bytes());
    }
    out.extend_from_slice(&pkt.payload);
    Ok(out)
}

pub fn decode_rtp(buf: &[u8]) -> Result<RtpPacket> {
    need(buf, RTP_HEADER_LEN)?;
    let version = buf[0] >> 6;
    if version != RTP_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let padding = buf[0] & 0x20 != 0;
    let extension = buf[0] & 0x10 != 0;
    let cc = (buf[0] & 0x0f) as usize;
    let marker = buf[1] & 0x80 != 0;
    let payload_type = buf[1] & 0x7f;
    let sequence = be16(&buf[2..]);
    let timestamp = be32(&buf[4..]);
    let ssrc = be32(&buf[8..]);

    let mut offset = RTP_HEADER_LEN + 4 * cc;
    need(buf, offset)?;
    let csrc = (0..cc).map(|i| be32(&buf[RTP_HEADER_LEN + 4 * i..])).collect();

    if extension {
        // profile-specific id (16 bits) + length in words (16 bits), then the body
        need(buf, offset + 4)?;
        let words = be16(&buf[offset + 2..]) as usize;
        offset += 4 + 4 * words;
        need(buf, offset)?;
    }

    let mut end = buf.len();
    if padding {
        let pad = buf[end - 1] as usize;
        let available = end - offset;
        if pad == 0 || pad > available {
            return Err(WireError::BadPadding { pad, available });
        }
        end -= pad;
    }

    Ok(RtpPacket {
        padding,
        extension,
        marker,
        payload_type,
        sequence,
        timestamp,
        ssrc,
        csrc,
        payload: buf[offset..end].to_vec(),
    })
}

/// Reception report block carried in SR and RR packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReportBlock {
    pub source_ssrc: u32,
    pub fraction_lost: u8,
    /// 24-bit signed on the wire.
    pub cumulative_lost: i32,
    pub extended_highest_seq: u32,
    pub interarrival_jitter: u32,
    pub last_sr: u32,
    /// Units of 1/65536 s.
    pub delay_since_last_sr: u32,
}

pub const CUMULATIVE_LOST_MAX: i32 = 0x7f_ffff;
pub const CUMULATIVE_LOST_MIN: i32 = -0x80_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SenderInfo {
    pub ntp_seconds: u32,
    pub ntp_fraction: u32,
    pub rtp_timestamp: u32,
    pub packet_count: u32,
    pub octet_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SdesChunk {
    pub ssrc: u32,
    pub cname: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RtcpPacket {
    SenderReport {
        ssrc: u32,
        info: SenderInfo,
        reports: Vec<ReportBlock>,
    },
    ReceiverReport {
        ssrc: u32,
        reports: Vec<ReportBlock>,
    },
    SourceDescription {
        chunks: Vec<SdesChunk>,
    },
    Bye {
        sources: Vec<u32>,
        reason: Option<String>,
    },
}

impl RtcpPacket {
    pub fn packet_type(&self) -> u8 {
        match self {
            RtcpPacket::SenderReport { .. } => RTCP_SR,
            RtcpPacket::ReceiverReport { .. } => RTCP_RR,
            RtcpPacket::SourceDescription { .. } => RTCP_SDES,
            RtcpPacket::Bye { .. } => RTCP_BYE,
        }
    }

    /// Reception report blocks, if this packet carries any.
    pub fn reports(&self) -> &[ReportBlock] {
        match self {
            RtcpPacket::SenderReport { reports, .. } | RtcpPacket::ReceiverReport { reports, .. } => reports,
            _ => &[],
        }
    }

    /// Encode a single packet, padded to a word boundary.
    pub fn encode(&self, out: &mut Vec<u8>) -> Result<()> {
        let start = out.len();
        let count = match self {
            RtcpPacket::SenderReport { reports, .. } | RtcpPacket::ReceiverReport { reports, .. } => reports.len(),
            RtcpPacket::SourceDescription { chunks } => chunks.len(),
            RtcpPacket::Bye { sources, .. } => sources.len(),
        };
        if count > MAX_COUNT {
            return Err(WireError::InvalidField("count"));
        }
        out.push((RTP_VERSION << 6) | count as u8);
        out.push(self.packet_type());
        out.extend_from_slice(&[0, 0]);

        match self {
            RtcpPacket::SenderReport { ssrc, info, reports } => {
                out.extend_from_slice(&ssrc.to_be_bytes());
                for word in [
                    info.ntp_seconds,
                    info.ntp_fraction,
                    info.rtp_timestamp,
                    info.packet_count,
                    info.octet_count,
                ] {
                    out.extend_from_slice(&word.to_be_bytes());
                }
                for block in reports {
                    encode_block(block, out)?;
                }
            }
            RtcpPacket::ReceiverReport { ssrc, reports } => {
                out.extend_from_slice(&ssrc.to_be_bytes());
                for block in reports {
                    encode_block(block, out)?;
                }
            }
            RtcpPacket::SourceDescription { chunks } => {
                for chunk in chunks {
                    let chunk_start = out.len();
                    out.extend_from_slice(&chunk.ssrc.to_be_bytes());
                    if let Some(cname) = &chunk.cname {
                        let len = u8::try_from(cname.len()).map_err(|_| WireError::InvalidField("cname"))?;
                        out.push(SDES_CNAME);
                        out.push(len);
                        out.extend_from_slice(cname.as_bytes());
                    }
                    // item list terminator, then null-pad the chunk to a word boundary
                    out.push(SDES_END);
                    while !(out.len() - chunk_start).is_multiple_of(4) {
                        out.push(0);
                    }
                }
            }
            RtcpPacket::Bye { sources, reason } => {
                for ssrc in sources {
                    out.extend_from_slice(&ssrc.to_be_bytes());
                }
                if let Some(reason) = reason {
                    let len = u8::try_from(reason.len()).map_err(|_| WireError::InvalidField("reason"))?;
                    out.push(len);
                    out.extend_from_slice(reason.as_bytes());
                }
                while !(out.len() - start).is_multiple_of(4) {
                    out.push(0);
                }
            }
        }

        let words = (out.len() - start) / 4 - 1;
        let words = u16::try_from(words).map_err(|_| WireError::InvalidField("length"))?;
        out[start + 2..start + 4].copy_from_slice(&words.to_be_bytes());
        Ok(())
    }
}

fn encode_block(block: &ReportBlock, out: &mut Vec<u8>) -> Result<()> {
    if !(CUMULATIVE_LOST_MIN..=CUMULATIVE_LOST_MAX).contains(&block.cumulative_lost) {
        return Err(WireError::InvalidField("cumulative_lost"));
    }
    out.extend_from_slice(&block.source_ssrc.to_be_bytes());
    let lost = (block.cumulative_lost as u32) & 0x00ff_ffff;
    out.extend_from_slice(&(((block.fraction_lost as u32) << 24) | lost).to_be_bytes());
    out.extend_from_slice(&block.extended_highest_seq.to_be_bytes());
    out.extend_from_slice(&block.interarrival_jitter.to_be_bytes());
    out.extend_from_slice(&block.last_sr.to_be_bytes());
    out.extend_from_slice(&block.delay_since_last_sr.to_be_bytes());
    Ok(())
}

fn decode_block(buf: &[u8]) -> ReportBlock {
    let word = be32(&buf[4..]);
    // sign-extend the 24-bit cumulative loss
    let cumulative_lost = ((word << 8) as i32) >> 8;
    ReportBlock {
        source_ssrc: be32(buf),
        fraction_lost: (word >> 24) as u8,
        cumulative_lost,
        extended_highest_seq: be32(&buf[8..]),
        interarrival_jitter: be32(&buf[12..]),
        last_sr: be32(&buf[16..]),
        delay_since_last_sr: be32(&buf[20..]),
    }
}

pub fn encode_rtcp_compound(pkts: &[RtcpPacket]) -> Result<Vec<u8>> {
    match pkts.first() {
        Some(RtcpPacket::SenderReport { .. }) | Some(RtcpPacket::ReceiverReport { .. }) => {}
        _ => return Err(WireError::BadCompoundOrder),
    }
    let mut out = Vec::new();
    for pkt in pkts {
        pkt.encode(&mut out)?;
    }
    Ok(out)
}

/// Parse a compound RTCP datagram. Packets of unknown type are skipped.
pub fn decode_rtcp_compound(buf: &[u8]) -> Result<Vec<RtcpPacket>> {
    if !buf.len().is_multiple_of(4) {
        return Err(WireError::Misaligned(buf.len()));
    }
    let mut pkts = Vec::new();
    let mut rest = buf;
    while !rest.is_empty() {
        need(rest, 4)?;
        let version = rest[0] >> 6;
        if version != RTP_VERSION {
            return Err(WireError::BadVersion(version));
        }
        let len = (be16(&rest[2..]) as usize + 1) * 4;
        need(rest, len)?;
        let (pkt, tail) = rest.split_at(len);
        if let Some(parsed) = decode_one(pkt)? {
            pkts.push(parsed);
        }
        rest = tail;
    }
    Ok(pkts)
}

fn decode_one(pkt: &[u8]) -> Result<Option<RtcpPacket>> {
    let count = (pkt[0] & 0x1f) as usize;
    let ptype = pkt[1];
    let mut end = pkt.len();
    if pkt[0] & 0x20 != 0 {
        let pad = pkt[end - 1] as usize;
        if pad == 0 || pad > end - 4 {
            return Err(WireError::BadPadding {
                pad,
                available: end - 4,
            });
        }
        end -= pad;
    }
    let body = &pkt[4..end];

    let parsed = match ptype {
        RTCP_SR => {
            need(body, 4 + SENDER_INFO_LEN + count * REPORT_BLOCK_LEN)?;
            let info = SenderInfo {
                ntp_seconds: be32(&body[4..]),
                ntp_fraction: be32(&body[8..]),
                rtp_timestamp: be32(&body[12..]),
                packet_count: be32(&body[16..]),
                octet_count: be32(&body[20..]),
            };
            let reports = blocks(&body[4 + SENDER_INFO_LEN..], count);
            RtcpPacket::SenderReport {
                ssrc: be32(body),
                info,
                reports,
            }
        }
        RTCP_RR => {
            need(body, 4 + count * REPORT_BLOCK_LEN)?;
            RtcpPacket::ReceiverReport {
                ssrc: be32(body),
                reports: blocks(&body[4..], count),
            }
        }
        RTCP_SDES => RtcpPacket::SourceDescription {
            chunks: decode_sdes(body, count)?,
        },
        RTCP_BYE => {
            need(body, 4 * count)?;
            let sources = (0..count).map(|i| be32(&body[4 * i..])).collect();
            let tail = &body[4 * count..];
            let reason = match tail.first() {
                Some(&len) if len > 0 => {
                    need(tail, 1 + len as usize)?;
                    Some(String::from_utf8_lossy(&tail[1..1 + len as usize]).into_owned())
                }
                _ => None,
            };
            RtcpPacket::Bye { sources, reason }
        }
        other => {
            log::warn!("skipping RTCP packet of unknown type {other}");
            return Ok(None);
        }
    };
    Ok(Some(parsed))
}

fn blocks(buf: &[u8], count: usize) -> Vec<ReportBlock> {
    buf.chunks_exact(REPORT_BLOCK_LEN)
        .take(count)
        .map(decode_block)
        .collect()
}

fn decode_sdes(body: &[u8], count: usize) -> Result<Vec<SdesChunk>> {
    let mut chunks = Vec::with_capacity(count);
    let mut pos = 0;
    for _ in 0..count {
        need(body, pos + 4)?;
        let ssrc = be32(&body[pos..]);
        pos += 4;
        let mut cname = None;
        loop {
            need(body, pos + 1)?;
            let item = body[pos];
            if item == SDES_END {
                pos += 1;
                break;
            }
            need(body, pos + 2)?;
            let len = body[pos + 1] as usize;
            need(body, pos + 2 + len)?;
            if item == SDES_CNAME {
                cname = Some(String::from_utf8_lossy(&body[pos + 2..pos + 2 + len]).into_owned());
            }
            pos += 2 + len;
        }
        // chunks end on a 32-bit boundary
        pos = pos.div_ceil(4) * 4;
        chunks.push(SdesChunk { ssrc, cname });
    }
    Ok(chunks)
}

fn need(buf: &[u8], needed: usize) -> Result<()> {
    if buf.len() < needed {
        Err(WireError::Truncated {
            needed,
            available: buf.len(),
        })
    } else {
        Ok(())
    }
}

fn be16(buf: &[u8]) -> u16 {
    u16::from_be_bytes([buf[0], buf[1]])
}

fn be32(buf: &[u8]) -> u32 {
    u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]])
}
