//! On-wire formats.
//!
//! Every structure here has a fixed byte layout, documented in `FORMAT.md`.
//! The transport overlays a TCP-shaped header (20-byte common header plus a
//! fixed 20-byte options block) so that emulated TSO replicates it verbatim
//! across the packets split from one segment. The TSO offset of a segment
//! within its message rides in the urgent-pointer field (with the urgent flag
//! kept clear) plus a 4-bit extension nibble in the options block.

use thiserror::Error;

/// IP protocol number claimed by SDP packets. Distinct from TCP (6) and
/// UDP (17); configurable at the endpoint.
pub const SDP_PROTOCOL: u8 = 0xFD;
/// The TCP protocol number, which SDP packets must not carry.
pub const TCP_PROTOCOL: u8 = 6;

pub const NETWORK_HEADER_LEN: usize = 20;
pub const OVERLAID_HEADER_LEN: usize = 40;
pub const RECORD_HEADER_LEN: usize = 13;
pub const FRAMING_HEADER_LEN: usize = 6;
/// AEAD authentication tag length.
pub const TAG_LEN: usize = 16;
/// Network + overlaid header bytes preceding the payload of every packet.
pub const PACKET_HEADER_LEN: usize = NETWORK_HEADER_LEN + OVERLAID_HEADER_LEN;

/// TSO offsets are 20-bit: 16 bits in the urgent pointer, 4 in the options.
pub const MAX_TSO_OFFSET: u32 = (1 << 20) - 1;
pub const MAX_ORIGINAL_OFFSET: u32 = (1 << 20) - 1;
/// Largest supported message, bounded by the 20-bit TSO offset space.
pub const MAX_MESSAGE_LEN: u32 = 1 << 20;

const TCP_DATA_OFFSET_BYTE: u8 = ((OVERLAID_HEADER_LEN / 4) as u8) << 4;
const TCP_FLAG_URG: u8 = 0x20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated input: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("bad protocol number: expected {expected:#04x}, found {found:#04x}")]
    BadMagic { expected: u8, found: u8 },
    #[error("invariant violation: {0}")]
    InvariantViolation(&'static str),
    #[error("unknown packet type bits {0:#04x}")]
    UnknownPacketType(u8),
}

type Result<T> = std::result::Result<T, WireError>;

/// Splits a 20-bit TSO offset into the urgent-pointer half and the options
/// extension nibble.
pub fn split_tso_offset(offset: u32) -> Result<(u16, u8)> {
    if offset > MAX_TSO_OFFSET {
        return Err(WireError::InvariantViolation("tso_offset exceeds 20 bits"));
    }
    Ok(((offset & 0xFFFF) as u16, (offset >> 16) as u8))
}

/// Inverse of [`split_tso_offset`].
pub fn join_tso_offset(low: u16, ext: u8) -> u32 {
    ((ext as u32 & 0x0F) << 16) | low as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PacketType {
    Data,
    Grant,
    Resend,
    Ack,
}

impl PacketType {
    pub fn bits(self) -> u8 {
        match self {
            PacketType::Data => 0,
            PacketType::Grant => 1,
            PacketType::Resend => 2,
            PacketType::Ack => 3,
        }
    }

    pub fn from_bits(bits: u8) -> Result<Self> {
        match bits {
            0 => Ok(PacketType::Data),
            1 => Ok(PacketType::Grant),
            2 => Ok(PacketType::Resend),
            3 => Ok(PacketType::Ack),
            other => Err(WireError::UnknownPacketType(other)),
        }
    }
}

/// The overlaid transport header: a TCP-shaped 20-byte common header plus a
/// fixed 20-byte options block. TSO replicates all 40 bytes into every packet
/// split from a segment, so everything here is per-segment state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlaidHeader {
    pub src_port: u16,
    pub dst_port: u16,
    /// Unique per RPC per endpoint pair.
    pub message_id: u64,
    /// Plaintext length of the whole application message.
    pub message_length: u32,
    /// Byte offset of this segment's data within the message (20-bit).
    pub tso_offset: u32,
    pub packet_type: PacketType,
    pub retransmit: bool,
    /// Byte offset within the original TSO segment wire payload at which a
    /// retransmitted emission starts. Valid only when `retransmit` is set.
    pub original_offset: u32,
    /// Must stay clear: the urgent pointer is repurposed for the TSO offset
    /// and the NIC only preserves it when the flag is unset.
    pub urgent_flag: bool,
}

impl OverlaidHeader {
    pub fn validate(&self) -> Result<()> {
        if self.urgent_flag {
            return Err(WireError::InvariantViolation("urgent flag must be clear"));
        }
        if self.tso_offset > MAX_TSO_OFFSET {
            return Err(WireError::InvariantViolation("tso_offset exceeds 20 bits"));
        }
        if self.original_offset > MAX_ORIGINAL_OFFSET {
            return Err(WireError::InvariantViolation(
                "original_offset exceeds 20 bits",
            ));
        }
        if self.message_length > MAX_MESSAGE_LEN {
            return Err(WireError::InvariantViolation(
                "message_length exceeds 1 MB",
            ));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<[u8; OVERLAID_HEADER_LEN]> {
        self.validate()?;
        let (urg, ext) = split_tso_offset(self.tso_offset)?;
        let mut b = [0u8; OVERLAID_HEADER_LEN];
        b[0..2].copy_from_slice(&self.src_port.to_be_bytes());
        b[2..4].copy_from_slice(&self.dst_port.to_be_bytes());
        // Sequence and ack number space stays zero: TSO does not synthesize
        // sequence numbers for a non-TCP protocol number.
        b[12] = TCP_DATA_OFFSET_BYTE;
        b[13] = 0; // flags; URG stays clear
        // window (14..16) and checksum (16..18) stay zero; integrity comes
        // from the AEAD tag, not a transport checksum.
        b[18..20].copy_from_slice(&urg.to_be_bytes());
        b[20..28].copy_from_slice(&self.message_id.to_be_bytes());
        b[28..32].copy_from_slice(&self.message_length.to_be_bytes());
        b[32] = self.packet_type.bits() | if self.retransmit { 0x04 } else { 0 };
        b[33] = ext & 0x0F;
        let orig = self.original_offset.to_be_bytes();
        b[34..37].copy_from_slice(&orig[1..4]);
        // b[37..40] padding
        Ok(b)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < OVERLAID_HEADER_LEN {
            return Err(WireError::Truncated {
                need: OVERLAID_HEADER_LEN,
                have: bytes.len(),
            });
        }
        if bytes[12] != TCP_DATA_OFFSET_BYTE {
            return Err(WireError::InvariantViolation("unexpected data offset"));
        }
        let urg = u16::from_be_bytes([bytes[18], bytes[19]]);
        let ext = bytes[33] & 0x0F;
        let packet_type = PacketType::from_bits(bytes[32] & 0x03)?;
        Ok(OverlaidHeader {
            src_port: u16::from_be_bytes([bytes[0], bytes[1]]),
            dst_port: u16::from_be_bytes([bytes[2], bytes[3]]),
            message_id: u64::from_be_bytes(bytes[20..28].try_into().unwrap()),
            message_length: u32::from_be_bytes(bytes[28..32].try_into().unwrap()),
            tso_offset: join_tso_offset(urg, ext),
            packet_type,
            retransmit: bytes[32] & 0x04 != 0,
            original_offset: u32::from_be_bytes([0, bytes[34], bytes[35], bytes[36]]),
            urgent_flag: bytes[13] & TCP_FLAG_URG != 0,
        })
    }
}

/// IPv4-shaped network header. The per-segment IPID counter is the packet
/// ordering key within a TSO split; IPv6 has no equivalent field, which is
/// why the emulation is v4-shaped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkHeader {
    pub protocol: u8,
    /// Header + payload length of this packet.
    pub total_length: u16,
    /// Incremented from 0 across the packets of one TSO split.
    pub ipid: u16,
    pub src_addr: u32,
    pub dst_addr: u32,
}

impl NetworkHeader {
    pub fn encode(&self) -> [u8; NETWORK_HEADER_LEN] {
        let mut b = [0u8; NETWORK_HEADER_LEN];
        b[0] = 0x45; // version 4, 5-word header
        b[2..4].copy_from_slice(&self.total_length.to_be_bytes());
        b[4..6].copy_from_slice(&self.ipid.to_be_bytes());
        b[8] = 64; // ttl
        b[9] = self.protocol;
        // checksum (10..12) stays zero
        b[12..16].copy_from_slice(&self.src_addr.to_be_bytes());
        b[16..20].copy_from_slice(&self.dst_addr.to_be_bytes());
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < NETWORK_HEADER_LEN {
            return Err(WireError::Truncated {
                need: NETWORK_HEADER_LEN,
                have: bytes.len(),
            });
        }
        if bytes[0] != 0x45 {
            return Err(WireError::InvariantViolation("unexpected version/ihl"));
        }
        Ok(NetworkHeader {
            protocol: bytes[9],
            total_length: u16::from_be_bytes([bytes[2], bytes[3]]),
            ipid: u16::from_be_bytes([bytes[4], bytes[5]]),
            src_addr: u32::from_be_bytes(bytes[12..16].try_into().unwrap()),
            dst_addr: u32::from_be_bytes(bytes[16..20].try_into().unwrap()),
        })
    }
}

pub const RECORD_CONTENT_APPDATA: u8 = 0x17;
pub const RECORD_LEGACY_VERSION: u16 = 0x0303;

/// 13-byte TLS record header: the classic 5 bytes plus an explicit 64-bit
/// record sequence number. Carrying the sequence on the wire is what lets the
/// emulated device and the receiver resynchronize on out-of-order records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordHeader {
    pub content_type: u8,
    pub legacy_version: u16,
    /// Ciphertext bytes plus the 16-byte tag.
    pub length: u16,
    pub explicit_sequence: u64,
}

impl RecordHeader {
    /// Header for a record whose ciphertext (tag excluded) is `ct_len` bytes.
    pub fn for_ciphertext(ct_len: usize, seq: u64) -> Result<Self> {
        let length = ct_len
            .checked_add(TAG_LEN)
            .filter(|&l| l <= u16::MAX as usize)
            .ok_or(WireError::InvariantViolation("record length overflow"))?;
        Ok(RecordHeader {
            content_type: RECORD_CONTENT_APPDATA,
            legacy_version: RECORD_LEGACY_VERSION,
            length: length as u16,
            explicit_sequence: seq,
        })
    }

    /// Ciphertext length implied by the length field.
    pub fn ciphertext_len(&self) -> Result<usize> {
        (self.length as usize)
            .checked_sub(TAG_LEN)
            .ok_or(WireError::InvariantViolation("record length below tag size"))
    }

    pub fn encode(&self) -> [u8; RECORD_HEADER_LEN] {
        let mut b = [0u8; RECORD_HEADER_LEN];
        b[0] = self.content_type;
        b[1..3].copy_from_slice(&self.legacy_version.to_be_bytes());
        b[3..5].copy_from_slice(&self.length.to_be_bytes());
        b[5..13].copy_from_slice(&self.explicit_sequence.to_be_bytes());
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RECORD_HEADER_LEN {
            return Err(WireError::Truncated {
                need: RECORD_HEADER_LEN,
                have: bytes.len(),
            });
        }
        Ok(RecordHeader {
            content_type: bytes[0],
            legacy_version: u16::from_be_bytes([bytes[1], bytes[2]]),
            length: u16::from_be_bytes([bytes[3], bytes[4]]),
            explicit_sequence: u64::from_be_bytes(bytes[5..13].try_into().unwrap()),
        })
    }
}

/// Framing header embedded in the segment plaintext ahead of each chunk.
/// The sender positions these so that, after the sealed segment is split by
/// TSO, each packet's payload begins with one (encrypted); the receiver
/// walks them after decrypting the reassembled segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramingHeader {
    /// Byte offset of the following chunk within the segment plaintext.
    pub intra_segment_offset: u32,
    pub chunk_length: u16,
}

impl FramingHeader {
    pub fn encode(&self) -> [u8; FRAMING_HEADER_LEN] {
        let mut b = [0u8; FRAMING_HEADER_LEN];
        b[0..4].copy_from_slice(&self.intra_segment_offset.to_be_bytes());
        b[4..6].copy_from_slice(&self.chunk_length.to_be_bytes());
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FRAMING_HEADER_LEN {
            return Err(WireError::Truncated {
                need: FRAMING_HEADER_LEN,
                have: bytes.len(),
            });
        }
        Ok(FramingHeader {
            intra_segment_offset: u32::from_be_bytes(bytes[0..4].try_into().unwrap()),
            chunk_length: u16::from_be_bytes([bytes[4], bytes[5]]),
        })
    }
}

/// Cleartext payload of GRANT/RESEND/ACK control packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlPayload {
    /// Receiver permits the sender to transmit message bytes up to `offset`.
    Grant { offset: u32 },
    /// Receiver requests retransmission of message bytes `[start, end)`.
    Resend { start: u32, end: u32 },
    /// Receiver acknowledges complete delivery of the message.
    Ack,
}

impl ControlPayload {
    pub fn packet_type(&self) -> PacketType {
        match self {
            ControlPayload::Grant { .. } => PacketType::Grant,
            ControlPayload::Resend { .. } => PacketType::Resend,
            ControlPayload::Ack => PacketType::Ack,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            ControlPayload::Grant { offset } => offset.to_be_bytes().to_vec(),
            ControlPayload::Resend { start, end } => {
                let mut v = Vec::with_capacity(8);
                v.extend_from_slice(&start.to_be_bytes());
                v.extend_from_slice(&end.to_be_bytes());
                v
            }
            ControlPayload::Ack => Vec::new(),
        }
    }

    pub fn decode(ty: PacketType, bytes: &[u8]) -> Result<Self> {
        match ty {
            PacketType::Grant => {
                if bytes.len() < 4 {
                    return Err(WireError::Truncated {
                        need: 4,
                        have: bytes.len(),
                    });
                }
                Ok(ControlPayload::Grant {
                    offset: u32::from_be_bytes(bytes[0..4].try_into().unwrap()),
                })
            }
            PacketType::Resend => {
                if bytes.len() < 8 {
                    return Err(WireError::Truncated {
                        need: 8,
                        have: bytes.len(),
                    });
                }
                Ok(ControlPayload::Resend {
                    start: u32::from_be_bytes(bytes[0..4].try_into().unwrap()),
                    end: u32::from_be_bytes(bytes[4..8].try_into().unwrap()),
                })
            }
            PacketType::Ack => Ok(ControlPayload::Ack),
            PacketType::Data => Err(WireError::InvariantViolation(
                "DATA packets carry no control payload",
            )),
        }
    }
}

/// One MTU-bounded packet as produced by the emulated TSO split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WirePacket {
    pub net: NetworkHeader,
    pub overlaid: OverlaidHeader,
    pub payload: Vec<u8>,
}

impl WirePacket {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(PACKET_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.net.encode());
        out.extend_from_slice(&self.overlaid.encode()?);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }
}

/// Partitions a raw packet into network header, overlaid header, and the
/// opaque payload (possibly mid-record ciphertext).
pub fn decode_packet(bytes: &[u8], expected_protocol: u8) -> Result<(NetworkHeader, OverlaidHeader, &[u8])> {
    if bytes.len() < PACKET_HEADER_LEN {
        return Err(WireError::Truncated {
            need: PACKET_HEADER_LEN,
            have: bytes.len(),
        });
    }
    let net = NetworkHeader::decode(&bytes[..NETWORK_HEADER_LEN])?;
    if net.protocol != expected_protocol {
        return Err(WireError::BadMagic {
            expected: expected_protocol,
            found: net.protocol,
        });
    }
    if net.total_length as usize != bytes.len() {
        if (net.total_length as usize) > bytes.len() {
            return Err(WireError::Truncated {
                need: net.total_length as usize,
                have: bytes.len(),
            });
        }
        return Err(WireError::InvariantViolation("trailing bytes after packet"));
    }
    let overlaid = OverlaidHeader::decode(&bytes[NETWORK_HEADER_LEN..PACKET_HEADER_LEN])?;
    Ok((net, overlaid, &bytes[PACKET_HEADER_LEN..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_header(ty: PacketType) -> OverlaidHeader {
        OverlaidHeader {
            src_port: 4000,
            dst_port: 4001,
            message_id: 0x1122_3344_5566_7788,
            message_length: 200_000,
            tso_offset: 61_440,
            packet_type: ty,
            retransmit: false,
            original_offset: 0,
            urgent_flag: false,
        }
    }

    #[test]
    fn overlaid_header_is_40_bytes_and_round_trips() {
        for ty in [PacketType::Data, PacketType::Grant, PacketType::Resend, PacketType::Ack] {
            let h = sample_header(ty);
            let enc = h.encode().unwrap();
            assert_eq!(enc.len(), OVERLAID_HEADER_LEN);
            assert_eq!(OverlaidHeader::decode(&enc).unwrap(), h);
        }
    }

    #[test]
    fn tso_offset_zero_encodes_to_zero_fields() {
        let mut h = sample_header(PacketType::Data);
        h.tso_offset = 0;
        let enc = h.encode().unwrap();
        assert_eq!(&enc[18..20], &[0, 0]);
        assert_eq!(enc[33] & 0x0F, 0);
    }

    #[test]
    fn tso_offset_100000_splits_per_bit_arithmetic() {
        // Independent oracle: 100000 = (1 << 16) + 34464.
        let v: u32 = 100_000;
        let oracle_low = (v % (1 << 16)) as u16;
        let oracle_ext = (v / (1 << 16)) as u8;
        assert_eq!(oracle_low, 34_464);
        assert_eq!(oracle_ext, 1);

        let mut h = sample_header(PacketType::Data);
        h.tso_offset = v;
        let enc = h.encode().unwrap();
        assert_eq!(u16::from_be_bytes([enc[18], enc[19]]), oracle_low);
        assert_eq!(enc[33] & 0x0F, oracle_ext);
    }

    #[test]
    fn tso_offset_at_2_pow_20_is_rejected() {
        let mut h = sample_header(PacketType::Data);
        h.tso_offset = 1 << 20;
        assert_eq!(
            h.encode().unwrap_err(),
            WireError::InvariantViolation("tso_offset exceeds 20 bits")
        );
    }

    #[test]
    fn urgent_flag_set_is_rejected() {
        let mut h = sample_header(PacketType::Data);
        h.urgent_flag = true;
        assert!(matches!(h.encode(), Err(WireError::InvariantViolation(_))));
    }

    #[test]
    fn record_header_is_13_bytes_and_counts_the_tag() {
        let h = RecordHeader::for_ciphertext(100, 0).unwrap();
        assert_eq!(h.length, 116);
        let enc = h.encode();
        assert_eq!(enc.len(), RECORD_HEADER_LEN);
        assert_eq!(RecordHeader::decode(&enc).unwrap(), h);

        let empty = RecordHeader::for_ciphertext(0, 0).unwrap();
        assert_eq!(empty.length, 16);
    }

    #[test]
    fn record_header_rejects_length_overflow() {
        assert!(RecordHeader::for_ciphertext(u16::MAX as usize - 15, 0).is_err());
        assert!(RecordHeader::for_ciphertext(u16::MAX as usize - 16, 1).is_ok());
    }

    #[test]
    fn framing_header_round_trips() {
        let f = FramingHeader {
            intra_segment_offset: 1421,
            chunk_length: 1434,
        };
        assert_eq!(FramingHeader::decode(&f.encode()).unwrap(), f);
    }

    #[test]
    fn packet_round_trips_for_each_type() {
        for ty in [PacketType::Data, PacketType::Grant, PacketType::Resend, PacketType::Ack] {
            let overlaid = sample_header(ty);
            let payload = vec![0xAB; 32];
            let net = NetworkHeader {
                protocol: SDP_PROTOCOL,
                total_length: (PACKET_HEADER_LEN + payload.len()) as u16,
                ipid: 2,
                src_addr: 0x0A00_0001,
                dst_addr: 0x0A00_0002,
            };
            let pkt = WirePacket {
                net,
                overlaid,
                payload: payload.clone(),
            };
            let bytes = pkt.encode().unwrap();
            let (n, o, p) = decode_packet(&bytes, SDP_PROTOCOL).unwrap();
            assert_eq!(n, net);
            assert_eq!(o, overlaid);
            assert_eq!(p, &payload[..]);
        }
    }

    #[test]
    fn short_input_is_truncated() {
        let bytes = vec![0u8; 10];
        assert!(matches!(
            decode_packet(&bytes, SDP_PROTOCOL),
            Err(WireError::Truncated { .. })
        ));
    }

    #[test]
    fn tcp_protocol_number_is_bad_magic() {
        let overlaid = sample_header(PacketType::Data);
        let net = NetworkHeader {
            protocol: TCP_PROTOCOL,
            total_length: PACKET_HEADER_LEN as u16,
            ipid: 0,
            src_addr: 1,
            dst_addr: 2,
        };
        let bytes = WirePacket {
            net,
            overlaid,
            payload: vec![],
        }
        .encode()
        .unwrap();
        assert_eq!(
            decode_packet(&bytes, SDP_PROTOCOL).unwrap_err(),
            WireError::BadMagic {
                expected: SDP_PROTOCOL,
                found: TCP_PROTOCOL
            }
        );
    }

    #[test]
    fn control_payloads_round_trip() {
        for c in [
            ControlPayload::Grant { offset: 131_072 },
            ControlPayload::Resend { start: 61_440, end: 65_536 },
            ControlPayload::Ack,
        ] {
            let enc = c.encode();
            assert_eq!(ControlPayload::decode(c.packet_type(), &enc).unwrap(), c);
        }
    }
}
