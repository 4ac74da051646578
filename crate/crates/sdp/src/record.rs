//! AEAD record layer.
//!
//! One TLS record covers exactly one TSO segment. Records are AES-128-GCM
//! with a 16-byte tag; the nonce is the session IV XORed with the 64-bit
//! record sequence number (the standard record-layer construction, which is
//! what the NIC offload engine implements). The AAD is the full 13-byte
//! record header, binding sequence and length to the ciphertext.

use std::collections::HashSet;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes128Gcm, Nonce};
use thiserror::Error;

use crate::wire::{RecordHeader, WireError, RECORD_HEADER_LEN, TAG_LEN};

pub const KEY_LEN: usize = 16;
pub const IV_LEN: usize = 12;
/// Largest plaintext a single record can carry: the 16-bit length field
/// counts ciphertext plus tag.
pub const MAX_RECORD_PLAINTEXT: usize = u16::MAX as usize - TAG_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("plaintext of {len} bytes overflows the record length field")]
    Oversize { len: usize },
    #[error("authentication failure")]
    AuthFailure,
    #[error("record sequence {seq} already accepted")]
    ReplayedRecord { seq: u64 },
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Raw AEAD key material, as installed into an emulated NIC flow context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyMaterial {
    pub key: [u8; KEY_LEN],
    pub iv: [u8; IV_LEN],
}

/// Per-direction session state: key material plus the transmit sequence
/// counter and the receive replay window. The counter is strictly increasing
/// for the lifetime of the session so no nonce is ever reused with the key.
#[derive(Debug, Clone)]
pub struct SessionKeys {
    pub aead_key: [u8; KEY_LEN],
    pub iv: [u8; IV_LEN],
    pub tx_record_seq: u64,
    pub rx_replay_window: HashSet<u64>,
}

impl SessionKeys {
    pub fn new(aead_key: [u8; KEY_LEN], iv: [u8; IV_LEN]) -> Self {
        SessionKeys {
            aead_key,
            iv,
            tx_record_seq: 0,
            rx_replay_window: HashSet::new(),
        }
    }

    /// Allocates the next transmit record sequence number.
    pub fn next_tx_seq(&mut self) -> u64 {
        let seq = self.tx_record_seq;
        self.tx_record_seq += 1;
        seq
    }

    pub fn material(&self) -> KeyMaterial {
        KeyMaterial {
            key: self.aead_key,
            iv: self.iv,
        }
    }
}

/// A sealed record: header, ciphertext, and detached tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedRecord {
    pub header: RecordHeader,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl SealedRecord {
    /// Total on-wire size: header, ciphertext, tag.
    pub fn wire_len(&self) -> usize {
        RECORD_HEADER_LEN + self.ciphertext.len() + TAG_LEN
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.header.encode());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CryptoError> {
        let header = RecordHeader::decode(bytes)?;
        let ct_len = header.ciphertext_len()?;
        let need = RECORD_HEADER_LEN + ct_len + TAG_LEN;
        if bytes.len() < need {
            return Err(WireError::Truncated {
                need,
                have: bytes.len(),
            }
            .into());
        }
        let ciphertext = bytes[RECORD_HEADER_LEN..RECORD_HEADER_LEN + ct_len].to_vec();
        let mut tag = [0u8; TAG_LEN];
        tag.copy_from_slice(&bytes[RECORD_HEADER_LEN + ct_len..need]);
        Ok(SealedRecord {
            header,
            ciphertext,
            tag,
        })
    }
}

/// Record nonce: the implicit IV XORed with the big-endian sequence number
/// left-padded to 12 bytes.
pub fn derive_nonce(iv: &[u8; IV_LEN], seq: u64) -> [u8; IV_LEN] {
    let mut nonce = *iv;
    for (n, s) in nonce[4..].iter_mut().zip(seq.to_be_bytes()) {
        *n ^= s;
    }
    nonce
}

/// AEAD-seals `plaintext` under (`key`, `iv`, `seq`) with the given AAD,
/// returning ciphertext and detached tag.
pub fn seal_raw(
    material: &KeyMaterial,
    seq: u64,
    plaintext: &[u8],
    aad: &[u8],
) -> Result<(Vec<u8>, [u8; TAG_LEN]), CryptoError> {
    if plaintext.len() > MAX_RECORD_PLAINTEXT {
        return Err(CryptoError::Oversize {
            len: plaintext.len(),
        });
    }
    let cipher = Aes128Gcm::new_from_slice(&material.key).expect("16-byte key");
    let nonce = derive_nonce(&material.iv, seq);
    let mut out = cipher
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: plaintext,
                aad,
            },
        )
        .expect("AES-GCM encryption is infallible for in-range inputs");
    let tag_start = out.len() - TAG_LEN;
    let mut tag = [0u8; TAG_LEN];
    tag.copy_from_slice(&out[tag_start..]);
    out.truncate(tag_start);
    Ok((out, tag))
}

/// Inverse of [`seal_raw`]; fails with [`CryptoError::AuthFailure`] on any
/// mismatch of key, nonce, AAD, ciphertext, or tag.
pub fn open_raw(
    material: &KeyMaterial,
    seq: u64,
    ciphertext: &[u8],
    tag: &[u8; TAG_LEN],
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let cipher = Aes128Gcm::new_from_slice(&material.key).expect("16-byte key");
    let nonce = derive_nonce(&material.iv, seq);
    let mut joined = Vec::with_capacity(ciphertext.len() + TAG_LEN);
    joined.extend_from_slice(ciphertext);
    joined.extend_from_slice(tag);
    cipher
        .decrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: &joined,
                aad,
            },
        )
        .map_err(|_| CryptoError::AuthFailure)
}

/// Seals the plaintext of one TSO segment as a complete record. The caller
/// supplies the AAD, which by convention is the encoded record header
/// carrying `seq`.
pub fn seal_segment(
    keys: &SessionKeys,
    seq: u64,
    plaintext: &[u8],
    aad: &[u8],
) -> Result<SealedRecord, CryptoError> {
    let (ciphertext, tag) = seal_raw(&keys.material(), seq, plaintext, aad)?;
    let header = RecordHeader::for_ciphertext(ciphertext.len(), seq)?;
    Ok(SealedRecord {
        header,
        ciphertext,
        tag,
    })
}

/// Opens a reassembled record, recording its sequence in the replay window.
/// A sequence that was already accepted is rejected before decryption.
pub fn open_segment(
    keys: &mut SessionKeys,
    record: &SealedRecord,
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let seq = record.header.explicit_sequence;
    if keys.rx_replay_window.contains(&seq) {
        return Err(CryptoError::ReplayedRecord { seq });
    }
    let material = keys.material();
    let plaintext = open_raw(&material, seq, &record.ciphertext, &record.tag, aad)?;
    keys.rx_replay_window.insert(seq);
    Ok(plaintext)
}

/// Convenience for the common seal path: allocates the next sequence, builds
/// the header, and uses the encoded header as AAD.
pub fn seal_next(keys: &mut SessionKeys, plaintext: &[u8]) -> Result<SealedRecord, CryptoError> {
    let seq = keys.next_tx_seq();
    let header = RecordHeader::for_ciphertext(plaintext.len(), seq)?;
    let (ciphertext, tag) = seal_raw(&keys.material(), seq, plaintext, &header.encode())?;
    Ok(SealedRecord {
        header,
        ciphertext,
        tag,
    })
}
