//! SDP: a user-space secure datacenter transport.
//!
//! The crate implements a receiver-driven, message-oriented reliable
//! transport with encryption integrated into the transport layer, together
//! with a deterministic emulation of the transmit-side NIC pipeline
//! (multi-queue descriptor rings, a TLS crypto engine with per-flow contexts
//! and resync descriptors, and TSO splitting) and a ticket-based 0-RTT key
//! exchange.
//!
//! Modules:
//! - [`wire`]: bit-exact on-wire structures (see `FORMAT.md`).
//! - [`record`]: the AEAD record layer; one record covers one TSO segment.
//! - [`nic`]: the deterministic NIC model, including the multi-queue race
//!   and the per-message flow-context allocation that avoids it.
//! - [`transport`]: the endpoint — send path, pacer, grant scheduling,
//!   reassembly, retransmission, whole-message delivery.
//! - [`keyx`]: key establishment — baseline handshake, ticket-based 0-RTT
//!   variants, resumption, resolver, replay defense.

pub mod keyx;
pub mod nic;
pub mod record;
pub mod transport;
pub mod wire;

pub use record::{SealedRecord, SessionKeys};
pub use transport::{Endpoint, SessionKeyPair, TransportConfig, TransportError};
pub use wire::{OverlaidHeader, PacketType, WirePacket};
