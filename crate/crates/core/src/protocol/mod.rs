//! RTVDC wire format: datagram codec, telemetry text lines and the
//! receive-side reorder buffer.

pub mod codec;
pub mod csv;
pub mod reorder;

pub use codec::{
    decode, encode, ChannelId, DecodeError, EncodeError, Message, MsgType, Packet, RejectReason,
    TerminateReason,
};
pub use reorder::{ReorderBuffer, ReorderConfig, ReorderStats};
