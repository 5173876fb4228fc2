//! In-process message queue standing in for the client/server network link.
//!
//! Every message is serialized to bytes on `send` and decoded on `recv`, so what the
//! server can observe is exactly the byte stream. An optional transcript keeps a copy of
//! every frame for inspection.
//!
//! Frame layout: tag `u8` (0 mask, 1 upload, 2 broadcast), then
//! - mask: client id (u32 length + UTF-8), mask length u32, one byte per feature;
//! - upload: round u32, client id, n_k u64, tensor block;
//! - broadcast: round u32, tensor block.
//!
//! The tensor block uses the checkpoint encoding in [`crate::codec`].

use std::collections::VecDeque;

use crate::codec::{encode_tensors, read_tensors, Reader};
use crate::error::{Error, Result};
use crate::fed::aggregate::ClientUpdate;
use crate::fed::handshake::FeatureAvailabilityVector;
use crate::nn::NamedTensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Mask(FeatureAvailabilityVector),
    Upload { round: u32, update: ClientUpdate },
    Broadcast { round: u32, tensors: Vec<NamedTensor> },
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::Mask(v) => {
                out.push(0);
                put_str(&mut out, &v.client_id);
                out.extend_from_slice(&(v.mask.len() as u32).to_le_bytes());
                out.extend(v.mask.iter().map(|&b| u8::from(b)));
            }
            Message::Upload { round, update } => {
                out.push(1);
                out.extend_from_slice(&round.to_le_bytes());
                put_str(&mut out, &update.client_id);
                out.extend_from_slice(&(update.n_k as u64).to_le_bytes());
                out.extend(encode_tensors(&update.shared));
            }
            Message::Broadcast { round, tensors } => {
                out.push(2);
                out.extend_from_slice(&round.to_le_bytes());
                out.extend(encode_tensors(tensors));
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let msg = match r.u8()? {
            0 => {
                let id = r.string()?;
                let n = r.u32()? as usize;
                let mask = r.take(n)?.iter().map(|&b| b != 0).collect();
                Message::Mask(FeatureAvailabilityVector::new(id, mask)?)
            }
            1 => {
                let round = r.u32()?;
                let client_id = r.string()?;
                let n_k = r.u64()? as usize;
                Message::Upload { round, update: ClientUpdate { client_id, n_k, shared: read_tensors(&mut r)? } }
            }
            2 => {
                let round = r.u32()?;
                Message::Broadcast { round, tensors: read_tensors(&mut r)? }
            }
            t => return Err(Error::Schema(format!("unknown message tag {t}"))),
        };
        if !r.finished() {
            return Err(Error::Schema("trailing bytes after message".into()));
        }
        Ok(msg)
    }
}

#[derive(Debug, Default)]
pub struct Channel {
    queue: VecDeque<Vec<u8>>,
    transcript: Option<Vec<Vec<u8>>>,
    bytes_sent: u64,
}

impl Channel {
    pub fn new() -> Self {
        Self::default()
    }

    /// A channel that keeps a copy of every frame sent.
    pub fn recording() -> Self {
        Self { transcript: Some(Vec::new()), ..Self::default() }
    }

    pub fn send(&mut self, msg: &Message) {
        let frame = msg.encode();
        self.bytes_sent += frame.len() as u64;
        if let Some(t) = self.transcript.as_mut() {
            t.push(frame.clone());
        }
        self.queue.push_back(frame);
    }

    pub fn recv(&mut self) -> Result<Option<Message>> {
        self.queue.pop_front().map(|f| Message::decode(&f)).transpose()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent
    }

    pub fn transcript(&self) -> Option<&[Vec<u8>]> {
        self.transcript.as_deref()
    }
}
