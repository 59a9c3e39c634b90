//! Frame layout (all integers little-endian):
//!
//! ```text
//! [kind: u8][round: u32]
//! [client_id: u32][sample_count: u32]      -- Update frames only
//! [tensor_count: u32]
//! per tensor: [name_len: u16][name: UTF-8][tensor encoding]
//! [crc32 of every preceding byte: u32]
//! ```

use crate::error::{Error, Result};
use crate::model::{read_named, write_named, NamedTensors, PublicParams, Schema};
use crate::tensor::ByteCursor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Broadcast = 0,
    Update = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub kind: MessageKind,
    pub round: u32,
    /// `(client_id, sample_count)`; present exactly for updates.
    pub sender: Option<(u32, u32)>,
    pub tensors: NamedTensors,
}

impl WireMessage {
    pub fn broadcast(round: u32, tensors: NamedTensors) -> Self {
        WireMessage { kind: MessageKind::Broadcast, round, sender: None, tensors }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.round.to_le_bytes());
        if let Some((id, n)) = self.sender {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&n.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        write_named(&mut out, &self.tensors);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Exact frame size implied by the header and tensor shapes.
    pub fn encoded_len(&self) -> usize {
        let header = 1 + 4 + if self.sender.is_some() { 8 } else { 0 } + 4;
        let body: usize = self.tensors.iter().map(|(n, t)| 2 + n.len() + t.encoded_len()).sum();
        header + body + 4
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Transport("frame shorter than its checksum".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let want = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let got = crc32fast::hash(body);
        if want != got {
            return Err(Error::Transport(format!("checksum mismatch: frame says {want:#010x}, computed {got:#010x}")));
        }
        let mut cur = ByteCursor::new(body);
        let kind = match cur.u8()? {
            0 => MessageKind::Broadcast,
            1 => MessageKind::Update,
            k => return Err(Error::Format(format!("unknown message kind {k}"))),
        };
        let round = cur.u32()?;
        let sender = match kind {
            MessageKind::Update => Some((cur.u32()?, cur.u32()?)),
            MessageKind::Broadcast => None,
        };
        let count = cur.u32()? as usize;
        let tensors = read_named(&mut cur, count)?;
        if !cur.rest().is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in frame", cur.rest().len())));
        }
        Ok(WireMessage { kind, round, sender, tensors })
    }
}

/// What a client uploads after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicUpdate {
    pub client_id: u32,
    pub round: u32,
    pub sample_count: u32,
    pub params: PublicParams,
    /// Set when the client had no data; such updates carry zero weight.
    pub skipped: bool,
}

pub fn serialize_update(u: &PublicUpdate) -> Vec<u8> {
    WireMessage {
        kind: MessageKind::Update,
        round: u.round,
        sender: Some((u.client_id, u.sample_count)),
        tensors: u.params.0.clone(),
    }
    .encode()
}

/// Decodes an update frame and validates it against the public schema.
pub fn deserialize_update(bytes: &[u8], schema: &Schema) -> Result<PublicUpdate> {
    let msg = WireMessage::decode(bytes)?;
    if msg.kind != MessageKind::Update {
        return Err(Error::Transport("expected an update frame, got a broadcast".into()));
    }
    for (name, _) in msg.tensors.iter() {
        if !schema.iter().any(|(n, _)| n == name) {
            return Err(Error::Schema(format!("unknown tensor name `{name}`")));
        }
    }
    msg.tensors.check_schema(schema)?;
    let (client_id, sample_count) = msg.sender.expect("update frames carry a sender");
    Ok(PublicUpdate {
        client_id,
        round: msg.round,
        sample_count,
        params: PublicParams(msg.tensors),
        skipped: sample_count == 0,
    })
}

/// Whether `needle` occurs anywhere in `haystack`.
pub fn contains_subsequence(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Whether any 8-byte-aligned window of `haystack` equals any 8-byte word of
/// `needle_words` (little-endian `f64` payload).
pub fn shares_aligned_word(haystack: &[u8], needle_words: &[u8]) -> bool {
    let words: std::collections::HashSet<&[u8]> = needle_words.chunks_exact(8).collect();
    (0..8).any(|offset| {
        haystack
            .get(offset..)
            .is_some_and(|h| h.chunks_exact(8).any(|w| words.contains(w)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn update() -> PublicUpdate {
        let mut t = NamedTensors::new();
        t.push("backbone.0.weight", Tensor::from_rows(&[&[1.0, 2.0], &[3.0, -4.5]]));
        t.push("backbone.0.bias", Tensor::new(vec![2], vec![0.25, 0.5]).unwrap());
        PublicUpdate { client_id: 3, round: 7, sample_count: 12, params: PublicParams(t), skipped: false }
    }

    #[test]
    fn round_trip_and_length() {
        let u = update();
        let bytes = serialize_update(&u);
        let msg = WireMessage::decode(&bytes).unwrap();
        assert_eq!(bytes.len(), msg.encoded_len());
        let back = deserialize_update(&bytes, &u.params.0.schema()).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = serialize_update(&update());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        assert!(matches!(deserialize_update(&bytes, &update().params.0.schema()), Err(Error::Transport(_))));
    }

    #[test]
    fn unknown_name_is_schema_error() {
        let u = update();
        let mut schema = u.params.0.schema();
        schema[1].0 = "backbone.0.other".into();
        let err = deserialize_update(&serialize_update(&u), &schema).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("backbone.0.bias")), "{err}");
    }

    #[test]
    fn broadcast_layout_header() {
        let mut t = NamedTensors::new();
        t.push("a", Tensor::scalar(1.0));
        let b = WireMessage::broadcast(5, t).encode();
        assert_eq!(b[0], 0);
        assert_eq!(&b[1..5], &5u32.to_le_bytes());
        assert_eq!(&b[5..9], &1u32.to_le_bytes());
        assert_eq!(&b[9..11], &1u16.to_le_bytes());
        assert_eq!(b[11], b'a');
        // rank-1 tensor: 4 + 4 + 8 bytes, then the crc
        assert_eq!(b.len(), 12 + 16 + 4);
    }

    #[test]
    fn subsequence_scans() {
        assert!(contains_subsequence(b"abcdef", b"cde"));
        assert!(!contains_subsequence(b"abcdef", b"ce"));
        let word = 1.5f64.to_le_bytes();
        let mut hay = vec![0u8; 3];
        hay.extend_from_slice(&word);
        assert!(shares_aligned_word(&hay, &word));
        assert!(!shares_aligned_word(&hay, &2.5f64.to_le_bytes()));
    }
}
