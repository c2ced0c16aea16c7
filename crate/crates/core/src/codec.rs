//! Canonical binary encoding.
//!
//! Fields are written in declaration order, integers big-endian and fixed
//! width, sequences with a `u64` length. Frames on the wire are a 4-byte
//! big-endian length followed by the encoded payload.

use std::io::{self, Read, Write};

use bincode::Options;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

/// Fixed per-envelope overhead charged on top of the encoded payload:
/// 4-byte frame length, source and destination endpoints, message tag.
pub const HEADER_BYTES: u64 = 24;

/// Largest frame accepted by [`read_frame`].
pub const MAX_FRAME: u32 = 64 << 20;

fn options() -> impl Options {
    bincode::DefaultOptions::new()
        .with_big_endian()
        .with_fixint_encoding()
}

pub fn encode<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    options()
        .serialize(value)
        .expect("in-memory encoding of plain data cannot fail")
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    options()
        .deserialize(bytes)
        .map_err(|e| Error::Decode(e.to_string()))
}

pub fn encoded_len<T: Serialize + ?Sized>(value: &T) -> u64 {
    options()
        .serialized_size(value)
        .expect("in-memory encoding of plain data cannot fail")
}

/// Size used for cost accounting: header plus encoded payload.
pub fn payload_bytes<T: Serialize + ?Sized>(value: &T) -> u64 {
    HEADER_BYTES + encoded_len(value)
}

pub fn frame<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let body = encode(value);
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn write_frame<W: Write, T: Serialize + ?Sized>(w: &mut W, value: &T) -> io::Result<()> {
    w.write_all(&frame(value))
}

/// Reads one length-prefixed frame. Returns `Ok(None)` on clean EOF.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "frame too large",
        ));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Block, Command, NodeId};
    use proptest::prelude::*;

    #[test]
    fn integers_are_big_endian_fixed_width() {
        assert_eq!(encode(&1u32), vec![0, 0, 0, 1]);
        assert_eq!(encode(&(2u16, 1u8)), vec![0, 2, 1]);
        assert_eq!(encode(&vec![7u8]), vec![0, 0, 0, 0, 0, 0, 0, 1, 7]);
    }

    #[test]
    fn frame_has_length_prefix() {
        let f = frame(&5u64);
        assert_eq!(&f[..4], &[0, 0, 0, 8]);
        let mut cur = io::Cursor::new(f);
        let body = read_frame(&mut cur).unwrap().unwrap();
        assert_eq!(decode::<u64>(&body).unwrap(), 5);
        assert!(read_frame(&mut cur).unwrap().is_none());
    }

    #[test]
    fn garbage_is_a_decode_error() {
        assert!(decode::<Block>(&[1, 2, 3]).is_err());
    }

    proptest! {
        #[test]
        fn block_roundtrip_and_sizing(
            height in 0u64..1000,
            view in 0u64..1000,
            vals in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..40), 0..8),
        ) {
            let commands: Vec<Command> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| Command::new(1, i as u64, b"key".to_vec(), v))
                .collect();
            let b = Block { height, parent_hash: Default::default(), commands, proposer: NodeId(3), view };
            let bytes = encode(&b);
            prop_assert_eq!(bytes.len() as u64, encoded_len(&b));
            prop_assert_eq!(payload_bytes(&b), payload_bytes(&b.clone()));
            let back: Block = decode(&bytes).unwrap();
            prop_assert_eq!(back, b);
        }
    }
}
