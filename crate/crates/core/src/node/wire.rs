//! Binary node encoding (little-endian).
//!
//! ```text
//! node   := kind:u8 body
//! 0x00   object       count:u32, count × (name_len:u16, name:utf8, node)
//! 0x01   int64        8 bytes
//! 0x02   float64      8 bytes
//! 0x03   string       len:u64, utf8
//! 0x04   int64_array  count:u64, count × 8 bytes
//! 0x05   float64_arr  count:u64, count × 8 bytes
//! 0x06   uint8_array  count:u64, bytes
//! ```

use thiserror::Error;

use super::{check_name, Array, DataNode, NodeKind, Object};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("input truncated at offset {offset}: needed {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: u64,
        available: usize,
    },
    #[error("unknown kind tag 0x{tag:02x} at offset {offset}")]
    UnknownTag { tag: u8, offset: usize },
    #[error("declared length {declared} bytes at offset {offset} exceeds the whole input ({input_len} bytes)")]
    LengthExceedsInput {
        offset: usize,
        declared: u64,
        input_len: usize,
    },
    #[error("invalid UTF-8 at offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("invalid child name {name:?} at offset {offset}")]
    InvalidName { name: String, offset: usize },
    #[error("{count} trailing bytes after root node")]
    TrailingBytes { count: usize },
    #[error("nesting deeper than {max} levels")]
    TooDeep { max: usize },
}

/// Exact encoded size of `node` in bytes.
pub fn encoded_len(node: &DataNode) -> usize {
    1 + match node {
        DataNode::Object(o) => {
            4 + o
                .iter()
                .map(|(name, child)| 2 + name.len() + encoded_len(child))
                .sum::<usize>()
        }
        DataNode::Int64(_) | DataNode::Float64(_) => 8,
        DataNode::String(s) => 8 + s.len(),
        DataNode::Int64Array(a) => 8 + 8 * a.len(),
        DataNode::Float64Array(a) => 8 + 8 * a.len(),
        DataNode::Uint8Array(a) => 8 + a.len(),
    }
}

/// Encodes a tree. Output is deterministic and always owns a copy of every
/// array, external or not.
pub fn serialize_node(node: &DataNode) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(node));
    write_node(node, &mut out);
    out
}

pub fn serialize_into(node: &DataNode, out: &mut Vec<u8>) {
    out.reserve(encoded_len(node));
    write_node(node, out);
}

fn write_node(node: &DataNode, out: &mut Vec<u8>) {
    out.push(node.kind() as u8);
    match node {
        DataNode::Object(o) => {
            out.extend_from_slice(&(o.len() as u32).to_le_bytes());
            for (name, child) in o.iter() {
                out.extend_from_slice(&(name.len() as u16).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                write_node(child, out);
            }
        }
        DataNode::Int64(v) => out.extend_from_slice(&v.to_le_bytes()),
        DataNode::Float64(v) => out.extend_from_slice(&v.to_le_bytes()),
        DataNode::String(s) => {
            out.extend_from_slice(&(s.len() as u64).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        DataNode::Int64Array(a) => {
            out.extend_from_slice(&(a.len() as u64).to_le_bytes());
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        DataNode::Float64Array(a) => {
            out.extend_from_slice(&(a.len() as u64).to_le_bytes());
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        DataNode::Uint8Array(a) => {
            out.extend_from_slice(&(a.len() as u64).to_le_bytes());
            out.extend_from_slice(a);
        }
    }
}

const MAX_DEPTH: usize = 256;

/// Decodes exactly one node spanning all of `bytes`.
pub fn deserialize_node(bytes: &[u8]) -> Result<DataNode, DecodeError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let node = cur.node(0)?;
    if cur.pos != bytes.len() {
        return Err(DecodeError::TrailingBytes {
            count: bytes.len() - cur.pos,
        });
    }
    Ok(node)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if n > self.remaining() {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: n as u64,
                available: self.remaining(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        self.array().map(u64::from_le_bytes)
    }

    /// Reads a `count:u64` header and returns the byte span of the body.
    fn sized_body(&mut self, elem: u64) -> Result<&'a [u8], DecodeError> {
        let at = self.pos;
        let count = self.u64()?;
        let declared = count.saturating_mul(elem);
        if declared > self.bytes.len() as u64 {
            return Err(DecodeError::LengthExceedsInput {
                offset: at,
                declared,
                input_len: self.bytes.len(),
            });
        }
        self.take(declared as usize)
    }

    fn utf8(&self, raw: &'a [u8], offset: usize) -> Result<&'a str, DecodeError> {
        std::str::from_utf8(raw).map_err(|_| DecodeError::InvalidUtf8 { offset })
    }

    fn node(&mut self, depth: usize) -> Result<DataNode, DecodeError> {
        if depth > MAX_DEPTH {
            return Err(DecodeError::TooDeep { max: MAX_DEPTH });
        }
        let at = self.pos;
        let tag = self.u8()?;
        let kind = NodeKind::from_tag(tag).ok_or(DecodeError::UnknownTag { tag, offset: at })?;
        Ok(match kind {
            NodeKind::Object => {
                let count = self.u32()?;
                let mut obj = Object::new();
                for _ in 0..count {
                    let name_at = self.pos;
                    let len = self.u16()? as usize;
                    let raw = self.take(len)?;
                    let name = self.utf8(raw, name_at + 2)?;
                    if check_name(name).is_err() || obj.get(name).is_some() {
                        return Err(DecodeError::InvalidName {
                            name: name.to_string(),
                            offset: name_at,
                        });
                    }
                    let child = self.node(depth + 1)?;
                    obj.insert(name, child).expect("name checked");
                }
                DataNode::Object(obj)
            }
            NodeKind::Int64 => DataNode::Int64(i64::from_le_bytes(self.array()?)),
            NodeKind::Float64 => DataNode::Float64(f64::from_le_bytes(self.array()?)),
            NodeKind::String => {
                let body_at = self.pos + 8;
                let raw = self.sized_body(1)?;
                DataNode::String(self.utf8(raw, body_at)?.to_string())
            }
            NodeKind::Int64Array => {
                let raw = self.sized_body(8)?;
                let values = raw
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                DataNode::Int64Array(Array::owned(values))
            }
            NodeKind::Float64Array => {
                let raw = self.sized_body(8)?;
                let values = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                DataNode::Float64Array(Array::owned(values))
            }
            NodeKind::Uint8Array => {
                let raw = self.sized_body(1)?;
                DataNode::Uint8Array(Array::owned(raw.to_vec()))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn float_leaf_encoding() {
        // IEEE-754 binary64 of 3.0: sign 0, exponent 1024 (0x400), mantissa 0.5
        let bits: u64 = (1024u64 << 52) | (1u64 << 51);
        let mut expected = vec![0x02];
        expected.extend_from_slice(&bits.to_le_bytes());
        assert_eq!(expected[1..], [0, 0, 0, 0, 0, 0, 0x08, 0x40]);
        assert_eq!(serialize_node(&DataNode::Float64(3.0)), expected);
    }

    #[test]
    fn empty_object_encoding() {
        assert_eq!(serialize_node(&DataNode::object()), vec![0, 0, 0, 0, 0]);
    }

    #[test]
    fn truncated_mid_array() {
        let bytes = serialize_node(&DataNode::f64_array(vec![1.0, 2.0, 3.0]));
        let cut = &bytes[..bytes.len() - 4];
        assert!(matches!(deserialize_node(cut), Err(DecodeError::Truncated { .. })));
    }

    #[test]
    fn unknown_tag() {
        assert_eq!(
            deserialize_node(&[0xFF]),
            Err(DecodeError::UnknownTag { tag: 0xFF, offset: 0 })
        );
    }

    #[test]
    fn absurd_declared_length() {
        let mut bytes = vec![0x05];
        bytes.extend_from_slice(&(1u64 << 40).to_le_bytes());
        bytes.extend_from_slice(&[0u8; 16]);
        assert!(matches!(
            deserialize_node(&bytes),
            Err(DecodeError::LengthExceedsInput { offset: 1, .. })
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut bytes = vec![0x00];
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            bytes.extend_from_slice(&1u16.to_le_bytes());
            bytes.push(b'a');
            bytes.push(0x01);
            bytes.extend_from_slice(&0i64.to_le_bytes());
        }
        assert!(matches!(deserialize_node(&bytes), Err(DecodeError::InvalidName { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = serialize_node(&DataNode::Int64(1));
        bytes.push(0);
        assert_eq!(deserialize_node(&bytes), Err(DecodeError::TrailingBytes { count: 1 }));
    }

    pub(crate) fn arb_leaf() -> impl Strategy<Value = DataNode> {
        prop_oneof![
            any::<i64>().prop_map(DataNode::Int64),
            any::<u64>().prop_map(|b| DataNode::Float64(f64::from_bits(b))),
            ".{0,12}".prop_map(DataNode::String),
            prop::collection::vec(any::<i64>(), 0..64).prop_map(DataNode::i64_array),
            prop::collection::vec(any::<u64>().prop_map(f64::from_bits), 0..2000)
                .prop_map(DataNode::f64_array),
            prop::collection::vec(any::<u8>(), 0..10_000).prop_map(DataNode::from),
        ]
    }

    pub(crate) fn arb_tree() -> impl Strategy<Value = DataNode> {
        arb_leaf().prop_recursive(6, 64, 5, |inner| {
            prop::collection::vec(("[a-z_]{1,6}", inner), 0..5).prop_map(|kids| {
                let mut obj = Object::new();
                for (name, kid) in kids {
                    let _ = obj.set(name, kid);
                }
                DataNode::Object(obj)
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn round_trip(tree in arb_tree()) {
            let bytes = serialize_node(&tree);
            prop_assert_eq!(bytes.len(), encoded_len(&tree));
            prop_assert_eq!(&deserialize_node(&bytes).unwrap(), &tree);
            prop_assert_eq!(serialize_node(&tree), bytes);
        }

        #[test]
        fn every_strict_prefix_fails(tree in arb_tree(), frac in 0.0f64..1.0) {
            let bytes = serialize_node(&tree);
            let cut = ((bytes.len() as f64) * frac) as usize;
            prop_assume!(cut < bytes.len());
            prop_assert!(deserialize_node(&bytes[..cut]).is_err());
        }
    }
}
