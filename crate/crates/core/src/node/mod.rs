//! Hierarchical typed data tree.
//!
//! A [`DataNode`] is either an ordered object of named children or a typed
//! leaf (scalar, string or contiguous numeric array). Every message that
//! crosses a module boundary, control state and mesh payloads alike, is a
//! `DataNode`.

mod mesh;
mod wire;

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use thiserror::Error;

pub use mesh::{
    validate_mesh, Association, Coordset, Field, MeshChannel, MeshError, Topology, UniformGrid,
};
pub use wire::{deserialize_node, encoded_len, serialize_into, serialize_node, DecodeError};

/// Kind tag of a node. The discriminants are the wire tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum NodeKind {
    Object = 0x00,
    Int64 = 0x01,
    Float64 = 0x02,
    String = 0x03,
    Int64Array = 0x04,
    Float64Array = 0x05,
    Uint8Array = 0x06,
}

impl NodeKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0x00 => NodeKind::Object,
            0x01 => NodeKind::Int64,
            0x02 => NodeKind::Float64,
            0x03 => NodeKind::String,
            0x04 => NodeKind::Int64Array,
            0x05 => NodeKind::Float64Array,
            0x06 => NodeKind::Uint8Array,
            _ => return None,
        })
    }
}

/// Contiguous read-only numeric storage.
///
/// Arrays are reference counted and never handed out mutably, so a producer
/// can pass its buffers into a tree without a copy. `external` records that
/// the storage belongs to the producer; consumers must treat it as borrowed.
#[derive(Clone)]
pub struct Array<T> {
    data: Arc<[T]>,
    external: bool,
}

impl<T> Array<T> {
    pub fn owned(values: Vec<T>) -> Self {
        Array {
            data: values.into(),
            external: false,
        }
    }

    pub fn external(values: Arc<[T]>) -> Self {
        Array {
            data: values,
            external: true,
        }
    }

    pub fn is_external(&self) -> bool {
        self.external
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn shared(&self) -> Arc<[T]> {
        Arc::clone(&self.data)
    }
}

impl<T> Deref for Array<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.data
    }
}

impl<T> From<Vec<T>> for Array<T> {
    fn from(values: Vec<T>) -> Self {
        Array::owned(values)
    }
}

impl<T: fmt::Debug> fmt::Debug for Array<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        let mut list = f.debug_list();
        list.entries(self.data.iter().take(SHOWN));
        if self.data.len() > SHOWN {
            list.entry(&format_args!("... ({} total)", self.data.len()));
        }
        list.finish()
    }
}

/// Ordered name → node map. Names are validated on insertion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Object {
    entries: Vec<(String, DataNode)>,
}

impl Object {
    pub fn new() -> Self {
        Object::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&DataNode> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DataNode> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    /// Appends a new child. Fails if the name is invalid or already present.
    pub fn insert(&mut self, name: impl Into<String>, node: DataNode) -> Result<(), NodeError> {
        let name = name.into();
        check_name(&name)?;
        if self.get(&name).is_some() {
            return Err(NodeError::DuplicateName(name));
        }
        self.entries.push((name, node));
        Ok(())
    }

    /// Inserts or replaces in place, keeping the original position on replace.
    pub fn set(&mut self, name: impl Into<String>, node: DataNode) -> Result<(), NodeError> {
        let name = name.into();
        check_name(&name)?;
        match self.get_mut(&name) {
            Some(slot) => *slot = node,
            None => self.entries.push((name, node)),
        }
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<DataNode> {
        let idx = self.entries.iter().position(|(n, _)| n == name)?;
        Some(self.entries.remove(idx).1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DataNode)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }
}

/// Structural errors raised while building or addressing a tree.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeError {
    #[error("invalid child name {0:?}: names must be non-empty, at most 65535 bytes and contain no '/'")]
    InvalidName(String),
    #[error("duplicate child name {0:?}")]
    DuplicateName(String),
    #[error("path {path:?} traverses through leaf at {leaf:?}")]
    ThroughLeaf { path: String, leaf: String },
}

pub(crate) fn check_name(name: &str) -> Result<(), NodeError> {
    if name.is_empty() || name.contains('/') || name.len() > u16::MAX as usize {
        return Err(NodeError::InvalidName(name.to_string()));
    }
    Ok(())
}

/// A node of the hierarchical data tree.
///
/// Equality is structural, order-sensitive and bit-exact for floating point
/// values. The `external` flag of arrays does not take part in equality.
#[derive(Debug, Clone)]
pub enum DataNode {
    Object(Object),
    Int64(i64),
    Float64(f64),
    String(String),
    Int64Array(Array<i64>),
    Float64Array(Array<f64>),
    Uint8Array(Array<u8>),
}

impl Default for DataNode {
    fn default() -> Self {
        DataNode::Object(Object::new())
    }
}

impl PartialEq for DataNode {
    fn eq(&self, other: &Self) -> bool {
        use DataNode::*;
        match (self, other) {
            (Object(a), Object(b)) => a == b,
            (Int64(a), Int64(b)) => a == b,
            (Float64(a), Float64(b)) => a.to_bits() == b.to_bits(),
            (String(a), String(b)) => a == b,
            (Int64Array(a), Int64Array(b)) => a.as_slice() == b.as_slice(),
            (Float64Array(a), Float64Array(b)) => {
                a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Uint8Array(a), Uint8Array(b)) => a.as_slice() == b.as_slice(),
            _ => false,
        }
    }
}

impl DataNode {
    pub fn object() -> Self {
        DataNode::Object(Object::new())
    }

    pub fn f64_array(values: Vec<f64>) -> Self {
        DataNode::Float64Array(Array::owned(values))
    }

    pub fn i64_array(values: Vec<i64>) -> Self {
        DataNode::Int64Array(Array::owned(values))
    }

    pub fn kind(&self) -> NodeKind {
        match self {
            DataNode::Object(_) => NodeKind::Object,
            DataNode::Int64(_) => NodeKind::Int64,
            DataNode::Float64(_) => NodeKind::Float64,
            DataNode::String(_) => NodeKind::String,
            DataNode::Int64Array(_) => NodeKind::Int64Array,
            DataNode::Float64Array(_) => NodeKind::Float64Array,
            DataNode::Uint8Array(_) => NodeKind::Uint8Array,
        }
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self, DataNode::Object(_))
    }

    pub fn as_object(&self) -> Option<&Object> {
        match self {
            DataNode::Object(o) => Some(o),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            DataNode::Int64(v) => Some(*v),
            _ => None,
        }
    }

    /// Float view of a numeric scalar; integers are widened.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            DataNode::Float64(v) => Some(*v),
            DataNode::Int64(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            DataNode::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64_array(&self) -> Option<&Array<f64>> {
        match self {
            DataNode::Float64Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_i64_array(&self) -> Option<&Array<i64>> {
        match self {
            DataNode::Int64Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn child(&self, name: &str) -> Option<&DataNode> {
        self.as_object()?.get(name)
    }

    /// Looks up a slash-separated path. The empty path names the node itself.
    pub fn get_path(&self, path: &str) -> Option<&DataNode> {
        let mut node = self;
        for seg in segments(path) {
            node = node.child(seg)?;
        }
        Some(node)
    }

    /// Writes `value` at `path`, creating intermediate objects. Whatever sits
    /// at the final segment is replaced. An empty path replaces `self`.
    pub fn set_path(&mut self, path: &str, value: impl Into<DataNode>) -> Result<(), NodeError> {
        let segs: Vec<&str> = segments(path).collect();
        for seg in &segs {
            check_name(seg)?;
        }
        let Some((last, parents)) = segs.split_last() else {
            *self = value.into();
            return Ok(());
        };
        let mut node = self;
        for (depth, seg) in parents.iter().enumerate() {
            let obj = match node {
                DataNode::Object(o) => o,
                _ => return Err(through_leaf(path, &segs[..depth])),
            };
            if obj.get(seg).is_none() {
                obj.insert(*seg, DataNode::object())?;
            }
            node = obj.get_mut(seg).expect("child just ensured");
        }
        match node {
            DataNode::Object(o) => o.set(*last, value.into()),
            _ => Err(through_leaf(path, parents)),
        }
    }

    /// Total number of nodes in the tree, including `self`.
    pub fn node_count(&self) -> usize {
        match self {
            DataNode::Object(o) => 1 + o.iter().map(|(_, c)| c.node_count()).sum::<usize>(),
            _ => 1,
        }
    }
}

fn segments(path: &str) -> impl Iterator<Item = &str> {
    path.split('/').filter(|s| !s.is_empty())
}

fn through_leaf(path: &str, prefix: &[&str]) -> NodeError {
    NodeError::ThroughLeaf {
        path: path.to_string(),
        leaf: prefix.join("/"),
    }
}

impl From<i64> for DataNode {
    fn from(v: i64) -> Self {
        DataNode::Int64(v)
    }
}

impl From<f64> for DataNode {
    fn from(v: f64) -> Self {
        DataNode::Float64(v)
    }
}

impl From<&str> for DataNode {
    fn from(v: &str) -> Self {
        DataNode::String(v.to_string())
    }
}

impl From<String> for DataNode {
    fn from(v: String) -> Self {
        DataNode::String(v)
    }
}

impl From<Vec<f64>> for DataNode {
    fn from(v: Vec<f64>) -> Self {
        DataNode::f64_array(v)
    }
}

impl From<Vec<i64>> for DataNode {
    fn from(v: Vec<i64>) -> Self {
        DataNode::i64_array(v)
    }
}

impl From<Vec<u8>> for DataNode {
    fn from(v: Vec<u8>) -> Self {
        DataNode::Uint8Array(Array::owned(v))
    }
}

impl From<Array<f64>> for DataNode {
    fn from(v: Array<f64>) -> Self {
        DataNode::Float64Array(v)
    }
}

impl From<Array<i64>> for DataNode {
    fn from(v: Array<i64>) -> Self {
        DataNode::Int64Array(v)
    }
}
