//! Mesh schema on top of [`DataNode`].
//!
//! A mesh channel is a subtree laid out as
//!
//! ```text
//! coordset/type          "uniform" | "explicit"
//! coordset/dims          int64[3]    (uniform: vertex counts)
//! coordset/origin        float64[3]
//! coordset/spacing       float64[3]
//! coordset/{x,y,z}       float64[n]  (explicit)
//! topology/type          "uniform" | "hex" | "tri"
//! topology/connectivity  int64[8·cells | 3·cells]
//! fields/<name>/association  "vertex" | "cell"
//! fields/<name>/values       float64[...]
//! ```
//!
//! Vertices and cells of uniform grids are numbered x-fastest.

use thiserror::Error;

use super::{Array, DataNode, Object};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("mesh has no coordset")]
    MissingCoordset,
    #[error("mesh has no topology")]
    MissingTopology,
    #[error("unknown topology kind {0:?}")]
    UnknownTopology(String),
    #[error("field {field:?}: expected {expected} {association} values, found {actual}")]
    FieldLength {
        field: String,
        association: Association,
        expected: usize,
        actual: usize,
    },
    #[error("connectivity entry {position} = {index} outside [0, {vertex_count})")]
    ConnectivityIndex {
        position: usize,
        index: i64,
        vertex_count: usize,
    },
    #[error("field {0:?} is not scalar")]
    NonScalarField(String),
    #[error("{path}: {reason}")]
    Malformed { path: String, reason: String },
}

fn malformed(path: &str, reason: impl Into<String>) -> MeshError {
    MeshError::Malformed {
        path: path.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Association {
    Vertex,
    Cell,
}

impl Association {
    pub fn as_str(self) -> &'static str {
        match self {
            Association::Vertex => "vertex",
            Association::Cell => "cell",
        }
    }
}

impl std::fmt::Display for Association {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned regular grid. At most one axis may hold a single vertex
/// layer, which makes the grid planar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
}

impl UniformGrid {
    pub fn vertex_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Cells per axis. A flat axis counts as one layer.
    pub fn cell_dims(&self) -> [usize; 3] {
        self.dims.map(|d| if d > 1 { d - 1 } else { 1 })
    }

    pub fn cell_count(&self) -> usize {
        self.cell_dims().iter().product()
    }

    pub fn is_planar(&self) -> bool {
        self.dims.contains(&1)
    }

    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        let c = self.cell_dims();
        i + c[0] * (j + c[1] * k)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// Upper corner of the grid.
    pub fn max_corner(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + (self.dims[a] - 1) as f64 * self.spacing[a])
    }
}

#[derive(Debug, Clone)]
pub enum Coordset {
    Uniform(UniformGrid),
    Explicit {
        x: Array<f64>,
        y: Array<f64>,
        z: Array<f64>,
    },
}

#[derive(Debug, Clone)]
pub enum Topology {
    /// Implied by a uniform coordset.
    Uniform,
    /// Eight corner indices per hexahedron, VTK ordering.
    Hex(Array<i64>),
    /// Three corner indices per triangle.
    Tri(Array<i64>),
}

impl Topology {
    fn kind_name(&self) -> &'static str {
        match self {
            Topology::Uniform => "uniform",
            Topology::Hex(_) => "hex",
            Topology::Tri(_) => "tri",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Field {
    pub name: String,
    pub association: Association,
    pub values: Array<f64>,
}

impl Field {
    pub fn new(name: impl Into<String>, association: Association, values: impl Into<Array<f64>>) -> Self {
        Field {
            name: name.into(),
            association,
            values: values.into(),
        }
    }
}

/// Typed, validated view of a mesh subtree. Arrays are shared with the tree
/// it was built from.
#[derive(Debug, Clone)]
pub struct MeshChannel {
    pub coordset: Coordset,
    pub topology: Topology,
    pub fields: Vec<Field>,
}

impl MeshChannel {
    pub fn uniform(grid: UniformGrid) -> Self {
        MeshChannel {
            coordset: Coordset::Uniform(grid),
            topology: Topology::Uniform,
            fields: Vec::new(),
        }
    }

    /// A mesh with no vertices and no cells, carrying empty fields with the
    /// given names and associations.
    pub fn empty<'a>(fields: impl IntoIterator<Item = (&'a str, Association)>) -> Self {
        MeshChannel {
            coordset: Coordset::Explicit {
                x: Vec::new().into(),
                y: Vec::new().into(),
                z: Vec::new().into(),
            },
            topology: Topology::Hex(Vec::new().into()),
            fields: fields
                .into_iter()
                .map(|(n, a)| Field::new(n, a, Vec::new()))
                .collect(),
        }
    }

    pub fn with_field(mut self, field: Field) -> Self {
        self.fields.push(field);
        self
    }

    pub fn vertex_count(&self) -> usize {
        match &self.coordset {
            Coordset::Uniform(g) => g.vertex_count(),
            Coordset::Explicit { x, .. } => x.len(),
        }
    }

    pub fn cell_count(&self) -> usize {
        match (&self.topology, &self.coordset) {
            (Topology::Uniform, Coordset::Uniform(g)) => g.cell_count(),
            (Topology::Hex(c), _) => c.len() / 8,
            (Topology::Tri(c), _) => c.len() / 3,
            // validate_mesh rejects this combination
            (Topology::Uniform, Coordset::Explicit { .. }) => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cell_count() == 0
    }

    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn uniform_grid(&self) -> Option<&UniformGrid> {
        match &self.coordset {
            Coordset::Uniform(g) => Some(g),
            _ => None,
        }
    }

    pub fn vertex(&self, idx: usize) -> [f64; 3] {
        match &self.coordset {
            Coordset::Uniform(g) => {
                let i = idx % g.dims[0];
                let j = (idx / g.dims[0]) % g.dims[1];
                let k = idx / (g.dims[0] * g.dims[1]);
                g.point(i, j, k)
            }
            Coordset::Explicit { x, y, z } => [x[idx], y[idx], z[idx]],
        }
    }

    /// Axis-aligned bounding box `[min, max]`, or `None` without vertices.
    pub fn bounds(&self) -> Option<[[f64; 3]; 2]> {
        match &self.coordset {
            Coordset::Uniform(g) => {
                let hi = g.max_corner();
                Some([
                    std::array::from_fn(|a| g.origin[a].min(hi[a])),
                    std::array::from_fn(|a| g.origin[a].max(hi[a])),
                ])
            }
            Coordset::Explicit { x, y, z } => {
                if x.is_empty() {
                    return None;
                }
                let mut lo = [f64::INFINITY; 3];
                let mut hi = [f64::NEG_INFINITY; 3];
                for (a, arr) in [x, y, z].into_iter().enumerate() {
                    for &v in arr.iter() {
                        lo[a] = lo[a].min(v);
                        hi[a] = hi[a].max(v);
                    }
                }
                Some([lo, hi])
            }
        }
    }

    pub fn expected_len(&self, association: Association) -> usize {
        match association {
            Association::Vertex => self.vertex_count(),
            Association::Cell => self.cell_count(),
        }
    }

    /// Builds the mesh subtree. Arrays are shared, not copied.
    pub fn to_node(&self) -> DataNode {
        let mut coords = Object::new();
        match &self.coordset {
            Coordset::Uniform(g) => {
                put(&mut coords, "type", "uniform".into());
                put(&mut coords, "dims", g.dims.iter().map(|&d| d as i64).collect::<Vec<_>>().into());
                put(&mut coords, "origin", g.origin.to_vec().into());
                put(&mut coords, "spacing", g.spacing.to_vec().into());
            }
            Coordset::Explicit { x, y, z } => {
                put(&mut coords, "type", "explicit".into());
                put(&mut coords, "x", x.clone().into());
                put(&mut coords, "y", y.clone().into());
                put(&mut coords, "z", z.clone().into());
            }
        }
        let mut topo = Object::new();
        put(&mut topo, "type", self.topology.kind_name().into());
        if let Topology::Hex(c) | Topology::Tri(c) = &self.topology {
            put(&mut topo, "connectivity", c.clone().into());
        }
        let mut fields = Object::new();
        for f in &self.fields {
            let mut fo = Object::new();
            put(&mut fo, "association", f.association.as_str().into());
            put(&mut fo, "values", f.values.clone().into());
            put(&mut fields, &f.name, DataNode::Object(fo));
        }
        let mut root = Object::new();
        put(&mut root, "coordset", DataNode::Object(coords));
        put(&mut root, "topology", DataNode::Object(topo));
        put(&mut root, "fields", DataNode::Object(fields));
        DataNode::Object(root)
    }
}

fn put(obj: &mut Object, name: &str, node: DataNode) {
    obj.set(name, node).expect("mesh child names are valid");
}

fn str_at<'a>(node: &'a DataNode, path: &str) -> Result<&'a str, MeshError> {
    node.get_path(path)
        .ok_or_else(|| malformed(path, "missing"))?
        .as_str()
        .ok_or_else(|| malformed(path, "expected string"))
}

fn f64s_at(node: &DataNode, path: &str) -> Result<Array<f64>, MeshError> {
    node.get_path(path)
        .ok_or_else(|| malformed(path, "missing"))?
        .as_f64_array()
        .cloned()
        .ok_or_else(|| malformed(path, "expected float64 array"))
}

fn i64s_at(node: &DataNode, path: &str) -> Result<Array<i64>, MeshError> {
    node.get_path(path)
        .ok_or_else(|| malformed(path, "missing"))?
        .as_i64_array()
        .cloned()
        .ok_or_else(|| malformed(path, "expected int64 array"))
}

fn triple(arr: &Array<f64>, path: &str) -> Result<[f64; 3], MeshError> {
    let v: [f64; 3] = arr
        .as_slice()
        .try_into()
        .map_err(|_| malformed(path, "expected 3 components"))?;
    if v.iter().any(|c| !c.is_finite()) {
        return Err(malformed(path, "non-finite component"));
    }
    Ok(v)
}

/// Checks a subtree against the mesh schema and returns a typed view.
pub fn validate_mesh(channel: &DataNode) -> Result<MeshChannel, MeshError> {
    let coords = channel.child("coordset").ok_or(MeshError::MissingCoordset)?;
    let coordset = match str_at(coords, "type").map_err(|_| malformed("coordset/type", "missing or not a string"))? {
        "uniform" => {
            let dims_arr = i64s_at(coords, "dims").map_err(|_| malformed("coordset/dims", "expected int64[3]"))?;
            let dims: [i64; 3] = dims_arr
                .as_slice()
                .try_into()
                .map_err(|_| malformed("coordset/dims", "expected 3 components"))?;
            if dims.iter().any(|&d| d < 1) {
                return Err(malformed("coordset/dims", "vertex counts must be >= 1"));
            }
            if dims.iter().filter(|&&d| d == 1).count() > 1 {
                return Err(malformed("coordset/dims", "at most one axis may be flat"));
            }
            let origin = triple(&f64s_at(coords, "origin").map_err(|_| malformed("coordset/origin", "expected float64[3]"))?, "coordset/origin")?;
            let spacing = triple(&f64s_at(coords, "spacing").map_err(|_| malformed("coordset/spacing", "expected float64[3]"))?, "coordset/spacing")?;
            if spacing.iter().any(|&s| s <= 0.0) {
                return Err(malformed("coordset/spacing", "spacing must be positive"));
            }
            Coordset::Uniform(UniformGrid {
                dims: dims.map(|d| d as usize),
                origin,
                spacing,
            })
        }
        "explicit" => {
            let x = f64s_at(coords, "x").map_err(|_| malformed("coordset/x", "expected float64 array"))?;
            let y = f64s_at(coords, "y").map_err(|_| malformed("coordset/y", "expected float64 array"))?;
            let z = f64s_at(coords, "z").map_err(|_| malformed("coordset/z", "expected float64 array"))?;
            if x.len() != y.len() || x.len() != z.len() {
                return Err(malformed("coordset", "x, y and z differ in length"));
            }
            Coordset::Explicit { x, y, z }
        }
        other => return Err(malformed("coordset/type", format!("unknown coordset type {other:?}"))),
    };

    let topo = channel.child("topology").ok_or(MeshError::MissingTopology)?;
    let kind = topo
        .child("type")
        .and_then(DataNode::as_str)
        .ok_or_else(|| malformed("topology/type", "missing or not a string"))?;
    let vertex_count = match &coordset {
        Coordset::Uniform(g) => g.vertex_count(),
        Coordset::Explicit { x, .. } => x.len(),
    };
    let topology = match kind {
        "uniform" => {
            if !matches!(coordset, Coordset::Uniform(_)) {
                return Err(malformed("topology/type", "uniform topology needs a uniform coordset"));
            }
            Topology::Uniform
        }
        "hex" | "tri" => {
            if !matches!(coordset, Coordset::Explicit { .. }) {
                return Err(malformed("topology/type", "explicit topology needs an explicit coordset"));
            }
            let conn = i64s_at(topo, "connectivity")
                .map_err(|_| malformed("topology/connectivity", "expected int64 array"))?;
            let per = if kind == "hex" { 8 } else { 3 };
            if conn.len() % per != 0 {
                return Err(malformed(
                    "topology/connectivity",
                    format!("length {} is not a multiple of {per}", conn.len()),
                ));
            }
            if let Some((position, &index)) = conn
                .iter()
                .enumerate()
                .find(|(_, &i)| i < 0 || i as u64 >= vertex_count as u64)
            {
                return Err(MeshError::ConnectivityIndex {
                    position,
                    index,
                    vertex_count,
                });
            }
            if kind == "hex" {
                Topology::Hex(conn)
            } else {
                Topology::Tri(conn)
            }
        }
        other => return Err(MeshError::UnknownTopology(other.to_string())),
    };

    let mut mesh = MeshChannel {
        coordset,
        topology,
        fields: Vec::new(),
    };

    if let Some(fields) = channel.child("fields") {
        let fields = fields
            .as_object()
            .ok_or_else(|| malformed("fields", "expected object"))?;
        for (name, fnode) in fields.iter() {
            let path = format!("fields/{name}");
            if fnode.as_object().is_none() {
                return Err(malformed(&path, "expected object"));
            }
            if let Some(c) = fnode.child("components") {
                if c.as_i64() != Some(1) {
                    return Err(MeshError::NonScalarField(name.to_string()));
                }
            }
            let association = match fnode.child("association").and_then(DataNode::as_str) {
                Some("vertex") => Association::Vertex,
                Some("cell") => Association::Cell,
                _ => return Err(malformed(&path, "association must be \"vertex\" or \"cell\"")),
            };
            let values = match fnode.child("values") {
                Some(DataNode::Float64Array(a)) => a.clone(),
                Some(DataNode::Object(_)) => return Err(MeshError::NonScalarField(name.to_string())),
                _ => return Err(malformed(&path, "values must be a float64 array")),
            };
            let expected = mesh.expected_len(association);
            if values.len() != expected {
                return Err(MeshError::FieldLength {
                    field: name.to_string(),
                    association,
                    expected,
                    actual: values.len(),
                });
            }
            mesh.fields.push(Field {
                name: name.to_string(),
                association,
                values,
            });
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::serialize_node;
    use proptest::prelude::*;

    fn grid(n: usize) -> UniformGrid {
        UniformGrid {
            dims: [n; 3],
            origin: [0.0; 3],
            spacing: [1.0; 3],
        }
    }

    #[test]
    fn uniform_vertex_field_ok() {
        let m = MeshChannel::uniform(grid(3)).with_field(Field::new("e", Association::Vertex, vec![0.0; 27]));
        let back = validate_mesh(&m.to_node()).unwrap();
        assert_eq!(back.vertex_count(), 27);
        assert_eq!(back.cell_count(), 8);
    }

    #[test]
    fn cell_field_length_mismatch() {
        // cells of a 3x3x3-vertex grid, counted by walking every cell origin
        let mut cells = 0;
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..3 {
                    if i + 1 < 3 && j + 1 < 3 && k + 1 < 3 {
                        cells += 1;
                    }
                }
            }
        }
        let m = MeshChannel::uniform(grid(3)).with_field(Field::new("p", Association::Cell, vec![0.0; 9]));
        assert_eq!(
            validate_mesh(&m.to_node()).unwrap_err(),
            MeshError::FieldLength {
                field: "p".into(),
                association: Association::Cell,
                expected: cells,
                actual: 9
            }
        );
    }

    fn unit_hex(conn: Vec<i64>) -> MeshChannel {
        let (mut x, mut y, mut z) = (vec![], vec![], vec![]);
        for (a, b, c) in [(0., 0., 0.), (1., 0., 0.), (1., 1., 0.), (0., 1., 0.), (0., 0., 1.), (1., 0., 1.), (1., 1., 1.), (0., 1., 1.)] {
            x.push(a);
            y.push(b);
            z.push(c);
        }
        MeshChannel {
            coordset: Coordset::Explicit {
                x: x.into(),
                y: y.into(),
                z: z.into(),
            },
            topology: Topology::Hex(conn.into()),
            fields: vec![],
        }
    }

    #[test]
    fn connectivity_index_at_vertex_count() {
        let m = unit_hex(vec![0, 1, 2, 3, 4, 5, 6, 8]);
        assert_eq!(
            validate_mesh(&m.to_node()).unwrap_err(),
            MeshError::ConnectivityIndex {
                position: 7,
                index: 8,
                vertex_count: 8
            }
        );
    }

    #[test]
    fn distinct_error_codes() {
        let mut n = DataNode::object();
        assert_eq!(validate_mesh(&n).unwrap_err(), MeshError::MissingCoordset);

        n = unit_hex((0..8).collect()).to_node();
        n.set_path("topology/type", "polyhedral").unwrap();
        assert_eq!(validate_mesh(&n).unwrap_err(), MeshError::UnknownTopology("polyhedral".into()));

        n = unit_hex((0..8).collect()).to_node();
        n.set_path("fields/v/association", "vertex").unwrap();
        n.set_path("fields/v/values/x", vec![0.0; 8]).unwrap();
        assert_eq!(validate_mesh(&n).unwrap_err(), MeshError::NonScalarField("v".into()));

        n = unit_hex((0..8).collect()).to_node();
        n.set_path("fields/v/association", "vertex").unwrap();
        n.set_path("fields/v/components", 3i64).unwrap();
        n.set_path("fields/v/values", vec![0.0; 8]).unwrap();
        assert_eq!(validate_mesh(&n).unwrap_err(), MeshError::NonScalarField("v".into()));
    }

    #[test]
    fn empty_mesh_is_valid() {
        let m = MeshChannel::empty([("e", Association::Vertex), ("p", Association::Cell)]);
        let v = validate_mesh(&m.to_node()).unwrap();
        assert_eq!(v.cell_count(), 0);
        assert_eq!(v.fields.len(), 2);
        assert!(v.bounds().is_none());
    }

    #[test]
    fn planar_uniform_grid() {
        let g = UniformGrid {
            dims: [4, 5, 1],
            origin: [0.0; 3],
            spacing: [1.0; 3],
        };
        assert_eq!(g.cell_count(), 12);
        let m = MeshChannel::uniform(g).with_field(Field::new("p", Association::Cell, vec![0.0; 12]));
        validate_mesh(&m.to_node()).unwrap();
        let mut bad = m.to_node();
        bad.set_path("coordset/dims", vec![4i64, 1, 1]).unwrap();
        assert!(matches!(validate_mesh(&bad), Err(MeshError::Malformed { .. })));
    }

    #[test]
    fn to_node_shares_arrays() {
        let m = MeshChannel::uniform(grid(2)).with_field(Field::new("e", Association::Vertex, vec![1.0; 8]));
        let node = m.to_node();
        let back = validate_mesh(&node).unwrap();
        assert!(std::sync::Arc::ptr_eq(&back.fields[0].values.shared(), &m.fields[0].values.shared()));
        assert_eq!(serialize_node(&back.to_node()), serialize_node(&node));
    }

    // Generated meshes: a random uniform or single-lattice hex mesh with
    // random field lengths. The oracle decides validity from the counts.
    proptest! {
        #[test]
        fn accepts_exactly_consistent_meshes(
            dims in prop::array::uniform3(2usize..5),
            vlen_delta in -1i64..=1,
            clen_delta in -1i64..=1,
            bad_index in prop::option::of(0usize..8),
        ) {
            let g = UniformGrid { dims, origin: [0.0; 3], spacing: [0.5; 3] };
            let nv = dims[0] * dims[1] * dims[2];
            let nc = (dims[0] - 1) * (dims[1] - 1) * (dims[2] - 1);
            let vlen = (nv as i64 + vlen_delta) as usize;
            let clen = (nc as i64 + clen_delta) as usize;
            let m = MeshChannel::uniform(g)
                .with_field(Field::new("v", Association::Vertex, vec![0.0; vlen]))
                .with_field(Field::new("c", Association::Cell, vec![0.0; clen]));
            prop_assert_eq!(validate_mesh(&m.to_node()).is_ok(), vlen_delta == 0 && clen_delta == 0);

            let mut conn: Vec<i64> = (0..8).collect();
            if let Some(p) = bad_index { conn[p] = 8; }
            let h = unit_hex(conn);
            prop_assert_eq!(validate_mesh(&h.to_node()).is_ok(), bad_index.is_none());
        }
    }
}
