//! Uniform access to hexahedral cells of uniform and explicit meshes.

use crate::node::{Coordset, MeshChannel, Topology, UniformGrid};

/// VTK hexahedron corner offsets `(di, dj, dk)`.
pub(crate) const HEX_CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// The twelve hexahedron edges as corner pairs.
pub(crate) const HEX_EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

pub(crate) enum HexCells<'a> {
    Uniform(UniformGrid),
    Explicit {
        x: &'a [f64],
        y: &'a [f64],
        z: &'a [f64],
        conn: &'a [i64],
    },
}

impl<'a> HexCells<'a> {
    /// `None` for triangle soups and planar grids.
    pub fn new(mesh: &'a MeshChannel) -> Option<Self> {
        match (&mesh.coordset, &mesh.topology) {
            (Coordset::Uniform(g), Topology::Uniform) if !g.is_planar() => Some(HexCells::Uniform(*g)),
            (Coordset::Explicit { x, y, z }, Topology::Hex(conn)) => Some(HexCells::Explicit {
                x,
                y,
                z,
                conn,
            }),
            _ => None,
        }
    }

    pub fn cell_count(&self) -> usize {
        match self {
            HexCells::Uniform(g) => g.cell_count(),
            HexCells::Explicit { conn, .. } => conn.len() / 8,
        }
    }

    pub fn corners(&self, cell: usize) -> [usize; 8] {
        match self {
            HexCells::Uniform(g) => {
                let c = g.cell_dims();
                let (i, j, k) = (cell % c[0], (cell / c[0]) % c[1], cell / (c[0] * c[1]));
                HEX_CORNERS.map(|[di, dj, dk]| g.vertex_index(i + di, j + dj, k + dk))
            }
            HexCells::Explicit { conn, .. } => {
                std::array::from_fn(|q| conn[8 * cell + q] as usize)
            }
        }
    }

    pub fn point(&self, v: usize) -> [f64; 3] {
        match self {
            HexCells::Uniform(g) => {
                let i = v % g.dims[0];
                let j = (v / g.dims[0]) % g.dims[1];
                let k = v / (g.dims[0] * g.dims[1]);
                g.point(i, j, k)
            }
            HexCells::Explicit { x, y, z, .. } => [x[v], y[v], z[v]],
        }
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
