//! Planar slicing: axis-aligned on uniform grids, arbitrary planes on
//! hexahedral meshes.

use rayon::prelude::*;

use crate::node::{Array, Association, Coordset, Field, MeshChannel, Topology, UniformGrid};

use super::cells::{cross, dot, norm, sub, HexCells, HEX_EDGES};
use super::{Axis, ReduceError};

/// Grid-index positions this close to an integer are treated as lying on
/// the vertex layer. Keeps neighbouring slabs consistent about which one
/// owns a plane on their shared face.
const SNAP: f64 = 1e-9;

fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() <= SNAP {
        r
    } else {
        u
    }
}

/// Position of `coordinate` along `axis` in vertex-index units, snapped.
pub(crate) fn layer_position(grid: &UniformGrid, axis: Axis, coordinate: f64) -> f64 {
    let a = axis.index();
    snap((coordinate - grid.origin[a]) / grid.spacing[a])
}

/// Slices a 3D uniform grid with the plane `axis = coordinate`.
///
/// The result is a planar uniform grid keeping the two transverse axes and a
/// single vertex layer on `axis`. Vertex fields are interpolated linearly
/// between the bounding layers; cell fields come from the cell layer just
/// below the plane (the first layer when the plane is the lower face).
pub fn slice_axis_aligned(axis: Axis, coordinate: f64, mesh: &MeshChannel) -> Result<MeshChannel, ReduceError> {
    let grid = match (&mesh.coordset, &mesh.topology) {
        (Coordset::Uniform(g), Topology::Uniform) if !g.is_planar() => *g,
        _ => {
            return Err(ReduceError::StageMismatch {
                stage: "axis-aligned slice",
                expected: "3D uniform grid",
            })
        }
    };
    let a = axis.index();
    let u = layer_position(&grid, axis, coordinate);
    let last = (grid.dims[a] - 1) as f64;
    if !(0.0..=last).contains(&u) {
        let hi = grid.origin[a] + last * grid.spacing[a];
        return Err(ReduceError::SliceOutOfBounds {
            axis,
            coordinate,
            lo: grid.origin[a],
            hi,
        });
    }
    let lower = (u.floor() as usize).min(grid.dims[a] - 2);
    let w = u - lower as f64;
    let cell_layer = (u.ceil() as usize).saturating_sub(1).min(grid.dims[a] - 2);

    let mut out_grid = grid;
    out_grid.dims[a] = 1;
    out_grid.origin[a] = coordinate;

    let out_dims = out_grid.dims;
    let cell_dims = grid.cell_dims();
    let out_cell_dims = out_grid.cell_dims();

    let fields = mesh
        .fields
        .iter()
        .map(|f| {
            let values: Vec<f64> = match f.association {
                Association::Vertex => {
                    let n = out_grid.vertex_count();
                    (0..n)
                        .map(|idx| {
                            let mut ijk = unflatten(idx, out_dims);
                            ijk[a] = lower;
                            let v0 = f.values[grid.vertex_index(ijk[0], ijk[1], ijk[2])];
                            if w == 0.0 {
                                return v0;
                            }
                            ijk[a] = lower + 1;
                            let v1 = f.values[grid.vertex_index(ijk[0], ijk[1], ijk[2])];
                            if w == 1.0 {
                                v1
                            } else {
                                (1.0 - w) * v0 + w * v1
                            }
                        })
                        .collect()
                }
                Association::Cell => {
                    let n = out_grid.cell_count();
                    (0..n)
                        .map(|idx| {
                            let mut ijk = unflatten(idx, out_cell_dims);
                            ijk[a] = cell_layer;
                            f.values[ijk[0] + cell_dims[0] * (ijk[1] + cell_dims[1] * ijk[2])]
                        })
                        .collect()
                }
            };
            Field::new(f.name.clone(), f.association, values)
        })
        .collect();

    Ok(MeshChannel {
        coordset: Coordset::Uniform(out_grid),
        topology: Topology::Uniform,
        fields,
    })
}

fn unflatten(idx: usize, dims: [usize; 3]) -> [usize; 3] {
    [idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1])]
}

/// Counters from a plane slice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlaneSliceStats {
    pub cut_cells: usize,
    pub degenerate_cells: usize,
}

struct CellCut {
    cell: usize,
    points: Vec<[f64; 3]>,
    /// Per point: the edge's two vertex ids and the weight of the second.
    weights: Vec<(usize, usize, f64)>,
}

/// Cuts every hexahedron with the plane through `origin` with `normal`,
/// producing a triangle soup.
///
/// Corners with signed distance `>= 0` count as above the plane, so a plane
/// lying on a face shared by two cells is emitted once, by the cell below.
pub fn slice_plane_hex(
    origin: [f64; 3],
    normal: [f64; 3],
    mesh: &MeshChannel,
) -> Result<(MeshChannel, PlaneSliceStats), ReduceError> {
    let len = norm(normal);
    if !(len > 0.0 && len.is_finite()) {
        return Err(ReduceError::InvalidStage("plane normal must be non-zero".into()));
    }
    let n = normal.map(|c| c / len);
    let cells = HexCells::new(mesh).ok_or(ReduceError::StageMismatch {
        stage: "plane slice",
        expected: "hexahedral mesh",
    })?;

    let results: Vec<Result<Option<CellCut>, ()>> = (0..cells.cell_count())
        .into_par_iter()
        .map(|cell| cut_cell(&cells, cell, origin, n))
        .collect();

    let mut stats = PlaneSliceStats::default();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zs = Vec::new();
    let mut conn: Vec<i64> = Vec::new();
    let mut tri_cells = Vec::new();
    let mut weights = Vec::new();
    for r in results {
        let cut = match r {
            Err(()) => {
                stats.degenerate_cells += 1;
                continue;
            }
            Ok(None) => continue,
            Ok(Some(c)) => c,
        };
        stats.cut_cells += 1;
        let base = xs.len() as i64;
        for p in &cut.points {
            xs.push(p[0]);
            ys.push(p[1]);
            zs.push(p[2]);
        }
        weights.extend(cut.weights);
        for t in 1..cut.points.len() - 1 {
            conn.extend_from_slice(&[base, base + t as i64, base + t as i64 + 1]);
            tri_cells.push(cut.cell);
        }
    }

    let fields = mesh
        .fields
        .iter()
        .map(|f| {
            let values: Vec<f64> = match f.association {
                Association::Vertex => weights
                    .iter()
                    .map(|&(va, vb, t)| {
                        let (fa, fb) = (f.values[va], f.values[vb]);
                        if t == 0.0 {
                            fa
                        } else if t == 1.0 {
                            fb
                        } else {
                            fa + t * (fb - fa)
                        }
                    })
                    .collect(),
                Association::Cell => tri_cells.iter().map(|&c| f.values[c]).collect(),
            };
            Field::new(f.name.clone(), f.association, values)
        })
        .collect();

    Ok((
        MeshChannel {
            coordset: Coordset::Explicit {
                x: Array::owned(xs),
                y: Array::owned(ys),
                z: Array::owned(zs),
            },
            topology: Topology::Tri(Array::owned(conn)),
            fields,
        },
        stats,
    ))
}

fn cut_cell(cells: &HexCells<'_>, cell: usize, origin: [f64; 3], n: [f64; 3]) -> Result<Option<CellCut>, ()> {
    let ids = cells.corners(cell);
    for i in 0..8 {
        if ids[i + 1..].contains(&ids[i]) {
            return Err(());
        }
    }
    let pts = ids.map(|v| cells.point(v));
    let d = pts.map(|p| dot(sub(p, origin), n));
    let above = d.map(|x| x >= 0.0);
    if above.iter().all(|&s| s) || above.iter().all(|&s| !s) {
        return Ok(None);
    }

    let mut points: Vec<[f64; 3]> = Vec::with_capacity(6);
    let mut weights = Vec::with_capacity(6);
    for [qa, qb] in HEX_EDGES {
        if above[qa] == above[qb] {
            continue;
        }
        // interpolate from the lower vertex id so shared edges agree bitwise
        let (qa, qb) = if ids[qa] < ids[qb] { (qa, qb) } else { (qb, qa) };
        let t = d[qa] / (d[qa] - d[qb]);
        let (pa, pb) = (pts[qa], pts[qb]);
        let p = if t == 0.0 {
            pa
        } else if t == 1.0 {
            pb
        } else {
            std::array::from_fn(|c| pa[c] + t * (pb[c] - pa[c]))
        };
        if !points.contains(&p) {
            points.push(p);
            weights.push((ids[qa], ids[qb], t));
        }
    }
    if points.len() < 3 {
        return Ok(None);
    }

    // order around the centroid within the plane
    let k = points.len() as f64;
    let centroid: [f64; 3] = std::array::from_fn(|c| points.iter().map(|p| p[c]).sum::<f64>() / k);
    let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = cross(n, helper);
    let u = u.map(|c| c / norm(u));
    let v = cross(n, u);
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let r = sub(*p, centroid);
            (dot(r, v).atan2(dot(r, u)), i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    Ok(Some(CellCut {
        cell,
        points: order.iter().map(|&(_, i)| points[i]).collect(),
        weights: order.iter().map(|&(_, i)| weights[i]).collect(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::validate_mesh;

    fn grid(dims: [usize; 3], origin: [f64; 3], spacing: [f64; 3]) -> UniformGrid {
        UniformGrid { dims, origin, spacing }
    }

    fn with_linear_field(g: UniformGrid, f: impl Fn([f64; 3]) -> f64) -> MeshChannel {
        let mut vals = Vec::new();
        for k in 0..g.dims[2] {
            for j in 0..g.dims[1] {
                for i in 0..g.dims[0] {
                    vals.push(f(g.point(i, j, k)));
                }
            }
        }
        let cells = g.cell_count();
        MeshChannel::uniform(g)
            .with_field(Field::new("f", Association::Vertex, vals))
            .with_field(Field::new("c", Association::Cell, (0..cells).map(|c| c as f64).collect::<Vec<_>>()))
    }

    pub(crate) fn unit_cube(f: impl Fn([f64; 3]) -> f64) -> MeshChannel {
        let corners = [[0., 0., 0.], [1., 0., 0.], [1., 1., 0.], [0., 1., 0.], [0., 0., 1.], [1., 0., 1.], [1., 1., 1.], [0., 1., 1.]];
        MeshChannel {
            coordset: Coordset::Explicit {
                x: corners.iter().map(|p| p[0]).collect::<Vec<_>>().into(),
                y: corners.iter().map(|p| p[1]).collect::<Vec<_>>().into(),
                z: corners.iter().map(|p| p[2]).collect::<Vec<_>>().into(),
            },
            topology: Topology::Hex((0..8).collect::<Vec<i64>>().into()),
            fields: vec![
                Field::new("f", Association::Vertex, corners.iter().map(|&p| f(p)).collect::<Vec<_>>()),
                Field::new("id", Association::Cell, vec![42.0]),
            ],
        }
    }

    pub(crate) fn tri_area(m: &MeshChannel) -> f64 {
        let Topology::Tri(conn) = &m.topology else { panic!("not a triangle soup") };
        conn.chunks(3)
            .map(|t| {
                let (a, b, c) = (m.vertex(t[0] as usize), m.vertex(t[1] as usize), m.vertex(t[2] as usize));
                0.5 * norm(cross(sub(b, a), sub(c, a)))
            })
            .sum()
    }

    #[test]
    fn slice_cell_count_law() {
        let g = grid([9, 6, 5], [0.0; 3], [0.25; 3]);
        let m = with_linear_field(g, |p| p[2]);
        for (axis, expect) in [(Axis::X, 5 * 4), (Axis::Y, 8 * 4), (Axis::Z, 8 * 5)] {
            let out = slice_axis_aligned(axis, 0.3, &m).unwrap();
            assert_eq!(out.cell_count(), expect);
            validate_mesh(&out.to_node()).unwrap();
        }
    }

    #[test]
    fn linear_field_reproduced() {
        let g = grid([5, 5, 7], [-1.0, 0.5, 2.0], [0.5, 0.25, 0.3]);
        let m = with_linear_field(g, |p| p[2]);
        let c = 2.77;
        let out = slice_axis_aligned(Axis::Z, c, &m).unwrap();
        for v in out.field("f").unwrap().values.iter() {
            assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn slice_on_vertex_layer_is_exact() {
        let g = grid([4, 4, 4], [0.0; 3], [1.0; 3]);
        let m = with_linear_field(g, |p| (p[0] * 7.3 + p[2] * 0.1).sin());
        let out = slice_axis_aligned(Axis::Z, 2.0, &m).unwrap();
        let f = m.field("f").unwrap();
        for (idx, v) in out.field("f").unwrap().values.iter().enumerate() {
            let (i, j) = (idx % 4, idx / 4);
            assert_eq!(v.to_bits(), f.values[g.vertex_index(i, j, 2)].to_bits());
        }
        // cell layer just below the plane
        let c = out.field("c").unwrap();
        assert_eq!(c.values[0], g.cell_index(0, 0, 1) as f64);
        // the lower face picks the first layer
        let low = slice_axis_aligned(Axis::Z, 0.0, &m).unwrap();
        assert_eq!(low.field("c").unwrap().values[0], 0.0);
    }

    #[test]
    fn out_of_bounds_coordinate() {
        let m = with_linear_field(grid([3, 3, 3], [0.0; 3], [1.0; 3]), |p| p[0]);
        assert!(matches!(
            slice_axis_aligned(Axis::Y, 2.5, &m),
            Err(ReduceError::SliceOutOfBounds { .. })
        ));
    }

    #[test]
    fn unit_cube_mid_plane() {
        let m = unit_cube(|p| p[2]);
        let (out, stats) = slice_plane_hex([0.0, 0.0, 0.5], [0.0, 0.0, 1.0], &m).unwrap();
        assert_eq!(out.cell_count(), 2);
        assert_eq!(stats.cut_cells, 1);
        assert!((tri_area(&out) - 1.0).abs() < 1e-12);
        assert!(out.field("id").unwrap().values.iter().all(|&v| v == 42.0));
        validate_mesh(&out.to_node()).unwrap();
    }

    #[test]
    fn cut_points_interpolate_vertex_field() {
        let m = unit_cube(|p| p[2]);
        let (out, _) = slice_plane_hex([0.3, 0.1, 0.25], [0.0, 0.0, 2.0], &m).unwrap();
        assert!(out.vertex_count() >= 3);
        for v in out.field("f").unwrap().values.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_outside_mesh() {
        let m = unit_cube(|p| p[0]);
        let (out, stats) = slice_plane_hex([0.0, 0.0, 3.0], [0.0, 0.0, 1.0], &m).unwrap();
        assert_eq!(out.cell_count(), 0);
        assert_eq!(stats, PlaneSliceStats::default());
        validate_mesh(&out.to_node()).unwrap();
    }

    #[test]
    fn degenerate_hex_skipped_and_counted() {
        let mut m = unit_cube(|p| p[0]);
        m.topology = Topology::Hex(vec![0i64, 1, 2, 3, 4, 5, 6, 6].into());
        let (out, stats) = slice_plane_hex([0.0, 0.0, 0.5], [0.0, 0.0, 1.0], &m).unwrap();
        assert_eq!(out.cell_count(), 0);
        assert_eq!(stats.degenerate_cells, 1);
    }

    #[test]
    fn zero_normal_rejected() {
        let m = unit_cube(|p| p[0]);
        assert!(matches!(
            slice_plane_hex([0.0; 3], [0.0; 3], &m),
            Err(ReduceError::InvalidStage(_))
        ));
    }

    #[test]
    fn plane_through_corner_only() {
        let m = unit_cube(|p| p[0]);
        let (out, _) = slice_plane_hex([1.0, 1.0, 1.0], [1.0, 1.0, 1.0], &m).unwrap();
        assert_eq!(out.cell_count(), 0);
    }
}
