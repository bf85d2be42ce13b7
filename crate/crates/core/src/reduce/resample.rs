//! Resampling onto a uniform grid.
//!
//! Sample points are located in the source mesh; vertex fields are
//! interpolated trilinearly inside the containing hexahedron and cell fields
//! take the containing cell's value. Explicit meshes are searched through a
//! uniform bin grid over cell bounding boxes, and parametric coordinates come
//! from Newton iteration on the trilinear map.

use rayon::prelude::*;

use crate::node::{Association, Field, MeshChannel, UniformGrid};

use super::cells::{HexCells, HEX_CORNERS};
use super::ReduceError;

pub const NEWTON_TOLERANCE: f64 = 1e-10;
pub const NEWTON_MAX_ITERATIONS: usize = 20;
/// Parametric slack when deciding whether a converged point is inside.
const INSIDE_SLACK: f64 = 1e-9;
/// Value written at sample points outside the source mesh.
pub const FILL_VALUE: f64 = 0.0;

/// Region covered by the output grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bounds {
    /// Bounding box of the input mesh.
    Auto,
    Box { min: [f64; 3], max: [f64; 3] },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ResampleStats {
    pub out_of_domain: usize,
    pub newton_fallbacks: usize,
}

/// Where a point fell in the source mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    Inside {
        cell: usize,
        corners: [usize; 8],
        weights: [f64; 8],
    },
    /// Newton did not converge in a cell whose box contains the point.
    Fallback { cell: usize, nearest: usize },
    Outside,
}

impl Location {
    pub fn cell(&self) -> Option<usize> {
        match *self {
            Location::Inside { cell, .. } | Location::Fallback { cell, .. } => Some(cell),
            Location::Outside => None,
        }
    }

    /// Interpolated vertex-field value, `None` outside the mesh.
    pub fn interpolate(&self, values: &[f64]) -> Option<f64> {
        match self {
            Location::Inside { corners, weights, .. } => {
                Some(corners.iter().zip(weights).map(|(&c, &w)| w * values[c]).sum())
            }
            Location::Fallback { nearest, .. } => Some(values[*nearest]),
            Location::Outside => None,
        }
    }
}

/// Trilinear shape functions at parametric `(r, s, t)`, VTK corner order.
pub fn shape_functions(p: [f64; 3]) -> [f64; 8] {
    HEX_CORNERS.map(|[a, b, c]| {
        let f = |bit: usize, x: f64| if bit == 1 { x } else { 1.0 - x };
        f(a, p[0]) * f(b, p[1]) * f(c, p[2])
    })
}

fn shape_derivatives(p: [f64; 3]) -> [[f64; 3]; 8] {
    HEX_CORNERS.map(|bits| {
        let f = |bit: usize, x: f64| if bit == 1 { x } else { 1.0 - x };
        let df = |bit: usize| if bit == 1 { 1.0 } else { -1.0 };
        [
            df(bits[0]) * f(bits[1], p[1]) * f(bits[2], p[2]),
            f(bits[0], p[0]) * df(bits[1]) * f(bits[2], p[2]),
            f(bits[0], p[0]) * f(bits[1], p[1]) * df(bits[2]),
        ]
    })
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    Some(std::array::from_fn(|col| {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        det(mc) / d
    }))
}

/// Inverts the trilinear map of a hexahedron. `None` if Newton fails to
/// converge within the iteration budget.
pub fn inverse_trilinear(corners: &[[f64; 3]; 8], target: [f64; 3]) -> Option<[f64; 3]> {
    let mut r = [0.5; 3];
    for _ in 0..NEWTON_MAX_ITERATIONS {
        let n = shape_functions(r);
        let dn = shape_derivatives(r);
        let mut x = [0.0; 3];
        let mut jac = [[0.0; 3]; 3];
        for q in 0..8 {
            for row in 0..3 {
                x[row] += n[q] * corners[q][row];
                for col in 0..3 {
                    jac[row][col] += dn[q][col] * corners[q][row];
                }
            }
        }
        let residual = [target[0] - x[0], target[1] - x[1], target[2] - x[2]];
        let delta = solve3(jac, residual)?;
        for a in 0..3 {
            r[a] += delta[a];
        }
        if !r.iter().all(|c| c.is_finite()) {
            return None;
        }
        if delta.iter().all(|d| d.abs() < NEWTON_TOLERANCE) {
            return Some(r);
        }
    }
    None
}

/// Point location over a hexahedral mesh.
pub struct PointLocator<'a> {
    cells: HexCells<'a>,
    bins: Option<BinGrid>,
}

struct BinGrid {
    lo: [f64; 3],
    size: [f64; 3],
    res: [usize; 3],
    /// CSR layout: `start[b]..start[b + 1]` indexes `cells`.
    start: Vec<usize>,
    cells: Vec<usize>,
    boxes: Vec<[[f64; 3]; 2]>,
}

impl BinGrid {
    fn bin_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let u = (p[a] - self.lo[a]) / self.size[a];
            if !(u >= -1e-12 && u <= self.res[a] as f64 + 1e-12) {
                return None;
            }
            out[a] = (u.max(0.0) as usize).min(self.res[a] - 1);
        }
        Some(out)
    }

    fn flat(&self, b: [usize; 3]) -> usize {
        b[0] + self.res[0] * (b[1] + self.res[1] * b[2])
    }
}

impl<'a> PointLocator<'a> {
    /// `None` unless the mesh is made of hexahedra (uniform 3D or explicit).
    pub fn new(mesh: &'a MeshChannel) -> Option<Self> {
        let cells = HexCells::new(mesh)?;
        let bins = match &cells {
            HexCells::Uniform(_) => None,
            HexCells::Explicit { .. } => build_bins(&cells),
        };
        Some(PointLocator { cells, bins })
    }

    pub fn locate(&self, p: [f64; 3]) -> Location {
        match &self.cells {
            HexCells::Uniform(g) => locate_uniform(g, p),
            HexCells::Explicit { .. } => self.locate_explicit(p),
        }
    }

    fn locate_explicit(&self, p: [f64; 3]) -> Location {
        let Some(bins) = &self.bins else {
            return Location::Outside;
        };
        let Some(b) = bins.bin_of(p) else {
            return Location::Outside;
        };
        let flat = bins.flat(b);
        let mut fallback = None;
        for &cell in &bins.cells[bins.start[flat]..bins.start[flat + 1]] {
            let [lo, hi] = bins.boxes[cell];
            let slack = 1e-12 * (1.0 + p.iter().fold(0.0f64, |m, c| m.max(c.abs())));
            if (0..3).any(|a| p[a] < lo[a] - slack || p[a] > hi[a] + slack) {
                continue;
            }
            let corners = self.cells.corners(cell);
            let pts = corners.map(|v| self.cells.point(v));
            match inverse_trilinear(&pts, p) {
                Some(r) if r.iter().all(|&c| (-INSIDE_SLACK..=1.0 + INSIDE_SLACK).contains(&c)) => {
                    let r = r.map(|c| c.clamp(0.0, 1.0));
                    return Location::Inside {
                        cell,
                        corners,
                        weights: shape_functions(r),
                    };
                }
                Some(_) => {}
                None => {
                    if fallback.is_none() {
                        let nearest = (0..8)
                            .min_by(|&a, &b| dist2(pts[a], p).total_cmp(&dist2(pts[b], p)))
                            .map(|q| corners[q])
                            .unwrap();
                        fallback = Some(Location::Fallback { cell, nearest });
                    }
                }
            }
        }
        fallback.unwrap_or(Location::Outside)
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn locate_uniform(g: &UniformGrid, p: [f64; 3]) -> Location {
    let mut ijk = [0usize; 3];
    let mut r = [0.0; 3];
    for a in 0..3 {
        let u = (p[a] - g.origin[a]) / g.spacing[a];
        let last = (g.dims[a] - 1) as f64;
        if !(u >= -INSIDE_SLACK && u <= last + INSIDE_SLACK) {
            return Location::Outside;
        }
        let u = u.clamp(0.0, last);
        let i = (u.floor() as usize).min(g.dims[a] - 2);
        ijk[a] = i;
        r[a] = u - i as f64;
    }
    let corners = HEX_CORNERS.map(|[di, dj, dk]| g.vertex_index(ijk[0] + di, ijk[1] + dj, ijk[2] + dk));
    Location::Inside {
        cell: g.cell_index(ijk[0], ijk[1], ijk[2]),
        corners,
        weights: shape_functions(r),
    }
}

fn build_bins(cells: &HexCells<'_>) -> Option<BinGrid> {
    let count = cells.cell_count();
    if count == 0 {
        return None;
    }
    let boxes: Vec<[[f64; 3]; 2]> = (0..count)
        .into_par_iter()
        .map(|c| {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for v in cells.corners(c) {
                let p = cells.point(v);
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
            [lo, hi]
        })
        .collect();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for [blo, bhi] in &boxes {
        for a in 0..3 {
            lo[a] = lo[a].min(blo[a]);
            hi[a] = hi[a].max(bhi[a]);
        }
    }
    let per_axis = ((count as f64).cbrt().ceil() as usize).clamp(1, 128);
    let res = [per_axis; 3];
    let size: [f64; 3] = std::array::from_fn(|a| {
        let s = (hi[a] - lo[a]) / res[a] as f64;
        if s > 0.0 {
            s
        } else {
            1.0
        }
    });
    let mut grid = BinGrid {
        lo,
        size,
        res,
        start: Vec::new(),
        cells: Vec::new(),
        boxes,
    };
    let range = |g: &BinGrid, c: usize| -> [[usize; 2]; 3] {
        let [blo, bhi] = g.boxes[c];
        std::array::from_fn(|a| {
            let f = |x: f64| (((x - g.lo[a]) / g.size[a]).max(0.0) as usize).min(g.res[a] - 1);
            [f(blo[a]), f(bhi[a])]
        })
    };
    let nbins = res.iter().product::<usize>();
    let mut counts = vec![0usize; nbins + 1];
    for c in 0..count {
        let r = range(&grid, c);
        for k in r[2][0]..=r[2][1] {
            for j in r[1][0]..=r[1][1] {
                for i in r[0][0]..=r[0][1] {
                    counts[grid.flat([i, j, k]) + 1] += 1;
                }
            }
        }
    }
    for b in 0..nbins {
        counts[b + 1] += counts[b];
    }
    let mut fill = counts.clone();
    let mut members = vec![0usize; counts[nbins]];
    for c in 0..count {
        let r = range(&grid, c);
        for k in r[2][0]..=r[2][1] {
            for j in r[1][0]..=r[1][1] {
                for i in r[0][0]..=r[0][1] {
                    let b = grid.flat([i, j, k]);
                    members[fill[b]] = c;
                    fill[b] += 1;
                }
            }
        }
    }
    grid.start = counts;
    grid.cells = members;
    Some(grid)
}

/// Resamples `mesh` onto a uniform grid with `dims` vertices per axis.
///
/// Points outside the source mesh receive [`FILL_VALUE`]. With
/// [`Bounds::Auto`] and an empty input the result is an empty mesh.
pub fn resample_to_grid(
    dims: [usize; 3],
    bounds: Bounds,
    mesh: &MeshChannel,
) -> Result<(MeshChannel, ResampleStats), ReduceError> {
    if dims.iter().any(|&d| d < 2) {
        return Err(ReduceError::InvalidStage(format!("resample dims {dims:?} must be >= 2 per axis")));
    }
    let locator = PointLocator::new(mesh).ok_or(ReduceError::StageMismatch {
        stage: "resample",
        expected: "hexahedral mesh",
    })?;
    let (lo, hi) = match bounds {
        Bounds::Box { min, max } => (min, max),
        Bounds::Auto => match mesh.bounds() {
            Some([lo, hi]) if mesh.cell_count() > 0 => (lo, hi),
            _ => {
                let names = mesh.fields.iter().map(|f| (f.name.as_str(), f.association));
                return Ok((MeshChannel::empty(names), ResampleStats::default()));
            }
        },
    };
    if (0..3).any(|a| !(hi[a] > lo[a]) || !lo[a].is_finite() || !hi[a].is_finite()) {
        return Err(ReduceError::InvalidStage(format!("degenerate resample bounds {lo:?}..{hi:?}")));
    }
    let grid = UniformGrid {
        dims,
        origin: lo,
        spacing: std::array::from_fn(|a| (hi[a] - lo[a]) / (dims[a] - 1) as f64),
    };

    let mut stats = ResampleStats::default();
    let wants = |assoc| mesh.fields.iter().any(|f| f.association == assoc);

    let vertex_locs: Vec<Location> = if wants(Association::Vertex) {
        let locs: Vec<Location> = (0..grid.vertex_count())
            .into_par_iter()
            .map(|idx| {
                let (i, j, k) = (idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1]));
                locator.locate(grid.point(i, j, k))
            })
            .collect();
        tally(&locs, &mut stats);
        locs
    } else {
        Vec::new()
    };
    let cell_locs: Vec<Location> = if wants(Association::Cell) {
        let c = grid.cell_dims();
        let locs: Vec<Location> = (0..grid.cell_count())
            .into_par_iter()
            .map(|idx| {
                let (i, j, k) = (idx % c[0], (idx / c[0]) % c[1], idx / (c[0] * c[1]));
                let p = grid.point(i, j, k);
                let center = std::array::from_fn(|a| p[a] + 0.5 * grid.spacing[a]);
                locator.locate(center)
            })
            .collect();
        tally(&locs, &mut stats);
        locs
    } else {
        Vec::new()
    };

    let fields = mesh
        .fields
        .iter()
        .map(|f| {
            let values: Vec<f64> = match f.association {
                Association::Vertex => vertex_locs
                    .par_iter()
                    .map(|l| l.interpolate(&f.values).unwrap_or(FILL_VALUE))
                    .collect(),
                Association::Cell => cell_locs
                    .par_iter()
                    .map(|l| l.cell().map_or(FILL_VALUE, |c| f.values[c]))
                    .collect(),
            };
            Field::new(f.name.clone(), f.association, values)
        })
        .collect();

    let mut out = MeshChannel::uniform(grid);
    out.fields = fields;
    Ok((out, stats))
}

fn tally(locs: &[Location], stats: &mut ResampleStats) {
    for l in locs {
        match l {
            Location::Outside => stats.out_of_domain += 1,
            Location::Fallback { .. } => stats.newton_fallbacks += 1,
            Location::Inside { .. } => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minisim::{generate_step, SimConfig, SimTopology};

    #[test]
    fn newton_recovers_parametric_coordinates() {
        let corners = [
            [0.0, 0.0, 0.0],
            [1.2, 0.1, 0.0],
            [1.1, 1.3, 0.1],
            [-0.1, 0.9, 0.0],
            [0.1, 0.0, 1.0],
            [1.0, 0.2, 1.1],
            [1.3, 1.0, 0.9],
            [0.0, 1.1, 1.2],
        ];
        let r0 = [0.3, 0.7, 0.45];
        let n = shape_functions(r0);
        let p: [f64; 3] = std::array::from_fn(|a| (0..8).map(|q| n[q] * corners[q][a]).sum());
        let r = inverse_trilinear(&corners, p).unwrap();
        for a in 0..3 {
            assert!((r[a] - r0[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn output_cell_counts_are_fixed() {
        let m = generate_step(&SimConfig { n: 8, ..SimConfig::default() }, 0, 0.5).unwrap();
        for (d, cells) in [(31, 27_000), (51, 125_000)] {
            let (out, _) = resample_to_grid([d; 3], Bounds::Auto, &m).unwrap();
            assert_eq!(out.cell_count(), cells);
        }
    }

    #[test]
    fn explicit_and_uniform_agree() {
        let base = SimConfig { n: 6, ..SimConfig::default() };
        let u = generate_step(&base, 0, 0.5).unwrap();
        let h = generate_step(&SimConfig { topology: SimTopology::ExplicitHex, ..base }, 0, 0.5).unwrap();
        let (a, sa) = resample_to_grid([5, 4, 7], Bounds::Auto, &u).unwrap();
        let (b, sb) = resample_to_grid([5, 4, 7], Bounds::Auto, &h).unwrap();
        assert_eq!(sa, ResampleStats::default());
        assert_eq!(sb, ResampleStats::default());
        // cell centres may sit on shared faces where either cell is a valid owner
        for (fa, fb) in a.fields.iter().zip(&b.fields).filter(|(f, _)| f.association == Association::Vertex) {
            for (x, y) in fa.values.iter().zip(fb.values.iter()) {
                assert!((x - y).abs() < 1e-9, "{} {x} {y}", fa.name);
            }
        }
    }

    #[test]
    fn out_of_domain_filled() {
        let m = generate_step(&SimConfig { n: 4, ..SimConfig::default() }, 0, 0.5).unwrap();
        let (out, stats) = resample_to_grid(
            [3; 3],
            Bounds::Box {
                min: [0.5; 3],
                max: [2.5; 3],
            },
            &m,
        )
        .unwrap();
        // vertex samples at 0.5, 1.5, 2.5 per axis: only (0.5,0.5,0.5) inside
        // cell centres at 1.0 and 2.0: (1,1,1) lies on the boundary
        let e = out.field("energy").unwrap();
        assert_eq!(e.values.iter().filter(|&&v| v == FILL_VALUE).count(), 26);
        assert_eq!(stats.out_of_domain, 26 + 7);
    }

    #[test]
    fn bad_dims_and_bounds() {
        let m = generate_step(&SimConfig { n: 4, ..SimConfig::default() }, 0, 0.5).unwrap();
        assert!(resample_to_grid([1, 3, 3], Bounds::Auto, &m).is_err());
        let flat = Bounds::Box {
            min: [0.0; 3],
            max: [1.0, 1.0, 0.0],
        };
        assert!(resample_to_grid([3; 3], flat, &m).is_err());
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let cfg = SimConfig { n: 2, partitions: 3, ..SimConfig::default() };
        let m = generate_step(&cfg, 2, 0.5).unwrap();
        assert_eq!(m.cell_count(), 0);
        let (out, _) = resample_to_grid([4; 3], Bounds::Auto, &m).unwrap();
        assert_eq!(out.cell_count(), 0);
    }
}
