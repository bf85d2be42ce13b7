//! In-line mesh reduction pipelines.
//!
//! A [`PipelineSpec`] is an ordered list of stages, each consuming the
//! previous stage's mesh. The output is what gets shipped in hybrid runs.

mod cells;
mod resample;
mod select;
mod slice;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::node::{Association, Coordset, MeshChannel, Topology};

pub use resample::{
    inverse_trilinear, resample_to_grid, shape_functions, Bounds, Location, PointLocator, ResampleStats,
    FILL_VALUE, NEWTON_MAX_ITERATIONS, NEWTON_TOLERANCE,
};
pub use select::select_fields;
pub use slice::{slice_axis_aligned, slice_plane_hex, PlaneSliceStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn unit(self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.index()] = 1.0;
        n
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(format!("unknown axis {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SliceMode {
    AxisAligned { axis: Axis, coordinate: f64 },
    Plane { origin: [f64; 3], normal: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    SelectFields { keep: Vec<String> },
    Slice(SliceMode),
    /// `dims` are output vertex counts per axis.
    Resample { dims: [usize; 3], bounds: Bounds },
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::SelectFields { .. } => "select_fields",
            Stage::Slice(_) => "slice",
            Stage::Resample { .. } => "resample",
        }
    }

    fn validate(&self) -> Result<(), ReduceError> {
        match self {
            Stage::SelectFields { .. } => Ok(()),
            Stage::Slice(SliceMode::AxisAligned { coordinate, .. }) if !coordinate.is_finite() => {
                Err(ReduceError::InvalidStage("slice coordinate must be finite".into()))
            }
            Stage::Slice(SliceMode::Plane { normal, .. })
                if !(normal.iter().map(|c| c * c).sum::<f64>() > 0.0) =>
            {
                Err(ReduceError::InvalidStage("plane normal must be non-zero".into()))
            }
            Stage::Slice(_) => Ok(()),
            Stage::Resample { dims, .. } if dims.iter().any(|&d| d < 2) => Err(ReduceError::InvalidStage(
                format!("resample dims {dims:?} must be >= 2 per axis"),
            )),
            Stage::Resample { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineSpec {
    pub stages: Vec<Stage>,
}

impl PipelineSpec {
    pub fn new(stages: Vec<Stage>) -> Self {
        PipelineSpec { stages }
    }

    pub fn validate(&self) -> Result<(), ReduceError> {
        self.stages.iter().try_for_each(Stage::validate)
    }

    /// True if some stage can shrink the mesh.
    pub fn is_reducing(&self) -> bool {
        !self.stages.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReduceError {
    #[error("{stage} stage needs a {expected}")]
    StageMismatch {
        stage: &'static str,
        expected: &'static str,
    },
    #[error("field {0:?} not present in mesh")]
    MissingField(String),
    #[error("slice coordinate {coordinate} outside [{lo}, {hi}] on axis {axis}")]
    SliceOutOfBounds { axis: Axis, coordinate: f64, lo: f64, hi: f64 },
    #[error("invalid stage: {0}")]
    InvalidStage(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Provenance {
    pub input_cells: usize,
    pub output_cells: usize,
    pub degenerate_cells: usize,
    pub out_of_domain: usize,
    pub newton_fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct ReducedOutput {
    pub channel: MeshChannel,
    pub provenance: Provenance,
}

/// How a mesh claims an axis-aligned plane lying on its boundary when it is
/// one slab of a partitioned domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SliceOwnership {
    /// The whole closed extent, `[lo, hi]`.
    #[default]
    Closed,
    /// `(lo, hi]`: the lower face belongs to the neighbouring slab.
    LowerOpen,
}

impl SliceOwnership {
    /// Rank 0 owns its lower face; other ranks leave it to their neighbour.
    pub fn for_rank(rank: u32) -> Self {
        if rank == 0 {
            SliceOwnership::Closed
        } else {
            SliceOwnership::LowerOpen
        }
    }
}

/// Runs all stages on a whole (unpartitioned) mesh.
pub fn run_pipeline(spec: &PipelineSpec, input: &MeshChannel) -> Result<ReducedOutput, ReduceError> {
    run_pipeline_with(spec, input, SliceOwnership::Closed)
}

/// Runs all stages on one slab of a partitioned mesh. A plane that misses
/// this slab yields an empty mesh rather than an error.
pub fn run_pipeline_with(
    spec: &PipelineSpec,
    input: &MeshChannel,
    ownership: SliceOwnership,
) -> Result<ReducedOutput, ReduceError> {
    spec.validate()?;
    let mut prov = Provenance {
        input_cells: input.cell_count(),
        ..Provenance::default()
    };
    let mut mesh = input.clone();
    for stage in &spec.stages {
        mesh = match stage {
            Stage::SelectFields { keep } => select_fields(keep, &mesh)?,
            Stage::Slice(mode) => {
                let (out, stats) = run_slice(mode, &mesh, ownership)?;
                prov.degenerate_cells += stats.degenerate_cells;
                out
            }
            Stage::Resample { dims, bounds } => {
                let (out, stats) = resample_to_grid(*dims, *bounds, &mesh)?;
                prov.out_of_domain += stats.out_of_domain;
                prov.newton_fallbacks += stats.newton_fallbacks;
                out
            }
        };
    }
    prov.output_cells = mesh.cell_count();
    Ok(ReducedOutput { channel: mesh, provenance: prov })
}

fn empty_like(mesh: &MeshChannel) -> MeshChannel {
    MeshChannel::empty(mesh.fields.iter().map(|f| (f.name.as_str(), f.association)))
}

fn is_tri(mesh: &MeshChannel) -> bool {
    matches!(mesh.topology, Topology::Tri(_))
}

fn run_slice(
    mode: &SliceMode,
    mesh: &MeshChannel,
    ownership: SliceOwnership,
) -> Result<(MeshChannel, PlaneSliceStats), ReduceError> {
    if is_tri(mesh) {
        return Err(ReduceError::StageMismatch {
            stage: "slice",
            expected: "volumetric mesh",
        });
    }
    if mesh.is_empty() {
        return Ok((empty_like(mesh), PlaneSliceStats::default()));
    }
    match (mode, &mesh.coordset) {
        (&SliceMode::AxisAligned { axis, coordinate }, Coordset::Uniform(g)) => {
            if g.is_planar() {
                return Err(ReduceError::StageMismatch {
                    stage: "slice",
                    expected: "3D uniform grid",
                });
            }
            let u = slice::layer_position(g, axis, coordinate);
            let last = (g.dims[axis.index()] - 1) as f64;
            let owned = match ownership {
                SliceOwnership::Closed => (0.0..=last).contains(&u),
                SliceOwnership::LowerOpen => u > 0.0 && u <= last,
            };
            if !owned {
                return Ok((empty_like(mesh), PlaneSliceStats::default()));
            }
            Ok((slice_axis_aligned(axis, coordinate, mesh)?, PlaneSliceStats::default()))
        }
        (&SliceMode::AxisAligned { axis, coordinate }, _) => {
            let mut origin = [0.0; 3];
            origin[axis.index()] = coordinate;
            slice_plane_hex(origin, axis.unit(), mesh)
        }
        (SliceMode::Plane { origin, normal }, _) => slice_plane_hex(*origin, *normal, mesh),
    }
}

/// Field names and associations, in mesh order.
pub fn field_signature(mesh: &MeshChannel) -> Vec<(String, Association)> {
    mesh.fields.iter().map(|f| (f.name.clone(), f.association)).collect()
}
