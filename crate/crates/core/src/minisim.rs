//! Synthetic blast-wave field generator on slab-partitioned meshes.
//!
//! The domain is the unit cube split into `n³` cells. A spherical shock
//! centred on the origin corner has radius `t^0.4`; energy is a Gaussian
//! shell around it. Rank `r` of `P` owns a contiguous range of z cell layers.

use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::node::{Array, Association, Coordset, Field, MeshChannel, Topology, UniformGrid};

/// Energy never drops below this, so `ρ = 1 + e/2 > 1` stays representable.
pub const ENERGY_FLOOR: f64 = 1e-12;
/// γ − 1 for an ideal gas with γ = 1.4.
pub const GAMMA_MINUS_ONE: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimTopology {
    Uniform,
    ExplicitHex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Cells per axis.
    pub n: usize,
    pub topology: SimTopology,
    pub steps: usize,
    /// Time per step; `None` means `1 / steps`.
    pub dt: Option<f64>,
    pub partitions: usize,
    /// Shock shell width.
    pub width: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 32,
            topology: SimTopology::Uniform,
            steps: 10,
            dt: None,
            partitions: 1,
            width: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("rank {rank} out of range for {partitions} partitions")]
    RankOutOfRange { rank: usize, partitions: usize },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.n < 2 {
            return bad("n must be >= 2");
        }
        if self.steps < 1 {
            return bad("steps must be >= 1");
        }
        if self.partitions < 1 {
            return bad("partitions must be >= 1");
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return bad("width must be positive");
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad("dt must be positive");
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(1.0 / self.steps as f64)
    }

    /// Simulation time at the end of `step` (0-based).
    pub fn time_of(&self, step: usize) -> f64 {
        (step + 1) as f64 * self.dt()
    }

    pub fn total_cells(&self) -> usize {
        self.n.pow(3)
    }
}

pub fn shock_radius(t: f64) -> f64 {
    t.max(0.0).powf(0.4)
}

/// Gaussian shell energy at `p`, floored at [`ENERGY_FLOOR`].
pub fn energy_at(p: [f64; 3], radius: f64, width: f64) -> f64 {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let s = (r - radius) / width;
    (-s * s).exp().max(ENERGY_FLOOR)
}

pub fn density_from_energy(e: f64) -> f64 {
    1.0 + 0.5 * e
}

pub fn pressure_from_energy(e: f64) -> f64 {
    GAMMA_MINUS_ONE * density_from_energy(e) * e
}

/// z cell-layer range owned by `rank`. The first `n mod P` ranks get one
/// extra layer; trailing ranks are empty when `P > n`.
pub fn partition_bounds(cfg: &SimConfig, rank: usize) -> Range<usize> {
    let p = cfg.partitions.max(1);
    let base = cfg.n / p;
    let extra = cfg.n % p;
    let start = rank * base + rank.min(extra);
    let len = base + usize::from(rank < extra);
    start.min(cfg.n)..(start + len).min(cfg.n)
}

/// Mesh and fields for one rank's slab at time `t`.
pub fn generate_step(cfg: &SimConfig, rank: usize, t: f64) -> Result<MeshChannel, SimError> {
    cfg.validate()?;
    if rank >= cfg.partitions {
        return Err(SimError::RankOutOfRange {
            rank,
            partitions: cfg.partitions,
        });
    }
    let layers = partition_bounds(cfg, rank);
    if layers.is_empty() {
        return Ok(MeshChannel::empty([
            ("energy", Association::Vertex),
            ("density", Association::Vertex),
            ("pressure", Association::Cell),
        ]));
    }

    let n = cfg.n;
    let nf = n as f64;
    let radius = shock_radius(t);
    let w = cfg.width;
    let nv = n + 1;
    let vk = layers.len() + 1;
    let k0 = layers.start;
    let coord = |i: usize| i as f64 / nf;

    let energy: Vec<f64> = (0..vk)
        .into_par_iter()
        .flat_map_iter(|kk| {
            let z = coord(k0 + kk);
            (0..nv * nv).map(move |ij| energy_at([coord(ij % nv), coord(ij / nv), z], radius, w))
        })
        .collect();
    let density: Vec<f64> = energy.par_iter().map(|&e| density_from_energy(e)).collect();
    let pressure: Vec<f64> = (0..layers.len())
        .into_par_iter()
        .flat_map_iter(|kk| {
            let z = (k0 + kk) as f64 / nf + 0.5 / nf;
            (0..n * n).map(move |ij| {
                let c = [(ij % n) as f64 / nf + 0.5 / nf, (ij / n) as f64 / nf + 0.5 / nf, z];
                pressure_from_energy(energy_at(c, radius, w))
            })
        })
        .collect();

    let fields = vec![
        Field::new("energy", Association::Vertex, external(energy)),
        Field::new("density", Association::Vertex, external(density)),
        Field::new("pressure", Association::Cell, external(pressure)),
    ];

    let (coordset, topology) = match cfg.topology {
        SimTopology::Uniform => (
            Coordset::Uniform(UniformGrid {
                dims: [nv, nv, vk],
                origin: [0.0, 0.0, coord(k0)],
                spacing: [1.0 / nf; 3],
            }),
            Topology::Uniform,
        ),
        SimTopology::ExplicitHex => {
            let count = nv * nv * vk;
            let mut x = Vec::with_capacity(count);
            let mut y = Vec::with_capacity(count);
            let mut z = Vec::with_capacity(count);
            for kk in 0..vk {
                for j in 0..nv {
                    for i in 0..nv {
                        x.push(coord(i));
                        y.push(coord(j));
                        z.push(coord(k0 + kk));
                    }
                }
            }
            let vid = |i: usize, j: usize, k: usize| (i + nv * (j + nv * k)) as i64;
            let mut conn = Vec::with_capacity(8 * n * n * layers.len());
            for k in 0..layers.len() {
                for j in 0..n {
                    for i in 0..n {
                        conn.extend_from_slice(&[
                            vid(i, j, k),
                            vid(i + 1, j, k),
                            vid(i + 1, j + 1, k),
                            vid(i, j + 1, k),
                            vid(i, j, k + 1),
                            vid(i + 1, j, k + 1),
                            vid(i + 1, j + 1, k + 1),
                            vid(i, j + 1, k + 1),
                        ]);
                    }
                }
            }
            (
                Coordset::Explicit {
                    x: external(x),
                    y: external(y),
                    z: external(z),
                },
                Topology::Hex(Array::external(Arc::from(conn))),
            )
        }
    };
    Ok(MeshChannel {
        coordset,
        topology,
        fields,
    })
}

fn external(values: Vec<f64>) -> Array<f64> {
    Array::external(Arc::from(values))
}
