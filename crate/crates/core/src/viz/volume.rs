use rayon::prelude::*;

use super::{field_extent, require_field, sample_uniform, to_rgb8, ImageBuffer, RenderConfig, ScalarRange, VizError, Window};
use crate::node::{Field, MeshChannel, UniformGrid};

/// Accumulated opacity beyond which a ray stops and counts as opaque.
pub const OPAQUE_CUTOFF: f64 = 0.999;

/// Front-to-back emission–absorption state of one ray.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Ray {
    pub color: [f64; 3],
    pub alpha: f64,
}

impl Ray {
    /// Adds one sample of normalised value `v` over length `ds`. Returns
    /// false once the ray is opaque; the ray is then marked fully opaque so
    /// a denser medium never ends with less opacity than a thinner one.
    pub fn add(&mut self, v: f64, rgb: [f64; 3], kappa: f64, ds: f64) -> bool {
        let a = 1.0 - (-kappa * v * ds).exp();
        let w = (1.0 - self.alpha) * a;
        for i in 0..3 {
            self.color[i] += w * rgb[i];
        }
        self.alpha += w;
        if self.alpha > OPAQUE_CUTOFF {
            self.alpha = 1.0;
            return false;
        }
        true
    }
}

struct Slab<'a> {
    grid: &'a UniformGrid,
    field: &'a Field,
    lo: [f64; 3],
    hi: [f64; 3],
    samples: usize,
    ds: f64,
}

/// Orthographic emission–absorption render of uniform 3D grids, looking
/// along `cfg.view_axis` from its low side. Parts are composited front to
/// back in order of their low bound along that axis.
pub fn render_volume(cfg: &RenderConfig, parts: &[MeshChannel]) -> Result<ImageBuffer, VizError> {
    cfg.validate()?;
    require_field(parts, &cfg.field)?;
    let axis = cfg.view_axis.index();
    let live: Vec<&MeshChannel> = parts.iter().filter(|p| !p.is_empty()).collect();
    let mut slabs = Vec::with_capacity(live.len());
    for p in &live {
        let grid = match p.uniform_grid() {
            Some(g) if !g.is_planar() => g,
            _ => return Err(VizError::UnsupportedMesh("volume render needs uniform 3D grids".into())),
        };
        let [lo, hi] = p.bounds().expect("uniform grids have bounds");
        let samples = cfg.samples.unwrap_or(2 * grid.cell_dims()[axis]);
        slabs.push(Slab {
            grid,
            field: p.field(&cfg.field).expect("checked above"),
            lo,
            hi,
            samples,
            ds: (hi[axis] - lo[axis]) / samples as f64,
        });
    }
    let Some(win) = Window::covering(axis, &live, cfg.width, cfg.height) else {
        return Ok(ImageBuffer::black(cfg.width, cfg.height));
    };
    slabs.sort_by(|a, b| a.lo[axis].total_cmp(&b.lo[axis]));

    let (lo, hi) = match cfg.range {
        ScalarRange::Fixed { lo, hi } => (lo, hi),
        ScalarRange::Auto => field_extent(parts, &cfg.field)
            .map(|(a, b)| (a.min(0.0), b))
            .unwrap_or((0.0, 0.0)),
    };
    let normalise = |v: f64| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };

    let mut img = ImageBuffer::black(cfg.width, cfg.height);
    img.pixels
        .par_chunks_mut(3 * cfg.width)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..cfg.width {
                let (u, v) = win.pixel_center(x, y);
                let mut ray = Ray::default();
                'slabs: for s in &slabs {
                    let inside = |val: f64, a: usize| val >= s.lo[a] - 1e-12 && val <= s.hi[a] + 1e-12;
                    if !inside(u, win.u_axis) || !inside(v, win.v_axis) {
                        continue;
                    }
                    let mut p = [0.0; 3];
                    p[win.u_axis] = u;
                    p[win.v_axis] = v;
                    for k in 0..s.samples {
                        p[axis] = s.lo[axis] + (k as f64 + 0.5) * s.ds;
                        let Some(val) = sample_uniform(s.grid, &s.field.values, s.field.association, p) else {
                            continue;
                        };
                        let t = normalise(val);
                        if !ray.add(t, cfg.colormap.color(t), cfg.kappa, s.ds) {
                            break 'slabs;
                        }
                    }
                }
                row[3 * x..3 * x + 3].copy_from_slice(&to_rgb8(ray.color));
            }
        });
    Ok(img)
}
