//! Receiver-side rendering: slice images and volume renders written as PPM.
//!
//! The camera is orthographic and looks down one coordinate axis. Image
//! column `u` and row `v` run along the two remaining axes in increasing
//! order (x then y, x then z, or y then z), with row 0 at the top (largest v).

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::node::{Association, MeshChannel, UniformGrid};
use crate::reduce::Axis;

mod slice;
mod volume;

pub use slice::render_slice;
pub use volume::render_volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    SliceImage,
    VolumeRender,
}

impl Recipe {
    pub fn as_str(self) -> &'static str {
        match self {
            Recipe::SliceImage => "slice_image",
            Recipe::VolumeRender => "volume_render",
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Recipe {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "slice_image" => Ok(Recipe::SliceImage),
            "volume_render" => Ok(Recipe::VolumeRender),
            other => Err(format!("unknown recipe {other:?}")),
        }
    }
}

/// How scalar values map to [0, 1] before colouring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarRange {
    /// Per image: slices use [min, max], volumes use [min(0, min), max].
    Auto,
    Fixed { lo: f64, hi: f64 },
}

/// Piecewise-linear RGB map over [0, 1], stops sorted by position.
#[derive(Debug, Clone, PartialEq)]
pub struct Colormap {
    stops: Vec<(f64, [f64; 3])>,
}

impl Colormap {
    pub fn new(mut stops: Vec<(f64, [f64; 3])>) -> Result<Self, VizError> {
        if stops.is_empty() || stops.iter().any(|(t, _)| !t.is_finite()) {
            return Err(VizError::InvalidConfig("colormap needs finite stops".into()));
        }
        stops.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Colormap { stops })
    }

    pub fn blue_white_red() -> Self {
        Colormap {
            stops: vec![(0.0, [0.0, 0.0, 1.0]), (0.5, [1.0, 1.0, 1.0]), (1.0, [1.0, 0.0, 0.0])],
        }
    }

    pub fn color(&self, t: f64) -> [f64; 3] {
        let s = &self.stops;
        if t <= s[0].0 {
            return s[0].1;
        }
        for w in s.windows(2) {
            let (t0, c0) = w[0];
            let (t1, c1) = w[1];
            if t <= t1 {
                let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                return std::array::from_fn(|i| c0[i] + f * (c1[i] - c0[i]));
            }
        }
        s[s.len() - 1].1
    }
}

impl Default for Colormap {
    fn default() -> Self {
        Colormap::blue_white_red()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub recipe: Recipe,
    pub width: usize,
    pub height: usize,
    pub field: String,
    pub colormap: Colormap,
    pub range: ScalarRange,
    /// Volume only.
    pub view_axis: Axis,
    /// Volume only; `None` means twice the cell count along the view axis.
    pub samples: Option<usize>,
    /// Volume only: opacity scale of the transfer function.
    pub kappa: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            recipe: Recipe::SliceImage,
            width: 256,
            height: 256,
            field: "energy".into(),
            colormap: Colormap::default(),
            range: ScalarRange::Auto,
            view_axis: Axis::Z,
            samples: None,
            kappa: 4.0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), VizError> {
        let bad = |m: String| Err(VizError::InvalidConfig(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("image size {}x{}", self.width, self.height));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa {}", self.kappa));
        }
        if self.samples == Some(0) {
            return bad("samples must be at least 1".into());
        }
        if let ScalarRange::Fixed { lo, hi } = self.range {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return bad(format!("range [{lo}, {hi}]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum VizError {
    #[error("field {0:?} not present")]
    MissingField(String),
    #[error("unsupported mesh: {0}")]
    UnsupportedMesh(String),
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// 8-bit RGB pixels, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn black(width: usize, height: usize) -> Self {
        ImageBuffer {
            width,
            height,
            pixels: vec![0; 3 * width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixels that are not pure black.
    pub fn lit_pixels(&self) -> usize {
        self.pixels.chunks_exact(3).filter(|p| p != &[0, 0, 0]).count()
    }
}

pub fn to_rgb8(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Renders `parts` (one per rank, any of them possibly empty) with the
/// configured recipe.
pub fn render(cfg: &RenderConfig, parts: &[MeshChannel]) -> Result<ImageBuffer, VizError> {
    match cfg.recipe {
        Recipe::SliceImage => render_slice(cfg, parts),
        Recipe::VolumeRender => render_volume(cfg, parts),
    }
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_image(img: &ImageBuffer, path: &Path) -> Result<(), VizError> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

pub fn image_file_name(step: u64, recipe: Recipe) -> String {
    format!("step{step}_{recipe}.ppm")
}

/// The two in-image axes for a view along `axis`, in (column, row) order.
pub(crate) fn image_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// World-space window shown by the image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub u_axis: usize,
    pub v_axis: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub width: usize,
    pub height: usize,
}

impl Window {
    pub fn covering(axis: usize, parts: &[&MeshChannel], width: usize, height: usize) -> Option<Window> {
        let (u_axis, v_axis) = image_axes(axis);
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for b in parts.iter().filter(|p| !p.is_empty()).filter_map(|p| p.bounds()) {
            for (s, a) in [u_axis, v_axis].into_iter().enumerate() {
                lo[s] = lo[s].min(b[0][a]);
                hi[s] = hi[s].max(b[1][a]);
            }
        }
        if !lo[0].is_finite() {
            return None;
        }
        for s in 0..2 {
            if hi[s] <= lo[s] {
                hi[s] = lo[s] + 1.0;
            }
        }
        Some(Window {
            u_axis,
            v_axis,
            lo,
            hi,
            width,
            height,
        })
    }

    /// World (u, v) of a pixel centre.
    pub fn pixel_center(&self, x: usize, y: usize) -> (f64, f64) {
        let u = self.lo[0] + (x as f64 + 0.5) / self.width as f64 * (self.hi[0] - self.lo[0]);
        let v = self.hi[1] - (y as f64 + 0.5) / self.height as f64 * (self.hi[1] - self.lo[1]);
        (u, v)
    }

    /// Continuous pixel coordinates of a world (u, v).
    pub fn to_pixel(self, u: f64, v: f64) -> (f64, f64) {
        (
            (u - self.lo[0]) / (self.hi[0] - self.lo[0]) * self.width as f64,
            (self.hi[1] - v) / (self.hi[1] - self.lo[1]) * self.height as f64,
        )
    }
}

const INSIDE_SLACK: f64 = 1e-9;

/// Field value at `p` on a uniform grid: multilinear for vertex fields,
/// containing cell for cell fields. Flat axes ignore their coordinate.
/// `None` outside the grid.
pub(crate) fn sample_uniform(g: &UniformGrid, values: &[f64], assoc: Association, p: [f64; 3]) -> Option<f64> {
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        if g.dims[a] <= 1 {
            continue;
        }
        let t = (p[a] - g.origin[a]) / g.spacing[a];
        let last = (g.dims[a] - 1) as f64;
        if !(t >= -INSIDE_SLACK && t <= last + INSIDE_SLACK) {
            return None;
        }
        let t = t.clamp(0.0, last);
        let i = (t.floor() as usize).min(g.dims[a] - 2);
        base[a] = i;
        frac[a] = t - i as f64;
    }
    match assoc {
        Association::Cell => values.get(g.cell_index(base[0], base[1], base[2])).copied(),
        Association::Vertex => {
            let mut acc = 0.0;
            for corner in 0..8usize {
                let mut w = 1.0;
                let mut idx = [0usize; 3];
                for a in 0..3 {
                    let bit = (corner >> a) & 1;
                    if g.dims[a] <= 1 {
                        if bit == 1 {
                            w = 0.0;
                        }
                        continue;
                    }
                    idx[a] = base[a] + bit;
                    w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                if w != 0.0 {
                    acc += w * values[g.vertex_index(idx[0], idx[1], idx[2])];
                }
            }
            Some(acc)
        }
    }
}

/// Min and max of the finite values of `field` over all parts.
pub(crate) fn field_extent(parts: &[MeshChannel], field: &str) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in parts {
        if let Some(f) = p.field(field) {
            for &v in f.values.iter().filter(|v| v.is_finite()) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Every non-empty part must carry `field`.
pub(crate) fn require_field(parts: &[MeshChannel], field: &str) -> Result<(), VizError> {
    if parts.iter().any(|p| p.field(field).is_none() && !p.is_empty()) {
        return Err(VizError::MissingField(field.to_string()));
    }
    Ok(())
}
