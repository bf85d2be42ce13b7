use rayon::prelude::*;

use super::{
    field_extent, require_field, sample_uniform, to_rgb8, ImageBuffer, RenderConfig, ScalarRange, VizError,
    Window,
};
use crate::node::{Association, MeshChannel, Topology};

/// Axis the slice is viewed along: the flat axis of a planar grid, or the
/// dominant normal component of a triangle soup.
fn view_axis(mesh: &MeshChannel) -> Result<usize, VizError> {
    match &mesh.topology {
        Topology::Uniform => {
            let g = mesh.uniform_grid().expect("uniform topology has a uniform coordset");
            (0..3)
                .rev()
                .find(|&a| g.dims[a] == 1)
                .ok_or_else(|| VizError::UnsupportedMesh("slice image needs a planar grid or triangles".into()))
        }
        Topology::Tri(conn) => {
            let mut sum = [0.0f64; 3];
            for t in conn.chunks_exact(3) {
                let [a, b, c] = [0, 1, 2].map(|i| mesh.vertex(t[i] as usize));
                let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                let n = [
                    e1[1] * e2[2] - e1[2] * e2[1],
                    e1[2] * e2[0] - e1[0] * e2[2],
                    e1[0] * e2[1] - e1[1] * e2[0],
                ];
                for k in 0..3 {
                    sum[k] += n[k].abs();
                }
            }
            let mut best = 2;
            for a in (0..3).rev() {
                if sum[a] > sum[best] {
                    best = a;
                }
            }
            Ok(best)
        }
        Topology::Hex(_) => Err(VizError::UnsupportedMesh("slice image of a hexahedral mesh".into())),
    }
}

/// Orthographic image of planar slice output. Parts are drawn in order;
/// pixels no part covers stay black.
pub fn render_slice(cfg: &RenderConfig, parts: &[MeshChannel]) -> Result<ImageBuffer, VizError> {
    cfg.validate()?;
    require_field(parts, &cfg.field)?;
    let mut img = ImageBuffer::black(cfg.width, cfg.height);
    let live: Vec<&MeshChannel> = parts.iter().filter(|p| !p.is_empty()).collect();
    let Some(first) = live.first() else {
        return Ok(img);
    };
    let axis = view_axis(first)?;
    for p in &live[1..] {
        view_axis(p)?;
    }
    let win = Window::covering(axis, &live, cfg.width, cfg.height).expect("non-empty parts have bounds");

    // NaN marks background
    let mut values = vec![f64::NAN; cfg.width * cfg.height];
    for part in &live {
        let field = part.field(&cfg.field).expect("checked above");
        match &part.topology {
            Topology::Uniform => {
                let g = part.uniform_grid().unwrap();
                values.par_chunks_mut(cfg.width).enumerate().for_each(|(y, row)| {
                    for (x, out) in row.iter_mut().enumerate() {
                        let (u, v) = win.pixel_center(x, y);
                        let mut p = g.origin;
                        p[win.u_axis] = u;
                        p[win.v_axis] = v;
                        if let Some(s) = sample_uniform(g, &field.values, field.association, p) {
                            *out = s;
                        }
                    }
                });
            }
            Topology::Tri(conn) => {
                for (t, tri) in conn.chunks_exact(3).enumerate() {
                    let ids = [0, 1, 2].map(|i| tri[i] as usize);
                    let px = ids.map(|i| {
                        let p = part.vertex(i);
                        win.to_pixel(p[win.u_axis], p[win.v_axis])
                    });
                    let vals = match field.association {
                        Association::Vertex => ids.map(|i| field.values[i]),
                        Association::Cell => [field.values[t]; 3],
                    };
                    raster_triangle(&mut values, cfg.width, cfg.height, px, vals);
                }
            }
            Topology::Hex(_) => unreachable!("rejected by view_axis"),
        }
    }

    let (lo, hi) = match cfg.range {
        ScalarRange::Fixed { lo, hi } => (lo, hi),
        ScalarRange::Auto => field_extent(parts, &cfg.field).unwrap_or((0.0, 0.0)),
    };
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
        img.pixels[3 * i..3 * i + 3].copy_from_slice(&to_rgb8(cfg.colormap.color(t)));
    }
    Ok(img)
}

/// Writes barycentric-interpolated values at covered pixel centres.
fn raster_triangle(out: &mut [f64], w: usize, h: usize, p: [(f64, f64); 3], vals: [f64; 3]) {
    let area = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
    if area.abs() < 1e-12 {
        return;
    }
    let xs = [p[0].0, p[1].0, p[2].0];
    let ys = [p[0].1, p[1].1, p[2].1];
    let fmin = |a: [f64; 3]| a.iter().cloned().fold(f64::INFINITY, f64::min);
    let fmax = |a: [f64; 3]| a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x0 = (fmin(xs) - 0.5).floor().max(0.0) as usize;
    let y0 = (fmin(ys) - 0.5).floor().max(0.0) as usize;
    let x1 = ((fmax(xs) - 0.5).ceil().max(0.0) as usize).min(w.saturating_sub(1));
    let y1 = ((fmax(ys) - 0.5).ceil().max(0.0) as usize).min(h.saturating_sub(1));
    let edge = |a: (f64, f64), b: (f64, f64), x: f64, y: f64| (b.0 - a.0) * (y - a.1) - (x - a.0) * (b.1 - a.1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            let w0 = edge(p[1], p[2], cx, cy) / area;
            let w1 = edge(p[2], p[0], cx, cy) / area;
            let w2 = edge(p[0], p[1], cx, cy) / area;
            if w0 >= -1e-9 && w1 >= -1e-9 && w2 >= -1e-9 {
                out[y * w + x] = w0 * vals[0] + w1 * vals[1] + w2 * vals[2];
            }
        }
    }
}
