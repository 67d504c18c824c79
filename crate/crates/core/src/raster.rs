//! Forward silhouette rasterization with a z-buffer, per-vertex visibility
//! queries, and an approximate backward pass that propagates per-pixel mask
//! gradients onto image-plane vertex positions.
//!
//! The backward scheme searches, per pixel with a nonzero loss gradient,
//! along its row and column for the nearest mask transition, and attributes
//! the gradient to the two endpoints of the face edge that produced the
//! transition with inverse-distance weights. The contract for this pass is
//! the descent property on silhouette-fitting tasks, not pointwise gradient
//! equality.

use crate::camera::{CameraIntrinsics, EPS_DEPTH};
use nalgebra::{Vector2, Vector3};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image dimensions {width}x{height} are invalid")]
    BadDimensions { width: usize, height: usize },
    #[error("mask dimensions {a_w}x{a_h} vs {b_w}x{b_h} do not match")]
    DimensionMismatch { a_w: usize, a_h: usize, b_w: usize, b_h: usize },
    #[error("{path}: {message}")]
    PgmFormat { path: String, message: String },
    #[error("failed to read or write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Grayscale mask in [0, 1]; observations are binary, predictions may hold
/// continuous values. Row-major storage, `y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl MaskImage {
    pub fn zeros(width: usize, height: usize) -> MaskImage {
        MaskImage { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<MaskImage, RasterError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(RasterError::BadDimensions { width, height });
        }
        Ok(MaskImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Number of pixels with value >= 0.5.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v >= 0.5).count()
    }

    /// Tight bounding box (x, y, w, h) of pixels >= 0.5, if any.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) >= 0.5 {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 == usize::MAX {
            None
        } else {
            Some((x0, y0, x1 - x0 + 1, y1 - y0 + 1))
        }
    }

    /// Writes a binary PGM (P5, maxval 255); mask value 1 maps to 255.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let path_str = path.as_ref().display().to_string();
        let file = std::fs::File::create(path.as_ref())
            .map_err(|source| RasterError::Io { path: path_str.clone(), source })?;
        let mut out = std::io::BufWriter::new(file);
        let header = format!("P5\n{} {}\n255\n", self.width, self.height);
        let bytes: Vec<u8> =
            self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        out.write_all(header.as_bytes())
            .and_then(|_| out.write_all(&bytes))
            .map_err(|source| RasterError::Io { path: path_str, source })
    }

    /// Reads a binary PGM written by [`MaskImage::save_pgm`].
    pub fn load_pgm(path: impl AsRef<Path>) -> Result<MaskImage, RasterError> {
        let path_str = path.as_ref().display().to_string();
        let fmt_err = |message: &str| RasterError::PgmFormat {
            path: path_str.clone(),
            message: message.to_string(),
        };
        let file = std::fs::File::open(path.as_ref())
            .map_err(|source| RasterError::Io { path: path_str.clone(), source })?;
        let mut reader = BufReader::new(file);
        let mut header = Vec::new();
        // Three whitespace-separated tokens after the magic: width, height, maxval.
        let mut tokens = Vec::new();
        let mut line = String::new();
        while tokens.len() < 4 {
            line.clear();
            if reader.read_line(&mut line).map_err(|source| RasterError::Io {
                path: path_str.clone(),
                source,
            })? == 0
            {
                return Err(fmt_err("truncated header"));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_string));
        }
        if tokens[0] != "P5" {
            return Err(fmt_err("not a binary PGM (expected P5)"));
        }
        let width: usize = tokens[1].parse().map_err(|_| fmt_err("bad width"))?;
        let height: usize = tokens[2].parse().map_err(|_| fmt_err("bad height"))?;
        let maxval: usize = tokens[3].parse().map_err(|_| fmt_err("bad maxval"))?;
        if maxval != 255 {
            return Err(fmt_err("expected maxval 255"));
        }
        header.resize(width * height, 0u8);
        reader
            .read_exact(&mut header)
            .map_err(|source| RasterError::Io { path: path_str.clone(), source })?;
        let data = header.iter().map(|&b| b as f64 / 255.0).collect();
        MaskImage::from_data(width, height, data)
    }
}

/// Per-pixel scalar field without the [0, 1] mask constraint; used for loss
/// gradients flowing into the backward pass. Row-major, `y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl PixelField {
    pub fn zeros(width: usize, height: usize) -> PixelField {
        PixelField { width, height, data: vec![0.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Cached forward-pass products consumed by the backward pass and
/// visibility queries. Immutable after rasterization.
#[derive(Debug, Clone)]
pub struct RasterState {
    width: usize,
    height: usize,
    /// Nearest face index per pixel, -1 where uncovered.
    face_index: Vec<i32>,
    /// Depth of the nearest face per pixel, +inf where uncovered.
    depth: Vec<f64>,
    /// Image-plane vertex coordinates (None for behind-camera vertices).
    verts_img: Vec<Option<Vector2<f64>>>,
    /// Camera-frame vertex depths.
    verts_depth: Vec<f64>,
    faces: Vec<[usize; 3]>,
}

impl RasterState {
    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn face_at(&self, x: usize, y: usize) -> Option<usize> {
        let f = self.face_index[y * self.width + x];
        (f >= 0).then_some(f as usize)
    }

    pub fn vertex_image_coords(&self) -> &[Option<Vector2<f64>>] {
        &self.verts_img
    }
}

/// Rasterizes the silhouette of a camera-frame triangle mesh. A pixel is set
/// when its center (x + 0.5, y + 0.5) is covered by at least one face whose
/// vertices are all in front of the camera; the depth buffer keeps the
/// nearest covering face. Faces with any vertex closer than the near plane
/// are dropped entirely.
pub fn rasterize_silhouette(
    vertices_cam: &[Vector3<f64>],
    faces: &[[usize; 3]],
    intrinsics: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> Result<(MaskImage, RasterState), RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::BadDimensions { width, height });
    }
    let mut verts_img: Vec<Option<Vector2<f64>>> = Vec::with_capacity(vertices_cam.len());
    let mut verts_depth = Vec::with_capacity(vertices_cam.len());
    for v in vertices_cam {
        verts_depth.push(v.z);
        if v.z <= EPS_DEPTH {
            verts_img.push(None);
        } else {
            let n = Vector3::new(v.x / v.z, v.y / v.z, 1.0);
            verts_img.push(Some(Vector2::new(
                intrinsics.fu() * n.x + intrinsics.skew() * n.y + intrinsics.c_u,
                intrinsics.fv() * n.y + intrinsics.c_v,
            )));
        }
    }

    let mut face_index = vec![-1i32; width * height];
    let mut depth = vec![f64::INFINITY; width * height];

    for (fi, f) in faces.iter().enumerate() {
        let (pa, pb, pc) = match (verts_img[f[0]], verts_img[f[1]], verts_img[f[2]]) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => continue, // near-plane clipping: drop the whole face
        };
        let (za, zb, zc) = (verts_depth[f[0]], verts_depth[f[1]], verts_depth[f[2]]);

        let min_x = pa.x.min(pb.x).min(pc.x);
        let max_x = pa.x.max(pb.x).max(pc.x);
        let min_y = pa.y.min(pb.y).min(pc.y);
        let max_y = pa.y.max(pb.y).max(pc.y);
        if max_x < 0.0 || max_y < 0.0 || min_x >= width as f64 || min_y >= height as f64 {
            continue;
        }
        let x0 = (min_x - 0.5).floor().max(0.0) as usize;
        let x1 = (max_x - 0.5).ceil().min(width as f64 - 1.0) as usize;
        let y0 = (min_y - 0.5).floor().max(0.0) as usize;
        let y1 = (max_y - 0.5).ceil().min(height as f64 - 1.0) as usize;

        let area = (pb.x - pa.x) * (pc.y - pa.y) - (pb.y - pa.y) * (pc.x - pa.x);
        if area.abs() < 1e-12 {
            continue;
        }
        let sign = if area > 0.0 { 1.0 } else { -1.0 };
        let inv_area = 1.0 / area;

        for y in y0..=y1 {
            let py = y as f64 + 0.5;
            for x in x0..=x1 {
                let px = x as f64 + 0.5;
                // Edge functions, orientation-normalized; boundary included.
                let ea = ((pc.x - pb.x) * (py - pb.y) - (pc.y - pb.y) * (px - pb.x)) * sign;
                let eb = ((pa.x - pc.x) * (py - pc.y) - (pa.y - pc.y) * (px - pc.x)) * sign;
                let ec = ((pb.x - pa.x) * (py - pa.y) - (pb.y - pa.y) * (px - pa.x)) * sign;
                if ea < 0.0 || eb < 0.0 || ec < 0.0 {
                    continue;
                }
                // Perspective-correct depth: interpolate 1/z linearly in
                // screen space.
                let (la, lb, lc) = (ea * inv_area * sign, eb * inv_area * sign, ec * inv_area * sign);
                let inv_z = la / za + lb / zb + lc / zc;
                let z = 1.0 / inv_z;
                let idx = y * width + x;
                if z < depth[idx] {
                    depth[idx] = z;
                    face_index[idx] = fi as i32;
                }
            }
        }
    }

    let data = face_index.iter().map(|&f| if f >= 0 { 1.0 } else { 0.0 }).collect();
    let mask = MaskImage { width, height, data };
    let state = RasterState {
        width,
        height,
        face_index,
        depth,
        verts_img,
        verts_depth,
        faces: faces.to_vec(),
    };
    Ok((mask, state))
}

/// A resolved mask transition between two horizontally or vertically
/// adjacent pixels: the crossing coordinate along the scan axis and the
/// face edge responsible for it.
#[derive(Debug, Clone, Copy)]
struct Transition {
    /// Index (along the scan axis) of the first pixel of the adjacent pair.
    near: usize,
    /// Crossing coordinate along the scan axis.
    coord: f64,
    /// Edge endpoints (vertex indices) and the interpolation parameter of
    /// the crossing along the edge, if an edge was identified.
    edge: Option<(usize, usize, f64)>,
}

/// Finds the face edge crossing the unit segment between two adjacent pixel
/// centers. `along` / `ortho` are the segment's axis coordinate range and
/// its fixed orthogonal coordinate; `horizontal` selects the axis meaning.
fn resolve_edge(
    state: &RasterState,
    face: usize,
    a0: f64,
    a1: f64,
    ortho: f64,
    horizontal: bool,
) -> Option<(usize, usize, f64, f64)> {
    let f = state.faces[face];
    let mut best: Option<(usize, usize, f64, f64)> = None;
    let mid = (a0 + a1) / 2.0;
    for (va, vb) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
        let (pa, pb) = match (state.verts_img[va], state.verts_img[vb]) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        let (oa, ob, xa, xb) = if horizontal {
            (pa.y, pb.y, pa.x, pb.x)
        } else {
            (pa.x, pb.x, pa.y, pb.y)
        };
        if (oa - ortho) * (ob - ortho) > 0.0 || (ob - oa).abs() < 1e-12 {
            continue; // edge does not straddle the scanline
        }
        let t = (ortho - oa) / (ob - oa);
        let cross = xa + t * (xb - xa);
        if cross < a0 - 0.5 || cross > a1 + 0.5 {
            continue;
        }
        match best {
            Some((_, _, _, c)) if (c - mid).abs() <= (cross - mid).abs() => {}
            _ => best = Some((va, vb, t, cross)),
        }
    }
    best
}

/// Collects the transitions of one row (`horizontal`) or column with their
/// responsible edges resolved once.
fn line_transitions(
    state: &RasterState,
    fixed: usize,
    horizontal: bool,
) -> Vec<Transition> {
    let len = if horizontal { state.width } else { state.height };
    let at = |i: usize| -> i32 {
        if horizontal {
            state.face_index[fixed * state.width + i]
        } else {
            state.face_index[i * state.width + fixed]
        }
    };
    let ortho = fixed as f64 + 0.5;
    let mut out = Vec::new();
    for i in 0..len - 1 {
        let ca = at(i) >= 0;
        let cb = at(i + 1) >= 0;
        if ca == cb {
            continue;
        }
        let covered_face = if ca { at(i) } else { at(i + 1) } as usize;
        let a0 = i as f64 + 0.5;
        let a1 = i as f64 + 1.5;
        let resolved = resolve_edge(state, covered_face, a0, a1, ortho, horizontal);
        let (edge, coord) = match resolved {
            Some((va, vb, t, cross)) => (Some((va, vb, t)), cross),
            None => (None, i as f64 + 1.0),
        };
        out.push(Transition { near: i, coord, edge });
    }
    out
}

/// Propagates a per-pixel mask-loss gradient back to image-plane vertex
/// positions. `dl_dmask` must match the forward image dimensions; the
/// returned vector holds one 2D gradient per vertex.
pub fn rasterize_backward(
    dl_dmask: &PixelField,
    state: &RasterState,
) -> Result<Vec<Vector2<f64>>, RasterError> {
    if dl_dmask.width != state.width || dl_dmask.height != state.height {
        return Err(RasterError::DimensionMismatch {
            a_w: dl_dmask.width,
            a_h: dl_dmask.height,
            b_w: state.width,
            b_h: state.height,
        });
    }
    let mut grad = vec![Vector2::zeros(); state.verts_img.len()];
    let radius = (state.width.max(state.height) / 4).max(2) as f64;

    // Horizontal sweep: gradients on vertex x coordinates.
    for y in 0..state.height {
        let transitions = line_transitions(state, y, true);
        if transitions.is_empty() {
            continue;
        }
        sweep_line(state, dl_dmask, &transitions, y, true, radius, &mut grad);
    }
    // Vertical sweep: gradients on vertex y coordinates.
    for x in 0..state.width {
        let transitions = line_transitions(state, x, false);
        if transitions.is_empty() {
            continue;
        }
        sweep_line(state, dl_dmask, &transitions, x, false, radius, &mut grad);
    }
    Ok(grad)
}

fn sweep_line(
    state: &RasterState,
    dl_dmask: &PixelField,
    transitions: &[Transition],
    fixed: usize,
    horizontal: bool,
    radius: f64,
    grad: &mut [Vector2<f64>],
) {
    let len = if horizontal { state.width } else { state.height };
    let covered = |i: usize| -> f64 {
        let idx = if horizontal { fixed * state.width + i } else { i * state.width + fixed };
        if state.face_index[idx] >= 0 {
            1.0
        } else {
            0.0
        }
    };
    let gval = |i: usize| -> f64 {
        if horizontal {
            dl_dmask.get(i, fixed)
        } else {
            dl_dmask.get(fixed, i)
        }
    };
    // `next` indexes the first transition with near >= i; the transition at
    // next-1 (if any) lies to the left of pixel i.
    let mut next = 0usize;
    for i in 0..len {
        while next < transitions.len() && transitions[next].near < i {
            next += 1;
        }
        let g = gval(i);
        if g == 0.0 {
            continue;
        }
        let s_here = covered(i);
        let center = i as f64 + 0.5;
        // Right/down neighbor transition.
        if next < transitions.len() {
            let t = &transitions[next];
            let d = (t.coord - center).max(0.5);
            if d <= radius {
                apply_transition(t, g * (s_here - (1.0 - s_here)) / d, horizontal, grad);
            }
        }
        // Left/up neighbor transition.
        if next > 0 {
            let t = &transitions[next - 1];
            let d = (center - t.coord).max(0.5);
            if d <= radius {
                apply_transition(t, -g * (s_here - (1.0 - s_here)) / d, horizontal, grad);
            }
        }
    }
}

fn apply_transition(t: &Transition, dl_dedge: f64, horizontal: bool, grad: &mut [Vector2<f64>]) {
    if let Some((va, vb, param)) = t.edge {
        let (wa, wb) = (1.0 - param, param);
        if horizontal {
            grad[va].x += wa * dl_dedge;
            grad[vb].x += wb * dl_dedge;
        } else {
            grad[va].y += wa * dl_dedge;
            grad[vb].y += wb * dl_dedge;
        }
    }
}

/// Visibility of queried vertices against a completed forward pass: a vertex
/// is visible iff it is in front of the camera, its projection falls inside
/// the image, and its depth does not exceed the depth buffer near its pixel
/// by more than a depth-proportional tolerance. The depth comparison uses
/// the deepest covered pixel in the 3x3 neighborhood, which absorbs the
/// screen-space depth slope of the vertex's own faces.
pub fn vertex_visibility(state: &RasterState, indices: &[usize]) -> Vec<bool> {
    indices
        .iter()
        .map(|&vi| {
            let Some(p) = state.verts_img[vi] else {
                return false;
            };
            if p.x < 0.0 || p.y < 0.0 {
                return false;
            }
            let (x, y) = (p.x.floor() as isize, p.y.floor() as isize);
            if x >= state.width as isize || y >= state.height as isize {
                return false;
            }
            let mut deepest = f64::NEG_INFINITY;
            let mut nearest = f64::INFINITY;
            for dy in -2..=2 {
                for dx in -2..=2 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= state.width as isize || ny >= state.height as isize
                    {
                        continue;
                    }
                    let idx = ny as usize * state.width + nx as usize;
                    if state.face_index[idx] >= 0 {
                        deepest = deepest.max(state.depth[idx]);
                        nearest = nearest.min(state.depth[idx]);
                    }
                }
            }
            if deepest == f64::NEG_INFINITY {
                return false; // no covered pixel near the projection
            }
            // The covered-depth spread of the window estimates the local
            // screen-space depth slope; grazing faces get a wide allowance,
            // fronto-parallel occluders a tight one.
            let z = state.verts_depth[vi];
            z <= deepest + (deepest - nearest) + 1e-6 + 1e-3 * z
        })
        .collect()
}
