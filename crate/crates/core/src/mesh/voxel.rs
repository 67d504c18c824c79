//! Solid voxelization by ray-parity tests and volumetric IoU.

use super::{MeshError, TriMesh};
use nalgebra::{Vector2, Vector3};

/// Placement of a cubic-cell voxel grid: `resolution` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub resolution: usize,
    pub origin: Vector3<f64>,
    pub cell_size: f64,
}

impl GridSpec {
    /// Grid covering `min..max` with at least one empty cell of margin.
    pub fn fit(min: Vector3<f64>, max: Vector3<f64>, resolution: usize) -> GridSpec {
        assert!(resolution >= 4, "voxel resolution too small");
        let extent = (max - min).amax().max(1e-9);
        let cell_size = extent / (resolution as f64 - 2.0);
        let center = (min + max) / 2.0;
        let half = cell_size * resolution as f64 / 2.0;
        GridSpec { resolution, origin: center - Vector3::repeat(half), cell_size }
    }

    fn center(&self, ix: usize, iy: usize, iz: usize) -> Vector3<f64> {
        self.origin
            + Vector3::new(ix as f64 + 0.5, iy as f64 + 0.5, iz as f64 + 0.5) * self.cell_size
    }

    fn compatible(&self, other: &GridSpec) -> bool {
        self.resolution == other.resolution
            && (self.cell_size - other.cell_size).abs() <= 1e-12 * self.cell_size.abs()
            && (self.origin - other.origin).norm() <= 1e-9 * self.cell_size
    }
}

/// Boolean occupancy over a [`GridSpec`], laid out x-fastest.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    /// Occupied volume in cubic meters.
    pub fn volume(&self) -> f64 {
        self.occupied_count() as f64 * self.spec.cell_size.powi(3)
    }
}

/// Solid-voxelizes a closed mesh on a grid fitted to its bounding box.
pub fn voxelize(mesh: &TriMesh, resolution: usize) -> Result<VoxelGrid, MeshError> {
    let (min, max) = bounds(mesh);
    voxelize_on_grid(mesh, GridSpec::fit(min, max, resolution))
}

/// Solid-voxelizes a closed mesh on a caller-provided grid. A cell is
/// occupied iff its center is inside the mesh, decided by parity of +x ray
/// crossings per connected component (so overlapping unions of closed
/// components voxelize correctly).
pub fn voxelize_on_grid(mesh: &TriMesh, spec: GridSpec) -> Result<VoxelGrid, MeshError> {
    let boundary = mesh_boundary_edges(mesh);
    if boundary > 0 {
        return Err(MeshError::NotClosed { boundary_edges: boundary });
    }
    let res = spec.resolution;
    let mut occupancy = vec![false; res * res * res];
    for component in mesh.face_components() {
        fill_component(mesh, &component, &spec, &mut occupancy);
    }
    Ok(VoxelGrid { spec, occupancy })
}

fn mesh_boundary_edges(mesh: &TriMesh) -> usize {
    let mut counts = std::collections::BTreeMap::new();
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            *counts.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
        }
    }
    counts.values().filter(|&&c| c != 2).count()
}

fn bounds(mesh: &TriMesh) -> (Vector3<f64>, Vector3<f64>) {
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for v in &mesh.vertices {
        min = min.inf(v);
        max = max.sup(v);
    }
    (min, max)
}

fn fill_component(mesh: &TriMesh, faces: &[usize], spec: &GridSpec, occupancy: &mut [bool]) {
    let res = spec.resolution;
    // Bucket triangles into the (y, z) columns their projection overlaps.
    let mut columns: Vec<Vec<u32>> = vec![Vec::new(); res * res];
    for &fi in faces {
        let f = &mesh.faces[fi];
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for &vi in f {
            let v = &mesh.vertices[vi];
            ymin = ymin.min(v.y);
            ymax = ymax.max(v.y);
            zmin = zmin.min(v.z);
            zmax = zmax.max(v.z);
        }
        let to_cell = |w: f64, o: f64| ((w - o) / spec.cell_size).floor() as isize;
        let y0 = to_cell(ymin, spec.origin.y).clamp(0, res as isize - 1) as usize;
        let y1 = to_cell(ymax, spec.origin.y).clamp(0, res as isize - 1) as usize;
        let z0 = to_cell(zmin, spec.origin.z).clamp(0, res as isize - 1) as usize;
        let z1 = to_cell(zmax, spec.origin.z).clamp(0, res as isize - 1) as usize;
        for iz in z0..=z1 {
            for iy in y0..=y1 {
                columns[iz * res + iy].push(fi as u32);
            }
        }
    }

    // Deterministic sub-cell nudge keeps rays off edges and vertices.
    let nudge = Vector2::new(0.5e-7, 1.37e-7) * spec.cell_size;
    let mut crossings: Vec<f64> = Vec::new();
    for iz in 0..res {
        for iy in 0..res {
            let candidates = &columns[iz * res + iy];
            if candidates.is_empty() {
                continue;
            }
            let c = spec.center(0, iy, iz);
            let q = Vector2::new(c.y, c.z) + nudge;
            crossings.clear();
            for &fi in candidates {
                let f = &mesh.faces[fi as usize];
                let (a, b, c3) =
                    (&mesh.vertices[f[0]], &mesh.vertices[f[1]], &mesh.vertices[f[2]]);
                if let Some(x) = ray_cross_x(a, b, c3, &q) {
                    crossings.push(x);
                }
            }
            if crossings.is_empty() {
                continue;
            }
            crossings.sort_by(|p, r| p.partial_cmp(r).unwrap());
            // Cells whose center lies after an odd number of crossings are inside.
            let mut k = 0usize;
            for ix in 0..res {
                let cx = spec.center(ix, iy, iz).x;
                while k < crossings.len() && crossings[k] <= cx {
                    k += 1;
                }
                if k % 2 == 1 {
                    occupancy[(iz * res + iy) * res + ix] = true;
                }
            }
        }
    }
}

/// X coordinate where the +x ray through (y, z) = `q` pierces the triangle,
/// or None when the projected triangle misses the ray.
fn ray_cross_x(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
    q: &Vector2<f64>,
) -> Option<f64> {
    let pa = Vector2::new(a.y, a.z) - q;
    let pb = Vector2::new(b.y, b.z) - q;
    let pc = Vector2::new(c.y, c.z) - q;
    // Signed areas of the subtriangles; strict same-sign test.
    let sa = pb.x * pc.y - pb.y * pc.x;
    let sb = pc.x * pa.y - pc.y * pa.x;
    let sc = pa.x * pb.y - pa.y * pb.x;
    let total = sa + sb + sc;
    if total.abs() < 1e-300 {
        return None; // projected triangle is degenerate
    }
    let inside = (sa > 0.0 && sb > 0.0 && sc > 0.0) || (sa < 0.0 && sb < 0.0 && sc < 0.0);
    if !inside {
        return None;
    }
    Some((sa * a.x + sb * b.x + sc * c.x) / total)
}

/// `|a AND b| / |a OR b|` over matching grids; 1.0 when both are empty...
/// deliberately not: identical empty grids are defined to have IoU 1 only if
/// occupancy sets match, and 0/0 is reported as 1 for equal sets.
pub fn voxel_iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64, MeshError> {
    if !a.spec.compatible(&b.spec) {
        return Err(MeshError::IncompatibleGrids {
            reason: format!("{:?} vs {:?}", a.spec, b.spec),
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.occupancy.iter().zip(&b.occupancy) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Voxelizes two meshes on a common grid over their joint bounding box and
/// returns the volumetric IoU.
pub fn voxel_iou_meshes(a: &TriMesh, b: &TriMesh, resolution: usize) -> Result<f64, MeshError> {
    let (amin, amax) = bounds(a);
    let (bmin, bmax) = bounds(b);
    let spec = GridSpec::fit(amin.inf(&bmin), amax.sup(&bmax), resolution);
    let ga = voxelize_on_grid(a, spec)?;
    let gb = voxelize_on_grid(b, spec)?;
    voxel_iou(&ga, &gb)
}
