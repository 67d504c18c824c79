//! Icosphere generation by icosahedron subdivision.

use super::TriMesh;
use nalgebra::Vector3;
use std::collections::BTreeMap;

/// Unit icosahedron vertices; the set is mirror-symmetric about x = 0 so
/// subdivision and normalization keep the sphere bit-exactly symmetric.
fn icosahedron() -> TriMesh {
    let p = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ];
    let vertices = raw.iter().map(|v| Vector3::new(v[0], v[1], v[2])).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    TriMesh { vertices, faces }
}

/// Icosphere with `10 * 4^subdivisions + 2` vertices and
/// `20 * 4^subdivisions` faces, every vertex at distance `radius`.
pub fn make_icosphere(subdivisions: u32, radius: f64) -> TriMesh {
    let mut mesh = icosahedron();
    for v in &mut mesh.vertices {
        v.normalize_mut();
    }
    for _ in 0..subdivisions {
        mesh = subdivide(&mesh);
    }
    for v in &mut mesh.vertices {
        *v *= radius;
    }
    mesh
}

fn subdivide(mesh: &TriMesh) -> TriMesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoint_cache: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vector3<f64>>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoint_cache.entry(key).or_insert_with(|| {
            let m = ((vertices[a] + vertices[b]) / 2.0).normalize();
            vertices.push(m);
            vertices.len() - 1
        })
    };
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    for f in &mesh.faces {
        let ab = midpoint(f[0], f[1], &mut vertices);
        let bc = midpoint(f[1], f[2], &mut vertices);
        let ca = midpoint(f[2], f[0], &mut vertices);
        faces.push([f[0], ab, ca]);
        faces.push([f[1], bc, ab]);
        faces.push([f[2], ca, bc]);
        faces.push([ab, bc, ca]);
    }
    TriMesh { vertices, faces }
}
