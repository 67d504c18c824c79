//! Uniform-weight Laplacian curvature and the associated smoothness energy.
//!
//! The per-vertex curvature vector is `d_i = v_i - mean(neighbors(v_i))`, a
//! graph-Laplacian discretization of the Laplace-Beltrami operator. Uniform
//! weights are robust to the thin triangles produced during deformation.

use super::{MeshError, TriMesh};
use nalgebra::Vector3;

/// Per-vertex mean-curvature vectors. Errors on isolated vertices.
pub fn laplacian_curvature(mesh: &TriMesh) -> Result<Vec<Vector3<f64>>, MeshError> {
    let nbrs = mesh.vertex_neighbors();
    let mut out = Vec::with_capacity(mesh.vertex_count());
    for (i, list) in nbrs.iter().enumerate() {
        if list.is_empty() {
            return Err(MeshError::IsolatedVertex { vertex: i });
        }
        let mean = list.iter().map(|&j| mesh.vertices[j]).sum::<Vector3<f64>>() / list.len() as f64;
        out.push(mesh.vertices[i] - mean);
    }
    Ok(out)
}

/// Smoothness energy `sum_i ||d_i||^2` and its analytic gradient with
/// respect to the vertex positions (`2 L^T L V` for the uniform Laplacian).
pub fn curvature_energy(mesh: &TriMesh) -> Result<(f64, Vec<Vector3<f64>>), MeshError> {
    let nbrs = mesh.vertex_neighbors();
    let delta = laplacian_curvature(mesh)?;
    let energy = delta.iter().map(|d| d.norm_squared()).sum();
    // gradient_i = 2 (delta_i - sum_{j : i in N(j)} delta_j / |N(j)|);
    // the neighbor relation is symmetric, so iterate each j's neighbors.
    let mut grad: Vec<Vector3<f64>> = delta.iter().map(|d| 2.0 * d).collect();
    for (j, list) in nbrs.iter().enumerate() {
        let w = 2.0 / list.len() as f64;
        for &i in list {
            grad[i] -= w * delta[j];
        }
    }
    Ok((energy, grad))
}
