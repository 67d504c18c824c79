//! Mirror symmetry about the canonical x = 0 plane: detection of vertex
//! pairings and projection of vertex gradients onto symmetric deformations.

use super::{MeshError, TriMesh};
use nalgebra::Vector3;

fn mirror(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-v.x, v.y, v.z)
}

/// Vertex pairing across the x = 0 mirror plane. `pairs` lists each
/// (negative-x vertex, positive-x partner) once; `fixed` holds on-plane
/// vertices.
#[derive(Debug, Clone)]
pub struct SymmetryMap {
    pairs: Vec<(usize, usize)>,
    fixed: Vec<usize>,
    vertex_count: usize,
}

impl SymmetryMap {
    /// Detects the pairing on a mirror-symmetric mesh. Fails when any vertex
    /// has no partner within `tol`.
    pub fn detect(mesh: &TriMesh, tol: f64) -> Result<Self, MeshError> {
        let n = mesh.vertex_count();
        let mut partner = vec![usize::MAX; n];
        let mut fixed = Vec::new();
        let mut pairs = Vec::new();
        for i in 0..n {
            if partner[i] != usize::MAX {
                continue;
            }
            let v = &mesh.vertices[i];
            if v.x.abs() <= tol {
                partner[i] = i;
                fixed.push(i);
                continue;
            }
            let target = mirror(v);
            let mut best = usize::MAX;
            let mut best_d = tol;
            for (j, w) in mesh.vertices.iter().enumerate() {
                if j == i || partner[j] != usize::MAX {
                    continue;
                }
                let d = (w - target).norm();
                if d <= best_d {
                    best_d = d;
                    best = j;
                }
            }
            if best == usize::MAX {
                return Err(MeshError::InconsistentSymmetry {
                    reason: format!("vertex {i} has no mirror partner within {tol:e}"),
                });
            }
            partner[i] = best;
            partner[best] = i;
            pairs.push((i.min(best), i.max(best)));
        }
        pairs.sort_unstable();
        fixed.sort_unstable();
        Ok(SymmetryMap { pairs, fixed, vertex_count: n })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn fixed(&self) -> &[usize] {
        &self.fixed
    }

    /// Residual of the mirror constraint on a mesh (max vertex deviation).
    pub fn residual(&self, mesh: &TriMesh) -> f64 {
        let mut r: f64 = 0.0;
        for &(i, j) in &self.pairs {
            r = r.max((mesh.vertices[i] - mirror(&mesh.vertices[j])).norm());
        }
        for &i in &self.fixed {
            r = r.max(mesh.vertices[i].x.abs());
        }
        r
    }

    /// Forces exact symmetry by averaging pairs and zeroing on-plane x.
    pub fn enforce(&self, mesh: &mut TriMesh) {
        for &(i, j) in &self.pairs {
            let a = mesh.vertices[i];
            let b = mirror(&mesh.vertices[j]);
            let m = (a + b) / 2.0;
            mesh.vertices[i] = m;
            mesh.vertices[j] = mirror(&m);
        }
        for &i in &self.fixed {
            mesh.vertices[i].x = 0.0;
        }
    }
}

/// Projects a per-vertex gradient onto the subspace of mirror-symmetric
/// deformations: paired vertices receive averaged-and-reflected gradients,
/// on-plane vertices lose their x component. A descent step with the
/// projected gradient preserves mirror symmetry exactly.
pub fn symmetrize_gradient(
    grad: &[Vector3<f64>],
    sym: &SymmetryMap,
) -> Result<Vec<Vector3<f64>>, MeshError> {
    if grad.len() != sym.vertex_count {
        return Err(MeshError::InconsistentSymmetry {
            reason: format!(
                "gradient has {} entries, symmetry map expects {}",
                grad.len(),
                sym.vertex_count
            ),
        });
    }
    let mut out = grad.to_vec();
    for &(i, j) in &sym.pairs {
        let g = (grad[i] + mirror(&grad[j])) / 2.0;
        out[i] = g;
        out[j] = mirror(&g);
    }
    for &i in &sym.fixed {
        out[i].x = 0.0;
    }
    Ok(out)
}
