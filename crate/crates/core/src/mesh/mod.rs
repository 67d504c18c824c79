//! Triangle-mesh shape representation: vertices and faces in the object
//! canonical frame, keypoint selection, mean-model generation, curvature
//! regularization, mirror symmetry, voxelization, and OBJ I/O.

mod curvature;
mod icosphere;
mod obj;
mod symmetry;
mod voxel;

pub use curvature::{curvature_energy, laplacian_curvature};
pub use icosphere::make_icosphere;
pub use obj::{load_obj, save_obj};
pub use symmetry::{symmetrize_gradient, SymmetryMap};
pub use voxel::{voxel_iou, voxel_iou_meshes, voxelize, voxelize_on_grid, GridSpec, VoxelGrid};

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("face {face} references vertex {index}, but the mesh has {vertex_count} vertices")]
    FaceIndexOutOfRange { face: usize, index: usize, vertex_count: usize },
    #[error("face {face} is degenerate: indices {indices:?} are not distinct")]
    DegenerateFace { face: usize, indices: [usize; 3] },
    #[error("vertex {vertex} is isolated (no incident face)")]
    IsolatedVertex { vertex: usize },
    #[error("mesh is not closed: {boundary_edges} boundary edge(s)")]
    NotClosed { boundary_edges: usize },
    #[error("symmetry map is inconsistent with the mesh: {reason}")]
    InconsistentSymmetry { reason: String },
    #[error("{path}:{line}: {message}")]
    ObjParse { path: String, line: usize, message: String },
    #[error("failed to read or write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("keypoint association is invalid: {reason}")]
    InvalidAssociation { reason: String },
    #[error("voxel grids are incompatible: {reason}")]
    IncompatibleGrids { reason: String },
}

/// Triangle mesh: vertex positions (meters, object canonical frame) plus
/// faces as triples of vertex indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Builds a mesh after checking index bounds and face non-degeneracy.
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let n = vertices.len();
        for (f, idx) in faces.iter().enumerate() {
            for &i in idx {
                if i >= n {
                    return Err(MeshError::FaceIndexOutOfRange {
                        face: f,
                        index: i,
                        vertex_count: n,
                    });
                }
            }
            if idx[0] == idx[1] || idx[1] == idx[2] || idx[0] == idx[2] {
                return Err(MeshError::DegenerateFace { face: f, indices: *idx });
            }
        }
        Ok(TriMesh { vertices, faces })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Per-vertex neighbor lists from face edges (sorted, deduplicated).
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                nbrs[a].push(b);
                nbrs[b].push(a);
            }
        }
        for list in &mut nbrs {
            list.sort_unstable();
            list.dedup();
        }
        nbrs
    }

    /// True when every edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        self.boundary_edge_count() == 0
    }

    fn boundary_edge_count(&self) -> usize {
        let mut counts = std::collections::BTreeMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        counts.values().filter(|&&c| c != 2).count()
    }

    /// True when every directed edge appears exactly once, i.e. adjacent
    /// faces wind consistently. Reported, not required.
    pub fn orientation_consistent(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                if !seen.insert((a, b)) {
                    return false;
                }
            }
        }
        true
    }

    /// Connected components of faces (vertex-connectivity), as face indices.
    pub(crate) fn face_components(&self) -> Vec<Vec<usize>> {
        let mut vertex_label = vec![usize::MAX; self.vertices.len()];
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for f in &self.faces {
            let r0 = find(&mut parent, f[0]);
            let r1 = find(&mut parent, f[1]);
            let r2 = find(&mut parent, f[2]);
            parent[r1] = r0;
            parent[r2] = r0;
        }
        let mut components: Vec<Vec<usize>> = Vec::new();
        for (fi, f) in self.faces.iter().enumerate() {
            let root = find(&mut parent, f[0]);
            let label = if vertex_label[root] == usize::MAX {
                vertex_label[root] = components.len();
                components.push(Vec::new());
                components.len() - 1
            } else {
                vertex_label[root]
            };
            components[label].push(fi);
        }
        components
    }

    /// Scales vertices anisotropically about the origin.
    pub fn scaled(&self, scale: Vector3<f64>) -> TriMesh {
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| Vector3::new(v.x * scale.x, v.y * scale.y, v.z * scale.z))
                .collect(),
            faces: self.faces.clone(),
        }
    }

    /// Appends another mesh, offsetting its face indices.
    pub fn merged(&self, other: &TriMesh) -> TriMesh {
        let offset = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]));
        TriMesh { vertices, faces }
    }

    /// Radius of the vertex set about its centroid.
    pub fn bounding_radius(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let c = self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64;
        self.vertices.iter().map(|v| (v - c).norm()).fold(0.0, f64::max)
    }
}

/// Selects a subset of mesh vertices as named keypoints; column k of the
/// conceptual |V| x |K| selection matrix picks `vertex_indices[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointAssociation {
    vertex_indices: Vec<usize>,
}

impl KeypointAssociation {
    pub fn new(vertex_indices: Vec<usize>, mesh: &TriMesh) -> Result<Self, MeshError> {
        let mut seen = std::collections::BTreeSet::new();
        for &i in &vertex_indices {
            if i >= mesh.vertex_count() {
                return Err(MeshError::InvalidAssociation {
                    reason: format!("vertex index {i} out of range"),
                });
            }
            if !seen.insert(i) {
                return Err(MeshError::InvalidAssociation {
                    reason: format!("vertex {i} selected twice"),
                });
            }
        }
        Ok(KeypointAssociation { vertex_indices })
    }

    pub fn vertex_indices(&self) -> &[usize] {
        &self.vertex_indices
    }

    pub fn keypoint_count(&self) -> usize {
        self.vertex_indices.len()
    }

    /// The selected keypoint positions `K = V A`.
    pub fn keypoints(&self, mesh: &TriMesh) -> Vec<Vector3<f64>> {
        self.vertex_indices.iter().map(|&i| mesh.vertices[i]).collect()
    }
}

/// Picks `count` well-spread vertex indices by farthest-point sampling,
/// seeded at the vertex with the largest x coordinate (ties broken by index).
pub fn farthest_point_keypoints(mesh: &TriMesh, count: usize) -> KeypointAssociation {
    assert!(count <= mesh.vertex_count(), "more keypoints than vertices");
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    if count == 0 {
        return KeypointAssociation { vertex_indices: chosen };
    }
    let first = (0..mesh.vertex_count())
        .max_by(|&a, &b| {
            mesh.vertices[a].x.partial_cmp(&mesh.vertices[b].x).unwrap().then(b.cmp(&a))
        })
        .unwrap();
    chosen.push(first);
    let mut dist: Vec<f64> =
        mesh.vertices.iter().map(|v| (v - mesh.vertices[first]).norm_squared()).collect();
    while chosen.len() < count {
        let next = (0..mesh.vertex_count())
            .max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min((mesh.vertices[i] - mesh.vertices[next]).norm_squared());
        }
    }
    KeypointAssociation { vertex_indices: chosen }
}
