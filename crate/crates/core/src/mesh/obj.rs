//! Minimal Wavefront OBJ I/O: `v x y z` and `f i j k` lines (1-indexed),
//! `#` comments ignored. Vertices round-trip through the shortest exact
//! decimal representation.

use super::{MeshError, TriMesh};
use nalgebra::Vector3;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh, MeshError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let io_err = |source| MeshError::Io { path: path_str.clone(), source };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let reader = BufReader::new(file);

    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|source| MeshError::Io { path: path_str.clone(), source })?;
        let parse_err = |message: String| MeshError::ObjParse {
            path: path_str.clone(),
            line: lineno,
            message,
        };
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = parts
                        .next()
                        .ok_or_else(|| parse_err("vertex needs 3 coordinates".into()))?;
                    *c = tok
                        .parse()
                        .map_err(|_| parse_err(format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = [0usize; 3];
                for i in &mut idx {
                    let tok =
                        parts.next().ok_or_else(|| parse_err("face needs 3 indices".into()))?;
                    // Accept "i", "i/..", "i//.." forms; only the vertex index is used.
                    let vtok = tok.split('/').next().unwrap_or(tok);
                    let one_based: usize = vtok
                        .parse()
                        .map_err(|_| parse_err(format!("bad face index {tok:?}")))?;
                    if one_based == 0 {
                        return Err(parse_err("face index 0 (OBJ is 1-indexed)".into()));
                    }
                    if one_based > vertices.len() {
                        return Err(parse_err(format!(
                            "face index {one_based} exceeds vertex count {}",
                            vertices.len()
                        )));
                    }
                    *i = one_based - 1;
                }
                if parts.next().is_some() {
                    return Err(parse_err("only triangular faces are supported".into()));
                }
                faces.push(idx);
            }
            // Other directives (vn, vt, o, g, s, mtllib, usemtl) are skipped.
            Some(_) => continue,
            None => continue,
        }
    }
    if vertices.is_empty() {
        return Err(MeshError::ObjParse {
            path: path_str,
            line: 0,
            message: "no vertices".into(),
        });
    }
    TriMesh::new(vertices, faces)
}

pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let io_err = |source| MeshError::Io { path: path_str.clone(), source };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let mut write = |s: String| -> Result<(), MeshError> {
        out.write_all(s.as_bytes()).map_err(|source| MeshError::Io {
            path: path_str.clone(),
            source,
        })
    };
    for v in &mesh.vertices {
        write(format!("v {} {} {}\n", v.x, v.y, v.z))?;
    }
    for f in &mesh.faces {
        write(format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1))?;
    }
    Ok(())
}
