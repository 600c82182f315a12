use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point3, Vector2, Vector3};

use super::{Mesh, UvLayout};
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Clone, Copy)]
struct Corner {
    v: i64,
    vt: Option<i64>,
    vn: Option<i64>,
}

struct RawFace {
    line: usize,
    corners: Vec<Corner>,
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, &path.display().to_string())
}

/// Parses Wavefront OBJ text. `v`, `vt`, `vn` and `f` records are
/// understood; polygons are fan-triangulated and every other record is
/// ignored. A file with only `v` records yields a point cloud.
pub fn parse_obj(text: &str, source_name: &str) -> Result<Mesh> {
    let mut positions = Vec::new();
    let mut texcoords = Vec::new();
    let mut normals = Vec::new();
    let mut faces: Vec<RawFace> = Vec::new();

    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        match tag {
            "v" | "vn" | "vt" => {
                let want = if tag == "vt" { 2 } else { 3 };
                let values = tokens
                    .take(want)
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| parse_err(line, format!("invalid number '{t}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if values.len() < want {
                    return Err(parse_err(line, format!("'{tag}' needs {want} coordinates")));
                }
                match tag {
                    "v" => positions.push(Point3::new(values[0], values[1], values[2])),
                    "vn" => normals.push(Vector3::new(values[0], values[1], values[2])),
                    _ => texcoords.push(Vector2::new(values[0], values[1])),
                }
            }
            "f" => {
                let corners = tokens
                    .map(|t| parse_corner(t).ok_or_else(|| parse_err(line, format!("invalid face vertex '{t}'"))))
                    .collect::<Result<Vec<_>>>()?;
                if corners.len() < 3 {
                    return Err(parse_err(line, "face needs at least 3 vertices".into()));
                }
                // Relative (negative) indices refer to records seen so far.
                let resolve = |i: i64, count: usize| if i < 0 { count as i64 + i + 1 } else { i };
                let corners = corners
                    .into_iter()
                    .map(|c| Corner {
                        v: resolve(c.v, positions.len()),
                        vt: c.vt.map(|i| resolve(i, texcoords.len())),
                        vn: c.vn.map(|i| resolve(i, normals.len())),
                    })
                    .collect();
                faces.push(RawFace { line, corners });
            }
            _ => {}
        }
    }

    let index_check = |line: usize, kind: &'static str, index: i64, count: usize| -> Result<usize> {
        if index >= 1 && (index as usize) <= count {
            Ok(index as usize - 1)
        } else {
            Err(Error::IndexOutOfRange {
                source_name: source_name.to_string(),
                line,
                kind,
                index,
                count,
            })
        }
    };

    let has_uv = faces.first().is_some_and(|f| f.corners[0].vt.is_some());
    let mut tri_faces = Vec::new();
    let mut uv_faces = Vec::new();
    let mut vertex_normals: Vec<Option<Vector3<f64>>> = vec![None; positions.len()];
    let mut any_normal_ref = false;
    for face in &faces {
        let mut v = Vec::with_capacity(face.corners.len());
        let mut vt = Vec::with_capacity(face.corners.len());
        for c in &face.corners {
            let vi = index_check(face.line, "vertex", c.v, positions.len())?;
            v.push(vi);
            match (has_uv, c.vt) {
                (true, Some(t)) => vt.push(index_check(face.line, "texture coordinate", t, texcoords.len())?),
                (false, None) => {}
                _ => return Err(parse_err(face.line, "faces mix corners with and without UVs".into())),
            }
            if let Some(n) = c.vn {
                any_normal_ref = true;
                let ni = index_check(face.line, "normal", n, normals.len())?;
                vertex_normals[vi].get_or_insert(normals[ni]);
            }
        }
        for k in 1..v.len() - 1 {
            let tri = [v[0], v[k], v[k + 1]];
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(parse_err(face.line, format!("degenerate face {tri:?}")));
            }
            tri_faces.push(tri);
            if has_uv {
                uv_faces.push([vt[0], vt[k], vt[k + 1]]);
            }
        }
    }

    let uvs = has_uv.then(|| UvLayout {
        coords: texcoords,
        faces: uv_faces,
    });
    let normals = if any_normal_ref && vertex_normals.iter().all(Option::is_some) {
        Some(vertex_normals.into_iter().map(|n| n.unwrap().normalize()).collect())
    } else {
        None
    };
    Mesh::new(positions, tri_faces, uvs, normals)
}

fn parse_corner(token: &str) -> Option<Corner> {
    let mut parts = token.split('/');
    let v = parts.next()?.parse().ok()?;
    let vt = match parts.next() {
        None | Some("") => None,
        Some(s) => Some(s.parse().ok()?),
    };
    let vn = match parts.next() {
        None | Some("") => None,
        Some(s) => Some(s.parse().ok()?),
    };
    if v == 0 || vt == Some(0) || vn == Some(0) {
        return None;
    }
    Some(Corner { v, vt, vn })
}

/// Serializes a mesh as OBJ text. Floats use the shortest representation
/// that parses back to the identical `f64`, so a round trip is lossless.
/// Normals, when present, are written one per vertex with the same index.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(64 * mesh.vertex_count() + 32 * mesh.face_count());
    for p in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
    }
    if let Some(uv) = mesh.uvs() {
        for c in &uv.coords {
            let _ = writeln!(out, "vt {} {}", c.x, c.y);
        }
    }
    if let Some(normals) = mesh.normals() {
        for n in normals {
            let _ = writeln!(out, "vn {} {} {}", n.x, n.y, n.z);
        }
    }
    let has_n = mesh.normals().is_some();
    for (f, face) in mesh.faces().iter().enumerate() {
        out.push('f');
        for k in 0..3 {
            let v = face[k] + 1;
            match (mesh.uvs(), has_n) {
                (Some(uv), true) => {
                    let _ = write!(out, " {v}/{}/{v}", uv.faces[f][k] + 1);
                }
                (Some(uv), false) => {
                    let _ = write!(out, " {v}/{}", uv.faces[f][k] + 1);
                }
                (None, true) => {
                    let _ = write!(out, " {v}//{v}");
                }
                (None, false) => {
                    let _ = write!(out, " {v}");
                }
            }
        }
        out.push('\n');
    }
    out
}

pub fn save_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), write_obj(mesh).as_bytes())
}
