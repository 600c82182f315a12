//! Indexed triangle meshes with per-corner UVs, plus the geometric helpers
//! every pipeline stage shares.
//!
//! UVs are stored the way Wavefront OBJ stores them: a pool of 2D coordinates
//! and, for each triangle, three indices into that pool. This keeps seams of
//! a UV atlas representable (one position, several UVs).

mod obj;

pub use obj::{load_obj, parse_obj, save_obj, write_obj};

use nalgebra::{Point3, Vector2, Vector3};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const UV_TOLERANCE: f64 = 1e-9;
const NORMAL_TOLERANCE: f64 = 1e-6;

/// Per-face-corner texture coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct UvLayout {
    pub coords: Vec<Vector2<f64>>,
    pub faces: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    uvs: Option<UvLayout>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl Mesh {
    /// Builds a mesh and checks its invariants: face indices in range,
    /// non-degenerate index triples, UVs in the unit square, unit normals.
    pub fn new(
        vertices: Vec<Point3<f64>>,
        faces: Vec<[usize; 3]>,
        uvs: Option<UvLayout>,
        normals: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self> {
        let mesh = Mesh {
            vertices,
            faces,
            uvs,
            normals,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// A mesh without faces, as used for scan boundary point sets.
    pub fn point_cloud(points: Vec<Point3<f64>>) -> Self {
        Mesh {
            vertices: points,
            faces: Vec::new(),
            uvs: None,
            normals: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (f, face) in self.faces.iter().enumerate() {
            if face.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {f} references vertex out of range (vertex count {n})"
                )));
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::InvalidMesh(format!("face {f} is degenerate: {face:?}")));
            }
        }
        if let Some(uv) = &self.uvs {
            if uv.faces.len() != self.faces.len() {
                return Err(Error::InvalidMesh(format!(
                    "{} UV faces for {} faces",
                    uv.faces.len(),
                    self.faces.len()
                )));
            }
            let m = uv.coords.len();
            if let Some(f) = uv.faces.iter().position(|t| t.iter().any(|&i| i >= m)) {
                return Err(Error::InvalidMesh(format!(
                    "UV face {f} references coordinate out of range (count {m})"
                )));
            }
            let range = -UV_TOLERANCE..=1.0 + UV_TOLERANCE;
            if let Some(i) = uv
                .coords
                .iter()
                .position(|c| !range.contains(&c.x) || !range.contains(&c.y))
            {
                return Err(Error::InvalidMesh(format!(
                    "UV coordinate {i} = ({}, {}) outside the unit square",
                    uv.coords[i].x, uv.coords[i].y
                )));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::InvalidMesh(format!(
                    "{} normals for {n} vertices",
                    normals.len()
                )));
            }
            if let Some(i) = normals.iter().position(|v| (v.norm() - 1.0).abs() > NORMAL_TOLERANCE) {
                return Err(Error::InvalidMesh(format!("normal {i} is not unit length")));
            }
        }
        if let Some(i) = self
            .vertices
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn uvs(&self) -> Option<&UvLayout> {
        self.uvs.as_ref()
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Same topology and UVs, new positions. Normals are dropped because they
    /// no longer describe the surface.
    pub fn with_positions(&self, vertices: Vec<Point3<f64>>) -> Result<Mesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                context: "vertex positions",
                expected: self.vertices.len(),
                actual: vertices.len(),
            });
        }
        Mesh::new(vertices, self.faces.clone(), self.uvs.clone(), None)
    }

    pub fn with_normals(mut self, normals: Option<Vec<Vector3<f64>>>) -> Result<Mesh> {
        self.normals = normals;
        self.validate()?;
        Ok(self)
    }

    pub fn with_uvs(mut self, uvs: Option<UvLayout>) -> Result<Mesh> {
        self.uvs = uvs;
        self.validate()?;
        Ok(self)
    }

    /// Attaches area-weighted vertex normals. Fails if some vertex has no
    /// incident face of non-zero area.
    pub fn with_computed_normals(self) -> Result<Mesh> {
        let normals = compute_vertex_normals(&self)
            .into_iter()
            .enumerate()
            .map(|(i, n)| n.ok_or_else(|| Error::InvalidMesh(format!("vertex {i} has no normal (no incident area)"))))
            .collect::<Result<Vec<_>>>()?;
        self.with_normals(Some(normals))
    }

    pub fn triangle(&self, face: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal; its length is twice the triangle area.
    pub fn face_area_normal(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    pub fn bounding_box(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        bounding_box(&self.vertices)
    }

    /// Stable digest of the face and UV index structure. Two meshes with the
    /// same hash can share a vertex-indexed statistical model.
    pub fn topology_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.vertices.len() as u64).to_le_bytes());
        hasher.update((self.faces.len() as u64).to_le_bytes());
        for face in &self.faces {
            for &i in face {
                hasher.update((i as u64).to_le_bytes());
            }
        }
        if let Some(uv) = &self.uvs {
            hasher.update(b"uv");
            for face in &uv.faces {
                for &i in face {
                    hasher.update((i as u64).to_le_bytes());
                }
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Flattened `[x0, y0, z0, x1, ...]` position vector.
    pub fn flat_positions(&self) -> Vec<f64> {
        flatten_points(&self.vertices)
    }

    /// Keeps only the given faces and drops vertices no longer referenced.
    /// Returns the new mesh and, for each old vertex, its new index.
    pub fn retain_faces(&self, keep: &[bool]) -> Result<(Mesh, Vec<Option<usize>>)> {
        if keep.len() != self.faces.len() {
            return Err(Error::DimensionMismatch {
                context: "face mask",
                expected: self.faces.len(),
                actual: keep.len(),
            });
        }
        let mut used = vec![false; self.vertices.len()];
        for (face, _) in self.faces.iter().zip(keep).filter(|(_, &k)| k) {
            for &i in face {
                used[i] = true;
            }
        }
        let mut remap = vec![None; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut normals = self.normals.as_ref().map(|_| Vec::new());
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = Some(vertices.len());
                vertices.push(self.vertices[i]);
                if let (Some(out), Some(src)) = (normals.as_mut(), self.normals.as_ref()) {
                    out.push(src[i]);
                }
            }
        }
        let faces = self
            .faces
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(f, _)| f.map(|i| remap[i].expect("referenced vertex kept")))
            .collect();
        let uvs = self.uvs.as_ref().map(|uv| UvLayout {
            coords: uv.coords.clone(),
            faces: uv.faces.iter().zip(keep).filter(|(_, &k)| k).map(|(f, _)| *f).collect(),
        });
        Ok((Mesh::new(vertices, faces, uvs, normals)?, remap))
    }
}

pub fn bounding_box(points: &[Point3<f64>]) -> Option<(Point3<f64>, Point3<f64>)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}

pub fn flatten_points(points: &[Point3<f64>]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub fn unflatten_points(flat: &[f64]) -> Vec<Point3<f64>> {
    flat.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect()
}

/// Area-weighted vertex normals. Vertices whose incident faces all have zero
/// area (or that have no faces at all) get `None`.
///
/// Accumulation order is the face order, so the result is deterministic.
pub fn compute_vertex_normals(mesh: &Mesh) -> Vec<Option<Vector3<f64>>> {
    vertex_normals_for(mesh.vertices(), mesh.faces())
}

pub(crate) fn vertex_normals_for(vertices: &[Point3<f64>], faces: &[[usize; 3]]) -> Vec<Option<Vector3<f64>>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for &[a, b, c] in faces {
        let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        acc[a] += n;
        acc[b] += n;
        acc[c] += n;
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            (len > f64::MIN_POSITIVE && len.is_finite()).then(|| n / len)
        })
        .collect()
}

/// Barycentric coordinates of `p` with respect to the 2D triangle `(a, b, c)`.
/// Returns `None` for a zero-area triangle.
pub fn barycentric_2d(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) -> Option<[f64; 3]> {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let den = v0.x * v1.y - v1.x * v0.y;
    if den.abs() < 1e-300 {
        return None;
    }
    let v = (v2.x * v1.y - v1.x * v2.y) / den;
    let w = (v0.x * v2.y - v2.x * v0.y) / den;
    Some([1.0 - v - w, v, w])
}
