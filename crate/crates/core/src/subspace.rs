//! PCA blend-shape model over pose-normalized registrations.
//!
//! A model is a mean shape `M` plus an orthonormal basis `V` (3v x k) of
//! offset directions. A coefficient vector `λ` synthesizes the rest-pose
//! shape `M + V λ`, which skinning then poses. Coefficients of a shape `R`
//! are `λ = V^T (R - M)`.
//!
//! The basis holds the left singular vectors of the 3v x n offset matrix
//! `O = [R_1 - M, ..., R_n - M]`, sorted by decreasing singular value, with
//! each column's sign fixed so that its largest-magnitude entry is positive.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{read_arrays, write_arrays};
use crate::linalg::thin_svd;
use crate::mesh::{flatten_points, unflatten_points, Mesh, UvLayout};
use crate::skinning::{skin, Pose, Skeleton, SkinWeights};

const FILE_KIND: &str = "subspace-model";

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    /// Mean shape with the template's faces and UVs.
    reference: Mesh,
    mean: DVector<f64>,
    basis: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl SubspaceModel {
    /// Fits a `k`-component model to `frames`, which must share topology.
    pub fn fit(frames: &[Mesh], k: usize) -> Result<Self> {
        let n = frames.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "subspace fit needs at least 2 frames, got {n}"
            )));
        }
        let first = &frames[0];
        let hash = first.topology_hash();
        for (i, f) in frames.iter().enumerate().skip(1) {
            if f.topology_hash() != hash {
                return Err(Error::TopologyMismatch(format!("frame {i} differs from frame 0")));
            }
        }
        let dim = 3 * first.vertex_count();
        if k == 0 || k > n.min(dim) {
            return Err(Error::InvalidArgument(format!(
                "k = {k} outside 1..={} (frames {n}, coordinates {dim})",
                n.min(dim)
            )));
        }

        let mut data = DMatrix::<f64>::zeros(dim, n);
        for (j, f) in frames.iter().enumerate() {
            data.set_column(j, &DVector::from_vec(f.flat_positions()));
        }
        // Running mean: exact when all frames are identical.
        let mut mean = DVector::<f64>::zeros(dim);
        for (j, col) in data.column_iter().enumerate() {
            mean += (col - &mean) / (j + 1) as f64;
        }
        for mut col in data.column_iter_mut() {
            col -= &mean;
        }

        let (basis, singular_values) = left_singular_vectors(data, k)?;
        let reference = first.with_positions(unflatten_points(mean.as_slice()))?;
        Ok(SubspaceModel {
            reference,
            mean,
            basis,
            singular_values,
        })
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn vertex_count(&self) -> usize {
        self.reference.vertex_count()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Mean shape as a mesh with the template topology.
    pub fn mean_mesh(&self) -> &Mesh {
        &self.reference
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn topology_hash(&self) -> String {
        self.reference.topology_hash()
    }

    /// Model keeping only the first `k` components.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate {} components to {k}",
                self.k()
            )));
        }
        Ok(SubspaceModel {
            reference: self.reference.clone(),
            mean: self.mean.clone(),
            basis: self.basis.columns(0, k).into_owned(),
            singular_values: self.singular_values[..k].to_vec(),
        })
    }

    fn check_topology(&self, mesh: &Mesh) -> Result<()> {
        if mesh.topology_hash() != self.topology_hash() {
            return Err(Error::TopologyMismatch(format!(
                "mesh with {} vertices / {} faces does not match the model template",
                mesh.vertex_count(),
                mesh.face_count()
            )));
        }
        Ok(())
    }

    /// Coefficients of a pose-normalized shape.
    pub fn project(&self, shape: &Mesh) -> Result<DVector<f64>> {
        self.check_topology(shape)?;
        self.project_flat(&shape.flat_positions())
    }

    pub fn project_flat(&self, flat: &[f64]) -> Result<DVector<f64>> {
        if flat.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "shape coordinates",
                expected: self.mean.len(),
                actual: flat.len(),
            });
        }
        let offset = DVector::from_column_slice(flat) - &self.mean;
        Ok(self.basis.tr_mul(&offset))
    }

    /// Rest-pose coordinates `M + V λ`.
    pub fn synthesize_flat(&self, coefficients: &DVector<f64>) -> Result<DVector<f64>> {
        if coefficients.len() != self.k() {
            return Err(Error::DimensionMismatch {
                context: "shape coefficients",
                expected: self.k(),
                actual: coefficients.len(),
            });
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("shape coefficients must be finite".into()));
        }
        Ok(&self.mean + &self.basis * coefficients)
    }

    /// Rest-pose mesh for the given coefficients.
    pub fn synthesize(&self, coefficients: &DVector<f64>) -> Result<Mesh> {
        let flat = self.synthesize_flat(coefficients)?;
        self.reference.with_positions(unflatten_points(flat.as_slice()))
    }

    /// Posed blend shape: the synthesized shape skinned with `pose`.
    pub fn reconstruct(
        &self,
        coefficients: &DVector<f64>,
        pose: &Pose,
        weights: &SkinWeights,
        skeleton: &Skeleton,
    ) -> Result<Mesh> {
        skin(&self.synthesize(coefficients)?, weights, skeleton, pose)
    }

    /// Model for a different body shape: the mean is displaced by per-vertex
    /// offsets (flattened, 3v entries); basis and singular values are kept.
    pub fn retarget_mean(&self, offsets: &[f64]) -> Result<Self> {
        if offsets.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "retargeting offsets",
                expected: self.mean.len(),
                actual: offsets.len(),
            });
        }
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidArgument("retargeting offsets must be finite".into()));
        }
        let mean = &self.mean + DVector::from_column_slice(offsets);
        Ok(SubspaceModel {
            reference: self.reference.with_positions(unflatten_points(mean.as_slice()))?,
            mean,
            basis: self.basis.clone(),
            singular_values: self.singular_values.clone(),
        })
    }

    /// Per-vertex reconstruction error of `shape` after projecting it on the
    /// subspace.
    pub fn reconstruction_error(&self, shape: &Mesh) -> Result<ReconstructionError> {
        let coefficients = self.project(shape)?;
        let rebuilt = self.synthesize_flat(&coefficients)?;
        Ok(ReconstructionError::between(
            &shape.flat_positions(),
            rebuilt.as_slice(),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let faces: Vec<f64> = self.reference.faces().iter().flatten().map(|&i| i as f64).collect();
        let uv = self.reference.uvs();
        let uv_coords: Vec<f64> = uv
            .map(|u| u.coords.iter().flat_map(|c| [c.x, c.y]).collect())
            .unwrap_or_default();
        let uv_faces: Vec<f64> = uv
            .map(|u| u.faces.iter().flatten().map(|&i| i as f64).collect())
            .unwrap_or_default();
        let basis: Vec<f64> = self.basis.as_slice().to_vec();
        let meta = json!({
            "k": self.k(),
            "vertices": self.vertex_count(),
            "faces": self.reference.face_count(),
            "has_uvs": uv.is_some(),
            "topology_hash": self.topology_hash(),
            "basis_layout": "column-major 3v x k",
        });
        write_arrays(
            path,
            FILE_KIND,
            meta,
            &[
                ("mean", self.mean.as_slice()),
                ("basis", &basis),
                ("singular_values", &self.singular_values),
                ("faces", &faces),
                ("uv_coords", &uv_coords),
                ("uv_faces", &uv_faces),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = read_arrays(path, FILE_KIND)?;
        let k = file.meta_usize("k")?;
        let v = file.meta_usize("vertices")?;
        let f = file.meta_usize("faces")?;
        let hash = file.meta_str("topology_hash")?.to_string();
        let mean = file.take("mean")?;
        let basis = file.take("basis")?;
        let singular_values = file.take("singular_values")?;
        let faces = to_index_triples(&file.take("faces")?)?;
        let uv_coords = file.take("uv_coords")?;
        let uv_faces = to_index_triples(&file.take("uv_faces")?)?;
        if mean.len() != 3 * v || basis.len() != 3 * v * k || singular_values.len() != k || faces.len() != f {
            return Err(Error::Format(format!(
                "{}: array sizes disagree with header",
                path.display()
            )));
        }
        let uvs = if file.meta.get("has_uvs").and_then(|b| b.as_bool()).unwrap_or(false) {
            Some(UvLayout {
                coords: uv_coords.chunks_exact(2).map(|c| Vector2::new(c[0], c[1])).collect(),
                faces: uv_faces,
            })
        } else {
            None
        };
        let reference = Mesh::new(unflatten_points(&mean), faces, uvs, None)?;
        if reference.topology_hash() != hash {
            return Err(Error::Format(format!("{}: topology hash mismatch", path.display())));
        }
        Ok(SubspaceModel {
            reference,
            mean: DVector::from_vec(mean),
            basis: DMatrix::from_vec(3 * v, k, basis),
            singular_values,
        })
    }
}

fn to_index_triples(values: &[f64]) -> Result<Vec<[usize; 3]>> {
    if values.len() % 3 != 0 {
        return Err(Error::Format("index array length is not a multiple of 3".into()));
    }
    values
        .chunks_exact(3)
        .map(|c| {
            let mut out = [0; 3];
            for (o, &x) in out.iter_mut().zip(c) {
                if !(x >= 0.0) || x.fract() != 0.0 {
                    return Err(Error::Format(format!("invalid index {x}")));
                }
                *o = x as usize;
            }
            Ok(out)
        })
        .collect()
}

/// Top-`k` left singular vectors and singular values of `data`, sorted by
/// decreasing singular value, with the sign convention applied.
fn left_singular_vectors(data: DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let svd = thin_svd(&data)?;
    let mut basis = DMatrix::<f64>::zeros(data.nrows(), k);
    let mut values = Vec::with_capacity(k);
    for j in 0..k {
        let mut col = svd.u.column(j).into_owned();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
        basis.set_column(j, &col);
        values.push(svd.s[j].max(0.0));
    }
    if basis.iter().any(|x| !x.is_finite()) {
        return Err(Error::SolverFailure("subspace basis is not finite".into()));
    }
    Ok((basis, values))
}

/// Vertex-space error between a shape and its reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionError {
    /// Root mean square of per-vertex Euclidean errors (metres).
    pub rms: f64,
    /// Largest per-vertex Euclidean error (metres).
    pub max: f64,
}

impl ReconstructionError {
    pub fn between(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len());
        let mut sum = 0.0;
        let mut max = 0.0f64;
        let n = a.len() / 3;
        for (pa, pb) in a.chunks_exact(3).zip(b.chunks_exact(3)) {
            let d2 = (pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2);
            sum += d2;
            max = max.max(d2.sqrt());
        }
        ReconstructionError {
            rms: if n == 0 { 0.0 } else { (sum / n as f64).sqrt() },
            max,
        }
    }

    pub fn between_points(a: &[Point3<f64>], b: &[Point3<f64>]) -> Self {
        Self::between(&flatten_points(a), &flatten_points(b))
    }
}

/// Flattened per-clothing-vertex offsets taken from a body offset field:
/// `body_offsets[clothing_to_body[i]]` for every clothing vertex `i`.
pub fn restrict_offsets(body_offsets: &[Vector3<f64>], clothing_to_body: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(3 * clothing_to_body.len());
    for (i, &b) in clothing_to_body.iter().enumerate() {
        let o = body_offsets.get(b).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "clothing vertex {i} maps to body vertex {b} of {}",
                body_offsets.len()
            ))
        })?;
        out.extend_from_slice(o.as_slice());
    }
    Ok(out)
}
