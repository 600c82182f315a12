//! Skeletons, poses and linear blend skinning.
//!
//! A joint's rest transform is a pure translation (`offset` from its parent,
//! or from the origin for the root). A pose assigns every joint a local
//! rotation, the root an extra translation, and optionally every bone a
//! length scale applied to its offset.
//!
//! `unskin` inverts each vertex's *blended* transform, which makes
//! `unskin(skin(x))` the identity up to rounding.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Point3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::mesh::Mesh;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
const QUATERNION_TOLERANCE: f64 = 1e-9;
/// Blended linear parts with |det| below this are treated as singular.
const SINGULAR_DET: f64 = 1e-12;
pub const MAX_INFLUENCES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonDoc", into = "SkeletonDoc")]
pub struct Skeleton {
    joints: Vec<Joint>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonDoc {
    joints: Vec<Joint>,
}

impl TryFrom<SkeletonDoc> for Skeleton {
    type Error = Error;
    fn try_from(doc: SkeletonDoc) -> Result<Self> {
        Skeleton::new(doc.joints)
    }
}

impl From<Skeleton> for SkeletonDoc {
    fn from(s: Skeleton) -> Self {
        SkeletonDoc { joints: s.joints }
    }
}

impl Skeleton {
    /// Joints must be topologically sorted (parent before child) with a
    /// single root at index 0.
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidArgument("skeleton has no joints".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::InvalidArgument("joint 0 must be the root".into())),
                (_, None) => return Err(Error::InvalidArgument(format!("joint {i} is a second root"))),
                (_, Some(p)) if p >= i => {
                    return Err(Error::InvalidArgument(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )))
                }
                _ => {}
            }
        }
        Ok(Skeleton { joints })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// World-space joint positions in the rest pose.
    pub fn rest_positions(&self) -> Vec<Point3<f64>> {
        let mut out: Vec<Point3<f64>> = Vec::with_capacity(self.joints.len());
        for j in &self.joints {
            let off = Vector3::from(j.offset);
            let p = match j.parent {
                None => Point3::from(off),
                Some(p) => out[p] + off,
            };
            out.push(p);
        }
        out
    }

    /// Global joint transforms for a pose.
    pub fn world_transforms(&self, pose: &Pose) -> Result<Vec<Matrix4<f64>>> {
        pose.check(self)?;
        let mut out: Vec<Matrix4<f64>> = Vec::with_capacity(self.joints.len());
        for (i, j) in self.joints.iter().enumerate() {
            let scale = pose.bone_scales.as_ref().map_or(1.0, |s| s[i]);
            let local_t = Vector3::from(j.offset) * scale;
            let local = Matrix4::new_translation(&local_t) * pose.rotations[i].to_homogeneous();
            let g = match j.parent {
                None => Matrix4::new_translation(&pose.root_translation) * local,
                Some(p) => out[p] * local,
            };
            out.push(g);
        }
        Ok(out)
    }

    /// Per-joint skinning matrices: posed global transform times inverse rest
    /// transform.
    pub fn skinning_matrices(&self, pose: &Pose) -> Result<Vec<Matrix4<f64>>> {
        let rest = self.rest_positions();
        Ok(self
            .world_transforms(pose)?
            .into_iter()
            .zip(rest)
            .map(|(g, r)| g * Matrix4::new_translation(&-r.coords))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub root_translation: Vector3<f64>,
    pub bone_scales: Option<Vec<f64>>,
}

impl Pose {
    pub fn identity(joint_count: usize) -> Self {
        Pose {
            rotations: vec![UnitQuaternion::identity(); joint_count],
            root_translation: Vector3::zeros(),
            bone_scales: None,
        }
    }

    fn check(&self, skeleton: &Skeleton) -> Result<()> {
        let n = skeleton.joint_count();
        if self.rotations.len() != n {
            return Err(Error::DimensionMismatch {
                context: "pose rotations",
                expected: n,
                actual: self.rotations.len(),
            });
        }
        if let Some(s) = &self.bone_scales {
            if s.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "bone scales",
                    expected: n,
                    actual: s.len(),
                });
            }
            if s.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidArgument("bone scales must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Up to four `(joint, weight)` influences per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinWeights {
    influences: Vec<Vec<(usize, f64)>>,
}

impl SkinWeights {
    pub fn new(influences: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for (v, inf) in influences.iter().enumerate() {
            let bad = |reason: &str| Error::InvalidWeights {
                vertex: v,
                reason: reason.to_string(),
            };
            if inf.is_empty() {
                return Err(Error::MissingWeights(v));
            }
            if inf.len() > MAX_INFLUENCES {
                return Err(bad("more than 4 influences"));
            }
            if inf.iter().any(|&(_, w)| !(w >= 0.0) || !w.is_finite()) {
                return Err(bad("negative or non-finite weight"));
            }
            let sum: f64 = inf.iter().map(|&(_, w)| w).sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(bad(&format!("weights sum to {sum}")));
            }
        }
        Ok(SkinWeights { influences })
    }

    pub fn vertex_count(&self) -> usize {
        self.influences.len()
    }

    pub fn influences(&self, vertex: usize) -> &[(usize, f64)] {
        &self.influences[vertex]
    }

    pub fn max_joint(&self) -> Option<usize> {
        self.influences.iter().flatten().map(|&(j, _)| j).max()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: WeightsDoc = read_json(path)?;
        SkinWeights::new(doc.vertices)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(
            path,
            &WeightsDoc {
                vertices: self.influences.clone(),
            },
        )
    }
}

#[derive(Serialize, Deserialize)]
struct WeightsDoc {
    vertices: Vec<Vec<(usize, f64)>>,
}

/// Weight-blended 3x4 transform of one vertex: linear part and translation.
#[derive(Debug, Clone, Copy)]
pub struct BlendedTransform {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

pub fn blended_transforms(
    vertex_count: usize,
    weights: &SkinWeights,
    skeleton: &Skeleton,
    pose: &Pose,
) -> Result<Vec<BlendedTransform>> {
    if weights.vertex_count() < vertex_count {
        return Err(Error::MissingWeights(weights.vertex_count()));
    }
    if weights.vertex_count() > vertex_count {
        return Err(Error::DimensionMismatch {
            context: "skin weights",
            expected: vertex_count,
            actual: weights.vertex_count(),
        });
    }
    if let Some(j) = weights.max_joint() {
        if j >= skeleton.joint_count() {
            return Err(Error::InvalidArgument(format!(
                "skin weights reference joint {j}, skeleton has {}",
                skeleton.joint_count()
            )));
        }
    }
    let mats = skeleton.skinning_matrices(pose)?;
    Ok((0..vertex_count)
        .map(|v| {
            let mut m = Matrix4::zeros();
            for &(j, w) in weights.influences(v) {
                m += mats[j] * w;
            }
            BlendedTransform {
                linear: m.fixed_view::<3, 3>(0, 0).into_owned(),
                translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
            }
        })
        .collect())
}

/// Poses a rest-pose mesh. Topology and UVs are untouched; normals, when
/// present, are carried through the inverse-transpose of each vertex's
/// blended transform.
pub fn skin(mesh: &Mesh, weights: &SkinWeights, skeleton: &Skeleton, pose: &Pose) -> Result<Mesh> {
    let blends = blended_transforms(mesh.vertex_count(), weights, skeleton, pose)?;
    let vertices = mesh
        .vertices()
        .iter()
        .zip(&blends)
        .map(|(p, b)| Point3::from(b.linear * p.coords + b.translation))
        .collect();
    let normals = mesh.normals().map(|ns| {
        ns.iter()
            .zip(&blends)
            .map(|(n, b)| {
                let m = b.linear.try_inverse().map_or(b.linear, |inv| inv.transpose());
                let t = m * n;
                let len = t.norm();
                if len > 0.0 {
                    t / len
                } else {
                    *n
                }
            })
            .collect()
    });
    mesh.with_positions(vertices)?.with_normals(normals)
}

/// Pose normalization: maps a posed mesh back to the rest pose by inverting
/// every vertex's blended transform.
pub fn unskin(mesh: &Mesh, weights: &SkinWeights, skeleton: &Skeleton, pose: &Pose) -> Result<Mesh> {
    let blends = blended_transforms(mesh.vertex_count(), weights, skeleton, pose)?;
    let vertices = unskin_points(mesh.vertices(), &blends)?;
    mesh.with_positions(vertices)
}

pub fn unskin_points(points: &[Point3<f64>], blends: &[BlendedTransform]) -> Result<Vec<Point3<f64>>> {
    points
        .iter()
        .zip(blends)
        .enumerate()
        .map(|(v, (p, b))| {
            let det = b.linear.determinant();
            if !(det.abs() > SINGULAR_DET) {
                return Err(Error::SingularTransform { vertex: v, det });
            }
            let inv = b
                .linear
                .try_inverse()
                .ok_or(Error::SingularTransform { vertex: v, det })?;
            Ok(Point3::from(inv * (p.coords - b.translation)))
        })
        .collect()
}

/// A skeleton with a pose per frame, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub frame_rate: f64,
    pub skeleton: Skeleton,
    pub frames: Vec<Pose>,
}

#[derive(Serialize, Deserialize)]
struct PoseDoc {
    root_translation: [f64; 3],
    /// `[w, x, y, z]` per joint.
    rotations: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bone_scales: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SequenceDoc {
    frame_rate: f64,
    skeleton: Skeleton,
    frames: Vec<PoseDoc>,
}

impl PoseSequence {
    pub fn load(path: &Path) -> Result<Self> {
        let doc: SequenceDoc = read_json(path)?;
        let frames = doc
            .frames
            .into_iter()
            .enumerate()
            .map(|(f, p)| {
                let rotations = p
                    .rotations
                    .iter()
                    .map(|&[w, x, y, z]| {
                        let q = Quaternion::new(w, x, y, z);
                        if (q.norm() - 1.0).abs() > QUATERNION_TOLERANCE {
                            Err(Error::InvalidArgument(format!(
                                "frame {f}: rotation is not a unit quaternion"
                            )))
                        } else {
                            Ok(UnitQuaternion::new_unchecked(q))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let pose = Pose {
                    rotations,
                    root_translation: Vector3::from(p.root_translation),
                    bone_scales: p.bone_scales,
                };
                pose.check(&doc.skeleton)?;
                Ok(pose)
            })
            .collect::<Result<Vec<_>>>()?;
        if !(doc.frame_rate > 0.0) {
            return Err(Error::InvalidArgument("frame rate must be positive".into()));
        }
        Ok(PoseSequence {
            frame_rate: doc.frame_rate,
            skeleton: doc.skeleton,
            frames,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = SequenceDoc {
            frame_rate: self.frame_rate,
            skeleton: self.skeleton.clone(),
            frames: self
                .frames
                .iter()
                .map(|p| PoseDoc {
                    root_translation: p.root_translation.into(),
                    rotations: p.rotations.iter().map(|q| [q.w, q.i, q.j, q.k]).collect(),
                    bone_scales: p.bone_scales.clone(),
                })
                .collect(),
        };
        write_json(path, &doc)
    }
}
