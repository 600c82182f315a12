use nalgebra::{Matrix3, Vector3};

use super::{Frame, NormalMap, UvRaster};
use crate::error::{Error, Result};
use crate::mesh::{compute_vertex_normals, Mesh};

/// Per-texel orthonormal frame `[T B N]` as matrix columns. `N` is the
/// interpolated vertex normal; `T` and `B` follow the UV derivatives of the
/// covering face, orthogonalized against `N`.
fn texel_frames(mesh: &Mesh, width: usize, height: usize) -> Result<Vec<Option<Matrix3<f64>>>> {
    let raster = UvRaster::new(mesh, width, height)?;
    let uv = mesh.uvs().expect("raster checked for UVs");
    let normals: Vec<Option<Vector3<f64>>> = match mesh.normals() {
        Some(n) => n.iter().map(|v| Some(*v)).collect(),
        None => compute_vertex_normals(mesh),
    };
    let face_tangents: Vec<Option<(Vector3<f64>, Vector3<f64>)>> = (0..mesh.face_count())
        .map(|f| {
            let [p0, p1, p2] = mesh.triangle(f);
            let [t0, t1, t2] = uv.faces[f].map(|i| uv.coords[i]);
            let (e1, e2) = (p1 - p0, p2 - p0);
            let (d1, d2) = (t1 - t0, t2 - t0);
            let det = d1.x * d2.y - d2.x * d1.y;
            if det.abs() < 1e-14 {
                return None;
            }
            Some(((e1 * d2.y - e2 * d1.y) / det, (e2 * d1.x - e1 * d2.x) / det))
        })
        .collect();
    Ok(raster
        .hits()
        .iter()
        .map(|hit| {
            let (f, b) = (*hit)?;
            let (t, bt) = face_tangents[f]?;
            let mut n = Vector3::zeros();
            for (i, w) in mesh.faces()[f].iter().zip(b) {
                n += normals[*i]? * w;
            }
            let n = n.try_normalize(1e-12)?;
            let t = (t - n * t.dot(&n)).try_normalize(1e-12)?;
            let handed = if n.cross(&t).dot(&bt) < 0.0 { -1.0 } else { 1.0 };
            Some(Matrix3::from_columns(&[t, n.cross(&t) * handed, n]))
        })
        .collect())
}

fn convert(map: &NormalMap, mesh: &Mesh, from: Frame, to: Frame) -> Result<NormalMap> {
    if map.frame() != from {
        return Err(Error::InvalidArgument(format!(
            "expected a {from:?} map, got {:?}",
            map.frame()
        )));
    }
    let frames = texel_frames(mesh, map.width(), map.height())?;
    let texels = map
        .texels()
        .iter()
        .zip(frames)
        .map(|(n, frame)| {
            let (n, m) = ((*n)?, frame?);
            Some(if to == Frame::Tangent { m.transpose() * n } else { m * n })
        })
        .collect();
    NormalMap::from_texels(map.width(), map.height(), to, texels)
}

/// Expresses a global-frame map in the per-texel tangent frames of `mesh`.
/// Texels on zero-area UV triangles get no data.
pub fn to_tangent(map: &NormalMap, mesh: &Mesh) -> Result<NormalMap> {
    convert(map, mesh, Frame::Global, Frame::Tangent)
}

pub fn to_global(map: &NormalMap, mesh: &Mesh) -> Result<NormalMap> {
    convert(map, mesh, Frame::Tangent, Frame::Global)
}
