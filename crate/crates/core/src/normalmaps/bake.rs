use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::{Frame, NormalMap, UvRaster};
use crate::error::{Error, Result};
use crate::mesh::{compute_vertex_normals, Mesh};
use crate::spatial::{PointIndex, SurfaceIndex};

/// Default distance beyond which a scan contributes no data (metres).
pub const DEFAULT_HR_CUTOFF: f64 = 0.02;

/// Stored vertex normals, otherwise area-weighted ones (`None` for vertices
/// without incident area).
fn vertex_normals(mesh: &Mesh) -> Vec<Option<Vector3<f64>>> {
    match mesh.normals() {
        Some(n) => n.iter().map(|v| Some(*v)).collect(),
        None => compute_vertex_normals(mesh),
    }
}

fn interpolate(normals: &[Option<Vector3<f64>>], face: [usize; 3], bary: [f64; 3]) -> Option<Vector3<f64>> {
    let mut n = Vector3::zeros();
    for (i, w) in face.iter().zip(bary) {
        n += normals[*i]? * w;
    }
    let len = n.norm();
    (len > 1e-12).then(|| n / len)
}

fn bake_with<F>(raster: &UvRaster, texel: F) -> Result<NormalMap>
where
    F: Fn(usize, [f64; 3]) -> Option<Vector3<f64>> + Sync,
{
    let texels = raster
        .hits()
        .par_iter()
        .map(|hit| hit.and_then(|(f, b)| texel(f, b)))
        .collect();
    NormalMap::from_texels(raster.width(), raster.height(), Frame::Global, texels)
}

/// Bakes the mesh's own interpolated vertex normals into its UV atlas.
/// Vertex normals are computed when the mesh carries none.
pub fn bake_lr(mesh: &Mesh, width: usize, height: usize) -> Result<NormalMap> {
    let raster = UvRaster::new(mesh, width, height)?;
    let normals = vertex_normals(mesh);
    bake_with(&raster, |f, b| interpolate(&normals, mesh.faces()[f], b))
}

/// Bakes scan normals into the UV atlas of `reconstruction`. Each texel's
/// point on the reconstruction is mapped to the closest scan point; the
/// scan's interpolated normal there is stored if it lies within `cutoff`.
/// Scans without faces must carry per-point normals.
pub fn bake_hr(scan: &Mesh, reconstruction: &Mesh, width: usize, height: usize, cutoff: f64) -> Result<NormalMap> {
    if scan.vertex_count() == 0 {
        return Err(Error::InvalidArgument("scan is empty".into()));
    }
    if !(cutoff > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "projection cutoff must be positive, got {cutoff}"
        )));
    }
    let raster = UvRaster::new(reconstruction, width, height)?;
    let scan_normals = vertex_normals(scan);
    let verts = reconstruction.vertices();
    let surface_point = |f: usize, b: [f64; 3]| -> Point3<f64> {
        let [i, j, k] = reconstruction.faces()[f];
        Point3::from(verts[i].coords * b[0] + verts[j].coords * b[1] + verts[k].coords * b[2])
    };
    if let Some(index) = SurfaceIndex::new(scan) {
        bake_with(&raster, |f, b| {
            let hit = index.closest_point(&surface_point(f, b));
            if hit.distance() > cutoff {
                return None;
            }
            interpolate(&scan_normals, scan.faces()[hit.face], hit.barycentric)
                .or_else(|| scan.face_area_normal(hit.face).try_normalize(0.0))
        })
    } else {
        let normals = scan
            .normals()
            .ok_or_else(|| Error::InvalidArgument("point-cloud scans need per-point normals".into()))?;
        let index = PointIndex::new(scan.vertices());
        bake_with(&raster, |f, b| {
            let (i, d) = index.nearest(&surface_point(f, b))?;
            (d <= cutoff).then_some(normals[i])
        })
    }
}
