use nalgebra::Vector2;

use super::texel_uv;
use crate::error::{Error, Result};
use crate::mesh::{barycentric_2d, Mesh, UvLayout};

/// Texel centres on an edge shared by two triangles belong to the first.
const EDGE_TOLERANCE: f64 = 1e-9;

/// For every texel centre, the UV triangle that covers it and the centre's
/// barycentric coordinates in that triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct UvRaster {
    width: usize,
    height: usize,
    hits: Vec<Option<(usize, [f64; 3])>>,
}

impl UvRaster {
    /// Rasterizes the atlas of `mesh`. Zero-area UV triangles cover nothing.
    /// Two triangles both strictly containing a texel centre make the atlas
    /// invalid.
    pub fn new(mesh: &Mesh, width: usize, height: usize) -> Result<Self> {
        let uv = mesh
            .uvs()
            .ok_or_else(|| Error::InvalidAtlas("mesh has no texture coordinates".into()))?;
        Self::from_layout(uv, width, height)
    }

    pub fn from_layout(uv: &UvLayout, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("raster size {width}x{height}")));
        }
        let mut hits: Vec<Option<(usize, [f64; 3])>> = vec![None; width * height];
        for (f, tri) in uv.faces.iter().enumerate() {
            let [a, b, c] = tri.map(|i| uv.coords[i]);
            let area = (b - a).perp(&(c - a));
            if area.abs() < 1e-14 {
                continue;
            }
            let lo = a.inf(&b).inf(&c);
            let hi = a.sup(&b).sup(&c);
            let x0 = texel_floor(lo.x * width as f64, width);
            let x1 = texel_floor(hi.x * width as f64, width);
            let y0 = texel_floor((1.0 - hi.y) * height as f64, height);
            let y1 = texel_floor((1.0 - lo.y) * height as f64, height);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = texel_uv(width, height, x, y);
                    let Some(bary) = barycentric_2d(p, a, b, c) else {
                        continue;
                    };
                    if bary.iter().any(|&w| w < -EDGE_TOLERANCE) {
                        continue;
                    }
                    let slot = &mut hits[y * width + x];
                    match slot {
                        None => *slot = Some((f, clamp_barycentric(bary))),
                        Some((g, old)) => {
                            let strictly = |w: &[f64; 3]| w.iter().all(|&v| v > EDGE_TOLERANCE);
                            if strictly(&bary) && strictly(old) {
                                return Err(Error::InvalidAtlas(format!(
                                    "UV triangles {g} and {f} overlap at texel ({x}, {y})"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(UvRaster { width, height, hits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn hits(&self) -> &[Option<(usize, [f64; 3])>] {
        &self.hits
    }

    pub fn hit(&self, x: usize, y: usize) -> Option<(usize, [f64; 3])> {
        self.hits[y * self.width + x]
    }

    pub fn covered_count(&self) -> usize {
        self.hits.iter().filter(|h| h.is_some()).count()
    }

    pub fn texel_uv(&self, x: usize, y: usize) -> Vector2<f64> {
        texel_uv(self.width, self.height, x, y)
    }
}

fn texel_floor(t: f64, n: usize) -> usize {
    t.floor().clamp(0.0, (n - 1) as f64) as usize
}

fn clamp_barycentric(b: [f64; 3]) -> [f64; 3] {
    let c = b.map(|w| w.max(0.0));
    let s: f64 = c.iter().sum();
    c.map(|w| w / s)
}
