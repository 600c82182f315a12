//! Normal maps in template UV space: baking from the low-resolution mesh and
//! from high-resolution scans, global/tangent frame conversion, temporal
//! losses, and PNG storage.
//!
//! Texel `(x, y)` has its centre at `u = (x + 0.5) / width`,
//! `v = 1 - (y + 0.5) / height`; row 0 is the top of the image, matching how
//! OBJ texture coordinates map onto images.
//!
//! A normal is stored as `RGB = round(255 (n + 1) / 2)`. Texels without data
//! are written as `(128, 128, 128)`, and because that colour also encodes a
//! valid direction, every image is accompanied by a 1-bit mask
//! (`<stem>.mask.png`, white = data).

mod bake;
mod loss;
mod raster;
mod tangent;

pub use bake::{bake_hr, bake_lr, DEFAULT_HR_CUTOFF};
pub use loss::{temporal_loss, temporal_sequence_report, FrameLoss, TemporalLoss, TemporalLossReport};
pub use raster::UvRaster;
pub use tangent::{to_global, to_tangent};

use std::io::Cursor;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const DEFAULT_RESOLUTION: usize = 256;

/// Colour written for texels without data.
pub const NO_DATA_RGB: [u8; 3] = [128, 128, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Global,
    Tangent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    frame: Frame,
    texels: Vec<Option<Vector3<f64>>>,
}

impl NormalMap {
    pub fn empty(width: usize, height: usize, frame: Frame) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("normal map size {width}x{height}")));
        }
        Ok(NormalMap {
            width,
            height,
            frame,
            texels: vec![None; width * height],
        })
    }

    /// Builds a map from row-major texels; defined texels are renormalized.
    pub fn from_texels(width: usize, height: usize, frame: Frame, texels: Vec<Option<Vector3<f64>>>) -> Result<Self> {
        if texels.len() != width * height {
            return Err(Error::DimensionMismatch {
                context: "normal map texels",
                expected: width * height,
                actual: texels.len(),
            });
        }
        let mut map = Self::empty(width, height, frame)?;
        for (i, t) in texels.into_iter().enumerate() {
            map.set_index(i, t);
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn texels(&self) -> &[Option<Vector3<f64>>] {
        &self.texels
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Vector3<f64>> {
        self.texels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, n: Option<Vector3<f64>>) {
        self.set_index(y * self.width + x, n);
    }

    fn set_index(&mut self, i: usize, n: Option<Vector3<f64>>) {
        self.texels[i] = n.and_then(|n| {
            let len = n.norm();
            // Skip the division for vectors that are already unit length so
            // rebuilding a map from its own texels is exact.
            (len > 1e-12 && len.is_finite()).then(|| {
                if (len - 1.0).abs() <= 4.0 * f64::EPSILON {
                    n
                } else {
                    n / len
                }
            })
        });
    }

    pub fn defined_count(&self) -> usize {
        self.texels.iter().filter(|t| t.is_some()).count()
    }

    /// UV coordinate of a texel centre.
    pub fn texel_uv(&self, x: usize, y: usize) -> Vector2<f64> {
        texel_uv(self.width, self.height, x, y)
    }

    /// Texel containing `uv`, clamped to the image.
    pub fn texel_at(&self, uv: Vector2<f64>) -> (usize, usize) {
        let x = (uv.x * self.width as f64).floor().clamp(0.0, (self.width - 1) as f64) as usize;
        let y = ((1.0 - uv.y) * self.height as f64)
            .floor()
            .clamp(0.0, (self.height - 1) as f64) as usize;
        (x, y)
    }

    /// Nearest-texel lookup.
    pub fn sample(&self, uv: Vector2<f64>) -> Option<Vector3<f64>> {
        let (x, y) = self.texel_at(uv);
        self.get(x, y)
    }

    /// The map after an 8-bit encode/decode round trip.
    pub fn quantized(&self) -> NormalMap {
        let mut out = self.clone();
        for t in out.texels.iter_mut() {
            *t = t.map(|n| decode_rgb(encode_rgb(&n)));
        }
        out
    }

    /// Averages 2x2 blocks of defined texels and renormalizes. Blocks with
    /// no defined texel stay without data.
    pub fn downsampled(&self) -> Result<NormalMap> {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = NormalMap::empty(w, h, self.frame)?;
        for y in 0..h {
            for x in 0..w {
                let block = [(0, 0), (1, 0), (0, 1), (1, 1)].map(|(dx, dy)| self.get(2 * x + dx, 2 * y + dy));
                let sum: Vector3<f64> = block.iter().flatten().sum();
                out.set(x, y, block.iter().any(Option::is_some).then_some(sum));
            }
        }
        Ok(out)
    }

    /// One ring of texels around the defined region, each filled with the
    /// renormalized mean of its defined 8-neighbours. Returns the filled
    /// texels by index.
    pub fn dilation_ring(&self) -> Vec<(usize, Vector3<f64>)> {
        let mut ring = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y).is_some() {
                    continue;
                }
                let mut sum = Vector3::zeros();
                let mut count = 0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
                            continue;
                        }
                        if let Some(n) = self.get(nx as usize, ny as usize) {
                            sum += n;
                            count += 1;
                        }
                    }
                }
                let len = sum.norm();
                if count > 0 && len > 1e-12 {
                    ring.push((y * self.width + x, sum / len));
                }
            }
        }
        ring
    }

    /// RGB bytes and mask bits (row-major). With `dilate`, the ring around
    /// the defined region carries the dilated colour but remains unset in
    /// the mask, so readers still see it as having no data.
    pub fn encode(&self, dilate: bool) -> (Vec<u8>, Vec<bool>) {
        let mut rgb = Vec::with_capacity(3 * self.texels.len());
        let mut mask = Vec::with_capacity(self.texels.len());
        for t in &self.texels {
            rgb.extend_from_slice(&t.map_or(NO_DATA_RGB, |n| encode_rgb(&n)));
            mask.push(t.is_some());
        }
        if dilate {
            for (i, n) in self.dilation_ring() {
                rgb[3 * i..3 * i + 3].copy_from_slice(&encode_rgb(&n));
            }
        }
        (rgb, mask)
    }

    /// Inverse of [`NormalMap::encode`].
    pub fn decode(width: usize, height: usize, frame: Frame, rgb: &[u8], mask: &[bool]) -> Result<Self> {
        if rgb.len() != 3 * width * height || mask.len() != width * height {
            return Err(Error::Format(format!(
                "normal map buffers do not match size {width}x{height}"
            )));
        }
        let texels = mask
            .iter()
            .zip(rgb.chunks_exact(3))
            .map(|(&m, c)| m.then(|| decode_rgb([c[0], c[1], c[2]])))
            .collect();
        Self::from_texels(width, height, frame, texels)
    }

    /// Writes `path` (RGB) and its mask next to it.
    pub fn save_png(&self, path: &Path, dilate: bool) -> Result<()> {
        let (rgb, mask) = self.encode(dilate);
        let (w, h) = (self.width as u32, self.height as u32);
        write_atomic(
            path,
            &encode_png(w, h, png::ColorType::Rgb, png::BitDepth::Eight, &rgb)?,
        )?;
        write_atomic(
            &mask_path(path),
            &encode_png(
                w,
                h,
                png::ColorType::Grayscale,
                png::BitDepth::One,
                &pack_bits(&mask, self.width),
            )?,
        )
    }

    /// Reads an image written by [`NormalMap::save_png`]. A missing mask is
    /// an error.
    pub fn load_png(path: &Path, frame: Frame) -> Result<Self> {
        let (w, h, rgb) = decode_png(path, 3)?;
        let mask_file = mask_path(path);
        let (mw, mh, mask) = decode_png(&mask_file, 1)?;
        if (mw, mh) != (w, h) {
            return Err(Error::Format(format!(
                "{}: mask size {mw}x{mh} differs from image size {w}x{h}",
                mask_file.display()
            )));
        }
        let mask: Vec<bool> = mask.iter().map(|&b| b >= 128).collect();
        Self::decode(w, h, frame, &rgb, &mask)
    }
}

pub(crate) fn texel_uv(width: usize, height: usize, x: usize, y: usize) -> Vector2<f64> {
    Vector2::new((x as f64 + 0.5) / width as f64, 1.0 - (y as f64 + 0.5) / height as f64)
}

pub fn encode_rgb(n: &Vector3<f64>) -> [u8; 3] {
    n.map(|c| (255.0 * (c.clamp(-1.0, 1.0) + 1.0) / 2.0).round() as u8)
        .into()
}

/// Decoded colour, renormalized.
pub fn decode_rgb(c: [u8; 3]) -> Vector3<f64> {
    let n = Vector3::from(c.map(|b| 2.0 * b as f64 / 255.0 - 1.0));
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        Vector3::z()
    }
}

/// Angle between two directions in degrees.
pub fn angle_degrees(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn mask_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.mask.png"))
}

fn pack_bits(mask: &[bool], width: usize) -> Vec<u8> {
    let stride = width.div_ceil(8);
    let mut out = vec![0u8; stride * (mask.len() / width)];
    for (i, &m) in mask.iter().enumerate() {
        if m {
            let (y, x) = (i / width, i % width);
            out[y * stride + x / 8] |= 0x80 >> (x % 8);
        }
    }
    out
}

fn encode_png(w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let fail = |e: png::EncodingError| Error::Format(format!("png encoding: {e}"));
    let mut encoder = png::Encoder::new(&mut bytes, w, h);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header().map_err(fail)?;
    writer.write_image_data(data).map_err(fail)?;
    writer.finish().map_err(fail)?;
    Ok(bytes)
}

/// Decodes an 8-bit image with `channels` channels (1-bit grey is expanded).
fn decode_png(path: &Path, channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let fail = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut decoder = png::Decoder::new(Cursor::new(&bytes[..]));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(fail)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(fail)?;
    let got = info.color_type.samples();
    if got != channels || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: expected {channels}-channel 8-bit image, found {:?} {:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h * channels);
    for row in buf.chunks(info.line_size).take(h) {
        let row = &row[..w * channels];
        // Expanded 1-bit grey comes out as 0/1 in some decoder versions.
        if channels == 1 {
            data.extend(row.iter().map(|&b| if b > 0 { 255 } else { 0 }));
        } else {
            data.extend_from_slice(row);
        }
    }
    Ok((w, h, data))
}
