//! Data and temporal losses between generated and ground-truth maps.
//!
//! Both act on decoded normal components in `[-1, 1]`:
//!
//! * `L_data`: sum over channels of `|gen_t - gt_t|`, averaged over texels
//!   defined in both images.
//! * `L_temp`: for each channel the absolute value of the summed difference
//!   `gen_t - gt_{t-1}` over all texels, then summed over channels. Texels
//!   without data count as zero vectors. Because the sum is taken before the
//!   absolute value, differences of opposite sign cancel.
//!
//! `l_temp_joint` is the variant that takes a single absolute value over the
//! sum across texels and channels together.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::NormalMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalLoss {
    pub l_data: f64,
    pub l_temp: f64,
    pub l_temp_joint: f64,
    /// Texels defined in both `gen_t` and `gt_t`.
    pub defined: usize,
}

fn check_same_shape(a: &NormalMap, b: &NormalMap) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::DimensionMismatch {
            context: "normal map size",
            expected: b.width() * b.height(),
            actual: a.width() * a.height(),
        });
    }
    if a.frame() != b.frame() {
        return Err(Error::InvalidArgument("normal maps are in different frames".into()));
    }
    Ok(())
}

/// `L_data` alone, `0` when no texel is defined in both images.
pub fn data_loss(gen: &NormalMap, gt: &NormalMap) -> Result<(f64, usize)> {
    check_same_shape(gen, gt)?;
    let mut sum = 0.0;
    let mut defined = 0;
    for (g, t) in gen.texels().iter().zip(gt.texels()) {
        if let (Some(g), Some(t)) = (g, t) {
            sum += (g - t).abs().sum();
            defined += 1;
        }
    }
    Ok((if defined == 0 { 0.0 } else { sum / defined as f64 }, defined))
}

/// Per-channel signed sums of `gen - prev` with missing texels as zero.
/// Terms are added in sorted order, so permuting texels cannot change the
/// result.
fn difference_sums(gen: &NormalMap, prev: &NormalMap) -> Result<Vector3<f64>> {
    check_same_shape(gen, prev)?;
    let zero = Vector3::zeros();
    let diffs: Vec<Vector3<f64>> = gen
        .texels()
        .iter()
        .zip(prev.texels())
        .map(|(g, p)| g.unwrap_or(zero) - p.unwrap_or(zero))
        .collect();
    let mut out = Vector3::zeros();
    let mut channel = Vec::with_capacity(diffs.len());
    for c in 0..3 {
        channel.clear();
        channel.extend(diffs.iter().map(|d| d[c]));
        channel.sort_by(f64::total_cmp);
        out[c] = channel.iter().sum();
    }
    Ok(out)
}

pub fn temporal_loss(gen: &NormalMap, gt: &NormalMap, gt_prev: &NormalMap) -> Result<TemporalLoss> {
    let (l_data, defined) = data_loss(gen, gt)?;
    let sums = difference_sums(gen, gt_prev)?;
    Ok(TemporalLoss {
        l_data,
        l_temp: sums.abs().sum(),
        l_temp_joint: sums.sum().abs(),
        defined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLoss {
    pub frame: usize,
    pub l_data: f64,
    /// `None` for the first frame, which has no predecessor.
    pub l_temp: Option<f64>,
    pub l_temp_joint: Option<f64>,
    pub defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalLossReport {
    pub frames: Vec<FrameLoss>,
    pub mean_l_data: f64,
    /// Mean over transitions; `0` for single-frame sequences.
    pub mean_l_temp: f64,
    pub mean_l_temp_joint: f64,
    pub normalization: String,
}

/// Losses for every frame of a generated sequence against ground truth.
pub fn temporal_sequence_report(generated: &[NormalMap], ground_truth: &[NormalMap]) -> Result<TemporalLossReport> {
    if generated.len() != ground_truth.len() {
        return Err(Error::DimensionMismatch {
            context: "sequence length",
            expected: ground_truth.len(),
            actual: generated.len(),
        });
    }
    if generated.is_empty() {
        return Err(Error::InvalidArgument("empty normal map sequence".into()));
    }
    let mut frames = Vec::with_capacity(generated.len());
    for (t, (gen, gt)) in generated.iter().zip(ground_truth).enumerate() {
        let row = if t == 0 {
            let (l_data, defined) = data_loss(gen, gt)?;
            FrameLoss {
                frame: 0,
                l_data,
                l_temp: None,
                l_temp_joint: None,
                defined,
            }
        } else {
            let loss = temporal_loss(gen, gt, &ground_truth[t - 1])?;
            FrameLoss {
                frame: t,
                l_data: loss.l_data,
                l_temp: Some(loss.l_temp),
                l_temp_joint: Some(loss.l_temp_joint),
                defined: loss.defined,
            }
        };
        frames.push(row);
    }
    let mean = |values: Vec<f64>| {
        if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    };
    Ok(TemporalLossReport {
        mean_l_data: mean(frames.iter().map(|f| f.l_data).collect()),
        mean_l_temp: mean(frames.iter().filter_map(|f| f.l_temp).collect()),
        mean_l_temp_joint: mean(frames.iter().filter_map(|f| f.l_temp_joint).collect()),
        normalization: "decoded normal components in [-1, 1]; l_data = mean over texels defined in both images of the \
                        summed absolute channel error; l_temp = sum over channels of |sum over texels|, missing texels \
                        as zero; l_temp_joint = |sum over texels and channels|"
            .into(),
        frames,
    })
}

impl TemporalLossReport {
    /// Plain-text table, one row per frame.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
        let mut out = format!(
            "{:>6} {:>14} {:>14} {:>14} {:>8}\n",
            "frame", "l_data", "l_temp", "l_temp_joint", "defined"
        );
        for f in &self.frames {
            let _ = writeln!(
                out,
                "{:>6} {:>14} {:>14} {:>14} {:>8}",
                f.frame,
                format!("{:.6e}", f.l_data),
                opt(f.l_temp),
                opt(f.l_temp_joint),
                f.defined
            );
        }
        let _ = writeln!(
            out,
            "{:>6} {:>14} {:>14} {:>14}",
            "mean",
            format!("{:.6e}", self.mean_l_data),
            format!("{:.6e}", self.mean_l_temp),
            format!("{:.6e}", self.mean_l_temp_joint)
        );
        out
    }
}
