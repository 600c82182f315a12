//! Linear pose-to-shape regression `λ = F Θ`, with `F = Λ Θ⁺` fitted by the
//! Moore-Penrose pseudoinverse.
//!
//! Control vector layout for frame `t`, in order:
//!
//! 1. for each selected joint, its rotation quaternion `(w, x, y, z)` with
//!    `w >= 0`;
//! 2. root velocity (3 entries, metres per frame): central difference,
//!    one-sided at the first and last frame;
//! 3. root acceleration (3 entries, metres per frame²): central second
//!    difference, the neighbouring one-sided stencil at the ends, zero for
//!    sequences shorter than three frames;
//! 4. shape coefficients of frames `t-1, ..., t-h` (`h * k` entries);
//! 5. a constant bias entry `1`.
//!
//! With history `h > 0` the first `h` frames have no complete history and
//! produce no control vector.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{read_arrays, write_arrays};
use crate::linalg::thin_svd;
use crate::skinning::Pose;

const FILE_KIND: &str = "linear-regressor";

/// Relative singular-value cutoff of the pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlLayout {
    /// Selected joint indices, in layout order.
    pub joints: Vec<usize>,
    /// Number of previous frames whose coefficients are appended.
    pub history: usize,
    /// Coefficients per history frame (0 when `history` is 0).
    pub coefficients: usize,
}

impl ControlLayout {
    pub fn new(joints: Vec<usize>, history: usize, coefficients: usize) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Config("joint mask must select at least one joint".into()));
        }
        Ok(ControlLayout {
            joints,
            history,
            coefficients: if history == 0 { 0 } else { coefficients },
        })
    }

    pub fn dim(&self) -> usize {
        4 * self.joints.len() + 6 + self.history * self.coefficients + 1
    }

    pub fn velocity_offset(&self) -> usize {
        4 * self.joints.len()
    }

    pub fn acceleration_offset(&self) -> usize {
        self.velocity_offset() + 3
    }

    pub fn history_offset(&self) -> usize {
        self.velocity_offset() + 6
    }

    pub fn bias_index(&self) -> usize {
        self.dim() - 1
    }
}

/// Control vectors of a sequence as matrix columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    pub layout: ControlLayout,
    /// Source frame index of each column.
    pub frames: Vec<usize>,
    pub vectors: DMatrix<f64>,
}

/// Root velocity and acceleration per frame by finite differences.
pub fn root_derivatives(roots: &[Vector3<f64>]) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let n = roots.len();
    (0..n)
        .map(|t| {
            let vel = if n < 2 {
                Vector3::zeros()
            } else if t == 0 {
                roots[1] - roots[0]
            } else if t == n - 1 {
                roots[n - 1] - roots[n - 2]
            } else {
                (roots[t + 1] - roots[t - 1]) / 2.0
            };
            let acc = if n < 3 {
                Vector3::zeros()
            } else {
                let c = t.clamp(1, n - 2);
                roots[c + 1] - 2.0 * roots[c] + roots[c - 1]
            };
            (vel, acc)
        })
        .collect()
}

/// Builds the control vectors of a pose sequence. `coefficients` supplies
/// the per-frame shape coefficients used as history and is required when
/// `layout.history > 0`.
pub fn build_control_sequence(
    poses: &[Pose],
    layout: &ControlLayout,
    coefficients: Option<&[DVector<f64>]>,
) -> Result<ControlSequence> {
    let n = poses.len();
    let h = layout.history;
    if n < h + 2 {
        return Err(Error::InvalidArgument(format!(
            "control sequence needs at least {} frames, got {n}",
            h + 2
        )));
    }
    for pose in poses {
        if let Some(&j) = layout.joints.iter().find(|&&j| j >= pose.rotations.len()) {
            return Err(Error::InvalidArgument(format!(
                "joint mask selects joint {j} but poses have {}",
                pose.rotations.len()
            )));
        }
    }
    let history = if h > 0 {
        let c = coefficients.ok_or_else(|| Error::InvalidArgument("shape history requires coefficients".into()))?;
        if c.len() != n {
            return Err(Error::DimensionMismatch {
                context: "history coefficients",
                expected: n,
                actual: c.len(),
            });
        }
        if let Some(bad) = c.iter().find(|l| l.len() != layout.coefficients) {
            return Err(Error::DimensionMismatch {
                context: "history coefficient length",
                expected: layout.coefficients,
                actual: bad.len(),
            });
        }
        Some(c)
    } else {
        None
    };

    let roots: Vec<Vector3<f64>> = poses.iter().map(|p| p.root_translation).collect();
    let derivatives = root_derivatives(&roots);
    let frames: Vec<usize> = (h..n).collect();
    let mut vectors = DMatrix::<f64>::zeros(layout.dim(), frames.len());
    for (col, &t) in frames.iter().enumerate() {
        let mut out = vectors.column_mut(col);
        let mut i = 0;
        for &j in &layout.joints {
            let q = poses[t].rotations[j].into_inner();
            let s = if q.w < 0.0 { -1.0 } else { 1.0 };
            for v in [q.w, q.i, q.j, q.k] {
                out[i] = s * v;
                i += 1;
            }
        }
        let (vel, acc) = derivatives[t];
        for v in vel.iter().chain(acc.iter()) {
            out[i] = *v;
            i += 1;
        }
        if let Some(c) = history {
            for back in 1..=h {
                for &v in c[t - back].iter() {
                    out[i] = v;
                    i += 1;
                }
            }
        }
        out[i] = 1.0;
    }
    Ok(ControlSequence {
        layout: layout.clone(),
        frames,
        vectors,
    })
}

/// Result of a least-squares fit `F = Λ Θ⁺`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub f: DMatrix<f64>,
    /// Numerical rank of `Θ` under the pseudoinverse cutoff.
    pub rank: usize,
    /// `Θ` had no singular value above zero (e.g. all entries zero).
    pub degenerate: bool,
}

/// Minimum-norm least-squares solution of `F Θ ≈ Λ`; frames are columns.
pub fn fit_linear(theta: &DMatrix<f64>, lambda: &DMatrix<f64>) -> Result<LinearFit> {
    if theta.ncols() == 0 {
        return Err(Error::InvalidArgument("regression needs at least one frame".into()));
    }
    if theta.ncols() != lambda.ncols() {
        return Err(Error::DimensionMismatch {
            context: "regression frames",
            expected: theta.ncols(),
            actual: lambda.ncols(),
        });
    }
    let pinv = pseudoinverse(theta)?;
    let f = lambda * &pinv.matrix;
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::SolverFailure("regression matrix is not finite".into()));
    }
    Ok(LinearFit {
        f,
        rank: pinv.rank,
        degenerate: pinv.rank == 0,
    })
}

pub struct Pseudoinverse {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

/// Moore-Penrose pseudoinverse with singular values below
/// `PINV_CUTOFF * σ_max` treated as zero.
pub fn pseudoinverse(a: &DMatrix<f64>) -> Result<Pseudoinverse> {
    let svd = thin_svd(a)?;
    let smax = svd.s.iter().copied().fold(0.0, f64::max);
    let cutoff = PINV_CUTOFF * smax;
    let mut matrix = DMatrix::<f64>::zeros(a.ncols(), a.nrows());
    let mut rank = 0;
    for (j, &s) in svd.s.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            matrix += (svd.v.column(j) / s) * svd.u.column(j).transpose();
        }
    }
    Ok(Pseudoinverse { matrix, rank })
}

/// Linear regressor on standardized control vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearShapeRegressor {
    layout: ControlLayout,
    f: DMatrix<f64>,
    mean: DVector<f64>,
    scale: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorDiagnostics {
    pub rank: usize,
    pub degenerate: bool,
    pub training_mse: f64,
}

impl LinearShapeRegressor {
    /// Fits on control vectors (columns) and target coefficients (columns).
    /// Every entry but the bias is standardized to zero mean and unit
    /// variance over the training frames; constant entries keep scale 1.
    pub fn fit(controls: &ControlSequence, targets: &DMatrix<f64>) -> Result<(Self, RegressorDiagnostics)> {
        let theta = &controls.vectors;
        let d = controls.layout.dim();
        if theta.nrows() != d {
            return Err(Error::DimensionMismatch {
                context: "control vector length",
                expected: d,
                actual: theta.nrows(),
            });
        }
        let m = theta.ncols();
        let mut mean = DVector::<f64>::zeros(d);
        let mut scale = DVector::<f64>::from_element(d, 1.0);
        if m > 0 {
            for i in 0..d {
                if i == controls.layout.bias_index() {
                    continue;
                }
                let row = theta.row(i);
                let mu = row.mean();
                let var = row.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / m as f64;
                mean[i] = mu;
                if var.sqrt() > 1e-12 * mu.abs().max(1.0) {
                    scale[i] = var.sqrt();
                }
            }
        }
        let regressor = LinearShapeRegressor {
            layout: controls.layout.clone(),
            f: DMatrix::zeros(targets.nrows(), d),
            mean,
            scale,
        };
        let normalized = regressor.normalize(theta);
        let fit = fit_linear(&normalized, targets)?;
        let regressor = LinearShapeRegressor { f: fit.f, ..regressor };
        let training_mse = regressor.evaluate_mse(theta, targets)?;
        Ok((
            regressor,
            RegressorDiagnostics {
                rank: fit.rank,
                degenerate: fit.degenerate,
                training_mse,
            },
        ))
    }

    pub fn from_parts(layout: ControlLayout, f: DMatrix<f64>, mean: DVector<f64>, scale: DVector<f64>) -> Result<Self> {
        let d = layout.dim();
        if f.ncols() != d || mean.len() != d || scale.len() != d {
            return Err(Error::DimensionMismatch {
                context: "regressor parts",
                expected: d,
                actual: f.ncols(),
            });
        }
        if f.iter().chain(mean.iter()).chain(scale.iter()).any(|x| !x.is_finite()) || scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument(
                "regressor entries must be finite with positive scales".into(),
            ));
        }
        Ok(LinearShapeRegressor { layout, f, mean, scale })
    }

    pub fn layout(&self) -> &ControlLayout {
        &self.layout
    }

    /// Regression matrix acting on standardized control vectors.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn output_dim(&self) -> usize {
        self.f.nrows()
    }

    fn normalize(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = theta.clone();
        for mut col in out.column_iter_mut() {
            for i in 0..col.len() {
                col[i] = (col[i] - self.mean[i]) / self.scale[i];
            }
        }
        out
    }

    fn check_dim(&self, rows: usize) -> Result<()> {
        if rows != self.layout.dim() {
            return Err(Error::DimensionMismatch {
                context: "control vector length",
                expected: self.layout.dim(),
                actual: rows,
            });
        }
        Ok(())
    }

    pub fn predict(&self, control: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(control.len())?;
        let normalized = control.zip_zip_map(&self.mean, &self.scale, |x, m, s| (x - m) / s);
        Ok(&self.f * normalized)
    }

    /// Predictions for every column of `controls`.
    pub fn predict_all(&self, controls: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(controls.nrows())?;
        Ok(&self.f * self.normalize(controls))
    }

    /// Predicts a whole sequence. With shape history, the first `h` frames
    /// take their coefficients from `seed` and later frames feed back the
    /// model's own predictions.
    pub fn predict_sequence(&self, poses: &[Pose], seed: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let h = self.layout.history;
        if h == 0 {
            let controls = build_control_sequence(poses, &self.layout, None)?;
            let out = self.predict_all(&controls.vectors)?;
            return Ok(out.column_iter().map(|c| c.into_owned()).collect());
        }
        if seed.len() < h {
            return Err(Error::InvalidArgument(format!(
                "history of {h} frames needs {h} seed coefficient vectors"
            )));
        }
        let mut coefficients: Vec<DVector<f64>> = seed[..h].to_vec();
        coefficients.resize(poses.len(), DVector::zeros(self.layout.coefficients));
        for t in h..poses.len() {
            // Derivatives depend on neighbouring frames, so build over the
            // full pose sequence and take column t - h.
            let controls = build_control_sequence(poses, &self.layout, Some(&coefficients))?;
            coefficients[t] = self.predict(&controls.vectors.column(t - h).into_owned())?;
        }
        Ok(coefficients)
    }

    /// Mean over frames of the mean squared coefficient error.
    pub fn evaluate_mse(&self, controls: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
        let predicted = self.predict_all(controls)?;
        mean_squared_error(&predicted, targets)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = json!({
            "outputs": self.output_dim(),
            "dim": self.layout.dim(),
            "joints": self.layout.joints,
            "history": self.layout.history,
            "history_coefficients": self.layout.coefficients,
            "matrix_layout": "column-major outputs x dim, acts on standardized controls",
        });
        write_arrays(
            path,
            FILE_KIND,
            meta,
            &[
                ("matrix", self.f.as_slice()),
                ("control_mean", self.mean.as_slice()),
                ("control_scale", self.scale.as_slice()),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = read_arrays(path, FILE_KIND)?;
        let outputs = file.meta_usize("outputs")?;
        let joints: Vec<usize> = file
            .meta
            .get("joints")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| Error::Format("header field 'joints' missing".into()))?;
        let layout = ControlLayout::new(
            joints,
            file.meta_usize("history")?,
            file.meta_usize("history_coefficients")?,
        )?;
        let d = layout.dim();
        if file.meta_usize("dim")? != d {
            return Err(Error::Format("control dimension disagrees with layout".into()));
        }
        let f = file.take("matrix")?;
        if f.len() != outputs * d {
            return Err(Error::Format("regression matrix size disagrees with header".into()));
        }
        let mean = DVector::from_vec(file.take("control_mean")?);
        let scale = DVector::from_vec(file.take("control_scale")?);
        Self::from_parts(layout, DMatrix::from_vec(outputs, d, f), mean, scale)
    }
}

/// Mean over frames (columns) of the per-frame mean squared error over
/// coefficient dimensions (rows).
pub fn mean_squared_error(predicted: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
    if predicted.shape() != targets.shape() {
        return Err(Error::DimensionMismatch {
            context: "prediction shape",
            expected: targets.len(),
            actual: predicted.len(),
        });
    }
    let (k, m) = targets.shape();
    if m == 0 || k == 0 {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let total: f64 = (0..m)
        .map(|j| (predicted.column(j) - targets.column(j)).norm_squared() / k as f64)
        .sum();
    Ok(total / m as f64)
}
