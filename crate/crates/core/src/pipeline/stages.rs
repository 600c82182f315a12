use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{frame_file, write_report, PipelineConfig, Sequence};
use crate::error::{Error, Result};
use crate::io::{read_index_list, read_json, write_json};
use crate::mesh::{load_obj, save_obj, Mesh};
use crate::normalmaps::{
    angle_degrees, bake_hr, bake_lr, mask_path, temporal_sequence_report, to_tangent, Frame, NormalMap,
    TemporalLossReport,
};
use crate::registration::{register, BoundarySets, EnergyTerms};
use crate::regression::{build_control_sequence, ControlLayout, ControlSequence, LinearShapeRegressor};
use crate::skinning::{skin, unskin, Pose, PoseSequence, SkinWeights};
use crate::subspace::{restrict_offsets, ReconstructionError, SubspaceModel};
use crate::synth::{generate, SynthConfig};

pub const REGISTERED_DIR: &str = "registered";
pub const SUBSPACE_DIR: &str = "subspace";
pub const REGRESSION_DIR: &str = "regression";
pub const BAKE_DIR: &str = "bake";
pub const RETARGET_DIR: &str = "retarget";

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} worker threads: {e}")))
}

/// `frame_0000.<ext>`, `frame_0001.<ext>`, ... up to `count` files, all of
/// which must exist.
fn frame_files(dir: &Path, count: usize, extension: &str) -> Result<Vec<PathBuf>> {
    (0..count)
        .map(|t| {
            let p = frame_file(dir, t, extension);
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::io(
                    &p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "frame file not found"),
                ))
            }
        })
        .collect()
}

/// Number of consecutive `frame_XXXX.<ext>` files in `dir` starting at 0.
fn count_frame_files(dir: &Path, extension: &str) -> usize {
    (0..).take_while(|&t| frame_file(dir, t, extension).is_file()).count()
}

struct Inputs {
    template: Mesh,
    weights: SkinWeights,
    poses: PoseSequence,
}

impl Inputs {
    fn load(seq: &Sequence) -> Result<Self> {
        let m = &seq.manifest;
        let template = load_obj(seq.path(&m.template))?;
        let weights = SkinWeights::load(&seq.path(&m.skin_weights))?;
        let poses = PoseSequence::load(&seq.path(&m.poses))?;
        if poses.frames.len() != seq.frame_count() {
            return Err(Error::DimensionMismatch {
                context: "pose count",
                expected: seq.frame_count(),
                actual: poses.frames.len(),
            });
        }
        if weights.vertex_count() != template.vertex_count() {
            return Err(Error::DimensionMismatch {
                context: "skin weight count",
                expected: template.vertex_count(),
                actual: weights.vertex_count(),
            });
        }
        Ok(Inputs {
            template,
            weights,
            poses,
        })
    }

    fn posed_template(&self, t: usize) -> Result<Mesh> {
        skin(
            &self.template,
            &self.weights,
            &self.poses.skeleton,
            &self.poses.frames[t],
        )
    }
}

fn vertex_rms(a: &Mesh, b: &Mesh) -> Result<f64> {
    if a.vertex_count() != b.vertex_count() {
        return Err(Error::DimensionMismatch {
            context: "vertex count",
            expected: b.vertex_count(),
            actual: a.vertex_count(),
        });
    }
    Ok(ReconstructionError::between_points(a.vertices(), b.vertices()).rms)
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"))
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub seed: u64,
    pub frames: usize,
    pub template_vertices: usize,
    pub scan_vertices: Vec<usize>,
    /// Not serialized, so reports do not depend on where `out` is.
    #[serde(skip)]
    pub manifest: PathBuf,
}

/// Generates a synthetic sequence under `out` (manifest at
/// `out/manifest.json`).
pub fn run_synth(config: &SynthConfig, out: &Path) -> Result<SynthReport> {
    let sequence = generate(config)?;
    sequence.write(out)?;
    let report = SynthReport {
        seed: config.seed,
        frames: sequence.frames.len(),
        template_vertices: sequence.template.vertex_count(),
        scan_vertices: sequence.frames.iter().map(|f| f.scan.vertex_count()).collect(),
        manifest: out.join("manifest.json"),
    };
    let mut table = format!(
        "seed {}\nframes {}\ntemplate vertices {}\n",
        report.seed, report.frames, report.template_vertices
    );
    let _ = writeln!(table, "{:>6} {:>14}", "frame", "scan_vertices");
    for (t, v) in report.scan_vertices.iter().enumerate() {
        let _ = writeln!(table, "{t:>6} {v:>14}");
    }
    write_report(out, "synth_report", &table, &report)?;
    Ok(report)
}

// ------------------------------------------------------------- register

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterFrame {
    pub frame: usize,
    pub iterations: usize,
    pub initial_energy: EnergyTerms,
    pub energy: EnergyTerms,
    pub correspondences: usize,
    /// Accepted energies never increased.
    pub monotone: bool,
    pub rms_to_ground_truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterReport {
    pub sequential: bool,
    pub frames: Vec<RegisterFrame>,
    pub mean_rms_to_ground_truth: Option<f64>,
}

impl RegisterReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>6} {:>6} {:>14} {:>14} {:>14} {:>8} {:>9} {:>14}\n",
            "frame", "iters", "energy_start", "energy_end", "boundary_end", "corr", "monotone", "rms_gt_m"
        );
        for f in &self.frames {
            let _ = writeln!(
                out,
                "{:>6} {:>6} {:>14.6e} {:>14.6e} {:>14.6e} {:>8} {:>9} {:>14}",
                f.frame,
                f.iterations,
                f.initial_energy.total,
                f.energy.total,
                f.energy.bound,
                f.correspondences,
                f.monotone,
                opt(f.rms_to_ground_truth)
            );
        }
        let _ = writeln!(
            out,
            "mean rms to ground truth (m): {}",
            opt(self.mean_rms_to_ground_truth)
        );
        out
    }
}

fn scan_boundary(seq: &Sequence, t: usize, scan: &Mesh) -> Result<Vec<Point3<f64>>> {
    let Some(path) = &seq.manifest.frames[t].scan_boundary else {
        return Ok(Vec::new());
    };
    let path = seq.path(path);
    if path.extension().is_some_and(|e| e == "txt") {
        read_index_list(&path)?
            .into_iter()
            .map(|i| {
                scan.vertices().get(i).copied().ok_or_else(|| {
                    Error::Format(format!(
                        "scan boundary index {i} out of range ({} scan vertices)",
                        scan.vertex_count()
                    ))
                })
            })
            .collect()
    } else {
        Ok(load_obj(&path)?.vertices().to_vec())
    }
}

/// Registers the template to every scan and writes
/// `out/registered/frame_XXXX.obj`. Each frame starts from the template
/// skinned to the frame's pose, or, in sequential mode, from the previous
/// frame's registration.
pub fn run_register(seq: &Sequence, config: &PipelineConfig, jobs: usize, out: &Path) -> Result<RegisterReport> {
    let inputs = Inputs::load(seq)?;
    let template_boundary = match &seq.manifest.template_boundary {
        Some(p) => read_index_list(&seq.path(p))?,
        None => Vec::new(),
    };
    let dir = out.join(REGISTERED_DIR);
    let register_frame = |t: usize, start: Mesh| -> Result<(Mesh, RegisterFrame)> {
        let entry = &seq.manifest.frames[t];
        let scan = load_obj(seq.path(&entry.scan))?;
        let boundaries = BoundarySets {
            template: template_boundary.clone(),
            scan: scan_boundary(seq, t, &scan)?,
        };
        let result = register(&start, &scan, &boundaries, None, &config.registration)?;
        let rms_to_ground_truth = match &entry.ground_truth {
            Some(p) => Some(vertex_rms(&result.mesh, &load_obj(seq.path(p))?)?),
            None => None,
        };
        save_obj(&result.mesh, frame_file(&dir, t, "obj"))?;
        let row = RegisterFrame {
            frame: t,
            iterations: result.iterations,
            initial_energy: result.initial_energy,
            energy: result.energy,
            correspondences: result.correspondences,
            monotone: result.energy_history.windows(2).all(|w| w[1] <= w[0]),
            rms_to_ground_truth,
        };
        Ok((result.mesh, row))
    };

    let n = seq.frame_count();
    let frames = if config.register.sequential {
        let mut rows = Vec::with_capacity(n);
        let mut previous: Option<Mesh> = None;
        for t in 0..n {
            let start = match previous.take() {
                Some(m) => m,
                None => inputs.posed_template(t)?,
            };
            let (mesh, row) = register_frame(t, start)?;
            previous = Some(mesh);
            rows.push(row);
        }
        rows
    } else {
        thread_pool(jobs)?.install(|| {
            (0..n)
                .into_par_iter()
                .map(|t| register_frame(t, inputs.posed_template(t)?).map(|(_, row)| row))
                .collect::<Result<Vec<_>>>()
        })?
    };
    let report = RegisterReport {
        sequential: config.register.sequential,
        mean_rms_to_ground_truth: if frames.iter().all(|f| f.rms_to_ground_truth.is_some()) {
            mean(frames.iter().filter_map(|f| f.rms_to_ground_truth))
        } else {
            None
        },
        frames,
    };
    write_report(out, "register_report", &report.to_table(), &report)?;
    Ok(report)
}

// --------------------------------------------------------- fit-subspace

/// Shape coefficients, one vector per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFile {
    pub k: usize,
    pub frames: Vec<Vec<f64>>,
}

impl CoefficientFile {
    pub fn new(vectors: &[DVector<f64>]) -> Self {
        CoefficientFile {
            k: vectors.first().map_or(0, |v| v.len()),
            frames: vectors.iter().map(|v| v.as_slice().to_vec()).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CoefficientFile = read_json(path)?;
        if let Some(bad) = file.frames.iter().position(|f| f.len() != file.k) {
            return Err(Error::Format(format!(
                "{}: frame {bad} does not have {} coefficients",
                path.display(),
                file.k
            )));
        }
        Ok(file)
    }

    pub fn vectors(&self) -> Vec<DVector<f64>> {
        self.frames.iter().map(|f| DVector::from_column_slice(f)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceFrame {
    pub frame: usize,
    /// Pose-normalized shape vs its projection (metres).
    pub error: ReconstructionError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceReport {
    pub k: usize,
    pub vertices: usize,
    pub singular_values: Vec<f64>,
    pub frames: Vec<SubspaceFrame>,
    pub mean_rms: f64,
    pub max_error: f64,
}

impl SubspaceReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "k {}\nvertices {}\n{:>6} {:>14} {:>14}\n",
            self.k, self.vertices, "frame", "rms_m", "max_m"
        );
        for f in &self.frames {
            let _ = writeln!(out, "{:>6} {:>14.6e} {:>14.6e}", f.frame, f.error.rms, f.error.max);
        }
        let _ = writeln!(out, "{:>6} {:>14.6e} {:>14.6e}", "all", self.mean_rms, self.max_error);
        out
    }
}

/// Pose-normalizes the registrations in `registered`, fits the subspace and
/// writes `out/subspace/{model.bin, coefficients.json, reconstructed/}`.
pub fn run_fit_subspace(
    seq: &Sequence,
    config: &PipelineConfig,
    registered: &Path,
    out: &Path,
) -> Result<SubspaceReport> {
    let inputs = Inputs::load(seq)?;
    let n = seq.frame_count();
    let files = frame_files(registered, n, "obj")?;
    let normalized = files
        .iter()
        .zip(&inputs.poses.frames)
        .map(|(path, pose)| unskin(&load_obj(path)?, &inputs.weights, &inputs.poses.skeleton, pose))
        .collect::<Result<Vec<_>>>()?;
    let all = n.min(3 * inputs.template.vertex_count());
    let k = config.subspace.components.unwrap_or(all).min(all);
    let model = SubspaceModel::fit(&normalized, k)?;

    let dir = out.join(SUBSPACE_DIR);
    let mut coefficients = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    for (t, shape) in normalized.iter().enumerate() {
        let c = model.project(shape)?;
        let rebuilt = model.synthesize_flat(&c)?;
        frames.push(SubspaceFrame {
            frame: t,
            error: ReconstructionError::between(&shape.flat_positions(), rebuilt.as_slice()),
        });
        let posed = model.reconstruct(&c, &inputs.poses.frames[t], &inputs.weights, &inputs.poses.skeleton)?;
        save_obj(&posed, frame_file(&dir.join("reconstructed"), t, "obj"))?;
        coefficients.push(c);
    }
    model.save(&dir.join("model.bin"))?;
    write_json(&dir.join("coefficients.json"), &CoefficientFile::new(&coefficients))?;
    let report = SubspaceReport {
        k,
        vertices: model.vertex_count(),
        singular_values: model.singular_values().to_vec(),
        mean_rms: mean(frames.iter().map(|f| f.error.rms)).unwrap_or(0.0),
        max_error: frames.iter().map(|f| f.error.max).fold(0.0, f64::max),
        frames,
    };
    write_report(out, "fit_subspace_report", &report.to_table(), &report)?;
    Ok(report)
}

// -------------------------------------------------------------- regress

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegressModes {
    pub fit: bool,
    pub predict: bool,
    pub eval: bool,
}

impl RegressModes {
    pub const ALL: RegressModes = RegressModes {
        fit: true,
        predict: true,
        eval: true,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub joints: Vec<String>,
    pub history: usize,
    pub train_frames: usize,
    pub holdout_frames: usize,
    pub rank: usize,
    pub degenerate: bool,
    /// Coefficient-space MSE with true coefficients as history.
    pub training_mse: f64,
    pub holdout_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFrame {
    pub frame: usize,
    pub holdout: bool,
    pub mse: f64,
    /// Posed reconstruction from predicted vs target coefficients (metres).
    pub vertex_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub frames: Vec<EvalFrame>,
    pub mse: f64,
    pub vertex_rms: f64,
    pub holdout_mse: Option<f64>,
    pub holdout_vertex_rms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegressReport {
    pub fit: Option<FitSummary>,
    pub predicted_frames: Option<usize>,
    pub eval: Option<EvalSummary>,
}

impl RegressReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        if let Some(f) = &self.fit {
            let _ = writeln!(out, "joints {}", f.joints.join(","));
            let _ = writeln!(out, "history {}", f.history);
            let _ = writeln!(
                out,
                "train frames {}  holdout frames {}",
                f.train_frames, f.holdout_frames
            );
            let _ = writeln!(out, "rank {}  degenerate {}", f.rank, f.degenerate);
            let _ = writeln!(
                out,
                "training mse {:.6e}  holdout mse {}",
                f.training_mse,
                opt(f.holdout_mse)
            );
        }
        if let Some(n) = self.predicted_frames {
            let _ = writeln!(out, "predicted frames {n}");
        }
        if let Some(e) = &self.eval {
            let _ = writeln!(
                out,
                "{:>6} {:>8} {:>14} {:>14}",
                "frame", "holdout", "mse", "vertex_rms_m"
            );
            for f in &e.frames {
                let _ = writeln!(
                    out,
                    "{:>6} {:>8} {:>14.6e} {:>14.6e}",
                    f.frame, f.holdout, f.mse, f.vertex_rms
                );
            }
            let _ = writeln!(out, "{:>6} {:>8} {:>14.6e} {:>14.6e}", "all", "", e.mse, e.vertex_rms);
            let _ = writeln!(
                out,
                "{:>6} {:>8} {:>14} {:>14}",
                "hold",
                "",
                opt(e.holdout_mse),
                opt(e.holdout_vertex_rms)
            );
        }
        out
    }
}

fn is_holdout(t: usize, every: usize) -> bool {
    every > 0 && (t + 1) % every == 0
}

fn select_columns(controls: &ControlSequence, keep: impl Fn(usize) -> bool) -> ControlSequence {
    let cols: Vec<usize> = (0..controls.frames.len())
        .filter(|&c| keep(controls.frames[c]))
        .collect();
    ControlSequence {
        layout: controls.layout.clone(),
        frames: cols.iter().map(|&c| controls.frames[c]).collect(),
        vectors: controls.vectors.select_columns(&cols),
    }
}

fn targets_for(frames: &[usize], coefficients: &[DVector<f64>], k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, frames.len());
    for (c, &t) in frames.iter().enumerate() {
        m.set_column(c, &coefficients[t]);
    }
    m
}

/// Fits, applies and/or evaluates the pose-to-shape regressor against the
/// coefficients from `fit-subspace`. `poses` overrides the manifest's pose
/// sequence for prediction.
pub fn run_regress(
    seq: &Sequence,
    config: &PipelineConfig,
    modes: RegressModes,
    poses: Option<&Path>,
    out: &Path,
) -> Result<RegressReport> {
    let inputs = Inputs::load(seq)?;
    let subspace = out.join(SUBSPACE_DIR);
    let model = SubspaceModel::load(&subspace.join("model.bin"))?;
    let coefficients = CoefficientFile::load(&subspace.join("coefficients.json"))?.vectors();
    if coefficients.len() != seq.frame_count() {
        return Err(Error::DimensionMismatch {
            context: "coefficient frames",
            expected: seq.frame_count(),
            actual: coefficients.len(),
        });
    }
    let dir = out.join(REGRESSION_DIR);
    let regressor_path = dir.join("regressor.bin");
    let settings = &config.regression;
    let skeleton = &inputs.poses.skeleton;
    let mut report = RegressReport::default();

    if modes.fit {
        let joints = match &settings.joints {
            Some(names) => names
                .iter()
                .map(|n| {
                    skeleton
                        .joint_index(n)
                        .ok_or_else(|| Error::Config(format!("regression: unknown joint '{n}'")))
                })
                .collect::<Result<Vec<_>>>()?,
            None => (0..skeleton.joint_count()).collect(),
        };
        let layout = ControlLayout::new(joints.clone(), settings.history, model.k())?;
        let controls = build_control_sequence(&inputs.poses.frames, &layout, Some(&coefficients))?;
        let train = select_columns(&controls, |t| !is_holdout(t, settings.holdout_every));
        let holdout = select_columns(&controls, |t| is_holdout(t, settings.holdout_every));
        if train.frames.is_empty() {
            return Err(Error::InvalidArgument(
                "no training frames left after the hold-out split".into(),
            ));
        }
        let (regressor, diagnostics) =
            LinearShapeRegressor::fit(&train, &targets_for(&train.frames, &coefficients, model.k()))?;
        let holdout_mse = if holdout.frames.is_empty() {
            None
        } else {
            Some(regressor.evaluate_mse(
                &holdout.vectors,
                &targets_for(&holdout.frames, &coefficients, model.k()),
            )?)
        };
        regressor.save(&regressor_path)?;
        report.fit = Some(FitSummary {
            joints: joints.iter().map(|&j| skeleton.joints()[j].name.clone()).collect(),
            history: settings.history,
            train_frames: train.frames.len(),
            holdout_frames: holdout.frames.len(),
            rank: diagnostics.rank,
            degenerate: diagnostics.degenerate,
            training_mse: diagnostics.training_mse,
            holdout_mse,
        });
    }

    if modes.predict || modes.eval {
        let regressor = LinearShapeRegressor::load(&regressor_path)?;
        if regressor.output_dim() != model.k() {
            return Err(Error::DimensionMismatch {
                context: "regressor outputs",
                expected: model.k(),
                actual: regressor.output_dim(),
            });
        }
        let predict_on = |poses: &[Pose]| regressor.predict_sequence(poses, &coefficients);

        if modes.predict {
            let sequence = match poses {
                Some(p) => PoseSequence::load(p)?,
                None => inputs.poses.clone(),
            };
            let predicted = predict_on(&sequence.frames)?;
            for (t, (c, pose)) in predicted.iter().zip(&sequence.frames).enumerate() {
                let mesh = model.reconstruct(c, pose, &inputs.weights, &sequence.skeleton)?;
                save_obj(&mesh, frame_file(&dir.join("predicted"), t, "obj"))?;
            }
            write_json(
                &dir.join("predicted_coefficients.json"),
                &CoefficientFile::new(&predicted),
            )?;
            report.predicted_frames = Some(predicted.len());
        }

        if modes.eval {
            let predicted = predict_on(&inputs.poses.frames)?;
            let h = regressor.layout().history;
            let mut frames = Vec::with_capacity(predicted.len());
            for (t, (p, target)) in predicted.iter().zip(&coefficients).enumerate().skip(h) {
                let pose = &inputs.poses.frames[t];
                let a = model.reconstruct(p, pose, &inputs.weights, skeleton)?;
                let b = model.reconstruct(target, pose, &inputs.weights, skeleton)?;
                frames.push(EvalFrame {
                    frame: t,
                    holdout: is_holdout(t, settings.holdout_every),
                    mse: (p - target).norm_squared() / p.len().max(1) as f64,
                    vertex_rms: vertex_rms(&a, &b)?,
                });
            }
            let rms_of = |rows: &mut dyn Iterator<Item = &EvalFrame>| {
                let (sum, n) = rows.fold((0.0, 0usize), |(s, n), f| (s + f.vertex_rms.powi(2), n + 1));
                (n > 0).then(|| (sum / n as f64).sqrt())
            };
            report.eval = Some(EvalSummary {
                mse: mean(frames.iter().map(|f| f.mse)).unwrap_or(0.0),
                vertex_rms: rms_of(&mut frames.iter()).unwrap_or(0.0),
                holdout_mse: mean(frames.iter().filter(|f| f.holdout).map(|f| f.mse)),
                holdout_vertex_rms: rms_of(&mut frames.iter().filter(|f| f.holdout)),
                frames,
            });
        }
    }
    write_report(out, "regress_report", &report.to_table(), &report)?;
    Ok(report)
}

// ----------------------------------------------------------------- bake

/// One LR/HR training pair as consumed by the refiner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub frame: usize,
    pub lr: PathBuf,
    pub lr_mask: PathBuf,
    pub hr: PathBuf,
    pub hr_mask: PathBuf,
    /// HR target of the previous frame; absent for frame 0.
    pub previous_hr: Option<PathBuf>,
}

/// `bake/pairs.json`: paths relative to the `bake` directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub resolution: usize,
    pub frame: Frame,
    pub no_data_rgb: [u8; 3],
    pub pairs: Vec<TrainingPair>,
}

impl PairManifest {
    fn new(resolution: usize, frame: Frame, lr_dir: &str, hr_dir: &str, frames: usize) -> Self {
        let rel = |dir: &str, t: usize| frame_file(Path::new(dir), t, "png");
        PairManifest {
            resolution,
            frame,
            no_data_rgb: crate::normalmaps::NO_DATA_RGB,
            pairs: (0..frames)
                .map(|t| TrainingPair {
                    frame: t,
                    lr: rel(lr_dir, t),
                    lr_mask: mask_path(&rel(lr_dir, t)),
                    hr: rel(hr_dir, t),
                    hr_mask: mask_path(&rel(hr_dir, t)),
                    previous_hr: (t > 0).then(|| rel(hr_dir, t - 1)),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BakeFrame {
    pub frame: usize,
    pub lr_defined: usize,
    pub hr_defined: usize,
    /// Mean angle between LR and HR normals over texels defined in both.
    pub mean_angle_degrees: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BakeReport {
    pub resolution: usize,
    pub cutoff: f64,
    pub tangent: bool,
    pub frames: Vec<BakeFrame>,
}

impl BakeReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "resolution {}\ncutoff {}\n{:>6} {:>10} {:>10} {:>14}\n",
            self.resolution, self.cutoff, "frame", "lr_texels", "hr_texels", "mean_angle_deg"
        );
        for f in &self.frames {
            let _ = writeln!(
                out,
                "{:>6} {:>10} {:>10} {:>14.6}",
                f.frame, f.lr_defined, f.hr_defined, f.mean_angle_degrees
            );
        }
        out
    }
}

/// Bakes LR maps from the meshes in `meshes` and HR maps by projecting the
/// scans onto them; writes `out/bake/{lr,hr}` (plus `lr_tangent`,
/// `hr_tangent`) and the pair manifests.
pub fn run_bake(seq: &Sequence, config: &PipelineConfig, jobs: usize, meshes: &Path, out: &Path) -> Result<BakeReport> {
    let settings = &config.bake;
    let r = settings.resolution;
    let n = seq.frame_count();
    let files = frame_files(meshes, n, "obj")?;
    let dir = out.join(BAKE_DIR);
    let bake_frame = |t: usize| -> Result<BakeFrame> {
        let mesh = load_obj(&files[t])?;
        let scan = load_obj(seq.path(&seq.manifest.frames[t].scan))?;
        let lr = bake_lr(&mesh, r, r)?;
        let hr = bake_hr(&scan, &mesh, r, r, settings.cutoff)?;
        lr.save_png(&frame_file(&dir.join("lr"), t, "png"), settings.dilate)?;
        hr.save_png(&frame_file(&dir.join("hr"), t, "png"), settings.dilate)?;
        if settings.tangent {
            to_tangent(&lr, &mesh)?.save_png(&frame_file(&dir.join("lr_tangent"), t, "png"), settings.dilate)?;
            to_tangent(&hr, &mesh)?.save_png(&frame_file(&dir.join("hr_tangent"), t, "png"), settings.dilate)?;
        }
        let angles: Vec<f64> = lr
            .texels()
            .iter()
            .zip(hr.texels())
            .filter_map(|(a, b)| Some(angle_degrees(&(*a)?, &(*b)?)))
            .collect();
        Ok(BakeFrame {
            frame: t,
            lr_defined: lr.defined_count(),
            hr_defined: hr.defined_count(),
            mean_angle_degrees: mean(angles).unwrap_or(0.0),
        })
    };
    let frames = thread_pool(jobs)?.install(|| (0..n).into_par_iter().map(bake_frame).collect::<Result<Vec<_>>>())?;
    write_json(
        &dir.join("pairs.json"),
        &PairManifest::new(r, Frame::Global, "lr", "hr", n),
    )?;
    if settings.tangent {
        write_json(
            &dir.join("pairs_tangent.json"),
            &PairManifest::new(r, Frame::Tangent, "lr_tangent", "hr_tangent", n),
        )?;
    }
    let report = BakeReport {
        resolution: r,
        cutoff: settings.cutoff,
        tangent: settings.tangent,
        frames,
    };
    write_report(out, "bake_report", &report.to_table(), &report)?;
    Ok(report)
}

// -------------------------------------------------------- eval-temporal

/// Loads `frame_XXXX.png` maps (with masks) from `dir`.
pub fn load_map_sequence(dir: &Path, frame: Frame) -> Result<Vec<NormalMap>> {
    let n = count_frame_files(dir, "png");
    if n == 0 {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no frame_XXXX.png maps found"),
        ));
    }
    (0..n)
        .map(|t| NormalMap::load_png(&frame_file(dir, t, "png"), frame))
        .collect()
}

/// Temporal and data losses of `generated` against `ground_truth` maps,
/// written as `out/eval_temporal_report.{txt,json}`.
pub fn run_eval_temporal(
    generated: &Path,
    ground_truth: &Path,
    frame: Frame,
    out: &Path,
) -> Result<TemporalLossReport> {
    let gen = load_map_sequence(generated, frame)?;
    let gt = load_map_sequence(ground_truth, frame)?;
    let report = temporal_sequence_report(&gen, &gt)?;
    let table = format!("normalization: {}\n{}", report.normalization, report.to_table());
    write_report(out, "eval_temporal_report", &table, &report)?;
    Ok(report)
}

// ------------------------------------------------------------- retarget

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetReport {
    pub vertices: usize,
    pub max_offset: f64,
    pub mean_offset: f64,
}

/// Reads `dx dy dz` rows (one per vertex, `#` comments allowed).
pub fn read_offsets(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_error = |message: String| Error::Parse {
            source_name: path.display().to_string(),
            line: line_no + 1,
            message,
        };
        let values = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| parse_error(format!("'{s}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 3 {
            return Err(parse_error(format!("expected 3 values, got {}", values.len())));
        }
        out.push(Vector3::new(values[0], values[1], values[2]));
    }
    Ok(out)
}

/// Displaces the model's mean by body offsets restricted to the clothing
/// vertices; without `clothing_to_body` the offsets are per clothing vertex.
/// Writes `out/retarget/{model.bin, mean.obj}`.
pub fn run_retarget(
    model: &Path,
    offsets: &Path,
    clothing_to_body: Option<&Path>,
    out: &Path,
) -> Result<RetargetReport> {
    let model = SubspaceModel::load(model)?;
    let body = read_offsets(offsets)?;
    let mapping = match clothing_to_body {
        Some(p) => read_index_list(p)?,
        None => (0..body.len()).collect(),
    };
    if mapping.len() != model.vertex_count() {
        return Err(Error::DimensionMismatch {
            context: "retargeting offsets",
            expected: model.vertex_count(),
            actual: mapping.len(),
        });
    }
    let restricted = restrict_offsets(&body, &mapping)?;
    let retargeted = model.retarget_mean(&restricted)?;
    let dir = out.join(RETARGET_DIR);
    retargeted.save(&dir.join("model.bin"))?;
    save_obj(retargeted.mean_mesh(), dir.join("mean.obj"))?;
    let norms: Vec<f64> = restricted
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]).norm())
        .collect();
    let report = RetargetReport {
        vertices: model.vertex_count(),
        max_offset: norms.iter().copied().fold(0.0, f64::max),
        mean_offset: mean(norms.iter().copied()).unwrap_or(0.0),
    };
    let table = format!(
        "vertices {}\nmax offset (m) {:.6e}\nmean offset (m) {:.6e}\n",
        report.vertices, report.max_offset, report.mean_offset
    );
    write_report(out, "retarget_report", &table, &report)?;
    Ok(report)
}
