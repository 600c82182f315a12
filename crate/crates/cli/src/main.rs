//! `foldkit`: the pipeline as subcommands.
//!
//! Failures print one line, `error[<category>]: <message>`, to stderr and
//! exit with 2 (config), 3 (data) or 4 (numerical).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use foldkit::normalmaps::Frame;
use foldkit::pipeline::{
    run_bake, run_eval_temporal, run_fit_subspace, run_register, run_regress, run_retarget, run_synth, PipelineConfig,
    RegressModes, Sequence, BAKE_DIR, REGISTERED_DIR, SUBSPACE_DIR,
};
use foldkit::{Error, ErrorCategory};

#[derive(Parser)]
#[command(
    name = "foldkit",
    version,
    about = "Clothing deformation models from 4D mesh sequences"
)]
struct Cli {
    /// Stage configuration file (TOML); defaults apply to missing entries.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for per-frame stages (register, bake). Results do not
    /// depend on this value.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,
    /// Random seed for `synth`; overrides `synth.seed` from the config.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,
    /// Output (work) directory; later stages read earlier stages' results
    /// from here.
    #[arg(long, global = true, value_name = "DIR", default_value = "foldkit-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ManifestArg {
    /// Sequence manifest (JSON), as written by `synth`.
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameArg {
    Global,
    Tangent,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sleeve sequence with ground truth.
    Synth {
        /// Number of frames; overrides `synth.frames`.
        #[arg(long, value_name = "N")]
        frames: Option<usize>,
    },
    /// Register the template to every scan; writes `<out>/registered/`.
    Register {
        #[command(flatten)]
        manifest: ManifestArg,
        /// Start each frame from the previous registration.
        #[arg(long)]
        sequential: bool,
    },
    /// Fit the blend-shape subspace to pose-normalized registrations; writes
    /// `<out>/subspace/`.
    FitSubspace {
        #[command(flatten)]
        manifest: ManifestArg,
        /// Registered meshes (default `<out>/registered`).
        #[arg(long, value_name = "DIR")]
        registered: Option<PathBuf>,
        /// Retained components; overrides `subspace.components`.
        #[arg(long, value_name = "K")]
        components: Option<usize>,
    },
    /// Pose-to-shape regression; with none of --fit/--predict/--eval all
    /// three run in that order. Writes `<out>/regression/`.
    Regress {
        #[command(flatten)]
        manifest: ManifestArg,
        /// Fit the regressor to the subspace coefficients.
        #[arg(long)]
        fit: bool,
        /// Predict shapes for a pose sequence.
        #[arg(long)]
        predict: bool,
        /// Evaluate predictions against the subspace coefficients.
        #[arg(long)]
        eval: bool,
        /// Pose sequence for --predict (default: the manifest's).
        #[arg(long, value_name = "PATH")]
        poses: Option<PathBuf>,
    },
    /// Bake LR and HR normal maps and the training-pair manifests; writes
    /// `<out>/bake/`.
    Bake {
        #[command(flatten)]
        manifest: ManifestArg,
        /// Meshes to bake (default `<out>/subspace/reconstructed`).
        #[arg(long, value_name = "DIR")]
        meshes: Option<PathBuf>,
        /// Map width and height; overrides `bake.resolution`.
        #[arg(long, value_name = "PIXELS")]
        resolution: Option<usize>,
    },
    /// Data and temporal losses of a generated map sequence against ground
    /// truth.
    EvalTemporal {
        /// Generated maps (default `<out>/bake/lr`).
        #[arg(long, value_name = "DIR")]
        generated: Option<PathBuf>,
        /// Ground-truth maps (default `<out>/bake/hr`).
        #[arg(long, value_name = "DIR")]
        ground_truth: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "global")]
        frame: FrameArg,
    },
    /// Move a subspace model's mean by body-shape offsets; writes
    /// `<out>/retarget/`.
    Retarget {
        /// Model file (default `<out>/subspace/model.bin`).
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Offsets, one `dx dy dz` row per vertex.
        #[arg(long, value_name = "PATH")]
        offsets: PathBuf,
        /// Index list mapping each clothing vertex to its offset row.
        #[arg(long, value_name = "PATH")]
        clothing_to_body: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> foldkit::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.synth.seed = seed;
    }
    match &cli.command {
        Command::Synth { frames: Some(n) } => config.synth.frames = *n,
        Command::Register { sequential: true, .. } => config.register.sequential = true,
        Command::FitSubspace {
            components: Some(k), ..
        } => config.subspace.components = Some(*k),
        Command::Bake {
            resolution: Some(r), ..
        } => config.bake.resolution = *r,
        _ => {}
    }
    config.validate()?;
    if cli.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    Ok(config)
}

fn or_out(path: &Option<PathBuf>, out: &Path, default: &[&str]) -> PathBuf {
    path.clone()
        .unwrap_or_else(|| default.iter().fold(out.to_path_buf(), |p, part| p.join(part)))
}

fn run(cli: &Cli) -> foldkit::Result<String> {
    let config = load_config(cli)?;
    let out = &cli.out;
    let summary = match &cli.command {
        Command::Synth { .. } => {
            let r = run_synth(&config.synth, out)?;
            format!("synth: {} frames written, manifest {}", r.frames, r.manifest.display())
        }
        Command::Register { manifest, .. } => {
            let r = run_register(&Sequence::open(&manifest.manifest)?, &config, cli.jobs, out)?;
            let rms = r
                .mean_rms_to_ground_truth
                .map(|v| format!(", mean rms to ground truth {v:.3e} m"));
            format!("register: {} frames{}", r.frames.len(), rms.unwrap_or_default())
        }
        Command::FitSubspace {
            manifest, registered, ..
        } => {
            let registered = or_out(registered, out, &[REGISTERED_DIR]);
            let r = run_fit_subspace(&Sequence::open(&manifest.manifest)?, &config, &registered, out)?;
            format!("fit-subspace: k = {}, mean rms {:.3e} m", r.k, r.mean_rms)
        }
        Command::Regress {
            manifest,
            fit,
            predict,
            eval,
            poses,
        } => {
            let modes = if *fit || *predict || *eval {
                RegressModes {
                    fit: *fit,
                    predict: *predict,
                    eval: *eval,
                }
            } else {
                RegressModes::ALL
            };
            let r = run_regress(
                &Sequence::open(&manifest.manifest)?,
                &config,
                modes,
                poses.as_deref(),
                out,
            )?;
            let mut parts = vec!["regress:".to_string()];
            if let Some(f) = &r.fit {
                parts.push(format!("training mse {:.3e}", f.training_mse));
            }
            if let Some(n) = r.predicted_frames {
                parts.push(format!("{n} frames predicted"));
            }
            if let Some(e) = &r.eval {
                parts.push(format!("vertex rms {:.3e} m", e.vertex_rms));
            }
            parts.join(" ")
        }
        Command::Bake { manifest, meshes, .. } => {
            let meshes = or_out(meshes, out, &[SUBSPACE_DIR, "reconstructed"]);
            let r = run_bake(&Sequence::open(&manifest.manifest)?, &config, cli.jobs, &meshes, out)?;
            format!("bake: {} frames at {}x{}", r.frames.len(), r.resolution, r.resolution)
        }
        Command::EvalTemporal {
            generated,
            ground_truth,
            frame,
        } => {
            let frame = match frame {
                FrameArg::Global => Frame::Global,
                FrameArg::Tangent => Frame::Tangent,
            };
            let generated = or_out(generated, out, &[BAKE_DIR, "lr"]);
            let ground_truth = or_out(ground_truth, out, &[BAKE_DIR, "hr"]);
            let r = run_eval_temporal(&generated, &ground_truth, frame, out)?;
            format!(
                "eval-temporal: mean l_data {:.6e}, mean l_temp {:.6e}",
                r.mean_l_data, r.mean_l_temp
            )
        }
        Command::Retarget {
            model,
            offsets,
            clothing_to_body,
        } => {
            let model = or_out(model, out, &[SUBSPACE_DIR, "model.bin"]);
            let r = run_retarget(&model, offsets, clothing_to_body.as_deref(), out)?;
            format!("retarget: {} vertices, max offset {:.3e} m", r.vertices, r.max_offset)
        }
    };
    Ok(summary)
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numerical => 4,
    }
}

fn one_line(message: &str) -> String {
    message.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error[{}]: {}", ErrorCategory::Config.as_str(), one_line(first));
            return ExitCode::from(exit_code(ErrorCategory::Config));
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.category().as_str(), one_line(&e.to_string()));
            ExitCode::from(exit_code(e.category()))
        }
    }
}
