//! File-level pipeline: the sequence manifest, the stage configuration file
//! and one runner per stage. Every runner reads its inputs from disk, writes
//! its artifacts atomically under an output directory, and emits a
//! plain-text report with a JSON twin.

mod stages;

pub use stages::*;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_atomic, write_json};
use crate::normalmaps::{DEFAULT_HR_CUTOFF, DEFAULT_RESOLUTION};
use crate::registration::RegistrationConfig;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub scan: PathBuf,
    /// OBJ point cloud (or any OBJ whose vertices are the boundary points),
    /// or an index list into the scan's vertices (`.txt`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_boundary: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

/// Inputs of a capture sequence. Relative paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub template: PathBuf,
    pub skin_weights: PathBuf,
    /// Skeleton and one pose per frame.
    pub poses: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_boundary: Option<PathBuf>,
    pub frames: Vec<FrameEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Every referenced file, in manifest order.
    pub fn referenced_files(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = vec![&self.template, &self.skin_weights, &self.poses];
        out.extend(self.template_boundary.as_deref());
        for f in &self.frames {
            out.push(&f.scan);
            out.extend(f.scan_boundary.as_deref());
            out.extend(f.ground_truth.as_deref());
        }
        out
    }

    /// Checks that every referenced file exists below `base`.
    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Format("manifest lists no frames".into()));
        }
        for p in self.referenced_files() {
            let full = base.join(p);
            if !full.is_file() {
                return Err(Error::io(
                    full,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file listed in manifest not found"),
                ));
            }
        }
        Ok(())
    }
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub manifest: Manifest,
    pub base: PathBuf,
}

impl Sequence {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate(&base)?;
        Ok(Sequence { manifest, base })
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn frame_count(&self) -> usize {
        self.manifest.frames.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegisterStageConfig {
    /// Start each frame from the previous frame's registration; frames are
    /// then registered one after another.
    pub sequential: bool,
}

impl Default for RegisterStageConfig {
    fn default() -> Self {
        RegisterStageConfig { sequential: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubspaceStageConfig {
    /// Retained components; all `min(n, 3v)` when unset.
    pub components: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionStageConfig {
    /// Joint names entering the control vector; all joints when unset.
    pub joints: Option<Vec<String>>,
    /// Previous frames whose shape coefficients enter the control vector.
    pub history: usize,
    /// Every `holdout_every`-th frame is held out from fitting; 0 disables
    /// the hold-out set.
    pub holdout_every: usize,
}

impl Default for RegressionStageConfig {
    fn default() -> Self {
        RegressionStageConfig {
            joints: None,
            history: 0,
            holdout_every: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BakeStageConfig {
    pub resolution: usize,
    /// Scan projection cutoff (metres).
    pub cutoff: f64,
    /// Fill one texel ring around UV islands when writing images.
    pub dilate: bool,
    /// Also write tangent-space versions of both maps.
    pub tangent: bool,
}

impl Default for BakeStageConfig {
    fn default() -> Self {
        BakeStageConfig {
            resolution: DEFAULT_RESOLUTION,
            cutoff: DEFAULT_HR_CUTOFF,
            dilate: true,
            tangent: true,
        }
    }
}

/// Contents of the `--config` file (TOML); every section is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub registration: RegistrationConfig,
    pub register: RegisterStageConfig,
    pub subspace: SubspaceStageConfig,
    pub regression: RegressionStageConfig,
    pub bake: BakeStageConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{source_name}: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.registration.validate()?;
        if self.subspace.components == Some(0) {
            return Err(Error::Config("subspace: components must be positive".into()));
        }
        if self.bake.resolution == 0 || !(self.bake.cutoff > 0.0) {
            return Err(Error::Config("bake: resolution and cutoff must be positive".into()));
        }
        Ok(())
    }
}

/// Writes `<dir>/<name>.txt` and `<dir>/<name>.json`.
pub fn write_report<T: Serialize>(dir: &Path, name: &str, table: &str, value: &T) -> Result<()> {
    write_atomic(&dir.join(format!("{name}.txt")), table.as_bytes())?;
    write_json(&dir.join(format!("{name}.json")), value)
}

pub(crate) fn frame_file(dir: &Path, t: usize, extension: &str) -> PathBuf {
    dir.join(format!("frame_{t:04}.{extension}"))
}
