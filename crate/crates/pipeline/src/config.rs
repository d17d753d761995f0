//! Project configuration: one TOML file with a versioned schema.
//!
//! Relative paths resolve against the directory holding the file.

use std::fs;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use portrait_core::face_model::ModelDims;
use portrait_core::image_formation::CameraIntrinsics;
use portrait_core::reconstruction::FitConfig;
use portrait_core::transfer::TransferSpec;
use portrait_eval::NeighborWeights;
use portrait_net::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::scene::SceneConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub camera: CameraSettings,
    #[serde(default)]
    pub basis: BasisSettings,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub network: NetworkSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub transfer: TransferSpec,
    #[serde(default)]
    pub evaluate: EvaluateSettings,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub service: ServiceSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Numbered PNG frames.
    pub frames: PathBuf,
    /// One landmark JSON per frame, same numbering.
    pub landmarks: PathBuf,
    pub output: PathBuf,
    /// Parameter sequence the network is trained on and driven with.
    /// Defaults to the fitted sequence under `output`.
    pub params: Option<PathBuf>,
    /// Basis file; synthesized from `[basis]` when absent.
    pub basis: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            frames: "frames".into(),
            landmarks: "landmarks".into(),
            output: "out".into(),
            params: None,
            basis: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSettings {
    /// Focal length as a multiple of the larger image side.
    pub focal_scale: f64,
}

impl Default for CameraSettings {
    fn default() -> Self {
        CameraSettings { focal_scale: 1.2 }
    }
}

impl CameraSettings {
    pub fn intrinsics(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        let f = self.focal_scale * width.max(height) as f64;
        Ok(CameraIntrinsics::new(
            f,
            [width as f64 / 2.0, height as f64 / 2.0],
            [width, height],
        )?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSettings {
    pub seed: u64,
    pub vertex_count: usize,
    pub dims: ModelDims,
}

impl Default for BasisSettings {
    fn default() -> Self {
        BasisSettings {
            seed: 0,
            vertex_count: 1200,
            dims: ModelDims::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSettings {
    pub window_size: usize,
    /// Divides every generator and discriminator width.
    pub width_divisor: usize,
    pub seed: u64,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        NetworkSettings {
            window_size: portrait_core::conditioning::DEFAULT_WINDOW,
            width_divisor: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    pub neighbor_weights: NeighborWeights,
    /// Window sizes compared by `evaluate --ablation`.
    pub ablation_windows: Vec<usize>,
    /// Error-map columns per row of the ablation grid.
    pub grid_columns: usize,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        EvaluateSettings {
            neighbor_weights: NeighborWeights::default(),
            ablation_windows: vec![1, portrait_core::conditioning::DEFAULT_WINDOW],
            grid_columns: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSettings {
    pub bind: IpAddr,
    pub port: u16,
    /// Index of the fitted frame the editor starts from.
    pub frame: usize,
    /// JSON-lines log of state-changing requests, under `output` when
    /// relative.
    pub request_log: PathBuf,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings {
            bind: [127, 0, 0, 1].into(),
            port: 8077,
            frame: 0,
            request_log: "requests.jsonl".into(),
        }
    }
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            schema_version: SCHEMA_VERSION,
            paths: Paths::default(),
            camera: CameraSettings::default(),
            basis: BasisSettings::default(),
            fit: FitConfig::default(),
            network: NetworkSettings::default(),
            train: TrainConfig::default(),
            transfer: TransferSpec::default(),
            evaluate: EvaluateSettings::default(),
            scene: SceneConfig::default(),
            service: ServiceSettings::default(),
        }
    }
}

impl ProjectConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ProjectConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reads and validates `path`, resolving relative paths against its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| PipelineError::Missing(format!("config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(PipelineError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(self.camera.focal_scale > 0.0 && self.camera.focal_scale.is_finite()) {
            return bad("camera.focal_scale must be positive");
        }
        if self.basis.vertex_count < 100 {
            return bad("basis.vertex_count must be at least 100");
        }
        if self.network.window_size == 0 || self.network.width_divisor == 0 {
            return bad("network.window_size and network.width_divisor must be positive");
        }
        if self.evaluate.ablation_windows.contains(&0) || self.evaluate.grid_columns == 0 {
            return bad("evaluate.ablation_windows and evaluate.grid_columns must be positive");
        }
        if self.fit.max_iters == 0 {
            return bad("fit.max_iters must be positive");
        }
        self.fit.weights.validate()?;
        self.train.validate()?;
        self.transfer.validate()?;
        self.scene.validate()?;
        Ok(())
    }

    /// Fitted or supplied parameter sequence.
    pub fn params_path(&self) -> PathBuf {
        self.paths
            .params
            .clone()
            .unwrap_or_else(|| self.paths.output.join("params.jsonl"))
    }

    pub fn weights_path(&self) -> PathBuf {
        self.paths.output.join("weights.dvpw")
    }

    pub fn request_log_path(&self) -> PathBuf {
        self.paths.output.join(&self.service.request_log)
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.frames);
        join(&mut self.landmarks);
        join(&mut self.output);
        self.params.iter_mut().for_each(join);
        self.basis.iter_mut().for_each(join);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = ProjectConfig::default();
        cfg.paths.params = Some("a/b.jsonl".into());
        cfg.network.window_size = 3;
        cfg.train.iterations = 17;
        cfg.transfer = TransferSpec::dubbing();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ProjectConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn sections_default() {
        let cfg = ProjectConfig::from_toml("schema_version = 1\n[network]\nwindow_size = 5\n").unwrap();
        assert_eq!(cfg.network.window_size, 5);
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "schema_version = 2",
            "schema_version = 1\n[network]\nwindow_size = 0",
            "schema_version = 1\nbogus = 3",
            "schema_version = 1\n[train]\nlearning_rate = -1.0",
            "schema_version = 1\n[transfer]\nrotation_scale = 2.0",
        ] {
            assert!(ProjectConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.toml");
        ProjectConfig::default().save(&path).unwrap();
        let cfg = ProjectConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.frames, dir.path().join("frames"));
        assert_eq!(cfg.params_path(), dir.path().join("out/params.jsonl"));
    }
}
