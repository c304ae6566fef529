//! The JSON session config shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use worldcache::sampler::{SamplerConfig, DEFAULT_CLIP_LENGTH};
use worldcache::{CameraIntrinsics, CullingConfig, SplatConfig};

use crate::error::{CliError, CliResult};
use crate::files::load_json;

pub const DEFAULT_ASPECT_RATIOS: [f64; 4] = [1.0, 1.25, 1.5, 1.75];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionPaths {
    pub frames: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CullingSection {
    pub normal_dot_threshold: f64,
}

impl Default for CullingSection {
    fn default() -> Self {
        Self {
            normal_dot_threshold: CullingConfig::default().normal_dot_threshold,
        }
    }
}

/// `clip_length` and `seed` here take precedence over the same fields in
/// `sampler`; `splat` drives both culling and condition rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub paths: SessionPaths,
    pub splat: SplatConfig,
    pub culling: CullingSection,
    pub sampler: SamplerConfig,
    pub clip_length: usize,
    pub aspect_ratios: Vec<f64>,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            paths: SessionPaths::default(),
            splat: SplatConfig::default(),
            culling: CullingSection::default(),
            sampler: SamplerConfig::default(),
            clip_length: DEFAULT_CLIP_LENGTH,
            aspect_ratios: DEFAULT_ASPECT_RATIOS.to_vec(),
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let cfg: Self = match path {
            Some(p) => load_json(p)?,
            None => Self::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.culling_config().validate()?;
        self.sampler_config().validate()?;
        if self.clip_length == 0 {
            return Err(CliError::new("invalid_config", "clip_length must be at least 1"));
        }
        if self.aspect_ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(CliError::new("invalid_config", "aspect_ratios must be positive"));
        }
        Ok(())
    }

    pub fn culling_config(&self) -> CullingConfig {
        CullingConfig {
            normal_dot_threshold: self.culling.normal_dot_threshold,
            splat: self.splat,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            clip_length: self.clip_length,
            seed: self.seed,
            ..self.sampler.clone()
        }
    }

    /// Flag, else config path, else an error naming the flag.
    pub fn resolve(flag: Option<&Path>, fallback: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| fallback.clone())
            .ok_or_else(|| CliError::new("usage", format!("missing --{name} (not set in config paths either)")))
    }

    /// Warns on stderr when the frame shape is off the whitelist.
    pub fn check_aspect(&self, intr: &CameraIntrinsics) {
        let r = intr.width as f64 / intr.height as f64;
        let ok = self
            .aspect_ratios
            .iter()
            .any(|&a| (r - a).abs() < 1e-3 || (1.0 / r - a).abs() < 1e-3);
        if !ok {
            eprintln!(
                "warning code=aspect_ratio message=frame {}x{} has ratio {r:.4}, outside {:?}",
                intr.width, intr.height, self.aspect_ratios
            );
        }
    }
}
