//! Scene configuration: the JSON document driving every pipeline stage.
//!
//! The schema is strict (unknown keys are rejected) and validated before any
//! stage runs. Anything learnable is configured here; command-line flags only
//! carry paths and overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::core::error::{Error, Result};
use crate::fields::{Activation, BackendSpec, FieldSpec};
use crate::losses::LossWeights;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Dataset directory produced by `pir scenegen` (contains scene.json).
    pub dataset: PathBuf,
    /// Output directory for checkpoints, logs, and renders.
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 keeps the library default.
    #[serde(default)]
    pub threads: usize,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub fields: FieldsConfig,
    #[serde(default)]
    pub light: LightConfig,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub render: RenderFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "mode")]
pub enum GeometryConfig {
    /// Exact preset geometry from the dataset (ground-truth fixed).
    Analytic,
    /// Learned SDF field (channel 0 = distance, the rest local features).
    Learned {
        #[serde(default = "default_sdf_spec")]
        sdf: FieldSpec,
        #[serde(default = "default_sdf_init_radius")]
        init_radius: f64,
    },
}

fn default_sdf_init_radius() -> f64 {
    0.5
}

fn default_sdf_spec() -> FieldSpec {
    FieldSpec {
        backend: BackendSpec::Grid { resolution: 32 },
        output_dim: 1,
        encoding_freqs: 0,
        extra_input_dim: 0,
        activation: Activation::None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsConfig {
    #[serde(default = "default_color_field")]
    pub diffuse: FieldSpec,
    #[serde(default = "default_color_field")]
    pub specular: FieldSpec,
    #[serde(default = "default_scalar_field")]
    pub roughness: FieldSpec,
    /// Surface feature field fitted by the distillation stage.
    #[serde(default)]
    pub feature: Option<FieldSpec>,
    /// Radiance head for the volume-rendering init stage.
    #[serde(default)]
    pub radiance_head: Option<FieldSpec>,
    #[serde(default = "default_blend_layers")]
    pub blend_layers: usize,
    #[serde(default = "default_blend_width")]
    pub blend_width: usize,
}

fn default_color_field() -> FieldSpec {
    FieldSpec {
        backend: BackendSpec::Mlp {
            layers: 3,
            width: 32,
            hidden_beta: 100.0,
        },
        output_dim: 3,
        encoding_freqs: 6,
        extra_input_dim: 0,
        activation: Activation::Sigmoid,
    }
}

fn default_scalar_field() -> FieldSpec {
    FieldSpec {
        backend: BackendSpec::Mlp {
            layers: 3,
            width: 32,
            hidden_beta: 100.0,
        },
        output_dim: 1,
        encoding_freqs: 6,
        extra_input_dim: 0,
        activation: Activation::Sigmoid,
    }
}

fn default_blend_layers() -> usize {
    3
}

fn default_blend_width() -> usize {
    16
}

impl Default for FieldsConfig {
    fn default() -> Self {
        FieldsConfig {
            diffuse: default_color_field(),
            specular: default_color_field(),
            roughness: default_scalar_field(),
            feature: None,
            radiance_head: None,
            blend_layers: default_blend_layers(),
            blend_width: default_blend_width(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightConfig {
    pub offset_init: [f64; 3],
    pub intensity_init: f64,
    pub optimize: bool,
}

impl Default for LightConfig {
    fn default() -> Self {
        LightConfig {
            offset_init: [0.0, 0.0, 0.0],
            intensity_init: 1.0,
            optimize: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub init_iters: usize,
    pub distill_iters: usize,
    pub pbr_iters: usize,
    /// Geometry and light stay frozen for this many leading PBR iterations.
    pub warmup_iters: usize,
    /// Blending-network updates start at this PBR iteration.
    pub blend_start_iter: usize,
    pub patch: usize,
    pub lr: f64,
    pub init_lr: f64,
    pub distill_lr: f64,
    /// Feature-alignment weight during the distillation stage (it drops to
    /// `loss_weights.feature` during surface rendering).
    pub distill_feature_weight: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        // desk-scale counterpart of the reference schedule
        Schedule {
            init_iters: 2000,
            distill_iters: 1000,
            pbr_iters: 5000,
            warmup_iters: 200,
            blend_start_iter: 1000,
            patch: 32,
            lr: 1e-3,
            init_lr: 5e-3,
            distill_lr: 3e-3,
            distill_feature_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub visibility_samples: usize,
    pub lobe_samples: usize,
    pub volume_samples: usize,
    pub init_rays_per_batch: usize,
    pub eikonal_points: usize,
    pub distill_pixels_per_batch: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            visibility_samples: 128,
            lobe_samples: 4,
            volume_samples: 64,
            init_rays_per_batch: 512,
            eikonal_points: 32,
            distill_pixels_per_batch: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderFlags {
    pub enable_visibility: bool,
    pub enable_interreflect: bool,
    /// Ingest feature maps and inject the distilled field into the specular
    /// and roughness networks.
    pub features_enabled: bool,
    pub gamma_init: f64,
    pub eta: f64,
    pub sharpness_init: f64,
    pub surface_eps: f64,
}

impl Default for RenderFlags {
    fn default() -> Self {
        RenderFlags {
            enable_visibility: true,
            enable_interreflect: true,
            features_enabled: false,
            gamma_init: 0.05,
            eta: 1.5,
            sharpness_init: 300.0,
            surface_eps: crate::geometry::SURFACE_EPS,
        }
    }
}

impl SceneConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<SceneConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let cfg: SceneConfig = serde_json::from_str(&text).map_err(|e| Error::Config {
            reason: format!("{}: {e}", path.display()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if s.warmup_iters > s.pbr_iters {
            return Err(Error::Config {
                reason: format!(
                    "warmup_iters ({}) must not exceed pbr_iters ({})",
                    s.warmup_iters, s.pbr_iters
                ),
            });
        }
        if s.blend_start_iter > s.pbr_iters {
            return Err(Error::Config {
                reason: format!(
                    "blend_start_iter ({}) must not exceed pbr_iters ({})",
                    s.blend_start_iter, s.pbr_iters
                ),
            });
        }
        if s.patch < 11 {
            return Err(Error::Config {
                reason: "patch must be at least 11 (SSIM window)".into(),
            });
        }
        if self.light.intensity_init <= 0.0 {
            return Err(Error::Config {
                reason: "light intensity_init must be positive".into(),
            });
        }
        self.fields.diffuse.validate()?;
        self.fields.specular.validate()?;
        self.fields.roughness.validate()?;
        if let Some(f) = &self.fields.feature {
            f.validate()?;
        }
        if let Some(f) = &self.fields.radiance_head {
            f.validate()?;
        }
        if let GeometryConfig::Learned { sdf, .. } = &self.geometry {
            sdf.validate()?;
        }
        if self.render.features_enabled {
            let Some(feat) = &self.fields.feature else {
                return Err(Error::Config {
                    reason: "features_enabled requires fields.feature".into(),
                });
            };
            for (spec, name) in [
                (&self.fields.specular, "specular"),
                (&self.fields.roughness, "roughness"),
            ] {
                if spec.extra_input_dim != feat.output_dim {
                    return Err(Error::Config {
                        reason: format!(
                            "{name} extra_input_dim ({}) must equal feature output_dim ({})",
                            spec.extra_input_dim, feat.output_dim
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), json)
            .map_err(|e| Error::io(format!("writing {}", path.as_ref().display()), e))
    }
}
