//! Run configuration: one TOML file, `${VAR}` / `${VAR:-default}`
//! interpolation, unknown keys rejected.

use std::path::{Path, PathBuf};

use meshstyle::field::{DistillationConfig, FieldConfig};
use meshstyle::fixture::CubeCityConfig;
use meshstyle::sky::{SkyConfig, LATENT_FACTOR};
use meshstyle::trainer::StylizationConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// The shipped default configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scene: SceneConfig,
    pub style: StyleConfig,
    pub models: ModelsConfig,
    pub plan: PlanConfig,
    pub field: FieldConfig,
    pub distill: DistillationConfig,
    pub stylize: StylizationConfig,
    pub sky: SkyConfig,
    pub bake: BakeConfig,
    pub edit: EditConfig,
    pub eval: EvalConfig,
}

/// Either mesh + texture files or the procedural cube-city fixture.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub mesh: Option<PathBuf>,
    pub texture: Option<PathBuf>,
    pub semantics: Option<PathBuf>,
    pub fixture: Option<CubeCityConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleConfig {
    /// Style image; the bundled procedural style image when absent.
    pub image: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Side of the bundled style image.
    pub bundled_size: usize,
    pub source_text: String,
    pub target_text: String,
    /// Equirectangular sky composited behind the foreground for text losses.
    pub sky: Option<PathBuf>,
}

impl Default for StyleConfig {
    fn default() -> Self {
        StyleConfig {
            image: None,
            labels: None,
            bundled_size: 512,
            source_text: "a photo of a city by day".into(),
            target_text: "a photo of a city at night".into(),
            sky: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    /// Feature backbone weights (JSON); the seeded backbone when empty.
    pub backbone: String,
    /// Sky denoiser backend name.
    pub diffusion: String,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            backbone: String::new(),
            diffusion: "toy".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub pivots: usize,
    pub regions: usize,
    /// Pivot offset from the bounding box as a fraction of its diagonal.
    pub offset: f64,
    pub fov_deg: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            pivots: 5,
            regions: 9,
            offset: 0.35,
            fov_deg: 90.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BakeConfig {
    pub width: usize,
    pub height: usize,
}

impl Default for BakeConfig {
    fn default() -> Self {
        BakeConfig {
            width: 1024,
            height: 1024,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    /// Edited rendering of the pivot view `pivot`.
    pub image: Option<PathBuf>,
    pub pivot: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct EvalConfig {
    /// Number of pivot views evaluated (all when 0).
    pub views: usize,
    /// Text for the CLIP score; the style target text when absent.
    pub prompt: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            scene: SceneConfig {
                fixture: Some(CubeCityConfig::default()),
                ..SceneConfig::default()
            },
            style: StyleConfig::default(),
            models: ModelsConfig::default(),
            plan: PlanConfig::default(),
            field: FieldConfig::default(),
            distill: DistillationConfig::default(),
            stylize: StylizationConfig::default(),
            sky: SkyConfig::default(),
            bake: BakeConfig::default(),
            edit: EditConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Expands `${VAR}` and `${VAR:-default}`. An unset variable without a
/// default is an error.
pub fn interpolate(text: &str) -> Result<String, CliError> {
    shellexpand::env(text)
        .map(|s| s.into_owned())
        .map_err(|e| CliError::Config(format!("environment variable {}: {}", e.var_name, e.cause)))
}

/// Interpolates every string value, leaving keys and comments alone.
fn interpolate_values(v: &mut toml::Value) -> Result<(), CliError> {
    match v {
        toml::Value::String(s) => *s = interpolate(s)?,
        toml::Value::Array(items) => items.iter_mut().try_for_each(interpolate_values)?,
        toml::Value::Table(t) => t.iter_mut().try_for_each(|(_, v)| interpolate_values(v))?,
        _ => {}
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        let mut value = toml::Value::Table(table);
        interpolate_values(&mut value)?;
        let cfg = RunConfig::deserialize(value).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, or the shipped default when `None`. Relative paths in
    /// the file resolve against its directory.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Self::parse(DEFAULT_CONFIG);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.scene.mesh,
            &mut self.scene.texture,
            &mut self.scene.semantics,
            &mut self.style.image,
            &mut self.style.labels,
            &mut self.style.sky,
            &mut self.edit.image,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if !self.models.backbone.is_empty() && Path::new(&self.models.backbone).is_relative() {
            self.models.backbone = base.join(&self.models.backbone).to_string_lossy().into_owned();
        }
    }

    /// The top-level seed drives every stage.
    pub fn apply_seed(&mut self) {
        self.distill.seed = self.seed;
        self.stylize.seed = self.seed;
        self.sky.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let s = &self.scene;
        match (&s.mesh, &s.texture, &s.fixture) {
            (Some(_), Some(_), None) => {}
            (None, None, Some(f)) => {
                if f.blocks == 0 || f.texture_size < 16 {
                    return bad("scene.fixture needs blocks ≥ 1 and texture_size ≥ 16".into());
                }
                if s.semantics.is_some() {
                    return bad("scene.semantics cannot be combined with scene.fixture".into());
                }
            }
            _ => return bad("scene needs either mesh and texture or fixture".into()),
        }
        if self.style.image.is_none() && self.style.bundled_size < 32 {
            return bad("style.bundled_size must be at least 32".into());
        }
        if self.style.labels.is_some() && self.style.image.is_none() {
            return bad("style.labels needs style.image".into());
        }
        if self.style.source_text.trim().is_empty() || self.style.target_text.trim().is_empty() {
            return bad("style texts must be non-empty".into());
        }
        if self.models.diffusion.trim().is_empty() {
            return bad("models.diffusion must name a backend".into());
        }
        let p = &self.plan;
        if p.pivots == 0 || p.regions == 0 || !(p.offset > 0.0) || !(p.fov_deg > 0.0 && p.fov_deg < 180.0) {
            return bad("plan needs pivots ≥ 1, regions ≥ 1, offset > 0 and 0 < fov < 180".into());
        }
        if self.bake.width == 0 || self.bake.height == 0 {
            return bad("bake size must be at least 1x1".into());
        }
        let cfg_err = |e: meshstyle::Error| CliError::Config(e.to_string());
        self.field.validate().map_err(cfg_err)?;
        self.distill.validate().map_err(cfg_err)?;
        self.stylize.validate().map_err(cfg_err)?;
        self.sky.validate(LATENT_FACTOR).map_err(cfg_err)?;
        Ok(())
    }
}
