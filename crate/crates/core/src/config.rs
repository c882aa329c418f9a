//! Whole-run configuration: one JSON document holding every module default.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::TrainConfig;
use crate::effects::{builtin_effect, load_effect, EffectSpec};
use crate::error::{Error, Result};
use crate::metrics::SIM_FLOOR;
use crate::sampler::GuidanceConfig;
use crate::synthface::{Canvas, MotionSpec, DEFAULT_CANVAS};
use crate::temporal::PostConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub identities: usize,
    pub poses: usize,
    /// Built-in effect keys or paths to effect manifests.
    pub effects: Vec<String>,
    pub seed: u64,
    pub canvas: Canvas,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            // 10 records per effect, the default text-model subset size
            identities: 5,
            poses: 2,
            effects: vec!["bow".into()],
            seed: 7,
            canvas: DEFAULT_CANVAS,
        }
    }
}

impl DatasetConfig {
    pub fn resolve_effects(&self) -> Result<Vec<EffectSpec>> {
        self.effects.iter().map(|k| resolve_effect(k)).collect()
    }
}

/// A built-in key, or else a path to an effect manifest.
pub fn resolve_effect(key: &str) -> Result<EffectSpec> {
    if let Some(e) = builtin_effect(key) {
        return Ok(e);
    }
    if Path::new(key).is_file() {
        return load_effect(key);
    }
    Err(Error::Config(format!(
        "`{key}` is neither a built-in effect nor an effect manifest"
    )))
}

/// The synthetic head-motion clip that gets edited.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoConfig {
    /// Dataset identity whose face is animated.
    pub identity: usize,
    pub motion: MotionSpec,
    /// Edit prompt; `None` uses the identity's first training caption.
    pub prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub sim_floor: f64,
    /// Every `strip_stride`-th frame goes into PNG frame strips.
    pub strip_stride: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            sim_floor: SIM_FLOOR,
            strip_stride: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub text: TrainConfig,
    pub image: TrainConfig,
    pub guidance: GuidanceConfig,
    pub video: VideoConfig,
    pub post: PostConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            text: TrainConfig::text_default(),
            image: TrainConfig::image_default(),
            guidance: GuidanceConfig::default(),
            video: VideoConfig::default(),
            post: PostConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Schema(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Structural checks that do not need any data. Returns advisory
    /// warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let d = &self.dataset;
        if d.identities == 0 || d.poses == 0 || d.effects.is_empty() {
            return Err(Error::Config("dataset needs identities, poses and effects".into()));
        }
        if self.video.identity >= d.identities {
            return Err(Error::Config(format!(
                "video identity {} but only {} identities",
                self.video.identity, d.identities
            )));
        }
        let mut warnings = self.text.validate_text()?;
        warnings.extend(self.image.validate_image()?);
        self.guidance.validate()?;
        if self.post.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "low-pass window must be odd, got {}",
                self.post.window
            )));
        }
        if !(self.metrics.sim_floor > 0.0 && self.metrics.sim_floor <= 1.0) {
            return Err(Error::Config("similarity floor must lie in (0, 1]".into()));
        }
        Ok(warnings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::PostStep;

    #[test]
    fn defaults_roundtrip_through_json() {
        let c = RunConfig::default();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!((c.guidance.steps, c.guidance.k, c.guidance.v), (50, 20, 0.9));
        assert_eq!(c.text.steps, 400);
        assert_eq!(c.post.order, vec![PostStep::Stabilize, PostStep::Lowpass]);
        assert_eq!(c.post.passes, 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::to_value(RunConfig::default()).unwrap();
        v["guidance"]["typo"] = 1.into();
        assert!(matches!(RunConfig::from_json(&v.to_string()), Err(Error::Schema(_))));
        let mut v: serde_json::Value = serde_json::to_value(RunConfig::default()).unwrap();
        v["extra"] = 1.into();
        assert!(matches!(RunConfig::from_json(&v.to_string()), Err(Error::Schema(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = RunConfig::default();
        c.guidance.k = 60;
        assert!(matches!(RunConfig::from_json(&c.to_json()), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.video.identity = 5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn effects_resolve() {
        assert_eq!(
            resolve_effect("glasses").unwrap().name,
            builtin_effect("glasses").unwrap().name
        );
        assert!(matches!(resolve_effect("no such effect"), Err(Error::Config(_))));
        assert_eq!(DatasetConfig::default().resolve_effects().unwrap().len(), 1);
    }
}
