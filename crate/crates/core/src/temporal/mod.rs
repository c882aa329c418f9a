//! Temporal consistency post-processing: dense optical flow, motion
//! compensation against the source video, and temporal low-pass filtering.

pub mod flow;
pub mod lowpass;
pub mod stabilize;

use serde::{Deserialize, Serialize};

pub use flow::{dense_flow, warp, FlowField, FlowParams};
pub use lowpass::lowpass;
pub use stabilize::{stabilize, StabilizeConfig};

use crate::error::Result;
use crate::imaging::Video;

/// One post-processing stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostStep {
    Stabilize,
    Lowpass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostConfig {
    /// Stages in the order they run.
    pub order: Vec<PostStep>,
    pub window: usize,
    /// Low-pass repetitions within a single `Lowpass` stage.
    pub passes: usize,
    pub stabilize: StabilizeConfig,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self {
            order: vec![PostStep::Stabilize, PostStep::Lowpass],
            window: 3,
            passes: 2,
            stabilize: StabilizeConfig::default(),
        }
    }
}

impl PostConfig {
    /// The same settings restricted to `steps`.
    pub fn with_order(&self, steps: &[PostStep]) -> PostConfig {
        PostConfig {
            order: steps.to_vec(),
            ..self.clone()
        }
    }
}

/// Runs the configured stages on `edited`, using `source` as the motion
/// reference for stabilization.
pub fn postprocess(edited: &Video, source: &Video, cfg: &PostConfig) -> Result<Video> {
    let mut v = edited.clone();
    for step in &cfg.order {
        v = match step {
            PostStep::Stabilize => stabilize(&v, source, &cfg.stabilize)?,
            PostStep::Lowpass => lowpass(&v, cfg.window, cfg.passes)?,
        };
    }
    Ok(v)
}

/// The four post-processing variants compared in the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Raw,
    FlowOnly,
    LowpassOnly,
    Both,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Raw, Ablation::FlowOnly, Ablation::LowpassOnly, Ablation::Both];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Raw => "none",
            Ablation::FlowOnly => "flow",
            Ablation::LowpassOnly => "lowpass",
            Ablation::Both => "flow+lowpass",
        }
    }

    pub fn steps(self) -> &'static [PostStep] {
        match self {
            Ablation::Raw => &[],
            Ablation::FlowOnly => &[PostStep::Stabilize],
            Ablation::LowpassOnly => &[PostStep::Lowpass],
            Ablation::Both => &[PostStep::Stabilize, PostStep::Lowpass],
        }
    }
}
