//! End-to-end runs: forge a dataset, train both models, edit a synthetic
//! head-motion clip, post-process it and score identity consistency.

use crate::config::{DatasetConfig, RunConfig};
use crate::dataset::{derive_seed, forge_triplets, pose_yaws, TrainingTriplet};
use crate::diffusion::{measure_latent_stats, train_image_model, train_text_model, ImageModel, LossTrace, TextModel};
use crate::effects::{caption, describe_face};
use crate::error::{Error, Result};
use crate::imaging::Video;
use crate::metrics::{consistency_report, ConsistencyReport};
use crate::sampler::{edit_video, GuidanceConfig};
use crate::synthface::{generate_trajectory, sample_face_params, LandmarkSet};
use crate::temporal::{postprocess, Ablation, PostConfig};

pub fn forge_dataset(cfg: &DatasetConfig) -> Result<Vec<TrainingTriplet>> {
    forge_triplets(cfg.identities, &cfg.resolve_effects()?, cfg.poses, cfg.seed, cfg.canvas)
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub text: TextModel,
    pub image: ImageModel,
    pub text_trace: LossTrace,
    pub image_trace: LossTrace,
}

/// Trains the prompt model and then the source-image model on one set of
/// whitening statistics.
pub fn train_models(triplets: &[TrainingTriplet], cfg: &RunConfig) -> Result<TrainedModels> {
    let stats = measure_latent_stats(triplets)?;
    let (text, text_trace) = train_text_model(triplets, &stats, &cfg.text)?;
    let (image, image_trace) = train_image_model(triplets, &stats, &cfg.image)?;
    Ok(TrainedModels {
        text,
        image,
        text_trace,
        image_trace,
    })
}

#[derive(Debug, Clone)]
pub struct SourceClip {
    pub video: Video,
    pub landmarks: Vec<LandmarkSet>,
    pub prompt: String,
}

/// Animates the configured dataset identity. Without an explicit prompt the
/// identity's first training caption for the first effect is used.
pub fn source_clip(cfg: &RunConfig) -> Result<SourceClip> {
    let d = &cfg.dataset;
    let face = sample_face_params(derive_seed(d.seed, cfg.video.identity as u64), d.canvas)?;
    let (video, landmarks) = generate_trajectory(&face, &cfg.video.motion, d.canvas)?;
    let prompt = match &cfg.video.prompt {
        Some(p) => p.clone(),
        None => {
            let effect = d
                .resolve_effects()?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Config("dataset has no effects".into()))?;
            let mut posed = face.clone();
            posed.yaw = pose_yaws(d.poses).first().copied().unwrap_or(0.0);
            caption(&effect, &describe_face(&posed))?
        }
    };
    Ok(SourceClip {
        video,
        landmarks,
        prompt,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub edited: Video,
    pub processed: Video,
    pub report: ConsistencyReport,
}

pub fn edit_clip(models: &TrainedModels, clip: &SourceClip, g: &GuidanceConfig) -> Result<Video> {
    edit_video(&clip.video, &clip.prompt, &models.text, &models.image, g)
}

/// Post-processes an edit and scores the result against the source clip.
pub fn finish(clip: &SourceClip, edited: Video, post: &PostConfig, floor: f64) -> Result<RunOutput> {
    let processed = postprocess(&edited, &clip.video, post)?;
    let report = consistency_report(&clip.video, &processed, &clip.landmarks, floor)?;
    Ok(RunOutput {
        edited,
        processed,
        report,
    })
}

/// Scores each post-processing variant of one edit.
pub fn ablation(clip: &SourceClip, edited: &Video, cfg: &RunConfig) -> Result<Vec<(Ablation, ConsistencyReport)>> {
    Ablation::ALL
        .iter()
        .map(|&a| {
            let out = finish(
                clip,
                edited.clone(),
                &cfg.post.with_order(a.steps()),
                cfg.metrics.sim_floor,
            )?;
            Ok((a, out.report))
        })
        .collect()
}

/// The whole pipeline from configuration to report.
pub fn run(cfg: &RunConfig) -> Result<(TrainedModels, SourceClip, RunOutput)> {
    cfg.validate()?;
    let triplets = forge_dataset(&cfg.dataset)?;
    let models = train_models(&triplets, cfg)?;
    let clip = source_clip(cfg)?;
    let edited = edit_clip(&models, &clip, &cfg.guidance)?;
    let out = finish(&clip, edited, &cfg.post, cfg.metrics.sim_floor)?;
    Ok((models, clip, out))
}
