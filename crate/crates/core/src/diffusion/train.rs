//! Noise-prediction training for the prompt-conditioned and the
//! source-conditioned networks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codec::{encode, LatentStats, LATENT_CHANNELS};
use super::prompt::{PromptEncoder, PROMPT_DIM};
use super::schedule::{add_noise, make_schedule, NoiseSchedule};
use super::tensor::{Latent, Tensor};
use super::unet::{UNetArch, UNetModel};
use crate::dataset::{build_vocab, derive_seed, TrainingTriplet};
use crate::error::{Error, Result};

/// Reference schedule for the prompt-conditioned model.
pub const REFERENCE_TEXT_STEPS: usize = 400;
pub const REFERENCE_TEXT_BATCH: usize = 1;
pub const REFERENCE_SUBSET_PER_SUBJECT: usize = 10;
/// Reference schedule for the source-conditioned model.
pub const REFERENCE_IMAGE_STEPS: usize = 30_000;
pub const REFERENCE_IMAGE_BATCH: usize = 4;
pub const REFERENCE_LR: f64 = 5e-5;
pub const REFERENCE_SAMPLING_STEPS: usize = 50;

/// Desk-scale step count for the source-conditioned model (a tenth of the
/// reference count).
pub const DESK_IMAGE_STEPS: usize = 3_000;
/// Learning rate used at desk scale, where networks start from scratch.
pub const DESK_LR: f64 = 1e-3;
pub const DEFAULT_P_DROP: f64 = 0.05;

const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Timesteps of the noise schedule the network is trained on.
    pub schedule_steps: usize,
    /// Records drawn per effect (prompt-conditioned model only).
    pub subset_size: usize,
    /// Probability of replacing the source condition by the null latent
    /// (source-conditioned model only).
    pub p_drop: f64,
    /// Random horizontal flips applied jointly to source and edited image.
    pub flip: bool,
}

impl TrainConfig {
    pub fn text_default() -> Self {
        TrainConfig {
            steps: REFERENCE_TEXT_STEPS,
            lr: DESK_LR,
            batch_size: REFERENCE_TEXT_BATCH,
            seed: 0,
            schedule_steps: REFERENCE_SAMPLING_STEPS,
            subset_size: REFERENCE_SUBSET_PER_SUBJECT,
            p_drop: 0.0,
            // captions name the head pose, which a flip would contradict
            flip: false,
        }
    }

    pub fn image_default() -> Self {
        TrainConfig {
            steps: DESK_IMAGE_STEPS,
            lr: DESK_LR,
            batch_size: REFERENCE_IMAGE_BATCH,
            seed: 1,
            schedule_steps: REFERENCE_SAMPLING_STEPS,
            subset_size: 0,
            p_drop: DEFAULT_P_DROP,
            flip: true,
        }
    }

    /// Rejects unusable settings; returns warnings for legal but suspicious
    /// ones.
    pub fn validate_image(&self) -> Result<Vec<String>> {
        self.validate_common()?;
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::Config(format!("p_drop must lie in [0, 1), got {}", self.p_drop)));
        }
        let mut warnings = Vec::new();
        if self.p_drop == 0.0 {
            warnings.push(
                "p_drop = 0: the null-source branch is never trained, so image guidance with s > 1 is meaningless"
                    .to_string(),
            );
        }
        Ok(warnings)
    }

    pub fn validate_text(&self) -> Result<Vec<String>> {
        self.validate_common()?;
        if self.subset_size == 0 {
            return Err(Error::Config("subset_size must be positive".into()));
        }
        Ok(Vec::new())
    }

    fn validate_common(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        make_schedule(self.schedule_steps).map(|_| ())
    }
}

/// Per-step mean loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub losses: Vec<f64>,
}

impl LossTrace {
    fn window_mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Mean over the first `frac` of the steps (at least one step).
    pub fn head_mean(&self, frac: f64) -> f64 {
        let n = ((self.losses.len() as f64 * frac).ceil() as usize)
            .max(1)
            .min(self.losses.len());
        Self::window_mean(&self.losses[..n])
    }

    pub fn tail_mean(&self, frac: f64) -> f64 {
        let n = ((self.losses.len() as f64 * frac).ceil() as usize)
            .max(1)
            .min(self.losses.len());
        Self::window_mean(&self.losses[self.losses.len() - n..])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextModel {
    pub unet: UNetModel,
    pub prompts: PromptEncoder,
    pub stats: LatentStats,
    pub schedule_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageModel {
    pub unet: UNetModel,
    pub stats: LatentStats,
    pub schedule_steps: usize,
    pub seed: u64,
}

impl TextModel {
    pub fn new(vocab: &[String], stats: LatentStats, schedule_steps: usize, seed: u64) -> Result<Self> {
        Ok(TextModel {
            unet: UNetModel::new(UNetArch::text(LATENT_CHANNELS, PROMPT_DIM), derive_seed(seed, 0))?,
            prompts: PromptEncoder::new(vocab, PROMPT_DIM, derive_seed(seed, 1))?,
            stats,
            schedule_steps,
            seed,
        })
    }
}

impl ImageModel {
    pub fn new(stats: LatentStats, schedule_steps: usize, seed: u64) -> Result<Self> {
        Ok(ImageModel {
            unet: UNetModel::new(UNetArch::image(LATENT_CHANNELS), derive_seed(seed, 0))?,
            stats,
            schedule_steps,
            seed,
        })
    }
}

/// Whitening constants over the source and edited latents of a dataset.
pub fn measure_latent_stats(triplets: &[TrainingTriplet]) -> Result<LatentStats> {
    let latents = triplets
        .iter()
        .flat_map(|t| [&t.source, &t.edited])
        .map(encode)
        .collect::<Result<Vec<_>>>()?;
    LatentStats::measure(&latents)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[f64]) {
        self.t += 1;
        let (b1, b2) = ADAM_BETAS;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let mut k = 0;
        for block in params.iter_mut() {
            for p in block.iter_mut() {
                let g = grads[k];
                self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
                self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
                let mhat = self.m[k] / c1;
                let vhat = self.v[k] / c2;
                *p -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                k += 1;
            }
        }
    }
}

/// One noised training example, drawn up front so the batch can be
/// evaluated in parallel without touching the RNG.
struct Draw {
    index: usize,
    t: usize,
    eps: Latent,
    flip: bool,
    drop: bool,
}

fn draw(
    rng: &mut ChaCha8Rng,
    n: usize,
    sched: &NoiseSchedule,
    shape: (usize, usize, usize),
    cfg: &TrainConfig,
) -> Draw {
    let index = rng.random_range(0..n);
    let t = rng.random_range(1..=sched.steps);
    let eps = Tensor::randn(shape.0, shape.1, shape.2, rng);
    let flip = cfg.flip && rng.random_bool(0.5);
    let drop = cfg.p_drop > 0.0 && rng.random_bool(cfg.p_drop);
    Draw {
        index,
        t,
        eps,
        flip,
        drop,
    }
}

/// Squared-error loss and `dL/d(prediction)` for one example.
fn mse(pred: &Tensor, eps: &Tensor, weight: f64, scale: f64) -> (f64, Tensor) {
    let n = pred.data().len() as f64;
    let loss = weight
        * pred
            .zip_with(eps, |a, b| (a - b) * (a - b))
            .expect("same shape")
            .data()
            .iter()
            .sum::<f64>()
        / n;
    let d = pred
        .zip_with(eps, |a, b| 2.0 * weight * (a - b) / n * scale)
        .expect("same shape");
    (loss, d)
}

fn check_loss(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step, loss })
    }
}

fn sum_grads(parts: Vec<(f64, Vec<f64>, Vec<f64>)>, n_unet: usize, n_extra: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let mut loss = 0.0;
    let mut g = vec![0.0; n_unet];
    let mut ge = vec![0.0; n_extra];
    for (l, gu, gx) in parts {
        loss += l;
        g.iter_mut().zip(gu).for_each(|(a, b)| *a += b);
        ge.iter_mut().zip(gx).for_each(|(a, b)| *a += b);
    }
    (loss, g, ge)
}

/// Selects `subset_size` records per effect, seeded.
fn effect_subset(triplets: &[TrainingTriplet], subset_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in triplets.iter().enumerate() {
        groups.entry(t.meta.effect.as_str()).or_default().push(i);
    }
    let mut picked = Vec::new();
    for (effect, mut idx) in groups {
        if idx.len() < subset_size {
            return Err(Error::Config(format!(
                "effect `{effect}` has {} records, subset needs {subset_size}",
                idx.len()
            )));
        }
        idx.shuffle(rng);
        picked.extend_from_slice(&idx[..subset_size]);
    }
    Ok(picked)
}

/// Trains the prompt-conditioned network and its token embeddings on the
/// edited images of a per-effect subset.
pub fn train_text_model(
    triplets: &[TrainingTriplet],
    stats: &LatentStats,
    cfg: &TrainConfig,
) -> Result<(TextModel, LossTrace)> {
    cfg.validate_text()?;
    if triplets.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let vocab = build_vocab(triplets.iter().map(|t| t.prompt.as_str()));
    let mut model = TextModel::new(&vocab, stats.clone(), cfg.schedule_steps, cfg.seed)?;
    let sched = make_schedule(cfg.schedule_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let subset = effect_subset(triplets, cfg.subset_size, &mut rng)?;

    let samples = subset
        .iter()
        .map(|&i| {
            let t = &triplets[i];
            Ok((stats.whiten(&encode(&t.edited)?)?, model.prompts.token_ids(&t.prompt)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let shape = samples[0].0.shape();

    let n_unet = model.unet.n_params();
    let n_table = model.prompts.table().len();
    let mut adam = Adam::new(n_unet + n_table, cfg.lr);
    let mut trace = LossTrace::default();
    let scale = 1.0 / cfg.batch_size as f64;

    for step in 0..cfg.steps {
        let draws: Vec<Draw> = (0..cfg.batch_size)
            .map(|_| draw(&mut rng, samples.len(), &sched, shape, cfg))
            .collect();
        let parts = draws
            .par_iter()
            .map(|d| -> Result<(f64, Vec<f64>, Vec<f64>)> {
                let (z, ids) = &samples[d.index];
                let c = model.prompts.embed_ids(ids);
                let z_t = add_noise(z, &d.eps, d.t, &sched)?;
                let (pred, cache) = model
                    .unet
                    .forward_cached(&z_t, sched.timestep(d.t), Some(c.as_slice()))?;
                let (loss, dpred) = mse(&pred, &d.eps, sched.weight[d.t], scale);
                let mut g = vec![0.0; n_unet];
                let dc = model.unet.backward(&cache, &dpred, &mut g).expect("prompt-conditioned");
                let mut ge = vec![0.0; n_table];
                model.prompts.backward(ids, &dc, &mut ge);
                Ok((loss, g, ge))
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, mut g, ge) = sum_grads(parts, n_unet, n_table);
        let loss = loss * scale;
        check_loss(step, loss)?;
        trace.losses.push(loss);
        g.extend(ge);
        let (unet, prompts) = (&mut model.unet, &mut model.prompts);
        adam.step(&mut [unet.params_mut(), prompts.table_mut()], &g);
    }
    Ok((model, trace))
}

/// Trains the source-conditioned network: edited latents are noised and the
/// source latent rides along as extra input channels.
pub fn train_image_model(
    triplets: &[TrainingTriplet],
    stats: &LatentStats,
    cfg: &TrainConfig,
) -> Result<(ImageModel, LossTrace)> {
    cfg.validate_image()?;
    if triplets.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut model = ImageModel::new(stats.clone(), cfg.schedule_steps, cfg.seed)?;
    let sched = make_schedule(cfg.schedule_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));

    let prep = |f: &crate::imaging::Frame| stats.whiten(&encode(f)?);
    // (edited, source) latents, plain and mirrored
    let samples = triplets
        .iter()
        .map(|t| {
            let plain = (prep(&t.edited)?, prep(&t.source)?);
            let mirrored = if cfg.flip {
                Some((prep(&t.edited.flip_horizontal())?, prep(&t.source.flip_horizontal())?))
            } else {
                None
            };
            Ok((plain, mirrored))
        })
        .collect::<Result<Vec<_>>>()?;
    let shape = samples[0].0 .0.shape();
    let null = Tensor::zeros(shape.0, shape.1, shape.2);

    let n_unet = model.unet.n_params();
    let mut adam = Adam::new(n_unet, cfg.lr);
    let mut trace = LossTrace::default();
    let scale = 1.0 / cfg.batch_size as f64;

    for step in 0..cfg.steps {
        let draws: Vec<Draw> = (0..cfg.batch_size)
            .map(|_| draw(&mut rng, samples.len(), &sched, shape, cfg))
            .collect();
        let parts = draws
            .par_iter()
            .map(|d| -> Result<(f64, Vec<f64>, Vec<f64>)> {
                let (plain, mirrored) = &samples[d.index];
                let (z, src) = match (d.flip, mirrored) {
                    (true, Some(m)) => m,
                    _ => plain,
                };
                let cond = if d.drop { &null } else { src };
                let z_t = add_noise(z, &d.eps, d.t, &sched)?;
                let x = z_t.concat_channels(cond)?;
                let (pred, cache) = model.unet.forward_cached(&x, sched.timestep(d.t), None)?;
                let (loss, dpred) = mse(&pred, &d.eps, sched.weight[d.t], scale);
                let mut g = vec![0.0; n_unet];
                model.unet.backward(&cache, &dpred, &mut g);
                Ok((loss, g, Vec::new()))
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, g, _) = sum_grads(parts, n_unet, 0);
        let loss = loss * scale;
        check_loss(step, loss)?;
        trace.losses.push(loss);
        adam.step(&mut [model.unet.params_mut()], &g);
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::forge_triplets;
    use crate::effects::builtin_effect;
    use crate::synthface::DEFAULT_CANVAS;

    fn toy_set() -> Vec<TrainingTriplet> {
        let e = vec![builtin_effect("bow").unwrap()];
        forge_triplets(4, &e, 2, 3, DEFAULT_CANVAS).unwrap()
    }

    fn quick(mut cfg: TrainConfig, steps: usize) -> TrainConfig {
        cfg.steps = steps;
        cfg.subset_size = 8;
        cfg
    }

    #[test]
    fn reference_defaults_recorded() {
        assert_eq!(
            (REFERENCE_TEXT_STEPS, REFERENCE_TEXT_BATCH, REFERENCE_SUBSET_PER_SUBJECT),
            (400, 1, 10)
        );
        assert_eq!((REFERENCE_IMAGE_STEPS, REFERENCE_IMAGE_BATCH), (30_000, 4));
        assert_eq!(REFERENCE_LR, 5e-5);
        assert_eq!(REFERENCE_SAMPLING_STEPS, 50);
        assert_eq!(DESK_IMAGE_STEPS * 10, REFERENCE_IMAGE_STEPS);
        let t = TrainConfig::text_default();
        assert_eq!((t.steps, t.batch_size, t.subset_size), (400, 1, 10));
        let i = TrainConfig::image_default();
        assert_eq!((i.steps, i.batch_size), (3_000, 4));
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let data = toy_set();
        let stats = measure_latent_stats(&data).unwrap();
        let cfg = quick(TrainConfig::text_default(), 0);
        let (m, trace) = train_text_model(&data, &stats, &cfg).unwrap();
        assert!(trace.losses.is_empty());
        let vocab = build_vocab(data.iter().map(|t| t.prompt.as_str()));
        assert_eq!(
            m,
            TextModel::new(&vocab, stats.clone(), cfg.schedule_steps, cfg.seed).unwrap()
        );

        let cfg = quick(TrainConfig::image_default(), 0);
        let (m, _) = train_image_model(&data, &stats, &cfg).unwrap();
        assert_eq!(m, ImageModel::new(stats, cfg.schedule_steps, cfg.seed).unwrap());
    }

    // The output skip already predicts σ·z_t at init, so the starting loss is
    // about E[α²] rather than 1 and a one-third drop is the bar.
    #[test]
    fn text_loss_decreases() {
        let data = toy_set();
        let stats = measure_latent_stats(&data).unwrap();
        let (_, trace) = train_text_model(&data, &stats, &quick(TrainConfig::text_default(), 400)).unwrap();
        let (head, tail) = (trace.head_mean(0.1), trace.tail_mean(0.1));
        assert!(tail < 0.67 * head, "loss {head} -> {tail}");
    }

    #[test]
    fn image_loss_decreases() {
        let data = toy_set();
        let stats = measure_latent_stats(&data).unwrap();
        let (_, trace) = train_image_model(&data, &stats, &quick(TrainConfig::image_default(), 300)).unwrap();
        let (head, tail) = (trace.head_mean(0.1), trace.tail_mean(0.1));
        assert!(tail < 0.67 * head, "loss {head} -> {tail}");
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let data = toy_set();
        let stats = measure_latent_stats(&data).unwrap();
        let cfg = quick(TrainConfig::image_default(), 5);
        let a = train_image_model(&data, &stats, &cfg).unwrap();
        let b = train_image_model(&data, &stats, &cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(a.0, train_image_model(&data, &stats, &other).unwrap().0);
    }

    #[test]
    fn config_checks() {
        let mut cfg = TrainConfig::image_default();
        cfg.p_drop = 0.0;
        assert_eq!(cfg.validate_image().unwrap().len(), 1);
        cfg.p_drop = 1.0;
        assert!(matches!(cfg.validate_image(), Err(Error::Config(_))));
        let mut cfg = TrainConfig::text_default();
        cfg.lr = 0.0;
        assert!(matches!(cfg.validate_text(), Err(Error::Config(_))));

        let data = toy_set();
        let stats = measure_latent_stats(&data).unwrap();
        let too_big = TrainConfig::text_default(); // subset 10 > 8 records
        assert!(matches!(
            train_text_model(&data, &stats, &too_big),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let data = toy_set();
        let stats = measure_latent_stats(&data).unwrap();
        let mut cfg = quick(TrainConfig::image_default(), 50);
        cfg.lr = 1e30;
        match train_image_model(&data, &stats, &cfg) {
            Err(Error::Divergence { step, .. }) => assert!(step > 0 && step < 50),
            other => panic!("expected divergence, got {:?}", other.map(|(_, t)| t.losses.len())),
        }
    }
}
