//! Deterministic two-model sampling.
//!
//! While `t > K` the prompt model and the image-guided source model are
//! blended with weight `v`; the last `K` steps use the source model alone.
//! Every frame of a video starts from the same seeded initial latent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{cfg_image, decode, encode, make_schedule, ImageModel, Latent, NoiseSchedule, TextModel};
use crate::error::{Error, Result};
use crate::imaging::{Frame, Video};

pub const REFERENCE_STEPS: usize = 50;
pub const REFERENCE_SWITCH_K: usize = 20;
pub const REFERENCE_MIX_V: f64 = 0.9;
/// Image guidance scale; no reference value, chosen here.
pub const DEFAULT_IMAGE_SCALE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Denoising steps `T`.
    pub steps: usize,
    /// Final steps handled by the source model alone.
    pub k: usize,
    /// Weight of the prompt model while both run.
    pub v: f64,
    /// Image guidance scale.
    pub s: f64,
    pub seed: u64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            steps: REFERENCE_STEPS,
            k: REFERENCE_SWITCH_K,
            v: REFERENCE_MIX_V,
            s: DEFAULT_IMAGE_SCALE,
            seed: 0,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Config(format!("need at least 2 steps, got {}", self.steps)));
        }
        if self.k > self.steps {
            return Err(Error::Config(format!("K = {} exceeds T = {}", self.k, self.steps)));
        }
        if !(0.0..=1.0).contains(&self.v) {
            return Err(Error::Config(format!("v must lie in [0, 1], got {}", self.v)));
        }
        if self.s.is_nan() || self.s < 1.0 {
            return Err(Error::Config(format!("s must be >= 1, got {}", self.s)));
        }
        Ok(())
    }
}

/// `v·eps_t + (1 − v)·eps_i`.
pub fn combined_noise(eps_t: &Latent, eps_i: &Latent, v: f64) -> Result<Latent> {
    eps_t.zip_with(eps_i, |a, b| v * a + (1.0 - v) * b)
}

/// Deterministic (η = 0) DDIM update from `t` to `t_prev`.
pub fn ddim_step(z_t: &Latent, eps: &Latent, t: usize, t_prev: usize, sched: &NoiseSchedule) -> Result<Latent> {
    if t_prev > t || t > sched.steps {
        return Err(Error::Config(format!("invalid step {t} -> {t_prev}")));
    }
    let (a, s) = (sched.alpha[t], sched.sigma[t]);
    if a == 0.0 {
        return Err(Error::Numerics(format!("alpha vanishes at step {t}")));
    }
    let (ap, sp) = (sched.alpha[t_prev], sched.sigma[t_prev]);
    z_t.zip_with(eps, |z, e| {
        let x0 = (z - s * e) / a;
        ap * x0 + sp * e
    })
}

/// DDIM update with the clean-signal estimate clamped per channel to
/// `[lo, hi]`; the noise estimate is re-derived from the clamped value so the
/// step stays on the deterministic trajectory.
pub fn ddim_step_clamped(
    z_t: &Latent,
    eps: &Latent,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    bounds: &(Vec<f64>, Vec<f64>),
) -> Result<Latent> {
    if t_prev > t || t > sched.steps {
        return Err(Error::Config(format!("invalid step {t} -> {t_prev}")));
    }
    if bounds.0.len() != z_t.channels() || bounds.1.len() != z_t.channels() {
        return Err(Error::Shape("clamp bounds do not match latent channels".into()));
    }
    let (a, s) = (sched.alpha[t], sched.sigma[t]);
    if a == 0.0 {
        return Err(Error::Numerics(format!("alpha vanishes at step {t}")));
    }
    let (ap, sp) = (sched.alpha[t_prev], sched.sigma[t_prev]);
    let mut out = z_t.clone();
    for c in 0..z_t.channels() {
        let (lo, hi) = (bounds.0[c], bounds.1[c]);
        for ((o, &z), &e) in out.channel_mut(c).iter_mut().zip(z_t.channel(c)).zip(eps.channel(c)) {
            let x0 = ((z - s * e) / a).clamp(lo, hi);
            let e = if s > 0.0 { (z - a * x0) / s } else { e };
            *o = ap * x0 + sp * e;
        }
    }
    Ok(out)
}

/// The shared starting latent of every frame.
pub fn initial_latent(seed: u64, shape: (usize, usize, usize)) -> Latent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Latent::randn(shape.0, shape.1, shape.2, &mut rng)
}

/// Runs the full reverse process from `z_start`, calling `text_eps` only
/// for `t > K` and `image_eps` at every step. With `bounds`, each clean
/// estimate is clamped per channel.
pub fn dual_denoise(
    z_start: Latent,
    g: &GuidanceConfig,
    sched: &NoiseSchedule,
    bounds: Option<&(Vec<f64>, Vec<f64>)>,
    mut text_eps: impl FnMut(&Latent, usize) -> Result<Latent>,
    mut image_eps: impl FnMut(&Latent, usize) -> Result<Latent>,
) -> Result<Latent> {
    g.validate()?;
    let mut z = z_start;
    for t in (1..=g.steps).rev() {
        let eps_i = image_eps(&z, t)?;
        let eps = if t > g.k {
            combined_noise(&text_eps(&z, t)?, &eps_i, g.v)?
        } else {
            eps_i
        };
        z = match bounds {
            Some(b) => ddim_step_clamped(&z, &eps, t, t - 1, sched, b)?,
            None => ddim_step(&z, &eps, t, t - 1, sched)?,
        };
        if !z.is_finite() {
            return Err(Error::Numerics(format!("non-finite latent after step {t}")));
        }
    }
    Ok(z)
}

fn check_models(text: &TextModel, image: &ImageModel) -> Result<()> {
    if text.stats != image.stats {
        return Err(Error::Config(
            "models were trained with different latent whitening".into(),
        ));
    }
    Ok(())
}

fn edit_with_start(
    src: &Frame,
    prompt: &crate::diffusion::PromptEmbedding,
    text: &TextModel,
    image: &ImageModel,
    g: &GuidanceConfig,
    sched: &NoiseSchedule,
    z_start: Latent,
) -> Result<Frame> {
    let c_i = image.stats.whiten(&encode(src)?)?;
    z_start.ensure_shape(&c_i)?;
    let bounds = image.stats.whitened_bounds();
    let z0 = dual_denoise(
        z_start,
        g,
        sched,
        Some(&bounds),
        |z, t| text.unet.forward(z, sched.timestep(t), Some(prompt.as_slice())),
        |z, t| cfg_image(&image.unet, z, &c_i, g.s, sched.timestep(t)),
    )?;
    decode(&image.stats.unwhiten(&z0)?)
}

pub fn edit_frame(
    src: &Frame,
    prompt: &str,
    text: &TextModel,
    image: &ImageModel,
    g: &GuidanceConfig,
) -> Result<Frame> {
    g.validate()?;
    check_models(text, image)?;
    let c = text.prompts.encode(prompt)?;
    let sched = make_schedule(g.steps)?;
    let shape = encode(src)?.shape();
    edit_with_start(src, &c, text, image, g, &sched, initial_latent(g.seed, shape))
}

/// Edits every frame independently from one shared initial latent. Frames
/// run in parallel; the result does not depend on scheduling.
pub fn edit_video(
    src: &Video,
    prompt: &str,
    text: &TextModel,
    image: &ImageModel,
    g: &GuidanceConfig,
) -> Result<Video> {
    g.validate()?;
    check_models(text, image)?;
    let c = text.prompts.encode(prompt)?;
    let sched = make_schedule(g.steps)?;
    let shape = encode(&src.frames()[0])?.shape();
    let z_start = initial_latent(g.seed, shape);
    let frames = src
        .frames()
        .par_iter()
        .map(|f| edit_with_start(f, &c, text, image, g, &sched, z_start.clone()))
        .collect::<Result<Vec<_>>>()?;
    src.with_frames(frames)
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use rand::SeedableRng;

    use super::*;
    use crate::diffusion::{add_noise, LatentStats, LATENT_CHANNELS};
    use crate::synthface::{render_face, sample_face_params, DEFAULT_CANVAS};

    fn models() -> (TextModel, ImageModel) {
        let vocab: Vec<String> = ["a", "bow", "hat", "with", "wearing"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let stats = LatentStats::identity(LATENT_CHANNELS);
        let mut text = TextModel::new(&vocab, stats.clone(), 50, 1).unwrap();
        let mut image = ImageModel::new(stats, 50, 2).unwrap();
        // untrained networks barely react to their inputs; perturb them
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in text.unet.params_mut().iter_mut().chain(image.unet.params_mut()) {
            *p += 0.02 * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng);
        }
        (text, image)
    }

    fn face(seed: u64) -> Frame {
        render_face(&sample_face_params(seed, DEFAULT_CANVAS).unwrap(), DEFAULT_CANVAS)
            .unwrap()
            .0
    }

    fn quick(k: usize, v: f64) -> GuidanceConfig {
        GuidanceConfig {
            steps: 6,
            k,
            v,
            s: 1.5,
            seed: 3,
        }
    }

    #[test]
    fn degenerate_mixing_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Latent::randn(3, 2, 2, &mut rng);
        let b = Latent::randn(3, 2, 2, &mut rng);
        assert_eq!(combined_noise(&a, &b, 1.0).unwrap(), a);
        assert_eq!(combined_noise(&a, &b, 0.0).unwrap(), b);
        let mix = combined_noise(&a, &b, 0.9).unwrap();
        for i in 0..mix.data().len() {
            assert!((mix.data()[i] - (0.9 * a.data()[i] + 0.1 * b.data()[i])).abs() < 1e-15);
        }
        assert!(matches!(
            combined_noise(&a, &Latent::zeros(3, 2, 3), 0.5),
            Err(Error::Shape(_))
        ));
        assert_eq!((REFERENCE_STEPS, REFERENCE_SWITCH_K, REFERENCE_MIX_V), (50, 20, 0.9));
    }

    #[test]
    fn ddim_inverts_known_noise() {
        let sched = make_schedule(50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z0 = Latent::randn(12, 4, 4, &mut rng);
        let eps = Latent::randn(12, 4, 4, &mut rng);
        for t in [1, 25, 50] {
            let zt = add_noise(&z0, &eps, t, &sched).unwrap();
            let back = ddim_step(&zt, &eps, t, 0, &sched).unwrap();
            assert!(back.max_abs_diff(&z0).unwrap() < 1e-5, "t={t}");
            assert!(ddim_step(&zt, &eps, t, t, &sched).unwrap().max_abs_diff(&zt).unwrap() < 1e-6);
        }
        // elementwise oracle for one step
        let zt = add_noise(&z0, &eps, 30, &sched).unwrap();
        let e2 = Latent::randn(12, 4, 4, &mut rng);
        let out = ddim_step(&zt, &e2, 30, 29, &sched).unwrap();
        for i in 0..out.data().len() {
            let x0 = (zt.data()[i] - sched.sigma[30] * e2.data()[i]) / sched.alpha[30];
            let expect = sched.alpha[29] * x0 + sched.sigma[29] * e2.data()[i];
            assert!((out.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn ddim_rejects_vanishing_alpha() {
        let mut sched = make_schedule(4).unwrap();
        sched.alpha[4] = 0.0;
        let z = Latent::zeros(1, 2, 2);
        assert!(matches!(ddim_step(&z, &z, 4, 3, &sched), Err(Error::Numerics(_))));
    }

    #[test]
    fn prompt_model_evaluated_only_above_k() {
        let sched = make_schedule(10).unwrap();
        for k in [0, 4, 10] {
            let g = GuidanceConfig {
                steps: 10,
                k,
                ..GuidanceConfig::default()
            };
            let (nt, ni) = (Cell::new(0), Cell::new(0));
            let mut seen_t = Vec::new();
            dual_denoise(
                Latent::zeros(1, 2, 2),
                &g,
                &sched,
                None,
                |z, t| {
                    nt.set(nt.get() + 1);
                    seen_t.push(t);
                    Ok(z.clone())
                },
                |z, _| {
                    ni.set(ni.get() + 1);
                    Ok(z.map(|v| 0.5 * v))
                },
            )
            .unwrap();
            assert_eq!((nt.get(), ni.get()), (10 - k, 10));
            assert!(seen_t.iter().all(|&t| t > k));
        }
    }

    #[test]
    fn k_equal_t_is_image_only() {
        let (text, image) = models();
        let src = face(1);
        let g = quick(6, 0.9);
        let out = edit_frame(&src, "a bow", &text, &image, &g).unwrap();
        let sched = make_schedule(6).unwrap();
        let c_i = image.stats.whiten(&encode(&src).unwrap()).unwrap();
        let mut z = initial_latent(g.seed, c_i.shape());
        let bounds = image.stats.whitened_bounds();
        for t in (1..=6).rev() {
            let e = cfg_image(&image.unet, &z, &c_i, g.s, sched.timestep(t)).unwrap();
            z = ddim_step_clamped(&z, &e, t, t - 1, &sched, &bounds).unwrap();
        }
        assert_eq!(out, decode(&image.stats.unwhiten(&z).unwrap()).unwrap());
    }

    #[test]
    fn zero_weight_ignores_prompt() {
        let (text, image) = models();
        let src = face(2);
        let g = quick(2, 0.0);
        let a = edit_frame(&src, "a bow", &text, &image, &g).unwrap();
        let b = edit_frame(&src, "wearing a hat", &text, &image, &g).unwrap();
        assert_eq!(a, b);
        let g = quick(2, 0.9);
        let c = edit_frame(&src, "wearing a hat", &text, &image, &g).unwrap();
        assert_ne!(a, c);
        assert!(matches!(
            edit_frame(&src, "a unicorn", &text, &image, &g),
            Err(Error::Vocab(_))
        ));
    }

    #[test]
    fn video_frames_share_start_and_are_deterministic() {
        let (text, image) = models();
        let (f1, f2) = (face(3), face(4));
        let v = Video::new(vec![f1.clone(), f2, f1], 24.0).unwrap();
        let g = quick(2, 0.9);
        let out = edit_video(&v, "a bow", &text, &image, &g).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.frames()[0], out.frames()[2]);
        assert_eq!(
            out.frames()[0],
            edit_frame(&v.frames()[0], "a bow", &text, &image, &g).unwrap()
        );
        assert_eq!(out, edit_video(&v, "a bow", &text, &image, &g).unwrap());
        assert!(out
            .frames()
            .iter()
            .all(|f| f.data().iter().all(|&p| (0.0..=1.0).contains(&p))));
    }

    #[test]
    fn guidance_config_checks() {
        assert!(GuidanceConfig::default().validate().is_ok());
        for bad in [
            quick(7, 0.5),
            quick(2, 1.5),
            GuidanceConfig {
                s: 0.9,
                ..quick(2, 0.5)
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
