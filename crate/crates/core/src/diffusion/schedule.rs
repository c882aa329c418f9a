//! Variance-preserving cosine noise schedule.

use serde::{Deserialize, Serialize};

use super::tensor::Latent;
use crate::error::{Error, Result};

/// Offset of the cosine schedule; keeps `β_1` from vanishing.
pub const COSINE_OFFSET: f64 = 0.008;
/// Upper bound on per-step `β`, which keeps `α_T` away from zero.
pub const MAX_BETA: f64 = 0.999;

/// A timestep as the networks see it: its position in the schedule and the
/// signal and noise scales there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timestep {
    pub frac: f64,
    pub alpha: f64,
    pub sigma: f64,
}

/// `alpha[t]` and `sigma[t]` for `t = 0..=T`; index 0 is the clean signal
/// (`α = 1`, `σ = 0`) so samplers can step down to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Loss weights; all ones.
    pub weight: Vec<f64>,
}

fn cosine_alpha_bar(t: f64) -> f64 {
    let f = |u: f64| {
        ((u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2)
            .cos()
            .powi(2)
    };
    f(t) / f(0.0)
}

pub fn make_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::Config(format!("schedule needs at least 2 steps, got {steps}")));
    }
    let mut alpha_bar = vec![1.0];
    for t in 1..=steps {
        let prev = cosine_alpha_bar((t - 1) as f64 / steps as f64);
        let cur = cosine_alpha_bar(t as f64 / steps as f64);
        let beta = (1.0 - cur / prev).min(MAX_BETA);
        alpha_bar.push(alpha_bar[t - 1] * (1.0 - beta));
    }
    Ok(NoiseSchedule {
        steps,
        alpha: alpha_bar.iter().map(|a| a.sqrt()).collect(),
        sigma: alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect(),
        weight: vec![1.0; steps + 1],
    })
}

impl NoiseSchedule {
    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::Config(format!("timestep {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    pub fn timestep(&self, t: usize) -> Timestep {
        Timestep {
            frac: t as f64 / self.steps as f64,
            alpha: self.alpha[t],
            sigma: self.sigma[t],
        }
    }
}

/// `α_t·z + σ_t·ε`.
pub fn add_noise(z: &Latent, eps: &Latent, t: usize, sched: &NoiseSchedule) -> Result<Latent> {
    sched.check_step(t)?;
    let (a, s) = (sched.alpha[t], sched.sigma[t]);
    z.zip_with(eps, |zv, ev| a * zv + s * ev)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn variance_preserving_and_monotone() {
        let s = make_schedule(50).unwrap();
        for t in 0..=50 {
            assert!((s.alpha[t].powi(2) + s.sigma[t].powi(2) - 1.0).abs() < 1e-12);
        }
        assert!(s.alpha.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha[1] > 0.99);
        assert!(s.alpha[50] < 0.1);
        assert!(s.weight.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn first_step_matches_closed_form() {
        // ᾱ_1 = f(1/T)/f(0) directly, no clipping involved
        let s = make_schedule(50).unwrap();
        let f = |u: f64| ((u + 0.008) / 1.008 * std::f64::consts::PI / 2.0).cos().powi(2);
        let expect = (f(0.02) / f(0.0)).sqrt();
        assert!((s.alpha[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn too_short_schedule() {
        assert!(matches!(make_schedule(1), Err(Error::Config(_))));
        assert!(make_schedule(2).is_ok());
    }

    #[test]
    fn add_noise_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = make_schedule(50).unwrap();
        let z = Latent::randn(12, 4, 4, &mut rng);
        let e = Latent::randn(12, 4, 4, &mut rng);
        let out = add_noise(&z, &e, 25, &s).unwrap();
        for i in 0..z.data().len() {
            let expect = s.alpha[25] * z.data()[i] + s.sigma[25] * e.data()[i];
            assert_eq!(out.data()[i], expect);
        }
        let zero = Latent::zeros(12, 4, 4);
        let scaled = add_noise(&z, &zero, 10, &s).unwrap();
        assert_eq!(scaled, z.map(|v| s.alpha[10] * v));
        assert!(matches!(add_noise(&z, &e, 0, &s), Err(Error::Config(_))));
        assert!(matches!(add_noise(&z, &e, 51, &s), Err(Error::Config(_))));
    }

    #[test]
    fn noising_keeps_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = make_schedule(50).unwrap();
        let z = Latent::randn(1, 100, 100, &mut rng);
        let e = Latent::randn(1, 100, 100, &mut rng);
        for t in [1, 10, 25, 40, 50] {
            let x = add_noise(&z, &e, t, &s).unwrap();
            let n = x.data().len() as f64;
            let mean = x.data().iter().sum::<f64>() / n;
            let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!((var - 1.0).abs() < 0.05, "t={t}: var {var}");
        }
    }
}
