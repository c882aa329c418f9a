//! Fixed latent codec: pixels rescaled to `[-1, 1]`, then an orthonormal
//! 2×2 Haar block transform per colour channel. Latent channel `ch * 4 + band`
//! holds band `LL, LH, HL, HH` of colour channel `ch`.

use serde::{Deserialize, Serialize};

use super::tensor::Latent;
use crate::error::{Error, Result};
use crate::imaging::Frame;

pub const BANDS: usize = 4;
/// Latent channels for an RGB frame.
pub const LATENT_CHANNELS: usize = 3 * BANDS;
/// Lower bound on whitening scales so near-constant bands are not blown up.
pub const MIN_WHITEN_STD: f64 = 1e-2;
/// Every Haar coefficient of a frame in `[-1, 1]` lies within this bound.
pub const COEFF_BOUND: f64 = 2.0;

pub fn encode(f: &Frame) -> Result<Latent> {
    let (hh, ww, c) = f.shape();
    if c != 3 {
        return Err(Error::Shape(format!("codec needs RGB frames, got {c} channels")));
    }
    if hh % 2 != 0 || ww % 2 != 0 {
        return Err(Error::Shape(format!("codec needs even dimensions, got {hh}x{ww}")));
    }
    let (h, w) = (hh / 2, ww / 2);
    let mut z = Latent::zeros(LATENT_CHANNELS, h, w);
    let px = |y: usize, x: usize, ch: usize| 2.0 * f.get(y, x, ch) as f64 - 1.0;
    let plane = h * w;
    let data = z.data_mut();
    for ch in 0..3 {
        for i in 0..h {
            for j in 0..w {
                let a = px(2 * i, 2 * j, ch);
                let b = px(2 * i, 2 * j + 1, ch);
                let c = px(2 * i + 1, 2 * j, ch);
                let d = px(2 * i + 1, 2 * j + 1, ch);
                let at = i * w + j;
                let base = ch * BANDS * plane;
                data[base + at] = 0.5 * (a + b + c + d);
                data[base + plane + at] = 0.5 * (a - b + c - d);
                data[base + 2 * plane + at] = 0.5 * (a + b - c - d);
                data[base + 3 * plane + at] = 0.5 * (a - b - c + d);
            }
        }
    }
    Ok(z)
}

/// Exact inverse of [`encode`], clamped to the pixel range.
pub fn decode(z: &Latent) -> Result<Frame> {
    let (l, h, w) = z.shape();
    if l != LATENT_CHANNELS {
        return Err(Error::Shape(format!(
            "expected {LATENT_CHANNELS} latent channels, got {l}"
        )));
    }
    let plane = h * w;
    let zd = z.data();
    let mut out = vec![0f32; 4 * plane * 3];
    let ww = 2 * w;
    let to_px = |v: f64| ((v.clamp(-1.0, 1.0) + 1.0) * 0.5) as f32;
    for ch in 0..3 {
        let base = ch * BANDS * plane;
        for i in 0..h {
            for j in 0..w {
                let at = i * w + j;
                let ll = zd[base + at];
                let lh = zd[base + plane + at];
                let hl = zd[base + 2 * plane + at];
                let hh = zd[base + 3 * plane + at];
                let quad = [
                    (2 * i, 2 * j, 0.5 * (ll + lh + hl + hh)),
                    (2 * i, 2 * j + 1, 0.5 * (ll - lh + hl - hh)),
                    (2 * i + 1, 2 * j, 0.5 * (ll + lh - hl - hh)),
                    (2 * i + 1, 2 * j + 1, 0.5 * (ll - lh - hl + hh)),
                ];
                for (y, x, v) in quad {
                    out[(y * ww + x) * 3 + ch] = to_px(v);
                }
            }
        }
    }
    Frame::new(2 * h, ww, 3, out)
}

/// Per-channel affine whitening of latents, measured once on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Observed per-channel range, before whitening.
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl LatentStats {
    pub fn identity(channels: usize) -> Self {
        LatentStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
            min: vec![-COEFF_BOUND; channels],
            max: vec![COEFF_BOUND; channels],
        }
    }

    /// Channel moments and ranges over all pixels of all latents.
    pub fn measure<'a>(latents: impl IntoIterator<Item = &'a Latent>) -> Result<Self> {
        let mut sums: Vec<(f64, f64)> = Vec::new();
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for z in latents {
            if sums.is_empty() {
                sums = vec![(0.0, 0.0); z.channels()];
                min = vec![f64::INFINITY; z.channels()];
                max = vec![f64::NEG_INFINITY; z.channels()];
            } else if sums.len() != z.channels() {
                return Err(Error::Shape("latents with differing channel counts".into()));
            }
            for (c, s) in sums.iter_mut().enumerate() {
                for &v in z.channel(c) {
                    s.0 += v;
                    s.1 += v * v;
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
            }
            count += z.plane();
        }
        if count == 0 {
            return Err(Error::Config("cannot measure latent statistics of nothing".into()));
        }
        let n = count as f64;
        let (mean, std) = sums
            .iter()
            .map(|&(s, s2)| {
                let m = s / n;
                let var = (s2 / n - m * m).max(0.0);
                (m, var.sqrt().max(MIN_WHITEN_STD))
            })
            .unzip();
        Ok(LatentStats { mean, std, min, max })
    }

    fn check(&self, z: &Latent) -> Result<()> {
        if z.channels() != self.mean.len() {
            return Err(Error::Shape(format!(
                "whitening expects {} channels, got {}",
                self.mean.len(),
                z.channels()
            )));
        }
        Ok(())
    }

    pub fn whiten(&self, z: &Latent) -> Result<Latent> {
        self.check(z)?;
        let mut out = z.clone();
        for c in 0..z.channels() {
            let (m, s) = (self.mean[c], self.std[c]);
            out.channel_mut(c).iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }

    /// Observed per-channel range in whitened units.
    pub fn whitened_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (0..self.mean.len())
            .map(|c| {
                let (m, s) = (self.mean[c], self.std[c]);
                ((self.min[c] - m) / s, (self.max[c] - m) / s)
            })
            .unzip()
    }

    pub fn unwhiten(&self, z: &Latent) -> Result<Latent> {
        self.check(z)?;
        let mut out = z.clone();
        for c in 0..z.channels() {
            let (m, s) = (self.mean[c], self.std[c]);
            out.channel_mut(c).iter_mut().for_each(|v| *v = *v * s + m);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_frame(seed: u64, h: usize, w: usize) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(h, w, 3, (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn gray_frame_is_dc_only() {
        let z = encode(&Frame::filled(4, 6, 3, 0.5).unwrap()).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));

        let z = encode(&Frame::filled(4, 6, 3, 0.8).unwrap()).unwrap();
        for c in 0..LATENT_CHANNELS {
            let expect = if c % BANDS == 0 {
                2.0 * (2.0 * 0.8f32 as f64 - 1.0)
            } else {
                0.0
            };
            assert!(z.channel(c).iter().all(|&v| (v - expect).abs() < 1e-12));
        }
    }

    #[test]
    fn energy_is_preserved() {
        for seed in 0..5 {
            let f = random_frame(seed, 8, 10);
            let pixel_energy: f64 = f.data().iter().map(|&v| (2.0 * v as f64 - 1.0).powi(2)).sum();
            let z = encode(&f).unwrap();
            assert!((z.sum_sq() - pixel_energy).abs() < 1e-6 * pixel_energy.max(1.0));
        }
    }

    #[test]
    fn odd_or_gray_input_rejected() {
        assert!(matches!(
            encode(&Frame::filled(5, 4, 3, 0.1).unwrap()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            encode(&Frame::filled(4, 4, 1, 0.1).unwrap()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(decode(&Latent::zeros(3, 2, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn decode_clamps_into_pixel_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = Latent::randn(LATENT_CHANNELS, 4, 4, &mut rng).map(|v| 5.0 * v);
        let f = decode(&z).unwrap();
        assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn whitening_roundtrip_and_moments() {
        let latents: Vec<_> = (0..4).map(|s| encode(&random_frame(s, 8, 8)).unwrap()).collect();
        let stats = LatentStats::measure(&latents).unwrap();
        let white: Vec<_> = latents.iter().map(|z| stats.whiten(z).unwrap()).collect();
        let again = LatentStats::measure(&white).unwrap();
        for c in 0..LATENT_CHANNELS {
            assert!(again.mean[c].abs() < 1e-9);
            assert!((again.std[c] - 1.0).abs() < 1e-9);
        }
        let back = stats.unwhiten(&white[2]).unwrap();
        assert!(back.max_abs_diff(&latents[2]).unwrap() < 1e-12);
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(seed in any::<u64>(), hh in 1usize..6, ww in 1usize..6) {
            let f = random_frame(seed, 2 * hh, 2 * ww);
            let back = decode(&encode(&f).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&f).unwrap() <= 1e-6);
        }
    }
}
