//! Motion-compensated stabilization of an edited video against its source.
//!
//! The source carries the true motion; the edit carries that motion plus
//! jitter. For frame `i`, the flow from the already stabilized frame `i-1`
//! to `edited_i`, minus the source flow from `i-1` to `i`, is the jitter
//! field, and `edited_i` is warped back along it.
//!
//! Raw jitter fields are noisy wherever brightness constancy fails (edited
//! content, clamped borders), and because every frame is referenced to the
//! previous output that noise would accumulate. The field is therefore
//! smoothed by normalized convolution: a Gaussian average weighted by how
//! well each flow explains its frame pair.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::flow::{dense_flow, warp, FlowField, FlowParams, LUMA_SCALE};
use crate::error::{Error, Result};
use crate::imaging::{Frame, Video};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizeConfig {
    /// Fraction of the estimated jitter removed; 0 disables.
    pub strength: f64,
    pub flow: FlowParams,
    /// Gaussian width, in pixels, of the jitter smoothing.
    pub smooth_sigma: f64,
    /// Warp residual, in luma levels out of 255, at which a pixel's weight
    /// halves.
    pub residual_scale: f64,
}

impl Default for StabilizeConfig {
    fn default() -> Self {
        Self {
            strength: 1.0,
            flow: FlowParams::default(),
            smooth_sigma: 8.0,
            residual_scale: 4.0,
        }
    }
}

/// Per-pixel weight `1 / (1 + (r / scale)²)` of a flow from `a` to `b`,
/// where `r` is the luma residual after warping `b` back onto `a`.
fn confidence(a: &Frame, b: &Frame, flow: &FlowField, scale: f64) -> Result<Vec<f64>> {
    let back = warp(b, flow)?.to_luma();
    Ok(a.to_luma()
        .iter()
        .zip(&back)
        .map(|(x, y)| {
            let r = LUMA_SCALE * (*x as f64 - *y as f64) / scale;
            1.0 / (1.0 + r * r)
        })
        .collect())
}

/// Separable Gaussian blur with replicated edges.
fn gaussian(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let d = k as isize - r;
                    let (yy, xx) = if horizontal {
                        (y as isize, x as isize + d)
                    } else {
                        (y as isize + d, x as isize)
                    };
                    let yy = yy.clamp(0, h as isize - 1) as usize;
                    let xx = xx.clamp(0, w as isize - 1) as usize;
                    acc += wgt * src[yy * w + xx];
                }
                out[y * w + x] = acc / norm;
            }
        }
        out
    };
    pass(&pass(plane, true), false)
}

/// Confidence-weighted Gaussian average of a flow field.
fn smooth_weighted(field: &FlowField, weights: &[f64], sigma: f64) -> Result<FlowField> {
    let (h, w) = (field.height(), field.width());
    if sigma <= 0.0 {
        return Ok(field.clone());
    }
    let den = gaussian(weights, h, w, sigma);
    let avg = |comp: &[f64]| -> Vec<f64> {
        let num: Vec<f64> = comp.iter().zip(weights).map(|(c, k)| c * k).collect();
        gaussian(&num, h, w, sigma)
            .iter()
            .zip(&den)
            .map(|(n, d)| if *d > 1e-12 { n / d } else { 0.0 })
            .collect()
    };
    FlowField::from_parts(h, w, avg(field.u()), avg(field.v()))
}

pub fn stabilize(edited: &Video, source: &Video, cfg: &StabilizeConfig) -> Result<Video> {
    if edited.len() != source.len() || edited.frame_shape() != source.frame_shape() {
        return Err(Error::Shape(format!(
            "edited video is {} x {:?}, source is {} x {:?}",
            edited.len(),
            edited.frame_shape(),
            source.len(),
            source.frame_shape()
        )));
    }
    if !cfg.strength.is_finite() {
        return Err(Error::Config("stabilize strength must be finite".into()));
    }
    if !(cfg.smooth_sigma.is_finite() && cfg.smooth_sigma >= 0.0) {
        return Err(Error::Config("jitter smoothing width must be non-negative".into()));
    }
    if !(cfg.residual_scale.is_finite() && cfg.residual_scale > 0.0) {
        return Err(Error::Config("residual scale must be positive".into()));
    }
    if cfg.strength == 0.0 || edited.len() < 2 {
        return Ok(edited.clone());
    }
    let src = source.frames();
    let motion = (1..src.len())
        .into_par_iter()
        .map(|i| {
            let m = dense_flow(&src[i - 1], &src[i], &cfg.flow)?;
            let c = confidence(&src[i - 1], &src[i], &m, cfg.residual_scale)?;
            Ok((m, c))
        })
        .collect::<Result<Vec<_>>>()?;
    let ed = edited.frames();
    let mut out = vec![ed[0].clone()];
    for i in 1..ed.len() {
        let observed = dense_flow(&out[i - 1], &ed[i], &cfg.flow)?;
        let (m, mc) = &motion[i - 1];
        let c: Vec<f64> = confidence(&out[i - 1], &ed[i], &observed, cfg.residual_scale)?
            .iter()
            .zip(mc)
            .map(|(a, b)| a * b)
            .collect();
        let jitter = smooth_weighted(&observed.sub(m)?, &c, cfg.smooth_sigma)?.scaled(cfg.strength);
        out.push(warp(&ed[i], &jitter)?);
    }
    edited.with_frames(out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::temporal::flow::tests::texture;

    fn panning(n: usize, offsets: &[(f64, f64)]) -> Video {
        let frames = (0..n)
            .map(|i| texture(48, 0.4 * i as f64 + offsets[i].0, offsets[i].1))
            .collect();
        Video::new(frames, 24.0).unwrap()
    }

    fn residual_shift(v: &Video, src: &Video) -> f64 {
        let p = FlowParams::default();
        let total: f64 = (1..v.len())
            .map(|i| {
                let (u, w) = dense_flow(&src.frames()[i], &v.frames()[i], &p)
                    .unwrap()
                    .interior_mean(8);
                u.hypot(w)
            })
            .sum();
        total / (v.len() - 1) as f64
    }

    #[test]
    fn clean_edit_is_unchanged() {
        // identical pairs give identical flows, so the jitter is exactly zero
        let src = panning(6, &[(0.0, 0.0); 6]);
        let out = stabilize(&src, &src, &StabilizeConfig::default()).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn bad_settings_rejected() {
        let v = panning(3, &[(0.0, 0.0); 3]);
        for cfg in [
            StabilizeConfig {
                strength: f64::NAN,
                ..StabilizeConfig::default()
            },
            StabilizeConfig {
                smooth_sigma: -1.0,
                ..StabilizeConfig::default()
            },
            StabilizeConfig {
                residual_scale: 0.0,
                ..StabilizeConfig::default()
            },
        ] {
            assert!(matches!(stabilize(&v, &v, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zero_strength_is_identity() {
        let src = panning(4, &[(0.0, 0.0); 4]);
        let ed = panning(4, &[(0.0, 0.0), (1.0, 0.0), (-1.0, 1.0), (0.0, -1.0)]);
        let cfg = StabilizeConfig {
            strength: 0.0,
            ..StabilizeConfig::default()
        };
        assert_eq!(stabilize(&ed, &src, &cfg).unwrap(), ed);
    }

    #[test]
    fn random_jitter_is_mostly_removed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10;
        let mut jit = vec![(0.0, 0.0)];
        for _ in 1..n {
            let sign = |r: &mut ChaCha8Rng| if r.random::<bool>() { 1.0 } else { -1.0 };
            jit.push((sign(&mut rng), sign(&mut rng)));
        }
        let src = panning(n, &vec![(0.0, 0.0); n]);
        let ed = panning(n, &jit);
        let out = stabilize(&ed, &src, &StabilizeConfig::default()).unwrap();
        assert_eq!(out.len(), n);
        assert_eq!(out.frame_shape(), ed.frame_shape());
        let (before, after) = (residual_shift(&ed, &src), residual_shift(&out, &src));
        assert!(after <= 0.5 * before, "shift {before} -> {after}");
    }

    #[test]
    fn mismatched_videos_rejected() {
        let a = panning(4, &[(0.0, 0.0); 4]);
        let b = panning(3, &[(0.0, 0.0); 3]);
        assert!(matches!(
            stabilize(&a, &b, &StabilizeConfig::default()),
            Err(Error::Shape(_))
        ));
        let small = Video::new(vec![Frame::filled(16, 16, 3, 0.5).unwrap(); 4], 24.0).unwrap();
        assert!(matches!(
            stabilize(&a, &small, &StabilizeConfig::default()),
            Err(Error::Shape(_))
        ));
    }
}
