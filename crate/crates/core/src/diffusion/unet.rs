//! Two-resolution convolutional encoder-decoder predicting noise.
//!
//! ```text
//! conv_in -> res@16 ----------------------------- skip ---+
//!              `-> pool -> conv -> res@8 -> up -> conv -> concat -> conv -> res@16 -> silu -> conv_out
//! ```
//!
//! The timestep enters every residual block through a sinusoidal embedding
//! and an MLP. A prompt embedding, when the model takes one, modulates each
//! residual block as `h·(1+γ) + β`.
//!
//! The noise estimate skips around the network: `ε̂ = σ_t·z_t + α_t·F(x)`.
//! The implied clean estimate `α_t·z_t − σ_t·F` then stays bounded at high
//! noise, where a bare noise predictor divides its error by `α_t ≈ 0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{
    avg_pool2, avg_pool2_backward, silu, silu_grad, upsample2, upsample2_backward, Conv3, Linear, ParamAlloc,
};
use super::schedule::Timestep;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Width of the sinusoidal timestep features.
pub const TIME_FEATURES: usize = 32;
/// Timesteps are mapped to `[0, TIME_SCALE]` before the sinusoids.
pub const TIME_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetArch {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub embed_dim: usize,
    /// Prompt-embedding width; `None` for models without a text pathway.
    pub cond_dim: Option<usize>,
    /// Input channels from this index on start at zero weight.
    pub zero_init_from: Option<usize>,
}

impl UNetArch {
    /// Prompt-conditioned noise predictor over `latent` channels.
    pub fn text(latent: usize, cond_dim: usize) -> Self {
        UNetArch {
            in_channels: latent,
            out_channels: latent,
            base_width: 32,
            embed_dim: 64,
            cond_dim: Some(cond_dim),
            zero_init_from: None,
        }
    }

    /// Source-conditioned noise predictor: noisy latent stacked on the
    /// source latent; the source half starts disconnected.
    pub fn image(latent: usize) -> Self {
        UNetArch {
            in_channels: 2 * latent,
            out_channels: latent,
            base_width: 32,
            embed_dim: 64,
            cond_dim: None,
            zero_init_from: Some(latent),
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv3,
    time_proj: Linear,
    film: Option<Linear>,
    conv2: Conv3,
    ch: usize,
}

struct ResCache {
    x: Tensor,
    cols1: Vec<f64>,
    h2: Tensor,
    gamma: Vec<f64>,
    h3: Tensor,
    cols2: Vec<f64>,
}

impl ResBlock {
    fn new(alloc: &mut ParamAlloc, ch: usize, embed: usize, cond: Option<usize>) -> Self {
        ResBlock {
            conv1: Conv3::new(alloc, ch, ch),
            time_proj: Linear::new(alloc, embed, ch),
            film: cond.map(|d| Linear::new(alloc, d, 2 * ch)),
            conv2: Conv3::new(alloc, ch, ch),
            ch,
        }
    }

    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng) {
        self.conv1.init(p, 1.0, rng);
        self.time_proj.init(p, 1.0, rng);
        if let Some(f) = &self.film {
            f.init(p, 0.1, rng);
        }
        self.conv2.init(p, 0.1, rng);
    }

    fn forward(&self, p: &[f64], x: Tensor, temb: &[f64], cond: Option<&[f64]>) -> (Tensor, ResCache) {
        let a1 = x.map(silu);
        let (mut h, cols1) = self.conv1.forward(p, &a1);
        let tp = self.time_proj.forward(p, temb);
        for (c, shift) in tp.iter().enumerate() {
            h.channel_mut(c).iter_mut().for_each(|v| *v += shift);
        }
        let h2 = h;
        let (h3, gamma) = match (&self.film, cond) {
            (Some(film), Some(cv)) => {
                let gb = film.forward(p, cv);
                let (gamma, beta) = gb.split_at(self.ch);
                let mut h3 = h2.clone();
                for c in 0..self.ch {
                    let (g, b) = (1.0 + gamma[c], beta[c]);
                    h3.channel_mut(c).iter_mut().for_each(|v| *v = *v * g + b);
                }
                (h3, gamma.to_vec())
            }
            _ => (h2.clone(), Vec::new()),
        };
        let (mut out, cols2) = self.conv2.forward(p, &h3.map(silu));
        out.add_assign(&x);
        let cache = ResCache {
            x,
            cols1,
            h2,
            gamma,
            h3,
            cols2,
        };
        (out, cache)
    }

    /// Returns the input gradient; accumulates into `dtemb` and `dcond`.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &ResCache,
        dout: &Tensor,
        temb: &[f64],
        cond: Option<&[f64]>,
        dtemb: &mut [f64],
        dcond: &mut [f64],
    ) -> Tensor {
        let da2 = self
            .conv2
            .backward(p, g, &cache.cols2, dout, true)
            .expect("asked for dx");
        let mut dh = da2.zip_with(&cache.h3, |d, h| d * silu_grad(h)).expect("same shape");
        if let (Some(film), Some(cv)) = (&self.film, cond) {
            let mut dgb = vec![0.0; 2 * self.ch];
            for c in 0..self.ch {
                let dh3 = dh.channel(c);
                dgb[c] = dh3.iter().zip(cache.h2.channel(c)).map(|(a, b)| a * b).sum();
                dgb[self.ch + c] = dh3.iter().sum();
            }
            for c in 0..self.ch {
                let scale = 1.0 + cache.gamma[c];
                dh.channel_mut(c).iter_mut().for_each(|v| *v *= scale);
            }
            let dc = film.backward(p, g, cv, &dgb);
            dcond.iter_mut().zip(dc).for_each(|(a, b)| *a += b);
        }
        let dtp: Vec<f64> = (0..self.ch).map(|c| dh.channel(c).iter().sum()).collect();
        let de = self.time_proj.backward(p, g, temb, &dtp);
        dtemb.iter_mut().zip(de).for_each(|(a, b)| *a += b);
        let da1 = self
            .conv1
            .backward(p, g, &cache.cols1, &dh, true)
            .expect("asked for dx");
        let mut dx = da1.zip_with(&cache.x, |d, x| d * silu_grad(x)).expect("same shape");
        dx.add_assign(dout);
        dx
    }
}

#[derive(Debug, Clone)]
struct Layout {
    time1: Linear,
    time2: Linear,
    conv_in: Conv3,
    res_hi: ResBlock,
    down: Conv3,
    res_lo: ResBlock,
    up: Conv3,
    merge: Conv3,
    res_out: ResBlock,
    conv_out: Conv3,
    n_params: usize,
}

impl Layout {
    fn new(a: &UNetArch) -> Self {
        let mut alloc = ParamAlloc::default();
        let (b, e) = (a.base_width, a.embed_dim);
        let time1 = Linear::new(&mut alloc, TIME_FEATURES, e);
        let time2 = Linear::new(&mut alloc, e, e);
        let conv_in = Conv3::new(&mut alloc, a.in_channels, b);
        let res_hi = ResBlock::new(&mut alloc, b, e, a.cond_dim);
        let down = Conv3::new(&mut alloc, b, 2 * b);
        let res_lo = ResBlock::new(&mut alloc, 2 * b, e, a.cond_dim);
        let up = Conv3::new(&mut alloc, 2 * b, b);
        let merge = Conv3::new(&mut alloc, 2 * b, b);
        let res_out = ResBlock::new(&mut alloc, b, e, a.cond_dim);
        let conv_out = Conv3::new(&mut alloc, b, a.out_channels);
        Layout {
            time1,
            time2,
            conv_in,
            res_hi,
            down,
            res_lo,
            up,
            merge,
            res_out,
            conv_out,
            n_params: alloc.len,
        }
    }
}

/// Intermediate values kept by [`UNetModel::forward_cached`].
pub struct ForwardCache {
    tfeat: Vec<f64>,
    e1: Vec<f64>,
    temb: Vec<f64>,
    cond: Option<Vec<f64>>,
    cols_in: Vec<f64>,
    c_hi: ResCache,
    cols_down: Vec<f64>,
    c_lo: ResCache,
    cols_up: Vec<f64>,
    cols_merge: Vec<f64>,
    c_out: ResCache,
    h6: Tensor,
    cols_out: Vec<f64>,
    alpha: f64,
}

#[derive(Debug, Clone)]
pub struct UNetModel {
    arch: UNetArch,
    layout: Layout,
    params: Vec<f64>,
}

impl PartialEq for UNetModel {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.params == other.params
    }
}

/// Sinusoidal features of a timestep given as a fraction of the schedule.
pub fn time_features(t_frac: f64) -> Vec<f64> {
    let half = TIME_FEATURES / 2;
    let pos = t_frac * TIME_SCALE;
    let mut out = vec![0.0; TIME_FEATURES];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    out
}

impl UNetModel {
    pub fn new(arch: UNetArch, seed: u64) -> Result<Self> {
        if arch.in_channels == 0 || arch.out_channels == 0 || arch.base_width == 0 || arch.embed_dim == 0 {
            return Err(Error::Config(format!("degenerate architecture {arch:?}")));
        }
        if arch.out_channels > arch.in_channels {
            return Err(Error::Config("the noise skip needs out_channels <= in_channels".into()));
        }
        if let Some(z) = arch.zero_init_from {
            if z > arch.in_channels {
                return Err(Error::Config("zero-init channel beyond input width".into()));
            }
        }
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = &layout;
        l.time1.init(&mut params, 1.0, &mut rng);
        l.time2.init(&mut params, 1.0, &mut rng);
        l.conv_in.init(&mut params, 1.0, &mut rng);
        if let Some(from) = arch.zero_init_from {
            l.conv_in.zero_inputs_from(&mut params, from);
        }
        l.res_hi.init(&mut params, &mut rng);
        l.down.init(&mut params, 1.0, &mut rng);
        l.res_lo.init(&mut params, &mut rng);
        l.up.init(&mut params, 1.0, &mut rng);
        l.merge.init(&mut params, 1.0, &mut rng);
        l.res_out.init(&mut params, &mut rng);
        l.conv_out.init(&mut params, 0.1, &mut rng);
        Ok(UNetModel { arch, layout, params })
    }

    /// Rebuilds a model from stored parameters.
    pub fn from_params(arch: UNetArch, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&arch);
        if params.len() != layout.n_params {
            return Err(Error::Format(format!(
                "architecture needs {} parameters, got {}",
                layout.n_params,
                params.len()
            )));
        }
        Ok(UNetModel { arch, layout, params })
    }

    pub fn arch(&self) -> &UNetArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn check_inputs(&self, x: &Tensor, cond: Option<&[f64]>) -> Result<()> {
        if x.channels() != self.arch.in_channels {
            return Err(Error::Shape(format!(
                "model takes {} input channels, got {}",
                self.arch.in_channels,
                x.channels()
            )));
        }
        if !x.height().is_multiple_of(2) || !x.width().is_multiple_of(2) || x.height() == 0 || x.width() == 0 {
            return Err(Error::Shape(format!(
                "latent grid {}x{} must be even",
                x.height(),
                x.width()
            )));
        }
        match (self.arch.cond_dim, cond) {
            (Some(d), Some(c)) if c.len() != d => Err(Error::Shape(format!(
                "prompt embedding has width {}, model takes {d}",
                c.len()
            ))),
            (Some(_), None) => Err(Error::Shape("model needs a prompt embedding".into())),
            (None, Some(_)) => Err(Error::Shape("model takes no prompt embedding".into())),
            _ => Ok(()),
        }
    }

    /// Noise prediction for input `x` whose first channels hold the noisy
    /// latent at timestep `ts`.
    pub fn forward(&self, x: &Tensor, ts: Timestep, cond: Option<&[f64]>) -> Result<Tensor> {
        Ok(self.forward_cached(x, ts, cond)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor, ts: Timestep, cond: Option<&[f64]>) -> Result<(Tensor, ForwardCache)> {
        self.check_inputs(x, cond)?;
        let (p, l) = (&self.params[..], &self.layout);
        let tfeat = time_features(ts.frac);
        let e1 = l.time1.forward(p, &tfeat);
        let e1s: Vec<f64> = e1.iter().map(|&v| silu(v)).collect();
        let temb = l.time2.forward(p, &e1s);
        // blocks read the activated embedding
        let temb_act: Vec<f64> = temb.iter().map(|&v| silu(v)).collect();

        let (h0, cols_in) = l.conv_in.forward(p, x);
        let (h1, c_hi) = l.res_hi.forward(p, h0, &temb_act, cond);
        let (h2, cols_down) = l.down.forward(p, &avg_pool2(&h1));
        let (h3, c_lo) = l.res_lo.forward(p, h2, &temb_act, cond);
        let (h4, cols_up) = l.up.forward(p, &upsample2(&h3));
        let cat = h4.concat_channels(&h1)?;
        let (h5, cols_merge) = l.merge.forward(p, &cat);
        let (h6, c_out) = l.res_out.forward(p, h5, &temb_act, cond);
        let (f, cols_out) = l.conv_out.forward(p, &h6.map(silu));
        let (z_t, _) = x.split_channels(self.arch.out_channels);
        let out = z_t.zip_with(&f, |z, f| ts.sigma * z + ts.alpha * f)?;
        let cache = ForwardCache {
            tfeat,
            e1,
            temb,
            cond: cond.map(<[f64]>::to_vec),
            cols_in,
            c_hi,
            cols_down,
            c_lo,
            cols_up,
            cols_merge,
            c_out,
            h6,
            cols_out,
            alpha: ts.alpha,
        };
        Ok((out, cache))
    }

    /// Accumulates `dL/dθ` into `grads` given `dL/d(output)`; returns
    /// `dL/d(prompt embedding)` for prompt-conditioned models.
    pub fn backward(&self, cache: &ForwardCache, dout: &Tensor, grads: &mut [f64]) -> Option<Vec<f64>> {
        assert_eq!(grads.len(), self.params.len());
        let (p, l) = (&self.params[..], &self.layout);
        let g = grads;
        let temb_act: Vec<f64> = cache.temb.iter().map(|&v| silu(v)).collect();
        let cond = cache.cond.as_deref();
        let mut dtemb_act = vec![0.0; temb_act.len()];
        let mut dcond = vec![0.0; self.arch.cond_dim.unwrap_or(0)];

        let df = dout.map(|d| cache.alpha * d);
        let da = l.conv_out.backward(p, g, &cache.cols_out, &df, true).expect("dx");
        let dh6 = da.zip_with(&cache.h6, |d, h| d * silu_grad(h)).expect("same shape");
        let dh5 = l
            .res_out
            .backward(p, g, &cache.c_out, &dh6, &temb_act, cond, &mut dtemb_act, &mut dcond);
        let dcat = l.merge.backward(p, g, &cache.cols_merge, &dh5, true).expect("dx");
        let (dh4, mut dh1) = dcat.split_channels(self.arch.base_width);
        let du = l.up.backward(p, g, &cache.cols_up, &dh4, true).expect("dx");
        let dh3 = upsample2_backward(&du);
        let dh2 = l
            .res_lo
            .backward(p, g, &cache.c_lo, &dh3, &temb_act, cond, &mut dtemb_act, &mut dcond);
        let dpool = l.down.backward(p, g, &cache.cols_down, &dh2, true).expect("dx");
        dh1.add_assign(&avg_pool2_backward(&dpool));
        let dh0 = l
            .res_hi
            .backward(p, g, &cache.c_hi, &dh1, &temb_act, cond, &mut dtemb_act, &mut dcond);
        l.conv_in.backward(p, g, &cache.cols_in, &dh0, false);

        let dtemb: Vec<f64> = dtemb_act
            .iter()
            .zip(&cache.temb)
            .map(|(d, &t)| d * silu_grad(t))
            .collect();
        let e1s: Vec<f64> = cache.e1.iter().map(|&v| silu(v)).collect();
        let de1s = l.time2.backward(p, g, &e1s, &dtemb);
        let de1: Vec<f64> = de1s.iter().zip(&cache.e1).map(|(d, &e)| d * silu_grad(e)).collect();
        l.time1.backward(p, g, &cache.tfeat, &de1);

        self.arch.cond_dim.map(|_| dcond)
    }
}

/// Image-guided noise estimate `u + s·(c − u)` where `c` conditions on the
/// source latent and `u` on the null (all-zero) source.
pub fn cfg_image(m: &UNetModel, z_t: &Tensor, c_i: &Tensor, s: f64, ts: Timestep) -> Result<Tensor> {
    if s.is_nan() || s < 1.0 {
        return Err(Error::Config(format!("image guidance scale must be >= 1, got {s}")));
    }
    z_t.ensure_shape(c_i)?;
    let cond = m.forward(&z_t.concat_channels(c_i)?, ts, None)?;
    if s == 1.0 {
        return Ok(cond);
    }
    let null = Tensor::zeros(c_i.channels(), c_i.height(), c_i.width());
    let uncond = m.forward(&z_t.concat_channels(&null)?, ts, None)?;
    uncond.zip_with(&cond, |u, c| u + s * (c - u))
}

#[cfg(test)]
mod tests {
    use rand::seq::index::sample;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn ts(frac: f64) -> Timestep {
        let alpha = (frac * std::f64::consts::FRAC_PI_2).cos();
        Timestep {
            frac,
            alpha,
            sigma: (1.0 - alpha * alpha).sqrt(),
        }
    }

    fn rand_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        Tensor::randn(c, h, w, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Fully random parameters so no gradient is trivially zero.
    fn scrambled(arch: UNetArch, seed: u64) -> UNetModel {
        let mut m = UNetModel::new(arch, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let n = Normal::new(0.0, 0.03).unwrap();
        m.params_mut().iter_mut().for_each(|v| *v += n.sample(&mut rng));
        m
    }

    #[test]
    fn parameter_count_is_desk_sized() {
        let m = UNetModel::new(UNetArch::text(12, 64), 0).unwrap();
        assert!((150_000..300_000).contains(&m.n_params()), "{}", m.n_params());
    }

    #[test]
    fn output_shape_and_determinism() {
        let m = UNetModel::new(UNetArch::text(12, 64), 1).unwrap();
        let x = rand_tensor(12, 8, 8, 2);
        let c = vec![0.3; 64];
        let a = m.forward(&x, ts(0.5), Some(&c)).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a, m.forward(&x, ts(0.5), Some(&c)).unwrap());
        assert_eq!(m, UNetModel::new(UNetArch::text(12, 64), 1).unwrap());
    }

    #[test]
    fn input_checks() {
        let m = UNetModel::new(UNetArch::image(12), 0).unwrap();
        assert!(matches!(
            m.forward(&rand_tensor(12, 8, 8, 0), ts(0.5), None),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            m.forward(&rand_tensor(24, 8, 8, 0), ts(0.5), Some(&[0.0; 64])),
            Err(Error::Shape(_))
        ));
        let t = UNetModel::new(UNetArch::text(12, 64), 0).unwrap();
        assert!(matches!(
            t.forward(&rand_tensor(12, 8, 8, 0), ts(0.5), None),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            t.forward(&rand_tensor(12, 8, 8, 0), ts(0.5), Some(&[0.0; 3])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fresh_image_model_ignores_source() {
        let m = UNetModel::new(UNetArch::image(12), 5).unwrap();
        let z = rand_tensor(12, 16, 16, 1);
        let a = m
            .forward(&z.concat_channels(&rand_tensor(12, 16, 16, 2)).unwrap(), ts(0.3), None)
            .unwrap();
        let b = m
            .forward(&z.concat_channels(&Tensor::zeros(12, 16, 16)).unwrap(), ts(0.3), None)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn guidance_algebra() {
        let m = scrambled(UNetArch::image(4), 3);
        let z = rand_tensor(4, 4, 4, 1);
        let ci = rand_tensor(4, 4, 4, 2);
        let cond = m.forward(&z.concat_channels(&ci).unwrap(), ts(0.4), None).unwrap();
        let null = Tensor::zeros(4, 4, 4);
        let uncond = m.forward(&z.concat_channels(&null).unwrap(), ts(0.4), None).unwrap();
        assert_eq!(cfg_image(&m, &z, &ci, 1.0, ts(0.4)).unwrap(), cond);
        assert!(
            cfg_image(&m, &z, &null, 3.0, ts(0.4))
                .unwrap()
                .max_abs_diff(&uncond)
                .unwrap()
                < 1e-12
        );
        let two = cfg_image(&m, &z, &ci, 2.0, ts(0.4)).unwrap();
        for i in 0..two.data().len() {
            assert!((two.data()[i] - (2.0 * cond.data()[i] - uncond.data()[i])).abs() < 1e-12);
        }
        assert!(matches!(cfg_image(&m, &z, &ci, 0.5, ts(0.4)), Err(Error::Config(_))));
    }

    /// Relative difference with a floor for gradients that are near zero.
    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn sq_norm_output(m: &UNetModel, x: &Tensor, t: Timestep, c: Option<&[f64]>) -> f64 {
        m.forward(x, t, c).unwrap().sum_sq()
    }

    fn check_gradients(arch: UNetArch, seed: u64) {
        let m = scrambled(arch, seed);
        let x = rand_tensor(arch.in_channels, 4, 4, seed + 1);
        let c: Option<Vec<f64>> = arch.cond_dim.map(|d| rand_tensor(1, 1, d, seed + 2).into_data());
        let t = ts(0.37);
        let (out, cache) = m.forward_cached(&x, t, c.as_deref()).unwrap();
        let dout = out.map(|v| 2.0 * v);
        let mut g = vec![0.0; m.n_params()];
        let dcond = m.backward(&cache, &dout, &mut g);

        let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in sample(&mut rng, m.n_params(), 120) {
            let mut plus = m.clone();
            plus.params_mut()[i] += h;
            let mut minus = m.clone();
            minus.params_mut()[i] -= h;
            let fd =
                (sq_norm_output(&plus, &x, t, c.as_deref()) - sq_norm_output(&minus, &x, t, c.as_deref())) / (2.0 * h);
            worst = worst.max(rel_err(g[i], fd));
        }
        assert!(worst < 1e-4, "worst parameter relative error {worst}");

        if let (Some(c), Some(dc)) = (c, dcond) {
            for k in 0..c.len() {
                let mut cp = c.clone();
                cp[k] += h;
                let mut cm = c.clone();
                cm[k] -= h;
                let fd = (sq_norm_output(&m, &x, t, Some(&cp)) - sq_norm_output(&m, &x, t, Some(&cm))) / (2.0 * h);
                assert!(rel_err(dc[k], fd) < 1e-4, "prompt gradient {k}: {} vs {fd}", dc[k]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_text() {
        check_gradients(UNetArch::text(12, 16), 11);
    }

    #[test]
    fn gradients_match_finite_differences_image() {
        check_gradients(UNetArch::image(12), 21);
    }
}
