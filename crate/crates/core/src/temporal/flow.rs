//! Coarse-to-fine Horn–Schunck optical flow and backward warping.
//!
//! Convention: `dense_flow(f1, f2)` returns the field `d` with
//! `f2(p + d(p)) ≈ f1(p)`, so `warp(f2, dense_flow(f1, f2)) ≈ f1`. Content
//! that moves by `+δ` from `f1` to `f2` yields `d ≈ δ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Frame;

/// Coarsest pyramid level must be at least this many pixels on each side.
pub const MIN_LEVEL_SIZE: usize = 4;
/// Luma is scaled to `0..=255` before estimation so `smoothness` is in the
/// customary units.
pub const LUMA_SCALE: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowParams {
    pub levels: usize,
    pub iters: usize,
    /// Weight of the smoothness term, squared-gradient units.
    pub smoothness: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 3,
            iters: 50,
            smoothness: 10.0,
        }
    }
}

impl FlowParams {
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("flow needs at least one pyramid level".into()));
        }
        if !(self.smoothness.is_finite() && self.smoothness > 0.0) {
            return Err(Error::Config(format!(
                "flow smoothness must be positive, got {}",
                self.smoothness
            )));
        }
        let shift = self.levels - 1;
        if shift >= usize::BITS as usize || (h >> shift) < MIN_LEVEL_SIZE || (w >> shift) < MIN_LEVEL_SIZE {
            return Err(Error::Config(format!(
                "{} pyramid levels are too deep for a {h}x{w} frame",
                self.levels
            )));
        }
        Ok(())
    }
}

/// Per-pixel displacement `(u, v)` in pixels; `u` is horizontal.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    h: usize,
    w: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            u: vec![0.0; h * w],
            v: vec![0.0; h * w],
        }
    }

    pub fn constant(h: usize, w: usize, u: f64, v: f64) -> Self {
        Self {
            h,
            w,
            u: vec![u; h * w],
            v: vec![v; h * w],
        }
    }

    pub fn from_parts(h: usize, w: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != h * w || v.len() != h * w {
            return Err(Error::Shape(format!("flow parts do not match {h}x{w}")));
        }
        Ok(Self { h, w, u, v })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.w + x;
        (self.u[i], self.v[i])
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Mean displacement over pixels at least `margin` from every edge.
    pub fn interior_mean(&self, margin: usize) -> (f64, f64) {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
        for y in margin..self.h.saturating_sub(margin) {
            for x in margin..self.w.saturating_sub(margin) {
                let (u, v) = self.at(y, x);
                su += u;
                sv += v;
                n += 1;
            }
        }
        if n == 0 {
            return (0.0, 0.0);
        }
        (su / n as f64, sv / n as f64)
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = self.u.len().max(1) as f64;
        self.u.iter().zip(&self.v).map(|(u, v)| u.hypot(*v)).sum::<f64>() / n
    }

    pub fn scaled(&self, k: f64) -> FlowField {
        FlowField {
            h: self.h,
            w: self.w,
            u: self.u.iter().map(|x| k * x).collect(),
            v: self.v.iter().map(|x| k * x).collect(),
        }
    }

    pub fn sub(&self, other: &FlowField) -> Result<FlowField> {
        self.check(other.h, other.w)?;
        Ok(FlowField {
            h: self.h,
            w: self.w,
            u: self.u.iter().zip(&other.u).map(|(a, b)| a - b).collect(),
            v: self.v.iter().zip(&other.v).map(|(a, b)| a - b).collect(),
        })
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if (self.h, self.w) != (h, w) {
            return Err(Error::Shape(format!("flow is {}x{}, frame is {h}x{w}", self.h, self.w)));
        }
        Ok(())
    }

    /// Doubles resolution and magnitude.
    fn upsample_to(&self, h: usize, w: usize) -> FlowField {
        let mut out = FlowField::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let sy = ((y as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (self.h - 1) as f64);
                let sx = ((x as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (self.w - 1) as f64);
                let i = y * w + x;
                out.u[i] = 2.0 * bilinear(&self.u, self.h, self.w, sy, sx);
                out.v[i] = 2.0 * bilinear(&self.v, self.h, self.w, sy, sx);
            }
        }
        out
    }
}

/// Bilinear sample of a row-major plane with edge clamping.
fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

fn warp_plane(plane: &[f64], h: usize, w: usize, flow: &FlowField) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.at(y, x);
            out.push(bilinear(plane, h, w, y as f64 + v, x as f64 + u));
        }
    }
    out
}

/// Backward warp: `out(p) = f(p + flow(p))`, bilinear, edges clamped.
pub fn warp(f: &Frame, flow: &FlowField) -> Result<Frame> {
    let (h, w, c) = f.shape();
    flow.check(h, w)?;
    let planes: Vec<Vec<f64>> = (0..c)
        .map(|ch| {
            let plane: Vec<f64> = (0..h * w).map(|i| f.get(i / w, i % w, ch) as f64).collect();
            warp_plane(&plane, h, w, flow)
        })
        .collect();
    Frame::from_fn(h, w, c, |y, x, ch| planes[ch][y * w + x] as f32)
}

struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn luma(f: &Frame) -> Self {
        let (h, w, _) = f.shape();
        Plane {
            h,
            w,
            data: f.to_luma().into_iter().map(|v| v as f64 * LUMA_SCALE).collect(),
        }
    }

    fn get(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    /// 2×2 box average; odd trailing rows or columns are dropped.
    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (yy, xx) = (2 * y, 2 * x);
                let s = self.data[yy * self.w + xx]
                    + self.data[yy * self.w + xx + 1]
                    + self.data[(yy + 1) * self.w + xx]
                    + self.data[(yy + 1) * self.w + xx + 1];
                data.push(0.25 * s);
            }
        }
        Plane { h, w, data }
    }

    /// Central differences with replicated borders.
    fn gradients(&self) -> (Vec<f64>, Vec<f64>) {
        let mut gx = Vec::with_capacity(self.data.len());
        let mut gy = Vec::with_capacity(self.data.len());
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                gx.push(0.5 * (self.get(y, x + 1) - self.get(y, x - 1)));
                gy.push(0.5 * (self.get(y + 1, x) - self.get(y - 1, x)));
            }
        }
        (gx, gy)
    }
}

/// Four-neighbour mean with replicated borders.
fn neighbour_mean(a: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        a[y * w + x]
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            out.push(0.25 * (at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1)));
        }
    }
    out
}

/// Horn–Schunck refinement of `init` at one pyramid level. The data term is
/// linearized around `init`; smoothness acts on the full flow.
fn refine(p1: &Plane, p2: &Plane, init: FlowField, params: &FlowParams) -> FlowField {
    let (h, w) = (p1.h, p1.w);
    let warped = Plane {
        h,
        w,
        data: warp_plane(&p2.data, h, w, &init),
    };
    let (gx1, gy1) = p1.gradients();
    let (gx2, gy2) = warped.gradients();
    let n = h * w;
    let ix: Vec<f64> = (0..n).map(|i| 0.5 * (gx1[i] + gx2[i])).collect();
    let iy: Vec<f64> = (0..n).map(|i| 0.5 * (gy1[i] + gy2[i])).collect();
    let it: Vec<f64> = (0..n).map(|i| warped.data[i] - p1.data[i]).collect();
    let (u0, v0) = (init.u.clone(), init.v.clone());
    let mut flow = init;
    for _ in 0..params.iters {
        let ub = neighbour_mean(&flow.u, h, w);
        let vb = neighbour_mean(&flow.v, h, w);
        for i in 0..n {
            let r = ix[i] * (ub[i] - u0[i]) + iy[i] * (vb[i] - v0[i]) + it[i];
            let k = r / (params.smoothness + ix[i] * ix[i] + iy[i] * iy[i]);
            flow.u[i] = ub[i] - ix[i] * k;
            flow.v[i] = vb[i] - iy[i] * k;
        }
    }
    flow
}

/// Pyramidal Horn–Schunck flow from `f1` to `f2` on luma.
pub fn dense_flow(f1: &Frame, f2: &Frame, params: &FlowParams) -> Result<FlowField> {
    if f1.shape() != f2.shape() {
        return Err(Error::Shape(format!(
            "flow between {:?} and {:?}",
            f1.shape(),
            f2.shape()
        )));
    }
    let (h, w, _) = f1.shape();
    params.validate(h, w)?;
    let mut pyr = vec![(Plane::luma(f1), Plane::luma(f2))];
    for _ in 1..params.levels {
        let (a, b) = pyr.last().unwrap();
        let next = (a.downsample(), b.downsample());
        pyr.push(next);
    }
    let coarsest = &pyr[params.levels - 1].0;
    let mut flow = FlowField::zeros(coarsest.h, coarsest.w);
    for (level, (p1, p2)) in pyr.iter().enumerate().rev() {
        if level + 1 < params.levels {
            flow = flow.upsample_to(p1.h, p1.w);
        }
        flow = refine(p1, p2, flow, params);
    }
    if !flow.is_finite() {
        return Err(Error::Numerics("optical flow produced non-finite values".into()));
    }
    Ok(flow)
}

#[cfg(test)]
pub(crate) mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::imaging::psnr;

    /// Smooth periodic texture on an `n`×`n` grid, shifted by `(dx, dy)`:
    /// `texture(dx, dy)(p) = texture(0, 0)(p - (dx, dy))`.
    pub(crate) fn texture(n: usize, dx: f64, dy: f64) -> Frame {
        let tau = 2.0 * std::f64::consts::PI;
        let nf = n as f64;
        Frame::from_fn(n, n, 3, |y, x, ch| {
            let (x, y) = (x as f64 - dx, y as f64 - dy);
            let a = (tau * 3.0 * x / nf).sin() * (tau * 2.0 * y / nf).cos();
            let b = (tau * (2.0 * x + 5.0 * y) / nf + 0.7).sin();
            let c = (tau * (4.0 * x - 3.0 * y) / nf + ch as f64).cos();
            (0.5 + 0.18 * a + 0.14 * b + 0.1 * c) as f32
        })
        .unwrap()
    }

    fn interior_crop_psnr(a: &Frame, b: &Frame, margin: usize) -> f64 {
        let (h, w, c) = a.shape();
        let crop = |f: &Frame| {
            Frame::from_fn(h - 2 * margin, w - 2 * margin, c, |y, x, ch| {
                f.get(y + margin, x + margin, ch)
            })
            .unwrap()
        };
        psnr(&crop(a), &crop(b)).unwrap()
    }

    #[test]
    fn static_scene_has_no_flow() {
        let f = texture(48, 0.0, 0.0);
        let flow = dense_flow(&f, &f, &FlowParams::default()).unwrap();
        assert!(flow.mean_magnitude() < 1e-3);
    }

    #[test]
    fn recovers_translation_and_compensates() {
        let f1 = texture(64, 0.0, 0.0);
        let f2 = texture(64, 2.0, 0.0);
        let flow = dense_flow(&f1, &f2, &FlowParams::default()).unwrap();
        let (u, v) = flow.interior_mean(8);
        assert!((u - 2.0).abs() < 0.5 && v.abs() < 0.5, "mean flow ({u}, {v})");
        let back = warp(&f2, &flow).unwrap();
        let p = interior_crop_psnr(&back, &f1, 8);
        assert!(p > 30.0, "round-trip psnr {p}");
    }

    #[test]
    fn reverse_flow_is_negated() {
        let f1 = texture(64, 0.0, 0.0);
        let f2 = texture(64, 1.0, -0.5);
        let p = FlowParams::default();
        let a = dense_flow(&f1, &f2, &p).unwrap();
        let b = dense_flow(&f2, &f1, &p).unwrap();
        let (mut s, mut n) = (0.0, 0);
        for y in 8..56 {
            for x in 8..56 {
                let ((ua, va), (ub, vb)) = (a.at(y, x), b.at(y, x));
                s += (ua + ub).abs() + (va + vb).abs();
                n += 2;
            }
        }
        assert!(s / (n as f64) < 0.5, "asymmetry {}", s / n as f64);
    }

    #[test]
    fn warp_identity_and_integer_shift() {
        let f = texture(32, 0.0, 0.0);
        assert_eq!(warp(&f, &FlowField::zeros(32, 32)).unwrap(), f);
        let shifted = warp(&f, &FlowField::constant(32, 32, 2.0, 0.0)).unwrap();
        for y in 0..32 {
            for x in 0..30 {
                for ch in 0..3 {
                    assert_eq!(shifted.get(y, x, ch), f.get(y, x + 2, ch));
                }
            }
        }
        // edge clamping repeats the last column
        assert_eq!(shifted.get(5, 31, 0), f.get(5, 31, 0));
    }

    #[test]
    fn bad_inputs_rejected() {
        let f = texture(32, 0.0, 0.0);
        let g = texture(16, 0.0, 0.0);
        assert!(matches!(
            dense_flow(&f, &g, &FlowParams::default()),
            Err(Error::Shape(_))
        ));
        let deep = FlowParams {
            levels: 5,
            ..FlowParams::default()
        };
        assert!(matches!(dense_flow(&f, &f, &deep), Err(Error::Config(_))));
        let ok = FlowParams {
            levels: 4,
            ..FlowParams::default()
        };
        assert!(dense_flow(&f, &f, &ok).is_ok());
        let zero = FlowParams {
            levels: 0,
            ..FlowParams::default()
        };
        assert!(matches!(dense_flow(&f, &f, &zero), Err(Error::Config(_))));
        assert!(matches!(warp(&f, &FlowField::zeros(16, 16)), Err(Error::Shape(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn translation_consistent(dx in -3.0f64..3.0, dy in -3.0f64..3.0) {
            let f1 = texture(64, 0.0, 0.0);
            let f2 = texture(64, dx, dy);
            let flow = dense_flow(&f1, &f2, &FlowParams::default()).unwrap();
            let (u, v) = flow.interior_mean(8);
            prop_assert!((u - dx).abs() < 0.5 && (v - dy).abs() < 0.5, "({u}, {v}) vs ({dx}, {dy})");
        }
    }
}
