//! Network building blocks with hand-written backward passes.
//!
//! Layers do not own weights: they hold offsets into one flat parameter
//! vector so the optimizer and the checkpoint see a single buffer.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;

/// `C = A·B + beta·C` with arbitrary strides. `a` is `m×k`, `b` is `k×n`,
/// `c` is `m×n` row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    let reach = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= reach(m, k, a_strides));
    assert!(b.len() >= reach(k, n, b_strides));
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Hands out consecutive parameter ranges while a network is declared.
#[derive(Debug, Default)]
pub(crate) struct ParamAlloc {
    pub(crate) len: usize,
}

impl ParamAlloc {
    fn take(&mut self, n: usize) -> usize {
        let at = self.len;
        self.len += n;
        at
    }
}

/// 3×3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone)]
pub(crate) struct Conv3 {
    pub(crate) cin: usize,
    pub(crate) cout: usize,
    pub(crate) w: usize,
    pub(crate) b: usize,
}

impl Conv3 {
    pub(crate) fn new(alloc: &mut ParamAlloc, cin: usize, cout: usize) -> Self {
        let w = alloc.take(cout * cin * 9);
        let b = alloc.take(cout);
        Conv3 { cin, cout, w, b }
    }

    fn k(&self) -> usize {
        self.cin * 9
    }

    pub(crate) fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.cout * self.k()]
    }

    /// He-normal weights scaled by `gain`, zero bias.
    pub(crate) fn init(&self, p: &mut [f64], gain: f64, rng: &mut impl Rng) {
        let std = gain * (2.0 / self.k() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = self.cout * self.k();
        p[self.w..self.w + n].iter_mut().for_each(|v| *v = normal.sample(rng));
        p[self.b..self.b + self.cout].iter_mut().for_each(|v| *v = 0.0);
    }

    /// Zeroes the weights reading input channels `from..cin`.
    pub(crate) fn zero_inputs_from(&self, p: &mut [f64], from: usize) {
        let k = self.k();
        for o in 0..self.cout {
            let row = self.w + o * k;
            p[row + from * 9..row + k].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Returns the output and the im2col buffer needed by `backward`.
    pub(crate) fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, Vec<f64>) {
        debug_assert_eq!(x.channels(), self.cin);
        let (h, w) = (x.height(), x.width());
        let hw = h * w;
        let cols = im2col(x);
        let mut y = Tensor::zeros(self.cout, h, w);
        let yd = y.data_mut();
        for o in 0..self.cout {
            let bias = p[self.b + o];
            yd[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = bias);
        }
        let k = self.k();
        gemm(self.cout, k, hw, self.weights(p), (k, 1), &cols, (hw, 1), 1.0, yd);
        (y, cols)
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient
    /// when asked for.
    pub(crate) fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cols: &[f64],
        dy: &Tensor,
        want_dx: bool,
    ) -> Option<Tensor> {
        let (h, w) = (dy.height(), dy.width());
        let hw = h * w;
        let k = self.k();
        let dyd = dy.data();
        for o in 0..self.cout {
            g[self.b + o] += dyd[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
        let gw = &mut g[self.w..self.w + self.cout * k];
        gemm(self.cout, hw, k, dyd, (hw, 1), cols, (1, hw), 1.0, gw);
        want_dx.then(|| {
            let mut dcols = vec![0.0; k * hw];
            gemm(k, self.cout, hw, self.weights(p), (1, k), dyd, (hw, 1), 0.0, &mut dcols);
            col2im(&dcols, self.cin, h, w)
        })
    }
}

/// Row `ci*9 + ky*3 + kx` holds input channel `ci` shifted by `(ky-1, kx-1)`.
fn im2col(x: &Tensor) -> Vec<f64> {
    let (c, h, w) = x.shape();
    let hw = h * w;
    let mut cols = vec![0.0; c * 9 * hw];
    for ci in 0..c {
        let src = x.channel(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            row[y * w + xx] = src[sy * w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize) -> Tensor {
    let hw = h * w;
    let mut x = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let dst = x.channel_mut(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sy * w + sx as usize] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Dense layer `y = W·x + b` with `W` stored `out×in`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub(crate) din: usize,
    pub(crate) dout: usize,
    pub(crate) w: usize,
    pub(crate) b: usize,
}

impl Linear {
    pub(crate) fn new(alloc: &mut ParamAlloc, din: usize, dout: usize) -> Self {
        let w = alloc.take(din * dout);
        let b = alloc.take(dout);
        Linear { din, dout, w, b }
    }

    pub(crate) fn init(&self, p: &mut [f64], gain: f64, rng: &mut impl Rng) {
        let std = gain * (1.0 / self.din as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        p[self.w..self.w + self.din * self.dout]
            .iter_mut()
            .for_each(|v| *v = normal.sample(rng));
        p[self.b..self.b + self.dout].iter_mut().for_each(|v| *v = 0.0);
    }

    pub(crate) fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.din);
        (0..self.dout)
            .map(|o| {
                let row = &p[self.w + o * self.din..][..self.din];
                p[self.b + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub(crate) fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.din];
        for (o, &d) in dy.iter().enumerate() {
            g[self.b + o] += d;
            let row = self.w + o * self.din;
            for i in 0..self.din {
                g[row + i] += d * x[i];
                dx[i] += d * p[row + i];
            }
        }
        dx
    }
}

/// 2×2 average pooling.
pub(crate) fn avg_pool2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros(c, ho, wo);
    for ci in 0..c {
        let src = x.channel(ci);
        let dst = y.channel_mut(ci);
        for i in 0..ho {
            for j in 0..wo {
                let s = src[2 * i * w + 2 * j]
                    + src[2 * i * w + 2 * j + 1]
                    + src[(2 * i + 1) * w + 2 * j]
                    + src[(2 * i + 1) * w + 2 * j + 1];
                dst[i * wo + j] = 0.25 * s;
            }
        }
    }
    y
}

pub(crate) fn avg_pool2_backward(dy: &Tensor) -> Tensor {
    let up = upsample2(dy);
    up.map(|v| 0.25 * v)
}

/// Nearest-neighbour 2× upsampling.
pub(crate) fn upsample2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let wo = 2 * w;
    let mut y = Tensor::zeros(c, 2 * h, wo);
    for ci in 0..c {
        let src = x.channel(ci);
        let dst = y.channel_mut(ci);
        for i in 0..2 * h {
            for j in 0..wo {
                dst[i * wo + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    y
}

pub(crate) fn upsample2_backward(dy: &Tensor) -> Tensor {
    // summing each 2×2 block is four times its average
    avg_pool2(dy).map(|v| 4.0 * v)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn naive_conv(p: &[f64], conv: &Conv3, x: &Tensor) -> Tensor {
        let (c, h, w) = x.shape();
        let mut y = Tensor::zeros(conv.cout, h, w);
        for o in 0..conv.cout {
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let mut acc = p[conv.b + o];
                    for ci in 0..c {
                        for ky in -1..=1isize {
                            for kx in -1..=1isize {
                                let (yy, xx) = (i + ky, j + kx);
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let wi = conv.w + o * c * 9 + ci * 9 + ((ky + 1) * 3 + kx + 1) as usize;
                                acc += p[wi] * x.channel(ci)[yy as usize * w + xx as usize];
                            }
                        }
                    }
                    y.channel_mut(o)[i as usize * w + j as usize] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut alloc = ParamAlloc::default();
        let conv = Conv3::new(&mut alloc, 3, 4);
        let mut p = Tensor::randn(1, 1, alloc.len, &mut rng).into_data();
        p[conv.b] = 0.7;
        let x = Tensor::randn(3, 5, 6, &mut rng);
        let (y, _) = conv.forward(&p, &x);
        assert!(y.max_abs_diff(&naive_conv(&p, &conv, &x)).unwrap() < 1e-12);
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <dy, conv(x)> is linear in x, so its input gradient satisfies
        // <dx, x> = <dy, conv(x) - bias>
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut alloc = ParamAlloc::default();
        let conv = Conv3::new(&mut alloc, 2, 3);
        let mut p = Tensor::randn(1, 1, alloc.len, &mut rng).into_data();
        p[conv.b..conv.b + 3].iter_mut().for_each(|v| *v = 0.0);
        let x = Tensor::randn(2, 4, 5, &mut rng);
        let dy = Tensor::randn(3, 4, 5, &mut rng);
        let (y, cols) = conv.forward(&p, &x);
        let mut g = vec![0.0; alloc.len];
        let dx = conv.backward(&p, &mut g, &cols, &dy, true).unwrap();
        let lhs: f64 = dx.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = dy.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        // and the same identity for the weights
        let wsum: f64 = g[conv.w..conv.b]
            .iter()
            .zip(&p[conv.w..conv.b])
            .map(|(a, b)| a * b)
            .sum();
        assert!((wsum - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(2, 4, 6, &mut rng);
        let d = Tensor::randn(2, 2, 3, &mut rng);
        let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(u, v)| u * v).sum::<f64>();
        assert!((dot(&avg_pool2(&x), &d) - dot(&x, &avg_pool2_backward(&d))).abs() < 1e-12);
        let big = Tensor::randn(2, 4, 6, &mut rng);
        assert!((dot(&upsample2(&d), &big) - dot(&d, &upsample2_backward(&big))).abs() < 1e-12);
    }

    #[test]
    fn silu_derivative() {
        for x in [-3.0, -0.5, 0.0, 0.2, 4.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn zeroed_input_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut alloc = ParamAlloc::default();
        let conv = Conv3::new(&mut alloc, 4, 2);
        let mut p = vec![0.0; alloc.len];
        conv.init(&mut p, 1.0, &mut rng);
        conv.zero_inputs_from(&mut p, 2);
        let a = Tensor::randn(4, 3, 3, &mut rng);
        let mut b = a.clone();
        b.channel_mut(3).iter_mut().for_each(|v| *v += 10.0);
        assert_eq!(conv.forward(&p, &a).0, conv.forward(&p, &b).0);
    }
}
