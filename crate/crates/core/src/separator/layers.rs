//! Building blocks of the embedding network. Activations are `[channels × T]`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::NormKind;
use crate::linalg::{gemm, Mat, View};
use crate::params::{Init, ParamStore, Slot};

const NORM_EPS: f64 = 1e-8;

/// Pointwise (1×1) convolution.
#[derive(Debug, Clone)]
pub struct Conv1x1 {
    pub weight: Slot,
    pub bias: Slot,
    pub cin: usize,
    pub cout: usize,
}

impl Conv1x1 {
    pub fn new<R: Rng>(name: &str, cin: usize, cout: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        Conv1x1 {
            weight: store.add(&alloc::format!("{name}.weight"), &[cout, cin], Init::FanIn(cin), rng),
            bias: store.add(&alloc::format!("{name}.bias"), &[cout], Init::FanIn(cin), rng),
            cin,
            cout,
        }
    }

    fn w<'a>(&self, p: &'a [f64]) -> View<'a> {
        View::row_major(self.weight.get(p), self.cout, self.cin)
    }

    /// `x` is any `[cin × T]` view.
    pub fn forward_view(&self, x: View<'_>, p: &[f64]) -> Mat {
        let t = x.cols;
        let mut y = Mat::zeros(self.cout, t);
        gemm(self.w(p), x, &mut y.data, 0.0);
        for (c, b) in self.bias.get(p).iter().enumerate() {
            for v in y.row_mut(c) {
                *v += b;
            }
        }
        y
    }

    pub fn forward(&self, x: &Mat, p: &[f64]) -> Mat {
        self.forward_view(x.view(), p)
    }

    /// Accumulates weight/bias gradients; returns `∂L/∂x` as `[cin × T]`.
    pub fn backward_view(&self, x: View<'_>, gy: &Mat, p: &[f64], grads: &mut [f64]) -> Mat {
        gemm(gy.view(), x.t(), self.weight.get_mut(grads), 1.0);
        for (c, b) in self.bias.get_mut(grads).iter_mut().enumerate() {
            *b += gy.row(c).iter().sum::<f64>();
        }
        let mut gx = Mat::zeros(self.cin, gy.cols);
        gemm(self.w(p).t(), gy.view(), &mut gx.data, 0.0);
        gx
    }

    pub fn backward(&self, x: &Mat, gy: &Mat, p: &[f64], grads: &mut [f64]) -> Mat {
        self.backward_view(x.view(), gy, p, grads)
    }
}

/// Frame-wise linear map producing `[T × cout]` directly (row-major by frame).
#[derive(Debug, Clone)]
pub struct FrameLinear {
    pub weight: Slot,
    pub bias: Slot,
    pub cin: usize,
    pub cout: usize,
}

impl FrameLinear {
    pub fn new<R: Rng>(name: &str, cin: usize, cout: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        FrameLinear {
            weight: store.add(&alloc::format!("{name}.weight"), &[cout, cin], Init::FanIn(cin), rng),
            bias: store.add(&alloc::format!("{name}.bias"), &[cout], Init::FanIn(cin), rng),
            cin,
            cout,
        }
    }

    /// `x` is `[cin × T]`; output is `[T × cout]`.
    pub fn forward(&self, x: &Mat, p: &[f64]) -> Mat {
        let w = View::row_major(self.weight.get(p), self.cout, self.cin);
        let mut y = Mat::zeros(x.cols, self.cout);
        gemm(x.view().t(), w.t(), &mut y.data, 0.0);
        let b = self.bias.get(p);
        for r in 0..y.rows {
            for (v, bb) in y.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
        y
    }

    /// `gy` is `[T × cout]`; returns `∂L/∂x` as `[cin × T]`.
    pub fn backward(&self, x: &Mat, gy: &Mat, p: &[f64], grads: &mut [f64]) -> Mat {
        gemm(gy.view().t(), x.view().t(), self.weight.get_mut(grads), 1.0);
        let gb = self.bias.get_mut(grads);
        for r in 0..gy.rows {
            for (b, g) in gb.iter_mut().zip(gy.row(r)) {
                *b += g;
            }
        }
        let w = View::row_major(self.weight.get(p), self.cout, self.cin);
        let mut gx = Mat::zeros(self.cin, gy.rows);
        gemm(w.t(), gy.view().t(), &mut gx.data, 0.0);
        gx
    }
}

/// Parametric ReLU with a single shared slope.
#[derive(Debug, Clone)]
pub struct PRelu {
    pub slope: Slot,
}

impl PRelu {
    pub fn new<R: Rng>(name: &str, store: &mut ParamStore, rng: &mut R) -> Self {
        PRelu { slope: store.add(name, &[1], Init::Constant(0.25), rng) }
    }

    pub fn forward(&self, x: &Mat, p: &[f64]) -> Mat {
        let a = self.slope.get(p)[0];
        Mat::from_vec(x.rows, x.cols, x.data.iter().map(|v| if *v > 0.0 { *v } else { a * v }).collect())
    }

    pub fn backward(&self, x: &Mat, gy: &Mat, p: &[f64], grads: &mut [f64]) -> Mat {
        let a = self.slope.get(p)[0];
        let mut ga = 0.0;
        let data = x
            .data
            .iter()
            .zip(&gy.data)
            .map(|(v, g)| {
                if *v > 0.0 {
                    *g
                } else {
                    ga += g * v;
                    a * g
                }
            })
            .collect();
        self.slope.get_mut(grads)[0] += ga;
        Mat::from_vec(x.rows, x.cols, data)
    }
}

/// Layer normalization with per-channel gain and bias, either over the whole
/// `[C × T]` block (global) or over channels per frame.
#[derive(Debug, Clone)]
pub struct Norm {
    pub kind: NormKind,
    pub gain: Slot,
    pub bias: Slot,
    pub channels: usize,
}

/// Normalized values and inverse standard deviations per group.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

impl Norm {
    pub fn new<R: Rng>(name: &str, kind: NormKind, channels: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        Norm {
            kind,
            gain: store.add(&alloc::format!("{name}.gain"), &[channels], Init::Constant(1.0), rng),
            bias: store.add(&alloc::format!("{name}.bias"), &[channels], Init::Zeros, rng),
            channels,
        }
    }

    pub fn forward(&self, x: &Mat, p: &[f64]) -> (Mat, NormCache) {
        let (c, t) = x.shape();
        let mut xhat = Mat::zeros(c, t);
        let inv_std = match self.kind {
            NormKind::Global => {
                let n = (c * t) as f64;
                let mean = x.data.iter().sum::<f64>() / n;
                let var = x.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let inv = 1.0 / libm::sqrt(var + NORM_EPS);
                for (h, v) in xhat.data.iter_mut().zip(&x.data) {
                    *h = (v - mean) * inv;
                }
                vec![inv]
            }
            NormKind::Channel => {
                let mut mean = vec![0.0; t];
                let mut var = vec![0.0; t];
                for r in 0..c {
                    for (m, v) in mean.iter_mut().zip(x.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= c as f64);
                for r in 0..c {
                    for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let inv: Vec<f64> = var.iter().map(|s| 1.0 / libm::sqrt(s / c as f64 + NORM_EPS)).collect();
                for r in 0..c {
                    let row = xhat.row_mut(r);
                    for (j, h) in row.iter_mut().enumerate() {
                        *h = (x.get(r, j) - mean[j]) * inv[j];
                    }
                }
                inv
            }
        };
        let gain = self.gain.get(p);
        let bias = self.bias.get(p);
        let mut y = xhat.clone();
        for r in 0..c {
            let (g, b) = (gain[r], bias[r]);
            for v in y.row_mut(r) {
                *v = g * *v + b;
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &NormCache, gy: &Mat, p: &[f64], grads: &mut [f64]) -> Mat {
        let (c, t) = gy.shape();
        let xhat = &cache.xhat;
        let gain = self.gain.get(p);
        {
            let gg = self.gain.get_mut(grads);
            for r in 0..c {
                gg[r] += gy.row(r).iter().zip(xhat.row(r)).map(|(g, h)| g * h).sum::<f64>();
            }
        }
        {
            let gb = self.bias.get_mut(grads);
            for r in 0..c {
                gb[r] += gy.row(r).iter().sum::<f64>();
            }
        }
        let mut gh = gy.clone();
        for r in 0..c {
            let g = gain[r];
            gh.row_mut(r).iter_mut().for_each(|v| *v *= g);
        }
        let mut gx = Mat::zeros(c, t);
        match self.kind {
            NormKind::Global => {
                let n = (c * t) as f64;
                let mean_g = gh.data.iter().sum::<f64>() / n;
                let mean_gh = gh.data.iter().zip(&xhat.data).map(|(g, h)| g * h).sum::<f64>() / n;
                let inv = cache.inv_std[0];
                for ((o, g), h) in gx.data.iter_mut().zip(&gh.data).zip(&xhat.data) {
                    *o = inv * (g - mean_g - h * mean_gh);
                }
            }
            NormKind::Channel => {
                let mut mean_g = vec![0.0; t];
                let mut mean_gh = vec![0.0; t];
                for r in 0..c {
                    for j in 0..t {
                        mean_g[j] += gh.get(r, j);
                        mean_gh[j] += gh.get(r, j) * xhat.get(r, j);
                    }
                }
                for r in 0..c {
                    for j in 0..t {
                        let v = cache.inv_std[j]
                            * (gh.get(r, j) - mean_g[j] / c as f64 - xhat.get(r, j) * mean_gh[j] / c as f64);
                        gx.set(r, j, v);
                    }
                }
            }
        }
        gx
    }
}

/// Per-channel dilated convolution along time, zero padded to keep `T`.
#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    pub weight: Slot,
    pub bias: Slot,
    pub channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl DepthwiseConv {
    pub fn new<R: Rng>(
        name: &str,
        channels: usize,
        kernel: usize,
        dilation: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        DepthwiseConv {
            weight: store.add(&alloc::format!("{name}.weight"), &[channels, kernel], Init::FanIn(kernel), rng),
            bias: store.add(&alloc::format!("{name}.bias"), &[channels], Init::FanIn(kernel), rng),
            channels,
            kernel,
            dilation,
        }
    }

    fn offset(&self, k: usize) -> isize {
        (k as isize - (self.kernel as isize - 1) / 2) * self.dilation as isize
    }

    /// Output range `[lo, hi)` of `t` for which `t + off` lies in `[0, len)`.
    fn valid(off: isize, len: usize) -> (usize, usize) {
        let lo = (-off).max(0) as usize;
        let hi = (len as isize - off.max(0)).max(0) as usize;
        (lo.min(len), hi.max(lo.min(len)))
    }

    pub fn forward(&self, x: &Mat, p: &[f64]) -> Mat {
        let (c, t) = x.shape();
        let w = self.weight.get(p);
        let b = self.bias.get(p);
        let mut y = Mat::zeros(c, t);
        for ch in 0..c {
            let xr = x.row(ch);
            let yr = y.row_mut(ch);
            yr.iter_mut().for_each(|v| *v = b[ch]);
            for k in 0..self.kernel {
                let wk = w[ch * self.kernel + k];
                let off = self.offset(k);
                let (lo, hi) = Self::valid(off, t);
                for j in lo..hi {
                    yr[j] += wk * xr[(j as isize + off) as usize];
                }
            }
        }
        y
    }

    pub fn backward(&self, x: &Mat, gy: &Mat, p: &[f64], grads: &mut [f64]) -> Mat {
        let (c, t) = x.shape();
        let w = self.weight.get(p);
        let mut gx = Mat::zeros(c, t);
        let mut gw = vec![0.0; c * self.kernel];
        let mut gb = vec![0.0; c];
        for ch in 0..c {
            let xr = x.row(ch);
            let gr = gy.row(ch);
            gb[ch] = gr.iter().sum();
            let gxr = gx.row_mut(ch);
            for k in 0..self.kernel {
                let wk = w[ch * self.kernel + k];
                let off = self.offset(k);
                let (lo, hi) = Self::valid(off, t);
                let mut acc = 0.0;
                for j in lo..hi {
                    let src = (j as isize + off) as usize;
                    gxr[src] += wk * gr[j];
                    acc += gr[j] * xr[src];
                }
                gw[ch * self.kernel + k] = acc;
            }
        }
        for (g, v) in self.weight.get_mut(grads).iter_mut().zip(&gw) {
            *g += v;
        }
        for (g, v) in self.bias.get_mut(grads).iter_mut().zip(&gb) {
            *g += v;
        }
        gx
    }
}

/// 1×1 conv → PReLU → norm → dilated depthwise conv → PReLU → norm → 1×1 conv,
/// added back onto the block input.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub expand: Conv1x1,
    pub act1: PRelu,
    pub norm1: Norm,
    pub depthwise: DepthwiseConv,
    pub act2: PRelu,
    pub norm2: Norm,
    pub project: Conv1x1,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    a1: Mat,
    n1_cache: NormCache,
    n1: Mat,
    d: Mat,
    n2_cache: NormCache,
    n2: Mat,
}

impl ResidualBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        channels: usize,
        hidden: usize,
        kernel: usize,
        dilation: usize,
        norm: NormKind,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        use alloc::format;
        ResidualBlock {
            expand: Conv1x1::new(&format!("{name}.expand"), channels, hidden, store, rng),
            act1: PRelu::new(&format!("{name}.prelu1"), store, rng),
            norm1: Norm::new(&format!("{name}.norm1"), norm, hidden, store, rng),
            depthwise: DepthwiseConv::new(&format!("{name}.depthwise"), hidden, kernel, dilation, store, rng),
            act2: PRelu::new(&format!("{name}.prelu2"), store, rng),
            norm2: Norm::new(&format!("{name}.norm2"), norm, hidden, store, rng),
            project: Conv1x1::new(&format!("{name}.project"), hidden, channels, store, rng),
        }
    }

    pub fn forward(&self, x: &Mat, p: &[f64]) -> (Mat, BlockCache) {
        let a1 = self.expand.forward(x, p);
        let (n1, n1_cache) = self.norm1.forward(&self.act1.forward(&a1, p), p);
        let d = self.depthwise.forward(&n1, p);
        let (n2, n2_cache) = self.norm2.forward(&self.act2.forward(&d, p), p);
        let mut y = self.project.forward(&n2, p);
        for (v, r) in y.data.iter_mut().zip(&x.data) {
            *v += r;
        }
        (y, BlockCache { a1, n1_cache, n1, d, n2_cache, n2 })
    }

    pub fn backward(&self, x: &Mat, cache: &BlockCache, gy: &Mat, p: &[f64], grads: &mut [f64]) -> Mat {
        let g_n2 = self.project.backward(&cache.n2, gy, p, grads);
        let g_p2 = self.norm2.backward(&cache.n2_cache, &g_n2, p, grads);
        let g_d = self.act2.backward(&cache.d, &g_p2, p, grads);
        let g_n1 = self.depthwise.backward(&cache.n1, &g_d, p, grads);
        let g_p1 = self.norm1.backward(&cache.n1_cache, &g_n1, p, grads);
        let g_a1 = self.act1.backward(&cache.a1, &g_p1, p, grads);
        let mut gx = self.expand.backward(x, &g_a1, p, grads);
        for (v, g) in gx.data.iter_mut().zip(&gy.data) {
            *v += g;
        }
        gx
    }
}
