//! Layers with manual forward/backward. Training forwards (`forward_t`)
//! cache what backward needs; `infer` never mutates, so frozen snapshots
//! can be shared across threads.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::gemm::{matmul, matmul_into, Op};
use super::tensor::{Mat, Tensor4};
use crate::parallel;

const DEFAULT_WEIGHT_STD: f64 = 0.02;

/// Conv output extent for one axis.
#[inline]
pub fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

/// Transposed-conv output extent for one axis.
#[inline]
pub fn deconv_out(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len - 1) * stride + k - 2 * pad
}

/// Patch matrix: rows = c*k*k, cols = n*oh*ow (sample-major columns).
fn im2col(x: &Tensor4, k: usize, stride: usize, pad: usize) -> Mat {
    let oh = conv_out(x.h, k, stride, pad);
    let ow = conv_out(x.w, k, stride, pad);
    let (n, c, h, w) = x.shape();
    let s_out = oh * ow;
    let rows = c * k * k;
    let cols = n * s_out;
    let mut m = Mat::zeros(rows, cols);
    let row_chunk = rows.div_ceil(parallel::CHUNKS).max(1);
    let xs = &x.data;
    parallel::for_each_chunk_mut(&mut m.data, row_chunk * cols, |ci, chunk| {
        let r0 = ci * row_chunk;
        for (ri, out_row) in chunk.chunks_mut(cols).enumerate() {
            let r = r0 + ri;
            let ch = r / (k * k);
            let rem = r % (k * k);
            let ky = rem / k;
            let kx = rem % k;
            for ni in 0..n {
                let base_in = (ni * c + ch) * h * w;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let out_off = ni * s_out + oy * ow;
                    if iy < 0 || iy >= h as isize {
                        continue; // stays zero
                    }
                    let in_row = base_in + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out_row[out_off + ox] = xs[in_row + ix as usize];
                        }
                    }
                }
            }
        }
    });
    m
}

/// Inverse of [`im2col`]: accumulate patch columns back into an image.
fn col2im(cols: &Mat, n: usize, c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Tensor4 {
    let oh = conv_out(h, k, stride, pad);
    let ow = conv_out(w, k, stride, pad);
    let s_out = oh * ow;
    debug_assert_eq!(cols.rows, c * k * k);
    debug_assert_eq!(cols.cols, n * s_out);
    let mut y = Tensor4::zeros(n, c, h, w);
    let plane = h * w;
    // parallel over channels: channel ch only writes y[:, ch, :, :]
    let ch_chunk = c.div_ceil(parallel::CHUNKS).max(1);
    let cols_ref = &*cols;
    struct SendPtr(*mut f64);
    unsafe impl Send for SendPtr {}
    unsafe impl Sync for SendPtr {}
    let y_ptr = SendPtr(y.data.as_mut_ptr());
    parallel::for_each_range(c, ch_chunk, |range| {
        let y_ptr = &y_ptr;
        for ch in range {
            for ky in 0..k {
                for kx in 0..k {
                    let r = (ch * k + ky) * k + kx;
                    let row = cols_ref.row(r);
                    for ni in 0..n {
                        let base = (ni * c + ch) * plane;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let col_off = ni * s_out + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    let dst = base + iy as usize * w + ix as usize;
                                    unsafe {
                                        *y_ptr.0.add(dst) += row[col_off + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    y
}

/// Channel-first view: m[c, n*s + s_i] = x[n, c, s_i].
fn gather_cf(x: &Tensor4) -> Mat {
    let (n, c, _, _) = x.shape();
    let s = x.spatial();
    let mut m = Mat::zeros(c, n * s);
    let xs = &x.data;
    parallel::for_each_chunk_mut(&mut m.data, (n * s).max(1), |ch, row| {
        for ni in 0..n {
            let src = &xs[(ni * c + ch) * s..(ni * c + ch + 1) * s];
            row[ni * s..(ni + 1) * s].copy_from_slice(src);
        }
    });
    m
}

/// Inverse of [`gather_cf`].
fn scatter_cf(m: &Mat, n: usize, h: usize, w: usize) -> Tensor4 {
    let c = m.rows;
    let s = h * w;
    debug_assert_eq!(m.cols, n * s);
    let mut x = Tensor4::zeros(n, c, h, w);
    let sample = c * s;
    parallel::for_each_chunk_mut(&mut x.data, sample, |ni, dst| {
        for ch in 0..c {
            let src = &m.row(ch)[ni * s..(ni + 1) * s];
            dst[ch * s..(ch + 1) * s].copy_from_slice(src);
        }
    });
    x
}

fn add_channel_bias(y: &mut Tensor4, b: &[f64]) {
    let s = y.spatial();
    let c = y.c;
    let sample = c * s;
    parallel::for_each_chunk_mut(&mut y.data, sample, |_, dst| {
        for ch in 0..c {
            let bv = b[ch];
            for v in &mut dst[ch * s..(ch + 1) * s] {
                *v += bv;
            }
        }
    });
}

fn channel_sums(gy: &Tensor4) -> Vec<f64> {
    let s = gy.spatial();
    let mut sums = vec![0.0; gy.c];
    for ni in 0..gy.n {
        let sample = gy.sample(ni);
        for (ch, acc) in sums.iter_mut().enumerate() {
            *acc += sample[ch * s..(ch + 1) * s].iter().sum::<f64>();
        }
    }
    sums
}

fn init_normal(v: &mut [f64], std: f64, rng: &mut impl Rng) {
    let dist = Normal::new(0.0, std).unwrap();
    for x in v.iter_mut() {
        *x = dist.sample(rng);
    }
}

// ---------------------------------------------------------------------------

/// 2-D convolution, weight layout (out_ch, in_ch*k*k).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Mat,
    pub b: Vec<f64>,
    pub gw: Mat,
    pub gb: Vec<f64>,
    cache_x: Option<Tensor4>,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let mut w = Mat::zeros(out_ch, in_ch * k * k);
        init_normal(&mut w.data, DEFAULT_WEIGHT_STD, rng);
        Conv2d {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            gw: Mat::zeros(out_ch, in_ch * k * k),
            gb: vec![0.0; out_ch],
            w,
            b: vec![0.0; out_ch],
            cache_x: None,
        }
    }

    pub fn out_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out(h, self.k, self.stride, self.pad),
            conv_out(w, self.k, self.stride, self.pad),
        )
    }

    pub fn infer(&self, x: &Tensor4) -> Tensor4 {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (oh, ow) = self.out_shape(x.h, x.w);
        let cols = im2col(x, self.k, self.stride, self.pad);
        let y_cf = matmul(&self.w, Op::None, &cols, Op::None);
        let mut y = scatter_cf(&y_cf, x.n, oh, ow);
        add_channel_bias(&mut y, &self.b);
        y
    }

    pub fn forward_t(&mut self, x: &Tensor4) -> Tensor4 {
        let y = self.infer(x);
        self.cache_x = Some(x.clone());
        y
    }

    /// Accumulates gw/gb, returns gx.
    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let x = self.cache_x.take().expect("conv backward without forward");
        let gy_cf = gather_cf(gy);
        let cols = im2col(&x, self.k, self.stride, self.pad);
        matmul_into(&gy_cf, Op::None, &cols, Op::Transpose, &mut self.gw, 1.0);
        for (acc, s) in self.gb.iter_mut().zip(channel_sums(gy)) {
            *acc += s;
        }
        let gcols = matmul(&self.w, Op::Transpose, &gy_cf, Op::None);
        col2im(&gcols, x.n, x.c, x.h, x.w, self.k, self.stride, self.pad)
    }
}

/// Transposed 2-D convolution, weight layout (in_ch, out_ch*k*k).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Mat,
    pub b: Vec<f64>,
    pub gw: Mat,
    pub gb: Vec<f64>,
    cache_x: Option<Tensor4>,
}

impl ConvTranspose2d {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let mut w = Mat::zeros(in_ch, out_ch * k * k);
        init_normal(&mut w.data, DEFAULT_WEIGHT_STD, rng);
        ConvTranspose2d {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            gw: Mat::zeros(in_ch, out_ch * k * k),
            gb: vec![0.0; out_ch],
            w,
            b: vec![0.0; out_ch],
            cache_x: None,
        }
    }

    pub fn out_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (
            deconv_out(h, self.k, self.stride, self.pad),
            deconv_out(w, self.k, self.stride, self.pad),
        )
    }

    pub fn infer(&self, x: &Tensor4) -> Tensor4 {
        assert_eq!(x.c, self.in_ch, "deconv input channels");
        let (oh, ow) = self.out_shape(x.h, x.w);
        let x_cf = gather_cf(x);
        // (oc*k*k, ic) * (ic, n*s_in) -> patch columns of the output image
        let cols = matmul(&self.w, Op::Transpose, &x_cf, Op::None);
        let mut y = col2im(&cols, x.n, self.out_ch, oh, ow, self.k, self.stride, self.pad);
        add_channel_bias(&mut y, &self.b);
        y
    }

    pub fn forward_t(&mut self, x: &Tensor4) -> Tensor4 {
        let y = self.infer(x);
        self.cache_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let x = self.cache_x.take().expect("deconv backward without forward");
        let gcols = im2col(gy, self.k, self.stride, self.pad);
        let x_cf = gather_cf(&x);
        matmul_into(&x_cf, Op::None, &gcols, Op::Transpose, &mut self.gw, 1.0);
        for (acc, s) in self.gb.iter_mut().zip(channel_sums(gy)) {
            *acc += s;
        }
        let gx_cf = matmul(&self.w, Op::None, &gcols, Op::None);
        scatter_cf(&gx_cf, x.n, x.h, x.w)
    }
}

// ---------------------------------------------------------------------------

/// How a batch-norm forward should treat statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; update running buffers.
    Train,
    /// Batch statistics; leave running buffers untouched (frozen nets inside
    /// another net's training step).
    TrainFrozenStats,
    /// Running statistics (inference).
    Eval,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub c: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub g_gamma: Vec<f64>,
    pub g_beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor4,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(c: usize, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(1.0, DEFAULT_WEIGHT_STD).unwrap();
        BatchNorm2d {
            c,
            gamma: (0..c).map(|_| dist.sample(rng)).collect(),
            beta: vec![0.0; c],
            g_gamma: vec![0.0; c],
            g_beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn batch_stats(&self, x: &Tensor4) -> (Vec<f64>, Vec<f64>) {
        let s = x.spatial();
        let count = (x.n * s) as f64;
        let mut mean = vec![0.0; self.c];
        let mut var = vec![0.0; self.c];
        for ni in 0..x.n {
            let sample = x.sample(ni);
            for ch in 0..self.c {
                mean[ch] += sample[ch * s..(ch + 1) * s].iter().sum::<f64>();
            }
        }
        for m in mean.iter_mut() {
            *m /= count;
        }
        for ni in 0..x.n {
            let sample = x.sample(ni);
            for ch in 0..self.c {
                let m = mean[ch];
                var[ch] += sample[ch * s..(ch + 1) * s]
                    .iter()
                    .map(|v| (v - m) * (v - m))
                    .sum::<f64>();
            }
        }
        for v in var.iter_mut() {
            *v /= count;
        }
        (mean, var)
    }

    fn normalize(&self, x: &Tensor4, mean: &[f64], var: &[f64]) -> (Tensor4, Tensor4, Vec<f64>) {
        let s = x.spatial();
        let c = self.c;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Tensor4::zeros(x.n, c, x.h, x.w);
        let mut y = Tensor4::zeros(x.n, c, x.h, x.w);
        let xs = &x.data;
        let sample = c * s;
        let (gamma, beta, mean_r, inv_r) = (&self.gamma, &self.beta, mean, &inv_std);
        parallel::for_each_chunk_mut(&mut xhat.data, sample, |ni, dst| {
            let src = &xs[ni * sample..(ni + 1) * sample];
            for ch in 0..c {
                let (m, is) = (mean_r[ch], inv_r[ch]);
                for (d, v) in dst[ch * s..(ch + 1) * s].iter_mut().zip(&src[ch * s..(ch + 1) * s]) {
                    *d = (*v - m) * is;
                }
            }
        });
        let xh = &xhat.data;
        parallel::for_each_chunk_mut(&mut y.data, sample, |ni, dst| {
            let src = &xh[ni * sample..(ni + 1) * sample];
            for ch in 0..c {
                let (g, b) = (gamma[ch], beta[ch]);
                for (d, v) in dst[ch * s..(ch + 1) * s].iter_mut().zip(&src[ch * s..(ch + 1) * s]) {
                    *d = g * *v + b;
                }
            }
        });
        (y, xhat, inv_std)
    }

    pub fn forward_t(&mut self, x: &Tensor4, mode: BnMode) -> Tensor4 {
        assert_eq!(x.c, self.c, "bn channels");
        match mode {
            BnMode::Eval => self.infer(x),
            BnMode::Train | BnMode::TrainFrozenStats => {
                let (mean, var) = self.batch_stats(x);
                if mode == BnMode::Train {
                    for ch in 0..self.c {
                        self.running_mean[ch] =
                            (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean[ch];
                        self.running_var[ch] =
                            (1.0 - self.momentum) * self.running_var[ch] + self.momentum * var[ch];
                    }
                }
                let (y, xhat, inv_std) = self.normalize(x, &mean, &var);
                self.cache = Some(BnCache { xhat, inv_std });
                y
            }
        }
    }

    pub fn infer(&self, x: &Tensor4) -> Tensor4 {
        let (y, _, _) = self.normalize(x, &self.running_mean, &self.running_var);
        y
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let BnCache { xhat, inv_std } = self.cache.take().expect("bn backward without forward");
        let s = gy.spatial();
        let c = self.c;
        let count = (gy.n * s) as f64;
        // per-channel sums of gy and gy*xhat
        let mut sum_gy = vec![0.0; c];
        let mut sum_gy_xhat = vec![0.0; c];
        for ni in 0..gy.n {
            let g = gy.sample(ni);
            let xh = xhat.sample(ni);
            for ch in 0..c {
                let r = ch * s..(ch + 1) * s;
                let mut a = 0.0;
                let mut b = 0.0;
                for (gv, xv) in g[r.clone()].iter().zip(&xh[r]) {
                    a += gv;
                    b += gv * xv;
                }
                sum_gy[ch] += a;
                sum_gy_xhat[ch] += b;
            }
        }
        for ch in 0..c {
            self.g_beta[ch] += sum_gy[ch];
            self.g_gamma[ch] += sum_gy_xhat[ch];
        }
        let mut gx = Tensor4::zeros(gy.n, c, gy.h, gy.w);
        let sample = c * s;
        let gys = &gy.data;
        let xhs = &xhat.data;
        let (gamma, sg, sgx, inv) = (&self.gamma, &sum_gy, &sum_gy_xhat, &inv_std);
        parallel::for_each_chunk_mut(&mut gx.data, sample, |ni, dst| {
            let g = &gys[ni * sample..(ni + 1) * sample];
            let xh = &xhs[ni * sample..(ni + 1) * sample];
            for ch in 0..c {
                let coef = gamma[ch] * inv[ch] / count;
                let (mg, mgx) = (sg[ch], sgx[ch]);
                for i in ch * s..(ch + 1) * s {
                    dst[i] = coef * (count * g[i] - mg - xh[i] * mgx);
                }
            }
        });
        gx
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

/// Elementwise activation with a cached output for backward.
#[derive(Debug, Clone)]
pub struct ActLayer {
    pub kind: Activation,
    cache_y: Option<Vec<f64>>,
}

impl ActLayer {
    pub fn new(kind: Activation) -> Self {
        ActLayer { kind, cache_y: None }
    }

    fn apply(kind: Activation, v: f64) -> f64 {
        match kind {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu(s) => {
                if v > 0.0 {
                    v
                } else {
                    s * v
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Tanh => v.tanh(),
        }
    }

    fn deriv_from_y(kind: Activation, y: f64) -> f64 {
        match kind {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if y > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn infer(&self, x: &Tensor4) -> Tensor4 {
        let kind = self.kind;
        let mut y = x.clone();
        let chunk = y.data.len().div_ceil(parallel::CHUNKS).max(1);
        parallel::for_each_chunk_mut(&mut y.data, chunk, |_, c| {
            for v in c.iter_mut() {
                *v = Self::apply(kind, *v);
            }
        });
        y
    }

    pub fn forward_t(&mut self, x: &Tensor4) -> Tensor4 {
        let y = self.infer(x);
        self.cache_y = Some(y.data.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let ys = self.cache_y.take().expect("act backward without forward");
        let kind = self.kind;
        let mut gx = gy.clone();
        for (g, y) in gx.data.iter_mut().zip(&ys) {
            *g *= Self::deriv_from_y(kind, *y);
        }
        gx
    }
}

// ---------------------------------------------------------------------------

/// Fully connected layer on row-batched matrices: y = x W^T + b.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Mat,
    pub b: Vec<f64>,
    pub gw: Mat,
    pub gb: Vec<f64>,
    cache_x: Option<Mat>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self::with_std(in_dim, out_dim, DEFAULT_WEIGHT_STD, rng)
    }

    pub fn with_std(in_dim: usize, out_dim: usize, std: f64, rng: &mut impl Rng) -> Self {
        let mut w = Mat::zeros(out_dim, in_dim);
        init_normal(&mut w.data, std, rng);
        Linear {
            in_dim,
            out_dim,
            gw: Mat::zeros(out_dim, in_dim),
            gb: vec![0.0; out_dim],
            w,
            b: vec![0.0; out_dim],
            cache_x: None,
        }
    }

    pub fn infer(&self, x: &Mat) -> Mat {
        assert_eq!(x.cols, self.in_dim, "linear input dim");
        let mut y = matmul(x, Op::None, &self.w, Op::Transpose);
        for r in 0..y.rows {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        y
    }

    pub fn forward_t(&mut self, x: &Mat) -> Mat {
        let y = self.infer(x);
        self.cache_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Mat) -> Mat {
        let x = self.cache_x.take().expect("linear backward without forward");
        self.backward_explicit(&x, gy)
    }

    /// Backward with the input supplied by the caller; used by rollouts that
    /// apply the layer once per time step.
    pub fn backward_explicit(&mut self, x: &Mat, gy: &Mat) -> Mat {
        matmul_into(gy, Op::Transpose, x, Op::None, &mut self.gw, 1.0);
        for r in 0..gy.rows {
            for (acc, g) in self.gb.iter_mut().zip(gy.row(r)) {
                *acc += g;
            }
        }
        matmul(gy, Op::None, &self.w, Op::None)
    }
}

/// Row-wise softmax (stable).
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut y = x.clone();
    for r in 0..y.rows {
        let row = y.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(7)
    }

    fn naive_conv(x: &Tensor4, w: &Mat, b: &[f64], oc: usize, k: usize, st: usize, p: usize) -> Tensor4 {
        let oh = conv_out(x.h, k, st, p);
        let ow = conv_out(x.w, k, st, p);
        let mut y = Tensor4::zeros(x.n, oc, oh, ow);
        for n in 0..x.n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[o];
                        for c in 0..x.c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * st + ky) as isize - p as isize;
                                    let ix = (ox * st + kx) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        acc += x.at(n, c, iy as usize, ix as usize)
                                            * w.at(o, (c * k + ky) * k + kx);
                                    }
                                }
                            }
                        }
                        *y.data.get_mut(y.idx(n, o, oy, ox)).unwrap() = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
        let data = (0..n * c * h * w).map(|i| ((i as f64) * 0.37).sin()).collect();
        Tensor4::from_data(n, c, h, w, data)
    }

    #[test]
    fn conv_matches_naive() {
        let mut r = rng();
        let conv = Conv2d::new(3, 5, 4, 2, 1, &mut r);
        let x = ramp(2, 3, 8, 8);
        let y = conv.infer(&x);
        let yn = naive_conv(&x, &conv.w, &conv.b, 5, 4, 2, 1);
        assert_eq!(y.shape(), (2, 5, 4, 4));
        for (a, b) in y.data.iter().zip(&yn.data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_stride1_pad1_shapes() {
        // the discriminator tail: 8 -> 7 -> 6 with Conv(4,1,1)
        let mut r = rng();
        let conv = Conv2d::new(1, 1, 4, 1, 1, &mut r);
        assert_eq!(conv.out_shape(8, 8), (7, 7));
        assert_eq!(conv.out_shape(7, 7), (6, 6));
    }

    #[test]
    fn deconv_inverts_conv_shapes() {
        let mut r = rng();
        let up = ConvTranspose2d::new(8, 4, 4, 2, 1, &mut r);
        assert_eq!(up.out_shape(4, 4), (8, 8));
        let up0 = ConvTranspose2d::new(8, 4, 4, 1, 0, &mut r);
        assert_eq!(up0.out_shape(1, 1), (4, 4));
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, deconv(y)> when deconv shares the (transposed) weights
        let mut r = rng();
        let conv = Conv2d::new(2, 3, 4, 2, 1, &mut r);
        let mut deconv = ConvTranspose2d::new(3, 2, 4, 2, 1, &mut r);
        // reorder conv weights (oc, ic*k*k) into deconv layout (ic, oc*k*k)
        for o in 0..3 {
            for c in 0..2 {
                for t in 0..16 {
                    *deconv.w.at_mut(c, o * 16 + t) = conv.w.at(o, c * 16 + t);
                }
            }
        }
        deconv.b = vec![0.0; 2];
        let mut convz = conv.clone();
        convz.b = vec![0.0; 3];
        let x = ramp(1, 2, 8, 8);
        let y = ramp(1, 3, 4, 4);
        let cx = convz.infer(&x);
        let dy = deconv.infer(&y);
        let lhs: f64 = cx.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn batchnorm_normalizes() {
        let mut r = rng();
        let mut bn = BatchNorm2d::new(2, &mut r);
        bn.gamma = vec![1.0, 1.0];
        let x = ramp(4, 2, 5, 5);
        let y = bn.forward_t(&x, BnMode::Train);
        let s = y.spatial();
        for ch in 0..2 {
            let mut mean = 0.0;
            let mut var = 0.0;
            for n in 0..4 {
                for v in &y.sample(n)[ch * s..(ch + 1) * s] {
                    mean += v;
                }
            }
            mean /= (4 * s) as f64;
            for n in 0..4 {
                for v in &y.sample(n)[ch * s..(ch + 1) * s] {
                    var += (v - mean) * (v - mean);
                }
            }
            var /= (4 * s) as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn frozen_stats_mode_keeps_buffers() {
        let mut r = rng();
        let mut bn = BatchNorm2d::new(3, &mut r);
        let before = (bn.running_mean.clone(), bn.running_var.clone());
        let x = ramp(2, 3, 4, 4);
        let _ = bn.forward_t(&x, BnMode::TrainFrozenStats);
        assert_eq!(before.0, bn.running_mean);
        assert_eq!(before.1, bn.running_var);
    }

    #[test]
    fn parallel_matches_sequential_conv() {
        let mut r = rng();
        let conv = Conv2d::new(4, 8, 4, 2, 1, &mut r);
        let x = ramp(6, 4, 16, 16);
        let y_par = conv.infer(&x);
        crate::parallel::set_force_sequential(true);
        let y_seq = conv.infer(&x);
        crate::parallel::set_force_sequential(false);
        assert_eq!(y_par.data, y_seq.data);
    }
}
