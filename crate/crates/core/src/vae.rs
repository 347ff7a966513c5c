//! Landmark-image variational autoencoder. Produces the 100-d embedding
//! space all sequence generation happens in: four stride-2 conv stages down
//! to 4x4, two valid convs to the latent heads, and a mirrored deconv
//! decoder ending in a sigmoid.

use rand::Rng;

use crate::error::{validation, Error, Result};
use crate::landmark::LandmarkImage;
use crate::nn::layers::{ActLayer, Activation, BatchNorm2d, BnMode, Conv2d, ConvTranspose2d};
use crate::nn::optim::{HasParams, HasState};
use crate::nn::tensor::{Mat, Tensor4};
use crate::{EMBED_DIM, IMAGE_SIDE};

const LOGVAR_CLAMP: f64 = 10.0;
const BCE_EPS: f64 = 1e-7;
const LEAK: f64 = 0.2;

/// A point in the landmark embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.len() != EMBED_DIM {
            return Err(validation(format!("embedding dim {} != {EMBED_DIM}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(validation("non-finite embedding".into()));
        }
        Ok(Embedding(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Batched diagonal Gaussian over the latent space; log-variance clamped.
#[derive(Debug, Clone)]
pub struct LatentDistribution {
    pub mean: Mat,
    pub log_var: Mat,
}

impl LatentDistribution {
    pub fn batch(&self) -> usize {
        self.mean.rows
    }

    pub fn mean_embedding(&self, row: usize) -> Embedding {
        Embedding(self.mean.row(row).to_vec())
    }
}

/// mean + exp(log_var / 2) * noise, row-wise.
pub fn sample_latent(dist: &LatentDistribution, noise: &Mat) -> Mat {
    assert_eq!(noise.rows, dist.mean.rows);
    assert_eq!(noise.cols, dist.mean.cols);
    let mut z = dist.mean.clone();
    for i in 0..z.data.len() {
        z.data[i] += (dist.log_var.data[i] / 2.0).exp() * noise.data[i];
    }
    z
}

// --- loss pieces ----------------------------------------------------------

/// Negated pixel-wise binary cross-entropy, summed over pixels, with the
/// prediction clamped to [1e-7, 1 - 1e-7].
pub fn bce_sum(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = 0.0;
    for (&xv, &yv) in x.iter().zip(y) {
        let xc = xv.clamp(BCE_EPS, 1.0 - BCE_EPS);
        acc -= yv * xc.ln() + (1.0 - yv) * (1.0 - xc).ln();
    }
    acc
}

/// d(bce_sum)/dx; zero where the clamp is active.
pub fn bce_grad(x: &[f64], y: &[f64], scale: f64) -> Vec<f64> {
    x.iter()
        .zip(y)
        .map(|(&xv, &yv)| {
            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&xv) {
                0.0
            } else {
                scale * (-(yv / xv) + (1.0 - yv) / (1.0 - xv))
            }
        })
        .collect()
}

/// KL(q || N(0, I)) summed over dimensions for one row.
pub fn kl_sum(mean: &[f64], log_var: &[f64]) -> f64 {
    mean.iter()
        .zip(log_var)
        .map(|(&m, &lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum()
}

/// Gradients of [`kl_sum`]: (d/dmean, d/dlog_var).
pub fn kl_grad(mean: &[f64], log_var: &[f64], scale: f64) -> (Vec<f64>, Vec<f64>) {
    let gm = mean.iter().map(|&m| scale * m).collect();
    let glv = log_var.iter().map(|&lv| scale * 0.5 * (lv.exp() - 1.0)).collect();
    (gm, glv)
}

/// Full VAE objective on a batch: (total, bce, kl), each batch-averaged;
/// bce and kl are per-image sums.
pub fn vae_loss(img: &Tensor4, recon: &Tensor4, dist: &LatentDistribution, kl_weight: f64) -> (f64, f64, f64) {
    assert_eq!(img.shape(), recon.shape(), "vae_loss shapes");
    let n = img.n as f64;
    let mut bce = 0.0;
    for ni in 0..img.n {
        bce += bce_sum(recon.sample(ni), img.sample(ni));
    }
    bce /= n;
    let mut kl = 0.0;
    for r in 0..dist.batch() {
        kl += kl_sum(dist.mean.row(r), dist.log_var.row(r));
    }
    kl /= dist.batch() as f64;
    (bce + kl_weight * kl, bce, kl)
}

// --- the network -----------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LandmarkVae {
    pub latent_dim: usize,
    pub base: usize,
    e1: Conv2d,
    ea1: ActLayer,
    e2: Conv2d,
    ebn2: BatchNorm2d,
    ea2: ActLayer,
    e3: Conv2d,
    ebn3: BatchNorm2d,
    ea3: ActLayer,
    e4: Conv2d,
    ebn4: BatchNorm2d,
    ea4: ActLayer,
    head_mean: Conv2d,
    head_logvar: Conv2d,
    d1: ConvTranspose2d,
    dbn1: BatchNorm2d,
    da1: ActLayer,
    d2: ConvTranspose2d,
    dbn2: BatchNorm2d,
    da2: ActLayer,
    d3: ConvTranspose2d,
    dbn3: BatchNorm2d,
    da3: ActLayer,
    d4: ConvTranspose2d,
    dbn4: BatchNorm2d,
    da4: ActLayer,
    d5: ConvTranspose2d,
    out_act: ActLayer,
    clamp_mask: Option<Vec<bool>>,
}

impl LandmarkVae {
    pub fn new(latent_dim: usize, base: usize, rng: &mut impl Rng) -> Self {
        let lr = || ActLayer::new(Activation::LeakyRelu(LEAK));
        LandmarkVae {
            latent_dim,
            base,
            e1: Conv2d::new(1, base, 4, 2, 1, rng),
            ea1: lr(),
            e2: Conv2d::new(base, 2 * base, 4, 2, 1, rng),
            ebn2: BatchNorm2d::new(2 * base, rng),
            ea2: lr(),
            e3: Conv2d::new(2 * base, 4 * base, 4, 2, 1, rng),
            ebn3: BatchNorm2d::new(4 * base, rng),
            ea3: lr(),
            e4: Conv2d::new(4 * base, 8 * base, 4, 2, 1, rng),
            ebn4: BatchNorm2d::new(8 * base, rng),
            ea4: lr(),
            head_mean: Conv2d::new(8 * base, latent_dim, 4, 1, 0, rng),
            head_logvar: Conv2d::new(8 * base, latent_dim, 4, 1, 0, rng),
            d1: ConvTranspose2d::new(latent_dim, 8 * base, 4, 1, 0, rng),
            dbn1: BatchNorm2d::new(8 * base, rng),
            da1: lr(),
            d2: ConvTranspose2d::new(8 * base, 4 * base, 4, 2, 1, rng),
            dbn2: BatchNorm2d::new(4 * base, rng),
            da2: lr(),
            d3: ConvTranspose2d::new(4 * base, 2 * base, 4, 2, 1, rng),
            dbn3: BatchNorm2d::new(2 * base, rng),
            da3: lr(),
            d4: ConvTranspose2d::new(2 * base, base, 4, 2, 1, rng),
            dbn4: BatchNorm2d::new(base, rng),
            da4: lr(),
            d5: ConvTranspose2d::new(base, 1, 4, 2, 1, rng),
            out_act: ActLayer::new(Activation::Sigmoid),
            clamp_mask: None,
        }
    }

    /// Spatial side chain of the encoder for a given input side.
    pub fn encoder_shape_chain(&self, side: usize) -> Vec<(usize, usize)> {
        let mut chain = vec![(1, side)];
        let mut s = side;
        for ch in [self.base, 2 * self.base, 4 * self.base, 8 * self.base] {
            s = crate::nn::layers::conv_out(s, 4, 2, 1);
            chain.push((ch, s));
        }
        s = crate::nn::layers::conv_out(s, 4, 1, 0);
        chain.push((self.latent_dim, s));
        chain
    }

    pub fn batch_from_images(images: &[&LandmarkImage]) -> Result<Tensor4> {
        if images.is_empty() {
            return Err(validation("empty image batch".into()));
        }
        let side = images[0].side;
        let mut t = Tensor4::zeros(images.len(), 1, side, side);
        for (i, img) in images.iter().enumerate() {
            if img.side != side {
                return Err(Error::Shape {
                    expected: format!("{side}x{side}"),
                    got: format!("{}x{}", img.side, img.side),
                });
            }
            t.sample_mut(i).copy_from_slice(&img.data);
        }
        Ok(t)
    }

    pub fn image_from_sample(recon: &Tensor4, n: usize) -> LandmarkImage {
        LandmarkImage {
            side: recon.h,
            data: recon.sample(n).to_vec(),
            binary: false,
        }
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.c != 1 || x.h != IMAGE_SIDE || x.w != IMAGE_SIDE {
            return Err(Error::Shape {
                expected: format!("(N, 1, {IMAGE_SIDE}, {IMAGE_SIDE})"),
                got: format!("({}, {}, {}, {})", x.n, x.c, x.h, x.w),
            });
        }
        Ok(())
    }

    fn heads_to_dist(&mut self, mean_t: Tensor4, logvar_t: Tensor4) -> LatentDistribution {
        let n = mean_t.n;
        let mean = Mat::from_data(n, self.latent_dim, mean_t.data);
        let mut log_var = Mat::from_data(n, self.latent_dim, logvar_t.data);
        let mut mask = vec![true; log_var.data.len()];
        for (v, m) in log_var.data.iter_mut().zip(mask.iter_mut()) {
            if v.abs() > LOGVAR_CLAMP {
                *v = v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP);
                *m = false;
            }
        }
        self.clamp_mask = Some(mask);
        LatentDistribution { mean, log_var }
    }

    /// Inference-mode encoding (frozen batch-norm statistics).
    pub fn encode(&self, x: &Tensor4) -> Result<LatentDistribution> {
        self.check_input(x)?;
        let x1 = self.ea1.infer(&self.e1.infer(x));
        let x2 = self.ea2.infer(&self.ebn2.infer(&self.e2.infer(&x1)));
        let x3 = self.ea3.infer(&self.ebn3.infer(&self.e3.infer(&x2)));
        let x4 = self.ea4.infer(&self.ebn4.infer(&self.e4.infer(&x3)));
        let mean_t = self.head_mean.infer(&x4);
        let logvar_t = self.head_logvar.infer(&x4);
        let n = mean_t.n;
        let mean = Mat::from_data(n, self.latent_dim, mean_t.data);
        let mut log_var = Mat::from_data(n, self.latent_dim, logvar_t.data);
        for v in log_var.data.iter_mut() {
            *v = v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP);
        }
        Ok(LatentDistribution { mean, log_var })
    }

    /// Training-mode encoding; caches everything for `encode_backward`.
    pub fn encode_t(&mut self, x: &Tensor4, mode: BnMode) -> Result<LatentDistribution> {
        self.check_input(x)?;
        let x1 = self.ea1.forward_t(&self.e1.forward_t(x));
        let x2 = self.ea2.forward_t(&self.ebn2.forward_t(&self.e2.forward_t(&x1), mode));
        let x3 = self.ea3.forward_t(&self.ebn3.forward_t(&self.e3.forward_t(&x2), mode));
        let x4 = self.ea4.forward_t(&self.ebn4.forward_t(&self.e4.forward_t(&x3), mode));
        let mean_t = self.head_mean.forward_t(&x4);
        let logvar_t = self.head_logvar.forward_t(&x4);
        Ok(self.heads_to_dist(mean_t, logvar_t))
    }

    /// Backprop through the encoder; accumulates parameter gradients.
    pub fn encode_backward(&mut self, g_mean: &Mat, g_log_var: &Mat) {
        let mask = self.clamp_mask.take().expect("encode_backward without encode_t");
        let n = g_mean.rows;
        let gm_t = Tensor4::from_data(n, self.latent_dim, 1, 1, g_mean.data.clone());
        let mut glv = g_log_var.data.clone();
        for (g, m) in glv.iter_mut().zip(&mask) {
            if !*m {
                *g = 0.0;
            }
        }
        let glv_t = Tensor4::from_data(n, self.latent_dim, 1, 1, glv);
        let mut g4 = self.head_mean.backward(&gm_t);
        let g4b = self.head_logvar.backward(&glv_t);
        crate::nn::tensor::axpy(&mut g4.data, &g4b.data);
        let g3 = self.e4.backward(&self.ebn4.backward(&self.ea4.backward(&g4)));
        let g2 = self.e3.backward(&self.ebn3.backward(&self.ea3.backward(&g3)));
        let g1 = self.e2.backward(&self.ebn2.backward(&self.ea2.backward(&g2)));
        let _ = self.e1.backward(&self.ea1.backward(&g1));
    }

    fn latent_tensor(&self, z: &Mat) -> Tensor4 {
        Tensor4::from_data(z.rows, self.latent_dim, 1, 1, z.data.clone())
    }

    /// Inference-mode decoding: (N, latent) -> (N, 1, 64, 64) in (0, 1).
    pub fn decode(&self, z: &Mat) -> Tensor4 {
        assert_eq!(z.cols, self.latent_dim, "latent dim");
        let zt = self.latent_tensor(z);
        let y1 = self.da1.infer(&self.dbn1.infer(&self.d1.infer(&zt)));
        let y2 = self.da2.infer(&self.dbn2.infer(&self.d2.infer(&y1)));
        let y3 = self.da3.infer(&self.dbn3.infer(&self.d3.infer(&y2)));
        let y4 = self.da4.infer(&self.dbn4.infer(&self.d4.infer(&y3)));
        self.out_act.infer(&self.d5.infer(&y4))
    }

    /// Decode one embedding to a landmark image (values strictly in (0,1)).
    pub fn decode_embedding(&self, h: &Embedding) -> LandmarkImage {
        let z = Mat::from_data(1, self.latent_dim, h.0.clone());
        let y = self.decode(&z);
        LandmarkImage {
            side: y.h,
            data: y.data,
            binary: false,
        }
    }

    pub fn decode_t(&mut self, z: &Mat, mode: BnMode) -> Tensor4 {
        assert_eq!(z.cols, self.latent_dim, "latent dim");
        let zt = self.latent_tensor(z);
        let y1 = self.da1.forward_t(&self.dbn1.forward_t(&self.d1.forward_t(&zt), mode));
        let y2 = self.da2.forward_t(&self.dbn2.forward_t(&self.d2.forward_t(&y1), mode));
        let y3 = self.da3.forward_t(&self.dbn3.forward_t(&self.d3.forward_t(&y2), mode));
        let y4 = self.da4.forward_t(&self.dbn4.forward_t(&self.d4.forward_t(&y3), mode));
        self.out_act.forward_t(&self.d5.forward_t(&y4))
    }

    /// Backprop through the decoder; returns the latent gradient.
    pub fn decode_backward(&mut self, gy: &Tensor4) -> Mat {
        let g5 = self.d5.backward(&self.out_act.backward(gy));
        let g4 = self.d4.backward(&self.dbn4.backward(&self.da4.backward(&g5)));
        let g3 = self.d3.backward(&self.dbn3.backward(&self.da3.backward(&g4)));
        let g2 = self.d2.backward(&self.dbn2.backward(&self.da2.backward(&g3)));
        let g1 = self.d1.backward(&self.dbn1.backward(&self.da1.backward(&g2)));
        Mat::from_data(g1.n, self.latent_dim, g1.data)
    }
}

macro_rules! visit_conv {
    ($f:expr, $prefix:expr, $name:expr, $layer:expr) => {
        $f(&format!("{}.{}.w", $prefix, $name), &mut $layer.w.data, &mut $layer.gw.data);
        $f(&format!("{}.{}.b", $prefix, $name), &mut $layer.b, &mut $layer.gb);
    };
}

macro_rules! visit_bn {
    ($f:expr, $prefix:expr, $name:expr, $layer:expr) => {
        $f(
            &format!("{}.{}.gamma", $prefix, $name),
            &mut $layer.gamma,
            &mut $layer.g_gamma,
        );
        $f(&format!("{}.{}.beta", $prefix, $name), &mut $layer.beta, &mut $layer.g_beta);
    };
}

pub(crate) use {visit_bn, visit_conv};

impl HasParams for LandmarkVae {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        let p = "vae";
        visit_conv!(f, p, "e1", self.e1);
        visit_conv!(f, p, "e2", self.e2);
        visit_bn!(f, p, "ebn2", self.ebn2);
        visit_conv!(f, p, "e3", self.e3);
        visit_bn!(f, p, "ebn3", self.ebn3);
        visit_conv!(f, p, "e4", self.e4);
        visit_bn!(f, p, "ebn4", self.ebn4);
        visit_conv!(f, p, "head_mean", self.head_mean);
        visit_conv!(f, p, "head_logvar", self.head_logvar);
        visit_conv!(f, p, "d1", self.d1);
        visit_bn!(f, p, "dbn1", self.dbn1);
        visit_conv!(f, p, "d2", self.d2);
        visit_bn!(f, p, "dbn2", self.dbn2);
        visit_conv!(f, p, "d3", self.d3);
        visit_bn!(f, p, "dbn3", self.dbn3);
        visit_conv!(f, p, "d4", self.d4);
        visit_bn!(f, p, "dbn4", self.dbn4);
        visit_conv!(f, p, "d5", self.d5);
    }
}

impl HasState for LandmarkVae {
    fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_params(&mut |name, w, _| f(name, w));
        for (name, bn) in [
            ("ebn2", &mut self.ebn2),
            ("ebn3", &mut self.ebn3),
            ("ebn4", &mut self.ebn4),
            ("dbn1", &mut self.dbn1),
            ("dbn2", &mut self.dbn2),
            ("dbn3", &mut self.dbn3),
            ("dbn4", &mut self.dbn4),
        ] {
            f(&format!("vae.{name}.running_mean"), &mut bn.running_mean);
            f(&format!("vae.{name}.running_var"), &mut bn.running_var);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn encoder_spatial_chain() {
        let mut rng = seeded_rng(1, "vae-test");
        let vae = LandmarkVae::new(EMBED_DIM, 64, &mut rng);
        let chain = vae.encoder_shape_chain(64);
        assert_eq!(
            chain,
            vec![(1, 64), (64, 32), (128, 16), (256, 8), (512, 4), (100, 1)]
        );
    }

    #[test]
    fn encode_decode_shapes_and_range() {
        let mut rng = seeded_rng(2, "vae-test");
        let vae = LandmarkVae::new(EMBED_DIM, 4, &mut rng);
        let x = Tensor4::zeros(2, 1, 64, 64);
        let dist = vae.encode(&x).unwrap();
        assert_eq!((dist.mean.rows, dist.mean.cols), (2, EMBED_DIM));
        assert_eq!((dist.log_var.rows, dist.log_var.cols), (2, EMBED_DIM));
        let z = Mat::zeros(2, EMBED_DIM);
        let y = vae.decode(&z);
        assert_eq!(y.shape(), (2, 1, 64, 64));
        assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn encode_rejects_wrong_shape() {
        let mut rng = seeded_rng(3, "vae-test");
        let vae = LandmarkVae::new(EMBED_DIM, 4, &mut rng);
        let x = Tensor4::zeros(1, 1, 32, 32);
        assert!(matches!(vae.encode(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn encode_is_deterministic() {
        let mut rng = seeded_rng(4, "vae-test");
        let vae = LandmarkVae::new(EMBED_DIM, 4, &mut rng);
        let data: Vec<f64> = (0..64 * 64).map(|i| f64::from(i % 7 == 0)).collect();
        let x = Tensor4::from_data(1, 1, 64, 64, data);
        let a = vae.encode(&x).unwrap();
        let b = vae.encode(&x).unwrap();
        assert_eq!(a.mean.data, b.mean.data);
        assert_eq!(a.log_var.data, b.log_var.data);
    }

    #[test]
    fn sample_latent_examples() {
        let dist = LatentDistribution {
            mean: Mat::from_data(1, 3, vec![1.0, 1.0, 1.0]),
            log_var: Mat::from_data(1, 3, vec![4.0f64.ln(); 3]),
        };
        // noise 0 -> mean
        let z0 = sample_latent(&dist, &Mat::zeros(1, 3));
        assert_eq!(z0.data, vec![1.0, 1.0, 1.0]);
        // mean 1, var 4, noise 0.5 -> 1 + 2*0.5 = 2
        let z = sample_latent(&dist, &Mat::from_data(1, 3, vec![0.5; 3]));
        for v in &z.data {
            assert_abs_diff_eq!(*v, 2.0, epsilon = 1e-12);
        }
        // mean 0, logvar 0 -> returns the noise itself
        let unit = LatentDistribution {
            mean: Mat::zeros(1, 3),
            log_var: Mat::zeros(1, 3),
        };
        let n = Mat::from_data(1, 3, vec![0.3, -0.7, 2.0]);
        assert_eq!(sample_latent(&unit, &n).data, n.data);
    }

    #[test]
    fn bce_oracle_values() {
        // y=1, x=0.5 -> -ln 0.5
        let v = bce_sum(&[0.5], &[1.0]);
        assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 0.693147, epsilon = 1e-4);
        // exact reconstruction of a binary target stays under 1e-3 per 64x64
        let y: Vec<f64> = (0..64 * 64).map(|i| f64::from(i % 5 == 0)).collect();
        assert!(bce_sum(&y, &y) < 1e-3);
        assert!(bce_sum(&y, &y) >= 0.0);
    }

    #[test]
    fn kl_zero_at_prior_and_nonnegative() {
        assert_eq!(kl_sum(&[0.0; 4], &[0.0; 4]), 0.0);
        let mut rng = seeded_rng(5, "kl");
        for _ in 0..50 {
            let m: Vec<f64> = crate::nn::rng::normal_vec(&mut rng, 6);
            let lv: Vec<f64> = crate::nn::rng::normal_vec(&mut rng, 6);
            assert!(kl_sum(&m, &lv) >= -1e-12);
        }
    }

    #[test]
    fn logvar_is_clamped() {
        let mut rng = seeded_rng(6, "vae-test");
        let mut vae = LandmarkVae::new(EMBED_DIM, 4, &mut rng);
        // blow up the logvar head bias to force the clamp
        vae.head_logvar.b.iter_mut().for_each(|b| *b = 100.0);
        let x = Tensor4::zeros(1, 1, 64, 64);
        let dist = vae.encode(&x).unwrap();
        assert!(dist.log_var.data.iter().all(|&v| v <= LOGVAR_CLAMP));
        let dist_t = vae.encode_t(&x, BnMode::Train).unwrap();
        assert!(dist_t.log_var.data.iter().all(|&v| v <= LOGVAR_CLAMP));
    }
}
