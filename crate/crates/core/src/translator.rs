//! Landmark-image + neutral-face to face-frame translation: a U-Net
//! generator over 4 input channels (neutral RGB + landmark image) and a
//! patch discriminator scoring [z0, frame] pairs with one probability per
//! cell of its 6x6 output map.

use rand::Rng;

use crate::error::{validation, Error, Result};
use crate::landmark::LandmarkImage;
use crate::nn::layers::{ActLayer, Activation, BatchNorm2d, BnMode, Conv2d, ConvTranspose2d};
use crate::nn::optim::{HasParams, HasState};
use crate::nn::tensor::Tensor4;
use crate::vae::{visit_bn, visit_conv};
use crate::IMAGE_SIDE;

const LEAK: f64 = 0.2;
const PROB_EPS: f64 = 1e-7;

/// 64x64 RGB image with values in [-1, 1], CHW.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFrame {
    pub data: Vec<f64>,
}

impl FaceFrame {
    pub const CHANNELS: usize = 3;

    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.len() != Self::CHANNELS * IMAGE_SIDE * IMAGE_SIDE {
            return Err(Error::Shape {
                expected: format!("3x{IMAGE_SIDE}x{IMAGE_SIDE}"),
                got: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-9) {
            return Err(validation("face frame values must lie in [-1, 1]".into()));
        }
        Ok(FaceFrame { data })
    }

    pub fn zeros() -> Self {
        FaceFrame {
            data: vec![0.0; Self::CHANNELS * IMAGE_SIDE * IMAGE_SIDE],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * IMAGE_SIDE + y) * IMAGE_SIDE + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * IMAGE_SIDE + y) * IMAGE_SIDE + x] = v;
    }

    /// Map to [0, 1] (metric space for SSIM and PNG export).
    pub fn unit_data(&self) -> Vec<f64> {
        self.data.iter().map(|v| (v + 1.0) / 2.0).collect()
    }

    pub fn from_rgb8(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != Self::CHANNELS * IMAGE_SIDE * IMAGE_SIDE {
            return Err(Error::Shape {
                expected: format!("{} rgb bytes", Self::CHANNELS * IMAGE_SIDE * IMAGE_SIDE),
                got: format!("{}", bytes.len()),
            });
        }
        // interleaved RGB -> planar CHW
        let mut data = vec![0.0; bytes.len()];
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                for c in 0..3 {
                    let v = bytes[(y * IMAGE_SIDE + x) * 3 + c] as f64 / 255.0 * 2.0 - 1.0;
                    data[(c * IMAGE_SIDE + y) * IMAGE_SIDE + x] = v;
                }
            }
        }
        Ok(FaceFrame { data })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.data.len()];
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                for c in 0..3 {
                    let v = self.at(c, y, x);
                    out[(y * IMAGE_SIDE + x) * 3 + c] = (((v + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        out
    }
}

fn concat_channels(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat shapes");
    let mut out = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
    let (sa, sb) = (a.c * a.spatial(), b.c * b.spatial());
    for n in 0..a.n {
        out.sample_mut(n)[..sa].copy_from_slice(a.sample(n));
        out.sample_mut(n)[sa..sa + sb].copy_from_slice(b.sample(n));
    }
    out
}

fn split_channels(g: &Tensor4, c_first: usize) -> (Tensor4, Tensor4) {
    let c_second = g.c - c_first;
    let s = g.spatial();
    let mut a = Tensor4::zeros(g.n, c_first, g.h, g.w);
    let mut b = Tensor4::zeros(g.n, c_second, g.h, g.w);
    for n in 0..g.n {
        let src = g.sample(n);
        a.sample_mut(n).copy_from_slice(&src[..c_first * s]);
        b.sample_mut(n).copy_from_slice(&src[c_first * s..]);
    }
    (a, b)
}

/// What to zero out mid-forward when probing information flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    /// Zero the bottleneck activation (deepest encoder output).
    Bottleneck,
    /// Zero the first (shallowest) skip connection.
    FirstSkip,
}

/// U-Net generator: 6 stride-2 encoder convs (64..512 channels), mirrored
/// deconv decoder with mirror-stage skip concatenation, final tanh.
#[derive(Debug, Clone)]
pub struct UnetGenerator {
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
    e5: Conv2d,
    ebn5: BatchNorm2d,
    ea5: ActLayer,
    e6: Conv2d,
    ea6: ActLayer,
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
    dbn5: BatchNorm2d,
    da5: ActLayer,
    d6: ConvTranspose2d,
    out_act: ActLayer,
}

impl UnetGenerator {
    pub const IN_CHANNELS: usize = 4;
    pub const OUT_CHANNELS: usize = 3;

    pub fn new(base: usize, rng: &mut impl Rng) -> Self {
        let lr = || ActLayer::new(Activation::LeakyRelu(LEAK));
        let re = || ActLayer::new(Activation::Relu);
        let b = base;
        UnetGenerator {
            base,
            e1: Conv2d::new(Self::IN_CHANNELS, b, 4, 2, 1, rng),
            ea1: lr(),
            e2: Conv2d::new(b, 2 * b, 4, 2, 1, rng),
            ebn2: BatchNorm2d::new(2 * b, rng),
            ea2: lr(),
            e3: Conv2d::new(2 * b, 4 * b, 4, 2, 1, rng),
            ebn3: BatchNorm2d::new(4 * b, rng),
            ea3: lr(),
            e4: Conv2d::new(4 * b, 8 * b, 4, 2, 1, rng),
            ebn4: BatchNorm2d::new(8 * b, rng),
            ea4: lr(),
            e5: Conv2d::new(8 * b, 8 * b, 4, 2, 1, rng),
            ebn5: BatchNorm2d::new(8 * b, rng),
            ea5: lr(),
            e6: Conv2d::new(8 * b, 8 * b, 4, 2, 1, rng),
            ea6: re(),
            d1: ConvTranspose2d::new(8 * b, 8 * b, 4, 2, 1, rng),
            dbn1: BatchNorm2d::new(8 * b, rng),
            da1: re(),
            d2: ConvTranspose2d::new(16 * b, 8 * b, 4, 2, 1, rng),
            dbn2: BatchNorm2d::new(8 * b, rng),
            da2: re(),
            d3: ConvTranspose2d::new(16 * b, 4 * b, 4, 2, 1, rng),
            dbn3: BatchNorm2d::new(4 * b, rng),
            da3: re(),
            d4: ConvTranspose2d::new(8 * b, 2 * b, 4, 2, 1, rng),
            dbn4: BatchNorm2d::new(2 * b, rng),
            da4: re(),
            d5: ConvTranspose2d::new(4 * b, b, 4, 2, 1, rng),
            dbn5: BatchNorm2d::new(b, rng),
            da5: re(),
            d6: ConvTranspose2d::new(2 * b, Self::OUT_CHANNELS, 4, 2, 1, rng),
            out_act: ActLayer::new(Activation::Tanh),
        }
    }

    pub fn infer(&self, x: &Tensor4) -> Tensor4 {
        self.infer_ablate(x, Ablation::None)
    }

    pub fn infer_ablate(&self, x: &Tensor4, ablation: Ablation) -> Tensor4 {
        assert_eq!(x.c, Self::IN_CHANNELS, "generator input channels");
        let s1 = self.ea1.infer(&self.e1.infer(x));
        let s2 = self.ea2.infer(&self.ebn2.infer(&self.e2.infer(&s1)));
        let s3 = self.ea3.infer(&self.ebn3.infer(&self.e3.infer(&s2)));
        let s4 = self.ea4.infer(&self.ebn4.infer(&self.e4.infer(&s3)));
        let s5 = self.ea5.infer(&self.ebn5.infer(&self.e5.infer(&s4)));
        let mut bott = self.ea6.infer(&self.e6.infer(&s5));
        if ablation == Ablation::Bottleneck {
            bott.data.fill(0.0);
        }
        let mut skip1 = s1;
        if ablation == Ablation::FirstSkip {
            skip1.data.fill(0.0);
        }
        let u1 = self.da1.infer(&self.dbn1.infer(&self.d1.infer(&bott)));
        let u2 = self.da2.infer(&self.dbn2.infer(&self.d2.infer(&concat_channels(&u1, &s5))));
        let u3 = self.da3.infer(&self.dbn3.infer(&self.d3.infer(&concat_channels(&u2, &s4))));
        let u4 = self.da4.infer(&self.dbn4.infer(&self.d4.infer(&concat_channels(&u3, &s3))));
        let u5 = self.da5.infer(&self.dbn5.infer(&self.d5.infer(&concat_channels(&u4, &s2))));
        self.out_act.infer(&self.d6.infer(&concat_channels(&u5, &skip1)))
    }

    pub fn forward_t(&mut self, x: &Tensor4, mode: BnMode) -> Tensor4 {
        assert_eq!(x.c, Self::IN_CHANNELS, "generator input channels");
        let s1 = self.ea1.forward_t(&self.e1.forward_t(x));
        let s2 = self.ea2.forward_t(&self.ebn2.forward_t(&self.e2.forward_t(&s1), mode));
        let s3 = self.ea3.forward_t(&self.ebn3.forward_t(&self.e3.forward_t(&s2), mode));
        let s4 = self.ea4.forward_t(&self.ebn4.forward_t(&self.e4.forward_t(&s3), mode));
        let s5 = self.ea5.forward_t(&self.ebn5.forward_t(&self.e5.forward_t(&s4), mode));
        let bott = self.ea6.forward_t(&self.e6.forward_t(&s5));
        let u1 = self.da1.forward_t(&self.dbn1.forward_t(&self.d1.forward_t(&bott), mode));
        let u2 = self
            .da2
            .forward_t(&self.dbn2.forward_t(&self.d2.forward_t(&concat_channels(&u1, &s5)), mode));
        let u3 = self
            .da3
            .forward_t(&self.dbn3.forward_t(&self.d3.forward_t(&concat_channels(&u2, &s4)), mode));
        let u4 = self
            .da4
            .forward_t(&self.dbn4.forward_t(&self.d4.forward_t(&concat_channels(&u3, &s3)), mode));
        let u5 = self
            .da5
            .forward_t(&self.dbn5.forward_t(&self.d5.forward_t(&concat_channels(&u4, &s2)), mode));
        self.out_act
            .forward_t(&self.d6.forward_t(&concat_channels(&u5, &s1)))
    }

    /// Backprop through the full U-Net; skip gradients merge back into the
    /// encoder stages. Input gradient is discarded (inputs are data).
    pub fn backward(&mut self, gy: &Tensor4) {
        let b = self.base;
        let g_cat5 = self.d6.backward(&self.out_act.backward(gy));
        let (g_u5, g_skip1) = split_channels(&g_cat5, b);
        let g_cat4 = self.d5.backward(&self.dbn5.backward(&self.da5.backward(&g_u5)));
        let (g_u4, g_skip2) = split_channels(&g_cat4, 2 * b);
        let g_cat3 = self.d4.backward(&self.dbn4.backward(&self.da4.backward(&g_u4)));
        let (g_u3, g_skip3) = split_channels(&g_cat3, 4 * b);
        let g_cat2 = self.d3.backward(&self.dbn3.backward(&self.da3.backward(&g_u3)));
        let (g_u2, g_skip4) = split_channels(&g_cat2, 8 * b);
        let g_cat1 = self.d2.backward(&self.dbn2.backward(&self.da2.backward(&g_u2)));
        let (g_u1, g_skip5) = split_channels(&g_cat1, 8 * b);
        let g_bott = self.d1.backward(&self.dbn1.backward(&self.da1.backward(&g_u1)));
        let mut g_s5 = self.e6.backward(&self.ea6.backward(&g_bott));
        crate::nn::tensor::axpy(&mut g_s5.data, &g_skip5.data);
        let mut g_s4 = self.e5.backward(&self.ebn5.backward(&self.ea5.backward(&g_s5)));
        crate::nn::tensor::axpy(&mut g_s4.data, &g_skip4.data);
        let mut g_s3 = self.e4.backward(&self.ebn4.backward(&self.ea4.backward(&g_s4)));
        crate::nn::tensor::axpy(&mut g_s3.data, &g_skip3.data);
        let mut g_s2 = self.e3.backward(&self.ebn3.backward(&self.ea3.backward(&g_s3)));
        crate::nn::tensor::axpy(&mut g_s2.data, &g_skip2.data);
        let mut g_s1 = self.e2.backward(&self.ebn2.backward(&self.ea2.backward(&g_s2)));
        crate::nn::tensor::axpy(&mut g_s1.data, &g_skip1.data);
        let _ = self.e1.backward(&self.ea1.backward(&g_s1));
    }
}

impl HasParams for UnetGenerator {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        let p = "translator_gen";
        visit_conv!(f, p, "e1", self.e1);
        visit_conv!(f, p, "e2", self.e2);
        visit_bn!(f, p, "ebn2", self.ebn2);
        visit_conv!(f, p, "e3", self.e3);
        visit_bn!(f, p, "ebn3", self.ebn3);
        visit_conv!(f, p, "e4", self.e4);
        visit_bn!(f, p, "ebn4", self.ebn4);
        visit_conv!(f, p, "e5", self.e5);
        visit_bn!(f, p, "ebn5", self.ebn5);
        visit_conv!(f, p, "e6", self.e6);
        visit_conv!(f, p, "d1", self.d1);
        visit_bn!(f, p, "dbn1", self.dbn1);
        visit_conv!(f, p, "d2", self.d2);
        visit_bn!(f, p, "dbn2", self.dbn2);
        visit_conv!(f, p, "d3", self.d3);
        visit_bn!(f, p, "dbn3", self.dbn3);
        visit_conv!(f, p, "d4", self.d4);
        visit_bn!(f, p, "dbn4", self.dbn4);
        visit_conv!(f, p, "d5", self.d5);
        visit_bn!(f, p, "dbn5", self.dbn5);
        visit_conv!(f, p, "d6", self.d6);
    }
}

impl HasState for UnetGenerator {
    fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_params(&mut |name, w, _| f(name, w));
        for (name, bn) in [
            ("ebn2", &mut self.ebn2),
            ("ebn3", &mut self.ebn3),
            ("ebn4", &mut self.ebn4),
            ("ebn5", &mut self.ebn5),
            ("dbn1", &mut self.dbn1),
            ("dbn2", &mut self.dbn2),
            ("dbn3", &mut self.dbn3),
            ("dbn4", &mut self.dbn4),
            ("dbn5", &mut self.dbn5),
        ] {
            f(&format!("translator_gen.{name}.running_mean"), &mut bn.running_mean);
            f(&format!("translator_gen.{name}.running_var"), &mut bn.running_var);
        }
    }
}

/// Patch discriminator over 6-channel image pairs: three Conv(4,2,1) and
/// two Conv(4,1,1), sigmoid per cell of the 6x6 output map.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    pub base: usize,
    c1: Conv2d,
    a1: ActLayer,
    c2: Conv2d,
    bn2: BatchNorm2d,
    a2: ActLayer,
    c3: Conv2d,
    bn3: BatchNorm2d,
    a3: ActLayer,
    c4: Conv2d,
    bn4: BatchNorm2d,
    a4: ActLayer,
    c5: Conv2d,
    out_act: ActLayer,
}

impl PatchDiscriminator {
    pub const IN_CHANNELS: usize = 6;

    pub fn new(base: usize, rng: &mut impl Rng) -> Self {
        let lr = || ActLayer::new(Activation::LeakyRelu(LEAK));
        let b = base;
        PatchDiscriminator {
            base,
            c1: Conv2d::new(Self::IN_CHANNELS, b, 4, 2, 1, rng),
            a1: lr(),
            c2: Conv2d::new(b, 2 * b, 4, 2, 1, rng),
            bn2: BatchNorm2d::new(2 * b, rng),
            a2: lr(),
            c3: Conv2d::new(2 * b, 4 * b, 4, 2, 1, rng),
            bn3: BatchNorm2d::new(4 * b, rng),
            a3: lr(),
            c4: Conv2d::new(4 * b, 8 * b, 4, 1, 1, rng),
            bn4: BatchNorm2d::new(8 * b, rng),
            a4: lr(),
            c5: Conv2d::new(8 * b, 1, 4, 1, 1, rng),
            out_act: ActLayer::new(Activation::Sigmoid),
        }
    }

    pub fn infer(&self, x: &Tensor4) -> Tensor4 {
        assert_eq!(x.c, Self::IN_CHANNELS, "discriminator input channels");
        let y1 = self.a1.infer(&self.c1.infer(x));
        let y2 = self.a2.infer(&self.bn2.infer(&self.c2.infer(&y1)));
        let y3 = self.a3.infer(&self.bn3.infer(&self.c3.infer(&y2)));
        let y4 = self.a4.infer(&self.bn4.infer(&self.c4.infer(&y3)));
        self.out_act.infer(&self.c5.infer(&y4))
    }

    pub fn forward_t(&mut self, x: &Tensor4, mode: BnMode) -> Tensor4 {
        assert_eq!(x.c, Self::IN_CHANNELS, "discriminator input channels");
        let y1 = self.a1.forward_t(&self.c1.forward_t(x));
        let y2 = self.a2.forward_t(&self.bn2.forward_t(&self.c2.forward_t(&y1), mode));
        let y3 = self.a3.forward_t(&self.bn3.forward_t(&self.c3.forward_t(&y2), mode));
        let y4 = self.a4.forward_t(&self.bn4.forward_t(&self.c4.forward_t(&y3), mode));
        self.out_act.forward_t(&self.c5.forward_t(&y4))
    }

    /// Backprop; returns the gradient w.r.t. the 6-channel input pair.
    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let g4 = self.c5.backward(&self.out_act.backward(gy));
        let g3 = self.c4.backward(&self.bn4.backward(&self.a4.backward(&g4)));
        let g2 = self.c3.backward(&self.bn3.backward(&self.a3.backward(&g3)));
        let g1 = self.c2.backward(&self.bn2.backward(&self.a2.backward(&g2)));
        self.c1.backward(&self.a1.backward(&g1))
    }
}

impl HasParams for PatchDiscriminator {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        let p = "translator_disc";
        visit_conv!(f, p, "c1", self.c1);
        visit_conv!(f, p, "c2", self.c2);
        visit_bn!(f, p, "bn2", self.bn2);
        visit_conv!(f, p, "c3", self.c3);
        visit_bn!(f, p, "bn3", self.bn3);
        visit_conv!(f, p, "c4", self.c4);
        visit_bn!(f, p, "bn4", self.bn4);
        visit_conv!(f, p, "c5", self.c5);
    }
}

impl HasState for PatchDiscriminator {
    fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_params(&mut |name, w, _| f(name, w));
        for (name, bn) in [("bn2", &mut self.bn2), ("bn3", &mut self.bn3), ("bn4", &mut self.bn4)] {
            f(&format!("translator_disc.{name}.running_mean"), &mut bn.running_mean);
            f(&format!("translator_disc.{name}.running_var"), &mut bn.running_var);
        }
    }
}

// --- wiring helpers ---------------------------------------------------------

/// Stack (landmark image, neutral face) pairs into the 4-channel generator
/// input: channels 0..3 are the neutral RGB, channel 3 the landmark image.
pub fn gen_input_batch(pairs: &[(&LandmarkImage, &FaceFrame)]) -> Result<Tensor4> {
    if pairs.is_empty() {
        return Err(validation("empty generator batch".into()));
    }
    let mut x = Tensor4::zeros(pairs.len(), UnetGenerator::IN_CHANNELS, IMAGE_SIDE, IMAGE_SIDE);
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    for (i, (lm, z0)) in pairs.iter().enumerate() {
        if lm.side != IMAGE_SIDE {
            return Err(Error::Shape {
                expected: format!("{IMAGE_SIDE}x{IMAGE_SIDE}"),
                got: format!("{}x{}", lm.side, lm.side),
            });
        }
        let dst = x.sample_mut(i);
        dst[..3 * plane].copy_from_slice(&z0.data);
        dst[3 * plane..].copy_from_slice(&lm.data);
    }
    Ok(x)
}

/// Stack ([z0, frame]) pairs into the 6-channel discriminator input.
pub fn pair_batch(pairs: &[(&FaceFrame, &FaceFrame)]) -> Tensor4 {
    let mut x = Tensor4::zeros(pairs.len(), PatchDiscriminator::IN_CHANNELS, IMAGE_SIDE, IMAGE_SIDE);
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let dst = x.sample_mut(i);
        dst[..3 * plane].copy_from_slice(&a.data);
        dst[3 * plane..].copy_from_slice(&b.data);
    }
    x
}

/// Translate one landmark image with the identity from z0.
pub fn generate_frame(gen: &UnetGenerator, y_t: &LandmarkImage, z0: &FaceFrame) -> Result<FaceFrame> {
    let x = gen_input_batch(&[(y_t, z0)])?;
    let y = gen.infer(&x);
    Ok(FaceFrame { data: y.data })
}

/// Probability map for a [a, b] pair (1x6x6 flattened row-major).
pub fn discriminate_pair(disc: &PatchDiscriminator, a: &FaceFrame, b: &FaceFrame) -> Vec<f64> {
    let x = pair_batch(&[(a, b)]);
    disc.infer(&x).data
}

// --- losses -----------------------------------------------------------------

/// Mean absolute error normalized by pixel count and batch.
pub fn reconstruction_loss(z: &[&FaceFrame], w: &[&FaceFrame]) -> Result<f64> {
    if z.len() != w.len() {
        return Err(validation(format!("frame counts {} vs {}", z.len(), w.len())));
    }
    if z.is_empty() {
        return Err(validation("empty frame lists".into()));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (a, b) in z.iter().zip(w) {
        acc += a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>();
        count += a.data.len();
    }
    Ok(acc / count as f64)
}

/// MAE over batched tensors plus gradient w.r.t. the generated batch.
pub fn reconstruction_loss_batch(target: &Tensor4, generated: &Tensor4) -> (f64, Tensor4) {
    assert_eq!(target.shape(), generated.shape());
    let count = generated.data.len() as f64;
    let mut grad = Tensor4::zeros(generated.n, generated.c, generated.h, generated.w);
    let mut acc = 0.0;
    for i in 0..generated.data.len() {
        let d = generated.data[i] - target.data[i];
        acc += d.abs();
        grad.data[i] = d.signum() / count;
    }
    (acc / count, grad)
}

fn clamped_ln(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln()
}

fn mean_ln(map: &Tensor4) -> f64 {
    map.data.iter().map(|&p| clamped_ln(p)).sum::<f64>() / map.data.len() as f64
}

fn mean_ln_one_minus(map: &Tensor4) -> f64 {
    map.data.iter().map(|&p| clamped_ln(1.0 - p)).sum::<f64>() / map.data.len() as f64
}

/// Discriminator loss -[mean log D(real) + mean log(1 - D(fake))] and the
/// generator's adversarial loss mean log(1 - D(fake)) (the paper's
/// minimized form). Values only; training uses the *_grad companions.
pub fn adversarial_losses(d_real: &Tensor4, d_fake: &Tensor4) -> (f64, f64) {
    let disc_loss = -(mean_ln(d_real) + mean_ln_one_minus(d_fake));
    let gen_adv = mean_ln_one_minus(d_fake);
    (disc_loss, gen_adv)
}

/// d(disc_loss)/d d_real and /d d_fake.
pub fn disc_loss_grads(d_real: &Tensor4, d_fake: &Tensor4) -> (Tensor4, Tensor4) {
    let count = d_real.data.len() as f64;
    let mut g_real = Tensor4::zeros(d_real.n, d_real.c, d_real.h, d_real.w);
    for (g, &p) in g_real.data.iter_mut().zip(&d_real.data) {
        if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
            *g = -1.0 / (p * count);
        }
    }
    let countf = d_fake.data.len() as f64;
    let mut g_fake = Tensor4::zeros(d_fake.n, d_fake.c, d_fake.h, d_fake.w);
    for (g, &p) in g_fake.data.iter_mut().zip(&d_fake.data) {
        if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
            *g = 1.0 / ((1.0 - p) * countf);
        }
    }
    (g_real, g_fake)
}

/// Gradient of the generator's adversarial term w.r.t. D(fake). The default
/// follows the paper's min log(1-D) form; `non_saturating` switches to
/// -log D(fake).
pub fn gen_adv_grad(d_fake: &Tensor4, non_saturating: bool) -> (f64, Tensor4) {
    let count = d_fake.data.len() as f64;
    let mut g = Tensor4::zeros(d_fake.n, d_fake.c, d_fake.h, d_fake.w);
    let value = if non_saturating {
        -mean_ln(d_fake)
    } else {
        mean_ln_one_minus(d_fake)
    };
    for (gv, &p) in g.data.iter_mut().zip(&d_fake.data) {
        if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
            *gv = if non_saturating {
                -1.0 / (p * count)
            } else {
                -1.0 / ((1.0 - p) * count)
            };
        }
    }
    (value, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn generator_io_contract() {
        let mut rng = seeded_rng(30, "unet");
        let gen = UnetGenerator::new(2, &mut rng);
        assert_eq!(UnetGenerator::IN_CHANNELS, 4);
        let lm = LandmarkImage::zeros(IMAGE_SIDE);
        let z0 = FaceFrame::zeros();
        let out = generate_frame(&gen, &lm, &z0).unwrap();
        assert_eq!(out.data.len(), 3 * IMAGE_SIDE * IMAGE_SIDE);
        assert!(out.data.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn discriminator_map_is_6x6() {
        let mut rng = seeded_rng(31, "disc");
        let disc = PatchDiscriminator::new(2, &mut rng);
        assert_eq!(PatchDiscriminator::IN_CHANNELS, 6);
        let a = FaceFrame::zeros();
        let b = FaceFrame::zeros();
        let x = pair_batch(&[(&a, &b)]);
        let y = disc.infer(&x);
        assert_eq!(y.shape(), (1, 1, 6, 6));
        assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn reconstruction_oracles() {
        let a = FaceFrame::zeros();
        assert_eq!(reconstruction_loss(&[&a], &[&a]).unwrap(), 0.0);
        // one-pixel analogue: z = 0.5, w = -0.5 -> 1.0
        let (loss, _) = {
            let t = Tensor4::from_data(1, 1, 1, 1, vec![0.5]);
            let g = Tensor4::from_data(1, 1, 1, 1, vec![-0.5]);
            reconstruction_loss_batch(&t, &g)
        };
        assert_abs_diff_eq!(loss, 1.0, epsilon = 1e-12);
        let mut b = FaceFrame::zeros();
        b.data[0] = 0.5;
        assert!(reconstruction_loss(&[&a], &[&b]).unwrap() >= 0.0);
        assert!(reconstruction_loss(&[&a], &[]).is_err());
    }

    #[test]
    fn adversarial_oracles_at_half() {
        let half = Tensor4::from_data(1, 1, 6, 6, vec![0.5; 36]);
        let (disc_loss, gen_adv) = adversarial_losses(&half, &half);
        assert_abs_diff_eq!(disc_loss, 2.0 * std::f64::consts::LN_2, epsilon = 1e-9);
        assert_abs_diff_eq!(disc_loss, 1.3863, epsilon = 1e-4);
        assert_abs_diff_eq!(gen_adv, -std::f64::consts::LN_2, epsilon = 1e-9);
        assert_abs_diff_eq!(gen_adv, -0.6931, epsilon = 1e-4);
        // perfect discriminator: 1 on real, 0 on fake -> loss ~ 0
        let ones = Tensor4::from_data(1, 1, 6, 6, vec![1.0; 36]);
        let zeros = Tensor4::from_data(1, 1, 6, 6, vec![0.0; 36]);
        let (perfect, _) = adversarial_losses(&ones, &zeros);
        assert!(perfect < 1e-3, "{perfect}");
    }

    #[test]
    fn face_frame_round_trip() {
        let mut f = FaceFrame::zeros();
        f.set(0, 3, 5, 0.5);
        f.set(2, 60, 60, -1.0);
        let bytes = f.to_rgb8();
        let back = FaceFrame::from_rgb8(&bytes).unwrap();
        assert!((back.at(0, 3, 5) - 0.5).abs() < 1.0 / 127.0);
        assert!((back.at(2, 60, 60) - (-1.0)).abs() < 1.0 / 127.0);
        assert!(FaceFrame::new(vec![2.0; 3 * 64 * 64]).is_err());
    }
}
