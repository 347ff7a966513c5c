//! Deterministic synthetic expression corpus: parametric 68-point faces,
//! per-class onset dynamics, and per-mode expression attributes. The corpus
//! is a pure function of its config (bitwise reproducible).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{render, split_by_identity, DatasetSplit, SequenceSample};
use crate::error::{Error, Result};
use crate::landmark::{rasterize, LandmarkSet, CANONICAL_LEFT_EYE, CANONICAL_RIGHT_EYE};
use crate::nn::rng::seeded_rng;
use crate::seqgen::ExpressionLabel;
use crate::IMAGE_SIDE;

/// Onset dynamics of one expression class.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassDynamics {
    /// Easing exponent of the smile curve s(u) = amplitude * u^exponent.
    pub onset_exponent: f64,
    pub apex_amplitude: f64,
    /// Magnitude of the mid-sequence eye-aperture dip (0 disables it).
    pub eye_dip: f64,
}

fn default_posed() -> ClassDynamics {
    ClassDynamics {
        onset_exponent: 0.5,
        apex_amplitude: 1.0,
        eye_dip: 0.0,
    }
}

fn default_spontaneous() -> ClassDynamics {
    ClassDynamics {
        onset_exponent: 2.2,
        apex_amplitude: 1.0,
        eye_dip: 0.35,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_identities: usize,
    pub modes_per_class: usize,
    /// Sequence length T.
    pub frames: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub posed: ClassDynamics,
    pub spontaneous: ClassDynamics,
    /// Global scale on the per-mode attribute table.
    pub mode_amplitude: f64,
    /// Guaranteed minimum pairwise temporally-averaged landmark distance
    /// between modes; synthesis fails if the generated data violates it.
    pub mode_separation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_identities: 4,
            modes_per_class: 3,
            frames: 32,
            seed: 7,
            train_fraction: 2.0 / 3.0,
            posed: default_posed(),
            spontaneous: default_spontaneous(),
            mode_amplitude: 1.0,
            mode_separation: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config(format!("frames {} < 2", self.frames)));
        }
        if self.modes_per_class < 1 {
            return Err(Error::Config("modes_per_class must be >= 1".into()));
        }
        if self.num_identities < 1 {
            return Err(Error::Config("num_identities must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("train_fraction outside [0,1]".into()));
        }
        Ok(())
    }

    pub fn dynamics(&self, label: ExpressionLabel) -> ClassDynamics {
        match label {
            ExpressionLabel::Posed => self.posed,
            ExpressionLabel::Spontaneous => self.spontaneous,
        }
    }
}

/// Stable face-shape attributes of one synthetic identity.
#[derive(Debug, Clone, Copy)]
pub struct IdentityShape {
    pub jaw_half_w: f64,
    pub jaw_h: f64,
    pub mouth_half_w: f64,
    pub eye_half_w: f64,
}

pub fn identity_shape(identity: usize) -> IdentityShape {
    let mut rng = seeded_rng(identity as u64, "identity-shape");
    IdentityShape {
        jaw_half_w: rng.gen_range(0.27..0.31),
        jaw_h: rng.gen_range(0.36..0.40),
        mouth_half_w: rng.gen_range(0.13..0.155),
        eye_half_w: rng.gen_range(0.050..0.058),
    }
}

/// Expression-style attributes of one mode. Fast attributes ramp with
/// u^0.35; smile attributes follow the class onset curve.
#[derive(Debug, Clone, Copy)]
pub struct ModeAttrs {
    pub gap_amp: f64,
    pub aperture_target: f64,
    pub brow_lift_amp: f64,
    pub widen_amp: f64,
    pub corner_lift_amp: f64,
    pub mouth_shift_amp: f64,
}

/// The three built-in styles: closed-mouth smile, open laugh, squint smirk.
const MODE_TABLE: [ModeAttrs; 3] = [
    ModeAttrs {
        gap_amp: 0.004,
        aperture_target: 1.0,
        brow_lift_amp: 0.0,
        widen_amp: 0.40,
        corner_lift_amp: 0.050,
        mouth_shift_amp: 0.0,
    },
    ModeAttrs {
        gap_amp: 0.105,
        aperture_target: 0.55,
        brow_lift_amp: 0.045,
        widen_amp: 0.20,
        corner_lift_amp: 0.035,
        mouth_shift_amp: 0.0,
    },
    ModeAttrs {
        gap_amp: 0.045,
        aperture_target: 0.15,
        brow_lift_amp: 0.020,
        widen_amp: 0.10,
        corner_lift_amp: 0.028,
        mouth_shift_amp: 0.045,
    },
];

pub fn mode_attrs(mode: usize, amplitude: f64) -> ModeAttrs {
    let base = if mode < MODE_TABLE.len() {
        MODE_TABLE[mode]
    } else {
        let mut rng = seeded_rng(mode as u64, "mode-attrs");
        ModeAttrs {
            gap_amp: rng.gen_range(0.01..0.10),
            aperture_target: rng.gen_range(0.2..1.0),
            brow_lift_amp: rng.gen_range(0.0..0.045),
            widen_amp: rng.gen_range(0.05..0.45),
            corner_lift_amp: rng.gen_range(0.025..0.05),
            mouth_shift_amp: rng.gen_range(-0.04..0.04),
        }
    };
    ModeAttrs {
        gap_amp: base.gap_amp * amplitude,
        aperture_target: 1.0 - (1.0 - base.aperture_target) * amplitude,
        brow_lift_amp: base.brow_lift_amp * amplitude,
        widen_amp: base.widen_amp * amplitude,
        corner_lift_amp: base.corner_lift_amp * amplitude,
        mouth_shift_amp: base.mouth_shift_amp * amplitude,
    }
}

/// Full per-frame face description.
#[derive(Debug, Clone, Copy)]
pub struct FaceParams {
    pub jaw_half_w: f64,
    pub jaw_h: f64,
    pub jaw_drop: f64,
    pub brow_lift: f64,
    pub eye_half_w: f64,
    pub eye_aperture: f64,
    pub mouth_cx: f64,
    pub mouth_half_w: f64,
    pub corner_lift: f64,
    pub mouth_gap: f64,
    pub upper_lip: f64,
    pub lower_lip: f64,
}

const FACE_CENTER_Y: f64 = 0.45;
const BROW_Y: f64 = 0.33;
const MOUTH_CY: f64 = 0.70;
const BASE_APERTURE: f64 = 0.020;

fn neutral_params(shape: &IdentityShape) -> FaceParams {
    FaceParams {
        jaw_half_w: shape.jaw_half_w,
        jaw_h: shape.jaw_h,
        jaw_drop: 0.0,
        brow_lift: 0.0,
        eye_half_w: shape.eye_half_w,
        eye_aperture: BASE_APERTURE,
        mouth_cx: 0.5,
        mouth_half_w: shape.mouth_half_w,
        corner_lift: 0.004,
        mouth_gap: 0.006,
        upper_lip: 0.030,
        lower_lip: 0.042,
    }
}

/// Attribute ramp: faster than any class onset so style differences are
/// visible well before the smile apex.
fn attr_ramp(u: f64) -> f64 {
    u.powf(0.35)
}

fn frame_params(shape: &IdentityShape, dyn_: &ClassDynamics, attrs: &ModeAttrs, u: f64) -> FaceParams {
    let s = dyn_.apex_amplitude * u.powf(dyn_.onset_exponent);
    let r = attr_ramp(u);
    let dip = if dyn_.eye_dip > 0.0 {
        dyn_.eye_dip * (-((u - 0.5) / 0.18).powi(2)).exp()
    } else {
        0.0
    };
    let aperture_scale = (1.0 - (1.0 - attrs.aperture_target) * r - dip).clamp(0.05, 1.0);
    let mut p = neutral_params(shape);
    p.jaw_drop = 1.1 * attrs.gap_amp * r;
    p.brow_lift = attrs.brow_lift_amp * r;
    p.eye_aperture = BASE_APERTURE * aperture_scale;
    p.mouth_cx = 0.5 + attrs.mouth_shift_amp * r;
    p.mouth_half_w = shape.mouth_half_w * (1.0 + attrs.widen_amp * s);
    p.corner_lift = 0.004 + attrs.corner_lift_amp * s;
    p.mouth_gap = 0.006 + attrs.gap_amp * r;
    p.upper_lip = 0.030 - 0.006 * s;
    p.lower_lip = 0.042 - 0.006 * s;
    p
}

/// Assemble the 68 labeled points from face parameters.
pub fn build_landmarks(p: &FaceParams) -> Result<LandmarkSet> {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(68);
    // jaw 0..17: left temple over the chin to the right temple
    for i in 0..17 {
        let theta = std::f64::consts::PI * (1.0 - i as f64 / 16.0);
        let x = 0.5 + p.jaw_half_w * theta.cos();
        let sin = theta.sin();
        let y = FACE_CENTER_Y + p.jaw_h * sin + p.jaw_drop * sin * sin;
        pts.push((x, y));
    }
    // brows 17..27
    for side in 0..2 {
        let x0 = if side == 0 { CANONICAL_LEFT_EYE.0 - 0.09 } else { CANONICAL_RIGHT_EYE.0 - 0.09 };
        for j in 0..5 {
            let x = x0 + j as f64 * 0.045;
            let arch = 0.012 * (std::f64::consts::PI * j as f64 / 4.0).sin();
            pts.push((x, BROW_Y - p.brow_lift - arch));
        }
    }
    // nose 27..36
    for j in 0..4 {
        pts.push((0.5, 0.42 + 0.045 * j as f64));
    }
    let nostril_y = [0.585, 0.592, 0.595, 0.592, 0.585];
    for (j, ny) in nostril_y.iter().enumerate() {
        pts.push((0.5 - 0.045 + 0.0225 * j as f64, *ny));
    }
    // eyes 36..48
    for center in [CANONICAL_LEFT_EYE, CANONICAL_RIGHT_EYE] {
        let (cx, cy) = center;
        let ew = p.eye_half_w;
        let ap = p.eye_aperture;
        pts.push((cx - ew, cy));
        pts.push((cx - ew * 0.45, cy - ap));
        pts.push((cx + ew * 0.45, cy - ap));
        pts.push((cx + ew, cy));
        pts.push((cx + ew * 0.45, cy + ap));
        pts.push((cx - ew * 0.45, cy + ap));
    }
    // mouth 48..68
    let (mcx, mw) = (p.mouth_cx, p.mouth_half_w);
    let bump = [0.6, 0.9, 1.0, 0.9, 0.6];
    pts.push((mcx - mw, MOUTH_CY - p.corner_lift)); // 48
    for j in 0..5 {
        let x = mcx + mw * (-0.66 + 0.33 * j as f64);
        pts.push((x, MOUTH_CY - p.upper_lip * bump[j]));
    }
    pts.push((mcx + mw, MOUTH_CY - p.corner_lift)); // 54
    for j in 0..5 {
        let x = mcx + mw * (0.66 - 0.33 * j as f64);
        pts.push((x, MOUTH_CY + p.lower_lip * bump[j]));
    }
    pts.push((mcx - mw * 0.8, MOUTH_CY - p.corner_lift * 0.6)); // 60
    for j in 0..3 {
        let x = mcx + mw * (-0.4 + 0.4 * j as f64);
        pts.push((x, MOUTH_CY - p.mouth_gap / 2.0 - 0.004));
    }
    pts.push((mcx + mw * 0.8, MOUTH_CY - p.corner_lift * 0.6)); // 64
    for j in 0..3 {
        let x = mcx + mw * (0.4 - 0.4 * j as f64);
        pts.push((x, MOUTH_CY + p.mouth_gap / 2.0 + 0.004));
    }
    LandmarkSet::new(pts)
}

/// The per-identity neutral face (mode attributes all at rest).
pub fn neutral_template(identity: usize) -> LandmarkSet {
    build_landmarks(&neutral_params(&identity_shape(identity))).expect("neutral template in range")
}

/// Landmark trajectory of one (identity, class, mode) sequence.
pub fn synth_landmark_sequence(
    identity: usize,
    label: ExpressionLabel,
    mode: usize,
    cfg: &SynthConfig,
) -> Result<Vec<LandmarkSet>> {
    let shape = identity_shape(identity);
    let dynamics = cfg.dynamics(label);
    let attrs = mode_attrs(mode, cfg.mode_amplitude);
    let t = cfg.frames;
    (0..t)
        .map(|i| {
            let u = i as f64 / (t - 1) as f64;
            build_landmarks(&frame_params(&shape, &dynamics, &attrs, u))
        })
        .collect()
}

fn temporal_mean_distance(a: &[LandmarkSet], b: &[LandmarkSet]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.mean_point_distance(y))
        .sum::<f64>()
        / a.len() as f64
}

/// Build the full corpus and split it by identity. Pure function of the
/// config; fails if any coordinate leaves [0,1] or the configured mode
/// separation is not met.
pub fn synthesize(cfg: &SynthConfig) -> Result<DatasetSplit> {
    cfg.validate()?;
    let mut samples = Vec::new();
    for identity in 0..cfg.num_identities {
        let palette = render::identity_palette(identity);
        for label in ExpressionLabel::ALL {
            let mut per_mode: Vec<Vec<LandmarkSet>> = Vec::new();
            for mode in 0..cfg.modes_per_class {
                let landmarks = synth_landmark_sequence(identity, label, mode, cfg)?;
                per_mode.push(landmarks.clone());
                let images: Result<Vec<_>> = landmarks
                    .iter()
                    .map(|l| rasterize(l, IMAGE_SIDE, 3))
                    .collect();
                let faces: Vec<_> = crate::parallel::map_indexed(landmarks.len(), |i| {
                    render::render_face(&landmarks[i], &palette)
                });
                let neutral = faces[0].clone();
                let sample = SequenceSample {
                    source_id: format!("id{identity:02}_{}_m{mode}", label.as_str()),
                    identity: format!("id{identity:02}"),
                    label,
                    mode_tag: Some(mode as u32),
                    landmarks,
                    images: images?,
                    faces: Some(faces),
                    neutral_face: Some(neutral),
                };
                sample.validate()?;
                samples.push(sample);
            }
            for a in 0..per_mode.len() {
                for b in a + 1..per_mode.len() {
                    let d = temporal_mean_distance(&per_mode[a], &per_mode[b]);
                    if d <= cfg.mode_separation {
                        return Err(Error::Config(format!(
                            "modes {a} and {b} separated by only {d:.4} (< {})",
                            cfg.mode_separation
                        )));
                    }
                }
            }
        }
    }
    split_by_identity(samples, cfg.train_fraction, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmark::smile_intensity;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            num_identities: 3,
            modes_per_class: 3,
            frames: 16,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn corpus_counts_default() {
        let cfg = SynthConfig {
            frames: 8,
            ..SynthConfig::default()
        };
        let split = synthesize(&cfg).unwrap();
        // 4 identities x 3 modes x 2 classes
        assert_eq!(split.n_train() + split.n_test(), 24);
    }

    #[test]
    fn three_identities_split_two_one() {
        let split = synthesize(&small_cfg()).unwrap();
        use std::collections::BTreeSet;
        let train_ids: BTreeSet<_> = split.train.iter().map(|s| s.identity.clone()).collect();
        let test_ids: BTreeSet<_> = split.test.iter().map(|s| s.identity.clone()).collect();
        assert_eq!(train_ids.len(), 2);
        assert_eq!(test_ids.len(), 1);
        split.validate_disjoint().unwrap();
    }

    #[test]
    fn synthesis_is_bitwise_reproducible() {
        let a = synthesize(&small_cfg()).unwrap();
        let b = synthesize(&small_cfg()).unwrap();
        assert_eq!(a.n_train(), b.n_train());
        for (x, y) in a.all().zip(b.all()) {
            assert_eq!(x.source_id, y.source_id);
            for (lx, ly) in x.landmarks.iter().zip(&y.landmarks) {
                assert_eq!(lx.points, ly.points);
            }
            for (ix, iy) in x.images.iter().zip(&y.images) {
                assert_eq!(ix.data, iy.data);
            }
            let (fx, fy) = (x.faces.as_ref().unwrap(), y.faces.as_ref().unwrap());
            for (a, b) in fx.iter().zip(fy) {
                assert_eq!(a.data, b.data);
            }
        }
    }

    #[test]
    fn spontaneous_intensity_nondecreasing_to_apex() {
        let split = synthesize(&small_cfg()).unwrap();
        for s in split.all().filter(|s| s.label == ExpressionLabel::Spontaneous) {
            let curve: Vec<f64> = s.landmarks.iter().map(|l| smile_intensity(l).unwrap()).collect();
            let apex = curve
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            for t in 0..apex {
                assert!(
                    curve[t + 1] >= curve[t] - 1e-9,
                    "{}: dip at {t}: {} -> {}",
                    s.source_id,
                    curve[t],
                    curve[t + 1]
                );
            }
            assert_eq!(apex, curve.len() - 1, "apex at the final frame by construction");
        }
    }

    #[test]
    fn mode_pairs_exceed_configured_separation() {
        let cfg = small_cfg();
        for label in ExpressionLabel::ALL {
            let seqs: Vec<_> = (0..3)
                .map(|m| synth_landmark_sequence(0, label, m, &cfg).unwrap())
                .collect();
            for a in 0..3 {
                for b in a + 1..3 {
                    let d = temporal_mean_distance(&seqs[a], &seqs[b]);
                    assert!(
                        d > cfg.mode_separation,
                        "{label:?} modes {a},{b}: separation {d:.4}"
                    );
                }
            }
        }
    }

    #[test]
    fn images_match_rasterized_landmarks_exactly() {
        let split = synthesize(&small_cfg()).unwrap();
        let s = &split.train[0];
        for (lms, img) in s.landmarks.iter().zip(&s.images) {
            let re = rasterize(lms, IMAGE_SIDE, 3).unwrap();
            assert_eq!(re.data, img.data);
        }
    }

    #[test]
    fn oracle_separates_classes_perfectly() {
        let split = synthesize(&small_cfg()).unwrap();
        let oracle = super::super::OnsetOracle::fit(&split.train).unwrap();
        for s in split.all() {
            assert_eq!(
                oracle.classify_landmarks(&s.landmarks).unwrap(),
                s.label,
                "{} misclassified",
                s.source_id
            );
        }
    }

    #[test]
    fn excessive_amplitude_is_rejected() {
        let cfg = SynthConfig {
            mode_amplitude: 6.0,
            ..small_cfg()
        };
        assert!(synthesize(&cfg).is_err());
    }
}
