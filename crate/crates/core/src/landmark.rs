//! Facial landmark geometry: the 68-point landmark set, rasterization to
//! binary landmark images, eye-based canonical alignment, the smile
//! intensity proxy, binarization of decoded images, and recovery of point
//! geometry from binary images by ink tracking.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::{IMAGE_SIDE, NUM_LANDMARKS};

/// Semantic index ranges of the 68-point annotation scheme.
pub mod idx {
    use std::ops::Range;
    pub const JAW: Range<usize> = 0..17;
    pub const BROWS: Range<usize> = 17..27;
    pub const NOSE: Range<usize> = 27..36;
    pub const LEFT_EYE: Range<usize> = 36..42;
    pub const RIGHT_EYE: Range<usize> = 42..48;
    pub const MOUTH: Range<usize> = 48..68;
    pub const MOUTH_OUTER: Range<usize> = 48..60;
    pub const MOUTH_INNER: Range<usize> = 60..68;
    pub const MOUTH_CORNER_LEFT: usize = 48;
    pub const MOUTH_CORNER_RIGHT: usize = 54;
}

/// Canonical eye centers after alignment (normalized coordinates, y down).
pub const CANONICAL_LEFT_EYE: (f64, f64) = (0.35, 0.40);
pub const CANONICAL_RIGHT_EYE: (f64, f64) = (0.65, 0.40);

/// 68 labeled points in normalized [0,1] image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<(f64, f64)>,
}

impl LandmarkSet {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(validation(format!(
                "landmark set needs {NUM_LANDMARKS} points, got {}",
                points.len()
            )));
        }
        for (i, &(x, y)) in points.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() || !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(validation(format!("landmark {i} = ({x}, {y}) outside [0,1]")));
            }
        }
        Ok(LandmarkSet { points })
    }

    fn centroid(&self, range: std::ops::Range<usize>) -> (f64, f64) {
        let pts = &self.points[range];
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x, ay + y));
        (sx / n, sy / n)
    }

    pub fn left_eye_center(&self) -> (f64, f64) {
        self.centroid(idx::LEFT_EYE)
    }

    pub fn right_eye_center(&self) -> (f64, f64) {
        self.centroid(idx::RIGHT_EYE)
    }

    pub fn mouth_center(&self) -> (f64, f64) {
        self.centroid(idx::MOUTH)
    }

    pub fn inter_ocular(&self) -> f64 {
        let l = self.left_eye_center();
        let r = self.right_eye_center();
        ((r.0 - l.0).powi(2) + (r.1 - l.1).powi(2)).sqrt()
    }

    /// Mean per-point Euclidean distance to another set.
    pub fn mean_point_distance(&self, other: &LandmarkSet) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
            .sum::<f64>()
            / NUM_LANDMARKS as f64
    }
}

/// Single-channel landmark image in [0,1]; `binary` marks {0,1} rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkImage {
    pub side: usize,
    pub data: Vec<f64>,
    pub binary: bool,
}

impl LandmarkImage {
    pub fn zeros(side: usize) -> Self {
        LandmarkImage {
            side,
            data: vec![0.0; side * side],
            binary: true,
        }
    }

    pub fn from_data(side: usize, data: Vec<f64>, binary: bool) -> Result<Self> {
        if data.len() != side * side {
            return Err(Error::Shape {
                expected: format!("{side}x{side}"),
                got: format!("{} values", data.len()),
            });
        }
        Ok(LandmarkImage { side, data, binary })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.side + x]
    }

    pub fn set_pixel_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }
}

/// 2-D similarity transform p' = scale * R(rotation) * p + translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: (f64, f64),
}

impl AlignmentTransform {
    pub fn identity() -> Self {
        AlignmentTransform {
            scale: 1.0,
            rotation: 0.0,
            translation: (0.0, 0.0),
        }
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        (
            self.scale * (c * p.0 - s * p.1) + self.translation.0,
            self.scale * (s * p.0 + c * p.1) + self.translation.1,
        )
    }

    pub fn inverse(&self) -> Self {
        let inv_scale = 1.0 / self.scale;
        let rot = -self.rotation;
        let (c, s) = (rot.cos(), rot.sin());
        let tx = -inv_scale * (c * self.translation.0 - s * self.translation.1);
        let ty = -inv_scale * (s * self.translation.0 + c * self.translation.1);
        AlignmentTransform {
            scale: inv_scale,
            rotation: rot,
            translation: (tx, ty),
        }
    }
}

/// Rasterize arbitrary points (the empty slice is the all-zeros test hook).
pub fn rasterize_points(points: &[(f64, f64)], side: usize, dilation: usize) -> Result<LandmarkImage> {
    if side < 16 {
        return Err(validation(format!("raster side {side} < 16")));
    }
    if dilation % 2 == 0 || dilation == 0 {
        return Err(validation(format!("dilation {dilation} must be odd")));
    }
    for &(x, y) in points {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(validation(format!("point ({x}, {y}) outside [0,1]")));
        }
    }
    let mut img = LandmarkImage::zeros(side);
    let r = (dilation / 2) as isize;
    let max = (side - 1) as f64;
    for &(x, y) in points {
        let px = (x * max).round() as isize;
        let py = (y * max).round() as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                let (qx, qy) = (px + dx, py + dy);
                if qx >= 0 && qy >= 0 && (qx as usize) < side && (qy as usize) < side {
                    img.data[qy as usize * side + qx as usize] = 1.0;
                }
            }
        }
    }
    Ok(img)
}

/// Binary landmark image: each point lands on pixel (round(x*(side-1)),
/// round(y*(side-1))), dilated by a dilation x dilation square clipped at
/// the borders.
pub fn rasterize(lms: &LandmarkSet, side: usize, dilation: usize) -> Result<LandmarkImage> {
    rasterize_points(&lms.points, side, dilation)
}

/// Canonicalize a landmark set so the eye centers sit at the fixed
/// horizontal canonical positions. Returns the aligned set and the
/// similarity transform that maps input to output.
pub fn align(lms: &LandmarkSet) -> Result<(LandmarkSet, AlignmentTransform)> {
    let l = lms.left_eye_center();
    let r = lms.right_eye_center();
    let dx = r.0 - l.0;
    let dy = r.1 - l.1;
    let dist = (dx * dx + dy * dy).sqrt();
    if dist < 1e-9 {
        return Err(Error::DegenerateGeometry("coincident eye centers".into()));
    }
    let target_dx = CANONICAL_RIGHT_EYE.0 - CANONICAL_LEFT_EYE.0;
    let scale = target_dx / dist;
    let rotation = -(dy.atan2(dx));
    let (c, s) = (rotation.cos(), rotation.sin());
    // translation chosen so the left eye center maps exactly onto canon
    let tx = CANONICAL_LEFT_EYE.0 - scale * (c * l.0 - s * l.1);
    let ty = CANONICAL_LEFT_EYE.1 - scale * (s * l.0 + c * l.1);
    let transform = AlignmentTransform {
        scale,
        rotation,
        translation: (tx, ty),
    };
    let mapped: Vec<(f64, f64)> = lms.points.iter().map(|&p| transform.apply(p)).collect();
    for (i, &(x, y)) in mapped.iter().enumerate() {
        if !(-1e-9..=1.0 + 1e-9).contains(&x) || !(-1e-9..=1.0 + 1e-9).contains(&y) {
            return Err(validation(format!(
                "aligned landmark {i} = ({x:.4}, {y:.4}) leaves [0,1]"
            )));
        }
    }
    let clamped = mapped
        .into_iter()
        .map(|(x, y)| (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)))
        .collect();
    Ok((LandmarkSet { points: clamped }, transform))
}

/// Smile intensity proxy: mouth-corner horizontal span plus lip-corner
/// vertical raise relative to the mouth center, each normalized by the
/// inter-ocular distance and mixed 50/50. Measured in the canonical aligned
/// frame, so the value is invariant to similarity transforms of the input.
pub fn smile_intensity(lms: &LandmarkSet) -> Result<f64> {
    let (aligned, _) = align(lms)?;
    let iod = aligned.inter_ocular();
    if iod < 1e-9 {
        return Err(Error::DegenerateGeometry("zero inter-ocular distance".into()));
    }
    let lc = aligned.points[idx::MOUTH_CORNER_LEFT];
    let rc = aligned.points[idx::MOUTH_CORNER_RIGHT];
    let span = (rc.0 - lc.0).abs();
    let mouth_center = aligned.mouth_center();
    // y grows downward: corners above the center give a positive raise
    let raise = mouth_center.1 - 0.5 * (lc.1 + rc.1);
    const W: f64 = 0.5;
    Ok((W * span / iod + (1.0 - W) * raise / iod).max(0.0))
}

/// Threshold a decoded sigmoid image: pixel = 1 iff value >= threshold.
pub fn binarize_decoded(img: &LandmarkImage, threshold: f64) -> LandmarkImage {
    LandmarkImage {
        side: img.side,
        data: img.data.iter().map(|&v| f64::from(v >= threshold)).collect(),
        binary: true,
    }
}

/// Recover point geometry from a binary landmark image: each reference
/// point snaps to the centroid of the set pixels within a Chebyshev radius
/// of its current position (and stays put when no ink is nearby).
pub fn snap_to_ink(img: &LandmarkImage, reference: &LandmarkSet, radius: usize) -> LandmarkSet {
    let side = img.side;
    let max = (side - 1) as f64;
    let r = radius as isize;
    let points = reference
        .points
        .iter()
        .map(|&(x, y)| {
            let px = (x * max).round() as isize;
            let py = (y * max).round() as isize;
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut count = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (qx, qy) = (px + dx, py + dy);
                    if qx >= 0 && qy >= 0 && (qx as usize) < side && (qy as usize) < side {
                        if img.at(qy as usize, qx as usize) > 0.5 {
                            sx += qx as f64;
                            sy += qy as f64;
                            count += 1.0;
                        }
                    }
                }
            }
            if count > 0.0 {
                ((sx / count / max).clamp(0.0, 1.0), (sy / count / max).clamp(0.0, 1.0))
            } else {
                (x, y)
            }
        })
        .collect();
    LandmarkSet { points }
}

/// Track landmark geometry through a sequence of binary images, starting
/// from a known reference set for frame 0.
pub fn extract_tracked(images: &[LandmarkImage], reference: &LandmarkSet, radius: usize) -> Vec<LandmarkSet> {
    let mut out = Vec::with_capacity(images.len());
    let mut current = reference.clone();
    for img in images {
        current = snap_to_ink(img, &current, radius);
        out.push(current.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::neutral_template;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn template() -> LandmarkSet {
        neutral_template(0)
    }

    #[test]
    fn empty_point_set_rasterizes_to_zeros() {
        let img = rasterize_points(&[], 64, 3).unwrap();
        assert_eq!(img.set_pixel_count(), 0);
        assert!(img.binary);
    }

    #[test]
    fn center_point_lands_on_pixel_32() {
        let img = rasterize_points(&[(0.5, 0.5)], 64, 1).unwrap();
        assert_eq!(img.set_pixel_count(), 1);
        assert_eq!(img.at(32, 32), 1.0);
    }

    #[test]
    fn full_set_footprint_matches_enumeration() {
        let lms = template();
        let img = rasterize(&lms, 64, 3).unwrap();
        // independent oracle: union of dilated footprints
        let mut expected = std::collections::BTreeSet::new();
        for &(x, y) in &lms.points {
            let px = (x * 63.0).round() as isize;
            let py = (y * 63.0).round() as isize;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (qx, qy) = (px + dx, py + dy);
                    if (0..64).contains(&qx) && (0..64).contains(&qy) {
                        expected.insert((qy, qx));
                    }
                }
            }
        }
        assert_eq!(img.set_pixel_count(), expected.len());
        assert!(img.set_pixel_count() >= 68);
        assert!(img.set_pixel_count() <= 68 * 9);
    }

    #[test]
    fn rasterize_rejects_bad_args() {
        assert!(rasterize_points(&[(0.5, 0.5)], 8, 3).is_err());
        assert!(rasterize_points(&[(0.5, 0.5)], 64, 2).is_err());
        assert!(rasterize_points(&[(1.5, 0.5)], 64, 3).is_err());
    }

    #[test]
    fn align_canonical_is_identity() {
        let lms = template();
        let (aligned, t) = align(&lms).unwrap();
        assert_abs_diff_eq!(t.scale, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.rotation, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.translation.0, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.translation.1, 0.0, epsilon = 1e-9);
        for (a, b) in aligned.points.iter().zip(&lms.points) {
            assert_abs_diff_eq!(a.0, b.0, epsilon = 1e-9);
            assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-9);
        }
    }

    fn transform_set(lms: &LandmarkSet, t: &AlignmentTransform) -> LandmarkSet {
        LandmarkSet {
            points: lms.points.iter().map(|&p| t.apply(p)).collect(),
        }
    }

    #[test]
    fn align_recovers_rotation() {
        let lms = template();
        let deg10 = 10.0f64.to_radians();
        // rotate about the face center so points stay in range
        let center = (0.5, 0.5);
        let rotated = LandmarkSet {
            points: lms
                .points
                .iter()
                .map(|&(x, y)| {
                    let (dx, dy) = (x - center.0, y - center.1);
                    (
                        center.0 + deg10.cos() * dx - deg10.sin() * dy,
                        center.1 + deg10.sin() * dx + deg10.cos() * dy,
                    )
                })
                .collect(),
        };
        let (aligned, t) = align(&rotated).unwrap();
        assert_abs_diff_eq!(t.rotation, -deg10, epsilon = 1e-9);
        for (a, b) in aligned.points.iter().zip(&lms.points) {
            assert_abs_diff_eq!(a.0, b.0, epsilon = 1e-6);
            assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-6);
        }
    }

    #[test]
    fn align_recovers_scale() {
        let lms = template();
        let center = (0.5, 0.5);
        let scaled = LandmarkSet {
            points: lms
                .points
                .iter()
                .map(|&(x, y)| (center.0 + 1.5 * (x - center.0) * 0.4, center.1 + 1.5 * (y - center.1) * 0.4))
                .collect(),
        };
        // the 0.4 shrink keeps everything in range; effective scale 0.6
        let (_, t) = align(&scaled).unwrap();
        assert_abs_diff_eq!(t.scale, 1.0 / 0.6, epsilon = 1e-6);
    }

    #[test]
    fn coincident_eyes_are_degenerate() {
        let mut pts = template().points;
        for i in idx::RIGHT_EYE {
            pts[i] = pts[i - 6];
        }
        let lms = LandmarkSet { points: pts };
        match align(&lms) {
            Err(Error::DegenerateGeometry(_)) => {}
            other => panic!("expected degenerate geometry, got {other:?}"),
        }
        match smile_intensity(&lms) {
            Err(Error::DegenerateGeometry(_)) => {}
            other => panic!("expected degenerate geometry, got {other:?}"),
        }
    }

    #[test]
    fn wider_mouth_is_more_intense() {
        let lms = template();
        let base = smile_intensity(&lms).unwrap();
        let mut pts = lms.points.clone();
        pts[idx::MOUTH_CORNER_LEFT].0 -= 0.05;
        pts[idx::MOUTH_CORNER_RIGHT].0 += 0.05;
        let wider = LandmarkSet { points: pts };
        assert!(smile_intensity(&wider).unwrap() > base);
    }

    #[test]
    fn binarize_thresholds_with_geq() {
        let img = LandmarkImage::from_data(64, vec![0.5; 64 * 64], false).unwrap();
        let bin = binarize_decoded(&img, 0.5);
        assert!(bin.binary);
        assert!(bin.data.iter().all(|&v| v == 1.0));

        let zeros = LandmarkImage::zeros(64);
        let bz = binarize_decoded(&zeros, 0.5);
        assert!(bz.data.iter().all(|&v| v == 0.0));

        let mut mixed = vec![0.2; 64 * 64];
        mixed[100] = 0.7;
        mixed[200] = 0.7;
        let bm = binarize_decoded(&LandmarkImage::from_data(64, mixed, false).unwrap(), 0.5);
        assert_eq!(bm.set_pixel_count(), 2);
        assert_eq!(bm.data[100], 1.0);
        assert_eq!(bm.data[200], 1.0);
    }

    #[test]
    fn snap_recovers_rasterized_geometry() {
        let lms = template();
        let img = rasterize(&lms, 64, 3).unwrap();
        // perturb the reference and snap back
        let perturbed = LandmarkSet {
            points: lms
                .points
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| {
                    let jitter = if i % 2 == 0 { 0.008 } else { -0.008 };
                    ((x + jitter).clamp(0.0, 1.0), (y - jitter).clamp(0.0, 1.0))
                })
                .collect(),
        };
        let snapped = snap_to_ink(&img, &perturbed, 2);
        let base = smile_intensity(&lms).unwrap();
        let got = smile_intensity(&snapped).unwrap();
        assert!((base - got).abs() < 0.05, "intensity drift {} vs {}", base, got);
        assert!(snapped.mean_point_distance(&lms) < 0.02);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rasterize_is_permutation_invariant(seed in 0u64..1000) {
            let lms = template();
            let img = rasterize(&lms, 64, 3).unwrap();
            let mut shuffled = lms.points.clone();
            let mut rng = crate::nn::rng::seeded_rng(seed, "perm");
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            let img2 = rasterize_points(&shuffled, 64, 3).unwrap();
            prop_assert_eq!(img.data, img2.data);
        }

        #[test]
        fn rasterize_ink_bounded_by_dilated_points(dilation in prop::sample::select(vec![1usize, 3, 5])) {
            let lms = template();
            let img = rasterize(&lms, 64, dilation).unwrap();
            prop_assert!(img.set_pixel_count() <= 68 * dilation * dilation);
        }

        #[test]
        fn align_is_idempotent(angle in -0.5f64..0.5, s in 0.7f64..1.2) {
            let lms = template();
            let t = AlignmentTransform { scale: s * 0.5, rotation: angle, translation: (0.28, 0.30) };
            let moved = transform_set(&lms, &t);
            if moved.points.iter().all(|&(x, y)| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)) {
                let (aligned, _) = align(&moved).unwrap();
                let (aligned2, t2) = align(&aligned).unwrap();
                prop_assert!((t2.scale - 1.0).abs() < 1e-6);
                prop_assert!(t2.rotation.abs() < 1e-6);
                prop_assert!(t2.translation.0.abs() < 1e-6 && t2.translation.1.abs() < 1e-6);
                for (a, b) in aligned2.points.iter().zip(&aligned.points) {
                    prop_assert!((a.0 - b.0).abs() < 1e-6);
                    prop_assert!((a.1 - b.1).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn smile_intensity_invariant_under_similarity(angle in -0.4f64..0.4, s in 0.35f64..0.55, tx in 0.2f64..0.3, ty in 0.2f64..0.3) {
            let lms = template();
            let t = AlignmentTransform { scale: s, rotation: angle, translation: (tx, ty) };
            let moved = transform_set(&lms, &t);
            if moved.points.iter().all(|&(x, y)| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)) {
                let a = smile_intensity(&lms).unwrap();
                let b = smile_intensity(&moved).unwrap();
                prop_assert!(((a - b) / a.max(1e-12)).abs() < 1e-6, "{} vs {}", a, b);
            }
        }
    }
}
