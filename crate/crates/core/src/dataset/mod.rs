//! Dataset ingestion and the deterministic synthetic expression corpus:
//! fixed-length sequence preparation, identity-disjoint splits, and the
//! construction-based onset-slope oracle classifier.

pub mod io;
pub mod render;
pub mod synth;

use crate::error::{validation, Result};
use crate::landmark::{rasterize, smile_intensity, LandmarkImage, LandmarkSet};
use crate::nn::rng::seeded_rng;
use crate::seqgen::ExpressionLabel;
use crate::translator::FaceFrame;

pub use synth::{synthesize, SynthConfig};

/// One fixed-length expression sequence with its rasterized landmark images
/// and (optionally) paired face frames.
#[derive(Debug, Clone)]
pub struct SequenceSample {
    pub source_id: String,
    pub identity: String,
    pub label: ExpressionLabel,
    pub mode_tag: Option<u32>,
    pub landmarks: Vec<LandmarkSet>,
    pub images: Vec<LandmarkImage>,
    pub faces: Option<Vec<FaceFrame>>,
    pub neutral_face: Option<FaceFrame>,
}

impl SequenceSample {
    /// Check the container invariants: equal list lengths and a frame-0
    /// intensity no larger than the apex intensity.
    pub fn validate(&self) -> Result<()> {
        let t = self.landmarks.len();
        if t == 0 {
            return Err(validation(format!("{}: empty sequence", self.source_id)));
        }
        if self.images.len() != t {
            return Err(validation(format!(
                "{}: {} landmark images for {} frames",
                self.source_id,
                self.images.len(),
                t
            )));
        }
        if let Some(f) = &self.faces {
            if f.len() != t {
                return Err(validation(format!(
                    "{}: {} face frames for {} landmark frames",
                    self.source_id,
                    f.len(),
                    t
                )));
            }
        }
        let intensities: Result<Vec<f64>> = self.landmarks.iter().map(smile_intensity).collect();
        let intensities = intensities?;
        let apex = intensities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if intensities[0] > apex + 1e-9 {
            return Err(validation(format!(
                "{}: frame 0 is not the neutral pose",
                self.source_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn intensity_curve(&self) -> Result<Vec<f64>> {
        self.landmarks.iter().map(smile_intensity).collect()
    }
}

/// Identity-disjoint train/test split.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
}

impl DatasetSplit {
    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn n_test(&self) -> usize {
        self.test.len()
    }

    pub fn all(&self) -> impl Iterator<Item = &SequenceSample> {
        self.train.iter().chain(self.test.iter())
    }

    /// Identities must not leak between the two sides.
    pub fn validate_disjoint(&self) -> Result<()> {
        use std::collections::BTreeSet;
        let train_ids: BTreeSet<&str> = self.train.iter().map(|s| s.identity.as_str()).collect();
        let test_ids: BTreeSet<&str> = self.test.iter().map(|s| s.identity.as_str()).collect();
        if let Some(shared) = train_ids.intersection(&test_ids).next() {
            return Err(validation(format!("identity {shared} appears in both splits")));
        }
        let train_src: BTreeSet<&str> = self.train.iter().map(|s| s.source_id.as_str()).collect();
        if self.test.iter().any(|s| train_src.contains(s.source_id.as_str())) {
            return Err(validation("source id appears in both splits".into()));
        }
        Ok(())
    }
}

/// Partition samples by identity with a seeded shuffle; the train side gets
/// round(fraction * identities), clamped so both sides are non-empty when
/// possible.
pub fn split_by_identity(
    samples: Vec<SequenceSample>,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    use rand::seq::SliceRandom;
    let mut identities: Vec<String> = samples.iter().map(|s| s.identity.clone()).collect();
    identities.sort();
    identities.dedup();
    let n = identities.len();
    if n == 0 {
        return Err(validation("no sequences found".into()));
    }
    let mut rng = seeded_rng(seed, "identity-split");
    identities.shuffle(&mut rng);
    let n_train = if n == 1 {
        1
    } else {
        ((train_fraction * n as f64).round() as usize).clamp(1, n - 1)
    };
    let train_ids: std::collections::BTreeSet<String> = identities[..n_train].iter().cloned().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for s in samples {
        if train_ids.contains(&s.identity) {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    let split = DatasetSplit { train, test };
    split.validate_disjoint()?;
    Ok(split)
}

/// Uniform subsampling indices that always include the first and last
/// frame; short clips repeat the final frame.
pub fn prepare_indices(len: usize, t: usize) -> Result<Vec<usize>> {
    if t < 2 {
        return Err(validation(format!("target length {t} must be >= 2")));
    }
    if len == 0 {
        return Err(validation("cannot prepare an empty sequence".into()));
    }
    if len >= t {
        Ok((0..t).map(|i| i * (len - 1) / (t - 1)).collect())
    } else {
        let mut v: Vec<usize> = (0..len).collect();
        v.resize(t, len - 1);
        Ok(v)
    }
}

/// Apply [`prepare_indices`] to a landmark sequence.
pub fn prepare_sequence(frames: &[LandmarkSet], t: usize) -> Result<Vec<LandmarkSet>> {
    let idx = prepare_indices(frames.len(), t)?;
    Ok(idx.into_iter().map(|i| frames[i].clone()).collect())
}

/// Rasterize a whole landmark sequence (dilation 3, 64x64), in parallel.
pub fn rasterize_sequence(frames: &[LandmarkSet]) -> Result<Vec<LandmarkImage>> {
    let images = crate::parallel::map_indexed(frames.len(), |i| rasterize(&frames[i], crate::IMAGE_SIDE, 3));
    images.into_iter().collect()
}

// --- oracle classifier ------------------------------------------------------

/// Normalized smoothed rise attained a quarter of the way into the
/// sequence: fast-onset (posed) classes score high, slow-onset
/// (spontaneous) classes low.
pub fn onset_measure(intensities: &[f64]) -> f64 {
    let sm = crate::eval::moving_average(intensities, 5);
    let t = sm.len();
    let i0 = sm[0];
    let apex = sm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom = (apex - i0).max(1e-9);
    let q = ((t - 1) as f64 * 0.25).round() as usize;
    (sm[q] - i0) / denom
}

/// Threshold rule on onset slope; separates the synthetic classes exactly
/// by construction and serves as the acceptance-test classifier.
#[derive(Debug, Clone, Copy)]
pub struct OnsetOracle {
    pub threshold: f64,
}

impl OnsetOracle {
    /// Fit the threshold as the midpoint of the two class means on a
    /// training split.
    pub fn fit(samples: &[SequenceSample]) -> Result<Self> {
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for s in samples {
            let m = onset_measure(&s.intensity_curve()?);
            sums[s.label.id()] += m;
            counts[s.label.id()] += 1;
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(validation("oracle fit needs both classes".into()));
        }
        let spont = sums[ExpressionLabel::Spontaneous.id()] / counts[ExpressionLabel::Spontaneous.id()] as f64;
        let posed = sums[ExpressionLabel::Posed.id()] / counts[ExpressionLabel::Posed.id()] as f64;
        if posed <= spont {
            return Err(validation(format!(
                "onset means not separable: posed {posed:.3} <= spontaneous {spont:.3}"
            )));
        }
        Ok(OnsetOracle {
            threshold: 0.5 * (posed + spont),
        })
    }

    pub fn classify_intensities(&self, intensities: &[f64]) -> ExpressionLabel {
        if onset_measure(intensities) > self.threshold {
            ExpressionLabel::Posed
        } else {
            ExpressionLabel::Spontaneous
        }
    }

    pub fn classify_landmarks(&self, frames: &[LandmarkSet]) -> Result<ExpressionLabel> {
        let ints: Result<Vec<f64>> = frames.iter().map(smile_intensity).collect();
        Ok(self.classify_intensities(&ints?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_identity_when_exact() {
        assert_eq!(prepare_indices(32, 32).unwrap(), (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn indices_uniform_with_endpoints_64_to_32() {
        let idx = prepare_indices(64, 32).unwrap();
        assert_eq!(idx.len(), 32);
        assert_eq!(idx[0], 0, "first frame included");
        assert_eq!(*idx.last().unwrap(), 63, "last frame included");
        // uniform stride 2 over the interior
        for (i, v) in idx.iter().enumerate().take(31) {
            assert_eq!(*v, 2 * i);
        }
        assert!(idx.windows(2).all(|w| w[1] > w[0]), "strictly increasing");
    }

    #[test]
    fn indices_pad_by_repeating_last() {
        let idx = prepare_indices(10, 32).unwrap();
        assert_eq!(idx.len(), 32);
        assert_eq!(&idx[..10], &(0..10).collect::<Vec<_>>()[..]);
        assert!(idx[10..].iter().all(|&i| i == 9));
    }

    #[test]
    fn indices_validate_t() {
        assert!(prepare_indices(10, 1).is_err());
        assert!(prepare_indices(0, 4).is_err());
    }

    #[test]
    fn forty_frames_prepare_to_exactly_32() {
        let idx = prepare_indices(40, 32).unwrap();
        assert_eq!(idx.len(), 32);
        assert_eq!(idx[0], 0);
        assert_eq!(*idx.last().unwrap(), 39);
    }

    #[test]
    fn onset_measure_orders_fast_before_slow() {
        let t = 32;
        let fast: Vec<f64> = (0..t).map(|i| (i as f64 / 31.0).powf(0.5)).collect();
        let slow: Vec<f64> = (0..t).map(|i| (i as f64 / 31.0).powf(2.2)).collect();
        assert!(onset_measure(&fast) > onset_measure(&slow) + 0.2);
    }
}
