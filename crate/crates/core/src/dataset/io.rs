//! Dataset directory layout: `<root>/<sourceId>/sequence.json` plus
//! optional `frames/####.png` and `neutral.png`. The synthetic corpus is
//! written in the same layout it is read from.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::landmark::{align, LandmarkSet};
use crate::media;
use crate::seqgen::ExpressionLabel;

use super::{prepare_indices, rasterize_sequence, split_by_identity, DatasetSplit, SequenceSample};

/// On-disk form of one sequence.
#[derive(Debug, Serialize, Deserialize)]
pub struct SequenceFile {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub identity: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mode_tag: Option<u32>,
    pub frames: Vec<LandmarkSet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadConfig {
    /// Target sequence length T.
    pub frames: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for LoadConfig {
    fn default() -> Self {
        LoadConfig {
            frames: 32,
            train_fraction: 2.0 / 3.0,
            seed: 7,
        }
    }
}

/// Write samples into the directory layout. Deterministic: no timestamps,
/// stable ordering, so equal corpora produce byte-identical trees.
pub fn write_corpus(samples: &[SequenceSample], root: &Path) -> Result<()> {
    fs::create_dir_all(root)?;
    for s in samples {
        let dir = root.join(&s.source_id);
        fs::create_dir_all(&dir)?;
        let file = SequenceFile {
            label: s.label.as_str().to_string(),
            identity: Some(s.identity.clone()),
            mode_tag: s.mode_tag,
            frames: s.landmarks.clone(),
        };
        let json = serde_json::to_string_pretty(&file)?;
        fs::write(dir.join("sequence.json"), json)?;
        if let Some(faces) = &s.faces {
            let frames_dir = dir.join("frames");
            fs::create_dir_all(&frames_dir)?;
            for (t, f) in faces.iter().enumerate() {
                media::save_face_png(f, &frames_dir.join(format!("{t:04}.png")))?;
            }
        }
        if let Some(neutral) = &s.neutral_face {
            media::save_face_png(neutral, &dir.join("neutral.png"))?;
        }
    }
    Ok(())
}

fn sorted_sequence_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() && path.join("sequence.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Load one sequence directory without preparing/aligning it.
pub fn read_sequence_dir(dir: &Path) -> Result<SequenceSample> {
    let json_path = dir.join("sequence.json");
    let text = fs::read_to_string(&json_path)?;
    let file: SequenceFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: json_path.clone(),
        detail: e.to_string(),
    })?;
    if file.frames.is_empty() {
        return Err(validation(format!("{}: length-0 sequence", json_path.display())));
    }
    for (i, f) in file.frames.iter().enumerate() {
        LandmarkSet::new(f.points.clone())
            .map_err(|e| validation(format!("{} frame {i}: {e}", json_path.display())))?;
    }
    let label = ExpressionLabel::parse(&file.label)
        .map_err(|e| validation(format!("{}: {e}", json_path.display())))?;
    let source_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "sequence".to_string());
    let identity = file.identity.clone().unwrap_or_else(|| source_id.clone());

    let frames_dir = dir.join("frames");
    let faces = if frames_dir.is_dir() {
        let mut pngs: Vec<PathBuf> = fs::read_dir(&frames_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        pngs.sort();
        if pngs.len() != file.frames.len() {
            return Err(validation(format!(
                "{}: {} face frames for {} landmark frames",
                dir.display(),
                pngs.len(),
                file.frames.len()
            )));
        }
        let frames: Result<Vec<_>> = pngs.iter().map(|p| media::load_face_png(p)).collect();
        Some(frames?)
    } else {
        None
    };
    let neutral_path = dir.join("neutral.png");
    let neutral_face = if neutral_path.is_file() {
        Some(media::load_face_png(&neutral_path)?)
    } else {
        faces.as_ref().map(|f| f[0].clone())
    };

    Ok(SequenceSample {
        source_id,
        identity,
        label,
        mode_tag: file.mode_tag,
        landmarks: file.frames,
        images: Vec::new(), // filled after preparation
        faces,
        neutral_face,
    })
}

/// Load a dataset directory: validate, prepare to fixed length, align,
/// rasterize, and split by identity (seeded, reproducible).
pub fn load_dataset(root: &Path, cfg: &LoadConfig) -> Result<DatasetSplit> {
    let dirs = sorted_sequence_dirs(root)?;
    if dirs.is_empty() {
        return Err(validation(format!("no sequence directories under {}", root.display())));
    }
    let loaded = crate::parallel::map_indexed(dirs.len(), |i| -> Result<SequenceSample> {
        let mut s = read_sequence_dir(&dirs[i])?;
        let idx = prepare_indices(s.landmarks.len(), cfg.frames)?;
        let mut prepared = Vec::with_capacity(idx.len());
        for &fi in &idx {
            let (aligned, _) = align(&s.landmarks[fi])?;
            prepared.push(aligned);
        }
        s.faces = match s.faces.take() {
            Some(f) => Some(idx.iter().map(|&fi| f[fi].clone()).collect()),
            None => None,
        };
        s.landmarks = prepared;
        s.images = rasterize_sequence(&s.landmarks)?;
        s.validate()?;
        Ok(s)
    });
    let samples: Result<Vec<_>> = loaded.into_iter().collect();
    split_by_identity(samples?, cfg.train_fraction, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{synthesize, SynthConfig};
    use tempfile::tempdir;

    fn tiny_cfg() -> SynthConfig {
        SynthConfig {
            num_identities: 3,
            modes_per_class: 2,
            frames: 8,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempdir().unwrap();
        let split = synthesize(&tiny_cfg()).unwrap();
        let all: Vec<_> = split.all().cloned().collect();
        write_corpus(&all, dir.path()).unwrap();
        let loaded = load_dataset(
            dir.path(),
            &LoadConfig {
                frames: 8,
                train_fraction: 2.0 / 3.0,
                seed: 5,
            },
        )
        .unwrap();
        assert_eq!(loaded.n_train() + loaded.n_test(), all.len());
        loaded.validate_disjoint().unwrap();
        // 3 identities, fraction 2/3 -> 2 train / 1 test
        use std::collections::BTreeSet;
        let train_ids: BTreeSet<_> = loaded.train.iter().map(|s| s.identity.clone()).collect();
        assert_eq!(train_ids.len(), 2);
    }

    #[test]
    fn split_is_deterministic_across_loads() {
        let dir = tempdir().unwrap();
        let split = synthesize(&tiny_cfg()).unwrap();
        let all: Vec<_> = split.all().cloned().collect();
        write_corpus(&all, dir.path()).unwrap();
        let cfg = LoadConfig {
            frames: 8,
            train_fraction: 2.0 / 3.0,
            seed: 99,
        };
        let a = load_dataset(dir.path(), &cfg).unwrap();
        let b = load_dataset(dir.path(), &cfg).unwrap();
        let ids = |s: &DatasetSplit| {
            (
                s.train.iter().map(|x| x.source_id.clone()).collect::<Vec<_>>(),
                s.test.iter().map(|x| x.source_id.clone()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn longer_clips_prepare_to_fixed_length() {
        let dir = tempdir().unwrap();
        let split = synthesize(&SynthConfig {
            num_identities: 1,
            modes_per_class: 1,
            frames: 40,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let all: Vec<_> = split.all().cloned().collect();
        write_corpus(&all, dir.path()).unwrap();
        let loaded = load_dataset(
            dir.path(),
            &LoadConfig {
                frames: 32,
                ..LoadConfig::default()
            },
        )
        .unwrap();
        for s in loaded.all() {
            assert_eq!(s.len(), 32);
            assert_eq!(s.faces.as_ref().unwrap().len(), 32);
        }
    }

    #[test]
    fn malformed_json_reports_path() {
        let dir = tempdir().unwrap();
        let seq = dir.path().join("bad");
        fs::create_dir_all(&seq).unwrap();
        fs::write(seq.join("sequence.json"), "{not json").unwrap();
        match load_dataset(dir.path(), &LoadConfig::default()) {
            Err(Error::Parse { path, .. }) => assert!(path.ends_with("bad/sequence.json")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let dir = tempdir().unwrap();
        let seq = dir.path().join("empty");
        fs::create_dir_all(&seq).unwrap();
        fs::write(
            seq.join("sequence.json"),
            r#"{"label": "posed", "frames": []}"#,
        )
        .unwrap();
        assert!(matches!(
            load_dataset(dir.path(), &LoadConfig::default()),
            Err(Error::Validation(_))
        ));
    }
}
