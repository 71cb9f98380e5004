//! On-disk dataset layout: `landmarks.csv` plus `images/sSSSS_fFFFFFF.png`.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use reenact_core::frame::PortraitFrame;
use reenact_core::landmarks::{normalize_landmarks, read_landmarks, LandmarkRecord, LandmarkSet};
use reenact_core::synth::{LandmarkDataset, SyntheticConfig, SyntheticDataset};
use reenact_core::trainer::{PortraitDataset, StageKind, TrainData};

pub const LANDMARKS_FILE: &str = "landmarks.csv";
pub const IMAGES_DIR: &str = "images";

pub fn image_name(subject: u32, frame: u32) -> String {
    format!("s{subject:04}_f{frame:06}.png")
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

pub fn read_records(path: &Path) -> Result<Vec<LandmarkRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_landmarks(file).with_context(|| format!("reading {}", path.display()))
}

/// Per-frame normalization, keeping ids.
pub fn normalized(rec: &LandmarkRecord) -> Result<LandmarkSet> {
    normalize_landmarks(&rec.landmarks)
        .map(|(l, _)| l)
        .with_context(|| format!("subject {} frame {}", rec.subject_id, rec.frame_id))
}

pub fn load_train_data(dir: &Path, stage: StageKind, image_size: usize) -> Result<TrainData> {
    let records = read_records(&dir.join(LANDMARKS_FILE))?;
    if records.is_empty() {
        bail!("{} holds no landmark records", dir.join(LANDMARKS_FILE).display());
    }
    let sets = records.iter().map(normalized).collect::<Result<Vec<_>>>()?;
    if stage != StageKind::Fdgan {
        return Ok(TrainData::Landmarks(LandmarkDataset::new(sets)?));
    }
    let mut items = Vec::with_capacity(sets.len());
    for (rec, set) in records.iter().zip(sets) {
        let path = dir.join(IMAGES_DIR).join(image_name(rec.subject_id, rec.frame_id));
        let mut frame = PortraitFrame::load_png(&path)
            .with_context(|| format!("FD-GAN training needs portraits; missing {}", path.display()))?;
        frame.subject_id = Some(rec.subject_id);
        frame.frame_id = Some(rec.frame_id);
        items.push((frame, set));
    }
    Ok(TrainData::Portraits(PortraitDataset::new(items, image_size)?))
}

/// The default synthetic dataset, rendered only when the stage needs images.
pub fn synthetic_train_data(stage: StageKind, seed: u64, image_size: usize) -> Result<TrainData> {
    let synth = SyntheticDataset::generate(&SyntheticConfig {
        seed,
        ..Default::default()
    })?;
    if stage != StageKind::Fdgan {
        return Ok(TrainData::Landmarks(synth.landmark_dataset()));
    }
    let items = synth
        .frames
        .iter()
        .map(|f| Ok((synth.render(f, image_size)?, f.landmarks.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainData::Portraits(PortraitDataset::new(items, image_size)?))
}

/// `*.png` files of a directory in lexical order.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
