use std::fs::File;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use reenact_core::landmarks::{write_landmarks, LandmarkRecord};
use reenact_core::synth::{SyntheticConfig, SyntheticDataset};

use crate::data::{image_name, IMAGES_DIR, LANDMARKS_FILE};
use crate::manifest::RunManifest;

/// Emit a synthetic dataset with known identity and pose/expression factors.
#[derive(Args, Debug)]
pub struct SynthDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    subjects: usize,
    /// Frames per subject; frame `f` of every subject shares pose/expression class `f`.
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Portrait side in pixels; 0 writes landmarks only.
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    #[arg(long, default_value_t = 1.0)]
    expr_bound: f64,
    /// Largest rotation angle in radians.
    #[arg(long, default_value_t = 0.3)]
    pose_bound: f64,
}

pub fn run(args: SynthDataArgs) -> Result<()> {
    let mut manifest = RunManifest::start("synth-data", Some(args.seed));
    let config = SyntheticConfig {
        subjects: args.subjects,
        frames_per_subject: args.frames,
        expr_bound: args.expr_bound,
        pose_bound: args.pose_bound,
        seed: args.seed,
    };
    for (k, v) in [
        ("subjects", args.subjects.to_string()),
        ("frames_per_subject", args.frames.to_string()),
        ("expr_bound", format!("{:?}", args.expr_bound)),
        ("pose_bound", format!("{:?}", args.pose_bound)),
        ("image_size", args.image_size.to_string()),
        ("seed", args.seed.to_string()),
    ] {
        manifest.config.insert(k.to_string(), v);
    }
    let data = SyntheticDataset::generate(&config)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let records: Vec<LandmarkRecord> = data
        .frames
        .iter()
        .map(|f| LandmarkRecord {
            subject_id: f.landmarks.subject_id.unwrap(),
            frame_id: f.landmarks.frame_id.unwrap(),
            landmarks: f.landmarks.clone(),
        })
        .collect();
    let lm_path = args.out.join(LANDMARKS_FILE);
    write_landmarks(File::create(&lm_path)?, &records).with_context(|| format!("writing {}", lm_path.display()))?;
    manifest.output(&args.out, &lm_path);

    if args.image_size > 0 {
        let dir = args.out.join(IMAGES_DIR);
        std::fs::create_dir_all(&dir)?;
        for (f, r) in data.frames.iter().zip(&records) {
            let path = dir.join(image_name(r.subject_id, r.frame_id));
            data.render(f, args.image_size)?.save_png(&path)?;
        }
        manifest.output(&args.out, &dir);
    }
    manifest.note("records", records.len());
    let m = manifest.write(&args.out)?;
    println!("wrote {} records to {}", records.len(), args.out.display());
    println!("manifest {}", m.display());
    Ok(())
}
