use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use reenact_core::metrics::{latent_distance_eval, FactorLabeled, PatternMeans};
use reenact_core::trainer::load_ldnet;

use crate::data::{normalized, read_records, LANDMARKS_FILE};
use crate::manifest::RunManifest;

/// Mean latent distances under the three pair-sampling patterns.
#[derive(Args, Debug)]
pub struct LatentEvalArgs {
    /// Stage-2 LD-Net checkpoint.
    #[arg(long)]
    ldnet: PathBuf,
    /// Dataset directory; subject ids label identity and frame ids label the
    /// pose/expression class, as written by `synth-data`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for `distances.csv` and the manifest.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: LatentEvalArgs) -> Result<()> {
    let mut manifest = RunManifest::start("latent-eval", Some(args.seed));
    manifest.input("ldnet", &args.ldnet);
    manifest.input("data", &args.data);
    manifest.config.insert("pairs".into(), args.pairs.to_string());
    let params = load_ldnet(&args.ldnet, None).with_context(|| format!("loading {}", args.ldnet.display()))?;
    let records = read_records(&args.data.join(LANDMARKS_FILE))?;
    let data = FactorLabeled {
        landmarks: records.iter().map(normalized).collect::<Result<_>>()?,
        identity: records.iter().map(|r| r.subject_id as usize).collect(),
        class: records.iter().map(|r| r.frame_id as usize).collect(),
    };
    let report = latent_distance_eval(&params, &data, args.pairs, args.seed)?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let path = args.out.join("distances.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["space", "same_identity", "same_pose_expr", "both_different", "samples"])?;
    let mut put = |space: &str, m: &PatternMeans| -> Result<()> {
        w.write_record([
            space.to_string(),
            format!("{:?}", m.same_identity),
            format!("{:?}", m.same_pose_expr),
            format!("{:?}", m.both_different),
            report.samples.to_string(),
        ])?;
        println!(
            "{space:<10} same identity {:.4}  same pose/expression {:.4}  both different {:.4}",
            m.same_identity, m.same_pose_expr, m.both_different
        );
        Ok(())
    };
    put("identity", &report.identity_space)?;
    put("pose_expr", &report.pose_expr_space)?;
    w.flush()?;
    manifest.output(&args.out, &path);
    let m = manifest.write(&args.out)?;
    println!("manifest {}", m.display());
    Ok(())
}
