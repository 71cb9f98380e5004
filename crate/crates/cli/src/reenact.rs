use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use reenact_core::frame::PortraitFrame;
use reenact_core::ldnet::Stage;
use reenact_core::reenact::Reenactor;
use reenact_core::trainer::{load_fdgan, load_ldnet};

use crate::data::{frame_name, normalized, read_records};
use crate::manifest::RunManifest;

/// Animate one target portrait with a driving landmark sequence.
#[derive(Args, Debug)]
pub struct ReenactArgs {
    /// Target portrait (PNG).
    #[arg(long)]
    target_image: PathBuf,
    /// Landmark file holding the target's record.
    #[arg(long)]
    target_landmarks: PathBuf,
    /// Frame id of the target record; defaults to the first record.
    #[arg(long)]
    target_frame: Option<u32>,
    /// Driving landmark file, one record per output frame.
    #[arg(long)]
    driving: PathBuf,
    /// Stage-2 LD-Net checkpoint.
    #[arg(long)]
    ldnet: PathBuf,
    /// FD-GAN checkpoint.
    #[arg(long)]
    fdgan: PathBuf,
    /// Output directory for `frame_NNNNNN.png`, `timing.csv` and the manifest.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: ReenactArgs) -> Result<()> {
    let mut manifest = RunManifest::start("reenact", None);
    for (k, p) in [
        ("target_image", &args.target_image),
        ("target_landmarks", &args.target_landmarks),
        ("driving", &args.driving),
        ("ldnet", &args.ldnet),
        ("fdgan", &args.fdgan),
    ] {
        manifest.input(k, p);
    }
    let driving = read_records(&args.driving)?;
    let targets = read_records(&args.target_landmarks)?;
    let target = match args.target_frame {
        Some(f) => targets.iter().find(|r| r.frame_id == f),
        None => targets.first(),
    }
    .with_context(|| format!("no target record in {}", args.target_landmarks.display()))?;
    let l_t = normalized(target)?;

    let ldnet = load_ldnet(&args.ldnet, None).with_context(|| format!("loading {}", args.ldnet.display()))?;
    if ldnet.stage != Stage::Two {
        bail!("{} is a stage-1 checkpoint; reenactment needs stage 2", args.ldnet.display());
    }
    let fdgan = load_fdgan(&args.fdgan, None).with_context(|| format!("loading {}", args.fdgan.display()))?;
    let x_t = PortraitFrame::load_png(&args.target_image)?;
    if x_t.size != fdgan.config.image_size {
        bail!(
            "target image is {0}x{0} but the FD-GAN checkpoint expects {1}x{1}",
            x_t.size,
            fdgan.config.image_size
        );
    }
    manifest.config.insert("image_size".into(), fdgan.config.image_size.to_string());
    manifest.config.insert("variant".into(), fdgan.config.variant.to_string());
    manifest.config.insert("target_frame".into(), target.frame_id.to_string());

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut r = Reenactor::new(&x_t, &l_t, &fdgan, &ldnet)?;
    let mut timing = csv::Writer::from_path(args.out.join("timing.csv"))?;
    timing.write_record(["step", "frame", "seconds"])?;
    timing.write_record(["extract", "", &format!("{:.6}", r.extract_time.as_secs_f64())])?;
    for (i, rec) in driving.iter().enumerate() {
        let l = normalized(rec)?;
        let (t_before, r_before) = (r.transfer_time, r.render_time);
        let t0 = Instant::now();
        let image = r.frame(&l)?;
        let total = t0.elapsed();
        let path = args.out.join(frame_name(i));
        image.save_png(&path)?;
        let idx = i.to_string();
        timing.write_record(["transfer", &idx, &format!("{:.6}", (r.transfer_time - t_before).as_secs_f64())])?;
        timing.write_record(["generate", &idx, &format!("{:.6}", (r.render_time - r_before).as_secs_f64())])?;
        timing.write_record(["frame", &idx, &format!("{:.6}", total.as_secs_f64())])?;
        manifest.output(&args.out, &path);
    }
    timing.flush()?;
    manifest.output(&args.out, &args.out.join("timing.csv"));
    let n = driving.len().max(1) as f64;
    manifest.note("frames", driving.len());
    manifest.note("extract_calls", r.extract_calls());
    manifest.note("extract_seconds", format!("{:.6}", r.extract_time.as_secs_f64()));
    manifest.note("mean_transfer_seconds", format!("{:.6}", r.transfer_time.as_secs_f64() / n));
    manifest.note("mean_generate_seconds", format!("{:.6}", r.render_time.as_secs_f64() / n));
    let m = manifest.write(&args.out)?;
    println!(
        "{} frames; extract {:.4}s once, generate {:.4}s per frame",
        driving.len(),
        r.extract_time.as_secs_f64(),
        r.render_time.as_secs_f64() / n
    );
    println!("manifest {}", m.display());
    Ok(())
}
