use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use reenact_core::frame::PortraitFrame;
use reenact_core::landmarks::LandmarkSet;
use reenact_core::metrics::{fid, pooled_pixel_features, psim, ssim, FaceSample, LandmarkPoseProvider, PoseProvider};
use serde::Deserialize;

use crate::data::{list_pngs, normalized, read_records};
use crate::manifest::RunManifest;

const FID_GRID: usize = 4;

/// Compare generated frames with reference frames.
#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of generated PNG frames.
    #[arg(long)]
    results: PathBuf,
    /// Directory of reference PNG frames, paired with results in lexical order.
    #[arg(long)]
    reference: PathBuf,
    /// TOML file declaring identity/pose/expression providers.
    #[arg(long)]
    providers: Option<PathBuf>,
    /// Output directory for `report.csv` and the manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvidersConfig {
    identity: Option<Named>,
    pose: Option<PoseEntry>,
    expression: Option<Named>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Named {
    provider: String,
}

/// The landmark-geometric pose provider reads landmarks paired with the
/// frames in order.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseEntry {
    provider: String,
    results_landmarks: PathBuf,
    reference_landmarks: PathBuf,
}

struct Row {
    metric: &'static str,
    value: Option<f64>,
    samples: usize,
    provider: String,
    status: String,
}

impl Row {
    fn ok(metric: &'static str, value: f64, samples: usize, provider: &str) -> Self {
        Row {
            metric,
            value: Some(value),
            samples,
            provider: provider.to_string(),
            status: "ok".into(),
        }
    }

    fn skipped(metric: &'static str, why: &str) -> Self {
        Row {
            metric,
            value: None,
            samples: 0,
            provider: String::new(),
            status: format!("skipped: {why}"),
        }
    }
}

fn load_frames(paths: &[PathBuf]) -> Result<Vec<PortraitFrame>> {
    paths.iter().map(|p| Ok(PortraitFrame::load_png(p)?)).collect()
}

fn load_sets(path: &Path, n: usize) -> Result<Vec<LandmarkSet>> {
    let recs = read_records(path)?;
    if recs.len() != n {
        bail!("{} has {} records for {n} frames", path.display(), recs.len());
    }
    recs.iter().map(normalized).collect()
}

fn pose_row(entry: &PoseEntry, results: &[PortraitFrame], reference: &[PortraitFrame]) -> Result<Row> {
    if entry.provider != "landmark-geometric" {
        bail!("unknown pose provider {:?}; available: landmark-geometric", entry.provider);
    }
    let provider = LandmarkPoseProvider::default();
    let la = load_sets(&entry.results_landmarks, results.len())?;
    let lb = load_sets(&entry.reference_landmarks, reference.len())?;
    let mut total = 0.0;
    for i in 0..results.len() {
        let a = FaceSample {
            image: &results[i],
            landmarks: Some(&la[i]),
        };
        let b = FaceSample {
            image: &reference[i],
            landmarks: Some(&lb[i]),
        };
        total += psim(a, b, Some(&provider as &dyn PoseProvider))?;
    }
    Ok(Row::ok("psim", total / results.len() as f64, results.len(), provider.id()))
}

pub fn run(args: EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::start("eval", None);
    manifest.input("results", &args.results);
    manifest.input("reference", &args.reference);
    let providers: ProvidersConfig = match &args.providers {
        Some(p) => {
            manifest.input("providers", p);
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ProvidersConfig::default(),
    };
    let res_paths = list_pngs(&args.results)?;
    let ref_paths = list_pngs(&args.reference)?;
    if res_paths.len() != ref_paths.len() {
        bail!(
            "frame counts differ: {} results in {}, {} references in {}",
            res_paths.len(),
            args.results.display(),
            ref_paths.len(),
            args.reference.display()
        );
    }
    if res_paths.is_empty() {
        bail!("no PNG frames in {}", args.results.display());
    }
    let results = load_frames(&res_paths)?;
    let reference = load_frames(&ref_paths)?;
    let n = results.len();

    let mut rows = Vec::new();
    let mut total = 0.0;
    for (a, b) in results.iter().zip(&reference) {
        total += ssim(a, b)?;
    }
    rows.push(Row::ok("ssim", total / n as f64, n, "native"));
    if n >= 2 {
        let fa: Vec<_> = results.iter().map(|f| pooled_pixel_features(f, FID_GRID)).collect();
        let fb: Vec<_> = reference.iter().map(|f| pooled_pixel_features(f, FID_GRID)).collect();
        rows.push(Row::ok("fid", fid(&fb, &fa)?, n, &format!("pooled-pixels-{FID_GRID}x{FID_GRID}")));
    } else {
        rows.push(Row::skipped("fid", "needs at least two frames"));
    }
    match &providers.identity {
        Some(p) => bail!("unknown identity provider {:?}; none are built in", p.provider),
        None => rows.push(Row::skipped("isim", "no provider")),
    }
    match &providers.pose {
        Some(p) => rows.push(pose_row(p, &results, &reference)?),
        None => rows.push(Row::skipped("psim", "no provider")),
    }
    match &providers.expression {
        Some(p) => bail!("unknown expression provider {:?}; none are built in", p.provider),
        None => rows.push(Row::skipped("ed", "no provider")),
    }

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let path = args.out.join("report.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["metric", "value", "samples", "provider", "status"])?;
    for r in &rows {
        let value = r.value.map(|v| format!("{v:?}")).unwrap_or_default();
        w.write_record([r.metric, &value, &r.samples.to_string(), &r.provider, &r.status])?;
        println!("{:<5} {:>12} {}", r.metric, value, r.status);
        if let Some(v) = r.value {
            manifest.note(r.metric, format!("{v:?}"));
        }
    }
    w.flush()?;
    manifest.output(&args.out, &path);
    manifest.config.insert("fid_features".into(), format!("pooled-pixels-{FID_GRID}x{FID_GRID}"));
    let m = manifest.write(&args.out)?;
    println!("report {}", path.display());
    println!("manifest {}", m.display());
    Ok(())
}
