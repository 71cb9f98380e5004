use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use reenact_core::trainer::{
    load_checkpoint, load_ldnet, save_checkpoint, stage1_reconstruction_error, LossRecord, Profile, StageKind,
    TrainConfig, TrainData, Trainer,
};

use crate::data::{load_train_data, synthetic_train_data};
use crate::manifest::RunManifest;

/// Train one stage: `ldnet1`, then `ldnet2 --init <stage-1 checkpoint>`, and `fdgan`.
#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    stage: StageKind,
    #[arg(long, default_value = "toy")]
    profile: Profile,
    /// Flat `key = value` TOML file applied over the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set iterations=500`. Repeatable; wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Stage-1 checkpoint, required for `ldnet2`.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Continue a run from its checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory written by `synth-data`; without it a default
    /// synthetic dataset is generated from the seed.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Resolve the configuration and write the manifest without training.
    #[arg(long)]
    dry_run: bool,
}

/// Flattens nested tables into dotted keys; arrays become comma lists.
pub fn flatten_toml(table: &toml::Table, prefix: &str, out: &mut Vec<(String, String)>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let scalar = |v: &toml::Value| -> Result<String> {
            Ok(match v {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => format!("{f:?}"),
                toml::Value::Boolean(b) => b.to_string(),
                other => bail!("unsupported value for {key}: {other}"),
            })
        };
        match v {
            toml::Value::Table(t) => flatten_toml(t, &key, out)?,
            toml::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
                out.push((key, parts.join(",")));
            }
            other => out.push((key.clone(), scalar(other)?)),
        }
    }
    Ok(())
}

fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Profile defaults, then the file, then `--seed`, then `--set`.
fn resolve(args: &TrainArgs) -> Result<TrainConfig> {
    let mut c = TrainConfig::profile(args.stage, args.profile);
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
        let mut flat = Vec::new();
        flatten_toml(&table, "", &mut flat)?;
        for (k, v) in flat {
            c.set(&k, &v).with_context(|| format!("in {}", path.display()))?;
        }
    }
    if let Some(seed) = args.seed {
        c.seed = seed;
    }
    for o in &args.overrides {
        let (k, v) = parse_override(o)?;
        c.set(&k, &v)?;
    }
    if c.stage != args.stage {
        bail!("configuration names stage {} but --stage is {}", c.stage, args.stage);
    }
    c.validate()?;
    Ok(c)
}

const RESUMABLE_KEYS: [&str; 3] = ["iterations", "checkpoint_every", "log_every"];

fn write_losses(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["iteration", "loss_name", "value"])?;
    for r in history {
        w.write_record([r.iteration.to_string(), r.name.clone(), format!("{:?}", r.value)])?;
    }
    w.flush()?;
    Ok(())
}

fn running_summary(t: &Trainer) -> String {
    let mut s = String::new();
    for (k, v) in &t.running {
        let _ = write!(s, " {k}={v:.5}");
    }
    s
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::start("train", None);
    let mut trainer_opt = None;
    let config = match &args.resume {
        Some(path) => {
            let mut t = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            if t.config.stage != args.stage {
                bail!("{} holds a {} run, not {}", path.display(), t.config.stage, args.stage);
            }
            for o in &args.overrides {
                let (k, v) = parse_override(o)?;
                if !RESUMABLE_KEYS.contains(&k.as_str()) {
                    bail!("{k} cannot change when resuming; only {} can", RESUMABLE_KEYS.join(", "));
                }
                t.config.set(&k, &v)?;
            }
            t.config.validate()?;
            manifest.input("resume", path);
            let c = t.config.clone();
            trainer_opt = Some(t);
            c
        }
        None => {
            if args.stage == StageKind::Ldnet2 && args.init.is_none() {
                bail!("missing prerequisite: stage ldnet2 needs a stage-1 checkpoint; pass --init <ldnet1 checkpoint.safetensors>");
            }
            resolve(&args)?
        }
    };
    manifest.seed = Some(config.seed);
    manifest.config = config.to_flat();
    if let Some(p) = &args.config {
        manifest.input("config", p);
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    if args.dry_run {
        manifest.note("dry_run", true);
        let m = manifest.write(&args.out)?;
        println!("resolved configuration written to {}", m.display());
        return Ok(());
    }

    let data = match &args.data {
        Some(dir) => {
            manifest.input("data", dir);
            load_train_data(dir, config.stage, config.fdgan.image_size)?
        }
        None => {
            manifest.input("data", format!("synthetic(seed={})", config.seed));
            synthetic_train_data(config.stage, config.seed, config.fdgan.image_size)?
        }
    };

    let mut trainer = match trainer_opt {
        Some(t) => t,
        None => {
            let init = match (&args.init, config.stage) {
                (Some(path), StageKind::Ldnet2) => {
                    manifest.input("init", path);
                    Some(load_ldnet(path, None).with_context(|| format!("loading {}", path.display()))?)
                }
                (Some(_), _) => bail!("--init only applies to stage ldnet2"),
                (None, _) => None,
            };
            Trainer::new(config.clone(), &data, init.as_ref())?
        }
    };

    let ckpt = args.out.join("checkpoint.safetensors");
    let losses = args.out.join("losses.csv");
    let periodic = trainer.config.checkpoint_every < trainer.config.iterations;
    let ckpt_dir = args.out.join("checkpoints");
    let t0 = Instant::now();
    let out = args.out.clone();
    let mut saved = false;
    trainer.run(&data, |t| {
        saved = true;
        if periodic {
            std::fs::create_dir_all(&ckpt_dir)?;
            save_checkpoint(t, ckpt_dir.join(format!("iter_{:08}.safetensors", t.iteration)))?;
        }
        save_checkpoint(t, &ckpt)?;
        write_losses(&losses, &t.history).map_err(|e| reenact_core::Error::Io(std::io::Error::other(e)))?;
        println!("iteration {}{}", t.iteration, running_summary(t));
        Ok(())
    })?;
    if !saved {
        save_checkpoint(&trainer, &ckpt)?;
        write_losses(&losses, &trainer.history)?;
    }
    manifest.output(&out, &ckpt);
    manifest.output(&out, &losses);
    if periodic {
        manifest.output(&out, &ckpt_dir);
    }
    manifest.note("iterations", trainer.iteration);
    manifest.note("seconds", format!("{:.3}", t0.elapsed().as_secs_f64()));
    for (k, v) in &trainer.running {
        manifest.note(&format!("running.{k}"), format!("{v:?}"));
    }
    if let (StageKind::Ldnet1, TrainData::Landmarks(d), Some(p)) = (trainer.config.stage, &data, trainer.ldnet()) {
        let e = stage1_reconstruction_error(p, d)?;
        manifest.note("reconstruction_error", format!("{e:?}"));
        println!("stage-1 reconstruction error {e:.6}");
    }
    let m = manifest.write(&out)?;
    println!("checkpoint {}", ckpt.display());
    println!("manifest {}", m.display());
    Ok(())
}
