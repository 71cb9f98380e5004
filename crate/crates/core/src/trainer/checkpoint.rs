//! Checkpoints as safetensors files: parameters and optimizer moments as
//! tensors, configuration and run state as JSON metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use reenact_tensor::optim::OptimizerState;
use reenact_tensor::{Array, Float, ParamStore};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use super::{Model, Optimizers, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::fdgan::{FdGanConfig, FdGanParams};
use crate::ldnet::{LdNetConfig, LdNetParams, Stage};

const FORMAT: &str = "reenact-checkpoint";
const VERSION: &str = "1";

trait Elem: Float {
    const DTYPE: Dtype;
    const WIDTH: usize;
    fn put(self, out: &mut Vec<u8>);
    fn take(b: &[u8]) -> Self;
}

impl Elem for f32 {
    const DTYPE: Dtype = Dtype::F32;
    const WIDTH: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(b: &[u8]) -> Self {
        f32::from_le_bytes(b.try_into().unwrap())
    }
}

impl Elem for f64 {
    const DTYPE: Dtype = Dtype::F64;
    const WIDTH: usize = 8;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(b: &[u8]) -> Self {
        f64::from_le_bytes(b.try_into().unwrap())
    }
}

fn bytes<T: Elem>(a: &Array<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(a.len() * T::WIDTH);
    for &v in a.iter() {
        v.put(&mut out);
    }
    out
}

fn array<T: Elem>(name: &str, view: &TensorView<'_>) -> Result<Array<T>> {
    if view.dtype() != T::DTYPE {
        return Err(Error::Checkpoint(format!("tensor {name} has dtype {:?}, expected {:?}", view.dtype(), T::DTYPE)));
    }
    let values: Vec<T> = view.data().chunks_exact(T::WIDTH).map(T::take).collect();
    Array::from_shape_vec(view.shape().to_vec(), values)
        .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RunState {
    iteration: u64,
    rng: ChaCha8Rng,
    running: BTreeMap<String, f64>,
    optimizer_steps: BTreeMap<String, u64>,
}

/// Header fields readable without loading tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointInfo {
    pub model: String,
    pub stage: String,
    pub iteration: u64,
    pub train: Option<TrainConfig>,
}

struct Writer {
    tensors: Vec<(String, Vec<usize>, Dtype, Vec<u8>)>,
}

impl Writer {
    fn push<T: Elem>(&mut self, name: String, a: &Array<T>) {
        self.tensors.push((name, a.shape().to_vec(), T::DTYPE, bytes(a)));
    }

    fn params<T: Elem>(&mut self, store: &ParamStore<T>) {
        for (name, a) in store.iter() {
            self.push(format!("param/{name}"), a);
        }
    }

    fn optimizers<T: Elem>(&mut self, store: &ParamStore<T>, opts: &Optimizers<T>, steps: &mut BTreeMap<String, u64>) {
        for (group, opt) in opts {
            let state = opt.export_state(store);
            steps.insert(group.clone(), state.step);
            for (slot, a) in &state.slots {
                self.push(format!("opt/{group}/{slot}"), a);
            }
        }
    }

    fn finish(self, meta: HashMap<String, String>, path: &Path) -> Result<()> {
        let views: Vec<(String, TensorView<'_>)> = self
            .tensors
            .iter()
            .map(|(n, shape, dt, data)| {
                TensorView::new(*dt, shape.clone(), data)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<_>>()?;
        let buf = safetensors::serialize(views, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

fn base_meta(model: &str, stage: &str) -> HashMap<String, String> {
    let mut m = HashMap::new();
    m.insert("format".into(), FORMAT.into());
    m.insert("version".into(), VERSION.into());
    m.insert("model".into(), model.into());
    m.insert("stage".into(), stage.into());
    m
}

/// Writes parameters, optimizer state, configuration and RNG state.
pub fn save_checkpoint(trainer: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    let mut w = Writer { tensors: Vec::new() };
    let mut steps = BTreeMap::new();
    let mut meta = match &trainer.model {
        Model::LdNet(p) => {
            w.params(&p.store);
            w.optimizers(&p.store, &trainer.opt64, &mut steps);
            let mut m = base_meta("ldnet", if p.stage == Stage::One { "ldnet1" } else { "ldnet2" });
            m.insert("network".into(), json(&p.config));
            m
        }
        Model::FdGan(p) => {
            w.params(&p.store);
            w.optimizers(&p.store, &trainer.opt32, &mut steps);
            let mut m = base_meta("fdgan", "fdgan");
            m.insert("network".into(), json(&p.config));
            m.insert("variant".into(), p.config.variant.to_string());
            m
        }
    };
    meta.insert("train".into(), json(&trainer.config));
    let names: Vec<&str> = match &trainer.model {
        Model::LdNet(p) => p.store.iter().map(|(n, _)| n).collect(),
        Model::FdGan(p) => p.store.iter().map(|(n, _)| n).collect(),
    };
    meta.insert("params".into(), json(&names));
    let state = RunState {
        iteration: trainer.iteration,
        rng: trainer.rng.clone(),
        running: trainer.running.clone(),
        optimizer_steps: steps,
    };
    meta.insert("state".into(), json(&state));
    w.finish(meta, path.as_ref())
}

struct Loaded {
    bytes: Vec<u8>,
    meta: HashMap<String, String>,
}

impl Loaded {
    fn open(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let (_, md) = SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let meta = md.metadata().clone().unwrap_or_default();
        if meta.get("format").map(String::as_str) != Some(FORMAT) {
            return Err(Error::Checkpoint(format!("{} is not a reenact checkpoint", path.display())));
        }
        if meta.get("version").map(String::as_str) != Some(VERSION) {
            return Err(Error::Checkpoint("unsupported checkpoint version".into()));
        }
        Ok(Loaded { bytes, meta })
    }

    fn field(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint metadata lacks {key}")))
    }

    fn parse<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        serde_json::from_str(self.field(key)?).map_err(|e| Error::Checkpoint(format!("metadata {key}: {e}")))
    }

    fn tensors(&self) -> Result<SafeTensors<'_>> {
        SafeTensors::deserialize(&self.bytes).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    fn store<T: Elem>(&self) -> Result<ParamStore<T>> {
        let st = self.tensors()?;
        let names: Vec<String> = self.parse("params")?;
        let mut store = ParamStore::new();
        for p in names {
            let name = format!("param/{p}");
            let view = st.tensor(&name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            store.add(p, array::<T>(&name, &view)?);
        }
        Ok(store)
    }

    fn optimizer_state<T: Elem>(&self, group: &str, step: u64) -> Result<OptimizerState<T>> {
        let st = self.tensors()?;
        let prefix = format!("opt/{group}/");
        let mut slots = Vec::new();
        for (name, view) in st.tensors() {
            if let Some(key) = name.strip_prefix(&prefix) {
                slots.push((key.to_string(), array::<T>(&name, &view)?));
            }
        }
        slots.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(OptimizerState { step, slots })
    }

    fn ldnet(&self, expect: Option<&LdNetConfig>) -> Result<LdNetParams> {
        if self.field("model")? != "ldnet" {
            return Err(Error::Checkpoint("checkpoint does not hold LD-Net parameters".into()));
        }
        let stage = match self.field("stage")? {
            "ldnet1" => Stage::One,
            "ldnet2" => Stage::Two,
            other => return Err(Error::Checkpoint(format!("unknown LD-Net stage {other}"))),
        };
        let config: LdNetConfig = self.parse("network")?;
        if let Some(e) = expect {
            if *e != config {
                return Err(Error::Checkpoint(format!(
                    "architecture mismatch: checkpoint has {config:?}, expected {e:?}"
                )));
            }
        }
        LdNetParams::from_store(config, stage, self.store()?)
    }

    fn fdgan(&self, expect: Option<&FdGanConfig>) -> Result<FdGanParams> {
        if self.field("model")? != "fdgan" {
            return Err(Error::Checkpoint("checkpoint does not hold FD-GAN parameters".into()));
        }
        let config: FdGanConfig = self.parse("network")?;
        if let Some(e) = expect {
            if *e != config {
                return Err(Error::Checkpoint(format!(
                    "architecture mismatch: checkpoint has {config:?}, expected {e:?}"
                )));
            }
        }
        FdGanParams::from_store(config, self.store()?)
    }
}

/// Reads LD-Net parameters. With `expect`, the stored architecture must
/// match it exactly.
pub fn load_ldnet(path: impl AsRef<Path>, expect: Option<&LdNetConfig>) -> Result<LdNetParams> {
    Loaded::open(path.as_ref())?.ldnet(expect)
}

pub fn load_fdgan(path: impl AsRef<Path>, expect: Option<&FdGanConfig>) -> Result<FdGanParams> {
    Loaded::open(path.as_ref())?.fdgan(expect)
}

pub fn read_info(path: impl AsRef<Path>) -> Result<CheckpointInfo> {
    let l = Loaded::open(path.as_ref())?;
    let state: Option<RunState> = l.parse("state").ok();
    Ok(CheckpointInfo {
        model: l.field("model")?.to_string(),
        stage: l.field("stage")?.to_string(),
        iteration: state.map_or(0, |s| s.iteration),
        train: l.parse("train").ok(),
    })
}

fn restore<T: Elem>(l: &Loaded, store: &ParamStore<T>, opts: &mut Optimizers<T>, steps: &BTreeMap<String, u64>) -> Result<()> {
    for (group, opt) in opts.iter_mut() {
        let state = l.optimizer_state::<T>(group, steps.get(group).copied().unwrap_or(0))?;
        opt.import_state(store, &state).map_err(Error::Checkpoint)?;
    }
    Ok(())
}

/// Restores a complete run, so that continuing it is equivalent to never
/// having stopped.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    let l = Loaded::open(path.as_ref())?;
    let config: TrainConfig = l.parse("train")?;
    let state: RunState = l.parse("state")?;
    let model = match l.field("model")? {
        "ldnet" => Model::LdNet(l.ldnet(None)?),
        "fdgan" => Model::FdGan(l.fdgan(None)?),
        other => return Err(Error::Checkpoint(format!("unknown model {other}"))),
    };
    let mut t = Trainer::from_parts(config, model, state.rng);
    t.iteration = state.iteration;
    t.running = state.running;
    match &t.model {
        Model::LdNet(p) => restore(&l, &p.store, &mut t.opt64, &state.optimizer_steps)?,
        Model::FdGan(p) => restore(&l, &p.store, &mut t.opt32, &state.optimizer_steps)?,
    }
    Ok(t)
}
