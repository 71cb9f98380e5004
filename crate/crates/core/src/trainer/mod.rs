//! Alternating critic/generator optimization for the three training stages.

mod checkpoint;
mod config;

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reenact_tensor::optim::{Adam, Optimizer, RmsProp};
use reenact_tensor::{Array, Binding, Float, Graph, ParamId, ParamStore};

pub use checkpoint::{load_checkpoint, load_fdgan, load_ldnet, read_info, save_checkpoint, CheckpointInfo};
pub use config::{FdGanArch, LdNetArch, OptimizerKind, Profile, StageKind, TrainConfig};

use crate::error::{Error, Result};
use crate::fdgan::{self, FdGanBatch, FdGanParams, FdGanWeights};
use crate::frame::PortraitFrame;
use crate::landmarks::{rasterize, LandmarkImage, LandmarkSet};
use crate::ldnet::{self, LdNetParams, Stage, Stage1Batch, Stage1Weights, Stage2Batch, Stage2Weights};
use crate::losses::LossBreakdown;
use crate::synth::LandmarkDataset;

/// Portraits with their landmarks and drawings, grouped by subject.
#[derive(Clone, Debug)]
pub struct PortraitDataset {
    pub frames: Vec<PortraitFrame>,
    pub landmarks: Vec<LandmarkSet>,
    pub rasters: Vec<LandmarkImage>,
    index: LandmarkDataset,
}

impl PortraitDataset {
    /// Every frame needs a subject id (taken from the landmarks) and must
    /// have the given size.
    pub fn new(items: Vec<(PortraitFrame, LandmarkSet)>, size: usize) -> Result<Self> {
        let mut frames = Vec::with_capacity(items.len());
        let mut landmarks = Vec::with_capacity(items.len());
        let mut rasters = Vec::with_capacity(items.len());
        for (f, l) in items {
            if f.size != size {
                return Err(Error::Shape(format!("frame is {}x{}, expected {size}x{size}", f.size, f.size)));
            }
            if let (Some(a), Some(b)) = (f.subject_id, l.subject_id) {
                if a != b {
                    return Err(Error::Precondition("frame and landmarks name different subjects".into()));
                }
            }
            rasters.push(rasterize(&l, size)?);
            frames.push(f);
            landmarks.push(l);
        }
        let index = LandmarkDataset::new(landmarks.clone())?;
        Ok(PortraitDataset {
            frames,
            landmarks,
            rasters,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn index(&self) -> &LandmarkDataset {
        &self.index
    }
}

pub enum TrainData {
    Landmarks(LandmarkDataset),
    Portraits(PortraitDataset),
}

impl TrainData {
    fn landmarks(&self) -> Result<&LandmarkDataset> {
        match self {
            TrainData::Landmarks(d) => Ok(d),
            TrainData::Portraits(_) => Err(Error::Precondition("LD-Net training needs a landmark dataset".into())),
        }
    }

    fn portraits(&self) -> Result<&PortraitDataset> {
        match self {
            TrainData::Portraits(d) => Ok(d),
            TrainData::Landmarks(_) => {
                Err(Error::MissingPrerequisite("FD-GAN training needs an image dataset with landmarks".into()))
            }
        }
    }

    fn index(&self) -> &LandmarkDataset {
        match self {
            TrainData::Landmarks(d) => d,
            TrainData::Portraits(d) => &d.index,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Model {
    LdNet(LdNetParams),
    FdGan(FdGanParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub name: String,
    pub value: f64,
}

type Optimizers<T> = BTreeMap<String, Box<dyn Optimizer<T>>>;

/// Complete state of one training run.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    opt64: Optimizers<f64>,
    opt32: Optimizers<f32>,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
    pub history: Vec<LossRecord>,
    pub running: BTreeMap<String, f64>,
}

const RUNNING_DECAY: f64 = 0.99;

fn groups(stage: StageKind) -> &'static [&'static str] {
    match stage {
        StageKind::Ldnet1 => &["cls", "gen"],
        StageKind::Ldnet2 | StageKind::Fdgan => &["cls", "dis", "gen"],
    }
}

fn make_optimizers<T: Float>(config: &TrainConfig) -> Optimizers<T> {
    groups(config.stage)
        .iter()
        .map(|g| {
            let o: Box<dyn Optimizer<T>> = match config.optimizer {
                OptimizerKind::Adam => Box::new(Adam::new(config.learning_rate)),
                OptimizerKind::Rmsprop => Box::new(RmsProp::new(config.learning_rate)),
            };
            (g.to_string(), o)
        })
        .collect()
}

fn check_size(config: &TrainConfig, data: &TrainData) -> Result<()> {
    let n = data.index().len();
    if n < config.batch_size {
        return Err(Error::InsufficientData(format!(
            "dataset has {n} frames, fewer than batch_size {}",
            config.batch_size
        )));
    }
    Ok(())
}

impl Trainer {
    /// Fresh run. `init` must hold stage-1 parameters for `ldnet2`.
    pub fn new(config: TrainConfig, data: &TrainData, init: Option<&LdNetParams>) -> Result<Self> {
        config.validate()?;
        if config.stage == StageKind::Ldnet2 && init.is_none() {
            return Err(Error::MissingPrerequisite("stage-2 training needs a stage-1 checkpoint (--init)".into()));
        }
        check_size(&config, data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = data.index().num_subjects();
        let model = match config.stage {
            StageKind::Ldnet1 => {
                data.landmarks()?;
                Model::LdNet(LdNetParams::new(config.ldnet.network(k), Stage::One, &mut rng)?)
            }
            StageKind::Ldnet2 => {
                data.landmarks()?;
                let s1 = init.expect("checked above");
                if s1.stage != Stage::One {
                    return Err(Error::MissingPrerequisite("--init must be a stage-1 checkpoint".into()));
                }
                if s1.config.num_identities != k {
                    return Err(Error::Precondition(format!(
                        "stage-1 classifier has {} identities, dataset has {k}",
                        s1.config.num_identities
                    )));
                }
                Model::LdNet(LdNetParams::stage2_from(s1, &mut rng)?)
            }
            StageKind::Fdgan => {
                data.portraits()?;
                Model::FdGan(FdGanParams::new(config.fdgan.network(k), &mut rng)?)
            }
        };
        Ok(Self::from_parts(config, model, rng))
    }

    fn from_parts(config: TrainConfig, model: Model, rng: ChaCha8Rng) -> Self {
        Trainer {
            opt64: make_optimizers(&config),
            opt32: make_optimizers(&config),
            config,
            model,
            rng,
            iteration: 0,
            history: Vec::new(),
            running: BTreeMap::new(),
        }
    }

    pub fn ldnet(&self) -> Option<&LdNetParams> {
        match &self.model {
            Model::LdNet(p) => Some(p),
            Model::FdGan(_) => None,
        }
    }

    pub fn fdgan(&self) -> Option<&FdGanParams> {
        match &self.model {
            Model::FdGan(p) => Some(p),
            Model::LdNet(_) => None,
        }
    }

    /// One critic update followed by one generator update.
    pub fn step(&mut self, data: &TrainData) -> Result<LossBreakdown> {
        let bs = self.config.batch_size;
        let losses = match (&mut self.model, self.config.stage) {
            (Model::LdNet(p), StageKind::Ldnet1) => {
                let batch = sample_stage1(data.landmarks()?, bs, &mut self.rng)?;
                stage1_step(p, &mut self.opt64, &batch)?
            }
            (Model::LdNet(p), StageKind::Ldnet2) => {
                let batch = sample_stage2(data.landmarks()?, bs, &mut self.rng)?;
                stage2_step(p, &mut self.opt64, &batch)?
            }
            (Model::FdGan(p), StageKind::Fdgan) => {
                let batch = sample_fdgan(data.portraits()?, bs, &mut self.rng)?;
                fdgan_step(p, &mut self.opt32, &batch)?
            }
            _ => return Err(Error::Precondition("model does not match the configured stage".into())),
        };
        self.iteration += 1;
        for (name, v) in losses.entries() {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    name: name.to_string(),
                    iteration: self.iteration,
                });
            }
            let r = self.running.entry(name.to_string()).or_insert(v);
            *r = RUNNING_DECAY * *r + (1.0 - RUNNING_DECAY) * v;
            if self.iteration % self.config.log_every == 0 {
                self.history.push(LossRecord {
                    iteration: self.iteration,
                    name: name.to_string(),
                    value: v,
                });
            }
        }
        Ok(losses)
    }

    /// Steps until `config.iterations`, calling `on_checkpoint` every
    /// `checkpoint_every` iterations and at the end.
    pub fn run(&mut self, data: &TrainData, mut on_checkpoint: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        check_size(&self.config, data)?;
        while self.iteration < self.config.iterations {
            self.step(data)?;
            if self.iteration % self.config.checkpoint_every == 0 || self.iteration == self.config.iterations {
                on_checkpoint(self)?;
            }
        }
        Ok(())
    }

    /// Steps until `iteration` reaches `until` (capped at the configured
    /// count) without checkpointing.
    pub fn run_until(&mut self, data: &TrainData, until: u64) -> Result<()> {
        check_size(&self.config, data)?;
        while self.iteration < until.min(self.config.iterations) {
            self.step(data)?;
        }
        Ok(())
    }
}

fn pick<R: Rng + ?Sized>(items: &[usize], rng: &mut R) -> usize {
    items[rng.random_range(0..items.len())]
}

fn pick_other<R: Rng + ?Sized>(n: usize, not: usize, rng: &mut R) -> usize {
    let mut v = rng.random_range(0..n - 1);
    if v >= not {
        v += 1;
    }
    v
}

fn pick_two<R: Rng + ?Sized>(items: &[usize], rng: &mut R) -> (usize, usize) {
    if items.len() < 2 {
        return (items[0], items[0]);
    }
    let a = rng.random_range(0..items.len());
    (items[a], items[pick_other(items.len(), a, rng)])
}

fn rows(data: &LandmarkDataset, idx: &[usize]) -> Array2<f64> {
    let refs: Vec<&LandmarkSet> = idx.iter().map(|&i| &data.frames()[i]).collect();
    ldnet::stack_landmarks(&refs).expect("dataset frames are normalized")
}

fn subjects(data: &LandmarkDataset) -> Result<Vec<u32>> {
    let s: Vec<u32> = data.subject_ids().collect();
    if s.len() < 2 {
        return Err(Error::InsufficientData("need at least two subjects".into()));
    }
    Ok(s)
}

/// Per sample: subject `S`, one of its frames, and a different subject `T`.
pub fn sample_stage1<R: Rng + ?Sized>(data: &LandmarkDataset, bs: usize, rng: &mut R) -> Result<Stage1Batch> {
    let subj = subjects(data)?;
    let (mut idx, mut same, mut cross) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..bs {
        let s = rng.random_range(0..subj.len());
        let t = pick_other(subj.len(), s, rng);
        idx.push(pick(data.frames_of(subj[s]), rng));
        same.push(data.label_of(subj[s]).unwrap());
        cross.push(data.label_of(subj[t]).unwrap());
    }
    Stage1Batch::new(rows(data, &idx), same, cross)
}

/// Per sample: two frames of subject `S` and one frame of a different
/// subject `T`.
pub fn sample_stage2<R: Rng + ?Sized>(data: &LandmarkDataset, bs: usize, rng: &mut R) -> Result<Stage2Batch> {
    let subj = subjects(data)?;
    let (mut i1, mut i2, mut it, mut labels) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..bs {
        let s = rng.random_range(0..subj.len());
        let t = pick_other(subj.len(), s, rng);
        let (a, b) = pick_two(data.frames_of(subj[s]), rng);
        i1.push(a);
        i2.push(b);
        it.push(pick(data.frames_of(subj[t]), rng));
        labels.push(data.label_of(subj[t]).unwrap());
    }
    Stage2Batch::new(rows(data, &i1), rows(data, &i2), rows(data, &it), labels)
}

fn stack(parts: Vec<ArrayD<f32>>) -> ArrayD<f32> {
    let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
    ndarray::concatenate(Axis(0), &views).unwrap()
}

/// Per sample: two frames of one subject.
pub fn sample_fdgan<R: Rng + ?Sized>(data: &PortraitDataset, bs: usize, rng: &mut R) -> Result<FdGanBatch> {
    let subj: Vec<u32> = data.index.subject_ids().collect();
    let (mut xa, mut la, mut xb, mut lb, mut labels) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..bs {
        let s = subj[rng.random_range(0..subj.len())];
        let (a, b) = pick_two(data.index.frames_of(s), rng);
        xa.push(data.frames[a].to_tensor());
        la.push(data.rasters[a].to_tensor());
        xb.push(data.frames[b].to_tensor());
        lb.push(data.rasters[b].to_tensor());
        labels.push(data.index.label_of(s).unwrap());
    }
    Ok(FdGanBatch {
        x_t: stack(xa),
        l_t: stack(la),
        x_t2: stack(xb),
        l_t2: stack(lb),
        labels,
    })
}

fn has_prefix(name: &str, prefixes: &[&str]) -> bool {
    prefixes.iter().any(|p| name.starts_with(p))
}

/// Routes gradients to the optimizer of the group named by each
/// parameter's prefix.
fn apply<T: Float>(
    store: &mut ParamStore<T>,
    opts: &mut Optimizers<T>,
    grads: Vec<(ParamId, Array<T>)>,
    route: &[(&str, &[&str])],
) {
    for (group, prefixes) in route {
        let mine: Vec<_> = grads
            .iter()
            .filter(|(id, _)| has_prefix(store.name(*id), prefixes))
            .cloned()
            .collect();
        if !mine.is_empty() {
            opts.get_mut(*group).expect("optimizer group").step(store, &mine);
        }
    }
}

fn stage1_step(p: &mut LdNetParams, opts: &mut Optimizers<f64>, batch: &Stage1Batch) -> Result<LossBreakdown> {
    let w = Stage1Weights::default();
    let total_c = {
        let g = Graph::new();
        let b = Binding::new(&g, &p.store, |n| n.starts_with("cls."));
        let t = ldnet::stage1_terms(&b, p, batch, w)?;
        let grads = b.gradients(g.backward(t.total_c));
        let v = t.total_c.item();
        apply(&mut p.store, opts, grads, &[("cls", &["cls."])]);
        v
    };
    let g = Graph::new();
    let gen = ["ep.", "ni.", "gen."];
    let b = Binding::new(&g, &p.store, |n| has_prefix(n, &gen));
    let t = ldnet::stage1_terms(&b, p, batch, w)?;
    let mut out = t.breakdown();
    out.total_c = Some(total_c);
    let grads = b.gradients(g.backward(t.total_g));
    drop(b);
    apply(&mut p.store, opts, grads, &[("gen", &gen)]);
    Ok(out)
}

fn stage2_step(p: &mut LdNetParams, opts: &mut Optimizers<f64>, batch: &Stage2Batch) -> Result<LossBreakdown> {
    let w = Stage2Weights::default();
    let critics = ["dis.", "cls."];
    let (total_d, total_c) = {
        let g = Graph::new();
        let b = Binding::new(&g, &p.store, |n| has_prefix(n, &critics));
        let t = ldnet::stage2_terms(&b, p, batch, w)?;
        let grads = b.gradients(g.backward(t.total_d.add(t.total_c)));
        let v = (t.total_d.item(), t.total_c.item());
        apply(&mut p.store, opts, grads, &[("dis", &["dis."]), ("cls", &["cls."])]);
        v
    };
    let g = Graph::new();
    let gen = ["ei.", "gen."];
    let b = Binding::new(&g, &p.store, |n| has_prefix(n, &gen));
    let t = ldnet::stage2_terms(&b, p, batch, w)?;
    let mut out = t.breakdown();
    out.total_d = Some(total_d);
    out.total_c = Some(total_c);
    let grads = b.gradients(g.backward(t.total_g));
    drop(b);
    apply(&mut p.store, opts, grads, &[("gen", &gen)]);
    Ok(out)
}

fn fdgan_step(p: &mut FdGanParams, opts: &mut Optimizers<f32>, batch: &FdGanBatch) -> Result<LossBreakdown> {
    let w = FdGanWeights::default();
    let critics = ["dis.", "cls."];
    let (total_d, total_c) = {
        let g = Graph::new();
        let b = Binding::new(&g, &p.store, |n| has_prefix(n, &critics));
        let t = fdgan::fdgan_terms(&b, p, batch, w)?;
        let grads = b.gradients(g.backward(t.total_d.add(t.total_c)));
        let v = (t.total_d.item() as f64, t.total_c.item() as f64);
        apply(&mut p.store, opts, grads, &[("dis", &["dis."]), ("cls", &["cls."])]);
        v
    };
    let g = Graph::new();
    let gen = ["ext.", "tr.", "dict"];
    let b = Binding::new(&g, &p.store, |n| has_prefix(n, &gen));
    let t = fdgan::fdgan_terms(&b, p, batch, w)?;
    let mut out = t.breakdown();
    out.total_d = Some(total_d);
    out.total_c = Some(total_c);
    let grads = b.gradients(g.backward(t.total_t));
    drop(b);
    apply(&mut p.store, opts, grads, &[("gen", &gen)]);
    Ok(out)
}

/// Mean per-point squared reconstruction error of `G(E_P(l), N_I(k))` over a
/// whole landmark dataset, for stage-1 parameters.
pub fn stage1_reconstruction_error(p: &LdNetParams, data: &LandmarkDataset) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let labels: Vec<usize> = data
        .frames()
        .iter()
        .map(|f| data.label_of(f.subject_id.unwrap()).unwrap())
        .collect();
    let k = p.config.num_identities;
    let batch = Stage1Batch::new(rows(data, &idx), labels.clone(), labels.iter().map(|l| (l + 1) % k).collect())?;
    Ok(ldnet::stage1_losses(&batch, p)?.recon.unwrap())
}

/// Per-pixel MSE of `translate(extract(x_a, l_a), l_b)` against `x_b` over
/// every ordered pair of frames of each subject.
pub fn fdgan_pair_mse(p: &FdGanParams, data: &PortraitDataset) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in data.index.subject_ids() {
        let frames = data.index.frames_of(s);
        for &a in frames {
            let dicts = fdgan::extract(&data.frames[a], &data.rasters[a], p)?;
            for &b in frames {
                let out = fdgan::translate(&dicts, &data.rasters[b], p)?;
                total += out.mse(&data.frames[b])?;
                n += 1;
            }
        }
    }
    Ok(total / n.max(1) as f64)
}
