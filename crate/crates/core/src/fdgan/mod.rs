//! Feature-dictionary portrait generator.
//!
//! An extractor U-Net reads the target portrait and its landmark drawing and,
//! at every up-convolution level, writes its features into a dictionary.
//! A translator U-Net driven only by a landmark drawing reads those
//! dictionaries back at the matching levels and adds the result to its own
//! features. Level 0 is the highest resolution.

pub mod dictionary;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use reenact_tensor::{Binding, Graph, ParamStore, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::PortraitFrame;
use crate::landmarks::LandmarkImage;
use crate::losses::{self, LossBreakdown};
use crate::nn::{Builder, Conv, Linear, UpConv};

pub use dictionary::{dictionary_read, dictionary_write, FeatureDictionary};

const NORM_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Multi-row dictionaries with soft-attention write and read.
    Full,
    /// One row holding the mean write value, added back everywhere.
    Fd1,
    /// One mean row that predicts per-channel scale and shift.
    Adain,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Fd1 => "fd1",
            Variant::Adain => "adain",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "fd1" => Ok(Variant::Fd1),
            "adain" => Ok(Variant::Adain),
            other => Err(Error::UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdGanConfig {
    pub image_size: usize,
    /// Feature width per level, highest resolution first; also the value
    /// length of that level's dictionary.
    pub widths: Vec<usize>,
    /// Dictionary rows per level, highest resolution first.
    pub rows: Vec<usize>,
    pub tag_len: usize,
    pub num_identities: usize,
    pub variant: Variant,
    pub leaky_slope: f64,
}

impl FdGanConfig {
    pub fn paper(num_identities: usize) -> Self {
        FdGanConfig {
            image_size: 256,
            widths: vec![32, 64, 128, 256],
            rows: vec![512, 256, 128, 64],
            tag_len: 32,
            num_identities,
            variant: Variant::Full,
            leaky_slope: 0.2,
        }
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    /// Number of dictionary rows actually used at `level`.
    pub fn dictionary_rows(&self, level: usize) -> usize {
        match self.variant {
            Variant::Full => self.rows[level],
            Variant::Fd1 | Variant::Adain => 1,
        }
    }

    /// Side of the critic output map.
    pub fn patch_side(&self) -> usize {
        self.image_size >> self.levels()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.levels();
        if l == 0 || self.rows.len() != l {
            return Err(Error::Config("widths and rows must list the same, nonzero number of levels".into()));
        }
        if self.widths.iter().chain(&self.rows).any(|&v| v == 0) || self.tag_len == 0 {
            return Err(Error::Config("FD-GAN widths, rows and tag length must be positive".into()));
        }
        if self.image_size == 0 || self.image_size % (1 << l) != 0 {
            return Err(Error::Config(format!("image size must be a multiple of {}", 1 << l)));
        }
        if self.num_identities < 1 {
            return Err(Error::Config("FD-GAN classifier needs at least one identity".into()));
        }
        Ok(())
    }
}

impl Default for FdGanConfig {
    fn default() -> Self {
        FdGanConfig::paper(20)
    }
}

#[derive(Clone, Debug)]
struct Down {
    s2: Conv,
    flat: Conv,
}

#[derive(Clone, Debug)]
struct Up {
    flat: Conv,
    up: Option<UpConv>,
}

#[derive(Clone, Debug)]
struct Writer {
    key: Option<Conv>,
    value: Conv,
}

#[derive(Clone, Debug)]
enum Reader {
    Attend { key: Conv },
    Add,
    Adain { scale: Linear, shift: Linear },
}

#[derive(Clone, Debug)]
struct Critic {
    down: Vec<Down>,
    out: Conv,
}

#[derive(Clone, Debug)]
struct Nets {
    ext_down: Vec<Down>,
    ext_up: Vec<Option<Up>>,
    writers: Vec<Writer>,
    tr_down: Vec<Down>,
    tr_up: Vec<Up>,
    readers: Vec<Reader>,
    tr_out: UpConv,
    dis: Critic,
    cls: Critic,
}

/// Parameters with names prefixed `ext.`, `tr.`, `dict<i>.`, `dis.`, `cls.`.
#[derive(Clone, Debug)]
pub struct FdGanParams {
    pub config: FdGanConfig,
    pub store: ParamStore<f32>,
    nets: Nets,
}

fn down_levels<R: Rng>(
    b: &mut Builder<'_, f32, R>,
    name: &str,
    inp: usize,
    widths: &[usize],
    bias: bool,
    slope: f64,
) -> Result<Vec<Down>> {
    let mut prev = inp;
    let mut out = Vec::new();
    for (i, &w) in widths.iter().enumerate() {
        out.push(Down {
            s2: Conv::new(b, &format!("{name}.down{i}.s2"), prev, w, 4, 2, 1, bias, slope)?,
            flat: Conv::new(b, &format!("{name}.down{i}.flat"), w, w, 3, 1, 1, bias, slope)?,
        });
        prev = w;
    }
    Ok(out)
}

fn critic<R: Rng>(b: &mut Builder<'_, f32, R>, name: &str, c: &FdGanConfig, outputs: usize) -> Result<Critic> {
    let s = c.leaky_slope;
    Ok(Critic {
        down: down_levels(b, name, 3, &c.widths, true, s)?,
        out: Conv::new(b, &format!("{name}.out"), *c.widths.last().unwrap(), outputs, 1, 1, 0, true, 1.0)?,
    })
}

fn build_nets<R: Rng>(c: &FdGanConfig, b: &mut Builder<'_, f32, R>) -> Result<Nets> {
    let s = c.leaky_slope;
    let l = c.levels();
    let w = &c.widths;
    let up_level = |b: &mut Builder<'_, f32, R>, net: &str, i: usize| -> Result<Up> {
        let inp = if i + 1 == l { w[i] } else { 2 * w[i] };
        Ok(Up {
            flat: Conv::new(b, &format!("{net}.up{i}.flat"), inp, w[i], 3, 1, 1, false, s)?,
            up: if i > 0 {
                Some(UpConv::new(b, &format!("{net}.up{i}.up"), w[i], w[i - 1], false, s)?)
            } else {
                None
            },
        })
    };

    let ext_down = down_levels(b, "ext", 4, w, false, s)?;
    let mut ext_up = Vec::new();
    let mut writers = Vec::new();
    for i in 0..l {
        ext_up.push(if i > 0 { Some(up_level(b, "ext", i)?) } else { None });
        let key = match c.variant {
            Variant::Full => {
                b.normal(&format!("dict{i}.write_tags"), &[c.rows[i], c.tag_len], 1.0)?;
                b.normal(&format!("dict{i}.read_tags"), &[c.rows[i], c.tag_len], 1.0)?;
                Some(Conv::new(b, &format!("ext.write{i}.key"), w[i], c.tag_len, 1, 1, 0, true, 1.0)?)
            }
            _ => None,
        };
        writers.push(Writer {
            key,
            value: Conv::new(b, &format!("ext.write{i}.value"), w[i], w[i], 1, 1, 0, true, 1.0)?,
        });
    }

    let tr_down = down_levels(b, "tr", 1, w, false, s)?;
    let mut tr_up = Vec::new();
    let mut readers = Vec::new();
    for i in 0..l {
        tr_up.push(up_level(b, "tr", i)?);
        readers.push(match c.variant {
            Variant::Full => Reader::Attend {
                key: Conv::new(b, &format!("tr.read{i}.key"), w[i], c.tag_len, 1, 1, 0, true, 1.0)?,
            },
            Variant::Fd1 => Reader::Add,
            Variant::Adain => Reader::Adain {
                scale: Linear::new(b, &format!("tr.adain{i}.scale"), w[i], w[i], 1.0)?,
                shift: Linear::new(b, &format!("tr.adain{i}.shift"), w[i], w[i], 1.0)?,
            },
        });
    }
    let tr_out = UpConv::new(b, "tr.out", w[0], 3, true, 1.0)?;
    let dis = critic(b, "dis", c, 1)?;
    let cls = critic(b, "cls", c, c.num_identities)?;
    Ok(Nets {
        ext_down,
        ext_up,
        writers,
        tr_down,
        tr_up,
        readers,
        tr_out,
        dis,
        cls,
    })
}

impl FdGanParams {
    pub fn new<R: Rng>(config: FdGanConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let nets = build_nets(&config, &mut Builder::Init(&mut store, rng))?;
        Ok(FdGanParams { config, store, nets })
    }

    /// Wraps loaded arrays, checking every name and shape against `config`.
    pub fn from_store(config: FdGanConfig, store: ParamStore<f32>) -> Result<Self> {
        config.validate()?;
        let nets = build_nets::<rand_chacha::ChaCha8Rng>(&config, &mut Builder::Load(&store))?;
        let mut probe = ParamStore::new();
        build_nets(&config, &mut Builder::Init(&mut probe, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)))?;
        if probe.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, archive has {}",
                probe.len(),
                store.len()
            )));
        }
        Ok(FdGanParams { config, store, nets })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }
}

/// Deterministic stand-in generator used only to enumerate parameter names.
/// Converts `params` to another variant. Parameters the variants share are
/// copied; the rest are initialized from `rng`.
pub fn make_variant<R: Rng>(params: &FdGanParams, variant: Variant, rng: &mut R) -> Result<FdGanParams> {
    let config = FdGanConfig {
        variant,
        ..params.config.clone()
    };
    let mut out = FdGanParams::new(config, rng)?;
    for (name, value) in params.store.iter() {
        if let Some(id) = out.store.id(name) {
            out.store.set(id, value.clone());
        }
    }
    Ok(out)
}

fn block<'g>(x: Var<'g, f32>, slope: f32) -> Var<'g, f32> {
    x.instance_norm(NORM_EPS).leaky_relu(slope)
}

fn run_down<'g>(p: &Binding<'g, '_, f32>, levels: &[Down], mut x: Var<'g, f32>, norm: bool, slope: f32) -> Vec<Var<'g, f32>> {
    let act = |v: Var<'g, f32>| if norm { block(v, slope) } else { v.leaky_relu(slope) };
    let mut skips = Vec::with_capacity(levels.len());
    for d in levels {
        x = act(d.s2.forward(p, x));
        x = act(d.flat.forward(p, x));
        skips.push(x);
    }
    skips
}

/// `[B, C, H, W]` to `[B, H*W, C]`.
fn to_locations(x: Var<'_, f32>) -> Var<'_, f32> {
    let s = x.shape();
    x.reshape(&[s[0], s[1], s[2] * s[3]]).permute(&[0, 2, 1])
}

/// IN(h) scaled by `gamma [B, C]` and shifted by `beta [B, C]`.
pub fn adain_apply<'g>(h: Var<'g, f32>, gamma: Var<'g, f32>, beta: Var<'g, f32>) -> Var<'g, f32> {
    h.instance_norm(NORM_EPS).scale_shift_channels(gamma, beta)
}

fn check_image(t: &ArrayD<f32>, channels: usize, size: usize, what: &str) -> Result<()> {
    let s = t.shape();
    if s.len() != 4 || s[1] != channels || s[2] != size || s[3] != size {
        return Err(Error::Shape(format!(
            "{what}: expected [B, {channels}, {size}, {size}], got {s:?}"
        )));
    }
    Ok(())
}

/// Extractor pass; returns per-level stored values `[B, n, m_V]`.
pub fn extract_graph<'g>(p: &Binding<'g, '_, f32>, params: &FdGanParams, image: Var<'g, f32>, lm: Var<'g, f32>) -> Vec<Var<'g, f32>> {
    let n = &params.nets;
    let c = &params.config;
    let slope = c.leaky_slope as f32;
    let l = c.levels();
    let skips = run_down(p, &n.ext_down, Var::concat(&[image, lm], 1), true, slope);
    let mut h = skips[l - 1];
    let mut dicts = vec![None; l];
    for i in (0..l).rev() {
        let w = &n.writers[i];
        let values = to_locations(w.value.forward(p, h));
        dicts[i] = Some(match &w.key {
            Some(key) => {
                let tags = dictionary::bind_tags(p, &format!("dict{i}.write_tags")).expect("write tags");
                dictionary::write(tags, to_locations(key.forward(p, h)), values)
            }
            None => {
                let s = values.shape();
                values.mean_axis(1).reshape(&[s[0], 1, s[2]])
            }
        });
        if i == 0 {
            break;
        }
        if i + 1 < l {
            h = Var::concat(&[h, skips[i]], 1);
        }
        let up = n.ext_up[i].as_ref().expect("extractor up level");
        h = block(up.flat.forward(p, h), slope);
        h = block(up.up.as_ref().unwrap().forward(p, h), slope);
    }
    dicts.into_iter().map(Option::unwrap).collect()
}

/// Translator pass from stored values `[B, n, m_V]` per level; returns
/// images `[B, 3, S, S]` in (-1, 1).
pub fn translate_graph<'g>(p: &Binding<'g, '_, f32>, params: &FdGanParams, dicts: &[Var<'g, f32>], lm: Var<'g, f32>) -> Var<'g, f32> {
    let n = &params.nets;
    let c = &params.config;
    let slope = c.leaky_slope as f32;
    let l = c.levels();
    let g = p.graph();
    let skips = run_down(p, &n.tr_down, lm, true, slope);
    let mut h = skips[l - 1];
    for i in (0..l).rev() {
        let v = dicts[i];
        let vs = v.shape();
        h = match &n.readers[i] {
            Reader::Attend { key } => {
                let tags = dictionary::bind_tags(p, &format!("dict{i}.read_tags")).expect("read tags");
                let hs = h.shape();
                let y = dictionary::read(tags, v, to_locations(key.forward(p, h)));
                h.add(y.permute(&[0, 2, 1]).reshape(&hs))
            }
            Reader::Add => {
                let ones = g.constant(ArrayD::ones(IxDyn(&[vs[0], vs[2]])));
                h.scale_shift_channels(ones, v.reshape(&[vs[0], vs[2]]))
            }
            Reader::Adain { scale, shift } => {
                let code = v.reshape(&[vs[0], vs[2]]);
                adain_apply(h, scale.forward(p, code).add_scalar(1.0), shift.forward(p, code))
            }
        };
        if i + 1 < l {
            h = Var::concat(&[h, skips[i]], 1);
        }
        let up = &n.tr_up[i];
        h = block(up.flat.forward(p, h), slope);
        h = match &up.up {
            Some(u) => block(u.forward(p, h), slope),
            None => n.tr_out.forward(p, h).tanh(),
        };
    }
    h
}

fn critic_graph<'g>(p: &Binding<'g, '_, f32>, net: &Critic, x: Var<'g, f32>, slope: f32) -> Var<'g, f32> {
    let skips = run_down(p, &net.down, x, false, slope);
    net.out.forward(p, *skips.last().unwrap())
}

/// Patch discriminator map `[B, 1, h, w]`.
pub fn discriminator_graph<'g>(p: &Binding<'g, '_, f32>, params: &FdGanParams, x: Var<'g, f32>) -> Var<'g, f32> {
    critic_graph(p, &params.nets.dis, x, params.config.leaky_slope as f32)
}

/// Patch classifier logits `[B, K, h, w]`.
pub fn classifier_graph<'g>(p: &Binding<'g, '_, f32>, params: &FdGanParams, x: Var<'g, f32>) -> Var<'g, f32> {
    critic_graph(p, &params.nets.cls, x, params.config.leaky_slope as f32)
}

fn lower(v: Var<'_, f32>, sample: usize) -> Array2<f32> {
    let s = v.shape();
    let a = v.value();
    let a = a.as_standard_layout();
    Array2::from_shape_vec(
        (s[1], s[2]),
        a.as_slice().unwrap()[sample * s[1] * s[2]..(sample + 1) * s[1] * s[2]].to_vec(),
    )
    .unwrap()
}

/// Builds one dictionary per level from a target portrait and its landmark
/// drawing.
pub fn extract(x_t: &PortraitFrame, l_t: &LandmarkImage, params: &FdGanParams) -> Result<Vec<FeatureDictionary>> {
    let size = params.config.image_size;
    if x_t.size != size || l_t.size != size {
        return Err(Error::Shape(format!(
            "inputs are {}x{} and {}x{}, network expects {size}x{size}",
            x_t.size, x_t.size, l_t.size, l_t.size
        )));
    }
    let g = Graph::new();
    let p = Binding::frozen(&g, &params.store);
    let dicts = extract_graph(&p, params, g.constant(x_t.to_tensor()), g.constant(l_t.to_tensor()));
    Ok(dicts
        .into_iter()
        .enumerate()
        .map(|(i, v)| FeatureDictionary::from_store(&params.store, i, lower(v, 0), params.config.tag_len))
        .collect())
}

/// Renders a portrait for the driving landmark drawing from dictionaries
/// built by [`extract`].
pub fn translate(dictionaries: &[FeatureDictionary], l_drive: &LandmarkImage, params: &FdGanParams) -> Result<PortraitFrame> {
    let c = &params.config;
    if dictionaries.len() != c.levels() {
        return Err(Error::Shape(format!(
            "{} dictionaries given, network has {} levels",
            dictionaries.len(),
            c.levels()
        )));
    }
    if l_drive.size != c.image_size {
        return Err(Error::Shape(format!(
            "driving drawing is {}x{}, network expects {s}x{s}",
            l_drive.size,
            l_drive.size,
            s = c.image_size
        )));
    }
    for (i, d) in dictionaries.iter().enumerate() {
        let want = (c.dictionary_rows(i), c.widths[i]);
        if d.level_index != i || d.stored_values.dim() != want {
            return Err(Error::Shape(format!(
                "dictionary {i} holds {:?} values, level expects {want:?}",
                d.stored_values.dim()
            )));
        }
    }
    let g = Graph::new();
    let p = Binding::frozen(&g, &params.store);
    let dicts: Vec<_> = dictionaries
        .iter()
        .map(|d| {
            let (r, m) = d.stored_values.dim();
            g.constant(d.stored_values.clone().into_dyn()).reshape(&[1, r, m])
        })
        .collect();
    let out = translate_graph(&p, params, &dicts, g.constant(l_drive.to_tensor()));
    PortraitFrame::from_tensor(&out.value())
}

/// Weights of the translator objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdGanWeights {
    pub rec: f64,
    pub dis: f64,
    pub cls: f64,
}

impl Default for FdGanWeights {
    fn default() -> Self {
        FdGanWeights {
            rec: 50.0,
            dis: 1.0,
            cls: 1.0,
        }
    }
}

/// Training minibatch: target frames `x_T`, their drawings `l_T`, other
/// frames `x'_T` of the same subjects and their drawings `l'_T`.
#[derive(Clone, Debug)]
pub struct FdGanBatch {
    pub x_t: ArrayD<f32>,
    pub l_t: ArrayD<f32>,
    pub x_t2: ArrayD<f32>,
    pub l_t2: ArrayD<f32>,
    pub labels: Vec<usize>,
}

impl FdGanBatch {
    pub fn check(&self, config: &FdGanConfig) -> Result<()> {
        let s = config.image_size;
        check_image(&self.x_t, 3, s, "x_T")?;
        check_image(&self.x_t2, 3, s, "x'_T")?;
        check_image(&self.l_t, 1, s, "l_T")?;
        check_image(&self.l_t2, 1, s, "l'_T")?;
        let b = self.x_t.shape()[0];
        if [&self.x_t2, &self.l_t, &self.l_t2].iter().any(|t| t.shape()[0] != b) || self.labels.len() != b {
            return Err(Error::Shape("batch parts differ in size".into()));
        }
        if self.labels.iter().any(|&k| k >= config.num_identities) {
            return Err(Error::Precondition(format!(
                "identity label out of range 0..{}",
                config.num_identities
            )));
        }
        Ok(())
    }
}

/// Graph variables of the FD-GAN objectives.
pub struct FdGanTerms<'g> {
    pub generated: Var<'g, f32>,
    pub recon: Var<'g, f32>,
    pub gen_dis: Var<'g, f32>,
    pub gen_cls: Var<'g, f32>,
    pub total_d: Var<'g, f32>,
    pub total_c: Var<'g, f32>,
    pub total_t: Var<'g, f32>,
}

impl FdGanTerms<'_> {
    pub fn breakdown(&self) -> LossBreakdown {
        let f = |v: Var<'_, f32>| Some(v.item() as f64);
        LossBreakdown {
            recon: f(self.recon),
            adv_classifier: f(self.gen_cls),
            adv_discriminator: f(self.gen_dis),
            total_g: f(self.total_t),
            total_c: f(self.total_c),
            total_d: f(self.total_d),
            content: None,
        }
    }
}

/// `λ_rec·recon + λ_D·E[D²] + λ_C·E[-log P]`.
pub fn translator_objective<'g>(recon: Var<'g, f32>, gen_dis: Var<'g, f32>, gen_cls: Var<'g, f32>, w: FdGanWeights) -> Var<'g, f32> {
    recon
        .scale(w.rec as f32)
        .add(gen_dis.scale(w.dis as f32))
        .add(gen_cls.scale(w.cls as f32))
}

/// Records generator, critic and objective terms on `p`'s graph.
pub fn fdgan_terms<'g>(p: &Binding<'g, '_, f32>, params: &FdGanParams, batch: &FdGanBatch, w: FdGanWeights) -> Result<FdGanTerms<'g>> {
    batch.check(&params.config)?;
    let g = p.graph();
    let x_t = g.constant(batch.x_t.clone());
    let x_t2 = g.constant(batch.x_t2.clone());
    let dicts = extract_graph(p, params, x_t, g.constant(batch.l_t.clone()));
    let generated = translate_graph(p, params, &dicts, g.constant(batch.l_t2.clone()));

    let d_real = discriminator_graph(p, params, x_t);
    let d_fake = discriminator_graph(p, params, generated);
    let (c_real, labels) = losses::patch_logits(classifier_graph(p, params, x_t), &batch.labels);
    let (c_fake, _) = losses::patch_logits(classifier_graph(p, params, generated), &batch.labels);

    let recon = losses::mse(generated, x_t2);
    let gen_dis = losses::lsgan_generator(d_fake);
    let gen_cls = losses::cross_entropy(c_fake, &labels);
    Ok(FdGanTerms {
        generated,
        recon,
        gen_dis,
        gen_cls,
        total_d: losses::lsgan_critic(d_real, d_fake),
        total_c: losses::cross_entropy(c_real, &labels).add(losses::neg_log_complement(c_fake, &labels)),
        total_t: translator_objective(recon, gen_dis, gen_cls, w),
    })
}

/// Evaluates the FD-GAN objectives on one example.
pub fn fdgan_losses(
    x_t: &PortraitFrame,
    x_t2: &PortraitFrame,
    l_t: &LandmarkImage,
    l_t2: &LandmarkImage,
    label: usize,
    params: &FdGanParams,
) -> Result<LossBreakdown> {
    if let (Some(a), Some(b)) = (x_t.subject_id, x_t2.subject_id) {
        if a != b {
            return Err(Error::Precondition(format!(
                "x_T and x'_T belong to different subjects ({a} and {b})"
            )));
        }
    }
    let batch = FdGanBatch {
        x_t: x_t.to_tensor(),
        l_t: l_t.to_tensor(),
        x_t2: x_t2.to_tensor(),
        l_t2: l_t2.to_tensor(),
        labels: vec![label],
    };
    let g = Graph::new();
    let p = Binding::frozen(&g, &params.store);
    Ok(fdgan_terms(&p, params, &batch, FdGanWeights::default())?.breakdown())
}
