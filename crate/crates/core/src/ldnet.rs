//! Landmark disentanglement network.
//!
//! Stage 1 learns a pose/expression encoder `E_P`, a label embedding `N_I`
//! and a generator `G` against an identity classifier `C`. Stage 2 swaps the
//! label embedding for a landmark identity encoder `E_I`, keeps `E_P` fixed,
//! and adds a least-squares discriminator `D`.

use ndarray::{Array2, IxDyn};
use rand::Rng;
use reenact_tensor::{Array, Binding, Graph, ParamStore, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{normalize_landmarks, LandmarkSet, NUM_LANDMARKS};
use crate::losses;
pub use crate::losses::LossBreakdown;
use crate::nn::{Builder, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdNetConfig {
    pub num_points: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub pose_code: usize,
    pub identity_code: usize,
    /// Number of training identities, i.e. classifier outputs.
    pub num_identities: usize,
    pub leaky_slope: f64,
}

impl LdNetConfig {
    /// Ten hidden layers of 512 features; codes of length 64 and 128.
    pub fn paper(num_identities: usize) -> Self {
        LdNetConfig {
            num_points: NUM_LANDMARKS,
            hidden_layers: 10,
            hidden_width: 512,
            pose_code: 64,
            identity_code: 128,
            num_identities,
            leaky_slope: 0.2,
        }
    }

    pub fn input_dim(&self) -> usize {
        2 * self.num_points
    }

    fn dims(&self, inp: usize, out: usize) -> Vec<usize> {
        let mut d = vec![inp];
        d.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        d.push(out);
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_points == 0 || self.pose_code == 0 || self.identity_code == 0 || self.hidden_width == 0 {
            return Err(Error::Config("LD-Net dimensions must be positive".into()));
        }
        if self.num_identities < 2 {
            return Err(Error::Config("LD-Net needs at least two identities".into()));
        }
        Ok(())
    }
}

impl Default for LdNetConfig {
    fn default() -> Self {
        LdNetConfig::paper(20)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn tag(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

/// Weights of the stage-1 generator objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Weights {
    pub rec: f64,
    pub cls: f64,
}

impl Default for Stage1Weights {
    fn default() -> Self {
        Stage1Weights { rec: 1000.0, cls: 0.1 }
    }
}

/// Weights of the stage-2 generator objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Weights {
    pub rec: f64,
    pub cont: f64,
    pub dis: f64,
    pub cls: f64,
}

impl Default for Stage2Weights {
    fn default() -> Self {
        Stage2Weights {
            rec: 1000.0,
            cont: 0.01,
            dis: 0.1,
            cls: 0.1,
        }
    }
}

/// Parameters for one stage. Names are prefixed `ep.`, `ni.`, `ei.`, `gen.`,
/// `cls.` and `dis.`.
#[derive(Clone, Debug)]
pub struct LdNetParams {
    pub config: LdNetConfig,
    pub stage: Stage,
    pub store: ParamStore<f64>,
    pub ep: Mlp,
    pub ni: Option<Mlp>,
    pub ei: Option<Mlp>,
    pub gen: Mlp,
    pub cls: Mlp,
    pub dis: Option<Mlp>,
}

struct Nets {
    ep: Mlp,
    ni: Option<Mlp>,
    ei: Option<Mlp>,
    gen: Mlp,
    cls: Mlp,
    dis: Option<Mlp>,
}

fn build_nets<R: Rng>(c: &LdNetConfig, stage: Stage, b: &mut Builder<'_, f64, R>) -> Result<Nets> {
    let s = c.leaky_slope;
    let inp = c.input_dim();
    let ep = Mlp::new(b, "ep", &c.dims(inp, c.pose_code), s)?;
    let (ni, ei, dis) = match stage {
        Stage::One => (Some(Mlp::new(b, "ni", &[c.num_identities, c.identity_code], s)?), None, None),
        Stage::Two => (
            None,
            Some(Mlp::new(b, "ei", &c.dims(inp, c.identity_code), s)?),
            Some(Mlp::new(b, "dis", &c.dims(inp, 1), s)?),
        ),
    };
    let gen = Mlp::new(b, "gen", &c.dims(c.pose_code + c.identity_code, inp), s)?;
    let cls = Mlp::new(b, "cls", &c.dims(inp, c.num_identities), s)?;
    Ok(Nets {
        ep,
        ni,
        ei,
        gen,
        cls,
        dis,
    })
}

impl LdNetParams {
    fn assemble(config: LdNetConfig, stage: Stage, store: ParamStore<f64>, n: Nets) -> Self {
        LdNetParams {
            config,
            stage,
            store,
            ep: n.ep,
            ni: n.ni,
            ei: n.ei,
            gen: n.gen,
            cls: n.cls,
            dis: n.dis,
        }
    }

    /// Freshly initialized parameters for the given stage.
    pub fn new<R: Rng>(config: LdNetConfig, stage: Stage, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let nets = build_nets(&config, stage, &mut Builder::Init(&mut store, rng))?;
        Ok(Self::assemble(config, stage, store, nets))
    }

    /// Wraps loaded arrays, checking every name and shape against `config`.
    pub fn from_store(config: LdNetConfig, stage: Stage, store: ParamStore<f64>) -> Result<Self> {
        config.validate()?;
        let nets = build_nets::<rand_chacha::ChaCha8Rng>(&config, stage, &mut Builder::Load(&store))?;
        let expected: usize = [Some(&nets.ep), nets.ni.as_ref(), nets.ei.as_ref(), Some(&nets.gen), Some(&nets.cls), nets.dis.as_ref()]
            .into_iter()
            .flatten()
            .map(|m| 2 * m.layers.len())
            .sum();
        if expected != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameters, archive has {}",
                store.len()
            )));
        }
        Ok(Self::assemble(config, stage, store, nets))
    }

    /// Stage-2 parameters: `E_P` and `G` copied from stage 1; `E_I`, `C` and
    /// `D` newly initialized.
    pub fn stage2_from<R: Rng>(stage1: &LdNetParams, rng: &mut R) -> Result<Self> {
        if stage1.stage != Stage::One {
            return Err(Error::Precondition("stage-2 initialization needs stage-1 parameters".into()));
        }
        let mut p = Self::new(stage1.config.clone(), Stage::Two, rng)?;
        for (name, value) in stage1.store.iter() {
            if name.starts_with("ep.") || name.starts_with("gen.") {
                let id = p.store.id(name).expect("shared module");
                p.store.set(id, value.clone());
            }
        }
        Ok(p)
    }

    fn identity_encoder(&self) -> Result<&Mlp> {
        self.ei.as_ref().ok_or(Error::IdentityEncoderAbsent)
    }
}

/// Output of `E_P`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseExprCode {
    pub values: Vec<f64>,
}

/// Output of `N_I` or `E_I`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCode {
    pub values: Vec<f64>,
}

/// Stacks flattened sets into `[B, 2P]`. All sets must be normalized.
pub fn stack_landmarks(sets: &[&LandmarkSet]) -> Result<Array2<f64>> {
    let normalized = sets.iter().filter(|s| s.is_normalized()).count();
    if normalized != sets.len() {
        return Err(if normalized == 0 {
            Error::NotNormalized
        } else {
            Error::Precondition("mixed normalized and unnormalized landmark sets".into())
        });
    }
    let mut out = Array2::zeros((sets.len(), 2 * NUM_LANDMARKS));
    for (mut row, s) in out.rows_mut().into_iter().zip(sets) {
        for (d, v) in row.iter_mut().zip(s.flat()) {
            *d = v;
        }
    }
    Ok(out)
}

fn one_hot(labels: &[usize], k: usize) -> Array<f64> {
    let mut a = Array::zeros(IxDyn(&[labels.len(), k]));
    for (i, &l) in labels.iter().enumerate() {
        a[[i, l]] = 1.0;
    }
    a
}

/// Stage-1 minibatch: landmarks `l_S2`, their own labels `S` and the
/// different-subject labels `T` used by the cross branch.
#[derive(Clone, Debug)]
pub struct Stage1Batch {
    pub landmarks: Array2<f64>,
    pub labels: Vec<usize>,
    pub cross_labels: Vec<usize>,
}

impl Stage1Batch {
    pub fn new(landmarks: Array2<f64>, labels: Vec<usize>, cross_labels: Vec<usize>) -> Result<Self> {
        let b = landmarks.nrows();
        if labels.len() != b || cross_labels.len() != b || b == 0 {
            return Err(Error::Shape("one label pair per landmark row".into()));
        }
        if labels.iter().zip(&cross_labels).any(|(s, t)| s == t) {
            return Err(Error::Precondition("cross branch must use a different subject's label".into()));
        }
        Ok(Stage1Batch {
            landmarks,
            labels,
            cross_labels,
        })
    }

    pub fn from_sets(sets: &[&LandmarkSet], labels: Vec<usize>, cross_labels: Vec<usize>) -> Result<Self> {
        Self::new(stack_landmarks(sets)?, labels, cross_labels)
    }
}

/// Stage-2 minibatch: `l_S1`, `l_S2` from one subject, `l_T` from another
/// whose label is `T`.
#[derive(Clone, Debug)]
pub struct Stage2Batch {
    pub l_s1: Array2<f64>,
    pub l_s2: Array2<f64>,
    pub l_t: Array2<f64>,
    pub target_labels: Vec<usize>,
}

impl Stage2Batch {
    pub fn new(l_s1: Array2<f64>, l_s2: Array2<f64>, l_t: Array2<f64>, target_labels: Vec<usize>) -> Result<Self> {
        let b = l_s1.nrows();
        if b == 0 || l_s2.dim() != l_s1.dim() || l_t.dim() != l_s1.dim() || target_labels.len() != b {
            return Err(Error::Shape("stage-2 batch parts must agree in shape".into()));
        }
        Ok(Stage2Batch {
            l_s1,
            l_s2,
            l_t,
            target_labels,
        })
    }
}

/// Graph variables of the stage-1 objectives.
pub struct Stage1Terms<'g> {
    pub recon: Var<'g, f64>,
    /// `E[log P(S | C(l'))]`.
    pub mean_log_prob: Var<'g, f64>,
    pub total_c: Var<'g, f64>,
    pub total_g: Var<'g, f64>,
}

impl Stage1Terms<'_> {
    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            recon: Some(self.recon.item()),
            adv_classifier: Some(self.mean_log_prob.item()),
            total_c: Some(self.total_c.item()),
            total_g: Some(self.total_g.item()),
            ..Default::default()
        }
    }
}

/// Graph variables of the stage-2 objectives.
pub struct Stage2Terms<'g> {
    pub recon: Var<'g, f64>,
    pub content: Var<'g, f64>,
    /// `E[D(l'_T)^2]`.
    pub gen_dis: Var<'g, f64>,
    /// `E[-log P(T | C(l'_T))]`.
    pub gen_cls: Var<'g, f64>,
    pub total_d: Var<'g, f64>,
    pub total_c: Var<'g, f64>,
    pub total_g: Var<'g, f64>,
}

impl Stage2Terms<'_> {
    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            recon: Some(self.recon.item()),
            adv_classifier: Some(self.gen_cls.item()),
            adv_discriminator: Some(self.gen_dis.item()),
            content: Some(self.content.item()),
            total_g: Some(self.total_g.item()),
            total_c: Some(self.total_c.item()),
            total_d: Some(self.total_d.item()),
        }
    }
}

/// `λ_rec·recon + λ_C·E[log P]`.
pub fn stage1_generator_objective<'g>(recon: Var<'g, f64>, mean_log_prob: Var<'g, f64>, w: Stage1Weights) -> Var<'g, f64> {
    recon.scale(w.rec).add(mean_log_prob.scale(w.cls))
}

/// `λ_rec·recon + λ_cont·content + λ_D·E[D²] + λ_C·E[-log P]`.
pub fn stage2_generator_objective<'g>(
    recon: Var<'g, f64>,
    content: Var<'g, f64>,
    gen_dis: Var<'g, f64>,
    gen_cls: Var<'g, f64>,
    w: Stage2Weights,
) -> Var<'g, f64> {
    recon
        .scale(w.rec)
        .add(content.scale(w.cont))
        .add(gen_dis.scale(w.dis))
        .add(gen_cls.scale(w.cls))
}

fn check_batch_width(params: &LdNetParams, cols: usize) -> Result<()> {
    if cols != params.config.input_dim() {
        return Err(Error::Shape(format!(
            "landmark rows have {cols} values, network expects {}",
            params.config.input_dim()
        )));
    }
    Ok(())
}

/// Records the stage-1 objectives on `p`'s graph.
pub fn stage1_terms<'g>(
    p: &Binding<'g, '_, f64>,
    params: &LdNetParams,
    batch: &Stage1Batch,
    w: Stage1Weights,
) -> Result<Stage1Terms<'g>> {
    let ni = params
        .ni
        .as_ref()
        .ok_or_else(|| Error::Precondition("stage-1 losses need stage-1 parameters".into()))?;
    check_batch_width(params, batch.landmarks.ncols())?;
    let k = params.config.num_identities;
    if batch.labels.iter().chain(&batch.cross_labels).any(|&l| l >= k) {
        return Err(Error::Precondition(format!("identity label out of range 0..{k}")));
    }
    let g = p.graph();
    let l = g.constant(batch.landmarks.clone().into_dyn());
    let pose = params.ep.forward(p, l);
    let same = ni.forward(p, g.constant(one_hot(&batch.labels, k)));
    let cross = ni.forward(p, g.constant(one_hot(&batch.cross_labels, k)));
    let rec = params.gen.forward(p, Var::concat(&[pose, same], 1));
    let fake = params.gen.forward(p, Var::concat(&[pose, cross], 1));
    let logits = params.cls.forward(p, fake);
    let recon = losses::point_recon(rec, l);
    let mean_log_prob = losses::mean_log_prob(logits, &batch.labels);
    Ok(Stage1Terms {
        recon,
        mean_log_prob,
        total_c: mean_log_prob.neg(),
        total_g: stage1_generator_objective(recon, mean_log_prob, w),
    })
}

/// Records the stage-2 objectives on `p`'s graph.
pub fn stage2_terms<'g>(
    p: &Binding<'g, '_, f64>,
    params: &LdNetParams,
    batch: &Stage2Batch,
    w: Stage2Weights,
) -> Result<Stage2Terms<'g>> {
    let ei = params.identity_encoder()?;
    let dis = params.dis.as_ref().ok_or(Error::IdentityEncoderAbsent)?;
    check_batch_width(params, batch.l_s1.ncols())?;
    let k = params.config.num_identities;
    if batch.target_labels.iter().any(|&l| l >= k) {
        return Err(Error::Precondition(format!("identity label out of range 0..{k}")));
    }
    let g = p.graph();
    let l_s1 = g.constant(batch.l_s1.clone().into_dyn());
    let l_s2 = g.constant(batch.l_s2.clone().into_dyn());
    let l_t = g.constant(batch.l_t.clone().into_dyn());
    let pose = params.ep.forward(p, l_s2);
    let rec = params.gen.forward(p, Var::concat(&[pose, ei.forward(p, l_s1)], 1));
    let fake = params.gen.forward(p, Var::concat(&[pose, ei.forward(p, l_t)], 1));
    let labels = &batch.target_labels;

    let d_real = dis.forward(p, l_s2);
    let d_fake = dis.forward(p, fake);
    let c_real = params.cls.forward(p, l_t);
    let c_fake = params.cls.forward(p, fake);

    let recon = losses::point_recon(rec, l_s2);
    let content = losses::sq_distance(pose, params.ep.forward(p, fake));
    let gen_dis = losses::lsgan_generator(d_fake);
    let gen_cls = losses::cross_entropy(c_fake, labels);
    Ok(Stage2Terms {
        recon,
        content,
        gen_dis,
        gen_cls,
        total_d: losses::lsgan_critic(d_real, d_fake),
        total_c: losses::cross_entropy(c_real, labels).add(losses::neg_log_complement(c_fake, labels)),
        total_g: stage2_generator_objective(recon, content, gen_dis, gen_cls, w),
    })
}

/// Evaluates the stage-1 objectives.
pub fn stage1_losses(batch: &Stage1Batch, params: &LdNetParams) -> Result<LossBreakdown> {
    let g = Graph::new();
    let p = Binding::frozen(&g, &params.store);
    Ok(stage1_terms(&p, params, batch, Stage1Weights::default())?.breakdown())
}

/// Evaluates the stage-2 objectives.
pub fn stage2_losses(batch: &Stage2Batch, params: &LdNetParams) -> Result<LossBreakdown> {
    if params.stage != Stage::Two {
        return Err(Error::IdentityEncoderAbsent);
    }
    let g = Graph::new();
    let p = Binding::frozen(&g, &params.store);
    Ok(stage2_terms(&p, params, batch, Stage2Weights::default())?.breakdown())
}

fn single_row(lms: &LandmarkSet, params: &LdNetParams) -> Result<Array<f64>> {
    if !lms.is_normalized() {
        return Err(Error::NotNormalized);
    }
    check_batch_width(params, 2 * lms.points().len())?;
    Ok(Array::from_shape_vec(IxDyn(&[1, 2 * NUM_LANDMARKS]), lms.flat()).unwrap())
}

fn run_mlp(net: &Mlp, params: &LdNetParams, input: Array<f64>) -> Array<f64> {
    let g = Graph::new();
    let p = Binding::frozen(&g, &params.store);
    let out = net.forward(&p, g.constant(input));
    (*out.value()).clone()
}

/// Pose/expression codes of many sets at once, `[B, pose_code]`.
pub fn encode_pose_expr_batch(rows: &Array2<f64>, params: &LdNetParams) -> Result<Array2<f64>> {
    check_batch_width(params, rows.ncols())?;
    let out = run_mlp(&params.ep, params, rows.clone().into_dyn());
    Ok(out.into_dimensionality().unwrap())
}

/// Identity codes of many sets at once, `[B, identity_code]`.
pub fn encode_identity_batch(rows: &Array2<f64>, params: &LdNetParams) -> Result<Array2<f64>> {
    let ei = params.identity_encoder()?;
    check_batch_width(params, rows.ncols())?;
    let out = run_mlp(ei, params, rows.clone().into_dyn());
    Ok(out.into_dimensionality().unwrap())
}

pub fn encode_pose_expr(lms: &LandmarkSet, params: &LdNetParams) -> Result<PoseExprCode> {
    let out = run_mlp(&params.ep, params, single_row(lms, params)?);
    Ok(PoseExprCode {
        values: out.iter().copied().collect(),
    })
}

/// `E_I(l)`; requires stage-2 parameters.
pub fn encode_identity(lms: &LandmarkSet, params: &LdNetParams) -> Result<IdentityCode> {
    let ei = params.identity_encoder()?;
    let out = run_mlp(ei, params, single_row(lms, params)?);
    Ok(IdentityCode {
        values: out.iter().copied().collect(),
    })
}

/// `N_I(k)`; requires stage-1 parameters.
pub fn embed_identity(label: usize, params: &LdNetParams) -> Result<IdentityCode> {
    let ni = params
        .ni
        .as_ref()
        .ok_or_else(|| Error::Precondition("label embedding exists only in stage 1".into()))?;
    let k = params.config.num_identities;
    if label >= k {
        return Err(Error::Precondition(format!("identity label out of range 0..{k}")));
    }
    let out = run_mlp(ni, params, one_hot(&[label], k));
    Ok(IdentityCode {
        values: out.iter().copied().collect(),
    })
}

fn generate_raw(pose: &PoseExprCode, ident: &IdentityCode, params: &LdNetParams) -> Result<Vec<f64>> {
    let c = &params.config;
    if pose.values.len() != c.pose_code || ident.values.len() != c.identity_code {
        return Err(Error::Shape(format!(
            "codes of length {}/{} given, generator expects {}/{}",
            pose.values.len(),
            ident.values.len(),
            c.pose_code,
            c.identity_code
        )));
    }
    let mut z = pose.values.clone();
    z.extend(&ident.values);
    let input = Array::from_shape_vec(IxDyn(&[1, z.len()]), z).unwrap();
    Ok(run_mlp(&params.gen, params, input).iter().copied().collect())
}

/// `G(pose, ident)`: raw generator output in the normalized coordinate frame.
pub fn generate_landmarks(pose: &PoseExprCode, ident: &IdentityCode, params: &LdNetParams) -> Result<LandmarkSet> {
    if params.config.num_points != NUM_LANDMARKS {
        return Err(Error::Shape("landmark sets have 68 points".into()));
    }
    LandmarkSet::from_flat(&generate_raw(pose, ident, params)?)
}

/// `G(E_P(l_source), E_I(l_target))`, renormalized and tagged with the
/// target's subject id.
pub fn transfer_landmarks(l_target: &LandmarkSet, l_source: &LandmarkSet, params: &LdNetParams) -> Result<LandmarkSet> {
    let ident = encode_identity(l_target, params)?;
    let pose = encode_pose_expr(l_source, params)?;
    let raw = generate_landmarks(&pose, &ident, params)?.with_ids(l_target.subject_id, l_source.frame_id);
    Ok(normalize_landmarks(&raw)?.0)
}
