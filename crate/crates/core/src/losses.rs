//! Loss formulas shared by both networks, written against graph variables so
//! that they can be evaluated on hand-chosen values as well as on network
//! outputs.

use reenact_tensor::{Float, Var};
use serde::{Deserialize, Serialize};

/// Probability floor inside `-log(1 - p)`.
pub const PROB_FLOOR: f64 = 1e-7;

/// Mean over rows and points of the squared Euclidean distance between
/// flattened point sets `[B, 2P]`.
pub fn point_recon<'g, T: Float>(pred: Var<'g, T>, target: Var<'g, T>) -> Var<'g, T> {
    let shape = pred.shape();
    assert_eq!(shape.len(), 2, "point_recon expects [B, 2P]");
    let points = shape[0] * shape[1] / 2;
    pred.sub(target).square().sum_all().scale(T::of(1.0 / points as f64))
}

/// Mean over rows of the squared Euclidean norm of `a - b`, `[B, D]`.
pub fn sq_distance<'g, T: Float>(a: Var<'g, T>, b: Var<'g, T>) -> Var<'g, T> {
    let rows = a.shape()[0];
    a.sub(b).square().sum_all().scale(T::of(1.0 / rows as f64))
}

/// Mean squared error over all elements.
pub fn mse<'g, T: Float>(a: Var<'g, T>, b: Var<'g, T>) -> Var<'g, T> {
    a.sub(b).square().mean_all()
}

/// `log P(label | logits)` per row of `[R, K]` logits.
pub fn log_prob<'g, T: Float>(logits: Var<'g, T>, labels: &[usize]) -> Var<'g, T> {
    logits.log_softmax_last().gather_rows(labels)
}

/// Mean of `log P(label | logits)`; always ≤ 0.
pub fn mean_log_prob<'g, T: Float>(logits: Var<'g, T>, labels: &[usize]) -> Var<'g, T> {
    log_prob(logits, labels).mean_all()
}

/// Cross-entropy `-E[log P(label | logits)]`.
pub fn cross_entropy<'g, T: Float>(logits: Var<'g, T>, labels: &[usize]) -> Var<'g, T> {
    mean_log_prob(logits, labels).neg()
}

/// `-E[log max(1 - P(label | logits), floor)]`.
pub fn neg_log_complement<'g, T: Float>(logits: Var<'g, T>, labels: &[usize]) -> Var<'g, T> {
    log_prob(logits, labels)
        .exp()
        .one_minus()
        .clamp_min(T::of(PROB_FLOOR))
        .log()
        .mean_all()
        .neg()
}

/// Least-squares critic loss with targets +1 (real) and -1 (fake).
pub fn lsgan_critic<'g, T: Float>(real: Var<'g, T>, fake: Var<'g, T>) -> Var<'g, T> {
    real.add_scalar(-T::one())
        .square()
        .mean_all()
        .add(fake.add_scalar(T::one()).square().mean_all())
}

/// Least-squares generator loss, target 0.
pub fn lsgan_generator<'g, T: Float>(fake: Var<'g, T>) -> Var<'g, T> {
    fake.square().mean_all()
}

/// Flattens per-location class logits `[B, K, H, W]` to `[B*H*W, K]` and
/// repeats each sample's label for all of its locations.
pub fn patch_logits<'g, T: Float>(logits: Var<'g, T>, labels: &[usize]) -> (Var<'g, T>, Vec<usize>) {
    let s = logits.shape();
    assert_eq!(s.len(), 4, "patch_logits expects [B, K, H, W]");
    assert_eq!(s[0], labels.len(), "one label per sample");
    let per = s[2] * s[3];
    let flat = logits.permute(&[0, 2, 3, 1]).reshape(&[s[0] * per, s[1]]);
    let rep = labels.iter().flat_map(|&l| std::iter::repeat_n(l, per)).collect();
    (flat, rep)
}

/// Named loss components; absent components are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: Option<f64>,
    pub adv_classifier: Option<f64>,
    pub adv_discriminator: Option<f64>,
    pub content: Option<f64>,
    pub total_g: Option<f64>,
    pub total_c: Option<f64>,
    pub total_d: Option<f64>,
}

impl LossBreakdown {
    /// Present components in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        [
            ("recon", self.recon),
            ("adv_classifier", self.adv_classifier),
            ("adv_discriminator", self.adv_discriminator),
            ("content", self.content),
            ("total_G", self.total_g),
            ("total_C", self.total_c),
            ("total_D", self.total_d),
        ]
        .into_iter()
        .filter_map(|(n, v)| v.map(|v| (n, v)))
        .collect()
    }
}

