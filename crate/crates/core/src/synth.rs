//! Parametric synthetic faces with known identity and pose/expression
//! factors, and a matching portrait renderer.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::PortraitFrame;
use crate::landmarks::{normalize_landmarks, to_pixel, LandmarkSet, NUM_LANDMARKS};

/// Number of expression basis shapes.
pub const NUM_EXPRESSIONS: usize = 8;

type Shape = Vec<[f64; 2]>;

/// A procedural neutral face; x to the right, y down, roughly unit scale.
pub fn mean_face() -> Shape {
    let mut p = vec![[0.0; 2]; NUM_LANDMARKS];
    for (i, q) in p.iter_mut().enumerate().take(17) {
        let t = PI * i as f64 / 16.0;
        *q = [-t.cos(), -0.2 + 1.15 * t.sin().powf(0.8)];
    }
    for i in 0..5 {
        let u = i as f64 / 4.0;
        let arch = -0.55 - 0.1 * (PI * u).sin();
        p[17 + i] = [-0.8 + 0.6 * u, arch];
        p[26 - i] = [0.8 - 0.6 * u, arch];
    }
    for i in 0..4 {
        p[27 + i] = [0.0, -0.4 + 0.5 * i as f64 / 3.0];
    }
    p[31] = [-0.2, 0.15];
    p[32] = [-0.1, 0.2];
    p[33] = [0.0, 0.23];
    p[34] = [0.1, 0.2];
    p[35] = [0.2, 0.15];
    let eye = [
        [-0.6, -0.3],
        [-0.5, -0.37],
        [-0.4, -0.37],
        [-0.3, -0.3],
        [-0.4, -0.23],
        [-0.5, -0.23],
    ];
    let right = [3usize, 2, 1, 0, 5, 4];
    for k in 0..6 {
        p[36 + k] = eye[k];
        let m = eye[right[k]];
        p[42 + k] = [-m[0], m[1]];
    }
    let outer = [
        [-0.35, 0.5],
        [-0.22, 0.44],
        [-0.08, 0.41],
        [0.0, 0.43],
        [0.08, 0.41],
        [0.22, 0.44],
        [0.35, 0.5],
        [0.22, 0.58],
        [0.08, 0.62],
        [0.0, 0.63],
        [-0.08, 0.62],
        [-0.22, 0.58],
    ];
    p[48..60].copy_from_slice(&outer);
    let inner = [
        [-0.28, 0.5],
        [-0.1, 0.47],
        [0.0, 0.47],
        [0.1, 0.47],
        [0.28, 0.5],
        [0.1, 0.54],
        [0.0, 0.55],
        [-0.1, 0.54],
    ];
    p[60..68].copy_from_slice(&inner);
    p
}

/// Depth toward the camera for each point of [`mean_face`].
fn depth_template(face: &Shape) -> Vec<f64> {
    (0..NUM_LANDMARKS)
        .map(|i| match i {
            0..=16 => 0.1 - 0.6 * face[i][0].abs(),
            17..=26 => 0.15,
            27..=30 => 0.2 + 0.1 * (i - 27) as f64,
            33 => 0.55,
            31..=35 => 0.35,
            36..=47 => 0.05,
            _ => 0.25,
        })
        .collect()
}

/// Depth of each point of [`mean_face`].
pub fn mean_depth() -> Vec<f64> {
    depth_template(&mean_face())
}

fn expression_template(face: &Shape) -> Vec<Shape> {
    let mut basis = vec![vec![[0.0; 2]; NUM_LANDMARKS]; NUM_EXPRESSIONS];
    let lower_lip = [55, 56, 57, 58, 59, 65, 66, 67];
    let upper_lip = [49, 50, 51, 52, 53, 61, 62, 63];
    // jaw drop
    for i in 0..17 {
        let w = ((face[i][1] + 0.2) / 1.15).max(0.0);
        basis[0][i] = [0.0, 0.12 * w];
    }
    for &i in &lower_lip {
        basis[0][i] = [0.0, 0.1];
    }
    // smile
    for (&i, s) in [48usize, 60, 54, 64].iter().zip([-1.0, -1.0, 1.0, 1.0]) {
        basis[1][i] = [0.06 * s, -0.05];
    }
    // brow raise
    for b in basis[2].iter_mut().take(27).skip(17) {
        *b = [0.0, -0.08];
    }
    // frown
    for (&i, s) in [20usize, 21, 22, 23].iter().zip([1.0, 1.0, -1.0, -1.0]) {
        basis[3][i] = [0.03 * s, 0.05];
    }
    // blink
    for &i in &[37usize, 38, 43, 44] {
        basis[4][i] = [0.0, 0.05];
    }
    for &i in &[40usize, 41, 46, 47] {
        basis[4][i] = [0.0, -0.015];
    }
    // pucker
    for i in 48..68 {
        basis[5][i] = [-0.3 * face[i][0], 0.0];
    }
    // asymmetric smirk
    for &i in &[48usize, 60, 49] {
        basis[6][i] = [-0.04, -0.06];
    }
    // lips part
    for &i in &upper_lip {
        basis[7][i] = [0.0, -0.03];
    }
    for &i in &lower_lip {
        basis[7][i] = [0.0, 0.04];
    }
    for b in basis.iter_mut() {
        let mut mean = [0.0; 2];
        for p in b.iter() {
            mean[0] += p[0] / NUM_LANDMARKS as f64;
            mean[1] += p[1] / NUM_LANDMARKS as f64;
        }
        for p in b.iter_mut() {
            p[0] -= mean[0];
            p[1] -= mean[1];
        }
    }
    basis
}

/// Flat colors used by the portrait renderer, RGB in [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub background: [f32; 3],
    pub skin: [f32; 3],
    pub brows: [f32; 3],
    pub iris: [f32; 3],
    pub lips: [f32; 3],
}

/// One synthetic identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSubject {
    pub subject_id: u32,
    /// Normalized neutral shape.
    pub base_shape: Shape,
    /// Zero-mean displacement fields in the same frame as `base_shape`.
    pub expression_basis: Vec<Shape>,
    pub depth: Vec<f64>,
    pub appearance: Appearance,
}

fn color<R: Rng>(rng: &mut R, lo: f32, hi: f32) -> [f32; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

impl SyntheticSubject {
    /// Draws an identity: global proportions, feature placement and sizes,
    /// plus a small per-point jitter.
    pub fn random<R: Rng>(subject_id: u32, rng: &mut R) -> Self {
        let mut face = mean_face();
        let mut u = |a: f64| rng.random_range(-a..a);
        let (sx, sy) = (1.0 + u(0.15), 1.0 + u(0.15));
        let eye_gap = u(0.08);
        let eye_size = 1.0 + u(0.25);
        let brow_dy = u(0.08);
        let nose_len = 1.0 + u(0.25);
        let nose_w = 1.0 + u(0.3);
        let mouth_w = 1.0 + u(0.25);
        let mouth_dy = u(0.07);
        let chin_dy = u(0.1);
        let jaw_w = 1.0 + u(0.15);
        for (i, p) in face.iter_mut().enumerate() {
            match i {
                0..=16 => {
                    let low = ((p[1] + 0.2) / 1.15).clamp(0.0, 1.0);
                    p[0] *= 1.0 + (jaw_w - 1.0) * low;
                    p[1] += chin_dy * low * low;
                }
                17..=26 => p[1] += brow_dy,
                27..=30 => p[1] = -0.4 + (p[1] + 0.4) * nose_len,
                31..=35 => {
                    p[0] *= nose_w;
                    p[1] = -0.4 + (p[1] + 0.4) * nose_len;
                }
                36..=47 => {
                    let c: f64 = if i < 42 { -0.45 } else { 0.45 };
                    let side = c.signum();
                    p[0] = c + side * eye_gap + (p[0] - c) * eye_size;
                    p[1] = -0.3 + (p[1] + 0.3) * eye_size;
                }
                _ => {
                    p[0] *= mouth_w;
                    p[1] += mouth_dy;
                }
            }
        }
        let jitter = Normal::new(0.0, 0.012).unwrap();
        for p in face.iter_mut() {
            p[0] = sx * (p[0] + jitter.sample(rng));
            p[1] = sy * (p[1] + jitter.sample(rng));
        }
        let depth = depth_template(&face);
        let basis = expression_template(&mean_face());
        let raw = LandmarkSet::new(face).expect("68 finite points");
        let (norm, affine) = normalize_landmarks(&raw).expect("non-degenerate face");
        let expression_basis = basis
            .into_iter()
            .map(|b| {
                b.into_iter()
                    .map(|d| [d[0] * sx * affine.scale, d[1] * sy * affine.scale])
                    .collect()
            })
            .collect();
        let skin = [
            rng.random_range(-0.2..0.9),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.7..0.3),
        ];
        let appearance = Appearance {
            background: color(rng, -1.0, 1.0),
            skin,
            brows: color(rng, -1.0, -0.3),
            iris: color(rng, -1.0, 0.2),
            lips: [
                rng.random_range(0.0..0.9),
                rng.random_range(-0.9..-0.1),
                rng.random_range(-0.8..0.0),
            ],
        };
        SyntheticSubject {
            subject_id,
            base_shape: norm.points().to_vec(),
            expression_basis,
            depth: depth.iter().map(|z| z * affine.scale).collect(),
            appearance,
        }
    }

    /// Shape before rotation and normalization.
    pub fn deformed(&self, expr_weights: &[f64]) -> Shape {
        let mut pts = self.base_shape.clone();
        for (w, b) in expr_weights.iter().zip(&self.expression_basis) {
            for (p, d) in pts.iter_mut().zip(b) {
                p[0] += w * d[0];
                p[1] += w * d[1];
            }
        }
        pts
    }
}

/// Applies a linearized head rotation `(pitch, yaw, roll)` and an
/// orthographic projection to `points`, then normalizes.
pub fn synth_sample(subject: &SyntheticSubject, pose: [f64; 3], expr_weights: &[f64], expr_bound: f64) -> Result<LandmarkSet> {
    if pose.iter().any(|a| !a.is_finite() || a.abs() > FRAC_PI_4) {
        return Err(Error::Precondition("rotation angles must lie within ±π/4".into()));
    }
    if expr_weights.len() != subject.expression_basis.len() {
        return Err(Error::Precondition(format!(
            "expected {} expression weights, got {}",
            subject.expression_basis.len(),
            expr_weights.len()
        )));
    }
    if expr_weights.iter().any(|w| !w.is_finite() || w.abs() > expr_bound) {
        return Err(Error::Precondition(format!("expression weights must lie within ±{expr_bound}")));
    }
    let [pitch, yaw, roll] = pose;
    let pts: Shape = subject
        .deformed(expr_weights)
        .iter()
        .zip(&subject.depth)
        .map(|(p, &z)| [p[0] + yaw * z - roll * p[1], p[1] + roll * p[0] - pitch * z])
        .collect();
    let raw = LandmarkSet::new(pts)?.with_ids(Some(subject.subject_id), None);
    Ok(normalize_landmarks(&raw)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub subjects: usize,
    pub frames_per_subject: usize,
    /// Bound on |expression weight|.
    pub expr_bound: f64,
    /// Bound on |rotation angle| in radians.
    pub pose_bound: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            subjects: 20,
            frames_per_subject: 200,
            expr_bound: 1.0,
            pose_bound: 0.3,
            seed: 0,
        }
    }
}

/// One pose/expression configuration, shared by all subjects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorClass {
    pub pose: [f64; 3],
    pub expr_weights: Vec<f64>,
}

/// A generated landmark and its ground-truth factors.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFrame {
    pub landmarks: LandmarkSet,
    pub subject: usize,
    pub class: usize,
}

/// Every subject rendered under every pose/expression class; frame `f` of
/// each subject uses class `f`.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    pub subjects: Vec<SyntheticSubject>,
    pub classes: Vec<FactorClass>,
    pub frames: Vec<LabeledFrame>,
}

impl SyntheticDataset {
    pub fn generate(config: &SyntheticConfig) -> Result<Self> {
        if config.subjects == 0 || config.frames_per_subject == 0 {
            return Err(Error::Precondition("need at least one subject and one frame".into()));
        }
        if config.pose_bound > FRAC_PI_4 {
            return Err(Error::Precondition("pose bound exceeds π/4".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let subjects: Vec<_> = (0..config.subjects)
            .map(|s| SyntheticSubject::random(s as u32, &mut rng))
            .collect();
        let classes: Vec<_> = (0..config.frames_per_subject)
            .map(|_| {
                let pose = [0, 1, 2].map(|_| rng.random_range(-config.pose_bound..=config.pose_bound));
                let expr_weights = (0..NUM_EXPRESSIONS)
                    .map(|_| rng.random_range(-config.expr_bound..=config.expr_bound))
                    .collect();
                FactorClass { pose, expr_weights }
            })
            .collect();
        let mut frames = Vec::with_capacity(subjects.len() * classes.len());
        for (s, subj) in subjects.iter().enumerate() {
            for (c, class) in classes.iter().enumerate() {
                let lms = synth_sample(subj, class.pose, &class.expr_weights, config.expr_bound)?
                    .with_ids(Some(subj.subject_id), Some(c as u32));
                frames.push(LabeledFrame {
                    landmarks: lms,
                    subject: s,
                    class: c,
                });
            }
        }
        Ok(SyntheticDataset {
            config: config.clone(),
            subjects,
            classes,
            frames,
        })
    }

    pub fn landmark_dataset(&self) -> LandmarkDataset {
        LandmarkDataset::new(self.frames.iter().map(|f| f.landmarks.clone()).collect()).expect("labelled frames")
    }

    pub fn render(&self, frame: &LabeledFrame, size: usize) -> Result<PortraitFrame> {
        render_portrait(&self.subjects[frame.subject], &frame.landmarks, size)
    }
}

/// Normalized landmark sets grouped by subject.
#[derive(Clone, Debug)]
pub struct LandmarkDataset {
    frames: Vec<LandmarkSet>,
    by_subject: BTreeMap<u32, Vec<usize>>,
    labels: BTreeMap<u32, usize>,
}

impl LandmarkDataset {
    /// Every set must be normalized and carry a subject id.
    pub fn new(frames: Vec<LandmarkSet>) -> Result<Self> {
        let mut by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, f) in frames.iter().enumerate() {
            if !f.is_normalized() {
                return Err(Error::NotNormalized);
            }
            let s = f
                .subject_id
                .ok_or_else(|| Error::Precondition(format!("frame {i} has no subject id")))?;
            by_subject.entry(s).or_default().push(i);
        }
        let labels = by_subject.keys().enumerate().map(|(k, &s)| (s, k)).collect();
        Ok(LandmarkDataset {
            frames,
            by_subject,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[LandmarkSet] {
        &self.frames
    }

    pub fn num_subjects(&self) -> usize {
        self.by_subject.len()
    }

    pub fn subject_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.by_subject.keys().copied()
    }

    pub fn frames_of(&self, subject_id: u32) -> &[usize] {
        self.by_subject.get(&subject_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Dense class label `0..num_subjects` of a subject id.
    pub fn label_of(&self, subject_id: u32) -> Option<usize> {
        self.labels.get(&subject_id).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    SameSubject,
    CrossSubject,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub l_a: LandmarkSet,
    pub l_b: LandmarkSet,
    pub same_subject: bool,
    /// Dense label of `l_a`'s subject.
    pub identity_label: usize,
}

/// Draws two frames of one subject, or frames of two different subjects.
pub fn sample_pair<R: Rng + ?Sized>(dataset: &LandmarkDataset, mode: PairMode, rng: &mut R) -> Result<PairSample> {
    if dataset.num_subjects() < 2 {
        return Err(Error::InsufficientData("need at least two subjects".into()));
    }
    let (ia, ib) = match mode {
        PairMode::SameSubject => {
            let eligible: Vec<&Vec<usize>> = dataset.by_subject.values().filter(|v| v.len() >= 2).collect();
            if eligible.is_empty() {
                return Err(Error::InsufficientData("no subject has two frames".into()));
            }
            let frames = eligible[rng.random_range(0..eligible.len())];
            let a = rng.random_range(0..frames.len());
            let mut b = rng.random_range(0..frames.len() - 1);
            if b >= a {
                b += 1;
            }
            (frames[a], frames[b])
        }
        PairMode::CrossSubject => {
            let subjects: Vec<u32> = dataset.by_subject.keys().copied().collect();
            let a = rng.random_range(0..subjects.len());
            let mut b = rng.random_range(0..subjects.len() - 1);
            if b >= a {
                b += 1;
            }
            let fa = &dataset.by_subject[&subjects[a]];
            let fb = &dataset.by_subject[&subjects[b]];
            (fa[rng.random_range(0..fa.len())], fb[rng.random_range(0..fb.len())])
        }
    };
    let l_a = dataset.frames[ia].clone();
    let l_b = dataset.frames[ib].clone();
    let identity_label = dataset.labels[&l_a.subject_id.unwrap()];
    Ok(PairSample {
        same_subject: l_a.subject_id == l_b.subject_id,
        l_a,
        l_b,
        identity_label,
    })
}

fn smoothstep(edge: f64, d: f64) -> f64 {
    // d is a signed distance, negative inside; edge is the half-width in px
    (0.5 - d / (2.0 * edge)).clamp(0.0, 1.0)
}

fn polygon_signed_distance(c: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    let mut inside = false;
    let mut dmin = f64::INFINITY;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a[1] > c[1]) != (b[1] > c[1]) {
            let x = a[0] + (c[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if c[0] < x {
                inside = !inside;
            }
        }
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 > 0.0 {
            (((c[0] - a[0]) * d[0] + (c[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = [a[0] + t * d[0] - c[0], a[1] + t * d[1] - c[1]];
        dmin = dmin.min((q[0] * q[0] + q[1] * q[1]).sqrt());
    }
    if inside {
        -dmin
    } else {
        dmin
    }
}

fn polyline_distance(c: [f64; 2], line: &[[f64; 2]]) -> f64 {
    line.windows(2)
        .map(|w| polygon_signed_distance(c, w).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Paints a stylised face for `subject` posed as `lms` (normalized).
pub fn render_portrait(subject: &SyntheticSubject, lms: &LandmarkSet, size: usize) -> Result<PortraitFrame> {
    if !lms.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let px: Vec<[f64; 2]> = lms.points().iter().map(|&p| to_pixel(p, size)).collect();
    let scale = size as f64 * crate::landmarks::FACE_HALF_EXTENT;
    let edge = (size as f64 / 64.0).max(0.75);

    let brow_top = px[17..27].iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let jaw_top = px[0][1].min(px[16][1]);
    let forehead = brow_top - 0.35 * scale;
    let mut face: Vec<[f64; 2]> = px[0..17].to_vec();
    let (l, r) = (px[0], px[16]);
    let (cx, ry) = ((l[0] + r[0]) / 2.0, (r[0] - l[0]) / 2.0);
    for k in 1..12 {
        let t = PI * k as f64 / 12.0;
        face.push([cx + ry * t.cos(), jaw_top - (jaw_top - forehead) * t.sin()]);
    }
    let eyes = [&px[36..42], &px[42..48]];
    let eye_centers: Vec<[f64; 2]> = eyes
        .iter()
        .map(|e| {
            let n = e.len() as f64;
            [e.iter().map(|p| p[0]).sum::<f64>() / n, e.iter().map(|p| p[1]).sum::<f64>() / n]
        })
        .collect();
    let iris_r = 0.045 * scale;
    let brow_w = 0.035 * scale;
    let nose_w = 0.015 * scale;

    let a = &subject.appearance;
    let s = size as f64;
    let mut pixels = vec![0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let c = [x as f64 + 0.5, y as f64 + 0.5];
            let shade = 0.15 * (c[1] / s - 0.5);
            let mut col = [
                a.background[0] as f64 - shade,
                a.background[1] as f64 - shade,
                a.background[2] as f64 - shade,
            ];
            let mut blend = |target: [f32; 3], alpha: f64| {
                for k in 0..3 {
                    col[k] += alpha * (target[k] as f64 - col[k]);
                }
            };
            blend(a.skin, smoothstep(edge, polygon_signed_distance(c, &face)));
            for brow in [&px[17..22], &px[22..27]] {
                blend(a.brows, smoothstep(edge, polyline_distance(c, brow) - brow_w));
            }
            blend(
                [-0.6, -0.7, -0.7],
                0.6 * smoothstep(edge, polyline_distance(c, &px[27..36]) - nose_w),
            );
            for (e, ec) in eyes.iter().zip(&eye_centers) {
                let inside = smoothstep(edge, polygon_signed_distance(c, e));
                blend([0.9, 0.9, 0.85], inside);
                let di = ((c[0] - ec[0]).powi(2) + (c[1] - ec[1]).powi(2)).sqrt() - iris_r;
                blend(a.iris, inside * smoothstep(edge, di));
            }
            blend(a.lips, smoothstep(edge, polygon_signed_distance(c, &px[48..60])));
            blend([-0.8, -0.9, -0.9], smoothstep(edge, polygon_signed_distance(c, &px[60..68])));
            for k in 0..3 {
                pixels[(k * size + y) * size + x] = col[k].clamp(-1.0, 1.0) as f32;
            }
        }
    }
    Ok(PortraitFrame {
        size,
        pixels,
        subject_id: lms.subject_id.or(Some(subject.subject_id)),
        frame_id: lms.frame_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_face_is_mirror_symmetric() {
        let f = LandmarkSet::new(mean_face()).unwrap();
        let m = f.mirrored();
        for (p, q) in f.points().iter().zip(m.points()) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn expression_bases_are_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SyntheticSubject::random(0, &mut rng);
        for b in &s.expression_basis {
            let sx: f64 = b.iter().map(|p| p[0]).sum();
            let sy: f64 = b.iter().map(|p| p[1]).sum();
            assert!(sx.abs() < 1e-12 && sy.abs() < 1e-12);
        }
    }
}
