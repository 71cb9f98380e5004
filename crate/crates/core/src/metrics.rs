//! Image and latent-space evaluation metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::PortraitFrame;
use crate::landmarks::{normalize_landmarks, LandmarkSet};
use crate::ldnet::{self, LdNetParams};
use crate::synth::{self, SyntheticDataset};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const FID_EPS: f64 = 1e-6;
const EIG_CLAMP: f64 = -1e-8;

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filtering over the valid region.
fn filter(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity of two single-channel planes with the given
/// dynamic range.
pub fn ssim_plane(a: &[f64], b: &[f64], width: usize, height: usize, data_range: f64) -> Result<f64> {
    if a.len() != width * height || b.len() != a.len() {
        return Err(Error::Shape("SSIM planes must match the stated size".into()));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::Shape(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")));
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let k = gaussian_window();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mu_a, ow, oh) = filter(a, width, height, &k);
    let (mu_b, _, _) = filter(b, width, height, &k);
    let (aa, _, _) = filter(&prod(a, a), width, height, &k);
    let (bb, _, _) = filter(&prod(b, b), width, height, &k);
    let (ab, _, _) = filter(&prod(a, b), width, height, &k);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / (ow * oh) as f64)
}

/// SSIM over the three channels of two portraits, averaged. Pixels are
/// mapped to the display range [0, 1] first.
pub fn ssim(a: &PortraitFrame, b: &PortraitFrame) -> Result<f64> {
    if a.size != b.size {
        return Err(Error::Shape(format!("frames are {} and {} pixels wide", a.size, b.size)));
    }
    let n = a.size * a.size;
    let mut sum = 0.0;
    for c in 0..3 {
        let display = |f: &PortraitFrame| -> Vec<f64> { f.pixels[c * n..(c + 1) * n].iter().map(|&v| (v as f64 + 1.0) / 2.0).collect() };
        sum += ssim_plane(&display(a), &display(b), a.size, a.size, 1.0)?;
    }
    Ok(sum / 3.0)
}

fn moments(samples: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.len();
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::Shape("feature vectors differ in length".into()));
    }
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += DVector::from_column_slice(s);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = DVector::from_column_slice(s) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

fn eigen_sym(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
    Ok(e)
}

fn clamp_eigs(values: &DVector<f64>) -> Result<DVector<f64>> {
    values
        .iter()
        .map(|&v| {
            if v >= 0.0 {
                Ok(v)
            } else if v > EIG_CLAMP {
                Ok(0.0)
            } else {
                Err(Error::Numerical(format!("matrix square root of indefinite matrix (eigenvalue {v:e})")))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(DVector::from_vec)
}

/// Fréchet distance between Gaussians fitted to two feature sets.
pub fn fid(features_real: &[Vec<f64>], features_gen: &[Vec<f64>]) -> Result<f64> {
    if features_real.len() < 2 || features_gen.len() < 2 {
        return Err(Error::InsufficientData("FID needs at least two samples per side".into()));
    }
    if features_real[0].len() != features_gen[0].len() {
        return Err(Error::Shape("feature dimensions differ".into()));
    }
    let (m1, mut s1) = moments(features_real)?;
    let (m2, mut s2) = moments(features_gen)?;
    let d = m1.len();
    s1 += DMatrix::identity(d, d) * FID_EPS;
    s2 += DMatrix::identity(d, d) * FID_EPS;
    let e1 = eigen_sym(&s1)?;
    let root1 = &e1.eigenvectors
        * DMatrix::from_diagonal(&clamp_eigs(&e1.eigenvalues)?.map(f64::sqrt))
        * e1.eigenvectors.transpose();
    let inner = eigen_sym(&(&root1 * &s2 * &root1))?;
    let tr_sqrt: f64 = clamp_eigs(&inner.eigenvalues)?.iter().map(|v| v.sqrt()).sum();
    let diff = (&m1 - &m2).norm_squared();
    Ok((diff + s1.trace() + s2.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// Average-pooled pixels on a `grid`×`grid` raster per channel; a fixed,
/// model-free feature map for FID at desk scale.
pub fn pooled_pixel_features(frame: &PortraitFrame, grid: usize) -> Vec<f64> {
    let s = frame.size;
    let mut out = vec![0.0; 3 * grid * grid];
    let mut count = vec![0usize; grid * grid];
    for y in 0..s {
        for x in 0..s {
            let cell = (y * grid / s) * grid + x * grid / s;
            count[cell] += 1;
            for c in 0..3 {
                out[c * grid * grid + cell] += frame.get(c, y, x) as f64;
            }
        }
    }
    for c in 0..3 {
        for cell in 0..grid * grid {
            out[c * grid * grid + cell] /= count[cell].max(1) as f64;
        }
    }
    out
}

/// Cosine similarity in [-1, 1]; two zero vectors count as identical.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    if a == b {
        return 1.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// A face to be measured: the image and, when known, its landmarks.
#[derive(Clone, Copy, Debug)]
pub struct FaceSample<'a> {
    pub image: &'a PortraitFrame,
    pub landmarks: Option<&'a LandmarkSet>,
}

/// Identity embedding, unit length.
pub trait EmbeddingProvider {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, face: FaceSample<'_>) -> Result<Vec<f64>>;
    fn concurrent_safe(&self) -> bool {
        false
    }
}

/// Head rotation `(pitch, yaw, roll)` in radians.
pub trait PoseProvider {
    fn id(&self) -> &str;
    fn pose(&self, face: FaceSample<'_>) -> Result<[f64; 3]>;
    fn concurrent_safe(&self) -> bool {
        false
    }
}

/// Facial action-unit intensities.
pub trait AuProvider {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn intensities(&self, face: FaceSample<'_>) -> Result<Vec<f64>>;
    fn concurrent_safe(&self) -> bool {
        false
    }
}

pub fn isim(a: FaceSample<'_>, b: FaceSample<'_>, provider: Option<&dyn EmbeddingProvider>) -> Result<f64> {
    let p = provider.ok_or_else(|| Error::ProviderMissing("identity embedding".into()))?;
    Ok(cosine_similarity(&p.embed(a)?, &p.embed(b)?))
}

pub fn psim(a: FaceSample<'_>, b: FaceSample<'_>, provider: Option<&dyn PoseProvider>) -> Result<f64> {
    let p = provider.ok_or_else(|| Error::ProviderMissing("head pose".into()))?;
    Ok(cosine_similarity(&p.pose(a)?, &p.pose(b)?))
}

pub fn expression_distance(a: FaceSample<'_>, b: FaceSample<'_>, provider: Option<&dyn AuProvider>) -> Result<f64> {
    let p = provider.ok_or_else(|| Error::ProviderMissing("action units".into()))?;
    let (x, y) = (p.intensities(a)?, p.intensities(b)?);
    if x.len() != y.len() {
        return Err(Error::Shape("action-unit vectors differ in length".into()));
    }
    Ok(x.iter().zip(&y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt())
}

/// Estimates head rotation from landmarks by least-squares fitting a
/// similarity transform plus linearized out-of-plane rotation of the mean
/// face.
#[derive(Clone, Debug)]
pub struct LandmarkPoseProvider {
    template: Vec<[f64; 2]>,
    depth: Vec<f64>,
}

impl Default for LandmarkPoseProvider {
    fn default() -> Self {
        let raw = LandmarkSet::new(synth::mean_face()).expect("mean face");
        let (norm, affine) = normalize_landmarks(&raw).expect("mean face");
        let depth = synth::mean_depth().iter().map(|z| z * affine.scale).collect::<Vec<_>>();
        let zm = depth.iter().sum::<f64>() / depth.len() as f64;
        LandmarkPoseProvider {
            template: norm.points().to_vec(),
            depth: depth.into_iter().map(|z| z - zm).collect(),
        }
    }
}

impl LandmarkPoseProvider {
    pub fn estimate(&self, lms: &LandmarkSet) -> Result<[f64; 3]> {
        let pts = lms.points();
        let n = pts.len();
        // unknowns: a, b, tx, ty, c, d
        let mut a = DMatrix::zeros(2 * n, 6);
        let mut y = DVector::zeros(2 * n);
        for i in 0..n {
            let [mx, my] = self.template[i];
            let z = self.depth[i];
            a.row_mut(2 * i).copy_from_slice(&[mx, -my, 1.0, 0.0, z, 0.0]);
            a.row_mut(2 * i + 1).copy_from_slice(&[my, mx, 0.0, 1.0, 0.0, -z]);
            y[2 * i] = pts[i][0];
            y[2 * i + 1] = pts[i][1];
        }
        let sol = a
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        let s = sol[0].hypot(sol[1]);
        if s <= 0.0 {
            return Err(Error::DegenerateLandmarks);
        }
        Ok([sol[5] / s, sol[4] / s, sol[1].atan2(sol[0])])
    }
}

impl PoseProvider for LandmarkPoseProvider {
    fn id(&self) -> &str {
        "landmark-geometric"
    }

    fn pose(&self, face: FaceSample<'_>) -> Result<[f64; 3]> {
        let lms = face
            .landmarks
            .ok_or_else(|| Error::ProviderMissing("landmark-geometric pose needs landmarks".into()))?;
        self.estimate(lms)
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Mean distances per sampling pattern in one latent space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternMeans {
    pub same_identity: f64,
    pub same_pose_expr: f64,
    pub both_different: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub identity_space: PatternMeans,
    pub pose_expr_space: PatternMeans,
    pub samples: usize,
}

/// Landmark sets with identity and pose/expression class labels.
#[derive(Clone, Debug)]
pub struct FactorLabeled {
    pub landmarks: Vec<LandmarkSet>,
    pub identity: Vec<usize>,
    pub class: Vec<usize>,
}

impl From<&SyntheticDataset> for FactorLabeled {
    fn from(d: &SyntheticDataset) -> Self {
        FactorLabeled {
            landmarks: d.frames.iter().map(|f| f.landmarks.clone()).collect(),
            identity: d.frames.iter().map(|f| f.subject).collect(),
            class: d.frames.iter().map(|f| f.class).collect(),
        }
    }
}

/// Projects rows onto their top `k` principal directions.
pub fn pca_project(codes: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    let (n, d) = codes.dim();
    if n < 2 {
        return Err(Error::InsufficientData("PCA needs at least two rows".into()));
    }
    let mean = codes.mean_axis(ndarray::Axis(0)).unwrap();
    let centered = codes - &mean;
    let m = DMatrix::from_row_iterator(n, d, centered.iter().copied());
    let cov = (m.transpose() * &m) / (n - 1) as f64;
    let e = eigen_sym(&cov)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| e.eigenvalues[j].total_cmp(&e.eigenvalues[i]).then(i.cmp(&j)));
    let k = k.min(d);
    let basis = DMatrix::from_fn(d, k, |r, c| e.eigenvectors[(r, order[c])]);
    let proj = m * basis;
    Ok(Array2::from_shape_fn((n, k), |(r, c)| proj[(r, c)]))
}

fn row_distance(a: &Array2<f64>, i: usize, j: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(a.row(j).iter())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Encodes every landmark with `E_I` and `E_P`, reduces each space to 8
/// dimensions by PCA fit on all codes, and averages pair distances under the
/// three sampling patterns.
pub fn latent_distance_eval(params: &LdNetParams, data: &FactorLabeled, n_pairs: usize, seed: u64) -> Result<DistanceReport> {
    let n = data.landmarks.len();
    if data.identity.len() != n || data.class.len() != n {
        return Err(Error::Shape("one identity and class label per landmark set".into()));
    }
    let mut ids: Vec<usize> = data.identity.clone();
    ids.sort_unstable();
    ids.dedup();
    let mut classes: Vec<usize> = data.class.clone();
    classes.sort_unstable();
    classes.dedup();
    if ids.len() < 2 || classes.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least two subjects and two pose/expression classes".into(),
        ));
    }
    let refs: Vec<&LandmarkSet> = data.landmarks.iter().collect();
    let rows = ldnet::stack_landmarks(&refs)?;
    let id_codes = pca_project(&ldnet::encode_identity_batch(&rows, params)?, 8)?;
    let pe_codes = pca_project(&ldnet::encode_pose_expr_batch(&rows, params)?, 8)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = |want_same_id: bool, want_same_class: bool| -> Result<(f64, f64)> {
        let (mut di, mut dp) = (0.0, 0.0);
        let mut found = 0;
        let mut attempts = 0usize;
        while found < n_pairs {
            attempts += 1;
            if attempts > 1000 * n_pairs.max(1) + 100_000 {
                return Err(Error::InsufficientData("too few pairs match a sampling pattern".into()));
            }
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j
                || (data.identity[i] == data.identity[j]) != want_same_id
                || (data.class[i] == data.class[j]) != want_same_class
            {
                continue;
            }
            di += row_distance(&id_codes, i, j);
            dp += row_distance(&pe_codes, i, j);
            found += 1;
        }
        let m = n_pairs.max(1) as f64;
        Ok((di / m, dp / m))
    };
    let same_id = sample(true, false)?;
    let same_pe = sample(false, true)?;
    let diff = sample(false, false)?;
    Ok(DistanceReport {
        identity_space: PatternMeans {
            same_identity: same_id.0,
            same_pose_expr: same_pe.0,
            both_different: diff.0,
        },
        pose_expr_space: PatternMeans {
            same_identity: same_id.1,
            same_pose_expr: same_pe.1,
            both_different: diff.1,
        },
        samples: n_pairs,
    })
}
