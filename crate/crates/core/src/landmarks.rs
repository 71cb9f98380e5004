//! 68-point facial landmarks: validation, normalization, rasterization and
//! the delimited text format.

use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 68;

/// Half-width of the normalized face, as a fraction of the image side, when
/// drawn into the canonical crop.
pub const FACE_HALF_EXTENT: f64 = 0.4;

const IDENTITY_TOL: f64 = 1e-12;

/// The standard 68-point contour groups, with whether each is closed.
pub const CONTOURS: [(Range<usize>, bool); 9] = [
    (0..17, false),  // jaw
    (17..22, false), // left brow
    (22..27, false), // right brow
    (27..31, false), // nose bridge
    (31..36, false), // nose base
    (36..42, true),  // left eye
    (42..48, true),  // right eye
    (48..60, true),  // outer lip
    (60..68, true),  // inner lip
];

/// Index of each point's horizontal mirror partner.
pub const MIRROR: [usize; NUM_LANDMARKS] = {
    let mut m = [0usize; NUM_LANDMARKS];
    let mut i = 0;
    while i < 17 {
        m[i] = 16 - i;
        i += 1;
    }
    let pairs: [(usize, usize); 21] = [
        (17, 26),
        (18, 25),
        (19, 24),
        (20, 23),
        (21, 22),
        (31, 35),
        (32, 34),
        (36, 45),
        (37, 44),
        (38, 43),
        (39, 42),
        (40, 47),
        (41, 46),
        (48, 54),
        (49, 53),
        (50, 52),
        (55, 59),
        (56, 58),
        (60, 64),
        (61, 63),
        (65, 67),
    ];
    let mut p = 0;
    while p < pairs.len() {
        m[pairs[p].0] = pairs[p].1;
        m[pairs[p].1] = pairs[p].0;
        p += 1;
    }
    let fixed = [27, 28, 29, 30, 33, 51, 57, 62, 66];
    let mut f = 0;
    while f < fixed.len() {
        m[fixed[f]] = fixed[f];
        f += 1;
    }
    m
};

/// A face's 68 landmark points with optional provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
    pub subject_id: Option<u32>,
    pub frame_id: Option<u32>,
    normalized: bool,
}

impl LandmarkSet {
    /// Raw points. Fails unless there are exactly 68 finite points.
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::LandmarkCount {
                expected: NUM_LANDMARKS,
                found: points.len(),
            });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("landmark coordinates must be finite".into()));
        }
        Ok(LandmarkSet {
            points,
            subject_id: None,
            frame_id: None,
            normalized: false,
        })
    }

    /// From 136 interleaved coordinates `x0 y0 x1 y1 ...`.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if coords.len() != 2 * NUM_LANDMARKS {
            return Err(Error::LandmarkCount {
                expected: NUM_LANDMARKS,
                found: coords.len() / 2,
            });
        }
        Self::new(coords.chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    /// Points already in the normalized frame. Fails if they are not.
    pub fn new_normalized(points: Vec<[f64; 2]>) -> Result<Self> {
        let mut s = Self::new(points)?;
        if !is_normalized_points(&s.points, 1e-6) {
            return Err(Error::NotNormalized);
        }
        s.normalized = true;
        Ok(s)
    }

    pub fn with_ids(mut self, subject_id: Option<u32>, frame_id: Option<u32>) -> Self {
        self.subject_id = subject_id;
        self.frame_id = frame_id;
        self
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    /// Horizontal reflection about x = 0 with left/right indices swapped.
    pub fn mirrored(&self) -> LandmarkSet {
        let points = (0..NUM_LANDMARKS)
            .map(|i| {
                let p = self.points[MIRROR[i]];
                [-p[0], p[1]]
            })
            .collect();
        LandmarkSet { points, ..self.clone() }
    }
}

/// Similarity transform `out = scale * p + translate`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub translate: [f64; 2],
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        scale: 1.0,
        translate: [0.0, 0.0],
    };

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.scale * p[0] + self.translate[0],
            self.scale * p[1] + self.translate[1],
        ]
    }

    pub fn inverse(&self) -> Affine {
        Affine {
            scale: 1.0 / self.scale,
            translate: [-self.translate[0] / self.scale, -self.translate[1] / self.scale],
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.scale - 1.0).abs() <= tol && self.translate.iter().all(|t| t.abs() <= tol)
    }
}

fn bbox(points: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

fn is_normalized_points(points: &[[f64; 2]], tol: f64) -> bool {
    let (lo, hi) = bbox(points);
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let side = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    (side - 2.0).abs() <= tol && center.iter().all(|c| c.abs() <= tol)
}

/// The similarity that maps the bounding square of `points` onto [-1, 1]².
pub fn normalizing_affine(points: &[[f64; 2]]) -> Result<Affine> {
    let (lo, hi) = bbox(points);
    let side = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if !side.is_finite() || side <= f64::EPSILON * (1.0 + lo[0].abs().max(lo[1].abs())) {
        return Err(Error::DegenerateLandmarks);
    }
    let scale = 2.0 / side;
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    Ok(Affine {
        scale,
        translate: [-scale * center[0], -scale * center[1]],
    })
}

/// Centers the set on its bounding box and scales it isotropically so the
/// longer side spans [-1, 1]. Returns the normalized set and the applied
/// transform.
pub fn normalize_landmarks(raw: &LandmarkSet) -> Result<(LandmarkSet, Affine)> {
    let affine = normalizing_affine(&raw.points)?;
    if affine.is_identity(IDENTITY_TOL) {
        let mut out = raw.clone();
        out.normalized = true;
        return Ok((out, Affine::IDENTITY));
    }
    let points = raw.points.iter().map(|&p| affine.apply(p)).collect();
    Ok((
        LandmarkSet {
            points,
            subject_id: raw.subject_id,
            frame_id: raw.frame_id,
            normalized: true,
        },
        affine,
    ))
}

/// Single-channel landmark drawing with intensities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkImage {
    pub size: usize,
    pub pixels: Vec<f32>,
}

impl LandmarkImage {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.size + x]
    }
}

/// Maps a normalized coordinate to continuous pixel coordinates of the
/// canonical crop; pixel `i` covers `[i, i + 1)`.
pub fn to_pixel(p: [f64; 2], size: usize) -> [f64; 2] {
    let s = size as f64;
    [s / 2.0 + p[0] * s * FACE_HALF_EXTENT, s / 2.0 + p[1] * s * FACE_HALF_EXTENT]
}

fn segment_distance(c: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((c[0] - a[0]) * d[0] + (c[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0] - c[0], a[1] + t * d[1] - c[1]];
    (q[0] * q[0] + q[1] * q[1]).sqrt()
}

/// Draws the contour groups as anti-aliased one-pixel polylines.
pub fn rasterize(lms: &LandmarkSet, size: usize) -> Result<LandmarkImage> {
    if !lms.normalized {
        return Err(Error::NotNormalized);
    }
    if size == 0 {
        return Err(Error::Precondition("image size must be positive".into()));
    }
    let px: Vec<[f64; 2]> = lms.points.iter().map(|&p| to_pixel(p, size)).collect();
    let mut pixels = vec![0f32; size * size];
    for (range, closed) in CONTOURS.iter() {
        let idx: Vec<usize> = range.clone().collect();
        let mut segs: Vec<(usize, usize)> = idx.windows(2).map(|w| (w[0], w[1])).collect();
        if *closed {
            segs.push((idx[idx.len() - 1], idx[0]));
        }
        for (i, j) in segs {
            draw_segment(&mut pixels, size, px[i], px[j]);
        }
    }
    Ok(LandmarkImage { size, pixels })
}

fn draw_segment(pixels: &mut [f32], size: usize, a: [f64; 2], b: [f64; 2]) {
    let clampi = |v: f64| v.clamp(0.0, size as f64) as usize;
    let x0 = clampi(a[0].min(b[0]) - 1.5);
    let x1 = clampi(a[0].max(b[0]) + 1.5);
    let y0 = clampi(a[1].min(b[1]) - 1.5);
    let y1 = clampi(a[1].max(b[1]) + 1.5);
    for y in y0..y1.min(size) {
        for x in x0..x1.min(size) {
            let d = segment_distance([x as f64 + 0.5, y as f64 + 0.5], a, b);
            let v = (1.0 - d).clamp(0.0, 1.0) as f32;
            let p = &mut pixels[y * size + x];
            if v > *p {
                *p = v;
            }
        }
    }
}

/// One row of a landmark file.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkRecord {
    pub subject_id: u32,
    pub frame_id: u32,
    pub landmarks: LandmarkSet,
}

/// Reads comma-separated records `subject_id,frame_id,x0,y0,...,x67,y67`.
///
/// An optional first line that does not start with an integer is a header;
/// if it contains the word `normalized` the coordinates are taken to be in
/// the normalized frame and are validated as such.
pub fn read_landmarks<R: Read>(reader: R) -> Result<Vec<LandmarkRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut normalized = false;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        let first = rec.get(0).unwrap_or("");
        if i == 0 && first.parse::<u64>().is_err() {
            normalized = rec.iter().any(|f| f.to_ascii_lowercase().contains("normalized"));
            continue;
        }
        if rec.len() != 2 + 2 * NUM_LANDMARKS {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", 2 + 2 * NUM_LANDMARKS, rec.len()),
            });
        }
        let parse_id = |k: usize, what: &str| {
            rec[k].parse::<u32>().map_err(|_| Error::Parse {
                line,
                message: format!("invalid {what} {:?}", &rec[k]),
            })
        };
        let subject_id = parse_id(0, "subject id")?;
        let frame_id = parse_id(1, "frame id")?;
        let mut coords = Vec::with_capacity(2 * NUM_LANDMARKS);
        for k in 2..rec.len() {
            let v = rec[k].parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("invalid coordinate {:?} in field {}", &rec[k], k + 1),
            })?;
            coords.push(v);
        }
        let points: Vec<[f64; 2]> = coords.chunks(2).map(|c| [c[0], c[1]]).collect();
        let set = if normalized {
            LandmarkSet::new_normalized(points)
        } else {
            LandmarkSet::new(points)
        }
        .map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push(LandmarkRecord {
            subject_id,
            frame_id,
            landmarks: set.with_ids(Some(subject_id), Some(frame_id)),
        });
    }
    Ok(out)
}

/// Writes records in the format read by [`read_landmarks`], with a header.
pub fn write_landmarks<W: Write>(writer: W, records: &[LandmarkRecord]) -> Result<()> {
    let normalized = !records.is_empty() && records.iter().all(|r| r.landmarks.normalized);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let mut header = vec![
        if normalized { "subject_id normalized" } else { "subject_id" }.to_string(),
        "frame_id".to_string(),
    ];
    for i in 0..NUM_LANDMARKS {
        header.push(format!("x{i}"));
        header.push(format!("y{i}"));
    }
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.subject_id.to_string(), r.frame_id.to_string()];
        row.extend(r.landmarks.flat().iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_is_an_involution() {
        for i in 0..NUM_LANDMARKS {
            assert_eq!(MIRROR[MIRROR[i]], i);
        }
        assert_eq!(MIRROR[0], 16);
        assert_eq!(MIRROR[36], 45);
        assert_eq!(MIRROR[33], 33);
    }

    #[test]
    fn affine_inverse_round_trips() {
        let a = Affine {
            scale: 0.25,
            translate: [3.0, -1.0],
        };
        let p = [7.0, 2.5];
        let q = a.inverse().apply(a.apply(p));
        assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
    }
}
