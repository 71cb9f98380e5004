use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reenact_core::landmarks::*;
use reenact_core::synth::*;
use reenact_core::Error;

fn raw_square_face() -> LandmarkSet {
    let mut pts: Vec<[f64; 2]> = mean_face()
        .iter()
        .map(|p| [128.0 + 100.0 * p[0], 128.0 + 100.0 * p[1]])
        .collect();
    pts[0] = [0.0, 0.0];
    pts[16] = [256.0, 256.0];
    LandmarkSet::new(pts).unwrap()
}

fn base(seed: u64) -> LandmarkSet {
    let subj = SyntheticSubject::random(0, &mut ChaCha8Rng::seed_from_u64(seed));
    LandmarkSet::new_normalized(subj.base_shape).unwrap()
}

#[test]
fn normalized_input_is_returned_unchanged() {
    let face = base(3);
    let (out, affine) = normalize_landmarks(&face).unwrap();
    assert_eq!(affine, Affine::IDENTITY);
    assert_eq!(out.points(), face.points());
}

#[test]
fn pixel_square_maps_to_unit_square() {
    let (out, affine) = normalize_landmarks(&raw_square_face()).unwrap();
    assert!((affine.scale - 2.0 / 256.0).abs() < 1e-15);
    assert_eq!(affine.translate, [-1.0, -1.0]);
    assert_eq!(out.points()[0], [-1.0, -1.0]);
    assert_eq!(out.points()[16], [1.0, 1.0]);
    assert!(out.is_normalized());
}

#[test]
fn coincident_points_are_degenerate() {
    let set = LandmarkSet::new(vec![[3.0, 4.0]; NUM_LANDMARKS]).unwrap();
    let err = normalize_landmarks(&set).unwrap_err();
    assert!(matches!(err, Error::DegenerateLandmarks));
    assert_eq!(err.to_string(), "degenerate landmark set");
}

#[test]
fn wrong_point_count_is_rejected() {
    assert!(matches!(
        LandmarkSet::new(vec![[0.0, 0.0]; 67]),
        Err(Error::LandmarkCount { expected: 68, found: 67 })
    ));
}

proptest! {
    #[test]
    fn affine_record_inverts_normalization(
        coords in prop::collection::vec(-500.0f64..500.0, 2 * NUM_LANDMARKS),
    ) {
        let raw = LandmarkSet::from_flat(&coords).unwrap();
        prop_assume!(normalizing_affine(raw.points()).is_ok());
        let (norm, affine) = normalize_landmarks(&raw).unwrap();
        let inv = affine.inverse();
        for (n, r) in norm.points().iter().zip(raw.points()) {
            let back = inv.apply(*n);
            prop_assert!((back[0] - r[0]).abs() < 1e-9 && (back[1] - r[1]).abs() < 1e-9);
        }
        let (again, _) = normalize_landmarks(&norm).unwrap();
        prop_assert_eq!(again.points(), norm.points());
    }
}

#[test]
fn raster_is_nonempty_and_deterministic() {
    let face = base(1);
    let a = rasterize(&face, 256).unwrap();
    let b = rasterize(&face, 256).unwrap();
    assert_eq!(a.size, 256);
    assert_eq!(a.pixels.len(), 256 * 256);
    assert!(a.pixels.iter().filter(|&&v| v > 0.0).count() > 0);
    assert!(a.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(a.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn raster_rejects_raw_coordinates() {
    assert!(matches!(rasterize(&raw_square_face(), 64), Err(Error::NotNormalized)));
}

#[test]
fn mirrored_landmarks_draw_mirrored_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for s in 0..3 {
        let subj = SyntheticSubject::random(s, &mut rng);
        let lms = synth_sample(&subj, [0.1, -0.2, 0.05], &[0.3; NUM_EXPRESSIONS], 1.0).unwrap();
        let size = 128;
        let a = rasterize(&lms, size).unwrap();
        let b = rasterize(&lms.mirrored(), size).unwrap();
        for y in 0..size {
            for x in 0..size {
                let d = (a.get(x, y) - b.get(size - 1 - x, y)).abs();
                assert!(d < 1e-5, "pixel ({x},{y}) differs by {d}");
            }
        }
    }
}

#[test]
fn neutral_sample_is_base_shape() {
    let subj = SyntheticSubject::random(4, &mut ChaCha8Rng::seed_from_u64(4));
    let out = synth_sample(&subj, [0.0; 3], &[0.0; NUM_EXPRESSIONS], 1.0).unwrap();
    for (a, b) in out.points().iter().zip(&subj.base_shape) {
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }
    assert_eq!(out.subject_id, Some(4));
}

#[test]
fn opposite_weights_deform_symmetrically() {
    let subj = SyntheticSubject::random(2, &mut ChaCha8Rng::seed_from_u64(2));
    let w: Vec<f64> = (0..NUM_EXPRESSIONS).map(|j| 0.1 * j as f64 - 0.3).collect();
    let neg: Vec<f64> = w.iter().map(|v| -v).collect();
    let plus = subj.deformed(&w);
    let minus = subj.deformed(&neg);
    for ((p, m), b) in plus.iter().zip(&minus).zip(&subj.base_shape) {
        for k in 0..2 {
            assert!((p[k] + m[k] - 2.0 * b[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn random_draws_share_subject_and_differ_in_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let subj = SyntheticSubject::random(7, &mut rng);
    let a = synth_sample(&subj, [0.2, 0.1, 0.0], &[0.5; NUM_EXPRESSIONS], 1.0).unwrap();
    let b = synth_sample(&subj, [-0.1, 0.0, 0.2], &[-0.4; NUM_EXPRESSIONS], 1.0).unwrap();
    assert_eq!(a.subject_id, b.subject_id);
    assert_ne!(a.points(), b.points());
}

#[test]
fn synth_rejects_large_angles_and_weights() {
    let subj = SyntheticSubject::random(0, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(synth_sample(&subj, [0.0, 0.8, 0.0], &[0.0; NUM_EXPRESSIONS], 1.0).is_err());
    assert!(synth_sample(&subj, [0.0; 3], &[1.5; NUM_EXPRESSIONS], 1.0).is_err());
}

#[test]
fn generation_is_reproducible() {
    let cfg = SyntheticConfig {
        subjects: 3,
        frames_per_subject: 5,
        seed: 11,
        ..Default::default()
    };
    let a = SyntheticDataset::generate(&cfg).unwrap();
    let b = SyntheticDataset::generate(&cfg).unwrap();
    assert_eq!(a.frames, b.frames);
}

#[test]
fn expression_bases_are_zero_mean() {
    let subj = SyntheticSubject::random(0, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(subj.expression_basis.len(), NUM_EXPRESSIONS);
    for basis in &subj.expression_basis {
        let sx: f64 = basis.iter().map(|p| p[0]).sum();
        let sy: f64 = basis.iter().map(|p| p[1]).sum();
        assert!(sx.abs() < 1e-9 && sy.abs() < 1e-9);
    }
}

fn small(subjects: usize, frames: usize) -> LandmarkDataset {
    SyntheticDataset::generate(&SyntheticConfig {
        subjects,
        frames_per_subject: frames,
        seed: 1,
        ..Default::default()
    })
    .unwrap()
    .landmark_dataset()
}

#[test]
fn same_subject_pair_comes_from_one_subject() {
    let data = small(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let p = sample_pair(&data, PairMode::SameSubject, &mut rng).unwrap();
        assert!(p.same_subject);
        assert_eq!(p.l_a.subject_id, p.l_b.subject_id);
        assert_ne!(p.l_a.frame_id, p.l_b.frame_id);
    }
}

#[test]
fn same_subject_pair_needs_two_frames() {
    let data = small(2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(sample_pair(&data, PairMode::SameSubject, &mut rng).is_err());
    assert!(sample_pair(&small(1, 4), PairMode::CrossSubject, &mut rng).is_err());
}

#[test]
fn cross_subject_pairs_never_share_identity() {
    let data = small(3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut equal = 0;
    for _ in 0..10_000 {
        let p = sample_pair(&data, PairMode::CrossSubject, &mut rng).unwrap();
        if p.l_a.subject_id == p.l_b.subject_id {
            equal += 1;
        }
        assert!(!p.same_subject);
    }
    assert_eq!(equal, 0);
}

fn record_line(subject: u32, frame: u32, coords: &[f64]) -> String {
    let mut s = format!("{subject},{frame}");
    for c in coords {
        s.push_str(&format!(",{c}"));
    }
    s
}

#[test]
fn landmark_file_round_trip() {
    let data = small(2, 3);
    let records: Vec<LandmarkRecord> = data
        .frames()
        .iter()
        .map(|l| LandmarkRecord {
            subject_id: l.subject_id.unwrap(),
            frame_id: l.frame_id.unwrap(),
            landmarks: l.clone(),
        })
        .collect();
    let mut buf = Vec::new();
    write_landmarks(&mut buf, &records).unwrap();
    let back = read_landmarks(buf.as_slice()).unwrap();
    assert_eq!(back.len(), records.len());
    for (a, b) in back.iter().zip(&records) {
        assert_eq!(a.subject_id, b.subject_id);
        assert_eq!(a.frame_id, b.frame_id);
        assert_eq!(a.landmarks.points(), b.landmarks.points());
        assert!(a.landmarks.is_normalized());
    }
}

#[test]
fn short_record_reports_its_line() {
    let coords: Vec<f64> = (0..2 * NUM_LANDMARKS).map(|i| i as f64).collect();
    let text = format!(
        "{}\n{}\n{}\n",
        record_line(0, 0, &coords),
        record_line(0, 1, &coords),
        record_line(0, 2, &coords[..2 * 67])
    );
    match read_landmarks(text.as_bytes()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn raw_pixel_records_are_not_normalized() {
    let coords: Vec<f64> = (0..2 * NUM_LANDMARKS).map(|i| (i * 3 % 250) as f64).collect();
    let recs = read_landmarks(record_line(4, 9, &coords).as_bytes()).unwrap();
    assert_eq!(recs[0].subject_id, 4);
    assert_eq!(recs[0].frame_id, 9);
    assert!(!recs[0].landmarks.is_normalized());
}
