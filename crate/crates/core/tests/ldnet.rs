use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reenact_core::landmarks::{LandmarkSet, NUM_LANDMARKS};
use reenact_core::ldnet::*;
use reenact_core::losses;
use reenact_core::synth::{SyntheticConfig, SyntheticDataset};
use reenact_core::Error;
use reenact_tensor::gradcheck;
use reenact_tensor::{Binding, Graph};

fn scalar(g: &Graph<f64>, v: f64) -> reenact_tensor::Var<'_, f64> {
    g.constant(ArrayD::from_elem(IxDyn(&[]), v))
}

fn mat(rows: usize, cols: usize, v: Vec<f64>) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(&[rows, cols]), v).unwrap()
}

fn dataset(subjects: usize, frames: usize) -> SyntheticDataset {
    SyntheticDataset::generate(&SyntheticConfig {
        subjects,
        frames_per_subject: frames,
        seed: 5,
        ..Default::default()
    })
    .unwrap()
}

fn small_config(k: usize) -> LdNetConfig {
    LdNetConfig {
        hidden_layers: 2,
        hidden_width: 16,
        ..LdNetConfig::paper(k)
    }
}

#[test]
fn perfect_reconstruction_and_certain_classifier_give_zero() {
    let g = Graph::new();
    let l = g.constant(mat(2, 4, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8]));
    assert!(losses::point_recon(l, l).item().abs() < 1e-9);
    let logits = g.constant(mat(2, 3, vec![0.0, -1e3, -1e3, -1e3, 0.0, -1e3]));
    let l_c = losses::cross_entropy(logits, &[0, 1]).item();
    assert!(l_c.abs() < 1e-9, "{l_c}");
}

#[test]
fn uniform_classifier_costs_log_k() {
    for k in [2usize, 5, 20] {
        let g = Graph::new();
        let logits = g.constant(ArrayD::<f64>::zeros(IxDyn(&[3, k])));
        let l_c = losses::cross_entropy(logits, &[0, 1, k - 1]).item();
        assert!((l_c - (k as f64).ln()).abs() < 1e-9);
    }
}

#[test]
fn stage1_objective_matches_hand_evaluation() {
    let mut l = vec![0.0; 2 * NUM_LANDMARKS];
    let mut lp = l.clone();
    for (i, v) in l.iter_mut().enumerate() {
        *v = ((i * 7) % 13) as f64 / 13.0 - 0.5;
    }
    lp.copy_from_slice(&l);
    lp[10] += 0.03;
    lp[11] += 0.04;
    lp[50] -= 0.1;
    let mut per_point = 0.0;
    for p in 0..NUM_LANDMARKS {
        let dx = l[2 * p] - lp[2 * p];
        let dy = l[2 * p + 1] - lp[2 * p + 1];
        per_point += dx * dx + dy * dy;
    }
    per_point /= NUM_LANDMARKS as f64;

    let g = Graph::new();
    let recon = losses::point_recon(g.constant(mat(1, 2 * NUM_LANDMARKS, lp)), g.constant(mat(1, 2 * NUM_LANDMARKS, l)));
    assert!((recon.item() - per_point).abs() < 1e-15);
    let logits = g.constant(mat(1, 2, vec![0.0, 0.0]));
    let total = stage1_generator_objective(recon, losses::mean_log_prob(logits, &[0]), Stage1Weights::default());
    let expected = 1000.0 * per_point + 0.1 * 0.5f64.ln();
    assert!((total.item() - expected).abs() < 1e-12);
}

#[test]
fn critic_targets_give_zero_discriminator_loss() {
    let g = Graph::<f64>::new();
    let real = g.constant(ArrayD::from_elem(IxDyn(&[4, 1]), 1.0));
    let fake = g.constant(ArrayD::from_elem(IxDyn(&[4, 1]), -1.0));
    assert!(losses::lsgan_critic(real, fake).item().abs() < 1e-9);
}

#[test]
fn matching_codes_give_zero_content() {
    let g = Graph::new();
    let a = g.constant(mat(2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.25, 1.0]));
    assert!(losses::sq_distance(a, a).item().abs() < 1e-9);
}

#[test]
fn stage2_objective_matches_hand_evaluation() {
    let g = Graph::new();
    let d_fake = scalar(&g, 0.5);
    let logits = g.constant(ArrayD::zeros(IxDyn(&[1, 4])));
    let gen_dis = losses::lsgan_generator(d_fake);
    let gen_cls = losses::cross_entropy(logits, &[2]);
    let total = stage2_generator_objective(scalar(&g, 0.01), scalar(&g, 4.0), gen_dis, gen_cls, Stage2Weights::default());
    let expected = 1000.0 * 0.01 + 0.01 * 4.0 + 0.1 * 0.25 + 0.1 * -(0.25f64.ln());
    assert!((total.item() - expected).abs() < 1e-12);
}

#[test]
fn loss_weights_are_the_published_values() {
    let w1 = Stage1Weights::default();
    assert_eq!((w1.rec, w1.cls), (1000.0, 0.1));
    let w2 = Stage2Weights::default();
    assert_eq!((w2.rec, w2.cont, w2.dis, w2.cls), (1000.0, 0.01, 0.1, 0.1));
}

fn log_softmax_row(row: &[f64], k: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row[k] - lse
}

#[test]
fn classifier_loss_matches_scalar_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (b, k) = (rng.random_range(1..6), rng.random_range(2..7));
        let v: Vec<f64> = (0..b * k).map(|_| rng.random_range(-4.0..4.0)).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let expected = -(0..b).map(|i| log_softmax_row(&v[i * k..(i + 1) * k], labels[i])).sum::<f64>() / b as f64;
        let g = Graph::new();
        let got = losses::cross_entropy(g.constant(mat(b, k, v.clone())), &labels).item();
        assert!((got - expected).abs() < 1e-12);
        let comp = -(0..b)
            .map(|i| (1.0 - log_softmax_row(&v[i * k..(i + 1) * k], labels[i]).exp()).max(losses::PROB_FLOOR).ln())
            .sum::<f64>()
            / b as f64;
        let got = losses::neg_log_complement(g.constant(mat(b, k, v)), &labels).item();
        assert!((got - comp).abs() < 1e-12);
    }
}

#[test]
fn complement_is_floored_at_certainty() {
    let g = Graph::new();
    let logits = g.constant(mat(1, 2, vec![0.0, -1e3]));
    let v = losses::neg_log_complement(logits, &[0]).item();
    assert!((v + losses::PROB_FLOOR.ln()).abs() < 1e-9);
}

#[test]
fn default_network_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = LdNetParams::new(LdNetConfig::default(), Stage::One, &mut rng).unwrap();
    assert_eq!(p.config.hidden_layers, 10);
    assert_eq!(p.config.hidden_width, 512);
    let lms = &dataset(2, 1).frames[0].landmarks;
    assert_eq!(encode_pose_expr(lms, &p).unwrap().values.len(), 64);
    assert_eq!(embed_identity(0, &p).unwrap().values.len(), 128);
}

#[test]
fn encoder_is_deterministic_and_separates_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = LdNetParams::new(small_config(2), Stage::One, &mut rng).unwrap();
    let ds = dataset(2, 2);
    let a = encode_pose_expr(&ds.frames[0].landmarks, &p).unwrap();
    let b = encode_pose_expr(&ds.frames[0].landmarks, &p).unwrap();
    let c = encode_pose_expr(&ds.frames[3].landmarks, &p).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.values.iter().all(|v| v.is_finite()));
}

#[test]
fn generator_emits_68_points_deterministically() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = LdNetParams::new(small_config(2), Stage::One, &mut rng).unwrap();
    let lms = &dataset(2, 1).frames[0].landmarks;
    let pose = encode_pose_expr(lms, &p).unwrap();
    let ident = embed_identity(1, &p).unwrap();
    let a = generate_landmarks(&pose, &ident, &p).unwrap();
    let b = generate_landmarks(&pose, &ident, &p).unwrap();
    assert_eq!(a.points().len(), NUM_LANDMARKS);
    assert_eq!(a.points(), b.points());
    let short = PoseExprCode {
        values: pose.values[..10].to_vec(),
    };
    assert!(matches!(generate_landmarks(&short, &ident, &p), Err(Error::Shape(_))));
}

#[test]
fn stage1_parameters_lack_identity_encoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = LdNetParams::new(small_config(2), Stage::One, &mut rng).unwrap();
    let ds = dataset(2, 2);
    let sets: Vec<&LandmarkSet> = ds.frames.iter().map(|f| &f.landmarks).collect();
    let rows = stack_landmarks(&sets[..1]).unwrap();
    let batch = Stage2Batch::new(rows.clone(), rows.clone(), rows, vec![0]).unwrap();
    let err = stage2_losses(&batch, &p).unwrap_err();
    assert_eq!(err.to_string(), "identity encoder absent");
    assert!(transfer_landmarks(sets[0], sets[1], &p).is_err());
}

#[test]
fn mixed_normalization_is_rejected() {
    let ds = dataset(2, 1);
    let norm = &ds.frames[0].landmarks;
    let raw = LandmarkSet::from_flat(&norm.flat().iter().map(|v| v * 100.0 + 3.0).collect::<Vec<_>>()).unwrap();
    assert!(Stage1Batch::from_sets(&[norm, &raw], vec![0, 1], vec![1, 0]).is_err());
    assert!(Stage1Batch::from_sets(&[&raw], vec![0], vec![1]).is_err());
}

fn stage2_params(k: usize, seed: u64) -> LdNetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s1 = LdNetParams::new(small_config(k), Stage::One, &mut rng).unwrap();
    LdNetParams::stage2_from(&s1, &mut rng).unwrap()
}

fn rows_of(ds: &SyntheticDataset, idx: &[usize]) -> Array2<f64> {
    let sets: Vec<&LandmarkSet> = idx.iter().map(|&i| &ds.frames[i].landmarks).collect();
    stack_landmarks(&sets).unwrap()
}

#[test]
fn stage2_copies_generator_and_freshens_identity_encoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s1 = LdNetParams::new(small_config(3), Stage::One, &mut rng).unwrap();
    let s2 = LdNetParams::stage2_from(&s1, &mut rng).unwrap();
    for (name, value) in s1.store.iter() {
        if name.starts_with("ep.") || name.starts_with("gen.") {
            assert_eq!(s2.store.get(s2.store.id(name).unwrap()), value, "{name}");
        }
    }
    assert!(s2.store.ids_with_prefix("ni.").next().is_none());
    assert!(s2.store.ids_with_prefix("ei.").next().is_some());
    assert!(s2.store.ids_with_prefix("dis.").next().is_some());
}

#[test]
fn losses_are_invariant_to_batch_order() {
    let ds = dataset(3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p1 = LdNetParams::new(small_config(3), Stage::One, &mut rng).unwrap();
    let idx = [0, 4, 8, 1];
    let labels = vec![0, 1, 2, 0];
    let cross = vec![1, 2, 0, 2];
    let perm = [2, 0, 3, 1];
    let a = stage1_losses(&Stage1Batch::new(rows_of(&ds, &idx), labels.clone(), cross.clone()).unwrap(), &p1).unwrap();
    let pi: Vec<usize> = perm.iter().map(|&j| idx[j]).collect();
    let b = stage1_losses(
        &Stage1Batch::new(
            rows_of(&ds, &pi),
            perm.iter().map(|&j| labels[j]).collect(),
            perm.iter().map(|&j| cross[j]).collect(),
        )
        .unwrap(),
        &p1,
    )
    .unwrap();
    for ((n, x), (_, y)) in a.entries().iter().zip(b.entries()) {
        assert!((x - y).abs() < 1e-9, "{n}: {x} vs {y}");
    }

    let p2 = stage2_params(3, 4);
    let (s1, s2, t) = ([0, 3, 6, 1], [1, 4, 7, 2], [3, 6, 0, 6]);
    let tl = vec![1, 2, 0, 2];
    let a = stage2_losses(&Stage2Batch::new(rows_of(&ds, &s1), rows_of(&ds, &s2), rows_of(&ds, &t), tl.clone()).unwrap(), &p2).unwrap();
    let permute = |v: &[usize]| perm.iter().map(|&j| v[j]).collect::<Vec<_>>();
    let b = stage2_losses(
        &Stage2Batch::new(rows_of(&ds, &permute(&s1)), rows_of(&ds, &permute(&s2)), rows_of(&ds, &permute(&t)), permute(&tl)).unwrap(),
        &p2,
    )
    .unwrap();
    for ((n, x), (_, y)) in a.entries().iter().zip(b.entries()) {
        assert!((x - y).abs() < 1e-9, "{n}: {x} vs {y}");
    }
    for (n, v) in a.entries() {
        assert!(v >= 0.0, "{n} = {v}");
    }
    let w = Stage2Weights::default();
    let total = w.rec * a.recon.unwrap() + w.cont * a.content.unwrap() + w.dis * a.adv_discriminator.unwrap() + w.cls * a.adv_classifier.unwrap();
    assert!((total - a.total_g.unwrap()).abs() < 1e-6);
}

#[test]
fn stage1_breakdown_signs_and_total() {
    let ds = dataset(2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = LdNetParams::new(small_config(2), Stage::One, &mut rng).unwrap();
    let b = stage1_losses(&Stage1Batch::new(rows_of(&ds, &[0, 3, 1]), vec![0, 1, 0], vec![1, 0, 1]).unwrap(), &p).unwrap();
    assert!(b.recon.unwrap() >= 0.0);
    assert!(b.total_c.unwrap() >= 0.0);
    assert!(b.adv_classifier.unwrap() <= 0.0);
    assert!(b.adv_discriminator.is_none() && b.content.is_none() && b.total_d.is_none());
    let w = Stage1Weights::default();
    assert!((w.rec * b.recon.unwrap() + w.cls * b.adv_classifier.unwrap() - b.total_g.unwrap()).abs() < 1e-6);
}

#[test]
fn transfer_is_deterministic_and_normalized() {
    let ds = dataset(2, 2);
    let p = stage2_params(2, 1);
    let a = transfer_landmarks(&ds.frames[0].landmarks, &ds.frames[3].landmarks, &p).unwrap();
    let b = transfer_landmarks(&ds.frames[0].landmarks, &ds.frames[3].landmarks, &p).unwrap();
    assert_eq!(a.points(), b.points());
    assert!(a.is_normalized());
    assert_eq!(a.subject_id, ds.frames[0].landmarks.subject_id);
}

// Gradient checks on a shrunken network.

fn tiny_config() -> LdNetConfig {
    LdNetConfig {
        num_points: 5,
        hidden_layers: 2,
        hidden_width: 8,
        pose_code: 4,
        identity_code: 4,
        num_identities: 3,
        leaky_slope: 0.2,
    }
}

fn random_rows(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0))
}

fn check_params(params: &LdNetParams, loss: impl for<'g> Fn(&Binding<'g, '_, f64>) -> reenact_tensor::Var<'g, f64>) -> gradcheck::GradCheck {
    let inputs: Vec<_> = params.store.iter().map(|(_, a)| a.clone()).collect();
    gradcheck::check(&inputs, 1e-5, 1e-6, 6, |g, vars| {
        let b = Binding::with_vars(g, &params.store, vars);
        loss(&b)
    })
}

#[test]
fn stage1_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = LdNetParams::new(tiny_config(), Stage::One, &mut rng).unwrap();
    let batch = Stage1Batch::new(random_rows(&mut rng, 3, 10), vec![0, 1, 2], vec![2, 0, 1]).unwrap();
    let w = Stage1Weights::default();
    for which in ["total_C", "total_G"] {
        let r = check_params(&p, |b| {
            let t = stage1_terms(b, &p, &batch, w).unwrap();
            if which == "total_C" { t.total_c } else { t.total_g }
        });
        assert!(r.probes >= 100, "{which}: {} probes", r.probes);
        assert!(r.max_rel_error < 1e-4, "{which}: {r:?}");
    }
}

#[test]
fn stage2_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let s1 = LdNetParams::new(tiny_config(), Stage::One, &mut rng).unwrap();
    let p = LdNetParams::stage2_from(&s1, &mut rng).unwrap();
    let batch = Stage2Batch::new(
        random_rows(&mut rng, 3, 10),
        random_rows(&mut rng, 3, 10),
        random_rows(&mut rng, 3, 10),
        vec![1, 2, 0],
    )
    .unwrap();
    let w = Stage2Weights::default();
    for which in ["total_D", "total_C", "total_G"] {
        let r = check_params(&p, |b| {
            let t = stage2_terms(b, &p, &batch, w).unwrap();
            match which {
                "total_D" => t.total_d,
                "total_C" => t.total_c,
                _ => t.total_g,
            }
        });
        assert!(r.probes >= 100, "{which}: {} probes", r.probes);
        assert!(r.max_rel_error < 1e-4, "{which}: {r:?}");
    }
}
