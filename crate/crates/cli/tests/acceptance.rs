//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its verdict.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use reenact_core::fdgan::dictionary::{self, dictionary_read, dictionary_read_weights, dictionary_write, dictionary_write_weights};
use reenact_core::fdgan::Variant;
use reenact_core::frame::PortraitFrame;
use reenact_core::ldnet::{self, LdNetConfig, LdNetParams, Stage, Stage1Batch, Stage1Weights, Stage2Batch, Stage2Weights};
use reenact_core::losses;
use reenact_core::metrics::{fid, latent_distance_eval, ssim, FactorLabeled};
use reenact_core::synth::{SyntheticConfig, SyntheticDataset};
use reenact_core::trainer::*;
use reenact_tensor::ndarray::{Array2, ArrayD, IxDyn};
use reenact_tensor::{gradcheck, Binding, Float, Graph, ParamStore};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn dot(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
    a.row(i).iter().zip(b.row(j).iter()).map(|(x, y)| x * y).sum()
}

fn attention() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut worst_sum) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        let loc = rng.random_range(1..=16);
        let (mt, mv) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let (t, p, x) = (random(&mut rng, n, mt), random(&mut rng, loc, mt), random(&mut rng, loc, mv));
        let v = dictionary_write(&t, &p, &x).unwrap();
        for i in 0..n {
            let w = softmax(&(0..loc).map(|j| dot(&t, i, &p, j)).collect::<Vec<_>>());
            worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
            for c in 0..mv {
                let e: f64 = (0..loc).map(|j| w[j] * x[[j, c]]).sum();
                worst = worst.max((v[[i, c]] - e).abs());
            }
        }
        let (u, q) = (random(&mut rng, n, mt), random(&mut rng, loc, mt));
        let y = dictionary_read(&u, &v, &q).unwrap();
        for j in 0..loc {
            let w = softmax(&(0..n).map(|k| dot(&u, k, &q, j)).collect::<Vec<_>>());
            for c in 0..mv {
                let e: f64 = (0..n).map(|k| w[k] * v[[k, c]]).sum();
                worst = worst.max((y[[j, c]] - e).abs());
            }
        }
        for wm in [dictionary_write_weights(&t, &p), dictionary_read_weights(&u, &q)] {
            for row in wm.rows() {
                worst_sum = worst_sum.max((row.sum() - 1.0).abs());
            }
        }
    }
    verdict(
        worst < 1e-5 && worst_sum < 1e-6,
        format!("1000 instances, max |impl - oracle| {worst:.2e}, max |sum w - 1| {worst_sum:.2e}"),
    )
}

fn tiny_ldnet() -> LdNetConfig {
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

fn check_params(params: &LdNetParams, loss: impl for<'g> Fn(&Binding<'g, '_, f64>) -> reenact_tensor::Var<'g, f64>) -> gradcheck::GradCheck {
    let inputs: Vec<_> = params.store.iter().map(|(_, a)| a.clone()).collect();
    gradcheck::check(&inputs, 1e-5, 1e-6, 6, |g, vars| {
        let b = Binding::with_vars(g, &params.store, vars);
        loss(&b)
    })
}

fn gradients() -> Verdict {
    let mut results: Vec<(String, gradcheck::GradCheck)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let arr = |rng: &mut ChaCha8Rng, s: &[usize]| ArrayD::from_shape_fn(IxDyn(s), |_| rng.random_range(-1.0..1.0));
    let (n, loc, m) = (8, 10, 4);
    let mix = arr(&mut rng, &[1, n, m]);
    let inputs = vec![arr(&mut rng, &[n, m]), arr(&mut rng, &[1, loc, m]), arr(&mut rng, &[1, loc, m])];
    let r = gradcheck::check(&inputs, 1e-6, 1e-8, 1000, |g, v| {
        dictionary::write(v[0], v[1], v[2]).mul(g.constant(mix.clone())).sum_all()
    });
    results.push(("dictionary write".into(), r));
    let mix = arr(&mut rng, &[1, loc, m]);
    let inputs = vec![arr(&mut rng, &[n, m]), arr(&mut rng, &[1, n, m]), arr(&mut rng, &[1, loc, m])];
    let r = gradcheck::check(&inputs, 1e-6, 1e-8, 1000, |g, v| {
        dictionary::read(v[0], v[1], v[2]).mul(g.constant(mix.clone())).sum_all()
    });
    results.push(("dictionary read".into(), r));

    let rows = |rng: &mut ChaCha8Rng| Array2::from_shape_fn((3, 10), |_| rng.random_range(-1.0..1.0));
    let p1 = LdNetParams::new(tiny_ldnet(), Stage::One, &mut rng).unwrap();
    let b1 = Stage1Batch::new(rows(&mut rng), vec![0, 1, 2], vec![2, 0, 1]).unwrap();
    let w1 = Stage1Weights::default();
    for which in ["stage-1 total_C", "stage-1 total_G"] {
        let r = check_params(&p1, |b| {
            let t = ldnet::stage1_terms(b, &p1, &b1, w1).unwrap();
            if which.ends_with('C') { t.total_c } else { t.total_g }
        });
        results.push((which.into(), r));
    }
    let p2 = LdNetParams::stage2_from(&p1, &mut rng).unwrap();
    let b2 = Stage2Batch::new(rows(&mut rng), rows(&mut rng), rows(&mut rng), vec![1, 2, 0]).unwrap();
    let w2 = Stage2Weights::default();
    for which in ["stage-2 total_D", "stage-2 total_C", "stage-2 total_G"] {
        let r = check_params(&p2, |b| {
            let t = ldnet::stage2_terms(b, &p2, &b2, w2).unwrap();
            match which.chars().last().unwrap() {
                'D' => t.total_d,
                'C' => t.total_c,
                _ => t.total_g,
            }
        });
        results.push((which.into(), r));
    }
    let pass = results.iter().all(|(_, r)| r.probes >= 100 && r.max_rel_error < 1e-4);
    let detail = results
        .iter()
        .map(|(n, r)| format!("{n} {:.1e}/{}", r.max_rel_error, r.probes))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(pass, format!("max rel error/probes: {detail}"))
}

fn trivial_losses() -> Verdict {
    let mut worst = 0.0f64;
    let mut note = |v: f64| worst = worst.max(v.abs());
    let g = Graph::<f64>::new();
    let mat = |r: usize, c: usize, v: Vec<f64>| g.constant(ArrayD::from_shape_vec(IxDyn(&[r, c]), v).unwrap());
    let l = mat(2, 4, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8]);
    note(losses::point_recon(l, l).item());
    note(losses::sq_distance(l, l).item());
    let certain = mat(2, 3, vec![0.0, -1e3, -1e3, -1e3, 0.0, -1e3]);
    note(losses::cross_entropy(certain, &[0, 1]).item());
    for k in [2usize, 5, 20] {
        let uniform = g.constant(ArrayD::zeros(IxDyn(&[3, k])));
        note(losses::cross_entropy(uniform, &[0, 1, k - 1]).item() - (k as f64).ln());
    }
    let real = g.constant(ArrayD::from_elem(IxDyn(&[4, 1]), 1.0));
    let fake = g.constant(ArrayD::from_elem(IxDyn(&[4, 1]), -1.0));
    note(losses::lsgan_critic(real, fake).item());

    let gf = Graph::<f32>::new();
    let x = gf.constant(ArrayD::from_shape_fn(IxDyn(&[1, 3, 4, 4]), |d| d[2] as f32 * 0.1 - d[3] as f32 * 0.2));
    note(losses::mse(x, x).item() as f64);
    let real = gf.constant(ArrayD::from_elem(IxDyn(&[1, 1, 3, 3]), 1.0));
    let fake = gf.constant(ArrayD::from_elem(IxDyn(&[1, 1, 3, 3]), -1.0));
    note(losses::lsgan_critic(real, fake).item() as f64);
    verdict(worst < 1e-9, format!("largest deviation {worst:.2e} over the zero and log K cases"))
}

fn overfit_fdgan_data() -> PortraitDataset {
    let ds = SyntheticDataset::generate(&SyntheticConfig {
        subjects: 1,
        frames_per_subject: 4,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let size = TrainConfig::profile(StageKind::Fdgan, Profile::Toy).fdgan.image_size;
    let items = ds.frames.iter().map(|f| (ds.render(f, size).unwrap(), f.landmarks.clone())).collect();
    PortraitDataset::new(items, size).unwrap()
}

/// Trains FD-GAN on the overfit set, evaluating the pair MSE every 250
/// iterations; stops at `until` or `stop_below`, whichever first, but never
/// before `at_least`.
fn train_fdgan(variant: Variant, at_least: u64, until: u64, stop_below: f64) -> (Vec<(u64, f64)>, Duration) {
    let data = overfit_fdgan_data();
    let td = TrainData::Portraits(data.clone());
    let mut c = TrainConfig::profile(StageKind::Fdgan, Profile::Toy);
    c.fdgan.variant = variant;
    c.iterations = until;
    let mut t = Trainer::new(c, &td, None).unwrap();
    let t0 = Instant::now();
    let mut curve = Vec::new();
    while t.iteration < until {
        t.run_until(&td, t.iteration + 250).unwrap();
        let mse = fdgan_pair_mse(t.fdgan().unwrap(), &data).unwrap();
        curve.push((t.iteration, mse));
        if t.iteration >= at_least && mse < stop_below {
            break;
        }
    }
    (curve, t0.elapsed())
}

fn overfit(fd_full: &[(u64, f64)], fd_time: Duration) -> Verdict {
    let ds = SyntheticDataset::generate(&SyntheticConfig {
        subjects: 2,
        frames_per_subject: 8,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let set = ds.landmark_dataset();
    let td = TrainData::Landmarks(set.clone());
    let mut c = TrainConfig::profile(StageKind::Ldnet1, Profile::Toy);
    c.iterations = 2000;
    let t0 = Instant::now();
    let mut t = Trainer::new(c, &td, None).unwrap();
    t.run(&td, |_| Ok(())).unwrap();
    let recon = stage1_reconstruction_error(t.ldnet().unwrap(), &set).unwrap();
    let ld_time = t0.elapsed();
    let reached = fd_full.iter().find(|(_, m)| *m < 0.01).copied();
    let total = ld_time + fd_time;
    let pass = recon < 1e-3 && reached.is_some() && total < Duration::from_secs(30 * 60);
    let fd_text = match reached {
        Some((it, m)) => format!("FD-GAN pair MSE {m:.5} at iteration {it}"),
        None => format!("FD-GAN pair MSE {:.5} after {} iterations", fd_full.last().unwrap().1, fd_full.last().unwrap().0),
    };
    verdict(
        pass,
        format!("LD-Net stage-1 recon {recon:.2e} at 2000 iterations; {fd_text}; {:.0}s", total.as_secs_f64()),
    )
}

fn table_one() -> Verdict {
    let t0 = Instant::now();
    let ds = SyntheticDataset::generate(&SyntheticConfig::default()).unwrap();
    let td = TrainData::Landmarks(ds.landmark_dataset());
    let mut s1 = Trainer::new(TrainConfig::profile(StageKind::Ldnet1, Profile::Toy), &td, None).unwrap();
    s1.run(&td, |_| Ok(())).unwrap();
    let mut s2 = Trainer::new(TrainConfig::profile(StageKind::Ldnet2, Profile::Toy), &td, s1.ldnet()).unwrap();
    s2.run(&td, |_| Ok(())).unwrap();
    let r = latent_distance_eval(s2.ldnet().unwrap(), &FactorLabeled::from(&ds), 10_000, 7).unwrap();
    let (i, p) = (r.identity_space, r.pose_expr_space);
    let id_ok = i.both_different - i.same_identity >= 0.1 * i.both_different;
    let pe_ok = p.both_different - p.same_pose_expr >= 0.1 * p.both_different;
    verdict(
        id_ok && pe_ok && t0.elapsed() < Duration::from_secs(2 * 3600),
        format!(
            "E_I same identity {:.3} vs both different {:.3}; E_P same pose/expression {:.3} vs both different {:.3}; {} pairs; {:.0}s",
            i.same_identity,
            i.both_different,
            p.same_pose_expr,
            p.both_different,
            r.samples,
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn at(curve: &[(u64, f64)], it: u64) -> f64 {
    curve.iter().find(|(i, _)| *i == it).map(|(_, m)| *m).expect("evaluated iteration")
}

fn ablation(full: &[(u64, f64)], fd1: &[(u64, f64)]) -> Verdict {
    let (a, b) = (at(full, 2000), at(fd1, 2000));
    verdict(a <= b, format!("pair MSE at 2000 iterations: full {a:.5}, fd1 {b:.5}"))
}

fn metrics_consistency() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = PortraitFrame::new(64, (0..3 * 64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let s_xx = ssim(&x, &x).unwrap();
    let sample = |rng: &mut ChaCha8Rng, n: usize, d: usize, mu: f64, sd: f64| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| mu + sd * rng.sample::<f64, _>(StandardNormal)).collect()).collect()
    };
    let s = sample(&mut rng, 1000, 8, 0.0, 1.0);
    let self_fid = fid(&s, &s).unwrap();
    let closed = |m1: f64, s1: f64, m2: f64, s2: f64| (m1 - m2).powi(2) + s1 * s1 + s2 * s2 - 2.0 * s1 * s2;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (m1, s1, m2, s2) in [(0.0, 1.0, 3.0, 1.0), (0.0, 1.0, 1.0, 2.0)] {
        let a = sample(&mut rng, 10_000, 1, m1, s1);
        let b = sample(&mut rng, 10_000, 1, m2, s2);
        let (got, want) = (fid(&a, &b).unwrap(), closed(m1, s1, m2, s2));
        worst = worst.max((got - want).abs() / want);
        parts.push(format!("{got:.3} vs {want:.3}"));
    }
    verdict(
        s_xx == 1.0 && self_fid < 1e-6 && worst < 0.05,
        format!("ssim(x,x) {s_xx}; fid(S,S) {self_fid:.1e}; univariate fid {}", parts.join(", ")),
    )
}

fn bits<T: Float + Into<f64>>(store: &ParamStore<T>) -> Vec<(String, Vec<u64>)> {
    store
        .iter()
        .map(|(n, a)| (n.to_string(), a.iter().map(|&v| Into::<f64>::into(v).to_bits()).collect()))
        .collect()
}

fn persistence() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let ds = SyntheticDataset::generate(&SyntheticConfig {
        subjects: 3,
        frames_per_subject: 10,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let td = TrainData::Landmarks(ds.landmark_dataset());
    let mut c = TrainConfig::profile(StageKind::Ldnet1, Profile::Toy);
    c.iterations = 100;
    c.seed = 11;
    let fresh = || Trainer::new(c.clone(), &td, None).unwrap();
    let mut a = fresh();
    a.run(&td, |_| Ok(())).unwrap();
    let mut b = fresh();
    b.run(&td, |_| Ok(())).unwrap();
    let same_history = !a.history.is_empty() && a.history == b.history;

    let path = dir.path().join("a.safetensors");
    save_checkpoint(&a, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let round_trip = bits(&back.ldnet().unwrap().store) == bits(&a.ldnet().unwrap().store)
        && back.iteration == a.iteration
        && back.running == a.running;

    let mut half = fresh();
    half.run_until(&td, 50).unwrap();
    let mid = dir.path().join("mid.safetensors");
    save_checkpoint(&half, &mid).unwrap();
    drop(half);
    let mut resumed = load_checkpoint(&mid).unwrap();
    resumed.run(&td, |_| Ok(())).unwrap();
    let resume_ok = bits(&resumed.ldnet().unwrap().store) == bits(&a.ldnet().unwrap().store);
    verdict(
        same_history && round_trip && resume_ok,
        format!("identical histories {same_history}; bit-identical round trip {round_trip}; resume at 50/100 matches {resume_ok}"),
    )
}

fn cli_workflow() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_reenact");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth-data", "--out", "data", "--subjects", "4", "--frames", "6", "--seed", "1"],
        vec!["train", "--stage", "ldnet1", "--profile", "toy", "--data", "data", "--out", "ldnet1", "--set", "iterations=100"],
        vec!["train", "--stage", "ldnet2", "--profile", "toy", "--data", "data", "--out", "ldnet2", "--init", "ldnet1/checkpoint.safetensors", "--set", "iterations=100"],
        vec!["train", "--stage", "fdgan", "--profile", "toy", "--data", "data", "--out", "fdgan", "--set", "iterations=20"],
        vec!["reenact", "--target-image", "data/images/s0000_f000000.png", "--target-landmarks", "data/landmarks.csv", "--driving", "data/landmarks.csv", "--ldnet", "ldnet2/checkpoint.safetensors", "--fdgan", "fdgan/checkpoint.safetensors", "--out", "frames"],
        vec!["eval", "--results", "frames", "--reference", "data/images", "--out", "report"],
    ];
    for args in &steps {
        let out = Command::new(bin).current_dir(d).args(args).output().unwrap();
        if !out.status.success() {
            return verdict(false, format!("`{}` exited with {}: {}", args[0], out.status, String::from_utf8_lossy(&out.stderr).trim()));
        }
    }
    let mut expected: Vec<String> = ["data/landmarks.csv", "data/manifest.toml", "frames/timing.csv", "frames/manifest.toml", "report/report.csv", "report/manifest.toml"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for stage in ["ldnet1", "ldnet2", "fdgan"] {
        for f in ["checkpoint.safetensors", "losses.csv", "manifest.toml"] {
            expected.push(format!("{stage}/{f}"));
        }
    }
    expected.extend((0..24).map(|i| format!("frames/frame_{i:06}.png")));
    let missing: Vec<&String> = expected.iter().filter(|p| !Path::new(d).join(p).is_file()).collect();
    verdict(
        missing.is_empty(),
        if missing.is_empty() {
            format!("synth-data, train x3, reenact, eval exited 0; {} declared outputs present", expected.len())
        } else {
            format!("missing outputs: {missing:?}")
        },
    )
}

fn report(n: usize, name: &str, v: &Verdict, elapsed: Duration) -> bool {
    println!(
        "criterion {n} {}: {name}: {} [{:.1}s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64()
    );
    v.pass
}

fn timed(f: impl FnOnce() -> Verdict) -> (Verdict, Duration) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed())
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut ok = true;
    let (v, t) = timed(attention);
    ok &= report(1, "attention matches double-loop oracle", &verdict(v.pass && t < Duration::from_secs(60), v.detail), t);
    let (v, t) = timed(gradients);
    ok &= report(2, "gradient checks", &verdict(v.pass && t < Duration::from_secs(300), v.detail), t);
    let (v, t) = timed(trivial_losses);
    ok &= report(3, "trivial loss cases", &v, t);

    let ((full, full_time), t_full) = {
        let t0 = Instant::now();
        let r = train_fdgan(Variant::Full, 2000, 5000, 0.01);
        (r, t0.elapsed())
    };
    let (v, t) = timed(|| overfit(&full, full_time));
    ok &= report(4, "overfit convergence", &v, t + t_full);
    let (v, t) = timed(table_one);
    ok &= report(5, "latent distance structure at toy scale", &v, t);
    let ((fd1, _), t_fd1) = timed_pair(|| train_fdgan(Variant::Fd1, 2000, 2000, 0.0));
    let v = ablation(&full, &fd1);
    ok &= report(6, "full dictionary vs one-row ablation", &v, t_fd1);
    let (v, t) = timed(metrics_consistency);
    ok &= report(7, "metrics self-consistency", &v, t);
    let (v, t) = timed(persistence);
    ok &= report(8, "determinism and persistence", &v, t);
    let (v, t) = timed(cli_workflow);
    ok &= report(9, "CLI workflow", &v, t);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn timed_pair<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed())
}
