//! Finite-difference checks for every differentiable op.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reenact_tensor::gradcheck::check;
use reenact_tensor::{init, Array, Graph, Var};

const EPS: f64 = 1e-6;
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn rnd(shape: &[usize], seed: u64) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init::normal(shape, 1.0, &mut rng)
}

/// Contracts `out` with a fixed random tensor so every output coordinate matters.
fn probe<'g>(g: &'g Graph<f64>, out: Var<'g, f64>, seed: u64) -> Var<'g, f64> {
    let r = g.constant(rnd(&out.shape(), seed));
    out.mul(r).sum_all()
}

fn assert_ok(name: &str, inputs: &[Array<f64>], f: impl for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>) {
    let r = check(inputs, EPS, FLOOR, 64, f);
    assert!(r.max_rel_error < TOL, "{name}: rel error {} at {:?}", r.max_rel_error, r.worst);
}

#[test]
fn elementwise_ops() {
    let a = rnd(&[3, 4], 1);
    let b = rnd(&[3, 4], 2);
    assert_ok("add", &[a.clone(), b.clone()], |g, v| probe(g, v[0].add(v[1]), 9));
    assert_ok("sub", &[a.clone(), b.clone()], |g, v| probe(g, v[0].sub(v[1]), 9));
    assert_ok("mul", &[a.clone(), b.clone()], |g, v| probe(g, v[0].mul(v[1]), 9));
    assert_ok("square", &[a.clone()], |g, v| probe(g, v[0].square(), 9));
    assert_ok("tanh", &[a.clone()], |g, v| probe(g, v[0].tanh(), 9));
    assert_ok("exp", &[a.clone()], |g, v| probe(g, v[0].exp(), 9));
    assert_ok("leaky", &[a.clone()], |g, v| probe(g, v[0].leaky_relu(0.2), 9));
    let pos = a.mapv(|x| x.abs() + 0.5);
    assert_ok("log", &[pos], |g, v| probe(g, v[0].log(), 9));
    assert_ok("scale/shift", &[a.clone()], |g, v| probe(g, v[0].scale(-2.5).add_scalar(3.0).one_minus(), 9));
    assert_ok("clamp", &[a.clone()], |g, v| probe(g, v[0].clamp_min(0.05), 9));
}

#[test]
fn reductions_and_shapes() {
    let a = rnd(&[2, 3, 4], 3);
    assert_ok("sum_axis", &[a.clone()], |g, v| probe(g, v[0].sum_axis(1), 4));
    assert_ok("mean_axis", &[a.clone()], |g, v| probe(g, v[0].mean_axis(2), 4));
    assert_ok("mean_all", &[a.clone()], |_, v| v[0].square().mean_all());
    assert_ok("permute", &[a.clone()], |g, v| probe(g, v[0].permute(&[2, 0, 1]), 4));
    assert_ok("reshape", &[a.clone()], |g, v| probe(g, v[0].reshape(&[6, 4]), 4));
    assert_ok("concat", &[a.clone(), rnd(&[2, 5, 4], 4)], |g, v| probe(g, Var::concat(&[v[0], v[1]], 1), 4));
    assert_ok("index_batch", &[a.clone()], |g, v| probe(g, v[0].index_batch(1), 4));
    assert_ok("stack", &[a.clone(), rnd(&[2, 3, 4], 8)], |g, v| probe(g, Var::stack(&[v[0], v[1]]), 4));
    let x = rnd(&[2, 5, 3, 3], 5);
    assert_ok("narrow", &[x], |g, v| probe(g, v[0].narrow_channels(1, 4), 4));
}

#[test]
fn products() {
    assert_ok("matmul", &[rnd(&[3, 5], 1), rnd(&[5, 2], 2)], |g, v| probe(g, v[0].matmul(v[1]), 3));
    assert_ok("matmul_nt", &[rnd(&[3, 5], 1), rnd(&[4, 5], 2)], |g, v| probe(g, v[0].matmul_nt(v[1]), 3));
    assert_ok("bmm", &[rnd(&[2, 3, 5], 1), rnd(&[2, 5, 4], 2)], |g, v| probe(g, v[0].bmm(v[1]), 3));
    assert_ok("add_bias", &[rnd(&[2, 3, 5], 1), rnd(&[5], 2)], |g, v| probe(g, v[0].add_bias(v[1]), 3));
    assert_ok("channel_bias", &[rnd(&[2, 3, 4, 4], 1), rnd(&[3], 2)], |g, v| {
        probe(g, v[0].add_channel_bias(v[1]), 3)
    });
    assert_ok(
        "scale_shift",
        &[rnd(&[2, 3, 4, 4], 1), rnd(&[2, 3], 2), rnd(&[2, 3], 6)],
        |g, v| probe(g, v[0].scale_shift_channels(v[1], v[2]), 3),
    );
}

#[test]
fn softmax_family() {
    let a = rnd(&[4, 6], 11);
    assert_ok("softmax", &[a.clone()], |g, v| probe(g, v[0].softmax_last(), 12));
    assert_ok("log_softmax", &[a.clone()], |g, v| probe(g, v[0].log_softmax_last(), 12));
    assert_ok("softmax3d", &[rnd(&[2, 3, 5], 13)], |g, v| probe(g, v[0].softmax_last(), 12));
    assert_ok("gather", &[a], |g, v| probe(g, v[0].log_softmax_last().gather_rows(&[0, 5, 2, 2]), 12));
}

#[test]
fn instance_norm_gradient() {
    assert_ok("instance_norm", &[rnd(&[2, 3, 4, 5], 21)], |g, v| probe(g, v[0].instance_norm(1e-5), 22));
}

#[test]
fn convolution_gradients() {
    for &(k, s, p, hw) in &[(3, 1, 1, 5), (4, 2, 1, 6), (1, 1, 0, 3), (3, 2, 0, 7)] {
        let x = rnd(&[2, 3, hw, hw], 31);
        let w = rnd(&[4, 3, k, k], 32);
        assert_ok(&format!("conv2d k{k} s{s} p{p}"), &[x, w], |g, v| probe(g, v[0].conv2d(v[1], s, p), 33));
    }
    for &(k, s, p, hw) in &[(4, 2, 1, 3), (3, 1, 1, 4), (2, 2, 0, 3)] {
        let x = rnd(&[2, 3, hw, hw], 41);
        let w = rnd(&[3, 2, k, k], 42);
        assert_ok(&format!("conv_t k{k} s{s} p{p}"), &[x, w], |g, v| {
            probe(g, v[0].conv_transpose2d(v[1], s, p), 43)
        });
    }
}
