//! Convolutions against direct nested-loop definitions.

use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reenact_tensor::{init, Array, Graph};

fn naive_conv(x: &Array<f64>, w: &Array<f64>, s: usize, p: usize) -> Array<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (wd + 2 * p - k) / s + 1;
    let mut out = Array::zeros(IxDyn(&[n, o, oh, ow]));
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * s + ky) as isize - p as isize;
                                let ix = (xx * s + kx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x[[b, ic, iy as usize, ix as usize]] * w[[oc, ic, ky, kx]];
                                }
                            }
                        }
                    }
                    out[[b, oc, y, xx]] = acc;
                }
            }
        }
    }
    out
}

/// Scatter definition: every input pixel deposits `x * w` into the output.
fn naive_conv_t(x: &Array<f64>, w: &Array<f64>, s: usize, p: usize) -> Array<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[1], w.shape()[2]);
    let oh = (h - 1) * s + k - 2 * p;
    let ow = (wd - 1) * s + k - 2 * p;
    let mut out = Array::zeros(IxDyn(&[n, o, oh, ow]));
    for b in 0..n {
        for ic in 0..c {
            for y in 0..h {
                for xx in 0..wd {
                    for oc in 0..o {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (y * s + ky) as isize - p as isize;
                                let ox = (xx * s + kx) as isize - p as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    out[[b, oc, oy as usize, ox as usize]] += x[[b, ic, y, xx]] * w[[ic, oc, ky, kx]];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn max_abs_diff(a: &Array<f64>, b: &Array<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv2d_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (1, 1, 0), (5, 1, 2)] {
        let x = init::normal::<f64, _>(&[2, 3, 9, 9], 1.0, &mut rng);
        let w = init::normal::<f64, _>(&[4, 3, k, k], 1.0, &mut rng);
        let g = Graph::new();
        let out = g.constant(x.clone()).conv2d(g.constant(w.clone()), s, p).value();
        assert!(max_abs_diff(&out, &naive_conv(&x, &w, s, p)) < 1e-12);
    }
}

#[test]
fn conv_transpose2d_matches_scatter_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for &(k, s, p) in &[(4, 2, 1), (3, 1, 1), (2, 2, 0)] {
        let x = init::normal::<f64, _>(&[2, 3, 5, 5], 1.0, &mut rng);
        let w = init::normal::<f64, _>(&[3, 2, k, k], 1.0, &mut rng);
        let g = Graph::new();
        let out = g.constant(x.clone()).conv_transpose2d(g.constant(w.clone()), s, p).value();
        assert!(max_abs_diff(&out, &naive_conv_t(&x, &w, s, p)) < 1e-12);
    }
}

#[test]
fn stride_two_transpose_doubles_resolution() {
    let g = Graph::<f32>::new();
    let x = g.constant(Array::zeros(IxDyn(&[1, 2, 8, 8])));
    let w = g.constant(Array::zeros(IxDyn(&[2, 3, 4, 4])));
    assert_eq!(x.conv_transpose2d(w, 2, 1).shape(), vec![1, 3, 16, 16]);
}
