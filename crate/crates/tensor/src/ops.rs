use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{Axis, Ix2, Ix3, Ix4, IxDyn};

use crate::{Array, Float, Var};

fn assert_same(op: &str, a: &Array<impl Float>, b: &Array<impl Float>) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

/// Rows-by-last-axis view of a standard-layout array.
fn as_rows<T: Float>(a: &Array<T>) -> ndarray::ArrayView2<'_, T> {
    let k = *a.shape().last().expect("rank >= 1");
    let rows = if k == 0 { 0 } else { a.len() / k };
    a.view().into_shape_with_order((rows, k)).expect("standard layout")
}

impl<'g, T: Float> Var<'g, T> {
    fn unary<F>(self, out: Array<T>, backward: F) -> Var<'g, T>
    where
        F: Fn(&Array<T>) -> Array<T> + 'static,
    {
        self.graph.op(Arc::new(out), &[self], move |g, _| vec![Some(backward(g))])
    }

    pub fn add(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        assert_same("add", &a, &b);
        let out = &*a + &*b;
        self.graph
            .op(Arc::new(out), &[self, other], |g, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        assert_same("sub", &a, &b);
        let out = &*a - &*b;
        self.graph
            .op(Arc::new(out), &[self, other], |g, _| vec![Some(g.clone()), Some(g.mapv(|x| -x))])
    }

    pub fn mul(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        assert_same("mul", &a, &b);
        let out = &*a * &*b;
        self.graph.op(Arc::new(out), &[self, other], move |g, need| {
            vec![need[0].then(|| g * &*b), need[1].then(|| g * &*a)]
        })
    }

    pub fn scale(self, c: T) -> Var<'g, T> {
        let out = self.value().mapv(|x| x * c);
        self.unary(out, move |g| g.mapv(|x| x * c))
    }

    pub fn add_scalar(self, c: T) -> Var<'g, T> {
        let out = self.value().mapv(|x| x + c);
        self.unary(out, |g| g.clone())
    }

    pub fn neg(self) -> Var<'g, T> {
        self.scale(-T::one())
    }

    /// `1 - x`.
    pub fn one_minus(self) -> Var<'g, T> {
        self.neg().add_scalar(T::one())
    }

    pub fn square(self) -> Var<'g, T> {
        let a = self.value();
        let out = a.mapv(|x| x * x);
        let two = T::of(2.0);
        self.unary(out, move |g| g * &a.mapv(|x| x * two))
    }

    pub fn log(self) -> Var<'g, T> {
        let a = self.value();
        let out = a.mapv(|x| x.ln());
        self.unary(out, move |g| g / &*a)
    }

    pub fn exp(self) -> Var<'g, T> {
        let y = Arc::new(self.value().mapv(|x| x.exp()));
        let yc = Arc::clone(&y);
        self.graph.op(y, &[self], move |g, _| vec![Some(g * &*yc)])
    }

    pub fn tanh(self) -> Var<'g, T> {
        let y = Arc::new(self.value().mapv(|x| x.tanh()));
        let yc = Arc::clone(&y);
        self.graph.op(y, &[self], move |g, _| {
            vec![Some(g * &yc.mapv(|v| T::one() - v * v))]
        })
    }

    pub fn leaky_relu(self, slope: T) -> Var<'g, T> {
        let a = self.value();
        let out = a.mapv(|x| if x > T::zero() { x } else { x * slope });
        self.unary(out, move |g| {
            let mut d = g.clone();
            ndarray::Zip::from(&mut d).and(&*a).for_each(|d, &x| {
                if x <= T::zero() {
                    *d = *d * slope;
                }
            });
            d
        })
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(self, floor: T) -> Var<'g, T> {
        let a = self.value();
        let out = a.mapv(|x| if x > floor { x } else { floor });
        self.unary(out, move |g| {
            let mut d = g.clone();
            ndarray::Zip::from(&mut d).and(&*a).for_each(|d, &x| {
                if x <= floor {
                    *d = T::zero();
                }
            });
            d
        })
    }

    pub fn sum_all(self) -> Var<'g, T> {
        let a = self.value();
        let shape = a.raw_dim();
        let out = ndarray::arr0(a.sum()).into_dyn();
        self.unary(out, move |g| Array::from_elem(shape.clone(), g[IxDyn(&[])]))
    }

    pub fn mean_all(self) -> Var<'g, T> {
        let n = self.value().len();
        self.sum_all().scale(T::one() / T::of(n as f64))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Var<'g, T> {
        let a = self.value();
        let shape = a.raw_dim();
        let out = a.sum_axis(Axis(axis));
        self.unary(out, move |g| {
            g.view()
                .insert_axis(Axis(axis))
                .broadcast(shape.clone())
                .expect("broadcast back")
                .to_owned()
        })
    }

    pub fn mean_axis(self, axis: usize) -> Var<'g, T> {
        let n = self.value().shape()[axis];
        self.sum_axis(axis).scale(T::one() / T::of(n as f64))
    }

    /// 2-D matrix product `[m,k] x [k,n]`.
    pub fn matmul(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        let a2 = a.view().into_dimensionality::<Ix2>().expect("matmul lhs must be 2-D");
        let b2 = b.view().into_dimensionality::<Ix2>().expect("matmul rhs must be 2-D");
        assert_eq!(a2.ncols(), b2.nrows(), "matmul: inner dimension");
        let out = a2.dot(&b2).into_dyn();
        self.graph.op(Arc::new(out), &[self, other], move |g, need| {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
            let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
            vec![
                need[0].then(|| g2.dot(&b2.t()).into_dyn()),
                need[1].then(|| a2.t().dot(&g2).into_dyn()),
            ]
        })
    }

    /// `[m,k] x [n,k]^T`.
    pub fn matmul_nt(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        let a2 = a.view().into_dimensionality::<Ix2>().expect("matmul_nt lhs must be 2-D");
        let b2 = b.view().into_dimensionality::<Ix2>().expect("matmul_nt rhs must be 2-D");
        assert_eq!(a2.ncols(), b2.ncols(), "matmul_nt: inner dimension");
        let out = a2.dot(&b2.t()).into_dyn();
        self.graph.op(Arc::new(out), &[self, other], move |g, need| {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
            let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
            vec![
                need[0].then(|| g2.dot(&b2).into_dyn()),
                need[1].then(|| g2.t().dot(&a2).into_dyn()),
            ]
        })
    }

    /// Batched matrix product `[B,m,k] x [B,k,n]`.
    pub fn bmm(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        let a3 = a.view().into_dimensionality::<Ix3>().expect("bmm lhs must be 3-D");
        let b3 = b.view().into_dimensionality::<Ix3>().expect("bmm rhs must be 3-D");
        let (batch, m, k) = a3.dim();
        let (bb, k2, n) = b3.dim();
        assert_eq!((batch, k), (bb, k2), "bmm: batch/inner dimension");
        let mut out = ndarray::Array3::<T>::zeros((batch, m, n));
        for i in 0..batch {
            general_mat_mul(
                T::one(),
                &a3.index_axis(Axis(0), i),
                &b3.index_axis(Axis(0), i),
                T::zero(),
                &mut out.index_axis_mut(Axis(0), i),
            );
        }
        self.graph.op(Arc::new(out.into_dyn()), &[self, other], move |g, need| {
            let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
            let a3 = a.view().into_dimensionality::<Ix3>().unwrap();
            let b3 = b.view().into_dimensionality::<Ix3>().unwrap();
            let ga = need[0].then(|| {
                let mut ga = ndarray::Array3::<T>::zeros((batch, m, k));
                for i in 0..batch {
                    general_mat_mul(
                        T::one(),
                        &g3.index_axis(Axis(0), i),
                        &b3.index_axis(Axis(0), i).t(),
                        T::zero(),
                        &mut ga.index_axis_mut(Axis(0), i),
                    );
                }
                ga.into_dyn()
            });
            let gb = need[1].then(|| {
                let mut gb = ndarray::Array3::<T>::zeros((batch, k, n));
                for i in 0..batch {
                    general_mat_mul(
                        T::one(),
                        &a3.index_axis(Axis(0), i).t(),
                        &g3.index_axis(Axis(0), i),
                        T::zero(),
                        &mut gb.index_axis_mut(Axis(0), i),
                    );
                }
                gb.into_dyn()
            });
            vec![ga, gb]
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, T> {
        let a = self.value();
        let orig = a.shape().to_vec();
        let out = a
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|e| panic!("reshape {:?} -> {:?}: {e}", orig, shape));
        self.unary(out, move |g| {
            g.as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(&orig))
                .expect("reshape back")
        })
    }

    pub fn permute(self, axes: &[usize]) -> Var<'g, T> {
        let a = self.value();
        let out = a
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .into_owned();
        let mut inverse = vec![0; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        self.unary(out, move |g| {
            g.view()
                .permuted_axes(IxDyn(&inverse))
                .as_standard_layout()
                .into_owned()
        })
    }

    /// Concatenates along `axis`.
    pub fn concat(parts: &[Var<'g, T>], axis: usize) -> Var<'g, T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views).expect("concat: shape mismatch");
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        parts[0].graph.op(Arc::new(out), parts, move |g, need| {
            let mut start = 0;
            sizes
                .iter()
                .zip(need)
                .map(|(&len, &need)| {
                    let piece = need.then(|| {
                        g.slice_axis(Axis(axis), (start..start + len).into()).to_owned()
                    });
                    start += len;
                    piece
                })
                .collect()
        })
    }

    /// Adds `bias[F]` to every row of `self[..., F]`.
    pub fn add_bias(self, bias: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), bias.value());
        assert_eq!(b.ndim(), 1, "add_bias: bias must be 1-D");
        assert_eq!(a.shape().last(), Some(&b.len()), "add_bias: feature size");
        let out = &*a + &*b;
        self.graph.op(Arc::new(out), &[self, bias], move |g, need| {
            vec![
                need[0].then(|| g.clone()),
                need[1].then(|| as_rows(&g.as_standard_layout().into_owned()).sum_axis(Axis(0)).into_dyn()),
            ]
        })
    }

    /// Adds `bias[C]` to every channel of `self[N,C,H,W]`.
    pub fn add_channel_bias(self, bias: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), bias.value());
        let c = a.shape()[1];
        assert_eq!(b.shape(), &[c], "add_channel_bias: channel count");
        let bb = b.view().into_shape_with_order((1, c, 1, 1)).unwrap();
        let out = (&a.view().into_dimensionality::<Ix4>().unwrap() + &bb).into_dyn();
        self.graph.op(Arc::new(out), &[self, bias], move |g, need| {
            vec![
                need[0].then(|| g.clone()),
                need[1].then(|| g.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0))),
            ]
        })
    }

    /// `x * gamma + beta` with `gamma, beta: [N,C]` broadcast over `x: [N,C,H,W]`.
    pub fn scale_shift_channels(self, gamma: Var<'g, T>, beta: Var<'g, T>) -> Var<'g, T> {
        let (x, ga, be) = (self.value(), gamma.value(), beta.value());
        let (n, c) = (x.shape()[0], x.shape()[1]);
        assert_eq!(ga.shape(), &[n, c], "scale_shift_channels: gamma shape");
        assert_eq!(be.shape(), &[n, c], "scale_shift_channels: beta shape");
        let g4 = ga.view().into_shape_with_order((n, c, 1, 1)).unwrap();
        let b4 = be.view().into_shape_with_order((n, c, 1, 1)).unwrap();
        let x4 = x.view().into_dimensionality::<Ix4>().unwrap();
        let out = (&(&x4 * &g4) + &b4).into_dyn();
        self.graph.op(Arc::new(out), &[self, gamma, beta], move |g, need| {
            let g4 = ga.view().into_shape_with_order((n, c, 1, 1)).unwrap();
            let grad4 = g.view().into_dimensionality::<Ix4>().unwrap();
            let x4 = x.view().into_dimensionality::<Ix4>().unwrap();
            vec![
                need[0].then(|| (&grad4 * &g4).into_dyn()),
                need[1].then(|| (&grad4 * &x4).sum_axis(Axis(3)).sum_axis(Axis(2)).into_dyn()),
                need[2].then(|| grad4.sum_axis(Axis(3)).sum_axis(Axis(2)).into_dyn()),
            ]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax_last(self) -> Var<'g, T> {
        let a = self.value().as_standard_layout().into_owned();
        let mut y = a.clone();
        {
            let k = *a.shape().last().unwrap();
            let rows = a.len() / k.max(1);
            let mut y2 = y.view_mut().into_shape_with_order((rows, k)).unwrap();
            for mut row in y2.rows_mut() {
                let m = row.fold(T::neg_infinity(), |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
        }
        let y = Arc::new(y);
        let yc = Arc::clone(&y);
        self.graph.op(y, &[self], move |g, _| {
            let g = g.as_standard_layout().into_owned();
            let mut out = &g * &*yc;
            {
                let yr = as_rows(&yc);
                let k = yr.ncols();
                let rows = yr.nrows();
                let mut o2 = out.view_mut().into_shape_with_order((rows, k)).unwrap();
                for (mut orow, yrow) in o2.rows_mut().into_iter().zip(yr.rows()) {
                    let s = orow.sum();
                    ndarray::Zip::from(&mut orow).and(&yrow).for_each(|o, &yv| *o = *o - yv * s);
                }
            }
            vec![Some(out)]
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax_last(self) -> Var<'g, T> {
        let a = self.value().as_standard_layout().into_owned();
        let mut y = a.clone();
        {
            let k = *a.shape().last().unwrap();
            let rows = a.len() / k.max(1);
            let mut y2 = y.view_mut().into_shape_with_order((rows, k)).unwrap();
            for mut row in y2.rows_mut() {
                let m = row.fold(T::neg_infinity(), |m, &v| m.max(v));
                let lse = m + row.fold(T::zero(), |s, &v| s + (v - m).exp()).ln();
                row.mapv_inplace(|v| v - lse);
            }
        }
        let y = Arc::new(y);
        let yc = Arc::clone(&y);
        self.graph.op(y, &[self], move |g, _| {
            let mut out = g.as_standard_layout().into_owned();
            {
                let yr = as_rows(&yc);
                let (rows, k) = yr.dim();
                let mut o2 = out.view_mut().into_shape_with_order((rows, k)).unwrap();
                for (mut orow, yrow) in o2.rows_mut().into_iter().zip(yr.rows()) {
                    let s = orow.sum();
                    ndarray::Zip::from(&mut orow)
                        .and(&yrow)
                        .for_each(|o, &lv| *o = *o - lv.exp() * s);
                }
            }
            vec![Some(out)]
        })
    }

    /// Picks `self[r, index[r]]` from a `[R, K]` tensor.
    pub fn gather_rows(self, index: &[usize]) -> Var<'g, T> {
        let a = self.value();
        let a2 = a.view().into_dimensionality::<Ix2>().expect("gather_rows needs 2-D");
        assert_eq!(a2.nrows(), index.len(), "gather_rows: one index per row");
        let k = a2.ncols();
        assert!(index.iter().all(|&i| i < k), "gather_rows: index out of range");
        let out: Array<T> = ndarray::Array1::from_iter(index.iter().enumerate().map(|(r, &i)| a2[[r, i]])).into_dyn();
        let index = index.to_vec();
        let rows = a2.nrows();
        self.unary(out, move |g| {
            let mut d = ndarray::Array2::<T>::zeros((rows, k));
            for (r, &i) in index.iter().enumerate() {
                d[[r, i]] = g[IxDyn(&[r])];
            }
            d.into_dyn()
        })
    }

    /// Per-sample, per-channel normalization of `[N,C,H,W]` (no affine).
    pub fn instance_norm(self, eps: T) -> Var<'g, T> {
        let x = self.value();
        let (n, c, h, w) = x.view().into_dimensionality::<Ix4>().expect("instance_norm needs 4-D").dim();
        let hw = h * w;
        let xs = x.as_standard_layout().into_owned();
        let flat = xs.view().into_shape_with_order((n * c, hw)).unwrap();
        let mut y = ndarray::Array2::<T>::zeros((n * c, hw));
        let mut inv_std = vec![T::zero(); n * c];
        let inv_n = T::one() / T::of(hw as f64);
        for (r, row) in flat.rows().into_iter().enumerate() {
            let mean = row.sum() * inv_n;
            let var = row.fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) * inv_n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            ndarray::Zip::from(y.row_mut(r)).and(&row).for_each(|o, &v| *o = (v - mean) * is);
        }
        let y = Arc::new(y.into_shape_with_order(IxDyn(&[n, c, h, w])).unwrap());
        let yc = Arc::clone(&y);
        self.graph.op(y, &[self], move |g, _| {
            let gs = g.as_standard_layout().into_owned();
            let g2 = gs.view().into_shape_with_order((n * c, hw)).unwrap();
            let y2 = yc.view().into_shape_with_order((n * c, hw)).unwrap();
            let mut dx = ndarray::Array2::<T>::zeros((n * c, hw));
            for r in 0..n * c {
                let gr = g2.row(r);
                let yr = y2.row(r);
                let mg = gr.sum() * inv_n;
                let mgy = gr.iter().zip(yr.iter()).fold(T::zero(), |s, (&a, &b)| s + a * b) * inv_n;
                let is = inv_std[r];
                ndarray::Zip::from(dx.row_mut(r))
                    .and(&gr)
                    .and(&yr)
                    .for_each(|d, &gv, &yv| *d = is * (gv - mg - yv * mgy));
            }
            vec![Some(dx.into_shape_with_order(IxDyn(&[n, c, h, w])).unwrap())]
        })
    }

    /// Selects item `index` along axis 0, dropping that axis.
    pub fn index_batch(self, index: usize) -> Var<'g, T> {
        let a = self.value();
        let shape = a.raw_dim();
        let out = a.index_axis(Axis(0), index).to_owned();
        self.unary(out, move |g| {
            let mut d = Array::zeros(shape.clone());
            d.index_axis_mut(Axis(0), index).assign(g);
            d
        })
    }

    /// Stacks tensors of equal shape along a new leading axis.
    pub fn stack(parts: &[Var<'g, T>]) -> Var<'g, T> {
        let expanded: Vec<_> = parts
            .iter()
            .map(|p| {
                let mut shape = vec![1];
                shape.extend(p.shape());
                p.reshape(&shape)
            })
            .collect();
        Var::concat(&expanded, 0)
    }

    /// Slice `[start, end)` of axis 1.
    pub fn narrow_channels(self, start: usize, end: usize) -> Var<'g, T> {
        let a = self.value();
        let shape = a.raw_dim();
        let out = a.slice_axis(Axis(1), (start..end).into()).to_owned();
        self.unary(out, move |g| {
            let mut d = Array::zeros(shape.clone());
            d.slice_axis_mut(Axis(1), (start..end).into()).assign(g);
            d
        })
    }
}
