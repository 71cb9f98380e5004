//! 2-D convolution and transposed convolution via im2col + GEMM.

use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Ix4, IxDyn};

use crate::{Array, Float, Var};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `image[C,H,W]` into `cols[C*k*k, out_h*out_w]`.
fn im2col<T: Float>(image: &[T], g: &Geometry, cols: &mut [T]) {
    let k = g.kernel;
    let n = g.cols();
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `image`.
fn col2im<T: Float>(cols: &[T], g: &Geometry, image: &mut [T]) {
    let k = g.kernel;
    let n = g.cols();
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn gemm<T: Float>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>, beta: T, c: &mut ArrayViewMut2<'_, T>) {
    general_mat_mul(T::one(), &a, &b, beta, c);
}

impl<'g, T: Float> Var<'g, T> {
    /// Cross-correlation of `self[N,C,H,W]` with `weight[O,C,k,k]`.
    pub fn conv2d(self, weight: Var<'g, T>, stride: usize, pad: usize) -> Var<'g, T> {
        let x = self.value().as_standard_layout().into_owned();
        let w = weight.value().as_standard_layout().into_owned();
        let (n, c, h, wd) = x.view().into_dimensionality::<Ix4>().expect("conv2d input must be 4-D").dim();
        let (o, wc, k, k2) = w.view().into_dimensionality::<Ix4>().expect("conv2d weight must be 4-D").dim();
        assert_eq!(c, wc, "conv2d: channel mismatch");
        assert_eq!(k, k2, "conv2d: square kernels only");
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d: kernel larger than input");
        let geo = Geometry {
            channels: c,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (wd + 2 * pad - k) / stride + 1,
        };
        let (rows, ncols) = (geo.rows(), geo.cols());
        let xs = x.as_slice().unwrap();
        let w2 = w.view().into_shape_with_order((o, rows)).unwrap().to_owned();
        let mut out = vec![T::zero(); n * o * ncols];
        let mut all_cols = Vec::with_capacity(n);
        for b in 0..n {
            let mut cols = vec![T::zero(); rows * ncols];
            im2col(&xs[b * c * h * wd..(b + 1) * c * h * wd], &geo, &mut cols);
            let cv = ArrayView2::from_shape((rows, ncols), &cols).unwrap();
            let mut ov = ArrayViewMut2::from_shape((o, ncols), &mut out[b * o * ncols..(b + 1) * o * ncols]).unwrap();
            gemm(w2.view(), cv, T::zero(), &mut ov);
            all_cols.push(cols);
        }
        let out = Array::from_shape_vec(IxDyn(&[n, o, geo.out_h, geo.out_w]), out).unwrap();
        let wshape = w.raw_dim();
        self.graph.op(Arc::new(out), &[self, weight], move |g, need| {
            let gs = g.as_standard_layout().into_owned();
            let gsl = gs.as_slice().unwrap();
            let mut gx = need[0].then(|| vec![T::zero(); n * c * h * wd]);
            let mut gw = need[1].then(|| Array2::<T>::zeros((o, rows)));
            let mut gcols = vec![T::zero(); rows * ncols];
            for b in 0..n {
                let gb = ArrayView2::from_shape((o, ncols), &gsl[b * o * ncols..(b + 1) * o * ncols]).unwrap();
                if let Some(gw) = gw.as_mut() {
                    let cv = ArrayView2::from_shape((rows, ncols), &all_cols[b]).unwrap();
                    gemm(gb, cv.t(), T::one(), &mut gw.view_mut());
                }
                if let Some(gx) = gx.as_mut() {
                    let mut gc = ArrayViewMut2::from_shape((rows, ncols), &mut gcols).unwrap();
                    gemm(w2.t(), gb, T::zero(), &mut gc);
                    col2im(&gcols, &geo, &mut gx[b * c * h * wd..(b + 1) * c * h * wd]);
                }
            }
            vec![
                gx.map(|v| Array::from_shape_vec(IxDyn(&[n, c, h, wd]), v).unwrap()),
                gw.map(|v| v.into_shape_with_order(wshape.clone()).unwrap()),
            ]
        })
    }

    /// Transposed convolution of `self[N,Cin,H,W]` with `weight[Cin,Cout,k,k]`;
    /// output side is `(H-1)*stride - 2*pad + k`.
    pub fn conv_transpose2d(self, weight: Var<'g, T>, stride: usize, pad: usize) -> Var<'g, T> {
        let x = self.value().as_standard_layout().into_owned();
        let w = weight.value().as_standard_layout().into_owned();
        let (n, cin, h, wd) = x
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv_transpose2d input must be 4-D")
            .dim();
        let (wc, cout, k, k2) = w
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv_transpose2d weight must be 4-D")
            .dim();
        assert_eq!(cin, wc, "conv_transpose2d: channel mismatch");
        assert_eq!(k, k2, "conv_transpose2d: square kernels only");
        let oh = (h - 1) * stride + k - 2 * pad;
        let ow = (wd - 1) * stride + k - 2 * pad;
        // The output plays the role of the image in an ordinary convolution
        // whose result has the input's spatial size.
        let geo = Geometry {
            channels: cout,
            height: oh,
            width: ow,
            kernel: k,
            stride,
            pad,
            out_h: h,
            out_w: wd,
        };
        let (rows, ncols) = (geo.rows(), geo.cols());
        let xs = x.as_slice().unwrap();
        let w2 = w.view().into_shape_with_order((cin, rows)).unwrap().to_owned();
        let mut out = vec![T::zero(); n * cout * oh * ow];
        let mut cols = vec![T::zero(); rows * ncols];
        for b in 0..n {
            let xb = ArrayView2::from_shape((cin, ncols), &xs[b * cin * ncols..(b + 1) * cin * ncols]).unwrap();
            let mut cv = ArrayViewMut2::from_shape((rows, ncols), &mut cols).unwrap();
            gemm(w2.t(), xb, T::zero(), &mut cv);
            col2im(&cols, &geo, &mut out[b * cout * oh * ow..(b + 1) * cout * oh * ow]);
        }
        let out = Array::from_shape_vec(IxDyn(&[n, cout, oh, ow]), out).unwrap();
        let wshape = w.raw_dim();
        self.graph.op(Arc::new(out), &[self, weight], move |g, need| {
            let gs = g.as_standard_layout().into_owned();
            let gsl = gs.as_slice().unwrap();
            let xs = x.as_slice().unwrap();
            let mut gx = need[0].then(|| vec![T::zero(); n * cin * ncols]);
            let mut gw = need[1].then(|| Array2::<T>::zeros((cin, rows)));
            let mut gcols = vec![T::zero(); rows * ncols];
            for b in 0..n {
                im2col(&gsl[b * cout * oh * ow..(b + 1) * cout * oh * ow], &geo, &mut gcols);
                let gc = ArrayView2::from_shape((rows, ncols), &gcols).unwrap();
                if let Some(gx) = gx.as_mut() {
                    let mut gxb =
                        ArrayViewMut2::from_shape((cin, ncols), &mut gx[b * cin * ncols..(b + 1) * cin * ncols]).unwrap();
                    gemm(w2.view(), gc, T::zero(), &mut gxb);
                }
                if let Some(gw) = gw.as_mut() {
                    let xb = ArrayView2::from_shape((cin, ncols), &xs[b * cin * ncols..(b + 1) * cin * ncols]).unwrap();
                    gemm(xb, gc.t(), T::one(), &mut gw.view_mut());
                }
            }
            vec![
                gx.map(|v| Array::from_shape_vec(IxDyn(&[n, cin, h, wd]), v).unwrap()),
                gw.map(|v| v.into_shape_with_order(wshape.clone()).unwrap()),
            ]
        })
    }
}
