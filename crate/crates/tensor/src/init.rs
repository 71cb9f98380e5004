//! Weight initializers. Samples are drawn in `f64` and cast, so the same seed
//! gives the same (rounded) weights for every scalar type.

use ndarray::IxDyn;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::{Array, Float};

pub fn zeros<T: Float>(shape: &[usize]) -> Array<T> {
    Array::zeros(IxDyn(shape))
}

pub fn normal<T: Float, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Array<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Array::from_shape_vec(IxDyn(shape), data).unwrap()
}

pub fn uniform<T: Float, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Array<T> {
    let n: usize = shape.iter().product();
    if bound == 0.0 {
        return zeros(shape);
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Array::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// He-style uniform init for a layer with `fan_in` inputs followed by a
/// leaky rectifier of the given slope.
pub fn kaiming_uniform<T: Float, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, slope: f64, rng: &mut R) -> Array<T> {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    uniform(shape, bound, rng)
}
