use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Scalar types the engine can differentiate over (`f32` and `f64`).
pub trait Float: NdFloat + FromPrimitive + Default + Send + Sync + 'static {
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }

    fn to_f64(self) -> f64;
}

impl Float for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Float for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}
