//! Parameter-owning building blocks.

use rand::Rng;
use reenact_tensor::{init, Binding, Float, ParamId, ParamStore, Var};

use crate::error::{Error, Result};

fn lookup<T: Float>(store: &ParamStore<T>, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
    if store.get(id).shape() != shape {
        return Err(Error::Checkpoint(format!(
            "parameter {name} has shape {:?}, config expects {:?}",
            store.get(id).shape(),
            shape
        )));
    }
    Ok(id)
}

/// Either creates parameters with fresh initial values or finds existing
/// ones, validating shapes.
pub enum Builder<'a, T: Float, R: Rng> {
    Init(&'a mut ParamStore<T>, &'a mut R),
    Load(&'a ParamStore<T>),
}

impl<T: Float, R: Rng> Builder<'_, T, R> {
    /// Weight initialized Kaiming-uniform for the given fan-in and slope.
    pub fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize, slope: f64) -> Result<ParamId> {
        match self {
            Builder::Init(store, rng) => Ok(store.add(name, init::kaiming_uniform(shape, fan_in, slope, *rng))),
            Builder::Load(store) => lookup(store, name, shape),
        }
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        match self {
            Builder::Init(store, _) => Ok(store.add(name, init::zeros(shape))),
            Builder::Load(store) => lookup(store, name, shape),
        }
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        match self {
            Builder::Init(store, rng) => Ok(store.add(name, init::normal(shape, std, *rng))),
            Builder::Load(store) => lookup(store, name, shape),
        }
    }
}

/// Fully connected layer `x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Float, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, inp: usize, out: usize, slope: f64) -> Result<Self> {
        Ok(Linear {
            weight: b.weight(&format!("{name}.w"), &[inp, out], inp, slope)?,
            bias: b.zeros(&format!("{name}.b"), &[out])?,
        })
    }

    pub fn forward<'g, T: Float>(&self, p: &Binding<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.matmul(p.var(self.weight)).add_bias(p.var(self.bias))
    }
}

/// Multi-layer perceptron with leaky rectification between layers and a
/// linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub slope: f64,
}

impl Mlp {
    /// `dims` lists input, hidden and output widths.
    pub fn new<T: Float, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, dims: &[usize], slope: f64) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let s = if i + 2 == dims.len() { 1.0 } else { slope };
                Linear::new(b, &format!("{name}.{i}"), w[0], w[1], s)
            })
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, slope })
    }

    pub fn forward<'g, T: Float>(&self, p: &Binding<'g, '_, T>, mut x: Var<'g, T>) -> Var<'g, T> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(p, x);
            if i < last {
                x = x.leaky_relu(T::of(self.slope));
            }
        }
        x
    }
}

/// Square-kernel convolution with optional bias, weight `[out, in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        inp: usize,
        out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        slope: f64,
    ) -> Result<Self> {
        let weight = b.weight(&format!("{name}.w"), &[out, inp, kernel, kernel], inp * kernel * kernel, slope)?;
        let bias = if bias {
            Some(b.zeros(&format!("{name}.b"), &[out])?)
        } else {
            None
        };
        Ok(Conv {
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn forward<'g, T: Float>(&self, p: &Binding<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        let y = x.conv2d(p.var(self.weight), self.stride, self.pad);
        match self.bias {
            Some(b) => y.add_channel_bias(p.var(b)),
            None => y,
        }
    }
}

/// Stride-2, 4×4 transposed convolution doubling the resolution, weight
/// `[in, out, 4, 4]`.
#[derive(Clone, Debug)]
pub struct UpConv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl UpConv {
    pub fn new<T: Float, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        inp: usize,
        out: usize,
        bias: bool,
        slope: f64,
    ) -> Result<Self> {
        // each output pixel receives contributions from 2x2 taps per input channel
        let weight = b.weight(&format!("{name}.w"), &[inp, out, 4, 4], inp * 4, slope)?;
        let bias = if bias {
            Some(b.zeros(&format!("{name}.b"), &[out])?)
        } else {
            None
        };
        Ok(UpConv { weight, bias })
    }

    pub fn forward<'g, T: Float>(&self, p: &Binding<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        let y = x.conv_transpose2d(p.var(self.weight), 2, 1);
        match self.bias {
            Some(b) => y.add_channel_bias(p.var(b)),
            None => y,
        }
    }
}
