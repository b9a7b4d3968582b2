use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use ndarray::{Array1, Array2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point element type of a network (`f32` for training, `f64` for
/// gradient checks).
pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + MulAssign
    + FromPrimitive
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + LinalgScalar
        + ScalarOperand
        + AddAssign
        + MulAssign
        + FromPrimitive
        + Debug
        + Display
        + Sum
        + Send
        + Sync
        + 'static
{
}

#[inline]
pub fn cast<F: Scalar>(v: f64) -> F {
    F::from_f64(v).expect("representable")
}

/// Affine map `y = x·Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// He-normal weights, zero bias.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let std = (2.0 / inputs.max(1) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((outputs, inputs), || {
            let z: f64 = StandardNormal.sample(rng);
            cast(z * std)
        });
        Self {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }
}

/// Stack of dense layers with ReLU after each hidden layer (and after the
/// last one when `relu_last`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
    pub relu_last: bool,
}

#[derive(Debug, Clone)]
pub struct MlpCache<F> {
    /// Input of every layer; `inputs[l + 1]` is layer `l`'s activation.
    inputs: Vec<Array2<F>>,
    /// Inverted-dropout masks applied after hidden activations.
    masks: Vec<Option<Array2<F>>>,
}

/// Dropout applied to hidden activations during training.
pub struct Dropout<'a, R> {
    pub rate: f64,
    pub rng: &'a mut R,
}

impl<F: Scalar> Mlp<F> {
    pub fn init<R: Rng>(input: usize, widths: &[usize], relu_last: bool, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input;
        for &w in widths {
            layers.push(Dense::init(prev, w, rng));
            prev = w;
        }
        Self { layers, relu_last }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
            relu_last: self.relu_last,
        }
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, Dense::inputs)
    }

    fn activates(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.relu_last
    }

    pub fn forward(&self, x: Array2<F>) -> Array2<F> {
        self.forward_cached::<rand_chacha::ChaCha8Rng>(x, None).0
    }

    pub fn forward_cached<R: Rng>(
        &self,
        x: Array2<F>,
        mut dropout: Option<Dropout<'_, R>>,
    ) -> (Array2<F>, MlpCache<F>) {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut masks = Vec::with_capacity(self.layers.len());
        inputs.push(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(inputs.last().expect("input"));
            if self.activates(l) {
                y.mapv_inplace(|v| v.max(F::zero()));
            }
            let hidden = l + 1 < self.layers.len();
            let mask = match dropout.as_mut() {
                Some(d) if hidden && d.rate > 0.0 => {
                    let keep = 1.0 - d.rate;
                    let scale: F = cast(1.0 / keep);
                    let m = Array2::from_shape_simple_fn(y.raw_dim(), || {
                        if d.rng.random::<f64>() < keep {
                            scale
                        } else {
                            F::zero()
                        }
                    });
                    y *= &m;
                    Some(m)
                }
                _ => None,
            };
            masks.push(mask);
            inputs.push(y);
        }
        let out = inputs.last().expect("output").clone();
        (out, MlpCache { inputs, masks })
    }

    /// Accumulates parameter gradients into `grads` and returns `∂L/∂x`.
    pub fn backward(&self, cache: &MlpCache<F>, dout: Array2<F>, grads: &mut Mlp<F>) -> Array2<F> {
        let mut delta = dout;
        for l in (0..self.layers.len()).rev() {
            if let Some(m) = &cache.masks[l] {
                delta *= m;
            }
            if self.activates(l) {
                let act = &cache.inputs[l + 1];
                ndarray::Zip::from(&mut delta).and(act).for_each(|d, &a| {
                    if a <= F::zero() {
                        *d = F::zero();
                    }
                });
            }
            let x = &cache.inputs[l];
            let g = &mut grads.layers[l];
            ndarray::linalg::general_mat_mul(F::one(), &delta.t(), x, F::one(), &mut g.weight);
            g.bias += &delta.sum_axis(Axis(0));
            delta = delta.dot(&self.layers[l].weight);
        }
        delta
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [F])>) {
        for (i, l) in self.layers.iter().enumerate() {
            out.push((
                format!("{prefix}.{i}.weight"),
                l.weight.shape().to_vec(),
                l.weight.as_slice().expect("contiguous"),
            ));
            out.push((
                format!("{prefix}.{i}.bias"),
                l.bias.shape().to_vec(),
                l.bias.as_slice().expect("contiguous"),
            ));
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [F]>) {
        for l in self.layers.iter_mut() {
            out.push(l.weight.as_slice_mut().expect("contiguous"));
            out.push(l.bias.as_slice_mut().expect("contiguous"));
        }
    }
}
