use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Affine map `x W + b` with `W: in × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Linear<S> {
    pub w: Array2<S>,
    pub b: Array1<S>,
}

impl<S: Scalar> Linear<S> {
    /// Uniform fan-in initialization, bias zero. Suited to a layer that
    /// feeds a ReLU.
    pub fn new(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        Self::uniform(rng, fan_in, fan_out, (6.0 / fan_in.max(1) as f64).sqrt())
    }

    /// Uniform fan-average initialization for a linear output layer.
    pub fn new_output(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        Self::uniform(rng, fan_in, fan_out, (6.0 / (fan_in + fan_out).max(1) as f64).sqrt())
    }

    fn uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize, bound: f64) -> Self {
        Linear {
            w: Array2::from_shape_fn((fan_in, fan_out), |_| S::lit(rng.random_range(-bound..bound))),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<S>) -> Array2<S> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: ArrayView2<S>, g: ArrayView2<S>, grad: &mut Linear<S>) -> Array2<S> {
        grad.w += &x.t().dot(&g);
        grad.b += &g.sum_axis(Axis(0));
        g.dot(&self.w.t())
    }
}

/// Linear layers with ReLU between them and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Mlp<S> {
    pub layers: Vec<Linear<S>>,
}

/// Inputs seen by each layer during a forward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace<S> {
    inputs: Vec<Array2<S>>,
}

impl<S: Scalar> Mlp<S> {
    /// `widths = [in, hidden.., out]`.
    pub fn new(rng: &mut impl Rng, widths: &[usize]) -> Self {
        Mlp {
            layers: widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    if i + 2 == widths.len() {
                        Linear::new_output(rng, w[0], w[1])
                    } else {
                        Linear::new(rng, w[0], w[1])
                    }
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    pub fn forward(&self, x: ArrayView2<S>) -> Array2<S> {
        self.forward_traced(x).0
    }

    pub fn forward_traced(&self, x: ArrayView2<S>) -> (Array2<S>, MlpTrace<S>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(h.view());
            inputs.push(h);
            h = if i < last { out.mapv(|v| v.max(S::zero())) } else { out };
        }
        (h, MlpTrace { inputs })
    }

    pub fn backward(&self, trace: &MlpTrace<S>, grad_out: ArrayView2<S>, grad: &mut Mlp<S>) -> Array2<S> {
        let mut g = grad_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            let x = &trace.inputs[i];
            g = self.layers[i].backward(x.view(), g.view(), &mut grad.layers[i]);
            if i > 0 {
                // x is the ReLU output of the previous layer: x > 0 iff the unit was active
                g.zip_mut_with(x, |gv, &xv| {
                    if xv <= S::zero() {
                        *gv = S::zero();
                    }
                });
            }
        }
        g
    }

    pub fn params(&self) -> impl Iterator<Item = &Linear<S>> {
        self.layers.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Linear<S>> {
        self.layers.iter_mut()
    }
}
