//! Dense multilayer perceptron with reverse-mode gradients.
//!
//! A forward pass can optionally carry `m` tangent directions alongside the
//! values (forward-mode). The backward pass then differentiates through both
//! the values and the tangents, which is what lets a loss depend on the
//! network's input-gradient while still producing exact parameter gradients.
//!
//! Tangents are stored stacked: row `j * n + i` of a tangent array is
//! direction `j` of batch row `i`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::real::{sigmoid, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
    Sigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "softplus" => Activation::Softplus,
            "sigmoid" => Activation::Sigmoid,
            _ => return None,
        })
    }

    /// `(value, first derivative, second derivative)` at `z`.
    #[inline]
    fn eval<T: Real>(self, z: T) -> (T, T, T) {
        match self {
            Activation::Identity => (z, T::one(), T::zero()),
            Activation::Relu => {
                if z > T::zero() {
                    (z, T::one(), T::zero())
                } else if z.is_nan() {
                    // let NaN through so the loss check can see it
                    (z, z, z)
                } else {
                    (T::zero(), T::zero(), T::zero())
                }
            }
            Activation::Softplus => {
                // one exp shared by softplus and its sigmoid derivative
                let e = (-z.abs()).exp();
                let inv = T::one() / (T::one() + e);
                let s = if z >= T::zero() { inv } else { e * inv };
                (z.max(T::zero()) + (T::one() + e).ln(), s, s * (T::one() - s))
            }
            Activation::Sigmoid => {
                let a = sigmoid(z);
                let d1 = a * (T::one() - a);
                (a, d1, d1 * (T::one() - a - a))
            }
        }
    }

    fn has_curvature(self) -> bool {
        matches!(self, Activation::Softplus | Activation::Sigmoid)
    }
}

/// Affine layer `y = x W^T + b`, `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
    hidden: Activation,
    output: Activation,
    generation: u64,
}

impl<T: Real> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.hidden == other.hidden && self.output == other.output
    }
}

impl<T: Real> Mlp<T> {
    /// `sizes = [in, h1, ..., out]`. Weights are uniform in
    /// `+-sqrt(6 / fan_in)` for hidden layers and `+-sqrt(3 / fan_in)` for the
    /// output layer; biases start at zero.
    pub fn new<R: Rng>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let gain = if l == last { 3.0 } else { 6.0 };
                let bound = (gain / w[0] as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_fn((w[1], w[0]), |_| T::of(rng.gen_range(-bound..=bound))),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self { layers, hidden, output, generation: 0 }
    }

    pub fn from_layers(layers: Vec<Dense<T>>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("an MLP needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} has {} outputs but layer {} expects {} inputs",
                    pair[0].outputs(),
                    l + 1,
                    pair[1].inputs()
                )));
            }
        }
        for (l, d) in layers.iter().enumerate() {
            if d.bias.len() != d.outputs() {
                return Err(Error::ShapeMismatch(format!("layer {l} bias length {} != {}", d.bias.len(), d.outputs())));
            }
        }
        Ok(Self { layers, hidden, output, generation: 0 })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    /// Mutable access to the parameters; invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.outputs())).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense { weight: l.weight.mapv(|v| U::of(v.as_f64())), bias: l.bias.mapv(|v| U::of(v.as_f64())) })
                .collect(),
            hidden: self.hidden,
            output: self.output,
            generation: 0,
        }
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Batched forward pass over the rows of `input`. `tangents`, when given,
    /// must have a multiple of `input.nrows()` rows.
    pub fn forward(&self, input: Array2<T>, tangents: Option<Array2<T>>) -> Result<MlpOutput<T>> {
        let n = input.nrows();
        if input.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        let m = match &tangents {
            Some(t) => {
                if t.ncols() != input.ncols() || (n > 0 && t.nrows() % n != 0) || (n == 0 && t.nrows() != 0) {
                    return Err(Error::ShapeMismatch(format!(
                        "tangent block {:?} incompatible with input {:?}",
                        t.dim(),
                        input.dim()
                    )));
                }
                if n == 0 {
                    0
                } else {
                    t.nrows() / n
                }
            }
            None => 0,
        };
        let with_tangents = tangents.is_some();
        let mut tape = MlpTape {
            generation: self.generation,
            n,
            m,
            with_tangents,
            inputs: Vec::with_capacity(self.layers.len()),
            tangent_inputs: Vec::with_capacity(self.layers.len()),
            d1: Vec::with_capacity(self.layers.len()),
            d2: Vec::with_capacity(self.layers.len()),
            z_dot: Vec::with_capacity(self.layers.len()),
        };
        let mut a = input;
        let mut a_dot = tangents;
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation(l);
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            let mut d1 = Array2::zeros(z.raw_dim());
            let mut d2 = if with_tangents && act.has_curvature() { Array2::zeros(z.raw_dim()) } else { Array2::zeros((0, 0)) };
            if d2.is_empty() {
                Zip::from(&mut z).and(&mut d1).for_each(|z, d1| {
                    let (v, g, _) = act.eval(*z);
                    *z = v;
                    *d1 = g;
                });
            } else {
                Zip::from(&mut z).and(&mut d1).and(&mut d2).for_each(|z, d1, d2| {
                    let (v, g, h) = act.eval(*z);
                    *z = v;
                    *d1 = g;
                    *d2 = h;
                });
            }
            let next_dot = a_dot.as_ref().map(|ad| {
                let zd = ad.dot(&layer.weight.t());
                let mut out = zd.clone();
                for j in 0..m {
                    let mut block = out.slice_mut(s![j * n..(j + 1) * n, ..]);
                    block *= &d1;
                }
                (zd, out)
            });
            tape.inputs.push(a);
            tape.d1.push(d1);
            tape.d2.push(d2);
            match next_dot {
                Some((zd, out)) => {
                    tape.tangent_inputs.push(a_dot.take().expect("tangent input present"));
                    tape.z_dot.push(zd);
                    a_dot = Some(out);
                }
                None => {
                    tape.tangent_inputs.push(Array2::zeros((0, 0)));
                    tape.z_dot.push(Array2::zeros((0, 0)));
                }
            }
            a = z;
        }
        Ok(MlpOutput { value: a, tangent: a_dot, tape })
    }

    /// Reverse pass. Accumulates parameter gradients of
    /// `<value_bar, value> + <tangent_bar, tangent>` into `grad` and returns
    /// the matching cotangents of the input and its tangents.
    pub fn backward(
        &self,
        tape: &MlpTape<T>,
        value_bar: ArrayView2<T>,
        tangent_bar: Option<ArrayView2<T>>,
        grad: &mut MlpGrad<T>,
    ) -> Result<(Array2<T>, Option<Array2<T>>)> {
        if tape.generation != self.generation {
            return Err(Error::StaleTape { recorded: tape.generation, current: self.generation });
        }
        if tape.inputs.len() != self.layers.len() || grad.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("tape or gradient does not match this network".into()));
        }
        let (n, m) = (tape.n, tape.m);
        if value_bar.dim() != (n, self.output_dim()) {
            return Err(Error::ShapeMismatch(format!(
                "output cotangent {:?} != ({n}, {})",
                value_bar.dim(),
                self.output_dim()
            )));
        }
        let mut a_bar = value_bar.to_owned();
        let mut a_dot_bar: Option<Array2<T>> = match tangent_bar {
            Some(tb) if tape.with_tangents => {
                if tb.dim() != (m * n, self.output_dim()) {
                    return Err(Error::ShapeMismatch(format!("tangent cotangent {:?} has wrong shape", tb.dim())));
                }
                Some(tb.to_owned())
            }
            Some(_) => return Err(Error::ShapeMismatch("tape was recorded without tangents".into())),
            None => None,
        };
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let d1 = &tape.d1[l];
            let mut z_bar = a_bar;
            z_bar *= d1;
            let z_dot_bar = match a_dot_bar.take() {
                Some(mut adb) => {
                    let d2 = &tape.d2[l];
                    if !d2.is_empty() {
                        let zd = &tape.z_dot[l];
                        for j in 0..m {
                            let rows = s![j * n..(j + 1) * n, ..];
                            Zip::from(&mut z_bar)
                                .and(adb.slice(rows))
                                .and(zd.slice(rows))
                                .and(d2)
                                .for_each(|zb, &ab, &zd, &h| *zb += ab * zd * h);
                        }
                    }
                    for j in 0..m {
                        let mut block = adb.slice_mut(s![j * n..(j + 1) * n, ..]);
                        block *= d1;
                    }
                    Some(adb)
                }
                None => None,
            };
            let g = &mut grad.layers[l];
            ndarray::linalg::general_mat_mul(T::one(), &z_bar.t(), &tape.inputs[l], T::one(), &mut g.weight);
            g.bias += &z_bar.sum_axis(Axis(0));
            if let Some(zdb) = &z_dot_bar {
                ndarray::linalg::general_mat_mul(T::one(), &zdb.t(), &tape.tangent_inputs[l], T::one(), &mut g.weight);
            }
            a_bar = z_bar.dot(&layer.weight);
            a_dot_bar = z_dot_bar.map(|zdb| zdb.dot(&layer.weight));
        }
        Ok((a_bar, a_dot_bar))
    }
}

pub struct MlpOutput<T> {
    pub value: Array2<T>,
    pub tangent: Option<Array2<T>>,
    pub tape: MlpTape<T>,
}

/// Intermediate state recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpTape<T> {
    generation: u64,
    n: usize,
    m: usize,
    with_tangents: bool,
    inputs: Vec<Array2<T>>,
    tangent_inputs: Vec<Array2<T>>,
    d1: Vec<Array2<T>>,
    d2: Vec<Array2<T>>,
    z_dot: Vec<Array2<T>>,
}

impl<T> MlpTape<T> {
    pub fn rows(&self) -> usize {
        self.n
    }

    /// The input batch the pass was run on.
    pub fn input(&self) -> &Array2<T> {
        &self.inputs[0]
    }
}

/// Gradient accumulator with the same shapes as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> MlpGrad<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        Self { layers: mlp.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, s: T) {
        for l in self.layers.iter_mut() {
            l.weight *= s;
            l.bias *= s;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| *v == T::zero()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn zero_softplus_network_outputs_final_bias() {
        let mut net = Mlp::<f64>::new(&[3, 4, 1], Activation::Softplus, Activation::Identity, &mut rng());
        for l in net.layers_mut() {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        let out = net.forward(array![[0.3, -1.0, 2.0]], None).unwrap();
        assert_eq!(out.value[[0, 0]], 0.0);
        // the hidden activations are softplus(0) = ln 2
        assert!((out.tape.inputs[1][[0, 0]] - std::f64::consts::LN_2).abs() < 1e-15);
        net.layers_mut()[1].weight.fill(1.0);
        let out = net.forward(array![[0.3, -1.0, 2.0]], None).unwrap();
        assert!((out.value[[0, 0]] - 4.0 * std::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn identity_linear_layer() {
        let layer = Dense { weight: Array2::eye(3), bias: Array1::zeros(3) };
        let net = Mlp::from_layers(vec![layer], Activation::Identity, Activation::Identity).unwrap();
        let x = array![[1.5, -2.0, 0.25], [0.0, 1.0, 2.0]];
        assert_eq!(net.forward(x.clone(), None).unwrap().value, x);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Mlp::<f32>::new(&[5, 16, 16, 2], Activation::Relu, Activation::Sigmoid, &mut rng());
        let x = Array2::from_shape_fn((7, 5), |(i, j)| (i as f32 * 0.3 - j as f32 * 0.7).sin());
        let a = net.forward(x.clone(), None).unwrap().value;
        let b = net.forward(x, None).unwrap().value;
        assert_eq!(a, b);
    }

    #[test]
    fn linear_layer_gradients_are_closed_form() {
        let layer = Dense { weight: array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], bias: array![0.1, 0.2, 0.3] };
        let net = Mlp::from_layers(vec![layer], Activation::Identity, Activation::Identity).unwrap();
        let x = array![[0.5, -1.5]];
        let out = net.forward(x.clone(), None).unwrap();
        let cot = array![[1.0, -2.0, 0.5]];
        let mut g = MlpGrad::zeros_like(&net);
        let (xbar, _) = net.backward(&out.tape, cot.view(), None, &mut g).unwrap();
        assert_eq!(g.layers[0].bias, array![1.0, -2.0, 0.5]);
        let outer = cot.t().dot(&x);
        assert_eq!(g.layers[0].weight, outer);
        assert_eq!(xbar, cot.dot(&net.layers()[0].weight));
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let net = Mlp::<f64>::new(&[4, 8, 8, 1], Activation::Softplus, Activation::Identity, &mut rng());
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64 * 0.1);
        let xd = Array2::from_shape_fn((9, 4), |(i, j)| (i * j) as f64 * 0.05);
        let out = net.forward(x, Some(xd)).unwrap();
        let mut g = MlpGrad::zeros_like(&net);
        let (xb, xdb) = net
            .backward(&out.tape, Array2::zeros((3, 1)).view(), Some(Array2::zeros((9, 1)).view()), &mut g)
            .unwrap();
        assert!(g.is_zero());
        assert!(xb.iter().chain(xdb.unwrap().iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut net = Mlp::<f64>::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng());
        let out = net.forward(array![[1.0, 2.0]], None).unwrap();
        net.layers_mut()[0].bias[0] = 0.5;
        let mut g = MlpGrad::zeros_like(&net);
        let err = net.backward(&out.tape, array![[1.0]].view(), None, &mut g).unwrap_err();
        assert!(matches!(err, Error::StaleTape { .. }));
    }

    #[test]
    fn input_width_mismatch_is_rejected() {
        let net = Mlp::<f64>::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng());
        assert!(matches!(net.forward(array![[1.0, 2.0, 3.0]], None), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn tangents_match_finite_differences_of_the_forward_pass() {
        let net = Mlp::<f64>::new(&[3, 12, 12, 1], Activation::Softplus, Activation::Identity, &mut rng());
        let x = array![[0.2, -0.4, 0.9]];
        let dirs = Array2::from_shape_vec((2, 3), vec![1.0, 0.0, 0.5, -0.3, 0.7, 0.1]).unwrap();
        let out = net.forward(x.clone(), Some(dirs.clone())).unwrap();
        let t = out.tangent.unwrap();
        for j in 0..2 {
            let h = 1e-6;
            let xp = &x + &(&dirs.slice(s![j..j + 1, ..]) * h);
            let xm = &x - &(&dirs.slice(s![j..j + 1, ..]) * h);
            let fd = (net.forward(xp, None).unwrap().value[[0, 0]] - net.forward(xm, None).unwrap().value[[0, 0]]) / (2.0 * h);
            assert!((fd - t[[j, 0]]).abs() < 1e-8, "{fd} vs {}", t[[j, 0]]);
        }
    }
}
