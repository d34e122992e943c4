use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_len, Error, Result};

/// Initial negative-branch slope of every PReLU neuron.
pub const INITIAL_SLOPE: f64 = 0.25;

/// Default number of hidden layers: four `N × N` weight matrices.
pub const DEFAULT_HIDDEN_LAYERS: usize = 3;

/// `x` for `x ≥ 0`, `a·x` otherwise.
#[inline]
pub fn prelu(x: f64, a: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        a * x
    }
}

/// `(∂/∂x, ∂/∂a)`; `x = 0` takes the non-negative branch.
#[inline]
pub fn prelu_derivatives(x: f64, a: f64) -> (f64, f64) {
    if x >= 0.0 {
        (1.0, 0.0)
    } else {
        (a, x)
    }
}

pub fn prelu_vec(x: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
    x.zip_map(a, prelu)
}

/// One affine layer, followed by PReLU when `slopes` is present.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub slopes: Option<DVector<f64>>,
}

impl Layer {
    pub fn zeros_like(&self) -> Self {
        Self {
            weights: DMatrix::zeros(self.weights.nrows(), self.weights.ncols()),
            bias: DVector::zeros(self.bias.len()),
            slopes: self.slopes.as_ref().map(|s| DVector::zeros(s.len())),
        }
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len() + self.slopes.as_ref().map_or(0, |s| s.len())
    }
}

/// Fully connected network: PReLU hidden layers and an affine output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    // bumped on every parameter mutation so stale caches are detected
    version: u64,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each layer (column per sample).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<DMatrix<f64>>,
    version: u64,
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        param_slices(&self.layers)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}

fn param_slices(layers: &[Layer]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(3 * layers.len());
    for l in layers {
        out.push(l.weights.as_slice());
        out.push(l.bias.as_slice());
        if let Some(s) = &l.slopes {
            out.push(s.as_slice());
        }
    }
    out
}

/// Row-major `W₁, b₁, a₁, W₂, b₂, a₂, …, W_out, b_out`.
fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        for r in 0..l.weights.nrows() {
            out.extend(l.weights.row(r).iter());
        }
        out.extend(l.bias.iter());
        if let Some(s) = &l.slopes {
            out.extend(s.iter());
        }
    }
    out
}

impl Network {
    /// He-normal weights (`std = √(2/fan_in)`), zero biases, PReLU slopes
    /// of 0.25. `widths` lists every layer width from input to output.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network needs at least input and output widths, all positive (got {widths:?})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = widths.len() - 1;
        let layers = (0..n_layers)
            .map(|i| {
                let (fan_in, fan_out) = (widths[i], widths[i + 1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                // fill row by row so the draw order matches the serialized layout
                let mut weights = DMatrix::zeros(fan_out, fan_in);
                for r in 0..fan_out {
                    for c in 0..fan_in {
                        weights[(r, c)] = normal.sample(&mut rng);
                    }
                }
                Layer {
                    weights,
                    bias: DVector::zeros(fan_out),
                    slopes: (i + 1 < n_layers).then(|| DVector::from_element(fan_out, INITIAL_SLOPE)),
                }
            })
            .collect();
        Ok(Self { layers, version: 0 })
    }

    /// `hidden_layers` hidden layers of width `n` between input and output of width `n`.
    pub fn square(n: usize, hidden_layers: usize, seed: u64) -> Result<Self> {
        Self::init(&vec![n; hidden_layers + 2], seed)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            check_len(l.weights.nrows(), l.bias.len())?;
            let last = i + 1 == layers.len();
            match (&l.slopes, last) {
                (Some(s), false) => check_len(l.weights.nrows(), s.len())?,
                (None, true) => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {i}: hidden layers need PReLU slopes and the output layer must not have any"
                    )))
                }
            }
            if i > 0 {
                check_len(layers[i - 1].weights.nrows(), l.weights.ncols())?;
            }
        }
        Ok(Self { layers, version: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weights.ncols()];
        w.extend(self.layers.iter().map(|l| l.weights.nrows()));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    /// Inverse of [`Network::to_flat`] for a network of the same shape.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len(self.num_params(), flat.len())?;
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for r in 0..l.weights.nrows() {
                for c in 0..l.weights.ncols() {
                    l.weights[(r, c)] = it.next().expect("length checked");
                }
            }
            for b in l.bias.iter_mut() {
                *b = it.next().expect("length checked");
            }
            if let Some(s) = &mut l.slopes {
                for a in s.iter_mut() {
                    *a = it.next().expect("length checked");
                }
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Mutable parameter groups in [`Gradients::slices`] order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out = Vec::with_capacity(3 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if let Some(s) = &mut l.slopes {
                out.push(s.as_mut_slice());
            }
        }
        out
    }

    /// Forward pass on a batch (one column per sample).
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
        check_len(self.input_width(), x.nrows())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for l in &self.layers {
            let mut z = &l.weights * &current;
            for mut col in z.column_iter_mut() {
                col += &l.bias;
            }
            let next = match &l.slopes {
                Some(a) => {
                    let mut act = z.clone();
                    for mut col in act.column_iter_mut() {
                        for (v, &s) in col.iter_mut().zip(a.iter()) {
                            *v = prelu(*v, s);
                        }
                    }
                    act
                }
                None => z.clone(),
            };
            inputs.push(current);
            pre.push(z);
            current = next;
        }
        Ok((
            current,
            ForwardCache {
                inputs,
                pre,
                version: self.version,
            },
        ))
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<(DVector<f64>, ForwardCache)> {
        let (y, cache) = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()))?;
        Ok((y.column(0).into_owned(), cache))
    }

    /// Output only, without keeping the cache.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.input_width(), x.len())?;
        let mut current = x.clone();
        for l in &self.layers {
            let mut z = &l.weights * &current;
            z += &l.bias;
            if let Some(a) = &l.slopes {
                z.zip_apply(a, |v, s| *v = prelu(*v, s));
            }
            current = z;
        }
        Ok(current)
    }

    /// Gradients of `Σ_samples ⟨grad_y, y⟩` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, grad_y: &DMatrix<f64>) -> Result<Gradients> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "forward cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        check_len(self.output_width(), grad_y.nrows())?;
        check_len(cache.inputs[0].ncols(), grad_y.ncols())?;
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        let mut upstream = grad_y.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[i];
            let dz = match &l.slopes {
                Some(a) => {
                    let ga = grads[i].slopes.as_mut().expect("shape mirrors network");
                    let mut dz = upstream;
                    for (mut dcol, zcol) in dz.column_iter_mut().zip(pre.column_iter()) {
                        for j in 0..a.len() {
                            let (dx, da) = prelu_derivatives(zcol[j], a[j]);
                            ga[j] += dcol[j] * da;
                            dcol[j] *= dx;
                        }
                    }
                    dz
                }
                None => upstream,
            };
            grads[i].weights = &dz * cache.inputs[i].transpose();
            grads[i].bias = dz.column_sum();
            upstream = if i > 0 { l.weights.tr_mul(&dz) } else { DMatrix::zeros(0, 0) };
        }
        Ok(Gradients { layers: grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prelu_values() {
        assert_eq!(prelu(2.0, 0.25), 2.0);
        assert_eq!(prelu(-2.0, 0.25), -0.5);
        assert_eq!(prelu(0.0, 0.7), 0.0);
        assert_eq!(prelu_derivatives(0.0, 0.7), (1.0, 0.0));
        assert_eq!(prelu_derivatives(-3.0, 0.7), (0.7, -3.0));
        let v = prelu_vec(&DVector::from_vec(vec![-1.0, 2.0]), &DVector::from_vec(vec![0.5, 0.5]));
        assert_eq!(v, DVector::from_vec(vec![-0.5, 2.0]));
    }

    #[test]
    fn parameter_count_formula() {
        for n in [1usize, 2, 10, 37] {
            let net = Network::square(n, DEFAULT_HIDDEN_LAYERS, 0).unwrap();
            assert_eq!(net.num_params(), 4 * n * n + 7 * n);
            assert_eq!(net.to_flat().len(), net.num_params());
        }
        assert_eq!(Network::square(10, 3, 0).unwrap().num_params(), 470);
        assert_eq!(Network::square(1, 3, 0).unwrap().num_params(), 11);
    }

    #[test]
    fn init_is_deterministic() {
        let a = Network::square(12, 3, 42).unwrap();
        let b = Network::square(12, 3, 42).unwrap();
        let c = Network::square(12, 3, 43).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        assert_ne!(a.to_flat(), c.to_flat());
        assert!(a.layers()[0].bias.iter().all(|&v| v == 0.0));
        assert!(a.layers()[0].slopes.as_ref().unwrap().iter().all(|&v| v == INITIAL_SLOPE));
        assert!(a.layers()[3].slopes.is_none());
    }

    #[test]
    fn he_init_scale() {
        let n = 200;
        let net = Network::square(n, 1, 5).unwrap();
        let w = &net.layers()[0].weights;
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var - 2.0 / n as f64).abs() < 0.05 * 2.0 / n as f64);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = Network::square(4, 2, 1).unwrap();
        let zeros = vec![0.0; net.num_params()];
        net.set_flat(&zeros).unwrap();
        let (y, _) = net.forward(&DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5])).unwrap();
        assert_eq!(y, DVector::zeros(4));
    }

    fn identity_net(hidden: usize, a: f64) -> Network {
        let mut layers = Vec::new();
        for i in 0..=hidden {
            layers.push(Layer {
                weights: DMatrix::identity(2, 2),
                bias: DVector::zeros(2),
                slopes: (i < hidden).then(|| DVector::from_element(2, a)),
            });
        }
        Network::from_layers(layers).unwrap()
    }

    #[test]
    fn hand_composition() {
        let net = identity_net(1, 0.25);
        let (y, _) = net.forward(&DVector::from_vec(vec![-1.0, 2.0])).unwrap();
        assert_eq!(y, DVector::from_vec(vec![-0.25, 2.0]));
    }

    #[test]
    fn identity_stack_is_repeated_prelu() {
        let net = identity_net(2, 0.3);
        let x = DVector::from_vec(vec![-1.7, 0.4]);
        let a = DVector::from_element(2, 0.3);
        let expected = prelu_vec(&prelu_vec(&x, &a), &a);
        assert_eq!(net.eval(&x).unwrap(), expected);
        assert_eq!(net.forward(&x).unwrap().0, expected);
    }

    #[test]
    fn shape_errors() {
        let net = Network::square(3, 1, 0).unwrap();
        assert!(net.forward(&DVector::zeros(4)).is_err());
        let (_, cache) = net.forward(&DVector::zeros(3)).unwrap();
        assert!(net.backward(&cache, &DMatrix::zeros(2, 1)).is_err());
        assert!(Network::init(&[3], 0).is_err());
        assert!(Network::init(&[3, 0, 3], 0).is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Network::square(3, 1, 0).unwrap();
        let (_, cache) = net.forward(&DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let flat = net.to_flat();
        net.set_flat(&flat).unwrap();
        assert!(net.backward(&cache, &DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Network::square(5, 3, 9).unwrap();
        let x = DMatrix::from_fn(5, 4, |i, j| (i as f64 - 2.0) * (j as f64 + 0.5));
        let (_, cache) = net.forward_batch(&x).unwrap();
        assert!(net.backward(&cache, &DMatrix::zeros(5, 4)).unwrap().is_zero());
    }

    #[test]
    fn slope_gradient_vanishes_for_positive_preactivations() {
        let net = identity_net(2, 0.25);
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let (_, cache) = net.forward_batch(&x).unwrap();
        let g = net.backward(&cache, &DMatrix::from_element(2, 1, 1.0)).unwrap();
        for l in &g.layers[..2] {
            assert!(l.slopes.as_ref().unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn first_layer_is_linear_in_input() {
        // zero biases: pre-activations of the first layer scale with the input
        let net = Network::square(6, 2, 4).unwrap();
        let x = DVector::from_fn(6, |i, _| (i as f64 * 0.7).sin());
        let (_, c1) = net.forward(&x).unwrap();
        let (_, c2) = net.forward(&(&x * 3.5)).unwrap();
        assert!((&c2.pre[0] - &c1.pre[0] * 3.5).amax() < 1e-12);
    }

    #[test]
    fn flat_round_trip_is_row_major() {
        let mut net = Network::init(&[2, 3, 2], 0).unwrap();
        let flat: Vec<f64> = (0..net.num_params()).map(|i| i as f64).collect();
        net.set_flat(&flat).unwrap();
        assert_eq!(net.layers()[0].weights[(0, 1)], 1.0);
        assert_eq!(net.layers()[0].weights[(1, 0)], 2.0);
        assert_eq!(net.layers()[0].bias[0], 6.0);
        assert_eq!(net.layers()[0].slopes.as_ref().unwrap()[0], 9.0);
        assert_eq!(net.to_flat(), flat);
    }
}
