use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::{Error, Result};

/// Activation applied after the last layer. Hidden layers always use ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Fully connected network `x -> W_L(...relu(W_1 x + b_1)...) + b_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Layer>,
    output: Activation,
}

/// Activations recorded by [`Mlp::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn batch(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        layer_slices(&self.layers)
    }
}

fn layer_slices(layers: &[Layer]) -> Vec<&[f64]> {
    layers
        .iter()
        .flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
        .collect()
}

impl Mlp {
    /// He-uniform weights; biases uniform in `±1/√fan_in`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, output)?;
        for l in &mut net.layers {
            let fan_in = l.weight.ncols() as f64;
            let bound = (6.0 / fan_in).sqrt();
            l.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
            let b = 1.0 / fan_in.sqrt();
            l.bias.mapv_inplace(|_| rng.random_range(-b..b));
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], output: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("invalid layer dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            output,
        })
    }

    /// Rebuilds a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Layer>, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        let mut dims = vec![layers[0].weight.ncols()];
        for (i, l) in layers.iter().enumerate() {
            if l.weight.ncols() != *dims.last().unwrap() || l.bias.len() != l.weight.nrows() {
                return Err(Error::invalid(format!("layer {i} shape does not chain")));
            }
            dims.push(l.weight.nrows());
        }
        Ok(Self { dims, layers, output })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input width {} does not match network input {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("network input contains non-finite values"));
        }
        Ok(())
    }

    fn relu_after(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.output == Activation::Relu
    }

    /// Inference-only forward pass over a `batch × d_in` input.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut x = self.affine(0, input);
        for i in 1..self.layers.len() {
            x.mapv_inplace(relu);
            x = self.affine(i, x.view());
        }
        if self.output == Activation::Relu {
            x.mapv_inplace(relu);
        }
        Ok(x)
    }

    /// Forward pass that keeps what [`Mlp::backward`] needs.
    pub fn forward_train(&self, input: Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.check_input(&input.view())?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut x = input;
        for i in 0..n {
            let z = self.affine(i, x.view());
            inputs.push(x);
            x = if self.relu_after(i) { z.mapv(relu) } else { z.clone() };
            pre.push(z);
        }
        Ok((x, MlpCache { inputs, pre }))
    }

    /// Reverse-mode pass: parameter gradients and the gradient with respect
    /// to the input, given `d loss / d output`.
    pub fn backward(&self, cache: &MlpCache, upstream: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        let n = self.layers.len();
        if cache.inputs.len() != n || cache.pre.len() != n {
            return Err(Error::State(format!(
                "cache holds {} layers, network has {n}",
                cache.inputs.len()
            )));
        }
        let out = &cache.pre[n - 1];
        if upstream.dim() != out.dim() {
            return Err(Error::State(format!(
                "upstream gradient {:?} does not match cached output {:?}",
                upstream.dim(),
                out.dim()
            )));
        }
        let mut grads = Vec::with_capacity(n);
        let mut g = upstream.to_owned();
        for i in (0..n).rev() {
            if self.relu_after(i) {
                ndarray::Zip::from(&mut g).and(&cache.pre[i]).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let weight = g.t().dot(&cache.inputs[i]);
            let bias = g.sum_axis(Axis(0));
            g = g.dot(&self.layers[i].weight);
            grads.push(Layer { weight, bias });
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, g))
    }

    fn affine(&self, i: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let l = &self.layers[i];
        let mut z = x.dot(&l.weight.t());
        z += &l.bias;
        z
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl Parameters for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        layer_slices(&self.layers)
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::fd_gradcheck;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[4, 8, 3], Activation::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = net.forward(random_input(&mut rng, 5, 4).view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 2], Activation::Linear, &mut rng).unwrap();
        let x = random_input(&mut rng, 4, 3);
        let y = net.forward(x.view()).unwrap();
        let l = &net.layers()[0];
        for r in 0..4 {
            for o in 0..2 {
                let mut acc = l.bias[o];
                for i in 0..3 {
                    acc += x[[r, i]] * l.weight[[o, i]];
                }
                assert!((y[[r, o]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[3, 16, 16, 2], Activation::Linear, &mut rng).unwrap();
        let x = random_input(&mut rng, 1, 3);
        let mut xx = Array2::zeros((2, 3));
        xx.row_mut(0).assign(&x.row(0));
        xx.row_mut(1).assign(&x.row(0));
        let y = net.forward(xx.view()).unwrap();
        assert_eq!(y.row(0), y.row(1));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let net = Mlp::zeros(&[3, 2], Activation::Linear).unwrap();
        assert!(net.forward(Array2::zeros((1, 4)).view()).is_err());
        assert!(net.forward(array![[f64::NAN, 0.0, 0.0]].view()).is_err());
        assert!(Mlp::zeros(&[3], Activation::Linear).is_err());
    }

    #[test]
    fn inconsistent_cache_is_state_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Mlp::new(&[3, 4, 2], Activation::Linear, &mut rng).unwrap();
        let b = Mlp::new(&[3, 4, 4, 2], Activation::Linear, &mut rng).unwrap();
        let (_, cache) = a.forward_train(random_input(&mut rng, 2, 3)).unwrap();
        assert!(matches!(
            b.backward(&cache, Array2::zeros((2, 2)).view()),
            Err(Error::State(_))
        ));
        assert!(matches!(
            a.backward(&cache, Array2::zeros((3, 2)).view()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn linear_squared_error_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[3, 2], Activation::Linear, &mut rng).unwrap();
        let x = random_input(&mut rng, 5, 3);
        let target = random_input(&mut rng, 5, 2);
        let (y, cache) = net.forward_train(x.clone()).unwrap();
        let upstream = 2.0 * (&y - &target);
        let (grads, gx) = net.backward(&cache, upstream.view()).unwrap();
        // d/dW Σ‖xWᵀ + b − y‖² = 2 (ŷ − y)ᵀ x, d/db = 2 Σ (ŷ − y), d/dx = 2 (ŷ − y) W.
        let w_closed = upstream.t().dot(&x);
        let b_closed = upstream.sum_axis(Axis(0));
        let x_closed = upstream.dot(&net.layers()[0].weight);
        assert!((&grads.layers[0].weight - &w_closed).iter().all(|v| v.abs() < 1e-10));
        assert!((&grads.layers[0].bias - &b_closed).iter().all(|v| v.abs() < 1e-10));
        assert!((&gx - &x_closed).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let mut net = Mlp::zeros(&[1, 1, 1], Activation::Linear).unwrap();
        net.layers_mut()[0].weight[[0, 0]] = 1.0;
        net.layers_mut()[0].bias[0] = -5.0;
        net.layers_mut()[1].weight[[0, 0]] = 3.0;
        let (_, cache) = net.forward_train(array![[1.0]]).unwrap();
        let (g, gx) = net.backward(&cache, array![[1.0]].view()).unwrap();
        assert_eq!(g.layers[0].weight[[0, 0]], 0.0);
        assert_eq!(g.layers[0].bias[0], 0.0);
        assert_eq!(gx[[0, 0]], 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let out = if seed % 2 == 0 {
                Activation::Linear
            } else {
                Activation::Relu
            };
            let mut net = Mlp::new(&[5, 7, 6, 3], out, &mut rng).unwrap();
            for l in net.layers_mut() {
                l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
            let x = random_input(&mut rng, 4, 5);
            let w = random_input(&mut rng, 4, 3);
            let err = fd_gradcheck(&mut net, |n: &Mlp| {
                let (y, cache) = n.forward_train(x.clone()).unwrap();
                let loss = (&y * &w).sum();
                let (g, _) = n.backward(&cache, w.view()).unwrap();
                (loss, g.slices().concat())
            });
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
