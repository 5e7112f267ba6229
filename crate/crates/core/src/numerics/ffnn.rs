use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, Matrix};
use crate::error::{Error, Result};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    pub(crate) fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

/// `a = act(W x + b)` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::dim(weights.rows(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Feed-forward network with exact analytic gradients.
#[derive(Debug, Clone)]
pub struct Ffnn {
    layers: Vec<DenseLayer>,
    generation: u64,
}

impl PartialEq for Ffnn {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations recorded by [`Ffnn::forward_cached`], consumed by [`Ffnn::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// `inputs[l]` is the input of layer `l`; the last entry is the network output.
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("cache always holds the output")
    }
}

/// Parameter gradients, one `(weights, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnnGrads {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl FfnnGrads {
    pub fn zeros_like(net: &Ffnn) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        Matrix::zeros(l.out_dim(), l.in_dim()),
                        vec![0.0; l.out_dim()],
                    )
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &FfnnGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in w.data_mut().iter_mut().zip(ow.data()) {
                *x += y;
            }
            for (x, y) in b.iter_mut().zip(ob) {
                *x += y;
            }
        }
    }

    /// Flat views in the same order as [`Ffnn::params_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

impl Ffnn {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dim(pair[0].out_dim(), pair[1].in_dim()));
            }
        }
        for layer in &layers {
            if layer.in_dim() == 0 || layer.out_dim() == 0 {
                return Err(Error::invalid("layer dimensions must be positive"));
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::invalid("network parameters must be finite"));
            }
        }
        Ok(Self {
            layers,
            generation: next_generation(),
        })
    }

    /// Glorot-uniform weights and zero biases. `dims` lists the layer widths
    /// from input to output; `activations` has one entry per layer.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::invalid(
                "need at least two dims and one activation per layer",
            ));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &act)| DenseLayer {
                weights: glorot_uniform(d[1], d[0], rng),
                bias: vec![0.0; d[1]],
                activation: act,
            })
            .collect();
        Self::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::dim(self.in_dim(), x.len()));
        }
        let mut a = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.weights.matvec(&a)?;
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi = layer.activation.apply(*zi + bi);
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.in_dim() {
            return Err(Error::dim(self.in_dim(), x.len()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_vec());
        for layer in &self.layers {
            let mut z = layer.weights.matvec(inputs.last().unwrap())?;
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            let a = z.iter().map(|&zi| layer.activation.apply(zi)).collect();
            pre_activations.push(z);
            inputs.push(a);
        }
        Ok(ForwardCache {
            generation: self.generation,
            inputs,
            pre_activations,
        })
    }

    /// Backpropagates `grad_output = ∂L/∂output` through the cached pass.
    /// Returns the parameter gradients and `∂L/∂input`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
    ) -> Result<(FfnnGrads, Vec<f64>)> {
        if cache.generation != self.generation || cache.pre_activations.len() != self.layers.len()
        {
            return Err(Error::State(
                "forward cache does not belong to this network state".into(),
            ));
        }
        if grad_output.len() != self.out_dim() {
            return Err(Error::dim(self.out_dim(), grad_output.len()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[l];
            let a = &cache.inputs[l + 1];
            for ((d, &zi), &ai) in delta.iter_mut().zip(z).zip(a) {
                *d *= layer.activation.derivative(zi, ai);
            }
            let mut gw = Matrix::zeros(layer.out_dim(), layer.in_dim());
            gw.add_outer(&delta, &cache.inputs[l])?;
            let next = layer.weights.t_matvec(&delta)?;
            grads.push((gw, delta));
            delta = next;
        }
        grads.reverse();
        Ok((FfnnGrads { layers: grads }, delta))
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data(), l.bias.as_slice()])
            .collect()
    }

    /// Mutable flat parameter views. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation = next_generation();
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    fn single(w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation) -> Ffnn {
        Ffnn::new(vec![
            DenseLayer::new(Matrix::from_rows(&w).unwrap(), b, act).unwrap()
        ])
        .unwrap()
    }

    #[test]
    fn identity_network() {
        let net = single(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            Activation::Identity,
        );
        assert_eq!(net.forward(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn relu_layer_by_hand() {
        let net = single(
            vec![vec![2.0, 0.0], vec![0.0, 2.0]],
            vec![1.0, 1.0],
            Activation::Relu,
        );
        assert_eq!(net.forward(&[1.0, -1.0]).unwrap(), vec![3.0, 0.0]);
    }

    #[test]
    fn wrong_input_dim() {
        let net = Ffnn::init(&[3, 4, 2], &[Activation::Relu, Activation::Identity], &mut seeded_rng(1))
            .unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::Dimension { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn layer_chain_checked() {
        let l1 = DenseLayer::new(Matrix::zeros(3, 2), vec![0.0; 3], Activation::Relu).unwrap();
        let l2 = DenseLayer::new(Matrix::zeros(1, 4), vec![0.0], Activation::Identity).unwrap();
        assert!(Ffnn::new(vec![l1, l2]).is_err());
    }

    #[test]
    fn zero_upstream_gradient() {
        let net = Ffnn::init(&[4, 5, 3], &[Activation::Tanh, Activation::Identity], &mut seeded_rng(3))
            .unwrap();
        let cache = net.forward_cached(&[0.1, -0.2, 0.3, 0.4]).unwrap();
        let (g, gin) = net.backward(&cache, &[0.0; 3]).unwrap();
        assert!(g.is_zero());
        assert!(gin.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_squared_error_closed_form() {
        // L = ||Wx - y||²  =>  dL/dW = 2 (Wx - y) xᵀ
        let w = vec![vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.75]];
        let net = single(w.clone(), vec![0.0, 0.0], Activation::Identity);
        let x = [1.0, 2.0, -1.0];
        let y = [0.3, -0.7];
        let cache = net.forward_cached(&x).unwrap();
        let out = cache.output().to_vec();
        let grad_out: Vec<f64> = out.iter().zip(&y).map(|(o, t)| 2.0 * (o - t)).collect();
        let (g, _) = net.backward(&cache, &grad_out).unwrap();
        for r in 0..2 {
            let wx: f64 = (0..3).map(|c| w[r][c] * x[c]).sum();
            for c in 0..3 {
                let expected = 2.0 * (wx - y[r]) * x[c];
                assert!((g.layers[0].0.get(r, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = Ffnn::init(&[2, 2], &[Activation::Identity], &mut seeded_rng(0)).unwrap();
        let cache = net.forward_cached(&[1.0, 1.0]).unwrap();
        net.params_mut()[0][0] += 1.0;
        assert!(matches!(net.backward(&cache, &[1.0, 1.0]), Err(Error::State(_))));

        let other = Ffnn::init(&[2, 2], &[Activation::Identity], &mut seeded_rng(0)).unwrap();
        let cache = other.forward_cached(&[1.0, 1.0]).unwrap();
        assert!(net.backward(&cache, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Ffnn::init(&[8, 16, 4], &[Activation::Relu, Activation::Tanh], &mut seeded_rng(9))
            .unwrap();
        let x: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
