use super::graph::NormalizedAdjacency;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Matrix};

/// One graph convolution `act(Â H Wᵀ)`; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub weight: Matrix,
    pub activation: Activation,
}

/// Stack of graph convolutions sharing one adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Gcn {
    layers: Vec<GcnLayer>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GcnCache {
    /// `Â H` for each layer input.
    propagated: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
    output: Matrix,
}

impl GcnCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

/// `Â X` with every row summed in the adjacency's neighbor order.
pub fn propagate(adj: &NormalizedAdjacency, x: &Matrix) -> Result<Matrix> {
    if adj.len() != x.rows() {
        return Err(Error::dim(adj.len(), x.rows()));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..adj.len() {
        let row = out.row_mut(i);
        for &(j, a) in adj.row(i) {
            for (o, v) in row.iter_mut().zip(x.row(j)) {
                *o += a * v;
            }
        }
    }
    Ok(out)
}

impl Gcn {
    pub fn new(layers: Vec<GcnLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a GCN needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[1].weight.cols() != pair[0].weight.rows() {
                return Err(Error::dim(pair[0].weight.rows(), pair[1].weight.cols()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[GcnLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn forward(&self, adj: &NormalizedAdjacency, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(adj, x)?.output)
    }

    pub fn forward_cached(&self, adj: &NormalizedAdjacency, x: &Matrix) -> Result<GcnCache> {
        if x.cols() != self.in_dim() {
            return Err(Error::dim(self.in_dim(), x.cols()));
        }
        let mut propagated = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let z = propagate(adj, &h)?;
            let a = z.matmul_t(&layer.weight)?;
            h = a.clone();
            for v in h.data_mut() {
                *v = layer.activation.apply(*v);
            }
            propagated.push(z);
            pre.push(a);
        }
        Ok(GcnCache { propagated, pre, output: h })
    }

    /// Returns the weight gradients and the gradient with respect to the input.
    pub fn backward(
        &self,
        adj: &NormalizedAdjacency,
        cache: &GcnCache,
        grad_out: &Matrix,
    ) -> Result<(Vec<Matrix>, Matrix)> {
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::dim(cache.output.cols(), grad_out.cols()));
        }
        let mut grads = vec![Matrix::zeros(0, 0); self.layers.len()];
        let mut delta = grad_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (d, a) in delta.data_mut().iter_mut().zip(cache.pre[l].data()) {
                *d *= layer.activation.derivative(*a, layer.activation.apply(*a));
            }
            grads[l] = delta.t_matmul(&cache.propagated[l])?;
            let dz = delta.matmul(&layer.weight)?;
            // The normalized adjacency is symmetric.
            delta = propagate(adj, &dz)?;
        }
        Ok((grads, delta))
    }

    pub fn weights_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().map(|l| &mut l.weight)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite())
    }
}

/// Convenience for `Gcn::forward`.
pub fn gcn_forward(adj: &NormalizedAdjacency, gcn: &Gcn, x: &Matrix) -> Result<Matrix> {
    gcn.forward(adj, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{glorot_uniform, seeded_rng};

    fn identity_gcn(dim: usize) -> Gcn {
        Gcn::new(vec![GcnLayer { weight: Matrix::identity(dim), activation: Activation::Identity }]).unwrap()
    }

    #[test]
    fn single_node_is_identity() {
        let adj = NormalizedAdjacency::new(&["a"], &[]).unwrap();
        let x = Matrix::from_rows(&[vec![1.5, -2.0]]).unwrap();
        assert_eq!(identity_gcn(2).forward(&adj, &x).unwrap(), x);
    }

    #[test]
    fn two_nodes_average() {
        let adj = NormalizedAdjacency::new(&["a", "b"], &[(0, 1)]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0]]).unwrap();
        let out = identity_gcn(2).forward(&adj, &x).unwrap();
        for i in 0..2 {
            assert!((out.get(i, 0) - 2.0).abs() < 1e-12);
            assert!((out.get(i, 1) + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded_rng(3);
        let keys = ["a", "b", "c", "d"];
        let adj = NormalizedAdjacency::new(&keys, &[(0, 1), (1, 2), (0, 3)]).unwrap();
        let gcn = Gcn::new(vec![
            GcnLayer { weight: glorot_uniform(5, 3, &mut rng), activation: Activation::Tanh },
            GcnLayer { weight: glorot_uniform(2, 5, &mut rng), activation: Activation::Identity },
        ])
        .unwrap();
        let x = glorot_uniform(4, 3, &mut rng);
        let target = glorot_uniform(4, 2, &mut rng);
        let loss = |g: &Gcn, x: &Matrix| -> f64 {
            let out = g.forward(&adj, x).unwrap();
            out.data().iter().zip(target.data()).map(|(o, t)| 0.5 * (o - t).powi(2)).sum()
        };
        let cache = gcn.forward_cached(&adj, &x).unwrap();
        let mut grad_out = cache.output().clone();
        for (g, t) in grad_out.data_mut().iter_mut().zip(target.data()) {
            *g -= t;
        }
        let (grads, grad_x) = gcn.backward(&adj, &cache, &grad_out).unwrap();
        let h = 1e-6;
        for l in 0..2 {
            for k in 0..grads[l].data().len() {
                let mut plus = gcn.clone();
                plus.layers[l].weight.data_mut()[k] += h;
                let mut minus = gcn.clone();
                minus.layers[l].weight.data_mut()[k] -= h;
                let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
                assert!((fd - grads[l].data()[k]).abs() < 1e-6, "layer {l} index {k}");
            }
        }
        for k in 0..x.data().len() {
            let mut plus = x.clone();
            plus.data_mut()[k] += h;
            let mut minus = x.clone();
            minus.data_mut()[k] -= h;
            let fd = (loss(&gcn, &plus) - loss(&gcn, &minus)) / (2.0 * h);
            assert!((fd - grad_x.data()[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn input_dimension_checked() {
        let adj = NormalizedAdjacency::new(&["a"], &[]).unwrap();
        let x = Matrix::zeros(1, 3);
        assert!(matches!(identity_gcn(2).forward(&adj, &x), Err(Error::Dimension { .. })));
    }
}
