use super::{Ffnn, FfnnGrads};
use crate::error::{Error, Result};

/// Compares analytic parameter gradients against central differences.
///
/// `loss` returns the scalar loss and its analytic gradient for a given
/// network. The result is
/// `max |analytic - numeric| / max(1e-8, |numeric|)` over every parameter.
pub fn grad_check<F>(net: &Ffnn, loss: F, h: f64) -> Result<f64>
where
    F: Fn(&Ffnn) -> Result<(f64, FfnnGrads)>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    let (_, analytic) = loss(net)?;
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
    let shapes: Vec<usize> = net.params().iter().map(|t| t.len()).collect();
    if analytic.iter().map(Vec::len).ne(shapes.iter().copied()) {
        return Err(Error::invalid("gradient shapes do not mirror parameters"));
    }

    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (t, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let original = probe.params()[t][i];
            probe.params_mut()[t][i] = original + h;
            let plus = loss(&probe)?.0;
            probe.params_mut()[t][i] = original - h;
            let minus = loss(&probe)?.0;
            probe.params_mut()[t][i] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic[t][i] - numeric).abs() / numeric.abs().max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_rng, Activation};
    use rand::Rng;

    fn squared_error(target: Vec<f64>, inputs: Vec<Vec<f64>>) -> impl Fn(&Ffnn) -> Result<(f64, FfnnGrads)> {
        move |net: &Ffnn| {
            let mut total = 0.0;
            let mut grads = FfnnGrads::zeros_like(net);
            for x in &inputs {
                let cache = net.forward_cached(x)?;
                let diff: Vec<f64> = cache.output().iter().zip(&target).map(|(o, t)| o - t).collect();
                total += diff.iter().map(|d| d * d).sum::<f64>();
                let upstream: Vec<f64> = diff.iter().map(|d| 2.0 * d).collect();
                grads.accumulate(&net.backward(&cache, &upstream)?.0);
            }
            Ok((total, grads))
        }
    }

    #[test]
    fn linear_quadratic_is_exact() {
        let net = Ffnn::init(&[3, 2], &[Activation::Identity], &mut seeded_rng(5)).unwrap();
        let err = grad_check(
            &net,
            squared_error(vec![0.5, -0.5], vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "err = {err}");
    }

    #[test]
    fn random_tanh_net() {
        let mut rng = seeded_rng(11);
        let net = Ffnn::init(&[5, 7, 3], &[Activation::Tanh, Activation::Tanh], &mut rng).unwrap();
        let inputs = (0..4)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let err = grad_check(&net, squared_error(vec![0.2, -0.1, 0.4], inputs), 1e-5).unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn zero_step_rejected() {
        let net = Ffnn::init(&[2, 2], &[Activation::Identity], &mut seeded_rng(0)).unwrap();
        let loss = squared_error(vec![0.0, 0.0], vec![vec![1.0, 1.0]]);
        assert!(matches!(grad_check(&net, &loss, 0.0), Err(Error::InvalidArgument(_))));
        assert!(grad_check(&net, &loss, -1e-5).is_err());
    }
}
