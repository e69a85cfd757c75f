//! Central finite-difference gradient checker.

use super::tensor::Tensor;
use crate::error::Result;

/// Compares the analytic gradient returned by `f` against central differences.
///
/// `f` maps a parameter list to `(value, gradients)`. The result is
/// `max |g_analytic − g_fd| / max(1, |g_fd|)` over every coordinate.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    let (_, analytic) = f(params)?;
    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for k in 0..param.len() {
            let orig = param.data()[k];
            probe[pi].data_mut()[k] = orig + eps;
            let (plus, _) = f(&probe)?;
            probe[pi].data_mut()[k] = orig - eps;
            let (minus, _) = f(&probe)?;
            probe[pi].data_mut()[k] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let err = (analytic[pi].data()[k] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(p: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        // f(x) = Σ c_i x_i² + x_0 x_1
        let x = p[0].data();
        let c = [1.5, -0.5, 2.0];
        let v = x.iter().zip(c).map(|(xi, ci)| ci * xi * xi).sum::<f64>() + x[0] * x[1];
        let g = vec![2.0 * c[0] * x[0] + x[1], 2.0 * c[1] * x[1] + x[0], 2.0 * c[2] * x[2]];
        Ok((v, vec![Tensor::new(vec![3], g)?]))
    }

    #[test]
    fn quadratic_is_exact() {
        let p = vec![Tensor::new(vec![3], vec![0.3, -1.2, 2.5]).unwrap()];
        assert!(finite_difference_check(quadratic, &p, 1e-5).unwrap() < 1e-8);
    }

    #[test]
    fn doubled_gradient_is_caught() {
        let p = vec![Tensor::new(vec![3], vec![0.3, -1.2, 2.5]).unwrap()];
        let doubled = |p: &[Tensor]| {
            let (v, g) = quadratic(p)?;
            Ok((v, g.into_iter().map(|t| t.scale(2.0)).collect()))
        };
        let err = finite_difference_check(doubled, &p, 1e-5).unwrap();
        assert!((err - 1.0).abs() < 1e-6, "err = {err}");
    }

    #[test]
    fn zero_function() {
        let p = vec![Tensor::zeros(&[4])];
        let zero = |p: &[Tensor]| Ok((0.0, vec![Tensor::zeros(p[0].shape())]));
        assert_eq!(finite_difference_check(zero, &p, 1e-5).unwrap(), 0.0);
    }
}
