use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares reverse-mode gradients against central finite differences.
///
/// `f` builds a scalar-valued graph from the parameter leaves it is handed.
/// Returns `max |analytic - numeric| / max(1, |analytic|)` over every entry
/// of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::contract(format!(
            "grad_check eps {eps} outside (0, 1e-2]"
        )));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            g.value(out).shape()
        )));
    }
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v)).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| g.param(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for idx in 0..param.numel() {
            let x = param.data()[idx];
            probe[pi] = param.with_entry(idx, x + eps)?;
            let plus = eval(&probe)?;
            probe[pi] = param.with_entry(idx, x - eps)?;
            let minus = eval(&probe)?;
            probe[pi] = param.clone();

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].data()[idx];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        let x = Tensor::scalar(0.0).unwrap();
        let err = grad_check(|g, v| g.sigmoid(v[0]), &[x], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::row(vec![0.3, -0.7]).unwrap();
        let err = grad_check(
            |g, _| Ok(g.constant(Tensor::scalar(4.2).unwrap())),
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_non_scalar_and_bad_eps() {
        let x = Tensor::row(vec![0.3, -0.7]).unwrap();
        assert!(grad_check(|g, v| g.tanh(v[0]), std::slice::from_ref(&x), 1e-5).is_err());
        assert!(grad_check(|g, v| g.sum(v[0]), std::slice::from_ref(&x), 0.0).is_err());
        assert!(grad_check(|g, v| g.sum(v[0]), &[x], 0.1).is_err());
    }
}
