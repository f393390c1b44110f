use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment buffers mirroring the parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One decoupled-weight-decay Adam update:
/// `θ ← θ(1 - lr·wd) - lr·m̂/(√v̂ + eps)`.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "adamw: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Dimension {
                op: "adamw_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let mut data = p.data().to_vec();
        for (((x, &gi), mi), vi) in data
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            let step = cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps));
            // Skipping a zero step keeps -0.0 parameters bit-identical.
            *x = if step == 0.0 {
                *x * decay
            } else {
                *x * decay - step
            };
        }
        **p = Tensor::new(p.shape().to_vec(), data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(theta: Vec<f64>, grad: Vec<f64>, cfg: AdamWConfig) -> Vec<f64> {
        let mut p = Tensor::row(theta).unwrap();
        let g = Tensor::row(grad).unwrap();
        let mut st = OptimizerState::new([&p]);
        adamw_step(&mut [&mut p], &[g], &mut st, &cfg).unwrap();
        assert_eq!(st.t, 1);
        p.into_data()
    }

    #[test]
    fn zero_grad_without_decay_is_noop() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        assert_eq!(step(vec![0.5, -2.0], vec![0.0, 0.0], cfg), vec![0.5, -2.0]);
    }

    #[test]
    fn zero_grad_with_decay_scales() {
        let cfg = AdamWConfig {
            weight_decay: 0.01,
            lr: 3e-4,
            ..AdamWConfig::default()
        };
        let out = step(vec![0.5, -2.0], vec![0.0, 0.0], cfg);
        let k = 1.0 - 3e-4 * 0.01;
        assert_eq!(out, vec![0.5 * k, -2.0 * k]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        for g in [0.37, -4.0, 1e-3] {
            let out = step(vec![1.0], vec![g], cfg)[0];
            let delta = out - 1.0;
            let tol = cfg.lr * cfg.eps / g.abs() + 1e-15;
            assert!(
                (delta + cfg.lr * g.signum()).abs() <= tol,
                "g={g} delta={delta}"
            );
        }
    }

    #[test]
    fn zero_lr_is_bit_identical() {
        let cfg = AdamWConfig {
            lr: 0.0,
            ..AdamWConfig::default()
        };
        let theta = vec![0.1, -0.0, 3.7e-9, -12.5];
        let out = step(theta.clone(), vec![1.0, -2.0, 0.5, 0.0], cfg);
        for (a, b) in out.iter().zip(&theta) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::row(vec![1.0, 2.0]).unwrap();
        let g = Tensor::row(vec![1.0]).unwrap();
        let mut st = OptimizerState::new([&p]);
        assert!(adamw_step(&mut [&mut p], &[g], &mut st, &AdamWConfig::default()).is_err());
    }
}
