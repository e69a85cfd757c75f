use super::tensor::{check_finite, Tensor};
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum: `v ← μ·v + g; p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl OptimizerState {
    /// Velocities start at zero with the shapes of `params`.
    pub fn new(params: &[&Tensor], learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0,1), got {momentum}")));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [Tensor] {
        &mut self.velocity
    }
}

/// One momentum step applied in place.
pub fn sgd_momentum_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::ShapeMismatch {
            op: "sgd_momentum_step",
            left: vec![params.len()],
            right: vec![grads.len(), state.velocity.len()],
        });
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocity) {
        p.same_shape(g, "sgd_momentum_step")?;
        p.same_shape(v, "sgd_momentum_step")?;
    }
    let (lr, mu) = (state.learning_rate, state.momentum);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
        check_finite("sgd_momentum_step", p.data())?;
    }
    Ok(())
}

/// Exponential moving average `t ← m·t + (1−m)·s`. The endpoints are exact:
/// `m = 1` leaves the target untouched and `m = 0` copies the source.
pub fn ema_update(target: &mut Tensor, source: &Tensor, m: f64) -> Result<()> {
    target.same_shape(source, "ema_update")?;
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::invalid(format!("ema coefficient must lie in [0,1], got {m}")));
    }
    if m == 1.0 {
        return Ok(());
    }
    if m == 0.0 {
        target.data_mut().copy_from_slice(source.data());
        return Ok(());
    }
    for (t, &s) in target.data_mut().iter_mut().zip(source.data()) {
        *t = m * *t + (1.0 - m) * s;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar1(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut p = Tensor::new(vec![2], vec![5.0, 3.0]).unwrap();
        let g = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        let mut st = OptimizerState::new(&[&p], 0.1, 0.0).unwrap();
        sgd_momentum_step(&mut [&mut p], &[g], &mut st).unwrap();
        assert!((p.data()[0] - 4.9).abs() < 1e-12);
        assert!((p.data()[1] - 3.1).abs() < 1e-12);
    }

    #[test]
    fn velocity_decays_under_zero_gradient() {
        let mut p = scalar1(0.0);
        let mut st = OptimizerState::new(&[&p], 0.1, 0.9).unwrap();
        st.velocity_mut()[0] = scalar1(2.0);
        sgd_momentum_step(&mut [&mut p], &[scalar1(0.0)], &mut st).unwrap();
        assert!((st.velocity()[0].item() - 1.8).abs() < 1e-12);
    }

    #[test]
    fn two_step_unroll() {
        // v1 = 1, p1 = -0.1; v2 = 0.9 + 1 = 1.9, p2 = -0.1 - 0.19
        let mut p = scalar1(0.0);
        let mut st = OptimizerState::new(&[&p], 0.1, 0.9).unwrap();
        for _ in 0..2 {
            sgd_momentum_step(&mut [&mut p], &[scalar1(1.0)], &mut st).unwrap();
        }
        assert!((p.item() - (-0.29)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut st = OptimizerState::new(&[&p], 0.1, 0.9).unwrap();
        let err = sgd_momentum_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut st);
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn ema_endpoints_and_midpoint() {
        let src = Tensor::new(vec![2], vec![0.3, -7.0]).unwrap();
        let mut t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let before = t.clone();
        ema_update(&mut t, &src, 1.0).unwrap();
        assert_eq!(t, before);
        ema_update(&mut t, &src, 0.0).unwrap();
        assert_eq!(t, src);

        let mut one = scalar1(1.0);
        ema_update(&mut one, &scalar1(0.0), 0.999).unwrap();
        assert!((one.item() - 0.999).abs() < 1e-15);
        assert!(ema_update(&mut one, &Tensor::zeros(&[2]), 0.5).is_err());
    }
}
