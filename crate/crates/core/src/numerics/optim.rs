use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{r, Real, Tensor};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Real> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn frozen(value: Tensor<T>) -> Self {
        Param {
            trainable: false,
            ..Param::new(value)
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Step-decay learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_steps: Vec<u64>,
    pub decay_factor: f64,
}

impl LrSchedule {
    pub fn lr_at(&self, iteration: u64) -> f64 {
        let passed = self.decay_steps.iter().filter(|&&s| iteration >= s).count();
        self.base_lr * self.decay_factor.powi(passed as i32)
    }
}

/// SGD with classical momentum: `v <- m v - lr g; p <- p + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentumState<T: Real> {
    pub velocity: Vec<Tensor<T>>,
    pub momentum: f64,
    pub schedule: LrSchedule,
}

impl<T: Real> SgdMomentumState<T> {
    pub fn new(momentum: f64, schedule: LrSchedule) -> Self {
        SgdMomentumState {
            velocity: Vec::new(),
            momentum,
            schedule,
        }
    }

    pub fn learning_rate(&self, iteration: u64) -> f64 {
        self.schedule.lr_at(iteration)
    }

    fn ensure_velocity(&mut self, shapes: impl Iterator<Item = Vec<usize>>) -> Result<()> {
        let shapes: Vec<Vec<usize>> = shapes.collect();
        if self.velocity.is_empty() {
            self.velocity = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        }
        if self.velocity.len() != shapes.len()
            || self.velocity.iter().zip(&shapes).any(|(v, s)| v.shape() != s.as_slice())
        {
            return Err(Error::shape("optimizer velocity does not mirror parameter shapes"));
        }
        Ok(())
    }

    /// Updates `params` in place from `grads`, pairwise.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], iteration: u64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!("{} params vs {} grads", params.len(), grads.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            g.expect_shape(p.shape(), "gradient")?;
        }
        self.ensure_velocity(params.iter().map(|p| p.shape().to_vec()))?;
        let lr: T = r(self.learning_rate(iteration));
        let m: T = r(self.momentum);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = m * *vv - lr * gv;
                *pv += *vv;
            }
        }
        Ok(())
    }

    /// Steps every trainable [`Param`]; frozen ones keep a velocity slot but never move.
    pub fn step_params(&mut self, params: &mut [&mut Param<T>], iteration: u64) -> Result<()> {
        self.ensure_velocity(params.iter().map(|p| p.value.shape().to_vec()))?;
        let lr: T = r(self.learning_rate(iteration));
        let m: T = r(self.momentum);
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            if !p.trainable {
                continue;
            }
            let Param { value, grad, .. } = &mut **p;
            for ((pv, &gv), vv) in value.data_mut().iter_mut().zip(grad.data()).zip(v.data_mut()) {
                *vv = m * *vv - lr * gv;
                *pv += *vv;
            }
        }
        Ok(())
    }
}

/// One functional momentum step over parallel lists.
pub fn sgd_momentum_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut SgdMomentumState<T>,
    iteration: u64,
) -> Result<()> {
    state.step(params, grads, iteration)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> LrSchedule {
        LrSchedule {
            base_lr: 0.01,
            decay_steps: vec![45_000, 75_000],
            decay_factor: 0.1,
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = SgdMomentumState::<f64>::new(0.9, sched());
        let mut p = Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        s.step(&mut [&mut p], &[&g], 0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn single_step_substitution() {
        let mut s = SgdMomentumState::<f64>::new(0.9, sched());
        let mut p = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let g = Tensor::full(&[1], 1.0);
        s.step(&mut [&mut p], &[&g], 0).unwrap();
        assert!((s.velocity[0].data()[0] + 0.01).abs() < 1e-15);
        assert!((p.data()[0] - 0.49).abs() < 1e-15);
    }

    #[test]
    fn default_schedule_decays_tenfold() {
        let s = sched();
        assert_eq!(s.lr_at(0), 0.01);
        assert_eq!(s.lr_at(44_999), 0.01);
        assert!((s.lr_at(45_000) - 0.001).abs() < 1e-15);
        assert!((s.lr_at(74_999) - 0.001).abs() < 1e-15);
        assert!((s.lr_at(75_000) - 0.0001).abs() < 1e-15);
        assert!((s.lr_at(99_999) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn frozen_params_never_move() {
        let mut s = SgdMomentumState::<f32>::new(0.9, sched());
        let mut a = Param::new(Tensor::full(&[2], 1.0));
        let mut b = Param::frozen(Tensor::full(&[2], 1.0));
        a.grad.fill(1.0);
        b.grad.fill(1.0);
        s.step_params(&mut [&mut a, &mut b], 0).unwrap();
        assert!(a.value.data()[0] < 1.0);
        assert_eq!(b.value.data(), &[1.0, 1.0]);
    }
}
