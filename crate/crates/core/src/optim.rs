//! SGD with momentum, Adam, and the step learning-rate schedule.
//!
//! Both optimizers operate on flattened parameter vectors. The SGD update is
//! pinned to the coupled form
//!
//! ```text
//! g <- grad + wd * w;  v <- mu * v + g;  w <- w - lr * v
//! ```
//!
//! and Adam uses the standard bias-corrected moments with
//! beta1 = 0.9, beta2 = 0.999, eps = 1e-8.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OptimError {
    #[error("parameter/gradient/state length mismatch: {params} params, {grads} grads, {state} state")]
    ShapeMismatch {
        params: usize,
        grads: usize,
        state: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, n_params: usize) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(OptimError::ShapeMismatch {
                params: params.len(),
                grads: grads.len(),
                state: self.velocity.len(),
            });
        }
        for i in 0..params.len() {
            let g = grads[i] + self.weight_decay * params[i];
            self.velocity[i] = self.momentum * self.velocity[i] + g;
            params[i] -= self.lr * self.velocity[i];
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64, n_params: usize) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(OptimError::ShapeMismatch {
                params: params.len(),
                grads: grads.len(),
                state: self.m.len(),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] + self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError> {
        match self {
            Optimizer::Sgd(s) => s.step(params, grads),
            Optimizer::Adam(a) => a.step(params, grads),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Sgd(s) => s.lr = lr,
            Optimizer::Adam(a) => a.lr = lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    Constant,
    /// Single decay: `base_lr * gamma` from `step_epoch` onward.
    Step { step_epoch: usize, gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub kind: ScheduleKind,
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Self {
        Self {
            base_lr,
            kind: ScheduleKind::Constant,
        }
    }

    pub fn step(base_lr: f64, step_epoch: usize, gamma: f64) -> Self {
        Self {
            base_lr,
            kind: ScheduleKind::Step { step_epoch, gamma },
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::Step { step_epoch, gamma } => {
                if epoch < step_epoch {
                    self.base_lr
                } else {
                    self.base_lr * gamma
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_zero_grad_is_fixed_point() {
        let mut opt = Sgd::new(0.1, 0.0, 0.0, 2);
        let mut p = vec![1.0, -2.0];
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn sgd_weight_decay_shrinks_params() {
        let mut opt = Sgd::new(0.1, 0.0, 0.5, 2);
        let mut p = vec![1.0, -2.0];
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        // w' = w (1 - lr * wd)
        assert!((p[0] - 0.95).abs() < 1e-15);
        assert!((p[1] + 1.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_two_step_displacement() {
        // Constant gradient g over two steps with mu = 0.9:
        // v1 = g, v2 = 1.9 g, total displacement lr * (g + 1.9 g).
        let lr = 0.05;
        let g = 2.0;
        let mut opt = Sgd::new(lr, 0.9, 0.0, 1);
        let mut p = vec![10.0];
        opt.step(&mut p, &[g]).unwrap();
        opt.step(&mut p, &[g]).unwrap();
        assert!((p[0] - (10.0 - lr * (g + 1.9 * g))).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_grad_from_fresh_state_is_fixed_point() {
        let mut opt = Adam::new(1e-3, 0.0, 2);
        let mut p = vec![1.0, 2.0];
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let lr = 1e-4;
        let mut opt = Adam::new(lr, 0.0, 2);
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[3.0, -0.5]).unwrap();
        // Bias-corrected first step: -lr * g / (|g| + eps') ≈ -lr * sign(g).
        assert!((p[0] + lr).abs() < 1e-9);
        assert!((p[1] - lr).abs() < 1e-9);
    }

    #[test]
    fn adam_matches_scalar_recurrence_over_three_steps() {
        let lr = 0.01;
        let grads = [0.4, -1.2, 0.7];
        let mut opt = Adam::new(lr, 0.0, 1);
        let mut p = vec![0.3];
        for g in grads {
            opt.step(&mut p, &[g]).unwrap();
        }

        // Independent scalar reimplementation of the recurrence.
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (mut m, mut v, mut w) = (0.0, 0.0, 0.3_f64);
        for (t, g) in grads.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1_pow(b1, t + 1));
            let v_hat: f64 = v / (1.0 - b1_pow(b2, t + 1));
            w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert!((p[0] - w).abs() < 1e-15);

        fn b1_pow(b: f64, t: usize) -> f64 {
            b.powi(t as i32)
        }
    }

    #[test]
    fn step_schedule_single_decay() {
        let s = LrSchedule::step(1e-4, 5, 0.1);
        assert_eq!(s.lr_at(4), 1e-4);
        assert!((s.lr_at(5) - 1e-5).abs() < 1e-20);
        assert!((s.lr_at(9) - 1e-5).abs() < 1e-20);
        let c = LrSchedule::constant(0.05);
        assert_eq!(c.lr_at(0), 0.05);
        assert_eq!(c.lr_at(999), 0.05);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut opt = Sgd::new(0.1, 0.0, 0.0, 2);
        let mut p = vec![1.0];
        assert!(matches!(
            opt.step(&mut p, &[0.0]),
            Err(OptimError::ShapeMismatch { .. })
        ));
    }
}
