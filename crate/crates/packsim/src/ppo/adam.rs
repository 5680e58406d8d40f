//! Adam optimizer and the linear learning-rate schedule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One descent step of `params` along `grads` at learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Linearly decaying learning rate: full at the first iteration, one last
/// non-zero step at the final one.
pub fn lr_schedule(base: f64, iteration: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    let frac = 1.0 - iteration as f64 / total as f64;
    base * frac.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_on_quadratic_bowl() {
        // f(x) = Σ (x_i - c_i)², gradient 2(x - c).
        let c = [1.5, -2.0, 0.25];
        let mut x = [0.0; 3];
        let mut opt = Adam::new(3);
        // Annealed step size; a constant one leaves Adam orbiting the optimum.
        for t in 0..100 {
            let grads: Vec<f64> = x.iter().zip(&c).map(|(xi, ci)| 2.0 * (xi - ci)).collect();
            opt.step(&mut x, &grads, lr_schedule(0.3, t, 100));
        }
        let f: f64 = x.iter().zip(&c).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
        assert!(f < 1e-6, "f = {f}, x = {x:?}");
    }

    #[test]
    fn lr_schedule_endpoints() {
        assert_eq!(lr_schedule(3e-4, 0, 100), 3e-4);
        let last = lr_schedule(3e-4, 99, 100);
        assert!(last > 0.0 && (last - 3e-6).abs() < 1e-18);
        assert_eq!(lr_schedule(3e-4, 100, 100), 0.0);
        assert_eq!(lr_schedule(3e-4, 0, 1), 3e-4);
    }

    #[test]
    fn step_moves_against_gradient() {
        let mut x = [1.0];
        let mut opt = Adam::new(1);
        opt.step(&mut x, &[2.0], 0.1);
        assert!(x[0] < 1.0);
    }
}
