use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmsPropConfig {
    pub lr: f64,
    /// Coefficient of the squared-gradient moving average.
    pub decay_rate: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            lr: 0.001,
            decay_rate: 0.99,
            epsilon: 1e-8,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.decay_rate > 0.0 && self.decay_rate < 1.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "rmsprop: need lr > 0, 0 < decay_rate < 1, epsilon > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Plain (uncentered) RMSprop.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<T> {
    pub config: RmsPropConfig,
    accumulators: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(config: RmsPropConfig) -> Self {
        RmsProp {
            config,
            accumulators: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn accumulators(&self) -> &[Vec<T>] {
        &self.accumulators
    }

    pub fn restore(&mut self, accumulators: Vec<Vec<T>>, steps: u64) {
        self.accumulators = accumulators;
        self.steps = steps;
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update of every parameter with its gradient (`None` = no
    /// gradient this step, treated as zero).
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<&[T]>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "rmsprop: {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if self.accumulators.is_empty() {
            self.accumulators = params.tensors().iter().map(|t| vec![T::zero(); t.numel()]).collect();
        }
        let rho = T::lit(self.config.decay_rate);
        let one_minus = T::one() - rho;
        let lr = T::lit(self.config.lr);
        let eps = T::lit(self.config.epsilon);
        for ((p, acc), g) in params.tensors_mut().iter_mut().zip(&mut self.accumulators).zip(grads) {
            if acc.len() != p.numel() {
                return Err(Error::ShapeMismatch("rmsprop: accumulator shape changed".into()));
            }
            match g {
                Some(g) => {
                    if g.len() != p.numel() {
                        return Err(Error::ShapeMismatch(format!(
                            "rmsprop: gradient of length {} for parameter {:?}",
                            g.len(),
                            p.shape()
                        )));
                    }
                    for ((w, a), &gv) in p.data_mut().iter_mut().zip(acc.iter_mut()).zip(g.iter()) {
                        *a = rho * *a + one_minus * gv * gv;
                        *w -= lr * gv / (a.sqrt() + eps);
                    }
                }
                None => {
                    for a in acc.iter_mut() {
                        *a *= rho;
                    }
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn one_param(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("p", Tensor::new(vec![1], vec![v]).unwrap());
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one_param(1.5);
        let mut opt = RmsProp::new(RmsPropConfig::default());
        for _ in 0..10 {
            opt.step(&mut p, &[Some(&[0.0])]).unwrap();
        }
        assert_eq!(p.tensors()[0].data(), &[1.5]);
    }

    #[test]
    fn quadratic_decreases_monotonically() {
        let mut p = one_param(1.0);
        let mut opt = RmsProp::new(RmsPropConfig {
            lr: 0.01,
            ..Default::default()
        });
        let mut prev = 1.0;
        for _ in 0..100 {
            let x = p.tensors()[0].data()[0];
            opt.step(&mut p, &[Some(&[2.0 * x])]).unwrap();
            let x = p.tensors()[0].data()[0];
            assert!(x * x < prev);
            prev = x * x;
        }
    }

    #[test]
    fn update_rule_matches_closed_form() {
        let mut p = one_param(1.0);
        let cfg = RmsPropConfig {
            lr: 0.1,
            decay_rate: 0.9,
            epsilon: 1e-8,
        };
        let mut opt = RmsProp::new(cfg);
        opt.step(&mut p, &[Some(&[2.0])]).unwrap();
        let acc = 0.1 * 4.0;
        let expect = 1.0 - 0.1 * 2.0 / (f64::sqrt(acc) + 1e-8);
        assert!((p.tensors()[0].data()[0] - expect).abs() < 1e-15);
        let x1 = p.tensors()[0].data()[0];
        opt.step(&mut p, &[Some(&[1.0])]).unwrap();
        let acc = 0.9 * acc + 0.1;
        assert!((p.tensors()[0].data()[0] - (x1 - 0.1 / (acc.sqrt() + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn deterministic_from_fresh_state() {
        let run = || {
            let mut p = one_param(0.3);
            let mut opt = RmsProp::new(RmsPropConfig::default());
            opt.step(&mut p, &[Some(&[0.7])]).unwrap();
            opt.step(&mut p, &[Some(&[-0.2])]).unwrap();
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradient_shape_mismatch() {
        let mut p = one_param(0.3);
        let mut opt = RmsProp::new(RmsPropConfig::default());
        assert!(opt.step(&mut p, &[Some(&[0.1, 0.2])]).is_err());
        assert!(opt.step(&mut p, &[]).is_err());
    }
}
