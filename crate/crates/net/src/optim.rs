use serde::{Deserialize, Serialize};

use crate::layers::Module;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per trainable parameter in
/// visiting order.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub steps: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, module: &mut impl Module<T>) {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let lr = T::of(c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t)));
        let (b1, b2, eps) = (T::of(c.beta1), T::of(c.beta2), T::of(c.eps));
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut k = 0;
        module.visit_mut(&mut |p| {
            if !p.trainable {
                return;
            }
            if ms.len() == k {
                ms.push(vec![T::zero(); p.value.len()]);
                vs.push(vec![T::zero(); p.value.len()]);
            }
            let (m, v) = (&mut ms[k], &mut vs[k]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                p.value[i] -= lr * m[i] / (v[i].sqrt() + eps);
            }
            k += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Param;

    struct One(Param<f64>);

    impl Module<f64> for One {
        fn visit(&self, f: &mut dyn FnMut(&Param<f64>)) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
            f(&mut self.0)
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = One(Param::new("x".into(), vec![2], vec![1.0, -1.0]));
        p.0.grad = vec![3.0, -0.5];
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p);
        assert!((p.0.value[0] - (1.0 - 2e-4)).abs() < 1e-9);
        assert!((p.0.value[1] - (-1.0 + 2e-4)).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = One(Param::new("x".into(), vec![1], vec![1.0]));
        let mut adam = Adam::new(AdamConfig {
            learning_rate: 0.05,
            ..Default::default()
        });
        for _ in 0..500 {
            p.0.grad[0] = 2.0 * p.0.value[0];
            adam.step(&mut p);
        }
        assert!(p.0.value[0].abs() < 0.05);
    }
}
