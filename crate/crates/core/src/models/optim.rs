//! RMSprop and the step learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::weights::WeightMap;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmsPropConfig {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            rho: 0.9,
            epsilon: 1e-7,
        }
    }
}

/// `v ← ρv + (1-ρ)g²;  θ ← θ - lr·g / (√v + ε)`
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub cfg: RmsPropConfig,
    mean_square: WeightMap,
}

impl RmsProp {
    pub fn new(cfg: RmsPropConfig, params: &WeightMap) -> Self {
        Self {
            cfg,
            mean_square: params.zeros_like(),
        }
    }

    pub fn state(&self) -> &WeightMap {
        &self.mean_square
    }

    pub fn step(&mut self, params: &mut WeightMap, grads: &WeightMap, lr: f64) -> Result<()> {
        params.check_compatible(grads)?;
        params.check_compatible(&self.mean_square)?;
        let RmsPropConfig { rho, epsilon } = self.cfg;
        for (((_, p), (_, g)), (_, v)) in params.iter_mut().zip(grads.iter()).zip(self.mean_square.iter_mut()) {
            for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = rho * *vi + (1.0 - rho) * gi * gi;
                *pi -= lr * gi / (vi.sqrt() + epsilon);
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite { op: "rmsprop" });
        }
        Ok(())
    }
}

/// `base × factor^k` where `k` counts milestones `<= epoch` (0-based epochs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 0.01,
            milestones: vec![50, 70, 90],
            factor: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base * self.factor.powi(k as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn map(vals: &[(&str, Vec<f64>)]) -> WeightMap {
        let mut w = WeightMap::new();
        for (k, v) in vals {
            w.insert(*k, Tensor::vector(v.clone()));
        }
        w
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = map(&[("a", vec![1.0, -2.0])]);
        let before = p.clone();
        let mut opt = RmsProp::new(RmsPropConfig::default(), &p);
        let zero = p.zeros_like();
        opt.step(&mut p, &zero, 0.01).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_closed_form() {
        let (lr, g) = (0.01, 0.3);
        let cfg = RmsPropConfig::default();
        let mut p = map(&[("a", vec![0.0; 3]), ("b", vec![1.0])]);
        let grads = map(&[("a", vec![g, -g, 0.0]), ("b", vec![2.0 * g])]);
        let mut opt = RmsProp::new(cfg, &p);
        opt.step(&mut p, &grads, lr).unwrap();
        let expect = |g: f64| lr * g / ((1.0 - cfg.rho).sqrt() * g.abs() + cfg.epsilon);
        let a = p.get("a").unwrap().data();
        assert!((a[0] + expect(g)).abs() < 1e-15);
        assert!((a[1] - expect(g)).abs() < 1e-15);
        assert_eq!(a[2], 0.0);
        // independent tensors update independently
        assert!((p.get("b").unwrap().data()[0] - (1.0 - expect(2.0 * g))).abs() < 1e-15);
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut p = map(&[("a", vec![0.0; 3])]);
        let g = map(&[("a", vec![0.0; 2])]);
        let mut opt = RmsProp::new(RmsPropConfig::default(), &p);
        assert!(opt.step(&mut p, &g, 0.1).is_err());
    }

    #[test]
    fn schedule_milestones() {
        let s = LrSchedule::default();
        assert_eq!(s.at(0), 0.01);
        assert!((s.at(50) - 1e-3).abs() < 1e-18);
        assert!((s.at(69) - 1e-3).abs() < 1e-18);
        assert!((s.at(95) - 1e-5).abs() < 1e-20);
    }
}
