use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{Group, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a fixed set of parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    groups: Vec<Group>,
    step: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(config: AdamConfig, groups: &[Group]) -> Self {
        Self {
            config,
            groups: groups.to_vec(),
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn owns(&self, name: &str) -> bool {
        Group::of(name).is_some_and(|g| self.groups.contains(&g))
    }

    /// Applies one update from `grads`; parameters outside this optimizer's
    /// groups are ignored. A zero learning rate leaves values untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = (c.lr / bc1) as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.eps as f32);
        let bc2_sqrt = bc2.sqrt() as f32;
        for (name, g) in grads {
            if !self.owns(name) {
                continue;
            }
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Precondition(format!("gradient for unknown parameter {name:?}")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape(p.shape().to_vec(), g.shape().to_vec()));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            if c.lr == 0.0 {
                continue;
            }
            for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                *pv -= step_size * *mv / (vv.sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }

    pub(crate) fn state(&self) -> (u64, &BTreeMap<String, (Vec<f32>, Vec<f32>)>) {
        (self.step, &self.moments)
    }

    pub(crate) fn restore(&mut self, step: u64, moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>) {
        self.step = step;
        self.moments = moments;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f32) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("decoder.w", Tensor::full(&[3], v)).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = one_param(1.0);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &[Group::Decoder]);
        let g = BTreeMap::from([("decoder.w".to_string(), Tensor::from_vec(&[3], vec![2.0, -0.5, 0.0]).unwrap())]);
        opt.step(&mut p, &g).unwrap();
        let d = p.get("decoder.w").unwrap().data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] - 1.1).abs() < 1e-6);
        assert_eq!(d[2], 1.0);
    }

    #[test]
    fn zero_lr_and_foreign_groups_are_inert() {
        let mut p = one_param(1.0);
        let g = BTreeMap::from([("decoder.w".to_string(), Tensor::full(&[3], 1.0))]);
        let mut zero = Adam::new(AdamConfig::with_lr(0.0), &[Group::Decoder]);
        zero.step(&mut p, &g).unwrap();
        let mut other = Adam::new(AdamConfig::with_lr(1.0), &[Group::Actor]);
        other.step(&mut p, &g).unwrap();
        assert_eq!(p, one_param(1.0));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = one_param(3.0);
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), &[Group::Decoder]);
        for _ in 0..500 {
            let cur = p.get("decoder.w").unwrap().clone();
            let g = BTreeMap::from([("decoder.w".to_string(), cur.map(|x| 2.0 * (x + 1.0)))]);
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p.get("decoder.w").unwrap().data().iter().all(|x| (x + 1.0).abs() < 1e-2));
    }
}
