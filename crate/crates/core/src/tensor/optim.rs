use serde::{Deserialize, Serialize};

use super::{Parameters, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moments for Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn from_parts(config: AdamConfig, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, step: u64) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::contract("adam moment shapes disagree"));
        }
        Ok(AdamState { config, m, v, step })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    fn check(&mut self, shapes: &[[usize; 2]], grads: &[Tensor<T>]) -> Result<()> {
        if shapes.len() != grads.len() {
            return Err(Error::contract(format!(
                "adam: {} params but {} grads",
                shapes.len(),
                grads.len()
            )));
        }
        for (k, (s, g)) in shapes.iter().zip(grads).enumerate() {
            if *s != g.shape() {
                return Err(Error::contract(format!(
                    "adam: param {k} has shape {s:?}, grad {:?}",
                    g.shape()
                )));
            }
        }
        if self.m.is_empty() {
            self.m = shapes.iter().map(|s| Tensor::zeros(s[0], s[1])).collect();
            self.v = self.m.clone();
        } else if self.m.len() != shapes.len() || self.m.iter().zip(shapes).any(|(m, s)| m.shape() != *s) {
            return Err(Error::contract("adam: state does not match parameter shapes"));
        }
        Ok(())
    }

    fn apply(&mut self, k: usize, p: &mut Tensor<T>, g: &Tensor<T>, lr: T) {
        let b1 = T::c(self.config.beta1);
        let b2 = T::c(self.config.beta2);
        let eps = T::c(self.config.eps);
        let step = self.step as i32;
        let c1 = T::one() - b1.powi(step);
        let c2 = T::one() - b2.powi(step);
        let m = self.m[k].data_mut();
        let v = self.v[k].data_mut();
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            if lr != T::zero() {
                let mh = *m / c1;
                let vh = *v / c2;
                *p = *p - lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    /// One Adam update of `params` in place.
    pub fn adam_step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: T) -> Result<()> {
        let shapes: Vec<_> = params.iter().map(|p| p.shape()).collect();
        self.check(&shapes, grads)?;
        self.step += 1;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.apply(k, p, g, lr);
        }
        Ok(())
    }

    /// Adam update of the tensors of `params` whose names pass `select`;
    /// `grads` must follow the same order.
    pub fn update_selected<P: Parameters<T> + ?Sized>(
        &mut self,
        params: &mut P,
        select: &dyn Fn(&str) -> bool,
        grads: &[Tensor<T>],
        lr: T,
    ) -> Result<()> {
        let mut shapes = Vec::new();
        params.visit(&mut |name, t| {
            if select(name) {
                shapes.push(t.shape())
            }
        });
        self.check(&shapes, grads)?;
        self.step += 1;
        let mut k = 0;
        params.visit_mut(&mut |name, t| {
            if select(name) {
                self.apply(k, t, &grads[k], lr);
                k += 1;
            }
        });
        Ok(())
    }
}

/// Rescales `grads` so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: T) -> T {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&x| x * x)
        .sum::<T>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x = *x * s;
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AnnealStrategy {
    #[default]
    Linear,
    Cosine,
}

/// "1cycle" schedule: ramp from `max_lr / initial_divisor` up to `max_lr`
/// at the end of warmup, then anneal down to `max_lr / final_divisor` at
/// the last step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneCycleSchedule {
    pub total_steps: usize,
    pub max_lr: f64,
    pub warmup_fraction: f64,
    pub initial_divisor: f64,
    pub final_divisor: f64,
    pub strategy: AnnealStrategy,
}

impl OneCycleSchedule {
    pub fn new(total_steps: usize, max_lr: f64) -> Self {
        OneCycleSchedule {
            total_steps,
            max_lr,
            warmup_fraction: 0.49,
            initial_divisor: 25.0,
            final_divisor: 1e4,
            strategy: AnnealStrategy::Linear,
        }
    }

    /// Index of the step at which the schedule peaks.
    pub fn peak_step(&self) -> usize {
        ((self.total_steps.saturating_sub(1)) as f64 * self.warmup_fraction).round() as usize
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if self.total_steps < 2 {
            return Err(Error::contract("1cycle needs at least two steps"));
        }
        if step >= self.total_steps {
            return Err(Error::contract(format!(
                "step {step} outside schedule of {} steps",
                self.total_steps
            )));
        }
        let start = self.max_lr / self.initial_divisor;
        let end = self.max_lr / self.final_divisor;
        let peak = self.peak_step();
        let last = self.total_steps - 1;
        let (from, to, frac) = if step <= peak {
            if peak == 0 {
                return Ok(self.max_lr);
            }
            (start, self.max_lr, step as f64 / peak as f64)
        } else {
            (self.max_lr, end, (step - peak) as f64 / (last - peak) as f64)
        };
        let w = match self.strategy {
            AnnealStrategy::Linear => frac,
            AnnealStrategy::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * frac).cos()),
        };
        Ok(from + (to - from) * w)
    }
}
