//! The composed forecaster: conditional model plus latent dynamics.

use serde::{Deserialize, Serialize};

use crate::conditional::{ConditionalParams, EncoderConfig};
use crate::dynamics::{DynamicsConfig, DynamicsParams};
use crate::posterior::PosteriorConfig;
use crate::scalar::Scalar;
use crate::tensor::{Parameters, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `chi = 0`, so `phi = b_phi` at every step.
    Staticonf,
    /// Time-varying `phi_t = chi_t + b_phi`.
    Dynaconf,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Staticonf => "staticonf",
            ModelKind::Dynaconf => "dynaconf",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub dynamics: DynamicsConfig,
    pub posterior: PosteriorConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub kind: ModelKind,
    pub cond: ConditionalParams<T>,
    pub dynamics: DynamicsParams<T>,
}

/// Deterministic per-step quantities of the conditional model.
#[derive(Clone, Debug, PartialEq)]
pub struct Features<T> {
    /// `N x F`
    pub z: Tensor<T>,
    /// `N x P`
    pub sigma: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    pub fn window(&self) -> usize {
        self.cond.config.window
    }

    pub fn targets(&self) -> usize {
        self.cond.config.targets
    }

    pub fn latent(&self) -> usize {
        self.cond.config.latent
    }

    /// Latents and emission scales for a batch of flattened windows.
    pub fn features(&self, windows: &Tensor<T>) -> Features<T> {
        let tape = Tape::new();
        let cond = self.cond.bind_const(&tape);
        let z = cond.project(cond.encode(windows));
        let zero_phi = tape.constant(Tensor::zeros(1, z.shape()[1]));
        let (_, sigma) = cond.emit_static(z, zero_phi);
        let z = (*z.value()).clone();
        let sigma = (*sigma.value()).clone();
        Features { z, sigma }
    }

    /// Emission means `(chi_row + b_phi) . z + b_mu` for one step.
    pub fn mean(&self, z: &[T], chi: Option<&[T]>) -> Vec<T> {
        let e = self.latent();
        let b_phi = self.dynamics.b_phi.data();
        let b_mu = self.cond.b_mu.data();
        (0..self.targets())
            .map(|i| {
                let mut m = b_mu[i];
                for k in i * e..(i + 1) * e {
                    let phi = b_phi[k] + chi.map_or(T::zero(), |c| c[k]);
                    m = m + phi * z[k];
                }
                m
            })
            .collect()
    }
}

impl<T: Scalar> Parameters<T> for Model<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.cond.visit(f);
        self.dynamics.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.cond.visit_mut(f);
        self.dynamics.visit_mut(f);
    }
}
