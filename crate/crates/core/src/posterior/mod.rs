//! Variational posteriors over the latent path `chi_B, ..., chi_T` and the
//! evidence lower bound that trains them.
//!
//! Both families share a diagonal Gaussian `q(chi_B)` for the first state
//! and differ in how the `T'` transitions that follow are parameterized.

mod ar;
mod elbo;
mod iaf;

pub use ar::ArPosterior;
pub use elbo::{elbo, ElboData};
pub use iaf::{IafLayer, IafPosterior};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};
use crate::tensor::{Parameters, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorKind {
    Ar,
    Iaf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosteriorConfig {
    pub kind: PosteriorKind,
    pub iaf_layers: usize,
    pub iaf_hidden: usize,
    pub iaf_embedding: usize,
    /// Initial per-layer scale of the flow; the product over layers is the
    /// initial posterior standard deviation.
    pub iaf_sigma_init: f64,
    pub ar_gate_init: f64,
    pub ar_scale_init: f64,
    /// Initial standard deviation of `q(chi_B)`.
    pub initial_scale: f64,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        PosteriorConfig {
            kind: PosteriorKind::Ar,
            iaf_layers: 3,
            iaf_hidden: 128,
            iaf_embedding: 32,
            iaf_sigma_init: 0.3,
            ar_gate_init: 2.0,
            ar_scale_init: 0.1,
            initial_scale: 0.1,
        }
    }
}

impl PosteriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == PosteriorKind::Iaf && (self.iaf_layers == 0 || self.iaf_hidden == 0 || self.iaf_embedding == 0)
        {
            return Err(Error::Config(
                "iaf layers, hidden and embedding widths must be positive".into(),
            ));
        }
        if !(self.iaf_sigma_init > 0.0 && self.ar_scale_init > 0.0 && self.initial_scale > 0.0) {
            return Err(Error::Config("posterior scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PosteriorParams<T> {
    Ar(ArPosterior<T>),
    Iaf(IafPosterior<T>),
}

/// A sampled latent path with its log-density under `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSample<T> {
    /// `T' + 1` vectors of width `F`, the first at `t = B`.
    pub chi: Vec<Vec<T>>,
    /// `log q(chi_B, ..., chi_T)`.
    pub log_q: T,
}

/// A draw on a tape.
pub struct PosteriorDraw<'t, T> {
    /// `(T' + 1) x F`
    pub chi: Var<'t, T>,
    /// `T' x 1`: log-density of transition `k` (into row `k + 1` of `chi`),
    /// summed over components.
    pub log_q: Var<'t, T>,
    /// `1 x 1`: `log q(chi_B)`.
    pub log_q_initial: Var<'t, T>,
}

/// `q(chi_B) = N(mean, softplus(scale)^2)` per component.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState<T> {
    /// `1 x F`
    pub mean: Tensor<T>,
    /// `1 x F`, pre-softplus.
    pub scale: Tensor<T>,
}

impl<T: Scalar> InitialState<T> {
    pub fn init(config: &PosteriorConfig, components: usize) -> Self {
        InitialState {
            mean: Tensor::zeros(1, components),
            scale: Tensor::full(1, components, scalar::softplus_inv(T::c(config.initial_scale))),
        }
    }

    pub fn log_density(&self, chi: &[T]) -> T {
        chi.iter()
            .zip(self.mean.data().iter().zip(self.scale.data()))
            .map(|(&c, (&m, &s))| scalar::normal_logpdf(c, m, scalar::softplus(s)))
            .sum()
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("posterior.initial_mean", &self.mean);
        f("posterior.initial_scale", &self.scale);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("posterior.initial_mean", &mut self.mean);
        f("posterior.initial_scale", &mut self.scale);
    }
}

struct Initial<'t, T> {
    mean: Var<'t, T>,
    scale: Var<'t, T>,
}

impl<'t, T: Scalar> Initial<'t, T> {
    /// `chi_B` (`1 x F`) and its log-density (`1 x 1`).
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Var<'t, T>, Var<'t, T>) {
        let tape = self.mean.tape();
        let eps = Tensor::standard_normal(1, self.mean.shape()[1], rng);
        let base: T = eps
            .data()
            .iter()
            .map(|&e| scalar::normal_logpdf(e, T::zero(), T::one()))
            .sum();
        let s = self.scale.softplus();
        let chi = self.mean + s * tape.constant(eps);
        let log_q = (-s.ln().sum()).add_scalar(base);
        (chi, log_q)
    }
}

impl<T: Scalar> PosteriorParams<T> {
    /// `horizon` is `T'`, the number of transitions after `chi_B`.
    pub fn init<R: Rng + ?Sized>(
        config: &PosteriorConfig,
        horizon: usize,
        components: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if horizon == 0 || components == 0 {
            return Err(Error::contract("posterior needs at least one step and component"));
        }
        Ok(match config.kind {
            PosteriorKind::Ar => PosteriorParams::Ar(ArPosterior::init(config, horizon, components)),
            PosteriorKind::Iaf => PosteriorParams::Iaf(IafPosterior::init(config, horizon, components, rng)?),
        })
    }

    pub fn kind(&self) -> PosteriorKind {
        match self {
            PosteriorParams::Ar(_) => PosteriorKind::Ar,
            PosteriorParams::Iaf(_) => PosteriorKind::Iaf,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            PosteriorParams::Ar(p) => p.horizon(),
            PosteriorParams::Iaf(p) => p.horizon,
        }
    }

    pub fn components(&self) -> usize {
        match self {
            PosteriorParams::Ar(p) => p.components(),
            PosteriorParams::Iaf(p) => p.components,
        }
    }

    pub fn bind<'t>(
        &self,
        tape: &'t Tape<T>,
        trainable: &dyn Fn(&str) -> bool,
    ) -> (BoundPosterior<'t, T>, Vec<Var<'t, T>>) {
        match self {
            PosteriorParams::Ar(p) => {
                let (b, v) = p.bind(tape, trainable);
                (BoundPosterior::Ar(b), v)
            }
            PosteriorParams::Iaf(p) => {
                let (b, v) = p.bind(tape, trainable);
                (BoundPosterior::Iaf(b), v)
            }
        }
    }

    pub fn initial(&self) -> &InitialState<T> {
        match self {
            PosteriorParams::Ar(p) => &p.initial,
            PosteriorParams::Iaf(p) => &p.initial,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PosteriorSample<T> {
        let tape = Tape::new();
        let (post, _) = self.bind(&tape, &|_| false);
        let draw = post.sample(rng);
        let chi_v = draw.chi.value();
        let chi: Vec<Vec<T>> = (0..chi_v.rows()).map(|r| chi_v.row_slice(r).to_vec()).collect();
        let log_q = draw.log_q.value().sum() + draw.log_q_initial.item();
        PosteriorSample { chi, log_q }
    }
}

impl<T: Scalar> Parameters<T> for PosteriorParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        match self {
            PosteriorParams::Ar(p) => p.visit(f),
            PosteriorParams::Iaf(p) => p.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        match self {
            PosteriorParams::Ar(p) => p.visit_mut(f),
            PosteriorParams::Iaf(p) => p.visit_mut(f),
        }
    }
}

pub enum BoundPosterior<'t, T> {
    Ar(ar::BoundAr<'t, T>),
    Iaf(iaf::BoundIaf<'t, T>),
}

impl<'t, T: Scalar> BoundPosterior<'t, T> {
    /// Reparameterized draw of a whole path.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PosteriorDraw<'t, T> {
        match self {
            BoundPosterior::Ar(p) => p.sample(rng),
            BoundPosterior::Iaf(p) => p.sample(rng),
        }
    }
}
