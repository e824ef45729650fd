use rand::Rng;

use super::{Initial, InitialState, PosteriorConfig, PosteriorDraw};
use crate::scalar::{self, Scalar};
use crate::tensor::{bind_params, Parameters, Tape, Tensor, Var};

/// Gated Gaussian posterior
/// `q(chi_t | chi_{t-1}) = N(a_t * chi_{t-1} + (1 - a_t) * m_t, s_t^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArPosterior<T> {
    /// `T' x F`, pre-sigmoid.
    pub gate: Tensor<T>,
    /// `T' x F`
    pub mean: Tensor<T>,
    /// `T' x F`, pre-softplus.
    pub scale: Tensor<T>,
    pub initial: InitialState<T>,
}

impl<T: Scalar> ArPosterior<T> {
    pub fn init(config: &PosteriorConfig, horizon: usize, components: usize) -> Self {
        ArPosterior {
            gate: Tensor::full(horizon, components, T::c(config.ar_gate_init)),
            mean: Tensor::zeros(horizon, components),
            scale: Tensor::full(horizon, components, scalar::softplus_inv(T::c(config.ar_scale_init))),
            initial: InitialState::init(config, components),
        }
    }

    pub fn horizon(&self) -> usize {
        self.gate.rows()
    }

    pub fn components(&self) -> usize {
        self.gate.cols()
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: &dyn Fn(&str) -> bool) -> (BoundAr<'t, T>, Vec<Var<'t, T>>) {
        let v = bind_params(self, tape, trainable);
        (
            BoundAr {
                gate: v[0],
                mean: v[1],
                scale: v[2],
                initial: Initial {
                    mean: v[3],
                    scale: v[4],
                },
            },
            v,
        )
    }

    /// `log q(chi_{B+1:T} | chi_B)` of a given path, evaluated step by step.
    pub fn log_density(&self, chi: &[Vec<T>]) -> T {
        let mut total = T::zero();
        for t in 0..self.horizon() {
            for f in 0..self.components() {
                let a = scalar::sigmoid(self.gate.get(t, f));
                let m = self.mean.get(t, f);
                let s = scalar::softplus(self.scale.get(t, f));
                let mu = a * chi[t][f] + (T::one() - a) * m;
                total = total + scalar::normal_logpdf(chi[t + 1][f], mu, s);
            }
        }
        total
    }
}

impl<T: Scalar> Parameters<T> for ArPosterior<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("posterior.gate", &self.gate);
        f("posterior.mean", &self.mean);
        f("posterior.scale", &self.scale);
        self.initial.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("posterior.gate", &mut self.gate);
        f("posterior.mean", &mut self.mean);
        f("posterior.scale", &mut self.scale);
        self.initial.visit_mut(f);
    }
}

pub struct BoundAr<'t, T> {
    gate: Var<'t, T>,
    mean: Var<'t, T>,
    scale: Var<'t, T>,
    initial: Initial<'t, T>,
}

impl<'t, T: Scalar> BoundAr<'t, T> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PosteriorDraw<'t, T> {
        let tape = self.gate.tape();
        let [n, f] = self.gate.shape();
        let (init, log_q_initial) = self.initial.sample(rng);
        let eps = Tensor::standard_normal(n, f, rng);
        let a = self.gate.sigmoid();
        let s = self.scale.softplus();
        let one_minus_a = (-a).add_scalar(T::one());
        let drive = one_minus_a * self.mean + s * tape.constant(eps.clone());
        let chi = init.gated_scan(a, drive);
        // log N(chi_t; mu_t, s_t) = log N(eps_t; 0, 1) - log s_t
        let base_rows = Tensor::column(
            (0..n)
                .map(|t| {
                    eps.row_slice(t)
                        .iter()
                        .map(|&e| scalar::normal_logpdf(e, T::zero(), T::one()))
                        .sum()
                })
                .collect(),
        );
        let log_q = tape.constant(base_rows) - s.ln().sum_cols();
        PosteriorDraw {
            chi,
            log_q,
            log_q_initial,
        }
    }
}
