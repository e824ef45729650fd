//! Prior over the control variable: `phi_t = chi_t + b_phi`, where each
//! output dimension's block of `chi` follows a random walk that restarts
//! from `N(0, Sigma_0)` with probability `1 - lambda` at every step.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};
use crate::tensor::{bind_params, Parameters, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    /// One `lambda`, `Sigma_0`, `Sigma_d` for all output dimensions
    /// instead of one per dimension.
    pub shared: bool,
    pub lambda_init: f64,
    pub var0_init: f64,
    pub vard_init: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            shared: true,
            lambda_init: 0.95,
            var0_init: 1.0,
            vard_init: 0.01,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_init > 0.0 && self.lambda_init < 1.0) {
            return Err(Error::Config("lambda_init must be in (0, 1)".into()));
        }
        if !(self.var0_init > 0.0 && self.vard_init > 0.0) {
            return Err(Error::Config("initial variances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsParams<T> {
    pub targets: usize,
    pub latent: usize,
    pub shared: bool,
    /// `1 x G`, `G = 1` when shared, else `P`.
    pub logit_lambda: Tensor<T>,
    /// `1 x (G*E)`
    pub log_var0: Tensor<T>,
    /// `1 x (G*E)`
    pub log_vard: Tensor<T>,
    /// `1 x F`
    pub b_phi: Tensor<T>,
}

/// A latent trajectory starting at `t_from`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPath<T> {
    pub t_from: usize,
    /// One `F`-vector per time step.
    pub chi: Vec<Vec<T>>,
    /// `pi` per output dimension for each transition (`chi.len() - 1`
    /// entries); `true` means the walk continued.
    pub continued: Vec<Vec<bool>>,
}

impl<T: Scalar> DynamicsParams<T> {
    pub fn init(config: &DynamicsConfig, targets: usize, latent: usize) -> Result<Self> {
        config.validate()?;
        let g = if config.shared { 1 } else { targets };
        Ok(Self::from_values(
            targets,
            latent,
            config.shared,
            &vec![config.lambda_init; g],
            &vec![config.var0_init; g * latent],
            &vec![config.vard_init; g * latent],
            &vec![0.0; targets * latent],
        ))
    }

    /// Builds parameters from natural-scale values. Variances may be zero
    /// and `lambda` may be exactly 0 or 1 for degenerate processes.
    pub fn from_values(
        targets: usize,
        latent: usize,
        shared: bool,
        lambda: &[f64],
        var0: &[f64],
        vard: &[f64],
        b_phi: &[f64],
    ) -> Self {
        let g = if shared { 1 } else { targets };
        assert_eq!(lambda.len(), g, "lambda count");
        assert_eq!(var0.len(), g * latent, "var0 count");
        assert_eq!(vard.len(), g * latent, "vard count");
        assert_eq!(b_phi.len(), targets * latent, "b_phi count");
        let ln = |v: &[f64]| Tensor::row(v.iter().map(|&x| T::c(x.ln())).collect());
        DynamicsParams {
            targets,
            latent,
            shared,
            logit_lambda: Tensor::row(lambda.iter().map(|&l| T::c(scalar::logit(l))).collect()),
            log_var0: ln(var0),
            log_vard: ln(vard),
            b_phi: Tensor::row(b_phi.iter().map(|&x| T::c(x)).collect()),
        }
    }

    pub fn latent_total(&self) -> usize {
        self.targets * self.latent
    }

    /// Index into the per-group parameters for output dimension `i`.
    pub fn group_index(&self) -> Vec<usize> {
        (0..self.targets).map(|i| if self.shared { 0 } else { i }).collect()
    }

    /// Index into `log_var0`/`log_vard` for each latent component.
    pub fn component_index(&self) -> Vec<usize> {
        (0..self.latent_total())
            .map(|f| if self.shared { f % self.latent } else { f })
            .collect()
    }

    /// `lambda` for output dimension `i`.
    pub fn lambda(&self, i: usize) -> T {
        scalar::sigmoid(self.logit_lambda.data()[self.group_index()[i]])
    }

    /// `Sigma_0` expanded to all `F` components.
    pub fn var0(&self) -> Vec<T> {
        self.component_index()
            .iter()
            .map(|&k| self.log_var0.data()[k].exp())
            .collect()
    }

    /// `Sigma_d` expanded to all `F` components.
    pub fn vard(&self) -> Vec<T> {
        self.component_index()
            .iter()
            .map(|&k| self.log_vard.data()[k].exp())
            .collect()
    }

    /// Draws `chi` at `t_from` (from `N(0, Sigma_0)` unless `init` is given)
    /// and rolls it forward to `t_to` inclusive.
    pub fn sample_prior_path<R: Rng + ?Sized>(
        &self,
        t_from: usize,
        t_to: usize,
        rng: &mut R,
        init: Option<&[T]>,
    ) -> Result<LatentPath<T>> {
        if t_from > t_to {
            return Err(Error::contract("t_from must not exceed t_to"));
        }
        let f = self.latent_total();
        let sd0: Vec<T> = self.var0().into_iter().map(|v| v.sqrt()).collect();
        let first = match init {
            Some(c) if c.len() == f => c.to_vec(),
            Some(_) => return Err(Error::contract("initial chi has wrong width")),
            None => sd0.iter().map(|&s| s * T::c(rng.sample(StandardNormal))).collect(),
        };
        let mut chi = vec![first];
        let mut continued = Vec::with_capacity(t_to - t_from);
        for _ in t_from..t_to {
            let (next, pi) = self.step(chi.last().expect("non-empty"), rng);
            chi.push(next);
            continued.push(pi);
        }
        Ok(LatentPath { t_from, chi, continued })
    }

    /// One transition of the prior. Returns the new state and `pi` per
    /// output dimension.
    pub fn step<R: Rng + ?Sized>(&self, prev: &[T], rng: &mut R) -> (Vec<T>, Vec<bool>) {
        let e = self.latent;
        let var0 = self.var0();
        let vard = self.vard();
        let mut next = vec![T::zero(); prev.len()];
        let mut pis = Vec::with_capacity(self.targets);
        for i in 0..self.targets {
            let pi = rng.gen::<f64>() < self.lambda(i).f64();
            for k in i * e..(i + 1) * e {
                let eps = T::c(rng.sample(StandardNormal));
                next[k] = if pi {
                    prev[k] + vard[k].sqrt() * eps
                } else {
                    var0[k].sqrt() * eps
                };
            }
            pis.push(pi);
        }
        (next, pis)
    }

    /// `log p(chi_t | chi_{t-1})` with `pi` marginalized, summed over groups.
    pub fn transition_logdensity(&self, chi_t: &[T], chi_prev: &[T]) -> Result<T> {
        let f = self.latent_total();
        if chi_t.len() != f || chi_prev.len() != f {
            return Err(Error::contract("chi must have F components"));
        }
        let e = self.latent;
        let var0 = self.var0();
        let vard = self.vard();
        let mut total = T::zero();
        for i in 0..self.targets {
            let mut walk = T::zero();
            let mut restart = T::zero();
            for k in i * e..(i + 1) * e {
                walk = walk + scalar::normal_logpdf(chi_t[k], chi_prev[k], vard[k].sqrt());
                restart = restart + scalar::normal_logpdf(chi_t[k], T::zero(), var0[k].sqrt());
            }
            let l = self.logit_lambda.data()[self.group_index()[i]];
            // log(lambda) = -softplus(-l), log(1 - lambda) = -softplus(l)
            total = total + scalar::log_add_exp(walk - scalar::softplus(-l), restart - scalar::softplus(l));
        }
        Ok(total)
    }

    /// `log N(chi_B; 0, Sigma_0)`.
    pub fn initial_logdensity(&self, chi: &[T]) -> T {
        self.var0()
            .iter()
            .zip(chi)
            .map(|(&v, &c)| scalar::normal_logpdf(c, T::zero(), v.sqrt()))
            .sum()
    }

    /// `phi = chi + b_phi` reshaped to `P x E`.
    pub fn compose_phi(&self, chi: &[T]) -> Result<Tensor<T>> {
        if chi.len() != self.latent_total() {
            return Err(Error::contract("chi must have F components"));
        }
        let data = chi.iter().zip(self.b_phi.data()).map(|(&c, &b)| c + b).collect();
        Ok(Tensor::new(self.targets, self.latent, data))
    }

    pub fn bind<'t>(
        &self,
        tape: &'t Tape<T>,
        trainable: &dyn Fn(&str) -> bool,
    ) -> (BoundDynamics<'t, T>, Vec<Var<'t, T>>) {
        let vars = bind_params(self, tape, trainable);
        let bound = BoundDynamics {
            tape,
            logit_lambda: vars[0],
            log_var0: vars[1],
            log_vard: vars[2],
            b_phi: vars[3],
            group_index: self.group_index(),
            component_index: self.component_index(),
            groups: tape.constant(crate::conditional::group_matrix(self.targets, self.latent)),
        };
        (bound, vars)
    }
}

impl<T: Scalar> Parameters<T> for DynamicsParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("dynamics.logit_lambda", &self.logit_lambda);
        f("dynamics.log_var0", &self.log_var0);
        f("dynamics.log_vard", &self.log_vard);
        f("dynamics.b_phi", &self.b_phi);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("dynamics.logit_lambda", &mut self.logit_lambda);
        f("dynamics.log_var0", &mut self.log_var0);
        f("dynamics.log_vard", &mut self.log_vard);
        f("dynamics.b_phi", &mut self.b_phi);
    }
}

/// Dynamics parameters placed on a tape.
pub struct BoundDynamics<'t, T> {
    tape: &'t Tape<T>,
    pub logit_lambda: Var<'t, T>,
    pub log_var0: Var<'t, T>,
    pub log_vard: Var<'t, T>,
    pub b_phi: Var<'t, T>,
    group_index: Vec<usize>,
    component_index: Vec<usize>,
    groups: Var<'t, T>,
}

impl<'t, T: Scalar> BoundDynamics<'t, T> {
    /// `sqrt(Sigma_0)` as a `1 x F` row.
    pub fn std0(&self) -> Var<'t, T> {
        self.log_var0.gather_cols(&self.component_index).scale(T::c(0.5)).exp()
    }

    /// `sqrt(Sigma_d)` as a `1 x F` row.
    pub fn stdd(&self) -> Var<'t, T> {
        self.log_vard.gather_cols(&self.component_index).scale(T::c(0.5)).exp()
    }

    /// Per-row, per-group marginal transition log-density (`N x P`) for
    /// `N` transitions `prev -> next`, both `N x F`.
    pub fn transition_logdensity(&self, next: Var<'t, T>, prev: Var<'t, T>) -> Var<'t, T> {
        let n = next.shape()[0];
        let walk = next
            .gaussian_logpdf(prev, self.stdd().broadcast_rows(n))
            .matmul(self.groups);
        let zeros = self.tape.constant(Tensor::zeros(n, next.shape()[1]));
        let restart = next
            .gaussian_logpdf(zeros, self.std0().broadcast_rows(n))
            .matmul(self.groups);
        let l = self.logit_lambda.gather_cols(&self.group_index);
        let log_lam = -((-l).softplus());
        let log_1m = -(l.softplus());
        walk.add_row(log_lam).log_add_exp(restart.add_row(log_1m))
    }

    /// `log N(chi; 0, Sigma_0)` for each of the `N` rows (`N x 1`).
    pub fn initial_logdensity(&self, chi: Var<'t, T>) -> Var<'t, T> {
        let n = chi.shape()[0];
        let zeros = self.tape.constant(Tensor::zeros(n, chi.shape()[1]));
        chi.gaussian_logpdf(zeros, self.std0().broadcast_rows(n)).sum_cols()
    }

    /// `phi = chi + b_phi` for each row of `chi` (`N x F`).
    pub fn compose_phi(&self, chi: Var<'t, T>) -> Var<'t, T> {
        chi.add_row(self.b_phi)
    }
}
