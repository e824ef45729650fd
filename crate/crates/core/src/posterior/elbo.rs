use rand::Rng;

use super::BoundPosterior;
use crate::conditional::{loglik_on_tape, BoundConditional};
use crate::dynamics::BoundDynamics;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Flattened windows and targets for the `T'` modelled time steps; row `k`
/// belongs to the transition into row `k + 1` of a posterior path.
pub struct ElboData<'a, T> {
    pub windows: &'a Tensor<T>,
    pub targets: &'a Tensor<T>,
}

fn gather<T: Scalar>(t: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let mut data = Vec::with_capacity(rows.len() * t.cols());
    for &r in rows {
        data.extend_from_slice(t.row_slice(r));
    }
    Tensor::new(rows.len(), t.cols(), data)
}

/// Monte Carlo estimate of the evidence lower bound restricted to the
/// transitions in `batch`, rescaled by `T' / |batch|` to target the full
/// objective. When `dims` selects a subset of `k` output dimensions the
/// likelihood term is rescaled by `P / k`. The initial-state term
/// `log p(chi_B) - log q(chi_B)` enters once, unscaled.
#[allow(clippy::too_many_arguments)]
pub fn elbo<'t, T: Scalar, R: Rng + ?Sized>(
    cond: &BoundConditional<'t, T>,
    dynamics: &BoundDynamics<'t, T>,
    posterior: &BoundPosterior<'t, T>,
    data: &ElboData<'_, T>,
    batch: &[usize],
    n_mc: usize,
    dims: Option<&[usize]>,
    rng: &mut R,
) -> Result<Var<'t, T>> {
    if n_mc < 1 {
        return Err(Error::contract("n_mc must be at least 1"));
    }
    let horizon = data.targets.rows();
    if data.windows.rows() != horizon {
        return Err(Error::contract("windows and targets disagree on length"));
    }
    if batch.is_empty() || batch.iter().any(|&k| k >= horizon) {
        return Err(Error::contract("batch times must lie in the modelled range"));
    }
    let p = data.targets.cols();
    let dim_scale = match dims {
        Some([]) => return Err(Error::contract("empty dimension subset")),
        Some(d) if d.iter().any(|&i| i >= p) => return Err(Error::contract("dimension out of range")),
        Some(d) => T::c(p as f64 / d.len() as f64),
        None => T::one(),
    };
    let tape = dynamics.b_phi.tape();
    let z = cond.project(cond.encode(&gather(data.windows, batch)));
    let y = tape.constant(gather(data.targets, batch));
    let next_rows: Vec<usize> = batch.iter().map(|&k| k + 1).collect();
    let time_scale = T::c(horizon as f64 / batch.len() as f64);

    let mut total: Option<Var<'t, T>> = None;
    for _ in 0..n_mc {
        let draw = posterior.sample(rng);
        if draw.chi.shape()[0] != horizon + 1 {
            return Err(Error::contract("posterior horizon does not match the data"));
        }
        let chi_next = draw.chi.gather_rows(&next_rows);
        let chi_prev = draw.chi.gather_rows(batch);
        let (mu, sigma) = cond.emit(z, dynamics.compose_phi(chi_next));
        let ll = loglik_on_tape(y, mu, sigma, dims).scale(dim_scale);
        let prior = dynamics.transition_logdensity(chi_next, chi_prev).sum();
        let log_q = draw.log_q.gather_rows(batch).sum();
        let chi_b = draw.chi.slice_rows(0, 1);
        let initial = dynamics.initial_logdensity(chi_b).sum() - draw.log_q_initial;
        let term = (ll + prior - log_q).scale(time_scale) + initial;
        total = Some(match total {
            None => term,
            Some(acc) => acc + term,
        });
    }
    Ok(total.expect("n_mc >= 1").scale(T::one() / T::c(n_mc as f64)))
}
