//! Online filtering of the latent state and sample-path forecasting.
//!
//! Given the restart indicators `pi`, the latent `chi` is linear-Gaussian
//! in each output dimension's group: with `y~ = y_i - z_i . b_phi_i - b_mu_i`
//! the observation is `y~ = z_i . chi_i + N(0, sigma_i^2)`. Each particle
//! therefore carries exact Kalman statistics per group and only `pi` is
//! sampled.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Series;
use crate::error::{Error, Result};
use crate::metrics::SampleBlock;
use crate::model::{Features, Model, ModelKind};
use crate::scalar::{self, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub n_windows: usize,
    pub n_paths: usize,
    pub particles: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            horizon: 10,
            n_windows: 100,
            n_paths: 1000,
            particles: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle<T> {
    /// `F` Kalman means, grouped by output dimension.
    pub mean: Vec<T>,
    /// `P` row-major `E x E` covariance blocks.
    pub cov: Vec<T>,
    pub log_weight: T,
    /// Latest `pi` per output dimension.
    pub continued: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble<T> {
    pub targets: usize,
    pub latent: usize,
    pub particles: Vec<Particle<T>>,
    /// Steps at which every weight vanished and the weights were reset.
    pub degenerate_resets: usize,
    pub resamples: usize,
}

impl<T: Scalar> Ensemble<T> {
    /// `n` equally weighted particles at the prior `chi_B ~ N(0, Sigma_0)`.
    pub fn from_prior(model: &Model<T>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::contract("ensemble needs at least one particle"));
        }
        let (p, e) = (model.targets(), model.latent());
        let var0 = model.dynamics.var0();
        let mut cov = vec![T::zero(); p * e * e];
        for i in 0..p {
            for k in 0..e {
                cov[i * e * e + k * e + k] = var0[i * e + k];
            }
        }
        let lw = -T::c((n as f64).ln());
        let particle = Particle {
            mean: vec![T::zero(); p * e],
            cov,
            log_weight: lw,
            continued: vec![true; p],
        };
        Ok(Ensemble {
            targets: p,
            latent: e,
            particles: vec![particle; n],
            degenerate_resets: 0,
            resamples: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight.f64().exp()).collect()
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.weights().iter().map(|w| w * w).sum::<f64>()
    }

    /// Weighted mean of the Kalman means.
    pub fn mean(&self) -> Vec<f64> {
        let f = self.targets * self.latent;
        let mut out = vec![0.0; f];
        for (p, w) in self.particles.iter().zip(self.weights()) {
            for (o, m) in out.iter_mut().zip(&p.mean) {
                *o += w * m.f64();
            }
        }
        out
    }

    /// Quantile of component `f` under the Gaussian mixture over particles.
    pub fn quantile(&self, f: usize, q: f64) -> f64 {
        let e = self.latent;
        let (i, k) = (f / e, f % e);
        let comps: Vec<(f64, f64, f64)> = self
            .particles
            .iter()
            .zip(self.weights())
            .map(|(p, w)| {
                let var = p.cov[i * e * e + k * e + k].f64().max(0.0);
                (w, p.mean[f].f64(), var.sqrt())
            })
            .collect();
        let cdf = |x: f64| -> f64 {
            comps
                .iter()
                .map(|&(w, m, s)| {
                    if s > 0.0 {
                        w * scalar::normal_cdf((x - m) / s)
                    } else if x >= m {
                        w
                    } else {
                        0.0
                    }
                })
                .sum()
        };
        let mut lo = comps.iter().map(|c| c.1 - 10.0 * c.2).fold(f64::INFINITY, f64::min) - 1e-9;
        let mut hi = comps.iter().map(|c| c.1 + 10.0 * c.2).fold(f64::NEG_INFINITY, f64::max) + 1e-9;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    fn normalize(&mut self) {
        let max = self
            .particles
            .iter()
            .map(|p| p.log_weight)
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
        if !max.is_finite() {
            let lw = -T::c((self.len() as f64).ln());
            for p in &mut self.particles {
                p.log_weight = lw;
            }
            self.degenerate_resets += 1;
            return;
        }
        let total: T = self.particles.iter().map(|p| (p.log_weight - max).exp()).sum();
        let log_z = max + total.ln();
        for p in &mut self.particles {
            p.log_weight = p.log_weight - log_z;
        }
    }

    fn resample_systematic<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.len();
        let w = self.weights();
        let u0: f64 = rng.gen::<f64>() / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut cum = w[0];
        let mut j = 0;
        for k in 0..n {
            let u = u0 + k as f64 / n as f64;
            while u > cum && j < n - 1 {
                j += 1;
                cum += w[j];
            }
            out.push(self.particles[j].clone());
        }
        let lw = -T::c((n as f64).ln());
        for p in &mut out {
            p.log_weight = lw;
        }
        self.particles = out;
        self.resamples += 1;
    }
}

/// Predictive moments of `z . chi` for a group with mean `m` and
/// covariance `cov` (`E x E`): returns `(z.m, z' cov z, cov z)`.
fn project<T: Scalar>(z: &[T], m: &[T], cov: &[T]) -> (T, T, Vec<T>) {
    let e = z.len();
    let mut pz = vec![T::zero(); e];
    for r in 0..e {
        for c in 0..e {
            pz[r] = pz[r] + cov[r * e + c] * z[c];
        }
    }
    let mean = z.iter().zip(m).map(|(&a, &b)| a * b).sum();
    let var = z.iter().zip(&pz).map(|(&a, &b)| a * b).sum();
    (mean, var, pz)
}

/// Kalman update in Joseph form, in place.
fn kalman_update<T: Scalar>(m: &mut [T], cov: &mut [T], z: &[T], obs: T, noise_var: T) {
    let e = z.len();
    let (pred, zpz, pz) = project(z, m, cov);
    let s = zpz + noise_var;
    let k: Vec<T> = pz.iter().map(|&v| v / s).collect();
    let innov = obs - pred;
    for (mi, &ki) in m.iter_mut().zip(&k) {
        *mi = *mi + ki * innov;
    }
    // A = I - k z'
    let mut a = vec![T::zero(); e * e];
    for r in 0..e {
        for c in 0..e {
            let id = if r == c { T::one() } else { T::zero() };
            a[r * e + c] = id - k[r] * z[c];
        }
    }
    let mut ap = vec![T::zero(); e * e];
    for r in 0..e {
        for c in 0..e {
            let mut acc = T::zero();
            for j in 0..e {
                acc = acc + a[r * e + j] * cov[j * e + c];
            }
            ap[r * e + c] = acc;
        }
    }
    for r in 0..e {
        for c in 0..e {
            let mut acc = noise_var * k[r] * k[c];
            for j in 0..e {
                acc = acc + ap[r * e + j] * a[c * e + j];
            }
            cov[r * e + c] = acc;
        }
    }
    for r in 0..e {
        for c in r + 1..e {
            let v = T::c(0.5) * (cov[r * e + c] + cov[c * e + r]);
            cov[r * e + c] = v;
            cov[c * e + r] = v;
        }
    }
}

/// Advances the ensemble through one observation `y` (`P` values) with
/// the step's latents `z` (`F`) and emission scales `sigma` (`P`).
pub fn filter_step<T: Scalar, R: Rng + ?Sized>(
    ens: &mut Ensemble<T>,
    y: &[T],
    z: &[T],
    sigma: &[T],
    model: &Model<T>,
    rng: &mut R,
) -> Result<()> {
    let (p, e) = (ens.targets, ens.latent);
    if y.len() != p || z.len() != p * e || sigma.len() != p {
        return Err(Error::contract("observation, latents or scales have the wrong width"));
    }
    let dynamics = &model.dynamics;
    let var0 = dynamics.var0();
    let vard = dynamics.vard();
    let b_phi = dynamics.b_phi.data();
    let b_mu = model.cond.b_mu.data();
    let lambdas: Vec<T> = (0..p).map(|i| dynamics.lambda(i)).collect();
    for part in &mut ens.particles {
        let mut increment = T::zero();
        for i in 0..p {
            let g = i * e..(i + 1) * e;
            let zi = &z[g.clone()];
            let obs = y[i] - zi.iter().zip(&b_phi[g.clone()]).map(|(&a, &b)| a * b).sum::<T>() - b_mu[i];
            let noise = sigma[i] * sigma[i];

            let walk_m = part.mean[g.clone()].to_vec();
            let mut walk_p = part.cov[i * e * e..(i + 1) * e * e].to_vec();
            for k in 0..e {
                walk_p[k * e + k] = walk_p[k * e + k] + vard[i * e + k];
            }
            let restart_m = vec![T::zero(); e];
            let mut restart_p = vec![T::zero(); e * e];
            for k in 0..e {
                restart_p[k * e + k] = var0[i * e + k];
            }
            let (mw, vw, _) = project(zi, &walk_m, &walk_p);
            let (mr, vr, _) = project(zi, &restart_m, &restart_p);
            let lw = scalar::normal_logpdf(obs, mw, (vw + noise).sqrt());
            let lr = scalar::normal_logpdf(obs, mr, (vr + noise).sqrt());
            let lam = lambdas[i];
            let a = lam.ln() + lw;
            let b = (T::one() - lam).ln() + lr;
            let total = scalar::log_add_exp(a, b);
            increment = increment + total;
            let p_walk = (a - total).exp();
            let walk = rng.gen::<f64>() < p_walk.f64();
            let (mut m, mut cov) = if walk { (walk_m, walk_p) } else { (restart_m, restart_p) };
            kalman_update(&mut m, &mut cov, zi, obs, noise);
            part.mean[g].copy_from_slice(&m);
            part.cov[i * e * e..(i + 1) * e * e].copy_from_slice(&cov);
            part.continued[i] = walk;
        }
        part.log_weight = part.log_weight + increment;
        if part.log_weight.is_nan() {
            part.log_weight = T::neg_infinity();
        }
    }
    ens.normalize();
    if ens.ess() < ens.len() as f64 / 2.0 {
        ens.resample_systematic(rng);
    }
    Ok(())
}

/// Filter step that derives `z` and `sigma` from the conditioning window.
pub fn filter_step_window<T: Scalar, R: Rng + ?Sized>(
    ens: &mut Ensemble<T>,
    y: &[T],
    window: &[T],
    model: &Model<T>,
    rng: &mut R,
) -> Result<()> {
    let f = model.features(&Tensor::row(window.to_vec()));
    filter_step(ens, y, f.z.data(), f.sigma.data(), model, rng)
}

/// Draws `chi` from one group's Gaussian via a Cholesky factor.
fn sample_gaussian<T: Scalar, R: Rng + ?Sized>(m: &[T], cov: &[T], rng: &mut R) -> Vec<T> {
    let e = m.len();
    let mut l = vec![T::zero(); e * e];
    for r in 0..e {
        for c in 0..=r {
            let mut s = cov[r * e + c];
            for k in 0..c {
                s = s - l[r * e + k] * l[c * e + k];
            }
            if r == c {
                l[r * e + c] = s.max(T::zero()).sqrt();
            } else {
                let d = l[c * e + c];
                l[r * e + c] = if d > T::zero() { s / d } else { T::zero() };
            }
        }
    }
    let eps: Vec<T> = (0..e).map(|_| T::c(rng.sample(StandardNormal))).collect();
    (0..e)
        .map(|r| m[r] + (0..=r).map(|c| l[r * e + c] * eps[c]).sum::<T>())
        .collect()
}

/// Sample paths for one forecast origin.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    /// First forecast row.
    pub origin: usize,
    /// Model-scale sample paths.
    pub samples: SampleBlock,
    /// Share of sampled latent transitions that restarted.
    pub restart_rate: f64,
    /// The filter had to reset degenerate weights before this forecast.
    pub degenerate: bool,
}

/// Samples `n_paths` trajectories for rows `origin..origin + horizon`
/// using observations before `origin` only. `ens` is the filtered state at
/// row `origin - 1`; `None` forecasts with `chi = 0`.
pub fn forecast<T: Scalar, R: Rng + ?Sized>(
    ens: Option<&Ensemble<T>>,
    series: &Series<T>,
    origin: usize,
    horizon: usize,
    n_paths: usize,
    model: &Model<T>,
    rng: &mut R,
) -> Result<ForecastResult> {
    let b = model.window();
    let (p, e) = (model.targets(), model.latent());
    let f = p * e;
    if horizon < 1 {
        return Err(Error::contract("horizon must be at least 1"));
    }
    if n_paths < 1 {
        return Err(Error::contract("need at least one path"));
    }
    if origin < b || origin > series.len() {
        return Err(Error::contract("forecast origin needs a full conditioning window"));
    }
    let q = series.covariates();
    if q > 0 && origin + horizon > series.len() {
        return Err(Error::contract("future covariates are not available for the horizon"));
    }

    // initial chi per path
    let mut chi: Vec<Vec<T>> = match ens {
        None => vec![vec![T::zero(); f]; n_paths],
        Some(ens) => {
            let w = ens.weights();
            let mut cum = Vec::with_capacity(w.len());
            let mut acc = 0.0;
            for x in &w {
                acc += x;
                cum.push(acc);
            }
            (0..n_paths)
                .map(|_| {
                    let u = rng.gen::<f64>() * acc;
                    let j = cum.partition_point(|&c| c < u).min(w.len() - 1);
                    let part = &ens.particles[j];
                    let mut out = Vec::with_capacity(f);
                    for i in 0..p {
                        out.extend(sample_gaussian(
                            &part.mean[i * e..(i + 1) * e],
                            &part.cov[i * e * e..(i + 1) * e * e],
                            rng,
                        ));
                    }
                    out
                })
                .collect()
        }
    };

    // rolling y windows per path, B x P each
    let mut hist: Vec<Vec<T>> = vec![series.y.data()[(origin - b) * p..origin * p].to_vec(); n_paths];
    let mut values = vec![0.0; n_paths * horizon * p];
    let mut restarts = 0usize;
    let static_latent = ens.is_none() || model.kind == ModelKind::Staticonf;
    for h in 0..horizon {
        let row = origin + h;
        let mut win = Vec::with_capacity(n_paths * (b * p + (b + 1) * q));
        for hp in &hist {
            win.extend_from_slice(hp);
            if let Some(x) = &series.x {
                for k in row - b..=row {
                    win.extend_from_slice(x.row_slice(k));
                }
            }
        }
        let windows = Tensor::new(n_paths, b * p + (b + 1) * q, win);
        let Features { z, sigma } = model.features(&windows);
        for path in 0..n_paths {
            if !static_latent {
                let (next, pis) = model.dynamics.step(&chi[path], rng);
                restarts += pis.iter().filter(|&&c| !c).count();
                chi[path] = next;
            }
            let c = if static_latent {
                None
            } else {
                Some(chi[path].as_slice())
            };
            let mu = model.mean(z.row_slice(path), c);
            let sg = sigma.row_slice(path);
            let base = (path * horizon + h) * p;
            let mut y_new = Vec::with_capacity(p);
            for i in 0..p {
                let v = mu[i] + sg[i] * T::c(rng.sample(StandardNormal));
                values[base + i] = v.f64();
                y_new.push(v);
            }
            let hp = &mut hist[path];
            hp.drain(..p);
            hp.extend(y_new);
        }
    }
    let transitions = (n_paths * horizon * p) as f64;
    Ok(ForecastResult {
        origin,
        samples: SampleBlock::new(n_paths, horizon, p, values),
        restart_rate: if static_latent {
            0.0
        } else {
            restarts as f64 / transitions
        },
        degenerate: ens.is_some_and(|e| e.degenerate_resets > 0),
    })
}

/// Runs the filter over rows `from..to` of `series`, with `features`
/// holding rows starting at `feature_start`. Calls `observe` after each
/// step with the row index.
#[allow(clippy::too_many_arguments)]
pub fn filter_range<T: Scalar, R: Rng + ?Sized>(
    ens: &mut Ensemble<T>,
    series: &Series<T>,
    features: &Features<T>,
    feature_start: usize,
    from: usize,
    to: usize,
    model: &Model<T>,
    rng: &mut R,
    observe: &mut dyn FnMut(usize, &Ensemble<T>),
) -> Result<()> {
    for r in from..to {
        let k = r - feature_start;
        filter_step(
            ens,
            series.y.row_slice(r),
            features.z.row_slice(k),
            features.sigma.row_slice(k),
            model,
            rng,
        )?;
        observe(r, ens);
    }
    Ok(())
}

/// Filters up to `first_origin`, then repeatedly forecasts `horizon` rows,
/// reveals them and filters through them.
pub fn rolling_forecast<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    series: &Series<T>,
    first_origin: usize,
    config: &ForecastConfig,
    rng: &mut R,
) -> Result<Vec<ForecastResult>> {
    let b = model.window();
    let h = config.horizon;
    if h < 1 || config.n_windows < 1 {
        return Err(Error::contract("horizon and window count must be positive"));
    }
    if first_origin < b + 1 || first_origin + config.n_windows * h > series.len() {
        return Err(Error::contract(format!(
            "series of {} rows cannot hold {} windows of {h} from row {first_origin}",
            series.len(),
            config.n_windows
        )));
    }
    let last = first_origin + config.n_windows * h;
    let dynamic = model.kind == ModelKind::Dynaconf;
    let mut ens = if dynamic {
        Some(Ensemble::from_prior(model, config.particles)?)
    } else {
        None
    };
    let features = if dynamic {
        Some(model.features(&series.windows(b, last, b)))
    } else {
        None
    };
    let mut noop = |_: usize, _: &Ensemble<T>| {};
    let mut advance = |ens: &mut Option<Ensemble<T>>, from: usize, to: usize, rng: &mut R| -> Result<()> {
        if let (Some(e), Some(f)) = (ens.as_mut(), features.as_ref()) {
            filter_range(e, series, f, b, from, to, model, rng, &mut noop)?;
        }
        Ok(())
    };
    advance(&mut ens, b, first_origin, rng)?;
    let mut out = Vec::with_capacity(config.n_windows);
    for k in 0..config.n_windows {
        let origin = first_origin + k * h;
        out.push(forecast(ens.as_ref(), series, origin, h, config.n_paths, model, rng)?);
        advance(&mut ens, origin, origin + h, rng)?;
    }
    Ok(out)
}

/// Per-row mixture quantiles of every latent component from filtering the
/// whole series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub row: usize,
    pub component: usize,
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
}

pub fn latent_trace<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    series: &Series<T>,
    particles: usize,
    rng: &mut R,
) -> Result<Vec<TraceRow>> {
    let b = model.window();
    if series.len() <= b {
        return Err(Error::contract("series shorter than the conditioning window"));
    }
    let mut ens = Ensemble::from_prior(model, particles)?;
    let features = model.features(&series.windows(b, series.len(), b));
    let f = model.targets() * model.latent();
    let mut rows = Vec::new();
    let mut observe = |r: usize, e: &Ensemble<T>| {
        for c in 0..f {
            rows.push(TraceRow {
                row: r,
                component: c,
                median: e.quantile(c, 0.5),
                p05: e.quantile(c, 0.05),
                p95: e.quantile(c, 0.95),
            });
        }
    };
    filter_range(
        &mut ens,
        series,
        &features,
        b,
        b,
        series.len(),
        model,
        rng,
        &mut observe,
    )?;
    Ok(rows)
}
