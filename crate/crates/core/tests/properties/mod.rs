//! Property checks shared by the integration tests and the acceptance
//! binary. Each returns a one-line summary or a description of the
//! first violation.

#![allow(dead_code)]

use dynaconf::conditional::{ConditionalParams, EncoderConfig};
use dynaconf::dynamics::DynamicsParams;
use dynaconf::forecaster::{filter_step, rolling_forecast, Ensemble, ForecastConfig};
use dynaconf::metrics::crps_empirical;
use dynaconf::model::{Model, ModelConfig, ModelKind};
use dynaconf::posterior::{elbo, ElboData, PosteriorConfig, PosteriorKind, PosteriorParams};
use dynaconf::synthetic::{generate, spectral_radius, ProcessKind, SyntheticSpec};
use dynaconf::tensor::{backward, Parameters, Tape, Tensor, Var};
use dynaconf::trainer::{TrainConfig, TrainData, Trainer};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// autodiff

#[derive(Clone, Copy, Debug)]
enum Node {
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `a / (softplus(b) + 0.5)`
    Div(usize, usize),
    MatMul(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    /// `exp(a / 2)`
    Exp(usize),
    /// `ln(softplus(a) + 0.1)`
    Ln(usize),
    Square(usize),
    Transpose(usize),
    LogAddExp(usize, usize),
    /// `a ~ N(b, (softplus(c) + 0.3)^2)`
    LogPdf(usize, usize, usize),
    /// Rows of `a` and `b` swapped in and concatenated back to 3 x 3.
    Splice(usize, usize),
    /// Column sums of `a` added to every row of `b`.
    AddRow(usize, usize),
    /// Row 0 of `a` scales every row of `b`.
    MulRow(usize, usize),
    /// Row 0 of `a` scanned with gates `sigmoid(b[..2])` and drive `c[..2]`.
    Scan(usize, usize, usize),
    /// Column permutation and row gather.
    Gather(usize),
}

fn random_program(rng: &mut ChaCha8Rng, inputs: usize, steps: usize) -> Vec<Node> {
    let mut prog = Vec::with_capacity(steps);
    for k in 0..steps {
        let n = inputs + k;
        let mut pick = || rng.gen_range(0..n);
        let (a, b, c) = (pick(), pick(), pick());
        let node = match rng.gen_range(0..19) {
            0 => Node::Add(a, b),
            1 => Node::Sub(a, b),
            2 => Node::Mul(a, b),
            3 => Node::Div(a, b),
            4 => Node::MatMul(a, b),
            5 => Node::Tanh(a),
            6 => Node::Sigmoid(a),
            7 => Node::Softplus(a),
            8 => Node::Exp(a),
            9 => Node::Ln(a),
            10 => Node::Square(a),
            11 => Node::Transpose(a),
            12 => Node::LogAddExp(a, b),
            13 => Node::LogPdf(a, b, c),
            14 => Node::Splice(a, b),
            15 => Node::AddRow(a, b),
            16 => Node::MulRow(a, b),
            17 => Node::Scan(a, b, c),
            _ => Node::Gather(a),
        };
        prog.push(node);
    }
    prog
}

fn run_program<'t>(tape: &'t Tape<f64>, xs: &[Var<'t, f64>], prog: &[Node], weights: &Tensor<f64>) -> Var<'t, f64> {
    let mut vals: Vec<Var<'t, f64>> = xs.to_vec();
    for node in prog {
        let v = |i: usize| vals[i];
        let out = match *node {
            Node::Add(a, b) => v(a) + v(b),
            Node::Sub(a, b) => v(a) - v(b),
            Node::Mul(a, b) => v(a) * v(b),
            Node::Div(a, b) => v(a).div(v(b).softplus().add_scalar(0.5)),
            Node::MatMul(a, b) => v(a).matmul(v(b)).scale(0.3),
            Node::Tanh(a) => v(a).tanh(),
            Node::Sigmoid(a) => v(a).sigmoid(),
            Node::Softplus(a) => v(a).softplus(),
            Node::Exp(a) => v(a).tanh().scale(1.5).exp(),
            Node::Ln(a) => v(a).softplus().add_scalar(0.1).ln(),
            Node::Square(a) => v(a).tanh().square(),
            Node::Transpose(a) => v(a).transpose(),
            Node::LogAddExp(a, b) => v(a).log_add_exp(v(b)),
            Node::LogPdf(a, b, c) => v(a).gaussian_logpdf(v(b), v(c).softplus().add_scalar(0.3)).scale(0.2),
            Node::Splice(a, b) => tape.concat_rows(&[v(b).slice_rows(2, 1), v(a).slice_rows(0, 2)]),
            Node::AddRow(a, b) => v(b).add_row(v(a).sum_rows().scale(0.3)),
            Node::MulRow(a, b) => v(b).mul_row(v(a).slice_rows(0, 1).tanh()),
            Node::Scan(a, b, c) => v(a)
                .slice_rows(0, 1)
                .tanh()
                .gated_scan(v(b).slice_rows(0, 2).sigmoid(), v(c).slice_rows(0, 2).tanh()),
            Node::Gather(a) => {
                let g = v(a).gather_cols(&[2, 0, 1]).gather_rows(&[1, 1, 0]);
                let side = tape.concat_cols(&[g.slice_cols(0, 1), v(a).sum_cols().scale(0.2), g.slice_cols(2, 1)]);
                side
            }
        };
        vals.push(out);
    }
    // weighted sum of every intermediate keeps all nodes in the loss
    let mut loss: Option<Var<'t, f64>> = None;
    for v in &vals[xs.len()..] {
        let w = tape.constant(weights.clone());
        let term = (*v * w).sum();
        loss = Some(match loss {
            None => term,
            Some(acc) => acc + term,
        });
    }
    loss.expect("non-empty program")
}

/// Random graphs of every primitive against central differences
/// (`h = 1e-5`); relative error `< 1e-4`.
pub fn autodiff_matches_finite_differences(graphs: u64) -> Check {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..graphs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::uniform(3, 3, 2.0, &mut rng)).collect();
        let prog = random_program(&mut rng, inputs.len(), 8);
        let weights = Tensor::uniform(3, 3, 1.0, &mut rng);
        let eval = |xs: &[Tensor<f64>]| -> f64 {
            let tape = Tape::new();
            let vs: Vec<_> = xs.iter().map(|x| tape.param(x.clone())).collect();
            run_program(&tape, &vs, &prog, &weights).item()
        };
        let tape = Tape::new();
        let vs: Vec<_> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let loss = run_program(&tape, &vs, &prog, &weights);
        let grads = backward(&tape, loss).map_err(|e| format!("graph {seed}: {e}"))?;
        for (i, v) in vs.iter().enumerate() {
            let g = grads.wrt(v);
            for k in 0..9 {
                let mut up = inputs.clone();
                let mut dn = inputs.clone();
                up[i].data_mut()[k] += h;
                dn[i].data_mut()[k] -= h;
                let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
                let ad = g.data()[k];
                let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-3);
                worst = worst.max(rel);
                ensure(rel < 1e-4, || {
                    format!("graph {seed} input {i} entry {k}: autodiff {ad} vs fd {fd} ({prog:?})")
                })?;
            }
        }
    }
    Ok(format!("{graphs} graphs, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// ELBO

/// One-dimensional toy: `P = E = 1`, `T' = 3`.
pub struct Toy {
    pub model: Model<f64>,
    pub windows: Tensor<f64>,
    pub targets: Tensor<f64>,
}

pub fn elbo_toy() -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = EncoderConfig {
        hidden: 2,
        latent: 1,
        ..EncoderConfig::default()
    };
    let mut cond = ConditionalParams::init(&config, &mut rng).unwrap();
    cond.b_mu = Tensor::scalar(0.2);
    cond.b_sigma = Tensor::scalar(0.4);
    let model = Model {
        kind: ModelKind::Dynaconf,
        cond,
        dynamics: DynamicsParams::from_values(1, 1, true, &[0.8], &[1.5], &[0.2], &[0.6]),
    };
    Toy {
        model,
        windows: Tensor::from_f64(3, 1, &[0.7, -1.1, 1.6]),
        targets: Tensor::from_f64(3, 1, &[0.9, -0.4, 1.3]),
    }
}

/// Exact `log p(y)` of the toy: the latent path is Gaussian given the
/// restart pattern, so the marginal is a mixture over the `2^3` patterns.
pub fn toy_log_marginal(toy: &Toy) -> f64 {
    let f = toy.model.features(&toy.windows);
    let d = &toy.model.dynamics;
    let (lam, v0, vd) = (d.lambda(0), d.var0()[0], d.vard()[0]);
    let b_phi = d.b_phi.data()[0];
    let b_mu = toy.model.cond.b_mu.data()[0];
    let n = 3;
    let mut terms = Vec::new();
    for pattern in 0..(1 << n) {
        // cov of chi_1..chi_n given chi_0 ~ N(0, v0)
        let mut cov = DMatrix::<f64>::zeros(n + 1, n + 1);
        cov[(0, 0)] = v0;
        let mut log_prior = 0.0;
        for t in 1..=n {
            let walk = pattern & (1 << (t - 1)) != 0;
            if walk {
                log_prior += lam.ln();
                for s in 0..t {
                    cov[(t, s)] = cov[(t - 1, s)];
                    cov[(s, t)] = cov[(t - 1, s)];
                }
                cov[(t, t)] = cov[(t - 1, t - 1)] + vd;
            } else {
                log_prior += (1.0 - lam).ln();
                cov[(t, t)] = v0;
            }
        }
        let k = cov.view((1, 1), (n, n)).into_owned();
        let z = DVector::from_fn(n, |t, _| f.z.get(t, 0));
        let zk = DMatrix::from_diagonal(&z);
        let noise = DMatrix::from_diagonal(&DVector::from_fn(n, |t, _| f.sigma.get(t, 0).powi(2)));
        let s = &zk * k * zk.transpose() + noise;
        let mean = DVector::from_fn(n, |t, _| f.z.get(t, 0) * b_phi + b_mu);
        let r = DVector::from_fn(n, |t, _| toy.targets.get(t, 0)) - mean;
        let chol = s.clone().cholesky().expect("covariance is positive definite");
        let quad = r.dot(&chol.solve(&r));
        let logdet = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let ll = -0.5 * (quad + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln());
        terms.push(log_prior + ll);
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

pub fn toy_elbo(toy: &Toy, post: &PosteriorParams<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let tape = Tape::new();
    let cond = toy.model.cond.bind_const(&tape);
    let (dynamics, _) = toy.model.dynamics.bind(&tape, &|_| false);
    let (q, _) = post.bind(&tape, &|_| false);
    let data = ElboData {
        windows: &toy.windows,
        targets: &toy.targets,
    };
    elbo(&cond, &dynamics, &q, &data, &[0, 1, 2], 1, None, rng)
        .unwrap()
        .item()
}

/// The ELBO averaged over many draws stays below the exact marginal
/// likelihood (3 sigma) and is strictly below it for a mismatched `q`.
pub fn elbo_below_log_marginal() -> Check {
    let toy = elbo_toy();
    let exact = toy_log_marginal(&toy);
    let mut out = Vec::new();
    for kind in [PosteriorKind::Ar, PosteriorKind::Iaf] {
        let config = PosteriorConfig {
            kind,
            iaf_hidden: 16,
            iaf_embedding: 4,
            ..PosteriorConfig::default()
        };
        let post = PosteriorParams::init(&config, 3, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 4000;
        let vals: Vec<f64> = (0..n).map(|_| toy_elbo(&toy, &post, &mut rng)).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let se = sd / (n as f64).sqrt();
        ensure(mean <= exact + 3.0 * se, || {
            format!("{kind:?}: ELBO {mean} exceeds log p(y) {exact} by more than 3 se ({se})")
        })?;
        ensure(exact - mean > 3.0 * se, || {
            format!("{kind:?}: no gap between ELBO {mean} and log p(y) {exact}")
        })?;
        out.push(format!("{kind:?} {mean:.4}"));
    }
    Ok(format!("log p(y) {exact:.4} >= ELBO ({})", out.join(", ")))
}

/// Gradient of the estimator with respect to every variational parameter
/// against central differences under common random numbers.
pub fn elbo_gradient_matches_finite_differences() -> Check {
    let toy = elbo_toy();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for kind in [PosteriorKind::Ar, PosteriorKind::Iaf] {
        let config = PosteriorConfig {
            kind,
            iaf_hidden: 8,
            iaf_embedding: 3,
            ..PosteriorConfig::default()
        };
        let mut post = PosteriorParams::init(&config, 3, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        // move away from the symmetric initialization
        let mut prng = ChaCha8Rng::seed_from_u64(4);
        post.visit_mut(&mut |_, t| {
            for v in t.data_mut() {
                *v += prng.gen_range(-0.3..0.3);
            }
        });
        let at = |p: &PosteriorParams<f64>| toy_elbo(&toy, p, &mut ChaCha8Rng::seed_from_u64(9));
        let tape = Tape::new();
        let cond = toy.model.cond.bind_const(&tape);
        let (dynamics, _) = toy.model.dynamics.bind(&tape, &|_| false);
        let (q, vars) = post.bind(&tape, &|_| true);
        let data = ElboData {
            windows: &toy.windows,
            targets: &toy.targets,
        };
        let e = elbo(
            &cond,
            &dynamics,
            &q,
            &data,
            &[0, 1, 2],
            1,
            None,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let grads = backward(&tape, e).map_err(|e| e.to_string())?;
        let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.wrt(v)).collect();
        let mut names = Vec::new();
        post.visit(&mut |n, _| names.push(n.to_string()));
        for (pi, name) in names.iter().enumerate() {
            let len = analytic[pi].len();
            for k in 0..len {
                let shifted = |delta: f64| {
                    let mut p = post.clone();
                    let mut idx = 0;
                    p.visit_mut(&mut |_, t| {
                        if idx == pi {
                            t.data_mut()[k] += delta;
                        }
                        idx += 1;
                    });
                    at(&p)
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let ad = analytic[pi].data()[k];
                let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-2);
                worst = worst.max(rel);
                ensure(rel < 1e-3, || format!("{kind:?} {name}[{k}]: autodiff {ad} vs fd {fd}"))?;
            }
        }
    }
    Ok(format!("AR and IAF, worst relative error {worst:.2e}"))
}

/// `log |det J|` of the flow on `T' = 3` against a numerical Jacobian.
pub fn iaf_log_jacobian() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let config = PosteriorConfig {
            kind: PosteriorKind::Iaf,
            iaf_layers: 3,
            iaf_hidden: 16,
            iaf_embedding: 4,
            iaf_sigma_init: 0.8,
            ..PosteriorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flow = dynaconf::posterior::IafPosterior::<f64>::init(&config, 3, 1, &mut rng).unwrap();
        flow.visit_mut(&mut |_, t| {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.4..0.4);
            }
        });
        flow.validate_masks().map_err(|e| e.to_string())?;
        let run = |z0: &Tensor<f64>| {
            let tape = Tape::new();
            let (b, _) = flow.bind(&tape, &|_| false);
            let (z, ls) = b.transform(tape.constant(z0.clone()));
            ((*z.value()).clone(), ls.value().sum())
        };
        let z0 = Tensor::standard_normal(1, 3, &mut rng);
        let (_, log_det) = run(&z0);
        let h = 1e-6;
        let mut jac = DMatrix::<f64>::zeros(3, 3);
        for j in 0..3 {
            let mut up = z0.clone();
            let mut dn = z0.clone();
            up.set(0, j, up.get(0, j) + h);
            dn.set(0, j, dn.get(0, j) - h);
            let (a, _) = run(&up);
            let (b, _) = run(&dn);
            for i in 0..3 {
                jac[(i, j)] = (a.get(0, i) - b.get(0, i)) / (2.0 * h);
            }
        }
        let numeric = jac.determinant().abs().ln();
        let err = (numeric - log_det).abs();
        worst = worst.max(err);
        ensure(err < 1e-6, || {
            format!("seed {seed}: numeric {numeric} vs flow {log_det}")
        })?;
    }
    Ok(format!("5 flows, worst error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// filtering

fn filter_model(e: usize, lambda: f64, var0: f64, vard: f64, b_phi: &[f64], b_mu: f64) -> Model<f64> {
    let config = EncoderConfig {
        hidden: e + 1,
        latent: e,
        ..EncoderConfig::default()
    };
    let mut cond = ConditionalParams::init(&config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    cond.b_mu = Tensor::scalar(b_mu);
    Model {
        kind: ModelKind::Dynaconf,
        cond,
        dynamics: DynamicsParams::from_values(1, e, true, &[lambda], &vec![var0; e], &vec![vard; e], b_phi),
    }
}

/// `lambda = 1`, `Sigma_d = 0`, `E = 1`: conjugate Bayesian linear
/// regression of `y - z b_phi - b_mu` on `z`, 200 steps, `1e-8`.
pub fn rbpf_conjugate_regression() -> Check {
    let (v0, b_phi, b_mu) = (2.0, 0.4, -0.3);
    let m = filter_model(1, 1.0, v0, 0.0, &[b_phi], b_mu);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ens = Ensemble::from_prior(&m, 7).unwrap();
    let (mut prec, mut xty) = (1.0 / v0, 0.0);
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let z: f64 = rng.gen_range(-1.5..1.5);
        let s: f64 = rng.gen_range(0.3..1.2);
        let y = (b_phi + 0.9) * z + b_mu + s * rng.gen_range(-1.0..1.0);
        filter_step(&mut ens, &[y], &[z], &[s], &m, &mut rng).map_err(|e| e.to_string())?;
        prec += z * z / (s * s);
        xty += z * (y - z * b_phi - b_mu) / (s * s);
        let (var, mean) = (1.0 / prec, xty / prec);
        for p in &ens.particles {
            let em = (p.mean[0] - mean).abs() / mean.abs().max(1.0);
            let ev = (p.cov[0] - var).abs() / var;
            worst = worst.max(em).max(ev);
            ensure(em < 1e-8 && ev < 1e-8, || {
                format!(
                    "step {k}: filter ({}, {}) vs conjugate ({mean}, {var})",
                    p.mean[0], p.cov[0]
                )
            })?;
        }
    }
    Ok(format!("200 steps, worst relative error {worst:.1e}"))
}

struct Kalman {
    m: DVector<f64>,
    p: DMatrix<f64>,
}

impl Kalman {
    fn step(&mut self, q: f64, z: &DVector<f64>, obs: f64, r: f64) {
        let p_pred = &self.p + DMatrix::identity(z.len(), z.len()) * q;
        let s = (z.transpose() * &p_pred * z)[(0, 0)] + r;
        let k = &p_pred * z / s;
        let innov = obs - z.dot(&self.m);
        self.m = &self.m + &k * innov;
        self.p = (DMatrix::identity(z.len(), z.len()) - &k * z.transpose()) * p_pred;
    }
}

/// `lambda = 1`, `Sigma_d > 0`, `E = 2`, one particle: the textbook
/// Kalman filter step for step.
pub fn rbpf_single_particle_kalman() -> Check {
    let (v0, vd) = (1.3, 0.05);
    let b_phi = [0.2, -0.5];
    let b_mu = 0.1;
    let m = filter_model(2, 1.0, v0, vd, &b_phi, b_mu);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut ens = Ensemble::from_prior(&m, 1).unwrap();
    let mut kf = Kalman {
        m: DVector::zeros(2),
        p: DMatrix::identity(2, 2) * v0,
    };
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let z = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let s: f64 = rng.gen_range(0.3..1.0);
        let y: f64 = rng.gen_range(-2.0..2.0);
        filter_step(&mut ens, &[y], &z, &[s], &m, &mut rng).map_err(|e| e.to_string())?;
        let zv = DVector::from_row_slice(&z);
        let obs = y - z[0] * b_phi[0] - z[1] * b_phi[1] - b_mu;
        kf.step(vd, &zv, obs, s * s);
        let p = &ens.particles[0];
        for i in 0..2 {
            worst = worst.max((p.mean[i] - kf.m[i]).abs());
            for j in 0..2 {
                worst = worst.max((p.cov[i * 2 + j] - kf.p[(i, j)]).abs());
            }
        }
        ensure(worst < 1e-9, || {
            format!("step {k}: filter diverges from Kalman by {worst}")
        })?;
    }
    Ok(format!("200 steps, max abs difference {worst:.1e}"))
}

/// With 1000 particles the weighted posterior mean is within 2% of the
/// Kalman mean, and weights stay normalized with `1 <= ESS <= N`.
pub fn rbpf_many_particles() -> Check {
    let (v0, vd) = (1.0, 0.02);
    let m = filter_model(1, 1.0, v0, vd, &[0.0], 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut ens = Ensemble::from_prior(&m, 1000).unwrap();
    let mut kf = Kalman {
        m: DVector::zeros(1),
        p: DMatrix::identity(1, 1) * v0,
    };
    for _ in 0..100 {
        let z: f64 = rng.gen_range(0.5..1.5);
        let y = 0.7 * z + 0.5 * rng.gen_range(-1.0..1.0);
        filter_step(&mut ens, &[y], &[z], &[0.5], &m, &mut rng).map_err(|e| e.to_string())?;
        kf.step(vd, &DVector::from_element(1, z), y, 0.25);
    }
    let est = ens.mean()[0];
    let rel = (est - kf.m[0]).abs() / kf.m[0].abs();
    ensure(rel < 0.02, || format!("ensemble mean {est} vs Kalman {}", kf.m[0]))?;

    // switching case: invariants only
    let m = filter_model(1, 0.7, 1.0, 0.1, &[0.3], 0.0);
    let mut ens = Ensemble::from_prior(&m, 200).unwrap();
    for k in 0..300 {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let y: f64 = rng.gen_range(-3.0..3.0);
        filter_step(&mut ens, &[y], &[z], &[0.4], &m, &mut rng).map_err(|e| e.to_string())?;
        let w = ens.weights();
        let sum: f64 = w.iter().sum();
        let ess = ens.ess();
        ensure((sum - 1.0).abs() < 1e-12, || format!("step {k}: weights sum to {sum}"))?;
        ensure((1.0 - 1e-9..=200.0 + 1e-9).contains(&ess), || {
            format!("step {k}: ESS {ess}")
        })?;
    }
    Ok(format!(
        "N=1000 mean {est:.5} vs Kalman {:.5} ({:.2}%)",
        kf.m[0],
        rel * 100.0
    ))
}

// ---------------------------------------------------------------------------
// CRPS

/// `int (F(z) - 1{y <= z})^2 dz` for the empirical CDF, exact between
/// breakpoints.
pub fn crps_integral(samples: &[f64], y: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut pts = s.clone();
    pts.push(y);
    pts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let f = s.partition_point(|&x| x <= mid) as f64 / n;
        let ind = if y <= mid { 1.0 } else { 0.0 };
        total += (f - ind).powi(2) * (w[1] - w[0]);
    }
    total
}

pub fn gaussian_crps(mu: f64, sigma: f64, y: f64) -> f64 {
    let z = (y - mu) / sigma;
    let cdf = std_normal_cdf(z);
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::f64::consts::PI.sqrt())
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Bisection on the CDF; plenty for test sampling.
fn std_normal_quantile(u: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if std_normal_cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn crps_forms_agree() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let n = rng.gen_range(2..60);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y = rng.gen_range(-4.0..4.0);
        let a = crps_empirical(&s, y).map_err(|e| e.to_string())?;
        let b = crps_integral(&s, y);
        worst = worst.max((a - b).abs());
        ensure((a - b).abs() < 1e-10, || {
            format!("case {k}: energy {a} vs integral {b}")
        })?;
    }
    let mut worst_rel: f64 = 0.0;
    for &(mu, sigma, y) in &[(0.0, 1.0, 0.0), (1.0, 2.0, -0.5), (-2.0, 0.5, -1.0), (0.3, 1.5, 3.0)] {
        // one uniform draw per equal-probability stratum
        let n = 20_000;
        let s: Vec<f64> = (0..n)
            .map(|i| mu + sigma * std_normal_quantile((i as f64 + rng.gen::<f64>()) / n as f64))
            .collect();
        let a = crps_empirical(&s, y).map_err(|e| e.to_string())?;
        let b = gaussian_crps(mu, sigma, y);
        let rel = (a - b).abs() / b;
        worst_rel = worst_rel.max(rel);
        ensure(rel < 0.01, || {
            format!("N({mu}, {sigma}^2) at {y}: sample {a} vs analytic {b}")
        })?;
    }
    Ok(format!(
        "energy vs integral {worst:.1e}, vs Gaussian {:.2}%",
        worst_rel * 100.0
    ))
}

// ---------------------------------------------------------------------------
// generator

/// Every regime matrix of 20 seeds has spectral radius below one, by the
/// eigenvalue routine and by a Gelfand-formula estimate.
pub fn var_generator_is_stable() -> Check {
    let mut count = 0;
    let mut largest: f64 = 0.0;
    for seed in 0..20 {
        let g = generate(
            &SyntheticSpec::new(ProcessKind::Var1Dynamic),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .map_err(|e| e.to_string())?;
        for (r, w) in g.coefficients.iter().enumerate().step_by(g.spec.regime()) {
            let rho = spectral_radius(w);
            // ||W^(2^k)||^(1/2^k) with renormalization
            let mut m = DMatrix::from_row_slice(w.rows(), w.cols(), w.data());
            let mut log_scale = 0.0;
            let k = 12;
            for _ in 0..k {
                m = &m * &m;
                log_scale *= 2.0;
                let nrm = m.norm();
                if nrm > 0.0 {
                    log_scale += nrm.ln();
                    m /= nrm;
                }
            }
            let gelfand = (log_scale / f64::powi(2.0, k)).exp();
            largest = largest.max(rho);
            ensure(rho < 1.0, || format!("seed {seed} row {r}: spectral radius {rho}"))?;
            ensure(gelfand < 1.0 + 1e-2 && (gelfand - rho).abs() < 1e-2, || {
                format!("seed {seed} row {r}: eigenvalues give {rho}, Gelfand {gelfand}")
            })?;
            count += 1;
        }
    }
    Ok(format!("{count} matrices, largest radius {largest:.4}"))
}

// ---------------------------------------------------------------------------
// determinism

/// Static checkpoint, dynamic checkpoint and forecast samples.
type RunBytes = (Vec<u8>, Vec<u8>, Vec<f64>);

/// Training both stages and forecasting twice from the same seed gives
/// bit-identical checkpoints and sample paths.
pub fn runs_are_bit_identical() -> Check {
    let spec = SyntheticSpec {
        length: 300,
        ..SyntheticSpec::new(ProcessKind::Ar1Dynamic)
    };
    let once = || -> Result<RunBytes, String> {
        let g = generate(&spec, &mut ChaCha8Rng::seed_from_u64(3)).map_err(|e| e.to_string())?;
        let tc = TrainConfig {
            epochs: 3,
            dynamic_epochs: 3,
            updates_per_epoch: 5,
            validation_paths: 10,
            seed: 3,
            ..TrainConfig::default()
        };
        let data = TrainData {
            series: &g.series,
            train_end: 150,
            val_end: Some(200),
        };
        let mc = ModelConfig::default();
        let stat = Trainer::<f64>::staticonf(&mc, &tc)
            .and_then(|t| t.fit(&data))
            .map_err(|e| e.to_string())?;
        let dynamic = Trainer::<f64>::dynaconf(&stat, &tc, 149)
            .and_then(|t| t.fit(&TrainData { val_end: None, ..data }))
            .map_err(|e| e.to_string())?;
        let fc = ForecastConfig {
            horizon: 5,
            n_windows: 4,
            n_paths: 50,
            particles: 20,
        };
        let model = dynamic.model::<f64>().map_err(|e| e.to_string())?;
        let out = rolling_forecast(&model, &g.series, 200, &fc, &mut ChaCha8Rng::seed_from_u64(4))
            .map_err(|e| e.to_string())?;
        let paths = out.into_iter().flat_map(|r| r.samples.values).collect();
        Ok((stat.to_bytes(), dynamic.to_bytes(), paths))
    };
    let a = once()?;
    let b = once()?;
    ensure(a.0 == b.0, || "StatiConF checkpoints differ".into())?;
    ensure(a.1 == b.1, || "DynaConF checkpoints differ".into())?;
    ensure(
        a.2.len() == b.2.len() && a.2.iter().zip(&b.2).all(|(x, y)| x.to_bits() == y.to_bits()),
        || "forecast paths differ".into(),
    )?;
    Ok(format!(
        "checkpoints of {} and {} bytes and {} samples identical",
        a.0.len(),
        a.1.len(),
        a.2.len()
    ))
}
