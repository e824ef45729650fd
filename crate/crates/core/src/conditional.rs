//! Time-invariant conditional distribution `p(y_t | window, phi_t)`.
//!
//! An encoder summarizes the conditioning window into `h_t` (width `D`),
//! which is projected to one latent vector `z_{t,i}` of width `E` per
//! output dimension. Each output dimension is Gaussian with mean
//! `phi_{t,i} . z_{t,i} + b_mu_i` and scale
//! `softplus(w_sigma_i . z_{t,i} + b_sigma_i)`.
//!
//! Batched values use a flat latent layout: column `i * E + e` holds
//! component `e` of output dimension `i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};
use crate::tensor::{bind_params, Parameters, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderVariant {
    /// One linear map of the flattened window followed by `tanh`.
    Pointwise,
    /// Stack of `tanh` layers.
    Mlp,
    /// LSTM unrolled over the window, restarted from zero for every `t`.
    Recurrent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    /// Number of past observations `B` in the conditioning window.
    pub window: usize,
    /// Target dimensions `P`.
    pub targets: usize,
    /// Covariate dimensions `Q`.
    pub covariates: usize,
    /// Encoder output width `D`.
    pub hidden: usize,
    /// Latent width `E` per output dimension.
    pub latent: usize,
    pub mlp_layers: usize,
    pub recurrent_layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variant: EncoderVariant::Pointwise,
            window: 1,
            targets: 1,
            covariates: 0,
            hidden: 16,
            latent: 4,
            mlp_layers: 2,
            recurrent_layers: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.targets == 0 || self.hidden == 0 || self.latent == 0 {
            return Err(Error::Config(
                "window, targets, hidden and latent must be positive".into(),
            ));
        }
        if self.latent >= self.hidden {
            return Err(Error::Config(format!(
                "latent width E={} must be smaller than encoder width D={}",
                self.latent, self.hidden
            )));
        }
        match self.variant {
            EncoderVariant::Mlp if self.mlp_layers == 0 => Err(Error::Config("mlp needs >= 1 layer".into())),
            EncoderVariant::Recurrent if self.recurrent_layers == 0 => {
                Err(Error::Config("recurrent encoder needs >= 1 layer".into()))
            }
            _ => Ok(()),
        }
    }

    /// Width of a flattened window row: `B*P` targets then `(B+1)*Q` covariates.
    pub fn window_width(&self) -> usize {
        self.window * self.targets + (self.window + 1) * self.covariates
    }

    /// `F = P * E`
    pub fn latent_total(&self) -> usize {
        self.targets * self.latent
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights<T> {
    /// `input x 4D`, gate blocks ordered input, forget, candidate, output.
    pub w_x: Tensor<T>,
    pub w_h: Tensor<T>,
    pub b: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderWeights<T> {
    Pointwise { w: Tensor<T>, b: Tensor<T> },
    Mlp { layers: Vec<(Tensor<T>, Tensor<T>)> },
    Recurrent { layers: Vec<LstmWeights<T>> },
}

/// Static parameters of the conditional model (everything except the
/// time-varying mean weights).
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalParams<T> {
    pub config: EncoderConfig,
    pub encoder: EncoderWeights<T>,
    /// `D x F`; columns `i*E..(i+1)*E` hold the transposed `W_z[i]`.
    pub w_z: Tensor<T>,
    /// `1 x F`
    pub b_z: Tensor<T>,
    /// `1 x F`; the `E` entries of group `i` are `w_sigma_i`.
    pub w_sigma: Tensor<T>,
    /// `1 x P`
    pub b_sigma: Tensor<T>,
    /// `1 x P`
    pub b_mu: Tensor<T>,
}

/// Gaussian emission parameters for one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Emission<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
}

fn linear_init<T: Scalar, R: Rng + ?Sized>(fan_in: usize, rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    Tensor::uniform(rows, cols, 1.0 / (fan_in as f64).sqrt(), rng)
}

impl<T: Scalar> ConditionalParams<T> {
    /// Random initialization, uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let e = config.latent;
        let p = config.targets;
        let f = config.latent_total();
        let encoder = match config.variant {
            EncoderVariant::Pointwise => {
                let n_in = config.window_width();
                EncoderWeights::Pointwise {
                    w: linear_init(n_in, n_in, d, rng),
                    b: linear_init(n_in, 1, d, rng),
                }
            }
            EncoderVariant::Mlp => {
                let mut layers = Vec::new();
                let mut n_in = config.window_width();
                for _ in 0..config.mlp_layers {
                    layers.push((linear_init(n_in, n_in, d, rng), linear_init(n_in, 1, d, rng)));
                    n_in = d;
                }
                EncoderWeights::Mlp { layers }
            }
            EncoderVariant::Recurrent => {
                let mut layers = Vec::new();
                let mut n_in = config.targets + config.covariates;
                for _ in 0..config.recurrent_layers {
                    let mut b = linear_init::<T, _>(d, 1, 4 * d, rng);
                    for j in d..2 * d {
                        b.set(0, j, T::one());
                    }
                    layers.push(LstmWeights {
                        w_x: linear_init(d, n_in, 4 * d, rng),
                        w_h: linear_init(d, d, 4 * d, rng),
                        b,
                    });
                    n_in = d;
                }
                EncoderWeights::Recurrent { layers }
            }
        };
        Ok(ConditionalParams {
            config: config.clone(),
            encoder,
            w_z: linear_init(d, d, f, rng),
            b_z: linear_init(d, 1, f, rng),
            w_sigma: linear_init(e, 1, f, rng),
            b_sigma: linear_init(e, 1, p, rng),
            b_mu: linear_init(e, 1, p, rng),
        })
    }

    pub fn bind<'t>(
        &self,
        tape: &'t Tape<T>,
        trainable: &dyn Fn(&str) -> bool,
    ) -> (BoundConditional<'t, T>, Vec<Var<'t, T>>) {
        let vars = bind_params(self, tape, trainable);
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("parameter order");
        let encoder = match &self.encoder {
            EncoderWeights::Pointwise { .. } => BoundEncoder::Pointwise { w: next(), b: next() },
            EncoderWeights::Mlp { layers } => BoundEncoder::Mlp {
                layers: layers.iter().map(|_| (next(), next())).collect(),
            },
            EncoderWeights::Recurrent { layers } => BoundEncoder::Recurrent {
                layers: layers.iter().map(|_| [next(), next(), next()]).collect(),
            },
        };
        let bound = BoundConditional {
            config: self.config.clone(),
            tape,
            encoder,
            w_z: next(),
            b_z: next(),
            w_sigma: next(),
            b_sigma: next(),
            b_mu: next(),
            groups: tape.constant(group_matrix(self.config.targets, self.config.latent)),
        };
        (bound, vars)
    }

    /// All parameters as constants.
    pub fn bind_const<'t>(&self, tape: &'t Tape<T>) -> BoundConditional<'t, T> {
        self.bind(tape, &|_| false).0
    }

    /// `h_t` for one window; `y_window` is `B x P`, `x_window` is `(B+1) x Q`.
    pub fn encode(&self, y_window: &Tensor<T>, x_window: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let c = &self.config;
        if y_window.shape() != [c.window, c.targets] {
            return Err(Error::contract(format!(
                "y window has shape {:?}, expected [{}, {}]",
                y_window.shape(),
                c.window,
                c.targets
            )));
        }
        let mut row = y_window.data().to_vec();
        match (x_window, c.covariates) {
            (None, 0) => {}
            (Some(x), q) if x.shape() == [c.window + 1, q] => row.extend_from_slice(x.data()),
            _ => return Err(Error::contract("covariate window does not match config")),
        }
        let tape = Tape::new();
        let bound = self.bind_const(&tape);
        let h = bound.encode(&Tensor::row(row));
        Ok((*h.value()).clone())
    }

    /// `z_t` as a `P x E` matrix.
    pub fn project_latents(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        if h.shape() != [1, self.w_z.rows()] {
            return Err(Error::contract("h has wrong width"));
        }
        if !h.is_finite() {
            return Err(Error::contract("h must be finite"));
        }
        let tape = Tape::new();
        let bound = self.bind_const(&tape);
        let z = bound.project(tape.constant(h.clone()));
        let p = self.config.targets;
        let e = self.config.latent;
        Ok(Tensor::new(p, e, z.value().data().to_vec()))
    }

    /// Emission from `z_t` and `phi_t` (both `P x E`).
    pub fn emit(&self, z: &Tensor<T>, phi: &Tensor<T>) -> Result<Emission<T>> {
        let shape = [self.config.targets, self.config.latent];
        if z.shape() != shape || phi.shape() != shape {
            return Err(Error::contract("z and phi must be P x E"));
        }
        let tape = Tape::new();
        let bound = self.bind_const(&tape);
        let f = self.config.latent_total();
        let zv = tape.constant(Tensor::new(1, f, z.data().to_vec()));
        let pv = tape.constant(Tensor::new(1, f, phi.data().to_vec()));
        let (mu, sigma) = bound.emit(zv, pv);
        let sigma = sigma.value().data().to_vec();
        assert!(sigma.iter().all(|&s| s > T::zero()), "emission scale must be positive");
        Ok(Emission {
            mu: mu.value().data().to_vec(),
            sigma,
        })
    }
}

impl<T: Scalar> Parameters<T> for ConditionalParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        match &self.encoder {
            EncoderWeights::Pointwise { w, b } => {
                f("encoder.w", w);
                f("encoder.b", b);
            }
            EncoderWeights::Mlp { layers } => {
                for (k, (w, b)) in layers.iter().enumerate() {
                    f(&format!("encoder.l{k}.w"), w);
                    f(&format!("encoder.l{k}.b"), b);
                }
            }
            EncoderWeights::Recurrent { layers } => {
                for (k, l) in layers.iter().enumerate() {
                    f(&format!("encoder.lstm{k}.w_x"), &l.w_x);
                    f(&format!("encoder.lstm{k}.w_h"), &l.w_h);
                    f(&format!("encoder.lstm{k}.b"), &l.b);
                }
            }
        }
        f("w_z", &self.w_z);
        f("b_z", &self.b_z);
        f("w_sigma", &self.w_sigma);
        f("b_sigma", &self.b_sigma);
        f("b_mu", &self.b_mu);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        match &mut self.encoder {
            EncoderWeights::Pointwise { w, b } => {
                f("encoder.w", w);
                f("encoder.b", b);
            }
            EncoderWeights::Mlp { layers } => {
                for (k, (w, b)) in layers.iter_mut().enumerate() {
                    f(&format!("encoder.l{k}.w"), w);
                    f(&format!("encoder.l{k}.b"), b);
                }
            }
            EncoderWeights::Recurrent { layers } => {
                for (k, l) in layers.iter_mut().enumerate() {
                    f(&format!("encoder.lstm{k}.w_x"), &mut l.w_x);
                    f(&format!("encoder.lstm{k}.w_h"), &mut l.w_h);
                    f(&format!("encoder.lstm{k}.b"), &mut l.b);
                }
            }
        }
        f("w_z", &mut self.w_z);
        f("b_z", &mut self.b_z);
        f("w_sigma", &mut self.w_sigma);
        f("b_sigma", &mut self.b_sigma);
        f("b_mu", &mut self.b_mu);
    }
}

/// `F x P` indicator summing each group of `E` latent columns.
pub fn group_matrix<T: Scalar>(p: usize, e: usize) -> Tensor<T> {
    let mut g = Tensor::zeros(p * e, p);
    for i in 0..p {
        for k in 0..e {
            g.set(i * e + k, i, T::one());
        }
    }
    g
}

pub enum BoundEncoder<'t, T> {
    Pointwise { w: Var<'t, T>, b: Var<'t, T> },
    Mlp { layers: Vec<(Var<'t, T>, Var<'t, T>)> },
    Recurrent { layers: Vec<[Var<'t, T>; 3]> },
}

/// Conditional parameters placed on a tape.
pub struct BoundConditional<'t, T> {
    pub config: EncoderConfig,
    tape: &'t Tape<T>,
    pub encoder: BoundEncoder<'t, T>,
    pub w_z: Var<'t, T>,
    pub b_z: Var<'t, T>,
    pub w_sigma: Var<'t, T>,
    pub b_sigma: Var<'t, T>,
    pub b_mu: Var<'t, T>,
    groups: Var<'t, T>,
}

impl<'t, T: Scalar> BoundConditional<'t, T> {
    /// Encodes a batch of flattened windows (`N x window_width`) to `N x D`.
    pub fn encode(&self, windows: &Tensor<T>) -> Var<'t, T> {
        let c = &self.config;
        assert_eq!(windows.cols(), c.window_width(), "window width");
        match &self.encoder {
            BoundEncoder::Pointwise { w, b } => self.tape.constant(windows.clone()).matmul(*w).add_row(*b).tanh(),
            BoundEncoder::Mlp { layers } => {
                let mut h = self.tape.constant(windows.clone());
                for (w, b) in layers {
                    h = h.matmul(*w).add_row(*b).tanh();
                }
                h
            }
            BoundEncoder::Recurrent { layers } => {
                let steps = lstm_inputs(c, windows);
                let d = c.hidden;
                let n = windows.rows();
                let mut seq: Vec<Var<'t, T>> = steps.into_iter().map(|s| self.tape.constant(s)).collect();
                for [w_x, w_h, b] in layers {
                    let mut h = self.tape.constant(Tensor::zeros(n, d));
                    let mut cell = self.tape.constant(Tensor::zeros(n, d));
                    let mut outs = Vec::with_capacity(seq.len());
                    for x in &seq {
                        let gates = x.matmul(*w_x) + h.matmul(*w_h);
                        let gates = gates.add_row(*b);
                        let i = gates.slice_cols(0, d).sigmoid();
                        let f = gates.slice_cols(d, d).sigmoid();
                        let g = gates.slice_cols(2 * d, d).tanh();
                        let o = gates.slice_cols(3 * d, d).sigmoid();
                        cell = f * cell + i * g;
                        h = o * cell.tanh();
                        outs.push(h);
                    }
                    seq = outs;
                }
                *seq.last().expect("window has at least one step")
            }
        }
    }

    /// `z = tanh(h W_z + b_z)`, `N x F`.
    pub fn project(&self, h: Var<'t, T>) -> Var<'t, T> {
        h.matmul(self.w_z).add_row(self.b_z).tanh()
    }

    /// Mean and scale (`N x P` each) from latents and per-row `phi` (`N x F`).
    pub fn emit(&self, z: Var<'t, T>, phi: Var<'t, T>) -> (Var<'t, T>, Var<'t, T>) {
        let mu = (phi * z).matmul(self.groups).add_row(self.b_mu);
        (mu, self.scale(z))
    }

    /// Emission with the same `phi` (a `1 x F` row) for every row.
    pub fn emit_static(&self, z: Var<'t, T>, phi_row: Var<'t, T>) -> (Var<'t, T>, Var<'t, T>) {
        let mu = z.mul_row(phi_row).matmul(self.groups).add_row(self.b_mu);
        (mu, self.scale(z))
    }

    fn scale(&self, z: Var<'t, T>) -> Var<'t, T> {
        z.mul_row(self.w_sigma)
            .matmul(self.groups)
            .add_row(self.b_sigma)
            .softplus()
    }

    /// Group-sum matrix (`F x P`) as a tape constant.
    pub fn groups(&self) -> Var<'t, T> {
        self.groups
    }
}

/// Per-step LSTM inputs `[y_{t-B+k-1}, x_{t-B+k}]` for `k = 0..=B`, with
/// the out-of-window `y` at `k = 0` set to zero.
fn lstm_inputs<T: Scalar>(c: &EncoderConfig, windows: &Tensor<T>) -> Vec<Tensor<T>> {
    let (b, p, q) = (c.window, c.targets, c.covariates);
    let n = windows.rows();
    (0..=b)
        .map(|k| {
            let mut data = Vec::with_capacity(n * (p + q));
            for r in 0..n {
                let row = windows.row_slice(r);
                if k == 0 {
                    data.extend(std::iter::repeat_n(T::zero(), p));
                } else {
                    data.extend_from_slice(&row[(k - 1) * p..k * p]);
                }
                let xo = b * p + k * q;
                data.extend_from_slice(&row[xo..xo + q]);
            }
            Tensor::new(n, p + q, data)
        })
        .collect()
}

/// Sum over `y` columns (restricted to `dims` when given) of the Gaussian
/// log-density, as a `1 x 1` node.
pub fn loglik_on_tape<'t, T: Scalar>(
    y: Var<'t, T>,
    mu: Var<'t, T>,
    sigma: Var<'t, T>,
    dims: Option<&[usize]>,
) -> Var<'t, T> {
    match dims {
        None => y.gaussian_logpdf(mu, sigma).sum(),
        Some(d) => y
            .gather_cols(d)
            .gaussian_logpdf(mu.gather_cols(d), sigma.gather_cols(d))
            .sum(),
    }
}

/// `sum_i log N(y_i; mu_i, sigma_i^2)` over `dims` (all when `None`).
pub fn loglik<T: Scalar>(y: &[T], emission: &Emission<T>, dims: Option<&[usize]>) -> Result<T> {
    if y.len() != emission.mu.len() {
        return Err(Error::contract("observation width differs from emission"));
    }
    let all: Vec<usize>;
    let dims = match dims {
        Some([]) => return Err(Error::contract("empty dimension subset")),
        Some(d) => d,
        None => {
            all = (0..y.len()).collect();
            &all
        }
    };
    let mut total = T::zero();
    for &i in dims {
        if i >= y.len() {
            return Err(Error::contract(format!("dimension {i} out of range")));
        }
        total = total + scalar::normal_logpdf(y[i], emission.mu[i], emission.sigma[i]);
    }
    Ok(total)
}
