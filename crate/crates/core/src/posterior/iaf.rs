use rand::Rng;

use super::{Initial, InitialState, PosteriorConfig, PosteriorDraw};
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};
use crate::tensor::{bind_params, Parameters, Tape, Tensor, Var};

/// One masked autoregressive network over the time axis. Its input is a
/// component's length-`T'` sequence followed by that component's
/// embedding; its output is `T'` shifts then `T'` pre-softplus scales.
#[derive(Clone, Debug, PartialEq)]
pub struct IafLayer<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    pub w3: Tensor<T>,
    pub b3: Tensor<T>,
}

/// Inverse autoregressive flow over each component's time path, with
/// weights shared across components and a learned per-component embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct IafPosterior<T> {
    pub horizon: usize,
    pub components: usize,
    /// `F x K`
    pub embedding: Tensor<T>,
    pub layers: Vec<IafLayer<T>>,
    pub initial: InitialState<T>,
    /// Connectivity masks for `w1`, `w2`, `w3`, shared by all layers.
    pub masks: [Tensor<T>; 3],
}

/// Hidden unit degrees spread evenly over `0..T'`. A unit of degree `m`
/// sees inputs `z_s` with `s < m`; output `t` sees units with `m <= t`.
fn hidden_degrees(horizon: usize, hidden: usize) -> Vec<usize> {
    (0..hidden).map(|k| k * horizon / hidden).collect()
}

fn build_masks<T: Scalar>(horizon: usize, embedding: usize, hidden: usize) -> [Tensor<T>; 3] {
    let m = hidden_degrees(horizon, hidden);
    let in_degree = |j: usize| if j < horizon { j + 1 } else { 0 };
    let mut m1 = Tensor::zeros(horizon + embedding, hidden);
    for j in 0..horizon + embedding {
        for (k, &mk) in m.iter().enumerate() {
            if in_degree(j) <= mk {
                m1.set(j, k, T::one());
            }
        }
    }
    let mut m2 = Tensor::zeros(hidden, hidden);
    for (a, &ma) in m.iter().enumerate() {
        for (b, &mb) in m.iter().enumerate() {
            if ma <= mb {
                m2.set(a, b, T::one());
            }
        }
    }
    let mut m3 = Tensor::zeros(hidden, 2 * horizon);
    for (k, &mk) in m.iter().enumerate() {
        for t in 0..horizon {
            if mk <= t {
                m3.set(k, t, T::one());
                m3.set(k, horizon + t, T::one());
            }
        }
    }
    [m1, m2, m3]
}

impl<T: Scalar> IafPosterior<T> {
    pub fn init<R: Rng + ?Sized>(
        config: &PosteriorConfig,
        horizon: usize,
        components: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (h, k) = (config.iaf_hidden, config.iaf_embedding);
        let n_in = horizon + k;
        let sigma_bias = scalar::softplus_inv(T::c(config.iaf_sigma_init));
        let layers = (0..config.iaf_layers)
            .map(|_| {
                let mut b3 = Tensor::zeros(1, 2 * horizon);
                for t in horizon..2 * horizon {
                    b3.set(0, t, sigma_bias);
                }
                IafLayer {
                    w1: Tensor::uniform(n_in, h, 1.0 / (n_in as f64).sqrt(), rng),
                    b1: Tensor::uniform(1, h, 1.0 / (n_in as f64).sqrt(), rng),
                    w2: Tensor::uniform(h, h, 1.0 / (h as f64).sqrt(), rng),
                    b2: Tensor::uniform(1, h, 1.0 / (h as f64).sqrt(), rng),
                    w3: Tensor::zeros(h, 2 * horizon),
                    b3,
                }
            })
            .collect();
        let post = IafPosterior {
            horizon,
            components,
            embedding: Tensor::standard_normal(components, k, rng),
            layers,
            initial: InitialState::init(config, components),
            masks: build_masks(horizon, k, h),
        };
        post.validate_masks()?;
        Ok(post)
    }

    /// Checks that no output at time `t` can depend on an input at a time
    /// `>= t`, by propagating the latest reachable input time through the
    /// masks.
    pub fn validate_masks(&self) -> Result<()> {
        let [m1, m2, m3] = &self.masks;
        let n = self.horizon;
        let h = m1.cols();
        if m1.rows() != n + self.embedding.cols() || m2.shape() != [h, h] || m3.shape() != [h, 2 * n] {
            return Err(Error::Config("iaf mask shapes do not match the network".into()));
        }
        // reach[k] = 1 + latest input time feeding unit k (0 = none)
        let mut reach1 = vec![0usize; h];
        for j in 0..n {
            for (k, r) in reach1.iter_mut().enumerate() {
                if m1.get(j, k) != T::zero() {
                    *r = (*r).max(j + 1);
                }
            }
        }
        let mut reach2 = vec![0usize; h];
        for a in 0..h {
            for (b, r) in reach2.iter_mut().enumerate() {
                if m2.get(a, b) != T::zero() {
                    *r = (*r).max(reach1[a]);
                }
            }
        }
        for k in 0..h {
            for o in 0..2 * n {
                let t = o % n;
                if m3.get(k, o) != T::zero() && reach2[k] > t {
                    return Err(Error::Config(format!(
                        "iaf mask lets output time {t} depend on input time {}",
                        reach2[k] - 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: &dyn Fn(&str) -> bool) -> (BoundIaf<'t, T>, Vec<Var<'t, T>>) {
        let v = bind_params(self, tape, trainable);
        let n = v.len();
        let layers = v[1..n - 2]
            .chunks(6)
            .map(|c| [c[0], c[1], c[2], c[3], c[4], c[5]])
            .collect();
        let masks = [
            tape.constant(self.masks[0].clone()),
            tape.constant(self.masks[1].clone()),
            tape.constant(self.masks[2].clone()),
        ];
        (
            BoundIaf {
                horizon: self.horizon,
                embedding: v[0],
                layers,
                initial: Initial {
                    mean: v[n - 2],
                    scale: v[n - 1],
                },
                masks,
            },
            v,
        )
    }
}

impl<T: Scalar> Parameters<T> for IafPosterior<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("posterior.embedding", &self.embedding);
        for (l, layer) in self.layers.iter().enumerate() {
            f(&format!("posterior.iaf{l}.w1"), &layer.w1);
            f(&format!("posterior.iaf{l}.b1"), &layer.b1);
            f(&format!("posterior.iaf{l}.w2"), &layer.w2);
            f(&format!("posterior.iaf{l}.b2"), &layer.b2);
            f(&format!("posterior.iaf{l}.w3"), &layer.w3);
            f(&format!("posterior.iaf{l}.b3"), &layer.b3);
        }
        self.initial.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("posterior.embedding", &mut self.embedding);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            f(&format!("posterior.iaf{l}.w1"), &mut layer.w1);
            f(&format!("posterior.iaf{l}.b1"), &mut layer.b1);
            f(&format!("posterior.iaf{l}.w2"), &mut layer.w2);
            f(&format!("posterior.iaf{l}.b2"), &mut layer.b2);
            f(&format!("posterior.iaf{l}.w3"), &mut layer.w3);
            f(&format!("posterior.iaf{l}.b3"), &mut layer.b3);
        }
        self.initial.visit_mut(f);
    }
}

pub struct BoundIaf<'t, T> {
    horizon: usize,
    embedding: Var<'t, T>,
    layers: Vec<[Var<'t, T>; 6]>,
    masks: [Var<'t, T>; 3],
    initial: Initial<'t, T>,
}

impl<'t, T: Scalar> BoundIaf<'t, T> {
    /// Pushes base noise `z0` (`F x T'`) through the flow. Returns the
    /// output (`F x T'`) and the summed `log sigma` per time (`1 x T'`).
    pub fn transform(&self, z0: Var<'t, T>) -> (Var<'t, T>, Var<'t, T>) {
        let n = self.horizon;
        let tape = z0.tape();
        let mut z = z0;
        let mut log_sigma: Option<Var<'t, T>> = None;
        for [w1, b1, w2, b2, w3, b3] in &self.layers {
            let x = tape.concat_cols(&[z, self.embedding]);
            let h1 = x.matmul(*w1 * self.masks[0]).add_row(*b1).tanh();
            let h2 = h1.matmul(*w2 * self.masks[1]).add_row(*b2).tanh();
            let out = h2.matmul(*w3 * self.masks[2]).add_row(*b3);
            let mu = out.slice_cols(0, n);
            let sigma = out.slice_cols(n, n).softplus();
            z = mu + sigma * z;
            let ls = sigma.ln().sum_rows();
            log_sigma = Some(match log_sigma {
                None => ls,
                Some(acc) => acc + ls,
            });
        }
        (z, log_sigma.expect("at least one layer"))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PosteriorDraw<'t, T> {
        let tape = self.embedding.tape();
        let f = self.embedding.shape()[0];
        let n = self.horizon;
        let (init, log_q_initial) = self.initial.sample(rng);
        let eps = Tensor::standard_normal(f, n, rng);
        let mut base = vec![T::zero(); n];
        for r in 0..f {
            for (b, &e) in base.iter_mut().zip(eps.row_slice(r)) {
                *b = *b + scalar::normal_logpdf(e, T::zero(), T::one());
            }
        }
        let (z, log_sigma) = self.transform(tape.constant(eps));
        let chi = tape.concat_rows(&[init, z.transpose()]);
        let log_q = (tape.constant(Tensor::row(base)) - log_sigma).transpose();
        PosteriorDraw {
            chi,
            log_q,
            log_q_initial,
        }
    }
}
