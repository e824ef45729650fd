//! Conditionally non-stationary benchmark processes
//! `y_t = W_t y_{t-1} + eps_t` with known coefficients.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Series;
use crate::error::{Error, Result};
use crate::metrics::SampleBlock;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessKind {
    /// `w` redrawn from `{-0.5, 0.5}` every regime.
    Ar1Flip,
    /// `w ~ U(-1, 1)` every regime.
    Ar1Dynamic,
    /// `w = sin(2 pi t / T)`.
    Ar1Sin,
    /// `W` with entries `U(-range, range)` every regime, rejected until
    /// its spectral radius is below one.
    Var1Dynamic,
}

impl ProcessKind {
    pub fn name(self) -> &'static str {
        match self {
            ProcessKind::Ar1Flip => "ar1-flip",
            ProcessKind::Ar1Dynamic => "ar1-dynamic",
            ProcessKind::Ar1Sin => "ar1-sin",
            ProcessKind::Var1Dynamic => "var1-dynamic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ProcessKind::Ar1Flip,
            ProcessKind::Ar1Dynamic,
            ProcessKind::Ar1Sin,
            ProcessKind::Var1Dynamic,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub kind: ProcessKind,
    pub length: usize,
    /// Steps per regime; `None` means 100 for AR(1) and 250 for VAR(1).
    pub regime_length: Option<usize>,
    pub var_dim: usize,
    pub var_range: f64,
    /// Discarded steps before the first kept observation, run with the
    /// first kept coefficient from `y = 0`.
    pub burn_in: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: ProcessKind::Ar1Flip,
            length: 2500,
            regime_length: None,
            var_dim: 4,
            var_range: 0.8,
            burn_in: 100,
        }
    }
}

impl SyntheticSpec {
    pub fn new(kind: ProcessKind) -> Self {
        SyntheticSpec {
            kind,
            ..Self::default()
        }
    }

    pub fn regime(&self) -> usize {
        self.regime_length.unwrap_or(match self.kind {
            ProcessKind::Var1Dynamic => 250,
            _ => 100,
        })
    }

    pub fn dims(&self) -> usize {
        match self.kind {
            ProcessKind::Var1Dynamic => self.var_dim,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.regime() == 0 || self.dims() == 0 {
            return Err(Error::Config(
                "length, regime length and dimension must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Row ranges of the three splits: `..train_end`, `train_end..val_end`,
/// `val_end..`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train_end: usize,
    pub val_end: usize,
}

impl Splits {
    /// 1000 / 500 / 1000 rows at the default length, proportionally otherwise.
    pub fn for_length(len: usize) -> Self {
        Splits {
            train_end: len * 2 / 5,
            val_end: len * 3 / 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSeries {
    pub spec: SyntheticSpec,
    pub series: Series<f64>,
    /// `W` used to produce each row from the previous one (`P x P`).
    pub coefficients: Vec<Tensor<f64>>,
    pub splits: Splits,
}

pub fn spectral_radius(w: &Tensor<f64>) -> f64 {
    let m = DMatrix::from_row_slice(w.rows(), w.cols(), w.data());
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn stable_matrix<R: Rng + ?Sized>(p: usize, range: f64, rng: &mut R) -> Result<Tensor<f64>> {
    for _ in 0..10_000 {
        let w = Tensor::new(p, p, (0..p * p).map(|_| rng.gen_range(-range..range)).collect());
        if spectral_radius(&w) < 1.0 {
            return Ok(w);
        }
    }
    Err(Error::Generation("no stable VAR matrix within 10^4 draws".into()))
}

pub fn generate<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<GeneratedSeries> {
    spec.validate()?;
    let n = spec.length;
    let p = spec.dims();
    let regime = spec.regime();
    let mut coefficients = Vec::with_capacity(n);
    let mut current: Option<Tensor<f64>> = None;
    for r in 0..n {
        let w = match spec.kind {
            ProcessKind::Ar1Sin => {
                let t = (r + 1) as f64;
                Tensor::scalar((2.0 * std::f64::consts::PI * t / n as f64).sin())
            }
            _ => {
                if r % regime == 0 || current.is_none() {
                    current = Some(match spec.kind {
                        ProcessKind::Ar1Flip => Tensor::scalar(if rng.gen::<bool>() { 0.5 } else { -0.5 }),
                        ProcessKind::Ar1Dynamic => Tensor::scalar(rng.gen_range(-1.0..1.0)),
                        _ => stable_matrix(p, spec.var_range, rng)?,
                    });
                }
                current.clone().expect("regime coefficient")
            }
        };
        coefficients.push(w);
    }
    let mut prev = vec![0.0; p];
    let step = |w: &Tensor<f64>, prev: &[f64], rng: &mut R| -> Vec<f64> {
        (0..p)
            .map(|i| {
                let ar: f64 = (0..p).map(|j| w.get(i, j) * prev[j]).sum();
                ar + rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    };
    for _ in 0..spec.burn_in {
        prev = step(&coefficients[0], &prev, rng);
    }
    let mut y = Vec::with_capacity(n * p);
    for w in &coefficients {
        prev = step(w, &prev, rng);
        y.extend_from_slice(&prev);
    }
    Ok(GeneratedSeries {
        spec: spec.clone(),
        series: Series::new(Tensor::new(n, p, y), None)?,
        coefficients,
        splits: Splits::for_length(n),
    })
}

/// Simulates rows `origin..origin + horizon` from the true process, given
/// the observed row `origin - 1`.
pub fn oracle_forecast<R: Rng + ?Sized>(
    generated: &GeneratedSeries,
    origin: usize,
    horizon: usize,
    n_paths: usize,
    rng: &mut R,
) -> Result<SampleBlock> {
    let y = &generated.series.y;
    let p = y.cols();
    if origin == 0 || origin + horizon > y.rows() || horizon == 0 || n_paths == 0 {
        return Err(Error::contract("oracle forecast window outside the series"));
    }
    let mut values = vec![0.0; n_paths * horizon * p];
    for path in 0..n_paths {
        let mut prev = y.row_slice(origin - 1).to_vec();
        for h in 0..horizon {
            let w = &generated.coefficients[origin + h];
            let next: Vec<f64> = (0..p)
                .map(|i| (0..p).map(|j| w.get(i, j) * prev[j]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let base = (path * horizon + h) * p;
            values[base..base + p].copy_from_slice(&next);
            prev = next;
        }
    }
    Ok(SampleBlock::new(n_paths, horizon, p, values))
}
