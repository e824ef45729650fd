//! Sample-based forecast scores and their aggregation across windows and
//! seeds.
//!
//! `crps` is the exact energy-form CRPS of the empirical forecast
//! distribution. `ncrps` is the scale-free variant common in the
//! forecasting literature: the quantile loss averaged over the levels
//! 0.05, 0.10, ..., 0.95, summed over points and divided by the summed
//! absolute targets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Quantile levels of the normalized score.
pub const QUANTILE_LEVELS: [f64; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95,
];

/// Linear-interpolation quantile of ascending `sorted` values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of nothing");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `CRPS = E|X - y| - E|X - X'| / 2` under the empirical distribution of
/// `samples`. The pair term is evaluated in `O(n log n)` from the sorted
/// samples.
pub fn crps_empirical(samples: &[f64], y: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::contract("crps needs at least two samples"));
    }
    Ok(crps_sorted(&sorted(samples), y))
}

fn crps_sorted(s: &[f64], y: f64) -> f64 {
    let n = s.len() as f64;
    let abs_err = s.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - n + 1) x_(i), 0-based
    let pairs: f64 = s
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * i as f64 - n + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    (abs_err - 0.5 * pairs / (n * n)).max(0.0)
}

/// CRPS of per-path sums; `samples` holds one `P`-vector per path.
pub fn crps_sum(samples: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    if samples.iter().any(|s| s.len() != y.len()) {
        return Err(Error::contract("sample width differs from target width"));
    }
    let sums: Vec<f64> = samples.iter().map(|s| s.iter().sum()).collect();
    crps_empirical(&sums, y.iter().sum())
}

/// Squared error of the sample mean.
pub fn mse(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("mse needs at least one sample"));
    }
    let m = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok((m - y).powi(2))
}

/// `sum_q 2 |(y - q_hat)(1{y <= q_hat} - q)| / |Q|` for one point.
pub fn quantile_loss(samples: &[f64], y: f64) -> f64 {
    quantile_loss_sorted(&sorted(samples), y)
}

fn quantile_loss_sorted(s: &[f64], y: f64) -> f64 {
    QUANTILE_LEVELS
        .iter()
        .map(|&q| {
            let qh = quantile_sorted(s, q);
            let ind = if y <= qh { 1.0 } else { 0.0 };
            2.0 * ((y - qh) * (ind - q)).abs()
        })
        .sum::<f64>()
        / QUANTILE_LEVELS.len() as f64
}

/// Forecast samples of one window, indexed `[path][step][dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBlock {
    pub n_paths: usize,
    pub horizon: usize,
    pub dims: usize,
    pub values: Vec<f64>,
}

impl SampleBlock {
    pub fn new(n_paths: usize, horizon: usize, dims: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_paths * horizon * dims, "sample block size");
        SampleBlock {
            n_paths,
            horizon,
            dims,
            values,
        }
    }

    #[inline]
    pub fn get(&self, path: usize, step: usize, dim: usize) -> f64 {
        self.values[(path * self.horizon + step) * self.dims + dim]
    }

    /// All paths' values at `(step, dim)`.
    pub fn marginal(&self, step: usize, dim: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.get(p, step, dim)).collect()
    }

    /// All paths' `P`-vectors at `step`.
    pub fn joint(&self, step: usize) -> Vec<Vec<f64>> {
        (0..self.n_paths)
            .map(|p| (0..self.dims).map(|d| self.get(p, step, d)).collect())
            .collect()
    }

    /// Per-step, per-dim sample mean (`horizon x dims`).
    pub fn mean(&self) -> Tensor<f64> {
        let mut out = Tensor::zeros(self.horizon, self.dims);
        for p in 0..self.n_paths {
            for s in 0..self.horizon {
                for d in 0..self.dims {
                    out.set(s, d, out.get(s, d) + self.get(p, s, d));
                }
            }
        }
        out.map(|v| v / self.n_paths as f64)
    }
}

/// Scores averaged over a set of forecast points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub crps: f64,
    pub crps_sum: f64,
    pub mse: f64,
    pub ncrps: f64,
    pub ncrps_sum: f64,
}

impl Scores {
    pub const NAMES: [&'static str; 5] = ["crps", "crps_sum", "mse", "ncrps", "ncrps_sum"];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "crps" => self.crps,
            "crps_sum" => self.crps_sum,
            "mse" => self.mse,
            "ncrps" => self.ncrps,
            "ncrps_sum" => self.ncrps_sum,
            _ => return None,
        })
    }
}

/// Running sums from which [`Scores`] are formed.
#[derive(Clone, Copy, Debug, Default)]
struct Accumulator {
    points: usize,
    steps: usize,
    crps: f64,
    crps_sum: f64,
    se: f64,
    ql: f64,
    abs_y: f64,
    ql_sum: f64,
    abs_y_sum: f64,
}

impl Accumulator {
    fn add_block(&mut self, block: &SampleBlock, truth: &Tensor<f64>) {
        for step in 0..block.horizon {
            for d in 0..block.dims {
                let s = sorted(&block.marginal(step, d));
                let y = truth.get(step, d);
                self.crps += crps_sorted(&s, y);
                let m = s.iter().sum::<f64>() / s.len() as f64;
                self.se += (m - y).powi(2);
                self.ql += quantile_loss_sorted(&s, y);
                self.abs_y += y.abs();
                self.points += 1;
            }
            let sums = sorted(&block.joint(step).iter().map(|v| v.iter().sum()).collect::<Vec<f64>>());
            let ys: f64 = truth.row_slice(step).iter().sum();
            self.crps_sum += crps_sorted(&sums, ys);
            self.ql_sum += quantile_loss_sorted(&sums, ys);
            self.abs_y_sum += ys.abs();
            self.steps += 1;
        }
    }

    fn merge(&mut self, o: &Accumulator) {
        self.points += o.points;
        self.steps += o.steps;
        self.crps += o.crps;
        self.crps_sum += o.crps_sum;
        self.se += o.se;
        self.ql += o.ql;
        self.abs_y += o.abs_y;
        self.ql_sum += o.ql_sum;
        self.abs_y_sum += o.abs_y_sum;
    }

    fn scores(&self) -> Scores {
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        Scores {
            crps: self.crps / self.points as f64,
            crps_sum: self.crps_sum / self.steps as f64,
            mse: self.se / self.points as f64,
            ncrps: ratio(self.ql, self.abs_y),
            ncrps_sum: ratio(self.ql_sum, self.abs_y_sum),
        }
    }
}

/// Scores of one seed's rolling evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub seed: u64,
    pub overall: Scores,
    pub windows: Vec<Scores>,
}

/// Scores all windows of a rolling forecast against the revealed truth
/// (`truths[k]` is `horizon x dims`).
pub fn evaluate_rolling(seed: u64, forecasts: &[SampleBlock], truths: &[Tensor<f64>]) -> Result<RunScores> {
    if forecasts.is_empty() || forecasts.len() != truths.len() {
        return Err(Error::contract(format!(
            "{} forecast windows but {} truth windows",
            forecasts.len(),
            truths.len()
        )));
    }
    let mut total = Accumulator::default();
    let mut windows = Vec::with_capacity(forecasts.len());
    for (k, (f, y)) in forecasts.iter().zip(truths).enumerate() {
        if y.shape() != [f.horizon, f.dims] {
            return Err(Error::contract(format!(
                "window {k}: truth shape {:?} does not match forecast",
                y.shape()
            )));
        }
        if f.n_paths < 2 {
            return Err(Error::contract("crps needs at least two sample paths"));
        }
        let mut acc = Accumulator::default();
        acc.add_block(f, y);
        windows.push(acc.scores());
        total.merge(&acc);
    }
    Ok(RunScores {
        seed,
        overall: total.scores(),
        windows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub dataset: String,
    pub n_paths: usize,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    /// Mean and sample standard deviation across seeds (0 for one seed).
    pub summary: BTreeMap<String, Summary>,
    pub runs: Vec<RunScores>,
}

impl MetricReport {
    pub fn new(model: &str, dataset: &str, n_paths: usize, config_hash: &str, runs: Vec<RunScores>) -> Self {
        let mut summary = BTreeMap::new();
        for name in Scores::NAMES {
            let vals: Vec<f64> = runs
                .iter()
                .map(|r| r.overall.get(name).expect("known metric"))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            summary.insert(name.to_string(), Summary { mean, std });
        }
        MetricReport {
            model: model.into(),
            dataset: dataset.into(),
            n_paths,
            seeds: runs.iter().map(|r| r.seed).collect(),
            config_hash: config_hash.into(),
            summary,
            runs,
        }
    }

    pub fn mean(&self, metric: &str) -> f64 {
        self.summary[metric].mean
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// Flat table `method,dataset,metric,mean,std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,dataset,metric,mean,std\n");
        for (name, s) in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.model, self.dataset, name, s.mean, s.std
            ));
        }
        out
    }
}
