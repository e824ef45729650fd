//! Series container, dataset CSV files and preprocessing.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::quantile_sorted;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Observations `y` (`T x P`) with optional covariates `x` (`T x Q`).
#[derive(Clone, Debug, PartialEq)]
pub struct Series<T> {
    pub t: Vec<i64>,
    pub y: Tensor<T>,
    pub x: Option<Tensor<T>>,
}

impl<T: Scalar> Series<T> {
    pub fn new(y: Tensor<T>, x: Option<Tensor<T>>) -> Result<Self> {
        if let Some(x) = &x {
            if x.rows() != y.rows() {
                return Err(Error::Data("covariates and targets differ in length".into()));
            }
        }
        let t = (1..=y.rows() as i64).collect();
        Ok(Series { t, y, x })
    }

    pub fn len(&self) -> usize {
        self.y.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn targets(&self) -> usize {
        self.y.cols()
    }

    pub fn covariates(&self) -> usize {
        self.x.as_ref().map_or(0, |x| x.cols())
    }

    /// Flattened conditioning window for row `r`: `y[r-b..r]` then
    /// `x[r-b..=r]`, row-major.
    pub fn window(&self, r: usize, b: usize) -> Vec<T> {
        assert!(r >= b && r < self.len(), "window for row {r} needs {b} past rows");
        let mut out = Vec::with_capacity(b * self.targets() + (b + 1) * self.covariates());
        for k in r - b..r {
            out.extend_from_slice(self.y.row_slice(k));
        }
        if let Some(x) = &self.x {
            for k in r - b..=r {
                out.extend_from_slice(x.row_slice(k));
            }
        }
        out
    }

    /// Windows for rows `from..to`, one per tensor row.
    pub fn windows(&self, from: usize, to: usize, b: usize) -> Tensor<T> {
        let mut data = Vec::new();
        for r in from..to {
            data.extend(self.window(r, b));
        }
        let width = b * self.targets() + (b + 1) * self.covariates();
        Tensor::new(to - from, width, data)
    }

    pub fn rows(&self, from: usize, to: usize) -> Tensor<T> {
        let c = self.y.cols();
        Tensor::new(to - from, c, self.y.data()[from * c..to * c].to_vec())
    }

    /// Same observations with the target matrix replaced.
    pub fn with_targets(&self, y: Tensor<T>) -> Self {
        assert_eq!(y.shape(), self.y.shape(), "replacement targets must keep the shape");
        Series {
            t: self.t.clone(),
            y,
            x: self.x.clone(),
        }
    }

    pub fn truncate(&self, len: usize) -> Self {
        let p = self.targets();
        Series {
            t: self.t[..len].to_vec(),
            y: Tensor::new(len, p, self.y.data()[..len * p].to_vec()),
            x: self.x.as_ref().map(|x| {
                let q = x.cols();
                Tensor::new(len, q, x.data()[..len * q].to_vec())
            }),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Series<U> {
        Series {
            t: self.t.clone(),
            y: self.y.cast(),
            x: self.x.as_ref().map(|x| x.cast()),
        }
    }
}

/// Reads a dataset CSV with header `t,dim_0,..,dim_{P-1}[,x_0,..]`.
pub fn read_csv(path: &Path) -> Result<Series<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    if header.get(0) != Some("t") {
        return Err(Error::Data("first column must be `t`".into()));
    }
    let mut p = 0;
    let mut q = 0;
    for name in header.iter().skip(1) {
        if q == 0 && name == format!("dim_{p}") {
            p += 1;
        } else if name == format!("x_{q}") {
            q += 1;
        } else {
            return Err(Error::Data(format!("unexpected column `{name}`")));
        }
    }
    if p == 0 {
        return Err(Error::Data("no target columns".into()));
    }
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("row {}: {e}", line + 1)))?;
        if rec.len() != 1 + p + q {
            return Err(Error::Data(format!("row {} has {} columns", line + 1, rec.len())));
        }
        let ti: i64 = rec[0]
            .parse()
            .map_err(|_| Error::Data(format!("row {}: `t` is not an integer", line + 1)))?;
        if t.last().is_some_and(|&prev| ti <= prev) {
            return Err(Error::Data(format!("row {}: `t` is not strictly increasing", line + 1)));
        }
        t.push(ti);
        for (k, field) in rec.iter().skip(1).enumerate() {
            if field.is_empty() {
                return Err(Error::Data(format!("row {}: missing value", line + 1)));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Data(format!("row {}: `{field}` is not a number", line + 1)))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("row {}: non-finite value", line + 1)));
            }
            if k < p {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    if t.is_empty() {
        return Err(Error::Data("dataset has no rows".into()));
    }
    let n = t.len();
    Ok(Series {
        t,
        y: Tensor::new(n, p, y),
        x: (q > 0).then(|| Tensor::new(n, q, x)),
    })
}

pub fn write_csv<T: Scalar>(path: &Path, series: &Series<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut header = vec!["t".to_string()];
    header.extend((0..series.targets()).map(|i| format!("dim_{i}")));
    header.extend((0..series.covariates()).map(|i| format!("x_{i}")));
    w.write_record(&header).map_err(|e| Error::io(path, e.into()))?;
    for r in 0..series.len() {
        let mut rec = vec![series.t[r].to_string()];
        rec.extend(series.y.row_slice(r).iter().map(|v| format!("{}", v.f64())));
        if let Some(x) = &series.x {
            rec.extend(x.row_slice(r).iter().map(|v| format!("{}", v.f64())));
        }
        w.write_record(&rec).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizeMode {
    None,
    Global,
    Moving,
}

/// Per-row affine transform `y' = (y - shift) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub shift: Tensor<f64>,
    pub scale: Tensor<f64>,
    /// Dimensions whose variance was zero and got scale 1.
    pub degenerate: Vec<usize>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

impl Standardizer {
    pub fn identity(rows: usize, dims: usize) -> Self {
        Standardizer {
            shift: Tensor::zeros(rows, dims),
            scale: Tensor::full(rows, dims, 1.0),
            degenerate: Vec::new(),
        }
    }

    pub fn forward(&self, y: &Tensor<f64>) -> Tensor<f64> {
        assert_eq!(y.shape(), self.shift.shape(), "standardizer shape");
        let mut out = y.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o = (*o - self.shift.data()[i]) / self.scale.data()[i];
        }
        out
    }

    pub fn inverse(&self, y: &Tensor<f64>) -> Tensor<f64> {
        assert_eq!(y.shape(), self.shift.shape(), "standardizer shape");
        let mut out = y.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o = *o * self.scale.data()[i] + self.shift.data()[i];
        }
        out
    }

    /// Maps a model-scale value of dimension `dim` back with the transform
    /// of row `row`.
    pub fn inverse_at(&self, row: usize, dim: usize, v: f64) -> f64 {
        v * self.scale.get(row, dim) + self.shift.get(row, dim)
    }
}

/// Fits a standardizer. `Global` uses rows `..train_end`; `Moving` uses the
/// `window` rows strictly before each row, falling back to the identity
/// scale where fewer than two past rows exist.
pub fn standardize(
    y: &Tensor<f64>,
    mode: StandardizeMode,
    window: usize,
    train_end: usize,
) -> Result<(Tensor<f64>, Standardizer)> {
    let (n, p) = (y.rows(), y.cols());
    let mut st = Standardizer::identity(n, p);
    let column = |d: usize, from: usize, to: usize| -> Vec<f64> { (from..to).map(|r| y.get(r, d)).collect() };
    match mode {
        StandardizeMode::None => {}
        StandardizeMode::Global => {
            if train_end == 0 || train_end > n {
                return Err(Error::Config("training split is empty or too long".into()));
            }
            for d in 0..p {
                let (m, s) = mean_std(&column(d, 0, train_end));
                let s = if s > 1e-12 {
                    s
                } else {
                    st.degenerate.push(d);
                    1.0
                };
                for r in 0..n {
                    st.shift.set(r, d, m);
                    st.scale.set(r, d, s);
                }
            }
        }
        StandardizeMode::Moving => {
            if window < 2 {
                return Err(Error::Config("moving standardization window must be >= 2".into()));
            }
            for d in 0..p {
                for r in 0..n {
                    let from = r.saturating_sub(window);
                    if r - from < 2 {
                        if r > 0 {
                            st.shift.set(r, d, y.get(r - 1, d));
                        }
                        continue;
                    }
                    let (m, s) = mean_std(&column(d, from, r));
                    st.shift.set(r, d, m);
                    if s > 1e-12 {
                        st.scale.set(r, d, s);
                    } else if !st.degenerate.contains(&d) {
                        st.degenerate.push(d);
                    }
                }
            }
        }
    }
    Ok((st.forward(y), st))
}

/// Adds `U(-0.5, 0.5)` noise to every entry.
pub fn dequantize<R: Rng + ?Sized>(y: &Tensor<f64>, rng: &mut R) -> Tensor<f64> {
    let data = y.data().iter().map(|&v| v + rng.gen_range(-0.5..0.5)).collect();
    Tensor::new(y.rows(), y.cols(), data)
}

/// Clips each value to the `[q_lo, q_hi]` quantiles of the trailing
/// `window` rows of its dimension. Rows without past data are unchanged.
pub fn winsorize(y: &Tensor<f64>, q_lo: f64, q_hi: f64, window: usize) -> Result<Tensor<f64>> {
    if !(0.0..=1.0).contains(&q_lo) || !(0.0..=1.0).contains(&q_hi) || q_lo > q_hi {
        return Err(Error::Config(
            "winsorize quantiles must satisfy 0 <= lo <= hi <= 1".into(),
        ));
    }
    if window == 0 {
        return Err(Error::Config("winsorize window must be positive".into()));
    }
    let mut out = y.clone();
    let mut buf = Vec::with_capacity(window);
    for d in 0..y.cols() {
        for r in 1..y.rows() {
            buf.clear();
            buf.extend((r.saturating_sub(window)..r).map(|k| y.get(k, d)));
            buf.sort_by(f64::total_cmp);
            let lo = quantile_sorted(&buf, q_lo);
            let hi = quantile_sorted(&buf, q_hi);
            out.set(r, d, y.get(r, d).clamp(lo, hi));
        }
    }
    Ok(out)
}
