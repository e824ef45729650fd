//! End-to-end experiments: configuration, preprocessing, the per-seed
//! generate / train / forecast / evaluate pipeline and its artifacts.
//!
//! A run writes into `<root>/<config hash>/`:
//!
//! ```text
//! config.json          effective configuration, defaults included
//! report.json          metric report over all seeds
//! report.csv
//! baseline.json        persistence forecaster on the same windows
//! seed-<n>/
//!     manifest.json    config hash, seed and artifact list
//!     data.csv         the series in original scale
//!     staticonf.ckpt
//!     dynaconf.ckpt    dynamic models only
//!     forecasts.csv    window,origin,path,step,dim,value
//!     scores.json
//!     latent_trace.csv t,component,median,p05,p95 (dynamic models only)
//!     error.json       written instead of the rest when a stage fails
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::config_hash;
use crate::conditional::EncoderConfig;
use crate::data::{self, Series, StandardizeMode, Standardizer};
use crate::dynamics::DynamicsConfig;
use crate::error::{Error, Result};
use crate::forecaster::{latent_trace, rolling_forecast, ForecastConfig, TraceRow};
use crate::metrics::{evaluate_rolling, MetricReport, RunScores, SampleBlock};
use crate::model::{ModelConfig, ModelKind};
use crate::posterior::PosteriorConfig;
use crate::synthetic::{generate, GeneratedSeries, Splits, SyntheticSpec};
use crate::tensor::Tensor;
use crate::trainer::{Checkpoint, TrainConfig, TrainData, Trainer};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DYNACONF_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        /// Defaults to four fifths of the rows before `val_end`.
        #[serde(default)]
        train_end: Option<usize>,
        /// Defaults to the first test row, so that the last
        /// `n_windows * horizon` rows are the test region.
        #[serde(default)]
        val_end: Option<usize>,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic(SyntheticSpec::default())
    }
}

impl DatasetConfig {
    pub fn name(&self) -> String {
        match self {
            DatasetConfig::Synthetic(s) => s.kind.name().to_string(),
            DatasetConfig::Csv { path, .. } => path
                .file_stem()
                .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub standardize: StandardizeMode,
    /// Trailing rows used by moving standardization.
    pub window: usize,
    /// Add `U(-0.5, 0.5)` noise to every observation.
    pub dequantize: bool,
    /// Trailing-window quantiles `[lo, hi]` to clip to.
    pub winsorize: Option<[f64; 2]>,
    pub winsorize_window: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            standardize: StandardizeMode::None,
            window: 100,
            dequantize: false,
            winsorize: None,
            winsorize_window: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelKind,
    /// `targets` and `covariates` are taken from the data.
    pub encoder: EncoderConfig,
    pub dynamics: DynamicsConfig,
    pub posterior: PosteriorConfig,
    pub train: TrainConfig,
    pub forecast: ForecastConfig,
    pub preprocess: PreprocessConfig,
    pub seeds: Vec<u64>,
    /// Output root; `DYNACONF_OUT` or `out` when unset.
    pub output: Option<PathBuf>,
    /// Write every sample path to `forecasts.csv`.
    pub write_forecasts: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            model: ModelKind::Dynaconf,
            encoder: EncoderConfig::default(),
            dynamics: DynamicsConfig::default(),
            posterior: PosteriorConfig::default(),
            train: TrainConfig::default(),
            forecast: ForecastConfig::default(),
            preprocess: PreprocessConfig::default(),
            seeds: vec![1, 2, 3],
            output: None,
            write_forecasts: true,
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML (`.toml`) or JSON (anything else). Relative dataset paths
    /// are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if let DatasetConfig::Csv { path: data, .. } = &mut cfg.dataset {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seed list has duplicates".into()));
        }
        match &self.dataset {
            DatasetConfig::Synthetic(s) => s.validate()?,
            DatasetConfig::Csv { path, .. } => {
                if !path.is_file() {
                    return Err(Error::Config(format!("dataset {} does not exist", path.display())));
                }
            }
        }
        let f = &self.forecast;
        if f.horizon == 0 || f.n_windows == 0 || f.n_paths < 2 || f.particles == 0 {
            return Err(Error::Config(
                "horizon, windows and particles must be positive and paths at least 2".into(),
            ));
        }
        if let Some([lo, hi]) = self.preprocess.winsorize {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::Config(
                    "winsorize quantiles must satisfy 0 <= lo <= hi <= 1".into(),
                ));
            }
        }
        self.train.validate()?;
        self.dynamics.validate()?;
        self.posterior.validate()?;
        Ok(())
    }

    /// Hash of everything that affects a seed's results. The output root
    /// and the seed list are left out so seeds of one setup share a run
    /// directory.
    pub fn hash(&self) -> String {
        config_hash(&ExperimentConfig {
            output: None,
            seeds: Vec::new(),
            ..self.clone()
        })
    }

    pub fn output_root(&self) -> PathBuf {
        self.output
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root().join(&self.hash()[..16])
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.run_dir().join(format!("seed-{seed}"))
    }

    /// Model configuration with the data's dimensions filled in.
    pub fn model_config(&self, series: &Series<f64>) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                targets: series.targets(),
                covariates: series.covariates(),
                ..self.encoder.clone()
            },
            dynamics: self.dynamics.clone(),
            posterior: self.posterior.clone(),
        }
    }
}

/// Data of one seed, before and after preprocessing.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Original scale; all metrics are computed against this.
    pub raw: Series<f64>,
    /// What the model sees.
    pub model: Series<f64>,
    pub standardizer: Standardizer,
    pub splits: Splits,
    pub generated: Option<GeneratedSeries>,
}

impl Prepared {
    pub fn first_origin(&self) -> usize {
        self.splits.val_end
    }

    pub fn train_data(&self) -> TrainData<'_, f64> {
        TrainData {
            series: &self.model,
            train_end: self.splits.train_end,
            val_end: Some(self.splits.val_end),
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_DEQUANTIZE: u64 = 1;
const STREAM_FORECAST: u64 = 2;
const STREAM_TRACE: u64 = 3;

/// The raw series of `seed` and its splits.
pub fn load_dataset(config: &ExperimentConfig, seed: u64) -> Result<(Series<f64>, Splits, Option<GeneratedSeries>)> {
    let test_len = config.forecast.n_windows * config.forecast.horizon;
    match &config.dataset {
        DatasetConfig::Synthetic(spec) => {
            let g = generate(spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
            Ok((g.series.clone(), g.splits, Some(g)))
        }
        DatasetConfig::Csv {
            path,
            train_end,
            val_end,
        } => {
            let s = data::read_csv(path)?;
            let val_end = val_end.unwrap_or_else(|| s.len().saturating_sub(test_len));
            let train_end = train_end.unwrap_or(val_end - val_end / 5);
            Ok((s, Splits { train_end, val_end }, None))
        }
    }
}

/// Loads or generates the data and applies dequantization, winsorizing
/// and standardization, in that order.
pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let (raw, splits, generated) = load_dataset(config, seed)?;
    let test_len = config.forecast.n_windows * config.forecast.horizon;
    if splits.train_end <= config.encoder.window + 1 || splits.train_end > splits.val_end {
        return Err(Error::Config(format!(
            "training split ..{} too short for window {}",
            splits.train_end, config.encoder.window
        )));
    }
    if splits.val_end + test_len > raw.len() {
        return Err(Error::Config(format!(
            "{} rows cannot hold {} test windows of {} after row {}",
            raw.len(),
            config.forecast.n_windows,
            config.forecast.horizon,
            splits.val_end
        )));
    }
    let pp = &config.preprocess;
    let mut y = raw.y.clone();
    if pp.dequantize {
        y = data::dequantize(&y, &mut stream_rng(seed, STREAM_DEQUANTIZE));
    }
    if let Some([lo, hi]) = pp.winsorize {
        y = data::winsorize(&y, lo, hi, pp.winsorize_window)?;
    }
    let (y, standardizer) = data::standardize(&y, pp.standardize, pp.window, splits.train_end)?;
    for d in &standardizer.degenerate {
        eprintln!("warning: dimension {d} has zero variance; using scale 1");
    }
    Ok(Prepared {
        model: raw.with_targets(y),
        raw,
        standardizer,
        splits,
        generated,
    })
}

/// Trains the conditional model and, for dynamic runs, the latent prior.
/// Checkpoints land in `dir` when given. Returns the final checkpoint.
pub fn train(config: &ExperimentConfig, seed: u64, prepared: &Prepared, dir: Option<&Path>) -> Result<Checkpoint> {
    let mc = config.model_config(&prepared.model);
    let tc = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let data = prepared.train_data();
    let save = |ck: &Checkpoint, name: &str| -> Result<()> {
        match dir {
            Some(d) => ck.save(&d.join(name)),
            None => Ok(()),
        }
    };
    let keep_diverged = |e: Error| -> Error {
        if let Error::Diverged { last_finite, .. } = &e {
            let _ = save(last_finite, "diverged.ckpt");
        }
        e
    };
    let stat = Trainer::<f64>::staticonf(&mc, &tc)?.fit(&data).map_err(keep_diverged)?;
    save(&stat, "staticonf.ckpt")?;
    if config.model == ModelKind::Staticonf {
        return Ok(stat);
    }
    let horizon = data.train_end - mc.encoder.window;
    let dynamic_data = TrainData { val_end: None, ..data };
    let dynamic = Trainer::<f64>::dynaconf(&stat, &tc, horizon)?
        .fit(&dynamic_data)
        .map_err(keep_diverged)?;
    save(&dynamic, "dynaconf.ckpt")?;
    Ok(dynamic)
}

/// Rolling forecasts over the test region in original scale. Every sample
/// of a window is mapped back with the transform of its origin row, which
/// depends on data before the origin only.
pub fn forecast(
    config: &ExperimentConfig,
    seed: u64,
    prepared: &Prepared,
    ck: &Checkpoint,
) -> Result<Vec<(usize, SampleBlock)>> {
    let model = ck.model::<f64>()?;
    let mut rng = stream_rng(seed, STREAM_FORECAST);
    let out = rolling_forecast(
        &model,
        &prepared.model,
        prepared.first_origin(),
        &config.forecast,
        &mut rng,
    )?;
    Ok(out
        .into_iter()
        .map(|r| {
            let mut block = r.samples;
            let p = block.dims;
            for (k, v) in block.values.iter_mut().enumerate() {
                *v = prepared.standardizer.inverse_at(r.origin, k % p, *v);
            }
            (r.origin, block)
        })
        .collect())
}

/// Scores forecast windows against the original-scale truth.
pub fn evaluate(seed: u64, raw: &Series<f64>, windows: &[(usize, SampleBlock)]) -> Result<RunScores> {
    let blocks: Vec<SampleBlock> = windows.iter().map(|(_, b)| b.clone()).collect();
    let truths: Vec<Tensor<f64>> = windows
        .iter()
        .map(|(o, b)| {
            if o + b.horizon > raw.len() {
                return Err(Error::Data(format!("forecast window at row {o} runs past the data")));
            }
            Ok(raw.rows(*o, o + b.horizon))
        })
        .collect::<Result<_>>()?;
    evaluate_rolling(seed, &blocks, &truths)
}

/// Repeats the last observation before each origin.
pub fn persistence(raw: &Series<f64>, origins: &[usize], horizon: usize) -> Vec<(usize, SampleBlock)> {
    let p = raw.targets();
    origins
        .iter()
        .map(|&o| {
            let last = raw.y.row_slice(o - 1);
            let values = (0..2 * horizon).flat_map(|_| last.iter().copied()).collect();
            (o, SampleBlock::new(2, horizon, p, values))
        })
        .collect()
}

/// Posterior trace of every latent component over the whole series.
pub fn inspect_latent(
    config: &ExperimentConfig,
    seed: u64,
    prepared: &Prepared,
    ck: &Checkpoint,
) -> Result<Vec<TraceRow>> {
    if ck.meta.kind != ModelKind::Dynaconf {
        return Err(Error::Config("latent traces need a dynaconf checkpoint".into()));
    }
    let model = ck.model::<f64>()?;
    latent_trace(
        &model,
        &prepared.model,
        config.forecast.particles,
        &mut stream_rng(seed, STREAM_TRACE),
    )
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, e.into())
}

pub fn write_forecasts(path: &Path, windows: &[(usize, SampleBlock)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["window", "origin", "path", "step", "dim", "value"])
        .map_err(csv_err(path))?;
    for (k, (origin, b)) in windows.iter().enumerate() {
        for path_i in 0..b.n_paths {
            for step in 0..b.horizon {
                for dim in 0..b.dims {
                    w.write_record(&[
                        k.to_string(),
                        origin.to_string(),
                        path_i.to_string(),
                        step.to_string(),
                        dim.to_string(),
                        b.get(path_i, step, dim).to_string(),
                    ])
                    .map_err(csv_err(path))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct ForecastRecord {
    window: usize,
    origin: usize,
    path: usize,
    step: usize,
    dim: usize,
    value: f64,
}

pub fn read_forecasts(path: &Path) -> Result<Vec<(usize, SampleBlock)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut recs = Vec::new();
    for rec in r.deserialize() {
        let rec: ForecastRecord = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        recs.push(rec);
    }
    let Some(n_win) = recs.iter().map(|r| r.window + 1).max() else {
        return Err(Error::Data(format!("{}: no forecasts", path.display())));
    };
    let n_paths = recs.iter().map(|r| r.path + 1).max().unwrap_or(0);
    let horizon = recs.iter().map(|r| r.step + 1).max().unwrap_or(0);
    let dims = recs.iter().map(|r| r.dim + 1).max().unwrap_or(0);
    if recs.len() != n_win * n_paths * horizon * dims {
        return Err(Error::Data(format!("{}: forecast grid is incomplete", path.display())));
    }
    let mut origins = vec![None; n_win];
    let mut values = vec![vec![f64::NAN; n_paths * horizon * dims]; n_win];
    for r in recs {
        if origins[r.window].is_some_and(|o| o != r.origin) {
            return Err(Error::Data(format!(
                "{}: window {} has two origins",
                path.display(),
                r.window
            )));
        }
        origins[r.window] = Some(r.origin);
        values[r.window][(r.path * horizon + r.step) * dims + r.dim] = r.value;
    }
    if values.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::Data(format!("{}: forecast grid has gaps", path.display())));
    }
    Ok(origins
        .into_iter()
        .zip(values)
        .map(|(o, v)| {
            (
                o.expect("every window seen"),
                SampleBlock::new(n_paths, horizon, dims, v),
            )
        })
        .collect())
}

pub fn write_trace(path: &Path, series: &Series<f64>, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["t", "component", "median", "p05", "p95"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&[
            series.t[r.row].to_string(),
            r.component.to_string(),
            r.median.to_string(),
            r.p05.to_string(),
            r.p95.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is in use by another process (remove {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    seed: u64,
    model: &'a str,
    dataset: &'a str,
    best_epoch: Option<usize>,
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct ErrorRecord {
    config_hash: String,
    seed: Option<u64>,
    exit_code: i32,
    error: String,
}

pub fn write_error(dir: &Path, config: &ExperimentConfig, seed: Option<u64>, err: &Error) {
    let rec = ErrorRecord {
        config_hash: config.hash(),
        seed,
        exit_code: err.exit_code(),
        error: err.to_string(),
    };
    let _ = fs::create_dir_all(dir).and_then(|_| {
        fs::write(
            dir.join("error.json"),
            serde_json::to_string_pretty(&rec).expect("record serializes"),
        )
    });
}

/// Scores of one seed for the model and the persistence baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedOutcome {
    pub model: RunScores,
    pub baseline: RunScores,
}

/// The whole pipeline for one seed, writing into `dir`.
pub fn run_seed(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedOutcome> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = config.hash();
    let prepared = prepare(config, seed)?;
    data::write_csv(&dir.join("data.csv"), &prepared.raw)?;
    let mut artifacts = vec!["data.csv".to_string(), "staticonf.ckpt".to_string()];
    let ck = train(config, seed, &prepared, Some(dir))?;
    let windows = forecast(config, seed, &prepared, &ck)?;
    if config.write_forecasts {
        write_forecasts(&dir.join("forecasts.csv"), &windows)?;
        artifacts.push("forecasts.csv".into());
    }
    let scores = evaluate(seed, &prepared.raw, &windows)?;
    let origins: Vec<usize> = windows.iter().map(|(o, _)| *o).collect();
    let baseline = evaluate(
        seed,
        &prepared.raw,
        &persistence(&prepared.raw, &origins, config.forecast.horizon),
    )?;
    write_json(&dir.join("scores.json"), &scores)?;
    artifacts.push("scores.json".into());
    if config.model == ModelKind::Dynaconf {
        artifacts.push("dynaconf.ckpt".into());
        let trace = inspect_latent(config, seed, &prepared, &ck)?;
        write_trace(&dir.join("latent_trace.csv"), &prepared.model, &trace)?;
        artifacts.push("latent_trace.csv".into());
    }
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            config_hash: &hash,
            seed,
            model: config.model.name(),
            dataset: &config.dataset.name(),
            best_epoch: ck.meta.best_epoch,
            artifacts,
        },
    )?;
    Ok(SeedOutcome {
        model: scores,
        baseline,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub report: MetricReport,
    pub baseline: MetricReport,
}

/// Runs every seed in parallel and writes the reports. A failing seed
/// leaves its `error.json` and the artifacts written so far; the first
/// failure in seed order is returned.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let _lock = begin(config)?;
    let dir = config.run_dir();
    let results = for_each_seed(config, |seed, dir| run_seed(config, seed, dir))?;
    let mut runs = Vec::new();
    let mut base = Vec::new();
    for r in results {
        runs.push(r.model);
        base.push(r.baseline);
    }
    let hash = config.hash();
    let name = config.dataset.name();
    let report = MetricReport::new(config.model.name(), &name, config.forecast.n_paths, &hash, runs);
    let baseline = MetricReport::new("persistence", &name, 2, &hash, base);
    write_reports(&dir, &report)?;
    baseline.write_json(&dir.join("baseline.json"))?;
    Ok(ExperimentOutcome { dir, report, baseline })
}

pub fn write_reports(dir: &Path, report: &MetricReport) -> Result<()> {
    report.write_json(&dir.join("report.json"))?;
    let path = dir.join("report.csv");
    fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))
}

/// Rebuilds the report from the stored `data.csv` and `forecasts.csv` of
/// every seed.
pub fn report_from_artifacts(config: &ExperimentConfig) -> Result<MetricReport> {
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let dir = config.seed_dir(seed);
        let raw = data::read_csv(&dir.join("data.csv"))?;
        let windows = read_forecasts(&dir.join("forecasts.csv"))?;
        runs.push(evaluate(seed, &raw, &windows)?);
    }
    Ok(MetricReport::new(
        config.model.name(),
        &config.dataset.name(),
        config.forecast.n_paths,
        &config.hash(),
        runs,
    ))
}

/// File name of the checkpoint a model kind ends training with.
pub fn checkpoint_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Staticonf => "staticonf.ckpt",
        ModelKind::Dynaconf => "dynaconf.ckpt",
    }
}

/// Runs `f` for every seed on its own thread; on failure the seed's
/// `error.json` is written and the first error in seed order returned.
pub fn for_each_seed<O: Send>(config: &ExperimentConfig, f: impl Fn(u64, &Path) -> Result<O> + Sync) -> Result<Vec<O>> {
    let f = &f;
    let results: Vec<Result<O>> = std::thread::scope(|s| {
        let handles: Vec<_> = config
            .seeds
            .iter()
            .map(|&seed| {
                s.spawn(move || {
                    let dir = config.seed_dir(seed);
                    let r = fs::create_dir_all(&dir)
                        .map_err(|e| Error::io(&dir, e))
                        .and_then(|_| f(seed, &dir));
                    if let Err(e) = &r {
                        write_error(&dir, config, Some(seed), e);
                    }
                    r
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::contract("seed worker panicked")))
            })
            .collect()
    });
    results.into_iter().collect()
}

fn begin(config: &ExperimentConfig) -> Result<RunLock> {
    config.validate()?;
    let dir = config.run_dir();
    let lock = RunLock::acquire(&dir)?;
    write_json(&dir.join("config.json"), config)?;
    Ok(lock)
}

/// Training stage alone: data and checkpoints for every seed.
pub fn train_stage(config: &ExperimentConfig) -> Result<PathBuf> {
    let _lock = begin(config)?;
    for_each_seed(config, |seed, dir| {
        let prepared = prepare(config, seed)?;
        data::write_csv(&dir.join("data.csv"), &prepared.raw)?;
        train(config, seed, &prepared, Some(dir)).map(|_| ())
    })?;
    Ok(config.run_dir())
}

/// Forecast stage from stored checkpoints.
pub fn forecast_stage(config: &ExperimentConfig) -> Result<PathBuf> {
    let _lock = begin(config)?;
    for_each_seed(config, |seed, dir| {
        let prepared = prepare(config, seed)?;
        let ck = Checkpoint::load(&dir.join(checkpoint_name(config.model)))?;
        let windows = forecast(config, seed, &prepared, &ck)?;
        data::write_csv(&dir.join("data.csv"), &prepared.raw)?;
        write_forecasts(&dir.join("forecasts.csv"), &windows)
    })?;
    Ok(config.run_dir())
}

/// Evaluation stage from stored forecasts; writes the reports.
pub fn evaluate_stage(config: &ExperimentConfig) -> Result<MetricReport> {
    let _lock = begin(config)?;
    let report = report_from_artifacts(config)?;
    write_reports(&config.run_dir(), &report)?;
    Ok(report)
}

/// Writes the latent trace of a stored dynamic checkpoint to `out`
/// (default `latent_trace.csv` in the seed directory).
pub fn inspect_latent_stage(config: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<PathBuf> {
    config.validate()?;
    let dir = config.seed_dir(seed);
    let ck = Checkpoint::load(&dir.join(checkpoint_name(ModelKind::Dynaconf)))?;
    let prepared = prepare(config, seed)?;
    let rows = inspect_latent(config, seed, &prepared, &ck)?;
    let path = out.map_or_else(|| dir.join("latent_trace.csv"), Path::to_path_buf);
    write_trace(&path, &prepared.model, &rows)?;
    Ok(path)
}
