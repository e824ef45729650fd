//! Two-stage training: the conditional model alone by maximum likelihood,
//! then alternating updates of the conditional model and of the latent
//! prior with its variational posterior.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{config_hash, Archive, RngState};
use crate::conditional::{loglik_on_tape, ConditionalParams};
use crate::data::Series;
use crate::dynamics::DynamicsParams;
use crate::error::{Error, Result};
use crate::forecaster::{rolling_forecast, ForecastConfig};
use crate::metrics::evaluate_rolling;
use crate::model::{Model, ModelConfig, ModelKind};
use crate::posterior::{elbo, ElboData, PosteriorParams};
use crate::scalar::Scalar;
use crate::tensor::{
    backward, clip_global_norm, AdamConfig, AdamState, OneCycleSchedule, Parameters, Tape, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Upper bound on conditional-model epochs.
    pub epochs: usize,
    /// Upper bound on alternating epochs.
    pub dynamic_epochs: usize,
    pub updates_per_epoch: usize,
    pub batch_size: usize,
    /// Output dimensions per likelihood evaluation; `None` uses all.
    pub dim_subsample: Option<usize>,
    pub n_mc: usize,
    /// Peak learning rate of the conditional model.
    pub lr: f64,
    /// Peak learning rate of the prior and posterior.
    pub prior_lr: f64,
    /// 1cycle schedule when true, constant rates otherwise.
    pub one_cycle: bool,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub grad_clip: f64,
    /// Sample paths per validation forecast.
    pub validation_paths: usize,
    pub validation_horizon: usize,
    pub freeze_encoder: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            dynamic_epochs: 100,
            updates_per_epoch: 50,
            batch_size: 64,
            dim_subsample: None,
            n_mc: 1,
            lr: 1e-2,
            prior_lr: 1e-2,
            one_cycle: true,
            patience: 10,
            grad_clip: 10.0,
            validation_paths: 100,
            validation_horizon: 10,
            freeze_encoder: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.updates_per_epoch == 0 || self.batch_size == 0 || self.n_mc == 0 {
            return Err(Error::Config("updates, batch size and n_mc must be positive".into()));
        }
        if !(self.lr > 0.0 && self.prior_lr > 0.0 && self.grad_clip > 0.0) {
            return Err(Error::Config("learning rates and clip norm must be positive".into()));
        }
        if self.dim_subsample == Some(0) {
            return Err(Error::Config("dim_subsample must be positive".into()));
        }
        Ok(())
    }
}

/// Training rows `..train_end` of `series`, optionally validated on rows
/// `train_end..val_end`.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a, T> {
    pub series: &'a Series<T>,
    pub train_end: usize,
    pub val_end: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-step negative log-likelihood, or negative ELBO per step.
    pub loss: f64,
    pub validation_crps: Option<f64>,
}

/// `k` distinct output dimensions drawn uniformly, in increasing order.
pub fn subsample_dims<R: Rng + ?Sized>(p: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k == 0 || k > p {
        return Err(Error::contract(format!("cannot draw {k} of {p} dimensions")));
    }
    let mut out = index::sample(rng, p, k).into_vec();
    out.sort_unstable();
    Ok(out)
}

/// Model and posterior visited as one parameter set.
struct Joint<'a, T> {
    model: &'a mut Model<T>,
    posterior: Option<&'a mut PosteriorParams<T>>,
}

impl<T: Scalar> Parameters<T> for Joint<'_, T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.model.visit(f);
        if let Some(p) = &self.posterior {
            p.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.model.visit_mut(f);
        if let Some(p) = &mut self.posterior {
            p.visit_mut(f);
        }
    }
}

fn selected_grads<T: Scalar>(
    names: &[String],
    vars: &[Var<'_, T>],
    grads: &crate::tensor::Gradients<T>,
    select: &dyn Fn(&str) -> bool,
) -> Vec<Tensor<T>> {
    names
        .iter()
        .zip(vars)
        .filter(|(n, _)| select(n))
        .map(|(_, v)| grads.wrt(v))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
struct Best<T> {
    score: f64,
    epoch: usize,
    model: Model<T>,
    posterior: Option<PosteriorParams<T>>,
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer<T> {
    pub kind: ModelKind,
    pub model_config: ModelConfig,
    pub config: TrainConfig,
    pub model: Model<T>,
    pub posterior: Option<PosteriorParams<T>>,
    adam_cond: AdamState<T>,
    adam_prior: AdamState<T>,
    rng: ChaCha8Rng,
    pub epoch: usize,
    pub history: Vec<EpochLog>,
    best: Option<Best<T>>,
    stale: usize,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh conditional model for `P` targets and `Q` covariates.
    pub fn staticonf(model_config: &ModelConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        model_config.encoder.validate()?;
        model_config.dynamics.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let enc = &model_config.encoder;
        let cond = ConditionalParams::init(enc, &mut rng)?;
        let dynamics = DynamicsParams::init(&model_config.dynamics, enc.targets, enc.latent)?;
        Ok(Trainer {
            kind: ModelKind::Staticonf,
            model_config: model_config.clone(),
            config: config.clone(),
            model: Model {
                kind: ModelKind::Staticonf,
                cond,
                dynamics,
            },
            posterior: None,
            adam_cond: AdamState::new(AdamConfig::default()),
            adam_prior: AdamState::new(AdamConfig::default()),
            rng,
            epoch: 0,
            history: Vec::new(),
            best: None,
            stale: 0,
        })
    }

    /// Dynamic model starting from a trained conditional model; the
    /// posterior covers `horizon` transitions.
    pub fn dynaconf(init: &Checkpoint, config: &TrainConfig, horizon: usize) -> Result<Self> {
        config.validate()?;
        let model_config = init.meta.model_config.clone();
        model_config.posterior.validate()?;
        let base: Model<T> = init.model()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d1a0);
        let enc = &model_config.encoder;
        let mut dynamics = DynamicsParams::init(&model_config.dynamics, enc.targets, enc.latent)?;
        dynamics.b_phi = base.dynamics.b_phi.clone();
        let posterior = PosteriorParams::init(&model_config.posterior, horizon, enc.latent_total(), &mut rng)?;
        Ok(Trainer {
            kind: ModelKind::Dynaconf,
            model_config,
            config: config.clone(),
            model: Model {
                kind: ModelKind::Dynaconf,
                cond: base.cond,
                dynamics,
            },
            posterior: Some(posterior),
            adam_cond: AdamState::new(AdamConfig::default()),
            adam_prior: AdamState::new(AdamConfig::default()),
            rng,
            epoch: 0,
            history: Vec::new(),
            best: None,
            stale: 0,
        })
    }

    fn max_epochs(&self) -> usize {
        match self.kind {
            ModelKind::Staticonf => self.config.epochs,
            ModelKind::Dynaconf => self.config.dynamic_epochs,
        }
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.max_epochs() || (self.best.is_some() && self.stale >= self.config.patience)
    }

    fn lr(&self, peak: f64, step: u64) -> Result<T> {
        if !self.config.one_cycle {
            return Ok(T::c(peak));
        }
        let total = (self.max_epochs() * self.config.updates_per_epoch).max(1);
        let s = OneCycleSchedule::new(total, peak);
        Ok(T::c(s.lr((step as usize).min(total - 1))?))
    }

    fn draw_batch(&mut self, n: usize) -> Vec<usize> {
        (0..self.config.batch_size).map(|_| self.rng.gen_range(0..n)).collect()
    }

    fn draw_dims(&mut self) -> Result<Option<Vec<usize>>> {
        let p = self.model.targets();
        match self.config.dim_subsample {
            Some(k) if k < p => Ok(Some(subsample_dims(p, k, &mut self.rng)?)),
            _ => Ok(None),
        }
    }

    /// One update of the conditional model (and `b_phi`) on a minibatch.
    fn conditional_update(&mut self, windows: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
        let n = targets.rows();
        let batch = self.draw_batch(n);
        let dims = self.draw_dims()?;
        let freeze = self.config.freeze_encoder;
        let select = move |name: &str| {
            name == "dynamics.b_phi" || (!name.starts_with("dynamics.") && !(freeze && name.starts_with("encoder.")))
        };
        let names = self.model.names();
        let tape = Tape::new();
        let (cond, mut vars) = self.model.cond.bind(&tape, &|n| select(n));
        let (dynb, dvars) = self.model.dynamics.bind(&tape, &|n| select(n));
        vars.extend(dvars);
        let per_step = match self.kind {
            ModelKind::Staticonf => {
                let z = cond.project(cond.encode(&gather(windows, &batch)));
                let (mu, sigma) = cond.emit_static(z, dynb.b_phi);
                let y = tape.constant(gather(targets, &batch));
                let p = self.model.targets();
                let scale = dims.as_ref().map_or(1.0, |d| p as f64 / d.len() as f64);
                loglik_on_tape(y, mu, sigma, dims.as_deref()).scale(T::c(scale / batch.len() as f64))
            }
            ModelKind::Dynaconf => {
                let posterior = self.posterior.as_ref().expect("dynamic trainer has a posterior");
                let (post, _) = posterior.bind(&tape, &|_| false);
                let data = ElboData { windows, targets };
                elbo(
                    &cond,
                    &dynb,
                    &post,
                    &data,
                    &batch,
                    self.config.n_mc,
                    dims.as_deref(),
                    &mut self.rng,
                )?
                .scale(T::c(1.0 / n as f64))
            }
        };
        let loss = -per_step;
        let value = loss.item().f64();
        if !value.is_finite() {
            return Err(non_finite(value));
        }
        let grads = backward(&tape, loss)?;
        let mut g = selected_grads(&names, &vars, &grads, &select);
        clip_global_norm(&mut g, T::c(self.config.grad_clip));
        let lr = self.lr(self.config.lr, self.adam_cond.step_count())?;
        self.adam_cond.update_selected(&mut self.model, &select, &g, lr)?;
        Ok(value)
    }

    /// One update of the prior and posterior on the whole training range.
    fn prior_update(&mut self, windows: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
        let n = targets.rows();
        let select =
            |name: &str| (name.starts_with("dynamics.") && name != "dynamics.b_phi") || name.starts_with("posterior.");
        let posterior = self.posterior.as_mut().expect("dynamic trainer has a posterior");
        let mut names = self.model.names();
        names.extend(posterior.names());
        let tape = Tape::new();
        let (cond, mut vars) = self.model.cond.bind(&tape, &|_| false);
        let (dynb, dvars) = self.model.dynamics.bind(&tape, &|n| select(n));
        let (post, pvars) = posterior.bind(&tape, &|n| select(n));
        vars.extend(dvars);
        vars.extend(pvars);
        let all: Vec<usize> = (0..n).collect();
        let data = ElboData { windows, targets };
        let loss =
            -elbo(&cond, &dynb, &post, &data, &all, self.config.n_mc, None, &mut self.rng)?.scale(T::c(1.0 / n as f64));
        let value = loss.item().f64();
        if !value.is_finite() {
            return Err(non_finite(value));
        }
        let grads = backward(&tape, loss)?;
        let mut g = selected_grads(&names, &vars, &grads, &select);
        clip_global_norm(&mut g, T::c(self.config.grad_clip));
        let lr = self.lr(self.config.prior_lr, self.adam_prior.step_count())?;
        let mut joint = Joint {
            model: &mut self.model,
            posterior: self.posterior.as_mut(),
        };
        self.adam_prior.update_selected(&mut joint, &select, &g, lr)?;
        Ok(value)
    }

    fn validation_crps(&mut self, data: &TrainData<'_, T>) -> Result<Option<f64>> {
        let Some(val_end) = data.val_end else {
            return Ok(None);
        };
        let h = self.config.validation_horizon.max(1);
        let n_windows = val_end.saturating_sub(data.train_end) / h;
        if n_windows == 0 || self.config.validation_paths < 2 {
            return Ok(None);
        }
        let fc = ForecastConfig {
            horizon: h,
            n_windows,
            n_paths: self.config.validation_paths,
            particles: 1,
        };
        let out = rolling_forecast(&self.model, data.series, data.train_end, &fc, &mut self.rng)?;
        let blocks: Vec<_> = out.iter().map(|r| r.samples.clone()).collect();
        let truths: Vec<Tensor<f64>> = out
            .iter()
            .map(|r| data.series.rows(r.origin, r.origin + h).cast())
            .collect();
        Ok(Some(evaluate_rolling(0, &blocks, &truths)?.overall.crps))
    }

    fn epoch_inner(&mut self, data: &TrainData<'_, T>) -> Result<EpochLog> {
        let b = self.model.window();
        if data.train_end <= b + 1 || data.train_end > data.series.len() {
            return Err(Error::contract("training range shorter than the conditioning window"));
        }
        let windows = data.series.windows(b, data.train_end, b);
        let targets = data.series.rows(b, data.train_end);
        if let Some(p) = &self.posterior {
            if p.horizon() != targets.rows() {
                return Err(Error::contract(format!(
                    "posterior covers {} steps but the training range has {}",
                    p.horizon(),
                    targets.rows()
                )));
            }
        }
        let updates = self.config.updates_per_epoch;
        let mut loss = 0.0;
        for _ in 0..updates {
            let l = self.conditional_update(&windows, &targets)?;
            if self.kind == ModelKind::Staticonf {
                loss += l;
            }
        }
        if self.kind == ModelKind::Dynaconf {
            for _ in 0..updates {
                loss += self.prior_update(&windows, &targets)?;
            }
        }
        loss /= updates as f64;
        let validation_crps = match self.kind {
            ModelKind::Staticonf => self.validation_crps(data)?,
            ModelKind::Dynaconf => None,
        };
        let score = validation_crps.unwrap_or(loss);
        if !score.is_finite() {
            return Err(non_finite(score));
        }
        if self.best.as_ref().is_none_or(|b| score < b.score) {
            self.best = Some(Best {
                score,
                epoch: self.epoch,
                model: self.model.clone(),
                posterior: self.posterior.clone(),
            });
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        let log = EpochLog {
            epoch: self.epoch,
            loss,
            validation_crps,
        };
        self.epoch += 1;
        self.history.push(log.clone());
        Ok(log)
    }

    /// Runs one epoch. A non-finite loss leaves `self` untouched and reports
    /// the state from before the epoch.
    pub fn run_epoch(&mut self, data: &TrainData<'_, T>) -> Result<EpochLog> {
        let snapshot = self.clone();
        match self.epoch_inner(data) {
            Ok(log) => Ok(log),
            Err(e @ Error::Numerical { .. }) => {
                *self = snapshot;
                Err(Error::Diverged {
                    epoch: self.epoch,
                    reason: e.to_string(),
                    last_finite: Box::new(self.checkpoint()),
                })
            }
            Err(e) => {
                *self = snapshot;
                Err(e)
            }
        }
    }

    /// Trains until the epoch budget or patience runs out and returns the
    /// best parameters seen.
    pub fn fit(mut self, data: &TrainData<'_, T>) -> Result<Checkpoint> {
        while !self.is_done() {
            self.run_epoch(data)?;
        }
        Ok(self.finish())
    }

    /// Checkpoint of the best parameters seen so far.
    pub fn finish(mut self) -> Checkpoint {
        if let Some(best) = self.best.take() {
            self.model = best.model.clone();
            self.posterior = best.posterior.clone();
            self.best = Some(best);
        }
        self.checkpoint()
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.epoch)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = CheckpointMeta {
            kind: self.kind,
            model_config: self.model_config.clone(),
            train_config: self.config.clone(),
            config_hash: training_hash(self.kind, &self.model_config, &self.config),
            epoch: self.epoch,
            horizon: self.posterior.as_ref().map(|p| p.horizon()),
            rng: RngState::capture(&self.rng),
            history: self.history.clone(),
            best_score: self.best.as_ref().map(|b| b.score),
            best_epoch: self.best.as_ref().map(|b| b.epoch),
            stale: self.stale,
            adam_cond_steps: self.adam_cond.step_count(),
            adam_prior_steps: self.adam_prior.step_count(),
        };
        let mut a = Archive::new(serde_json::Value::Null);
        a.push_params("model.", &self.model);
        if let Some(p) = &self.posterior {
            a.push_params("", p);
        }
        if let Some(best) = &self.best {
            a.push_params("best.model.", &best.model);
            if let Some(p) = &best.posterior {
                a.push_params("best.", p);
            }
        }
        for (tag, adam) in [("cond", &self.adam_cond), ("prior", &self.adam_prior)] {
            for (k, (m, v)) in adam.first_moments().iter().zip(adam.second_moments()).enumerate() {
                a.push(format!("adam.{tag}.m.{k}"), m);
                a.push(format!("adam.{tag}.v.{k}"), v);
            }
        }
        Checkpoint { meta, blobs: a.blobs }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = &ck.meta;
        let archive = ck.archive(serde_json::Value::Null);
        let model: Model<T> = ck.params_model("model.")?;
        let posterior = match meta.horizon {
            Some(h) => Some(ck.params_posterior("", h)?),
            None => None,
        };
        let best = match (meta.best_score, meta.best_epoch) {
            (Some(score), Some(epoch)) => Some(Best {
                score,
                epoch,
                model: ck.params_model("best.model.")?,
                posterior: match meta.horizon {
                    Some(h) => Some(ck.params_posterior("best.", h)?),
                    None => None,
                },
            }),
            _ => None,
        };
        let adam = |tag: &str, steps: u64| -> Result<AdamState<T>> {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for k in 0.. {
                match (
                    archive.get(&format!("adam.{tag}.m.{k}")),
                    archive.get(&format!("adam.{tag}.v.{k}")),
                ) {
                    (Some(a), Some(b)) => {
                        m.push(a.cast());
                        v.push(b.cast());
                    }
                    _ => break,
                }
            }
            AdamState::from_parts(AdamConfig::default(), m, v, steps)
        };
        Ok(Trainer {
            kind: meta.kind,
            model_config: meta.model_config.clone(),
            config: meta.train_config.clone(),
            model,
            posterior,
            adam_cond: adam("cond", meta.adam_cond_steps)?,
            adam_prior: adam("prior", meta.adam_prior_steps)?,
            rng: meta.rng.restore()?,
            epoch: meta.epoch,
            history: meta.history.clone(),
            best,
            stale: meta.stale,
        })
    }
}

fn non_finite(v: f64) -> Error {
    Error::Numerical {
        node: 0,
        op: "loss",
        detail: format!("loss evaluated to {v}"),
    }
}

fn gather<T: Scalar>(t: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let mut data = Vec::with_capacity(rows.len() * t.cols());
    for &r in rows {
        data.extend_from_slice(t.row_slice(r));
    }
    Tensor::new(rows.len(), t.cols(), data)
}

pub fn training_hash(kind: ModelKind, model: &ModelConfig, train: &TrainConfig) -> String {
    config_hash(&serde_json::json!({ "kind": kind, "model": model, "train": train }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub config_hash: String,
    pub epoch: usize,
    /// Posterior length in transitions, for dynamic models.
    pub horizon: Option<usize>,
    pub rng: RngState,
    pub history: Vec<EpochLog>,
    pub best_score: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stale: usize,
    pub adam_cond_steps: u64,
    pub adam_prior_steps: u64,
}

/// Serializable training state, stored in `f64` whatever the scalar type.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub blobs: Vec<crate::checkpoint::Blob>,
}

impl Checkpoint {
    fn archive(&self, header: serde_json::Value) -> Archive {
        Archive {
            header,
            blobs: self.blobs.clone(),
        }
    }

    fn params_model<T: Scalar>(&self, prefix: &str) -> Result<Model<T>> {
        let cfg = &self.meta.model_config;
        // shapes come from the config; values are overwritten below
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model {
            kind: self.meta.kind,
            cond: ConditionalParams::init(&cfg.encoder, &mut rng)?,
            dynamics: DynamicsParams::init(&cfg.dynamics, cfg.encoder.targets, cfg.encoder.latent)?,
        };
        self.archive(serde_json::Value::Null).fill_params(prefix, &mut model)?;
        Ok(model)
    }

    fn params_posterior<T: Scalar>(&self, prefix: &str, horizon: usize) -> Result<PosteriorParams<T>> {
        let cfg = &self.meta.model_config;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = PosteriorParams::init(&cfg.posterior, horizon, cfg.encoder.latent_total(), &mut rng)?;
        self.archive(serde_json::Value::Null).fill_params(prefix, &mut p)?;
        Ok(p)
    }

    /// The trained model (the best parameters for a finished run).
    pub fn model<T: Scalar>(&self) -> Result<Model<T>> {
        self.params_model("model.")
    }

    pub fn posterior<T: Scalar>(&self) -> Result<Option<PosteriorParams<T>>> {
        self.meta.horizon.map(|h| self.params_posterior("", h)).transpose()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_value(&self.meta).expect("metadata serializes");
        self.archive(header).to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let a = Archive::from_bytes(bytes)?;
        let meta = serde_json::from_value(a.header).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        Ok(Checkpoint { meta, blobs: a.blobs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Conditional model trained by maximum likelihood.
pub fn train_staticonf<T: Scalar>(
    data: &TrainData<'_, T>,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    Trainer::<T>::staticonf(model_config, config)?.fit(data)
}

/// Dynamic model initialised from a trained conditional model.
pub fn train_dynaconf<T: Scalar>(
    data: &TrainData<'_, T>,
    init: &Checkpoint,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    let horizon = data.train_end.saturating_sub(init.meta.model_config.encoder.window);
    Trainer::<T>::dynaconf(init, config, horizon)?.fit(data)
}
