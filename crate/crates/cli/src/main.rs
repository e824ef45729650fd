use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dynaconf::conditional::EncoderVariant;
use dynaconf::data;
use dynaconf::experiment::{self, DatasetConfig, ExperimentConfig};
use dynaconf::metrics::MetricReport;
use dynaconf::model::ModelKind;
use dynaconf::posterior::PosteriorKind;
use dynaconf::synthetic::{generate, ProcessKind, SyntheticSpec};
use dynaconf::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "dynaconf",
    version,
    about = "Forecasting with dynamic conditional distributions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark series as a dataset CSV.
    Generate {
        #[arg(long, value_parser = parse_process)]
        dataset: ProcessKind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2500)]
        length: usize,
        /// Destination CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also write the true coefficients, one row per time step.
        #[arg(long)]
        coefficients: Option<PathBuf>,
    },
    /// Train every seed and store checkpoints.
    Train(Opts),
    /// Rolling forecasts from stored checkpoints.
    Forecast(Opts),
    /// Score stored forecasts.
    Evaluate(Opts),
    /// Train, forecast and evaluate in one go.
    Run(Opts),
    /// Write the latent posterior trace of a trained dynamic model.
    InspectLatent {
        #[command(flatten)]
        opts: Opts,
        /// Trace destination (default: latent_trace.csv in the seed directory).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Pp,
    Mlp,
    Lstm,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Staticonf,
    Dynaconf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PosteriorArg {
    Ar,
    Iaf,
}

#[derive(Args, Clone)]
struct Opts {
    /// TOML or JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic process name or dataset CSV path.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long, value_enum)]
    encoder: Option<EncoderArg>,
    #[arg(long, value_enum)]
    posterior: Option<PosteriorArg>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    /// Output root (overrides the config and DYNACONF_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_process(s: &str) -> std::result::Result<ProcessKind, String> {
    ProcessKind::parse(s).ok_or_else(|| format!("unknown process `{s}` (ar1-flip, ar1-dynamic, ar1-sin, var1-dynamic)"))
}

impl Opts {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = match ProcessKind::parse(d) {
                Some(kind) => DatasetConfig::Synthetic(SyntheticSpec {
                    kind,
                    ..match &cfg.dataset {
                        DatasetConfig::Synthetic(s) => s.clone(),
                        DatasetConfig::Csv { .. } => SyntheticSpec::default(),
                    }
                }),
                None => DatasetConfig::Csv {
                    path: PathBuf::from(d),
                    train_end: None,
                    val_end: None,
                },
            };
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(m) = self.model {
            cfg.model = match m {
                ModelArg::Staticonf => ModelKind::Staticonf,
                ModelArg::Dynaconf => ModelKind::Dynaconf,
            };
        }
        if let Some(e) = self.encoder {
            cfg.encoder.variant = match e {
                EncoderArg::Pp => EncoderVariant::Pointwise,
                EncoderArg::Mlp => EncoderVariant::Mlp,
                EncoderArg::Lstm => EncoderVariant::Recurrent,
            };
        }
        if let Some(p) = self.posterior {
            cfg.posterior.kind = match p {
                PosteriorArg::Ar => PosteriorKind::Ar,
                PosteriorArg::Iaf => PosteriorKind::Iaf,
            };
        }
        let f = &mut cfg.forecast;
        f.particles = self.particles.unwrap_or(f.particles);
        f.horizon = self.horizon.unwrap_or(f.horizon);
        f.n_windows = self.windows.unwrap_or(f.n_windows);
        f.n_paths = self.paths.unwrap_or(f.n_paths);
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_report(report: &MetricReport, dir: &Path) {
    println!("{} on {} ({} seeds)", report.model, report.dataset, report.seeds.len());
    for (name, s) in &report.summary {
        println!("  {name:<10} {:.4} +/- {:.4}", s.mean, s.std);
    }
    println!("artifacts: {}", dir.display());
}

fn write_generated(kind: ProcessKind, seed: u64, length: usize, out: &Path, coefficients: Option<&Path>) -> Result<()> {
    let spec = SyntheticSpec {
        length,
        ..SyntheticSpec::new(kind)
    };
    let g = generate(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
    data::write_csv(out, &g.series)?;
    if let Some(path) = coefficients {
        let p = g.series.targets();
        let mut text = String::from("t");
        for i in 0..p {
            for j in 0..p {
                text.push_str(&format!(",w_{i}_{j}"));
            }
        }
        text.push('\n');
        for (t, w) in g.series.t.iter().zip(&g.coefficients) {
            text.push_str(&t.to_string());
            for v in w.data() {
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            dataset,
            seed,
            length,
            out,
            coefficients,
        } => write_generated(dataset, seed, length, &out, coefficients.as_deref()),
        Command::Train(o) => {
            let dir = experiment::train_stage(&o.resolve()?)?;
            println!("checkpoints: {}", dir.display());
            Ok(())
        }
        Command::Forecast(o) => {
            let dir = experiment::forecast_stage(&o.resolve()?)?;
            println!("forecasts: {}", dir.display());
            Ok(())
        }
        Command::Evaluate(o) => {
            let cfg = o.resolve()?;
            let report = experiment::evaluate_stage(&cfg)?;
            print_report(&report, &cfg.run_dir());
            Ok(())
        }
        Command::Run(o) => {
            let out = experiment::run_experiment(&o.resolve()?)?;
            print_report(&out.report, &out.dir);
            println!("persistence crps {:.4}", out.baseline.mean("crps"));
            Ok(())
        }
        Command::InspectLatent { opts, trace } => {
            let cfg = opts.resolve()?;
            for &seed in &cfg.seeds {
                let path = if cfg.seeds.len() > 1 {
                    trace.as_ref().map(|t| t.with_extension(format!("seed-{seed}.csv")))
                } else {
                    trace.clone()
                };
                let written = experiment::inspect_latent_stage(&cfg, seed, path.as_deref())?;
                println!("trace: {}", written.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = u8::try_from(e.exit_code()).unwrap_or(1);
            ExitCode::from(code)
        }
    }
}
