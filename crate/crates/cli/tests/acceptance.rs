//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

#[path = "../../core/tests/properties/mod.rs"]
mod properties;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use dynaconf::metrics::{evaluate_rolling, MetricReport};
use dynaconf::synthetic::{generate, oracle_forecast, ProcessKind, SyntheticSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];
const HORIZON: usize = 10;
const WINDOWS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dynaconf"))
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "dynaconf {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn artifacts_dir(stdout: &str) -> Result<PathBuf, String> {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("artifacts: "))
        .map(PathBuf::from)
        .ok_or_else(|| format!("no artifacts line in:\n{stdout}"))
}

/// `run` over the three seeds; returns the report, the run directory and
/// the wall time.
fn benchmark(root: &Path, process: &str, model: &str) -> Result<(MetricReport, PathBuf, Duration), String> {
    let start = Instant::now();
    let stdout = run_cli(&[
        "run",
        "--dataset",
        process,
        "--model",
        model,
        "--seeds",
        "1,2,3",
        "--out",
        root.to_str().unwrap(),
    ])?;
    let elapsed = start.elapsed();
    let dir = artifacts_dir(&stdout)?;
    let report = MetricReport::read_json(&dir.join("report.json")).map_err(|e| e.to_string())?;
    Ok((report, dir, elapsed))
}

fn gain(stat: f64, dynamic: f64) -> f64 {
    (stat - dynamic) / stat
}

fn oracle_scores() -> Outcome {
    let start = Instant::now();
    let targets = [
        (ProcessKind::Ar1Flip, 0.731),
        (ProcessKind::Ar1Sin, 0.710),
        (ProcessKind::Ar1Dynamic, 0.624),
        (ProcessKind::Var1Dynamic, 0.496),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, paper) in targets {
        let mut total = 0.0;
        for seed in SEEDS {
            let g = match generate(&SyntheticSpec::new(kind), &mut ChaCha8Rng::seed_from_u64(seed)) {
                Ok(g) => g,
                Err(e) => return check(false, e.to_string()),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut blocks = Vec::new();
            let mut truths = Vec::new();
            for k in 0..WINDOWS {
                let origin = g.splits.val_end + k * HORIZON;
                blocks.push(oracle_forecast(&g, origin, HORIZON, 1000, &mut rng).expect("window inside series"));
                truths.push(g.series.rows(origin, origin + HORIZON));
            }
            total += evaluate_rolling(seed, &blocks, &truths)
                .expect("consistent windows")
                .overall
                .ncrps;
        }
        let mean = total / SEEDS.len() as f64;
        let ok = (mean - paper).abs() <= 0.02;
        pass &= ok;
        parts.push(format!(
            "{} {mean:.3} (target {paper} +/- 0.02{})",
            kind.name(),
            if ok { "" } else { ", off" }
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    check(pass, format!("{}; {secs:.0}s", parts.join(", ")))
}

fn flip(root: &Path) -> Result<Outcome, String> {
    let (d, _, t) = benchmark(root, "ar1-flip", "dynaconf")?;
    let (s, _, _) = benchmark(root, "ar1-flip", "staticonf")?;
    let (dc, sc) = (d.mean("ncrps"), s.mean("ncrps"));
    let per_seed = t.as_secs_f64() / SEEDS.len() as f64;
    let pass = dc <= 0.755 && (dc - 0.737).abs() <= 0.03 && (0.72..=0.79).contains(&sc) && per_seed < 1800.0;
    Ok(check(
        pass,
        format!(
            "DynaConF {dc:.4} (<= 0.755, 0.737 +/- 0.03), StatiConF {sc:.4} (in [0.72, 0.79]); {per_seed:.0}s per seed"
        ),
    ))
}

fn sin_and_dynamic(root: &Path) -> Result<(Outcome, PathBuf), String> {
    let (ds, sin_dir, _) = benchmark(root, "ar1-sin", "dynaconf")?;
    let (ss, _, _) = benchmark(root, "ar1-sin", "staticonf")?;
    let (dd, _, _) = benchmark(root, "ar1-dynamic", "dynaconf")?;
    let (sd, _, _) = benchmark(root, "ar1-dynamic", "staticonf")?;
    let g_sin = gain(ss.mean("ncrps"), ds.mean("ncrps"));
    let g_dyn = gain(sd.mean("ncrps"), dd.mean("ncrps"));
    Ok((
        check(
            g_sin >= 0.03 && g_dyn >= 0.10,
            format!(
                "Sin {:.4} -> {:.4} ({:.1}%, >= 3%), Dynamic {:.4} -> {:.4} ({:.1}%, >= 10%)",
                ss.mean("ncrps"),
                ds.mean("ncrps"),
                100.0 * g_sin,
                sd.mean("ncrps"),
                dd.mean("ncrps"),
                100.0 * g_dyn
            ),
        ),
        sin_dir,
    ))
}

fn var(root: &Path) -> Result<Outcome, String> {
    let (d, _, _) = benchmark(root, "var1-dynamic", "dynaconf")?;
    let (s, _, _) = benchmark(root, "var1-dynamic", "staticonf")?;
    let (c, cs, mse) = (d.mean("ncrps"), d.mean("ncrps_sum"), d.mean("mse"));
    let g = gain(s.mean("ncrps"), c);
    let gs = gain(s.mean("ncrps_sum"), cs);
    let pass = c <= 0.70 && cs <= 0.65 && g >= 0.15 && gs >= 0.15 && mse <= 5.5;
    Ok(check(
        pass,
        format!(
            "CRPS {c:.4} (<= 0.70), CRPS_sum {cs:.4} (<= 0.65), gains {:.1}% / {:.1}% (>= 15%), MSE {mse:.3} (<= 5.5)",
            100.0 * g,
            100.0 * gs
        ),
    ))
}

fn real_data_path(root: &Path) -> Result<Outcome, String> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo8.toml");
    let start = Instant::now();
    let stdout = run_cli(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        root.to_str().unwrap(),
    ])?;
    let secs = start.elapsed().as_secs_f64();
    let dir = artifacts_dir(&stdout)?;
    let model = MetricReport::read_json(&dir.join("report.json")).map_err(|e| e.to_string())?;
    let naive = MetricReport::read_json(&dir.join("baseline.json")).map_err(|e| e.to_string())?;
    let (m, b) = (model.mean("crps"), naive.mean("crps"));
    Ok(check(
        secs < 1200.0 && m < b,
        format!("CRPS {m:.3} vs persistence {b:.3}; {secs:.0}s (< 1200s)"),
    ))
}

type Suite = (&'static str, fn() -> properties::Check);

fn property_suites() -> Outcome {
    let start = Instant::now();
    let suites: [Suite; 10] = [
        ("autodiff", || properties::autodiff_matches_finite_differences(100)),
        ("elbo bound", properties::elbo_below_log_marginal),
        ("elbo gradient", properties::elbo_gradient_matches_finite_differences),
        ("iaf jacobian", properties::iaf_log_jacobian),
        ("rbpf conjugate", properties::rbpf_conjugate_regression),
        ("rbpf kalman", properties::rbpf_single_particle_kalman),
        ("rbpf ensemble", properties::rbpf_many_particles),
        ("crps", properties::crps_forms_agree),
        ("var stability", properties::var_generator_is_stable),
        ("determinism", properties::runs_are_bit_identical),
    ];
    let mut failed = Vec::new();
    for (name, suite) in suites {
        match suite() {
            Ok(summary) => println!("    {name}: {summary}"),
            Err(e) => {
                println!("    {name}: FAILED {e}");
                failed.push(name);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        failed.is_empty() && secs < 300.0,
        format!("{} of 10 suites passed; {secs:.1}s (< 300s)", 10 - failed.len()),
    )
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Correlates every traced component with the true coefficient over the
/// test rows and reports the best one per seed.
fn latent_trace(root: &Path, sin_dir: &Path) -> Result<Outcome, String> {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let trace = root.join(format!("trace-{seed}.csv"));
        run_cli(&[
            "inspect-latent",
            "--dataset",
            "ar1-sin",
            "--seed",
            &seed.to_string(),
            "--out",
            root.to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
        ])?;
        let coef = root.join(format!("coef-{seed}.csv"));
        run_cli(&[
            "generate",
            "--dataset",
            "ar1-sin",
            "--seed",
            &seed.to_string(),
            "--out",
            root.join(format!("sin-{seed}.csv")).to_str().unwrap(),
            "--coefficients",
            coef.to_str().unwrap(),
        ])?;
        let data = std::fs::read(root.join(format!("sin-{seed}.csv"))).map_err(|e| e.to_string())?;
        let trained_on = std::fs::read(sin_dir.join(format!("seed-{seed}/data.csv"))).map_err(|e| e.to_string())?;
        if data != trained_on {
            return Err(format!("seed {seed}: regenerated series differs from the trained one"));
        }
        let truth: Vec<(i64, f64)> = csv_rows(&coef)?.iter().map(|r| (r[0] as i64, r[1])).collect();
        let test_start = truth[SyntheticSpec::new(ProcessKind::Ar1Sin).length * 3 / 5].0;
        let rows = csv_rows(&trace)?;
        let components = rows.iter().map(|r| r[1] as usize).max().unwrap_or(0) + 1;
        let mut best: f64 = 0.0;
        for c in 0..components {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for r in rows.iter().filter(|r| r[1] as usize == c && r[0] as i64 >= test_start) {
                let t = r[0] as i64;
                let w = truth
                    .iter()
                    .find(|(tt, _)| *tt == t)
                    .map(|p| p.1)
                    .ok_or("trace row outside the series")?;
                xs.push(r[2]);
                ys.push(w);
            }
            let rho = pearson(&xs, &ys);
            if rho.abs() > best.abs() {
                best = rho;
            }
        }
        pass &= best.abs() > 0.5;
        parts.push(format!("seed {seed} rho {best:+.3}"));
    }
    Ok(check(
        pass,
        format!("{} (|rho| > 0.5 over test rows)", parts.join(", ")),
    ))
}

fn csv_rows(path: &Path) -> Result<Vec<Vec<f64>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .map(|v| v.parse::<f64>().map_err(|e| e.to_string()))
                .collect()
        })
        .collect()
}

fn report(label: &str, outcome: Result<Outcome, String>, all: &mut bool) {
    let o = outcome.unwrap_or_else(|e| check(false, e));
    *all &= o.pass;
    println!("{} {label}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let mut all = true;
    report("1 oracle scores", Ok(oracle_scores()), &mut all);
    report("2 AR(1)-Flip", flip(root), &mut all);
    let sin_dir = match sin_and_dynamic(root) {
        Ok((o, dir)) => {
            report("3 AR(1)-Sin and AR(1)-Dynamic gains", Ok(o), &mut all);
            Some(dir)
        }
        Err(e) => {
            report("3 AR(1)-Sin and AR(1)-Dynamic gains", Err(e), &mut all);
            None
        }
    };
    report("4 VAR(1)-Dynamic", var(root), &mut all);
    report("5 eight-dimensional CSV run", real_data_path(root), &mut all);
    report("6 property suites", Ok(property_suites()), &mut all);
    let trace = match &sin_dir {
        Some(dir) => latent_trace(root, dir),
        None => Err("no AR(1)-Sin run to inspect".into()),
    };
    report("7 latent trace follows the sine", trace, &mut all);
    if !all {
        std::process::exit(1);
    }
}
