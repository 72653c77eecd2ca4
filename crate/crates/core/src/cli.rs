//! The `lfpp` command line: sampling, mollification, distances, scaling
//! tables and experiments. Exit codes: 0 success or all checks passed,
//! 1 an experiment check failed, 2 usage, configuration or precondition
//! errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::experiments::{self, ExperimentConfig};
use crate::gff::{heat_mollify, localized_mollify, sample_torus};
use crate::grid::{GridField, GridSpec};
use crate::lfpp::{build_graph_valid, enumerate_shortest, Distance, MetricGraph};
use crate::manifest::RunManifest;
use crate::scaling::{estimate_a_eps, CrossingOptions, ScalingTable};

pub const SEED_ENV: &str = "LFPP_SEED";

#[derive(Parser, Debug)]
#[command(name = "lfpp", version, about = "Liouville first passage percolation on mollified Gaussian free fields")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kernel {
    Heat,
    Localized,
    /// Use the snapshot values as the mollified field.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Oracle {
    Dijkstra,
    Enumerate,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a whole-plane GFF approximation and write an LFP1 snapshot.
    Sample {
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        ny: usize,
        #[arg(long)]
        spacing: f64,
        #[arg(long, value_parser = parse_point, default_value = "0,0", allow_hyphen_values = true)]
        origin: Complex64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        torus_factor: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mollify a snapshot.
    Mollify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long, value_enum, default_value = "heat")]
        kernel: Kernel,
        #[arg(long)]
        out: PathBuf,
    },
    /// LFPP distances between query pairs read from a CSV with columns
    /// `zx,zy,wx,wy`.
    Dist {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 0.2)]
        xi: f64,
        #[arg(long, value_enum, default_value = "heat")]
        kernel: Kernel,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add an `a_eps`-normalized column from this table.
        #[arg(long)]
        scaling_table: Option<PathBuf>,
        /// Write disconnected queries as `inf` instead of failing.
        #[arg(long)]
        allow_inf: bool,
        /// Directory for one polyline CSV per geodesic.
        #[arg(long)]
        geodesics: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "dijkstra")]
        oracle: Oracle,
    },
    /// Distance around the closed annulus `A_{r1,r2}(x)`.
    Around {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 0.2)]
        xi: f64,
        #[arg(long, value_enum, default_value = "heat")]
        kernel: Kernel,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        x: Complex64,
        #[arg(long)]
        r1: f64,
        #[arg(long)]
        r2: f64,
    },
    /// Estimate the median crossing distance `a_eps` on a dyadic schedule.
    Aeps {
        /// Comma-separated eps values.
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 0.2)]
        xi: f64,
        /// Fixed lattice spacing; defaults to eps / spacing-per-eps.
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long, default_value_t = 4.0)]
        spacing_per_eps: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        torus_factor: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit `q_hat` from a scaling table and run the regular-variation check.
    FitQ {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Ratio used by the regular-variation check.
        #[arg(long, default_value_t = 0.5)]
        check: f64,
        /// JSON output; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named experiment from a TOML config.
    Experiment {
        name: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn parse_point(s: &str) -> std::result::Result<Complex64, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected `x,y`, got `{s}`"));
    }
    let x = parts[0].parse::<f64>().map_err(|e| e.to_string())?;
    let y = parts[1].parse::<f64>().map_err(|e| e.to_string())?;
    Ok(Complex64::new(x, y))
}

/// Failure of a command, mapped to an exit code.
#[derive(Debug)]
pub enum Failure {
    /// Usage, configuration or precondition problem (exit 2).
    Usage(String),
    /// A failed experiment check or computation (exit 1).
    Failed(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Failed(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Failed(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Error::from(e).into()
    }
}

/// Output files of a run, removed again if the run fails.
struct Outputs {
    manifest: RunManifest,
    manifest_path: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn begin(command: &str, config: Option<&Path>, seed: u64, manifest_path: PathBuf) -> Result<Self> {
        let mut manifest = RunManifest::new(command, config, seed);
        manifest.begin(&manifest_path)?;
        Ok(Self { manifest, manifest_path, files: Vec::new() })
    }

    fn add(&mut self, path: &Path) -> PathBuf {
        self.files.push(path.to_path_buf());
        self.manifest.outputs.push(path.to_path_buf());
        path.to_path_buf()
    }

    fn finish(mut self, status: &str) -> Result<()> {
        self.manifest.finish(&self.manifest_path, status)
    }

    fn abort(mut self) {
        for f in &self.files {
            if f.is_dir() {
                let _ = std::fs::remove_dir_all(f);
            } else {
                let _ = std::fs::remove_file(f);
            }
        }
        let _ = self.manifest.finish(&self.manifest_path, "failed");
    }
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn seed_override(seed: u64) -> std::result::Result<u64, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse::<u64>().map_err(|_| Failure::Usage(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(seed),
    }
}

/// Run `body` with partial outputs removed on failure.
fn guarded(
    command: &str,
    config: Option<&Path>,
    seed: u64,
    manifest_path: PathBuf,
    body: impl FnOnce(&mut Outputs) -> std::result::Result<String, Failure>,
) -> std::result::Result<(), Failure> {
    let mut out = Outputs::begin(command, config, seed, manifest_path)?;
    match body(&mut out) {
        Ok(status) => {
            let failed = status != "ok";
            out.finish(&status)?;
            if failed {
                return Err(Failure::Failed(status));
            }
            Ok(())
        }
        Err(e) => {
            out.abort();
            Err(e)
        }
    }
}

fn mollified(field: GridField, eps: Option<f64>, kernel: Kernel) -> Result<GridField> {
    match (kernel, eps) {
        (Kernel::None, _) => Ok(field),
        (Kernel::Heat, Some(e)) => heat_mollify(&field, e),
        (Kernel::Localized, Some(e)) => localized_mollify(&field, e),
        (_, None) => Err(Error::MissingKey("--eps".into())),
    }
}

fn graph_for(path: &Path, eps: Option<f64>, kernel: Kernel, xi: f64) -> Result<MetricGraph> {
    build_graph_valid(&mollified(GridField::load(path)?, eps, kernel)?, xi)
}

fn read_pairs(path: &Path) -> Result<Vec<(Complex64, Complex64)>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let expected = ["zx", "zy", "wx", "wy"];
    if r.headers()?.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!("{}: header must be {}", path.display(), expected.join(","))));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let v = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().map_err(|e| Error::Format(format!("{}: line {}: {e}", path.display(), line + 2)))
        };
        out.push((Complex64::new(v(0)?, v(1)?), Complex64::new(v(2)?, v(3)?)));
    }
    Ok(out)
}

fn fmt(d: Distance) -> String {
    match d {
        Distance::Finite(v) => format!("{v:.17e}"),
        Distance::Infinite => "inf".into(),
    }
}

fn cmd_sample(
    nx: usize,
    ny: usize,
    spacing: f64,
    origin: Complex64,
    seed: u64,
    torus_factor: f64,
    out: &Path,
) -> std::result::Result<(), Failure> {
    if nx < 2 || ny < 2 {
        return Err(Failure::Usage(format!("--nx and --ny must be at least 2, got {nx} x {ny}")));
    }
    let seed = seed_override(seed)?;
    let spec = GridSpec::new(nx, ny, spacing, origin)?;
    guarded("sample", None, seed, manifest_path_for(out), |o| {
        let t = sample_torus(&spec, torus_factor, seed)?;
        let field = crate::gff::sample_gff(&spec, torus_factor, seed)?;
        field.save(&o.add(out))?;
        let (lo, hi, mean) = field.summary();
        println!("nodes {} x {}, spacing {spacing}, torus {} x {}", nx, ny, t.field.spec.nx, t.field.spec.ny);
        println!("min {lo:.6} max {hi:.6} mean {mean:.6}");
        println!("unit circle average about the window center {:.3e} (normalized to 0)", t.unit_circle_average(spec.center()));
        Ok("ok".into())
    })
}

fn cmd_mollify(input: &Path, eps: f64, kernel: Kernel, out: &Path) -> std::result::Result<(), Failure> {
    guarded("mollify", None, 0, manifest_path_for(out), |o| {
        let m = mollified(GridField::load(input)?, Some(eps), kernel)?;
        m.save(&o.add(out))?;
        let (lo, hi, mean) = m.summary();
        println!("{}: valid {}/{} min {lo:.6} max {hi:.6} mean {mean:.6}", m.kind.label(), m.valid_count(), m.spec.len());
        Ok("ok".into())
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_dist(
    field: &Path,
    eps: Option<f64>,
    xi: f64,
    kernel: Kernel,
    pairs: &Path,
    out: &Path,
    table: Option<&Path>,
    allow_inf: bool,
    geodesics: Option<&Path>,
    oracle: Oracle,
) -> std::result::Result<(), Failure> {
    guarded("dist", None, 0, manifest_path_for(out), |o| {
        let g = graph_for(field, eps, kernel, xi)?;
        let a = match table {
            Some(t) => {
                let e = eps.ok_or_else(|| Error::MissingKey("--eps".into()))?;
                Some(ScalingTable::read_csv(t)?.a(e)?)
            }
            None => None,
        };
        let queries = read_pairs(pairs)?;
        let mut rows = Vec::with_capacity(queries.len());
        for (k, (z, w)) in queries.iter().enumerate() {
            let (d, path) = match oracle {
                Oracle::Dijkstra => {
                    let r = g.distance(*z, *w)?;
                    (r.raw, r.geodesic)
                }
                Oracle::Enumerate => (enumerate_shortest(&g, *z, *w, true)?.0, Vec::new()),
            };
            if !d.is_finite() && !allow_inf {
                return Err(Failure::Usage(format!("query {k}: {z} and {w} are disconnected; pass --allow-inf")));
            }
            rows.push((*z, *w, d, path));
        }
        if let Some(dir) = geodesics {
            if !dir.exists() {
                std::fs::create_dir_all(o.add(dir))?;
            }
        }
        let mut wtr = csv::Writer::from_path(o.add(out))?;
        let mut header = vec!["zx", "zy", "wx", "wy", "raw"];
        if a.is_some() {
            header.push("normalized");
        }
        wtr.write_record(&header)?;
        for (k, (z, w, d, path)) in rows.iter().enumerate() {
            let mut rec = vec![z.re.to_string(), z.im.to_string(), w.re.to_string(), w.im.to_string(), fmt(*d)];
            if let Some(a) = a {
                rec.push(fmt(match d {
                    Distance::Finite(v) => Distance::Finite(v / a),
                    Distance::Infinite => Distance::Infinite,
                }));
            }
            wtr.write_record(&rec)?;
            if let (Some(dir), false) = (geodesics, path.is_empty()) {
                let file = o.add(&dir.join(format!("geodesic_{k}.csv")));
                let mut p = csv::Writer::from_path(file)?;
                p.write_record(["x", "y"])?;
                for z in g.points(path) {
                    p.write_record([format!("{:.17e}", z.re), format!("{:.17e}", z.im)])?;
                }
                p.flush()?;
            }
        }
        wtr.flush()?;
        Ok("ok".into())
    })
}

fn cmd_around(field: &Path, eps: Option<f64>, xi: f64, kernel: Kernel, x: Complex64, r1: f64, r2: f64) -> std::result::Result<(), Failure> {
    let g = graph_for(field, eps, kernel, xi)?;
    let r = g.distance_around_annulus(x, r1, r2)?;
    println!("{}", fmt(r.raw));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_aeps(
    eps: &[f64],
    xi: f64,
    spacing: Option<f64>,
    per_eps: f64,
    samples: usize,
    seed: u64,
    torus_factor: f64,
    out: &Path,
) -> std::result::Result<(), Failure> {
    let seed = seed_override(seed)?;
    guarded("aeps", None, seed, manifest_path_for(out), |o| {
        let opts = CrossingOptions { torus_factor, ..CrossingOptions::default() };
        let mut entries = Vec::with_capacity(eps.len());
        for (k, e) in eps.iter().enumerate() {
            let s = spacing.unwrap_or(e / per_eps);
            let entry = estimate_a_eps(*e, xi, s, samples, crate::rng::derive_seed(seed, &[k as u64]), opts)?;
            println!("eps {e}: a_hat {:.6e} stderr {:.2e} (n = {samples}, spacing {s})", entry.a_hat, entry.stderr);
            entries.push(entry);
        }
        ScalingTable::new(xi, entries)?.write_csv(&o.add(out))?;
        Ok("ok".into())
    })
}

fn cmd_fit_q(table: &Path, seed: u64, check: f64, out: Option<&Path>) -> std::result::Result<(), Failure> {
    let (t, fit) = ScalingTable::read_csv(table)?.with_fit(seed)?;
    let rv = t.regular_variation_check(check)?;
    let doc = serde_json::json!({ "fit": fit, "regular_variation": rv });
    let text = serde_json::to_string_pretty(&doc).map_err(Error::from)? + "\n";
    match out {
        Some(p) => guarded("fit-q", None, seed, manifest_path_for(p), |o| {
            std::fs::write(o.add(p), &text)?;
            println!("q_hat {:.6} (95% CI {:.6} .. {:.6})", fit.q_hat, fit.q_ci.0, fit.q_ci.1);
            Ok("ok".into())
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_experiment(name: &str, config: Option<&Path>, out_dir: &Path) -> std::result::Result<(), Failure> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::from_toml("")?,
    };
    cfg.experiment.seed = seed_override(cfg.experiment.seed)?;
    if !experiments::NAMES.contains(&name) {
        return Err(Failure::Usage(format!("unknown experiment `{name}`; expected one of {}", experiments::NAMES.join(", "))));
    }
    std::fs::create_dir_all(out_dir)?;
    let manifest_path = out_dir.join(format!("{name}.manifest.json"));
    guarded(&format!("experiment {name}"), config, cfg.experiment.seed, manifest_path, |o| {
        let json = o.add(&out_dir.join(format!("{name}.json")));
        let csv = o.add(&out_dir.join(format!("{name}.csv")));
        o.manifest.write(&o.manifest_path)?;
        let mut rep = experiments::run(name, &cfg)?;
        rep.manifest = Some(o.manifest.timeless());
        rep.write_json(&json)?;
        rep.write_csv(&csv)?;
        for c in &rep.checks {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        Ok(if rep.passed() { "ok".into() } else { "checks failed".into() })
    })
}

/// Execute a parsed command line.
pub fn execute(cli: Cli) -> std::result::Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Sample { nx, ny, spacing, origin, seed, torus_factor, out } => cmd_sample(nx, ny, spacing, origin, seed, torus_factor, &out),
        Command::Mollify { input, eps, kernel, out } => cmd_mollify(&input, eps, kernel, &out),
        Command::Dist { field, eps, xi, kernel, pairs, out, scaling_table, allow_inf, geodesics, oracle } => {
            cmd_dist(&field, eps, xi, kernel, &pairs, &out, scaling_table.as_deref(), allow_inf, geodesics.as_deref(), oracle)
        }
        Command::Around { field, eps, xi, kernel, x, r1, r2 } => cmd_around(&field, eps, xi, kernel, x, r1, r2),
        Command::Aeps { eps, xi, spacing, spacing_per_eps, samples, seed, torus_factor, out } => {
            cmd_aeps(&eps, xi, spacing, spacing_per_eps, samples, seed, torus_factor, &out)
        }
        Command::FitQ { table, seed, check, out } => cmd_fit_q(&table, seed, check, out.as_deref()),
        Command::Experiment { name, config, out_dir } => cmd_experiment(&name, config.as_deref(), &out_dir),
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Failed(m) => eprintln!("{m}"),
            }
            f.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_parse() {
        assert_eq!(parse_point("0.5, -1").unwrap(), Complex64::new(0.5, -1.0));
        assert!(parse_point("1").is_err());
    }

    #[test]
    fn tiny_grid_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("f.lfp");
        let code = run(["lfpp", "sample", "--nx", "1", "--ny", "4", "--spacing", "0.1", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 2);
        assert!(!out.exists());
    }

    #[test]
    fn unknown_experiment_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(["lfpp", "experiment", "nope", "--out-dir", dir.path().to_str().unwrap()]), 2);
    }
}
