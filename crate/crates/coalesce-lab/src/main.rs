//! `coalesce-lab` - closed forms, densities, moments, simulation and
//! verification experiments for coalescing-particle cluster statistics.

use clap::{Parser, Subcommand, ValueEnum};
use coalesce_lab::analytic::{self, FlowParams};
use coalesce_lab::error::Error;
use coalesce_lab::harness::{self, ExperimentSpec};
use coalesce_lab::pfaffian::{self, PointConfig, QuadratureSpec};
use coalesce_lab::simulator::{Backend, SimConfig};
use coalesce_lab::stats;
use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "coalesce-lab",
    about = "Cluster-count statistics of coalescing Brownian particles: \
             closed forms, Pfaffian densities, Monte Carlo, verification experiments",
    after_help = "Config file: flat key=value lines (e.g. 'seed=7', 'replicas=4000'); \
                  command-line flags override file values. Exit codes: 0 all verdicts pass, \
                  2 a verdict failed, 1 execution error."
)]
struct Cli {
    /// Base RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format for experiment reports.
    #[arg(long, global = true, value_enum)]
    format: Option<OutFormat>,
    /// key=value config file; flags override file entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    RandomWalk,
    GaussBridge,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Backend {
        match b {
            BackendArg::RandomWalk => Backend::RandomWalk,
            BackendArg::GaussBridge => Backend::GaussBridge,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Closed-form table: mean, variance, second moment, limit variance.
    Analytic {
        /// Comma-separated times.
        #[arg(long)]
        t: Option<String>,
        /// Comma-separated interval lengths.
        #[arg(long)]
        u: Option<String>,
    },
    /// n-point cluster density at given points (JSON out).
    Density {
        #[arg(long)]
        t: Option<f64>,
        /// Comma-separated points.
        #[arg(long)]
        points: String,
    },
    /// Factorial-moment table by quadrature (CSV: n,t,u,value,error_estimate).
    Moments {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        u: Option<f64>,
        /// Nodes per axis (default: rule default for n).
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Replica batch; JSON-lines per replica or CSV summary.
    Simulate {
        #[arg(long)]
        u: Option<f64>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Central-limit verification across interval lengths.
    Clt {
        #[arg(long)]
        t: Option<f64>,
        /// Comma-separated interval lengths.
        #[arg(long)]
        n_grid: Option<String>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        spacing_factor: Option<f64>,
    },
    /// Convergence-rate shape check (normalized KS sequence).
    BerryEsseen {
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        n_grid: Option<String>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        spacing_factor: Option<f64>,
    },
    /// Distributional identity: clusters of [0,u] vs particles in [0,u] plus one.
    Duality {
        #[arg(long)]
        u: Option<f64>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        replicas: Option<usize>,
        /// Margin in units of sqrt(t).
        #[arg(long)]
        margin_factor: Option<f64>,
    },
    /// Diffusive scaling invariance (path-wise on the lattice, TV for Gaussian).
    Scaling {
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        u: Option<f64>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        spacing_factor: Option<f64>,
    },
    /// Small-horizon limit law of the rescaled cluster count.
    SmallT {
        /// Comma-separated decreasing horizons.
        #[arg(long)]
        t_grid: Option<String>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        spacing_factor: Option<f64>,
    },
    /// Mean/variance/quadrature consistency at one (t, u) cell.
    VarianceCheck {
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        u: Option<f64>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[arg(long)]
        spacing_factor: Option<f64>,
    },
}

/// key=value file; '#' starts a comment.
fn load_config(path: &PathBuf) -> Result<HashMap<String, String>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("bad config line: {line}")));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

struct Resolver {
    file: HashMap<String, String>,
}

impl Resolver {
    fn get<T: std::str::FromStr>(&self, cli: Option<T>, key: &str, default: T) -> Result<T, Error> {
        if let Some(v) = cli {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("config key {key}: cannot parse '{raw}'"))),
            None => Ok(default),
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse '{p}' as a number")))
        })
        .collect()
}

fn output(out: &Option<PathBuf>, body: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, body)?,
        None => print!("{body}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(all_pass) => {
            if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    let Cli { seed, threads, out, format, config, cmd } = cli;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let r = Resolver {
        file: match &config {
            Some(p) => load_config(p)?,
            None => HashMap::new(),
        },
    };
    let seed = r.get(seed, "seed", 0)?;

    match cmd {
        Cmd::Analytic { t, u } => {
            let ts = parse_list(&r.get(t, "t", "1".to_string())?)?;
            let us = parse_list(&r.get(u, "u", "1".to_string())?)?;
            let mut body = String::from("t,u,mean,variance,second_moment,sigma_sq\n");
            for &t in &ts {
                for &u in &us {
                    let s = analytic::summary(&FlowParams::new(t, u)?);
                    body.push_str(&format!(
                        "{t},{u},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                        s.mean, s.variance, s.second_moment, s.sigma_sq
                    ));
                }
            }
            output(&out, &body)?;
            Ok(true)
        }
        Cmd::Density { t, points } => {
            let t = r.get(t, "t", 1.0)?;
            let pts = parse_list(&points)?;
            let cfg = PointConfig::new(t, pts)?;
            let value = pfaffian::rho_n(&cfg)?;
            let body = serde_json::json!({
                "t": t,
                "points": cfg.points(),
                "density": value,
            });
            output(&out, &format!("{body}\n"))?;
            Ok(true)
        }
        Cmd::Moments { n, t, u, nodes } => {
            let n = r.get(n, "n", 2)?;
            let t = r.get(t, "t", 1.0)?;
            let u = r.get(u, "u", 1.0)?;
            let q = match nodes {
                Some(m) => QuadratureSpec::new(n, m)?,
                None => QuadratureSpec::default_for(n)?,
            };
            let fm = pfaffian::factorial_moment(n, &FlowParams::new(t, u)?, &q)?;
            let body = format!(
                "n,t,u,value,error_estimate\n{n},{t},{u},{:.12e},{:.3e}\n",
                fm.value, fm.error_estimate
            );
            output(&out, &body)?;
            Ok(true)
        }
        Cmd::Simulate { u, t, spacing, dt, backend, margin, replicas } => {
            let u = r.get(u, "u", 1.0)?;
            let t = r.get(t, "t", 1.0)?;
            let backend: Backend = backend
                .map(Backend::from)
                .map_or_else(|| r.get(None, "backend", Backend::RandomWalk), Ok)?;
            let mut cfg = SimConfig::new(u, t, backend);
            cfg.spacing = r.get(spacing, "spacing", cfg.spacing)?;
            if backend == Backend::GaussBridge {
                cfg.dt = match dt {
                    Some(v) => Some(v),
                    None => r.file.get("dt").map(|s| s.parse()).transpose()
                        .map_err(|_| Error::Config("bad dt in config".into()))?,
                };
            }
            cfg.margin = r.get(margin, "margin", 0.0)?;
            cfg.seed = seed;
            let replicas = r.get(replicas, "replicas", 1000)?;
            let format = format.unwrap_or(OutFormat::Jsonl);
            let batch = harness::simulate_batch(&cfg, replicas, 0)?;
            let mut body = String::new();
            match format {
                OutFormat::Jsonl => {
                    for (i, s) in batch.iter().enumerate() {
                        let mut v = serde_json::to_value(s).expect("stats serialize");
                        v["replica"] = serde_json::json!(i);
                        v["seed"] = serde_json::json!(seed);
                        body.push_str(&format!("{v}\n"));
                    }
                }
                OutFormat::Csv => {
                    let nu: Vec<f64> = batch.iter().map(|s| s.nu as f64).collect();
                    let m = stats::moments(&nu)?;
                    body.push_str("u,t,replicas,mean_nu,var_nu,se_mean,se_var,seed\n");
                    body.push_str(&format!(
                        "{u},{t},{replicas},{:.8e},{:.8e},{:.3e},{:.3e},{seed}\n",
                        m.mean, m.variance, m.se_mean, m.se_variance
                    ));
                }
            }
            output(&out, &body)?;
            Ok(true)
        }
        Cmd::Clt { t, n_grid, replicas, spacing_factor } => {
            let mut spec = ExperimentSpec::clt(seed);
            spec.t = r.get(t, "t", spec.t)?;
            spec.n_grid = parse_list(&r.get(n_grid, "n_grid", "16,64,256".to_string())?)?;
            spec.replicas = r.get(replicas, "replicas", spec.replicas)?;
            spec.spacing_factor = r.get(spacing_factor, "spacing_factor", spec.spacing_factor)?;
            finish(&out, format, harness::run(&spec)?)
        }
        Cmd::BerryEsseen { t, n_grid, replicas, spacing_factor } => {
            let mut spec = ExperimentSpec::berry_esseen(seed);
            spec.t = r.get(t, "t", spec.t)?;
            spec.n_grid = parse_list(&r.get(n_grid, "n_grid", "16,64,256,1024".to_string())?)?;
            spec.replicas = r.get(replicas, "replicas", spec.replicas)?;
            spec.spacing_factor = r.get(spacing_factor, "spacing_factor", spec.spacing_factor)?;
            finish(&out, format, harness::run(&spec)?)
        }
        Cmd::Duality { u, t, replicas, margin_factor } => {
            let mut spec = ExperimentSpec::duality(seed);
            spec.u = r.get(u, "u", spec.u)?;
            spec.t = r.get(t, "t", spec.t)?;
            spec.replicas = r.get(replicas, "replicas", spec.replicas)?;
            spec.margin_factor = r.get(margin_factor, "margin_factor", spec.margin_factor)?;
            finish(&out, format, harness::run(&spec)?)
        }
        Cmd::Scaling { t, u, replicas, spacing_factor } => {
            let mut spec = ExperimentSpec::scaling(seed);
            spec.t = r.get(t, "t", spec.t)?;
            spec.u = r.get(u, "u", spec.u)?;
            spec.replicas = r.get(replicas, "replicas", spec.replicas)?;
            spec.spacing_factor = r.get(spacing_factor, "spacing_factor", spec.spacing_factor)?;
            finish(&out, format, harness::run(&spec)?)
        }
        Cmd::SmallT { t_grid, replicas, spacing_factor } => {
            let mut spec = ExperimentSpec::small_t(seed);
            spec.t_grid = parse_list(&r.get(t_grid, "t_grid", "1e-2,1e-4".to_string())?)?;
            spec.replicas = r.get(replicas, "replicas", spec.replicas)?;
            spec.spacing_factor = r.get(spacing_factor, "spacing_factor", spec.spacing_factor)?;
            finish(&out, format, harness::run(&spec)?)
        }
        Cmd::VarianceCheck { t, u, replicas, backend, spacing_factor } => {
            let be = backend.map(Backend::from).unwrap_or(Backend::GaussBridge);
            let mut spec = ExperimentSpec::variance_check(seed, be);
            spec.t = r.get(t, "t", spec.t)?;
            spec.u = r.get(u, "u", spec.u)?;
            spec.replicas = r.get(replicas, "replicas", spec.replicas)?;
            spec.spacing_factor = r.get(spacing_factor, "spacing_factor", spec.spacing_factor)?;
            finish(&out, format, harness::run(&spec)?)
        }
    }
}

fn finish(
    out: &Option<PathBuf>,
    format: Option<OutFormat>,
    report: harness::ExperimentReport,
) -> Result<bool, Error> {
    let mut buf = Vec::new();
    match format.unwrap_or(OutFormat::Csv) {
        OutFormat::Csv => report.write_csv(&mut buf)?,
        OutFormat::Jsonl => report.write_jsonl(&mut buf)?,
    }
    let body = String::from_utf8(buf).expect("reports are utf-8");
    output(out, &body)?;
    // verdict summary always goes to stderr so piped output stays clean
    let mut err = std::io::stderr();
    let _ = write!(err, "{}", report.summary_lines());
    Ok(report.passed())
}
