//! `brwre-lab`: command-line front end for the brwre toolkit.
//!
//! Exit codes: 0 on success or a passing/complete run, 2 when a run is
//! flagged (failed gate, capped samples, assumption outside tolerance),
//! 1 on errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use brwre::brw_sim::{estimate_moments_direct, McOptions, Status, DEFAULT_CAP};
use brwre::environment::{check_assumption_h, moment_growth_table};
use brwre::harness::{output_paths, run_experiment, write_meta, write_outputs, ExperimentConfig, RunMeta};
use brwre::lattice::parse_coords;
use brwre::pam_solver::{default_dt, solve_m1, solve_mn_recursive, Init, Method, MomentField};
use brwre::skeleton_fk::{estimate_mn_fk, FkOptions, TimeSampler};
use brwre::trees::{enumerate_numberings, enumerate_trees, NumberedTree};
use brwre::variational::{solve_chi_with_drift, ChiOptions};
use brwre::{Boundary, EnvironmentField, PotentialDistribution};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "brwre-lab", version, about = "Branching random walks in random environment: simulation and checks")]
struct Cli {
    /// Master seed; overrides the seed of an experiment config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for data files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample and characterise environments.
    #[command(subcommand)]
    Env(EnvCommand),
    /// Enumerate skeleton trees.
    #[command(subcommand)]
    Trees(TreesCommand),
    /// Solve the variational problem for chi.
    #[command(subcommand)]
    Chi(ChiCommand),
    /// Monte Carlo moment estimates.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Deterministic moment solver.
    #[command(subcommand)]
    Pde(PdeCommand),
    /// Run an experiment from a JSON config.
    Experiment {
        /// Experiment config (JSON)
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum EnvCommand {
    /// Draw an environment and write it as JSON.
    Sample {
        /// Killing-rate law, e.g. `uniform:1`.
        #[arg(long)]
        dist0: PotentialDistribution,
        /// Branching-rate law, e.g. `double-exp:1`.
        #[arg(long)]
        dist2: PotentialDistribution,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long = "R", alias = "radius")]
        radius: usize,
        #[arg(long, default_value = "periodic")]
        boundary: Boundary,
        /// Output file name (inside --out-dir when given).
        #[arg(long, default_value = "env.json")]
        output: PathBuf,
    },
    /// Tabulate the log-moment-generating-function assumption.
    CheckH {
        #[arg(long)]
        dist: PotentialDistribution,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
        c_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
        t_grid: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
    },
    /// Growth of E[xi^k] in k.
    Growth {
        #[arg(long)]
        dist: PotentialDistribution,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        k: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        t_grid: Vec<f64>,
    },
}

#[derive(Subcommand)]
enum TreesCommand {
    /// List the trees with `k` splits, one encoding per line.
    Enum {
        #[arg(long)]
        k: usize,
        /// Also count monotone numberings per tree.
        #[arg(long)]
        numberings: bool,
        /// Emit every (tree, numbering) pair as JSON instead.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum ChiCommand {
    /// chi(rho) and its minimising measure
    Solve {
        /// A nonnegative real or `inf`.
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 15)]
        window: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
    },
    /// chi over a grid of rho, as CSV
    Table {
        /// Comma-separated values, or `start:stop:step`.
        #[arg(long, default_value = "0:4:0.25")]
        rho_grid: String,
        #[arg(long, default_value_t = 15)]
        window: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
    },
}

#[derive(Args)]
struct PointArgs {
    #[arg(long)]
    env: PathBuf,
    /// Start site, comma-separated coordinates.
    #[arg(long, allow_hyphen_values = true)]
    x: String,
    #[arg(long)]
    t: f64,
    #[arg(long, default_value_t = 1)]
    n: u32,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Target site for local moments.
    #[arg(long, allow_hyphen_values = true)]
    y: Option<String>,
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Direct simulation of the branching process.
    Direct {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
    },
    /// Tree-formula Monte Carlo.
    Fk {
        #[command(flatten)]
        point: PointArgs,
        /// Draw split times favouring early splits, with this concentration.
        #[arg(long, num_args = 0..=1, default_missing_value = "4")]
        warped_sampler: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    Localized,
    Delocalized,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodKind {
    Expm,
    Rk4,
}

#[derive(Subcommand)]
enum PdeCommand {
    /// Moment field m_n by matrix exponential or RK4
    Solve {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: u32,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, value_enum, default_value = "delocalized")]
        init: InitKind,
        #[arg(long, allow_hyphen_values = true)]
        y: Option<String>,
        #[arg(long, value_enum, default_value = "rk4")]
        method: MethodKind,
        /// RK4 step; defaults to a stable, accurate step for the environment.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 10)]
        snapshots: usize,
    },
}

/// Outcome of a command: 0 or a flagged 2.
type Outcome = Result<u8>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let threads = configure_threads(cli.threads)?;
    let seed = cli.seed;
    let out = cli.out_dir.as_deref();
    match cli.command {
        Command::Env(cmd) => env_command(cmd, seed.unwrap_or(0), out),
        Command::Trees(TreesCommand::Enum { k, numberings, json }) => trees_command(k, numberings, json, out),
        Command::Chi(cmd) => chi_command(cmd, seed.unwrap_or(0), out),
        Command::Simulate(cmd) => simulate_command(cmd, seed.unwrap_or(0), out),
        Command::Pde(cmd) => pde_command(cmd, out),
        Command::Experiment { config } => experiment_command(&config, seed, out, threads),
    }
}

fn configure_threads(threads: Option<usize>) -> Result<usize> {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            if n == 0 {
                bail!("--threads must be at least 1");
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
        }
        Ok(rayon::current_num_threads())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(1)
    }
}

/// Print `text` and, with an output directory, also save it as `name`.
fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(text.as_bytes())?;
    if let Some(dir) = out {
        write_file(&dir.join(name), text)?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn pretty(value: &Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// JSON has no infinities; write them as strings.
fn real(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn env_command(cmd: EnvCommand, seed: u64, out: Option<&Path>) -> Outcome {
    match cmd {
        EnvCommand::Sample {
            dist0,
            dist2,
            d,
            radius,
            boundary,
            output,
        } => {
            let env = EnvironmentField::sample(dist0, dist2, d, radius, boundary, seed)?;
            let path = match out {
                Some(dir) => dir.join(output),
                None => output,
            };
            write_file(&path, &(env.to_json()? + "\n"))?;
            println!("{}", path.display());
            Ok(0)
        }
        EnvCommand::CheckH { dist, c_grid, t_grid, tol } => {
            let report = check_assumption_h(&dist, &c_grid, &t_grid, tol)?;
            emit(out, "check_h.json", &pretty(&serde_json::to_value(&report)?)?)?;
            Ok(if report.within_tolerance == Some(false) { 2 } else { 0 })
        }
        EnvCommand::Growth { dist, k, t_grid } => {
            let rows = moment_growth_table(&dist, &k, &t_grid)?;
            emit(out, "growth.json", &pretty(&serde_json::to_value(&rows)?)?)?;
            Ok(0)
        }
    }
}

fn trees_command(k: usize, numberings: bool, as_json: bool, out: Option<&Path>) -> Outcome {
    let trees = enumerate_trees(k)?;
    if as_json {
        let pairs: Vec<NumberedTree> = trees
            .iter()
            .flat_map(|t| enumerate_numberings(t).into_iter().map(move |i| NumberedTree::new(t, &i)))
            .collect();
        emit(out, &format!("trees_k{k}.json"), &pretty(&serde_json::to_value(&pairs)?)?)?;
        return Ok(0);
    }
    let mut text = String::new();
    let mut total_numberings = 0;
    for tree in &trees {
        if numberings {
            let count = enumerate_numberings(tree).len();
            total_numberings += count;
            text += &format!("{tree}\t{count}\n");
        } else {
            text += &format!("{tree}\n");
        }
    }
    text += &format!("trees: {}\n", trees.len());
    if numberings {
        text += &format!("numbered trees: {total_numberings}\n");
    }
    emit(out, &format!("trees_k{k}.txt"), &text)?;
    Ok(0)
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let [start, stop, step] = [parts[0], parts[1], parts[2]].map(|s| s.trim().parse::<f64>());
        let (start, stop, step) = (start?, stop?, step?);
        if !(step > 0.0) || stop < start {
            bail!("grid needs start <= stop and a positive step");
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| start + i as f64 * step).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad grid value '{s}'")))
        .collect()
}

fn chi_command(cmd: ChiCommand, seed: u64, out: Option<&Path>) -> Outcome {
    match cmd {
        ChiCommand::Solve { rho, window, tol, restarts } => {
            let opts = ChiOptions { window, tol, restarts, seed, ..Default::default() };
            let rep = solve_chi_with_drift(rho, &opts)?;
            let sol = &rep.solution;
            let value = json!({
                "chi": sol.chi,
                "rho": real(rho),
                "window": window,
                "argmin": sol.argmin.weights(),
                "iterations": sol.iterations,
                "drift_at_wider_window": rep.drift_at_wider_window,
                "status": sol.status,
                "degenerate": sol.degenerate,
            });
            emit(out, "chi.json", &pretty(&value)?)?;
            Ok(0)
        }
        ChiCommand::Table { rho_grid, window, tol, restarts } => {
            let opts = ChiOptions { window, tol, restarts, seed, ..Default::default() };
            let mut text = String::from("rho,chi,drift_at_wider_window,iterations,status\n");
            for rho in parse_grid(&rho_grid)? {
                let rep = solve_chi_with_drift(rho, &opts)?;
                let status = serde_json::to_value(rep.solution.status)?;
                text += &format!(
                    "{rho},{},{},{},{}\n",
                    rep.solution.chi,
                    rep.drift_at_wider_window,
                    rep.solution.iterations,
                    status.as_str().unwrap_or_default()
                );
            }
            emit(out, "chi_table.csv", &text)?;
            Ok(0)
        }
    }
}

fn simulate_command(cmd: SimulateCommand, seed: u64, out: Option<&Path>) -> Outcome {
    match cmd {
        SimulateCommand::Direct { point, cap } => {
            let env = EnvironmentField::load(&point.env)?;
            let x = parse_coords(&point.x)?;
            let y = point.y.as_deref().map(parse_coords).transpose()?;
            let opts = McOptions { cap, ..McOptions::new(point.samples, seed) };
            let est = estimate_moments_direct(&env, &x, point.t, point.kappa, point.n, y.as_deref(), &opts)?;
            let series = est.local.as_ref().unwrap_or(&est.global);
            let m = series[point.n as usize - 1];
            let value = json!({
                "n": point.n,
                "t": point.t,
                "local": y.is_some(),
                "estimate": real(m.value),
                "stderr": real(m.stderr),
                "samples": m.samples,
                "capped_fraction": est.capped_fraction,
                "status": est.status,
            });
            emit(out, "direct.json", &pretty(&value)?)?;
            Ok(if est.status == Status::Warning { 2 } else { 0 })
        }
        SimulateCommand::Fk { point, warped_sampler } => {
            let env = EnvironmentField::load(&point.env)?;
            let x = parse_coords(&point.x)?;
            let y = point.y.as_deref().map(parse_coords).transpose()?;
            let opts = FkOptions {
                sampler: match warped_sampler {
                    Some(concentration) => TimeSampler::Warped { concentration },
                    None => TimeSampler::Uniform,
                },
                ..FkOptions::new(point.samples, seed)
            };
            let fk = estimate_mn_fk(&env, &x, point.t, point.n, point.kappa, y.as_deref(), &opts)?;
            let terms: Vec<Value> = fk
                .terms
                .iter()
                .map(|t| {
                    json!({
                        "k": t.k,
                        "tree": t.tree,
                        "numbering": t.numbering,
                        "c_kn": t.c_kn,
                        "phi_hat": real(t.phi_hat),
                        "stderr": real(t.stderr),
                    })
                })
                .collect();
            let value = json!({
                "n": point.n,
                "t": point.t,
                "local": y.is_some(),
                "estimate": real(fk.total.value),
                "stderr": real(fk.total.stderr),
                "samples_per_term": point.samples,
                "terms": terms,
            });
            emit(out, "fk.json", &pretty(&value)?)?;
            Ok(0)
        }
    }
}

fn pde_command(cmd: PdeCommand, out: Option<&Path>) -> Outcome {
    let PdeCommand::Solve {
        env,
        n,
        t,
        kappa,
        init,
        y,
        method,
        dt,
        snapshots,
    } = cmd;
    let env = EnvironmentField::load(&env)?;
    let geometry = env.geometry().clone();
    let init = match (init, y) {
        (InitKind::Delocalized, None) => Init::Delocalized,
        (InitKind::Delocalized, Some(_)) => bail!("--y only applies to --init localized"),
        (InitKind::Localized, None) => bail!("--init localized needs --y"),
        (InitKind::Localized, Some(y)) => {
            let y = parse_coords(&y)?;
            match geometry.index_of(&y).filter(|_| geometry.contains(&y)) {
                Some(idx) => Init::Localized(idx),
                None => bail!("site {y:?} is outside the box"),
            }
        }
    };
    let dt = match dt {
        Some(dt) => dt,
        None => default_dt(&env, kappa)?,
    };
    let fields: Vec<MomentField> = match method {
        MethodKind::Rk4 => solve_mn_recursive(&env, kappa, t, n, init, dt, snapshots)?,
        MethodKind::Expm if n == 1 => vec![solve_m1(&env, kappa, t, init, Method::Expm, snapshots)?],
        MethodKind::Expm => bail!("the dense exponential solves m_1 only; use --method rk4 for n > 1"),
    };

    let axes: Vec<String> = (1..=geometry.dim()).map(|a| format!("x{a}")).collect();
    let mut csv = format!("n,time,{},value\n", axes.join(","));
    for field in &fields {
        for (time, values) in field.times.iter().zip(&field.values) {
            for (site, v) in values.iter().enumerate() {
                let coords: Vec<String> = geometry.coords(site).iter().map(i64::to_string).collect();
                csv += &format!("{},{time},{},{v}\n", field.n, coords.join(","));
            }
        }
    }
    let summary: Vec<Value> = fields
        .iter()
        .map(|f| {
            let v = f.final_values();
            json!({
                "n": f.n,
                "t": f.final_time(),
                "min": v.iter().copied().fold(f64::INFINITY, f64::min),
                "max": v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                "sum": v.iter().sum::<f64>(),
                "values": v,
            })
        })
        .collect();
    let value = json!({
        "init": init,
        "method": match method { MethodKind::Expm => "expm", MethodKind::Rk4 => "rk4" },
        "dt": match method { MethodKind::Expm => Value::Null, MethodKind::Rk4 => json!(dt) },
        "kappa": kappa,
        "final": summary,
    });
    let text = pretty(&value)?;
    print!("{text}");
    if let Some(dir) = out {
        write_file(&dir.join("pde.csv"), &csv)?;
        write_file(&dir.join("pde.json"), &text)?;
    }
    Ok(0)
}

fn experiment_command(path: &Path, seed: Option<u64>, out: Option<&Path>, threads: usize) -> Outcome {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.sampling.seed = seed;
    }
    let dir = match (out, &cfg.output.dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => PathBuf::from("."),
    };
    let stem = cfg.output.stem.clone().unwrap_or_else(|| cfg.kind.name().to_string());
    let started = Instant::now();
    let result = run_experiment(&cfg)?;
    write_outputs(&result, &dir, &stem)?;
    write_meta(
        &dir,
        &stem,
        &RunMeta {
            schema_version: brwre::harness::SCHEMA_VERSION,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            threads,
        },
    )?;
    let (json_path, csv_path, _) = output_paths(&dir, &stem);
    let status = serde_json::to_value(result.status)?;
    println!("{}: {}", cfg.kind.name(), status.as_str().unwrap_or_default());
    for check in &result.checks {
        println!("  [{}] {}: {}", if check.passed { "pass" } else { "FAIL" }, check.name, check.detail);
    }
    for warning in &result.warnings {
        println!("  warning: {warning}");
    }
    println!("  wrote {} and {}", json_path.display(), csv_path.display());
    Ok(result.exit_code() as u8)
}
