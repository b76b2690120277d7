//! Experiment orchestration: configuration, the four experiment kinds, and
//! result persistence.
//!
//! Data files (`<stem>.json`, `<stem>.csv`) depend only on the configuration
//! and seed. Wall-clock timings go to a separate `<stem>.meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::brw_sim::{estimate_moments_direct, McOptions, DEFAULT_CAP};
use crate::environment::{potential_log_mgf, EnvironmentField, PotentialDistribution};
use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::lattice::{Boundary, Geometry};
use crate::pam_solver::{default_dt, solve_mn_on_grid, Init};
use crate::rng::{derive_seed, substream};
use crate::skeleton_fk::{
    assemble_skeleton_brw, combine_terms, draw_time_vector, estimate_phi_terms, local_times, periodize, FkOptions,
    TimeSampler,
};
use crate::stats::{log_weighted_mean, mean_stderr, Estimate};
use crate::trees::NumberedTree;
use crate::variational::{eval_s_per, solve_chi, ChiOptions, TorusMeasure};

pub const SCHEMA_VERSION: u32 = 1;
pub const CODE_VERSION: &str = concat!("brwre ", env!("CARGO_PKG_VERSION"));

/// Fraction of pairwise comparisons that must satisfy `|z| <= 3`.
const AGREEMENT_FRACTION: f64 = 0.95;
const JENSEN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    CrossValidate,
    MomentsGrowth,
    Jensen,
    LdpSanity,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::CrossValidate => "cross_validate",
            ExperimentKind::MomentsGrowth => "moments_growth",
            ExperimentKind::Jensen => "jensen",
            ExperimentKind::LdpSanity => "ldp_sanity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub dist0: PotentialDistribution,
    pub dist2: PotentialDistribution,
    pub d: usize,
    #[serde(rename = "R")]
    pub radius: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl EnvironmentSpec {
    pub fn sample(&self, seed: u64) -> Result<EnvironmentField> {
        EnvironmentField::sample(self.dist0, self.dist2, self.d, self.radius, self.boundary, seed)
    }
}

fn one() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    #[serde(default = "one")]
    pub kappa: f64,
    pub t: Vec<f64>,
    pub x: Vec<i64>,
    #[serde(default)]
    pub y: Option<Vec<i64>>,
}

/// `n` is the moment order and `p` the annealing power. Cross-validation
/// and the Jensen chain cover every order up to `n` (and power up to `p`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Orders {
    pub n: u32,
    #[serde(default = "one_u32")]
    pub p: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    /// Environment replicas `E`.
    pub replicas: usize,
    /// Trajectory samples `N` (per term for the tree formula).
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub cap: Option<usize>,
    /// RK4 step for the PDE route; defaults to a stable, accurate step.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Skeleton used by the local-time check; defaults to the single walk.
    #[serde(default)]
    pub skeleton: Option<NumberedTree>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub stem: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub environment: EnvironmentSpec,
    pub dynamics: Dynamics,
    pub orders: Orders,
    pub sampling: Sampling,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let (o, s, dy, env) = (&self.orders, &self.sampling, &self.dynamics, &self.environment);
        if o.n < 1 || o.p < 1 {
            return Err(invalid("orders n and p must be at least 1"));
        }
        if s.replicas < 1 || s.samples < 2 {
            return Err(invalid("need at least 1 replica and 2 samples"));
        }
        if dy.t.is_empty() || dy.t.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(invalid("t grid must be nonempty with finite positive entries"));
        }
        if dy.t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("t grid must be strictly increasing"));
        }
        if !(dy.kappa >= 0.0 && dy.kappa.is_finite()) {
            return Err(invalid("kappa must be finite and nonnegative"));
        }
        env.dist0.validate()?;
        env.dist2.validate()?;
        let geometry = Geometry::new(env.d, env.radius, env.boundary)?;
        for site in std::iter::once(&dy.x).chain(dy.y.as_ref()) {
            if site.len() != env.d || !geometry.contains(site) {
                return Err(invalid(format!("site {site:?} is not in the box")));
            }
        }
        if let Some(dt) = s.dt {
            if !(dt > 0.0) {
                return Err(invalid("dt must be positive"));
            }
        }
        if self.kind == ExperimentKind::LdpSanity {
            if env.boundary != Boundary::Periodic {
                return Err(invalid("local-time check needs a periodic box"));
            }
            if let Some(sk) = &s.skeleton {
                let (tree, _) = sk.resolve()?;
                if tree.k() > 2 {
                    return Err(invalid("local-time check supports at most 2 splits"));
                }
            }
        }
        Ok(())
    }

    fn mc_options(&self, seed: u64) -> McOptions {
        McOptions {
            samples: self.sampling.samples,
            seed,
            cap: self.sampling.cap.unwrap_or(DEFAULT_CAP),
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub quantity: String,
    pub route: String,
    pub replica: Option<usize>,
    pub n: u32,
    pub p: u32,
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
    pub replicas: usize,
    pub capped_fraction: Option<f64>,
    pub predicted: Option<f64>,
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub replica: usize,
    pub t: f64,
    pub n: u32,
    pub quantity: String,
    pub pair: String,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Every gate passed.
    Pass,
    /// Trend report with no failed gate.
    Report,
    /// A gate failed or the run hit an anomaly such as capped samples.
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub code_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub records: Vec<Record>,
    pub comparisons: Vec<Comparison>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub status: RunStatus,
}

impl ExperimentResult {
    fn finish(cfg: &ExperimentConfig, records: Vec<Record>, comparisons: Vec<Comparison>, checks: Vec<Check>, warnings: Vec<String>, flagged: bool, report: bool) -> Self {
        let failed = flagged || checks.iter().any(|c| !c.passed);
        let status = match (failed, report) {
            (true, _) => RunStatus::Flagged,
            (false, true) => RunStatus::Report,
            (false, false) => RunStatus::Pass,
        };
        ExperimentResult {
            schema_version: SCHEMA_VERSION,
            kind: cfg.kind,
            code_version: CODE_VERSION.to_string(),
            seed: cfg.sampling.seed,
            config: cfg.clone(),
            records,
            comparisons,
            checks,
            warnings,
            status,
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// 0 on pass or a complete report, 2 when flagged.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Pass | RunStatus::Report => 0,
            RunStatus::Flagged => 2,
        }
    }

    pub fn records_for<'a>(&'a self, quantity: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.quantity == quantity)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::CrossValidate => run_cross_validate(cfg),
        ExperimentKind::MomentsGrowth => run_moments_growth(cfg),
        ExperimentKind::Jensen => run_jensen(cfg),
        ExperimentKind::LdpSanity => run_ldp_sanity(cfg),
    }
}

fn replica_env(cfg: &ExperimentConfig, e: usize) -> Result<EnvironmentField> {
    cfg.environment.sample(derive_seed(cfg.sampling.seed, &[0, e as u64]))
}

fn pde_dt(cfg: &ExperimentConfig, env: &EnvironmentField) -> Result<f64> {
    match cfg.sampling.dt {
        Some(dt) => Ok(dt),
        None => default_dt(env, cfg.dynamics.kappa),
    }
}

fn time_grid(ts: &[f64]) -> Vec<f64> {
    std::iter::once(0.0).chain(ts.iter().copied()).collect()
}

/// Final-time values at `x` of orders `1..=n`, at each `t` of the grid.
fn pde_at(
    cfg: &ExperimentConfig,
    env: &EnvironmentField,
    n: u32,
    init: Init,
) -> Result<Vec<Vec<f64>>> {
    let x = env.geometry().index_of(&cfg.dynamics.x).expect("validated");
    let fields = solve_mn_on_grid(env, cfg.dynamics.kappa, &time_grid(&cfg.dynamics.t), n, init, pde_dt(cfg, env)?)?;
    // out[ti][order - 1]
    Ok((1..=cfg.dynamics.t.len())
        .map(|j| fields.iter().map(|f| f.values[j][x]).collect())
        .collect())
}

fn local_init(cfg: &ExperimentConfig, env: &EnvironmentField) -> Init {
    let y = cfg.dynamics.y.as_ref().unwrap_or(&cfg.dynamics.x);
    Init::Localized(env.geometry().index_of(y).expect("validated"))
}

#[allow(clippy::too_many_arguments)]
fn route_record(t: f64, quantity: &str, route: &str, replica: usize, n: u32, est: Estimate, capped: Option<f64>, exact: f64) -> Record {
    Record {
        t,
        quantity: quantity.to_string(),
        route: route.to_string(),
        replica: Some(replica),
        n,
        p: 1,
        estimate: est.value,
        stderr: est.stderr,
        samples: est.samples,
        replicas: 1,
        capped_fraction: capped,
        predicted: Some(exact),
        z: Some(est.z_against_exact(exact)),
    }
}

/// `m_n(t, x)` (and `m_n(t, x, y)` when `y` is set) by direct simulation,
/// the tree formula and the PDE, with pairwise z-scores.
pub fn run_cross_validate(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let dy = &cfg.dynamics;
    let max_n = cfg.orders.n;
    let mut records = Vec::new();
    let mut comparisons = Vec::new();
    let mut warnings = Vec::new();
    let mut flagged = false;
    for e in 0..cfg.sampling.replicas {
        let env = replica_env(cfg, e)?;
        let pde_global = pde_at(cfg, &env, max_n, Init::Delocalized)?;
        let pde_local = match dy.y {
            Some(_) => Some(pde_at(cfg, &env, max_n, local_init(cfg, &env))?),
            None => None,
        };
        for (ti, &t) in dy.t.iter().enumerate() {
            let keys = |route: u64| derive_seed(cfg.sampling.seed, &[1, e as u64, ti as u64, route]);
            let direct = estimate_moments_direct(&env, &dy.x, t, dy.kappa, max_n, dy.y.as_deref(), &cfg.mc_options(keys(0)))?;
            if direct.capped_fraction > 0.01 {
                flagged = true;
                warnings.push(format!(
                    "replica {e}, t={t}: {:.2}% of direct realisations hit the particle cap",
                    100.0 * direct.capped_fraction
                ));
            }
            let fk_opts = FkOptions::new(cfg.sampling.samples, keys(1));
            let fk_global = estimate_phi_terms(&env, &dy.x, t, dy.kappa, max_n as usize - 1, None, &fk_opts)?;
            let fk_local = match &dy.y {
                Some(y) => Some(estimate_phi_terms(
                    &env,
                    &dy.x,
                    t,
                    dy.kappa,
                    max_n as usize - 1,
                    Some(y),
                    &FkOptions::new(cfg.sampling.samples, keys(2)),
                )?),
                None => None,
            };
            let mut quantities = vec![("m_n(t,x)", &direct.global, &fk_global, &pde_global)];
            if let (Some(dl), Some(fl), Some(pl)) = (&direct.local, &fk_local, &pde_local) {
                quantities.push(("m_n(t,x,y)", dl, fl, pl));
            }
            for (quantity, direct_series, fk_terms, pde_series) in quantities {
                for n in 1..=max_n {
                    let d = direct_series[n as usize - 1];
                    let f = combine_terms(fk_terms, n)?.total;
                    let exact = pde_series[ti][n as usize - 1];
                    records.push(route_record(t, quantity, "direct", e, n, d, Some(direct.capped_fraction), exact));
                    records.push(route_record(t, quantity, "fk", e, n, f, None, exact));
                    records.push(route_record(t, quantity, "pde", e, n, Estimate::exact(exact), None, exact));
                    for (pair, z) in [
                        ("direct~fk", d.z_against(&f)),
                        ("direct~pde", d.z_against_exact(exact)),
                        ("fk~pde", f.z_against_exact(exact)),
                    ] {
                        comparisons.push(Comparison {
                            replica: e,
                            t,
                            n,
                            quantity: quantity.to_string(),
                            pair: pair.to_string(),
                            z,
                        });
                    }
                }
            }
        }
    }
    let within = comparisons.iter().filter(|c| c.z.abs() <= 3.0).count();
    let fraction = within as f64 / comparisons.len() as f64;
    let checks = vec![Check::new(
        "three_way_agreement",
        fraction >= AGREEMENT_FRACTION,
        format!("{within} of {} comparisons have |z| <= 3 ({:.1}%)", comparisons.len(), 100.0 * fraction),
    )];
    Ok(ExperimentResult::finish(cfg, records, comparisons, checks, warnings, flagged, false))
}

fn ensemble_record(t: f64, quantity: &str, n: u32, p: u32, est: Estimate, replicas: usize) -> Record {
    Record {
        t,
        quantity: quantity.to_string(),
        route: "pde".to_string(),
        replica: None,
        n,
        p,
        estimate: est.value,
        stderr: est.stderr,
        samples: replicas,
        replicas,
        capped_fraction: None,
        predicted: None,
        z: None,
    }
}

/// Pathwise and averaged checks of
/// `<m_n^p(t,x)> >= <m_n^p(t,x,y)> >= <m_1^{np}(t,x,y)>` on the PDE route,
/// for every order up to `n` and power up to `p`.
pub fn run_jensen(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let (max_n, max_p) = (cfg.orders.n, cfg.orders.p);
    let replicas = cfg.sampling.replicas;
    let per_replica: Vec<Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)>> = Exec::default().map(replicas, |e| {
        let env = replica_env(cfg, e)?;
        Ok((pde_at(cfg, &env, max_n, Init::Delocalized)?, pde_at(cfg, &env, max_n, local_init(cfg, &env))?))
    });
    let per_replica: Vec<_> = per_replica.into_iter().collect::<Result<_>>()?;
    let below = |hi: f64, lo: f64| hi < lo - JENSEN_SLACK * lo.abs();
    let mut records = Vec::new();
    let mut violations = 0usize;
    let mut average_violations = 0usize;
    let mut comparisons = 0usize;
    for (ti, &t) in cfg.dynamics.t.iter().enumerate() {
        for n in 1..=max_n {
            for p in 1..=max_p {
                let mut chain: [Vec<f64>; 3] = Default::default();
                for (global, local) in &per_replica {
                    let a = global[ti][n as usize - 1].powi(p as i32);
                    let b = local[ti][n as usize - 1].powi(p as i32);
                    let c = local[ti][0].powi((n * p) as i32);
                    violations += below(a, b) as usize + below(b, c) as usize;
                    comparisons += 2;
                    chain[0].push(a);
                    chain[1].push(b);
                    chain[2].push(c);
                }
                let means = chain.each_ref().map(|v| mean_stderr(v));
                average_violations += below(means[0].value, means[1].value) as usize + below(means[1].value, means[2].value) as usize;
                for (name, est) in ["m_n^p(t,x)", "m_n^p(t,x,y)", "m_1^np(t,x,y)"].iter().zip(means) {
                    records.push(ensemble_record(t, name, n, p, est, replicas));
                }
            }
        }
    }
    let checks = vec![
        Check::new(
            "pathwise_chain",
            violations == 0,
            format!("{violations} violations in {comparisons} per-environment inequalities"),
        ),
        Check::new(
            "averaged_chain",
            average_violations == 0,
            format!("{average_violations} violations among ensemble averages"),
        ),
    ];
    Ok(ExperimentResult::finish(cfg, records, Vec::new(), checks, Vec::new(), false, false))
}

/// `log` of the ensemble mean of `exp(logs)`, with a delta-method error.
fn log_mean_exp(logs: &[f64]) -> Estimate {
    let (shift, est) = log_weighted_mean(logs);
    Estimate {
        value: shift + est.value.ln(),
        stderr: est.stderr / est.value,
        samples: est.samples,
    }
}

/// Closed-form `m_1` and `m_2` in a constant environment.
fn constant_env_moment(c0: f64, c2: f64, n: u32, t: f64) -> Option<f64> {
    let c = c2 - c0;
    let m1 = (c * t).exp();
    match n {
        1 => Some(m1),
        2 if c == 0.0 => Some(1.0 + 2.0 * c2 * t),
        2 => Some(m1 + 2.0 * c2 * m1 * (c * t).exp_m1() / c),
        _ => None,
    }
}

/// Trend report of `A(t) = log <m_n^p(t,x)>`, `B(t) = log <m_1^{np}(t,x)>`
/// and `C(t) = H(npt) - 2d kappa chi(rho/kappa) npt`.
pub fn run_moments_growth(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let (n, p) = (cfg.orders.n, cfg.orders.p);
    let (kappa, d) = (cfg.dynamics.kappa, cfg.environment.d);
    let replicas = cfg.sampling.replicas;
    let per_replica: Vec<Result<Vec<Vec<f64>>>> = Exec::default().map(replicas, |e| {
        let env = replica_env(cfg, e)?;
        pde_at(cfg, &env, n, Init::Delocalized)
    });
    let per_replica: Vec<_> = per_replica.into_iter().collect::<Result<_>>()?;

    let env_spec = &cfg.environment;
    let rho = env_spec.dist2.rho();
    let chi = if kappa > 0.0 {
        solve_chi(rho / kappa, &ChiOptions { seed: cfg.sampling.seed, ..Default::default() })?.chi
    } else {
        0.0
    };
    let constants = match (env_spec.dist0, env_spec.dist2) {
        (PotentialDistribution::Constant { c: c0 }, PotentialDistribution::Constant { c: c2 }) => Some((c0, c2)),
        _ => None,
    };

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut jensen_failures = Vec::new();
    let mut closed_form_worst: Option<f64> = None;
    for (ti, &t) in cfg.dynamics.t.iter().enumerate() {
        let log_a: Vec<f64> = per_replica.iter().map(|r| p as f64 * r[ti][n as usize - 1].ln()).collect();
        let log_b: Vec<f64> = per_replica.iter().map(|r| (n * p) as f64 * r[ti][0].ln()).collect();
        let a = log_mean_exp(&log_a);
        let b = log_mean_exp(&log_b);
        let npt = (n * p) as f64 * t;
        let c_val = potential_log_mgf(&env_spec.dist0, &env_spec.dist2, npt)? - 2.0 * d as f64 * kappa * chi * npt;
        let c = Estimate { value: c_val, stderr: 0.0, samples: 0 };

        // share of the largest replica in the ensemble sum
        let top = log_a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let share = 1.0 / log_a.iter().map(|l| (l - top).exp()).sum::<f64>();
        if replicas > 1 && share > 0.5 {
            warnings.push(format!("t={t}: one replica carries {:.0}% of <m_n^p>", 100.0 * share));
        }
        if a.value < b.value - JENSEN_SLACK * b.value.abs().max(1.0) {
            jensen_failures.push(t);
        }

        let mut rec = |quantity: &str, route: &str, est: Estimate, predicted: Option<f64>| {
            let mut r = ensemble_record(t, quantity, n, p, est, replicas);
            r.route = route.to_string();
            r.predicted = predicted;
            r.z = predicted.map(|v| est.z_against_exact(v));
            records.push(r);
        };
        let pred_a = constants.and_then(|(c0, c2)| constant_env_moment(c0, c2, n, t)).map(|m| p as f64 * m.ln());
        let pred_b = constants.map(|(c0, c2)| (n * p) as f64 * (c2 - c0) * t);
        if let (Some(pa), Some(pb)) = (pred_a, pred_b) {
            let worst = ((a.value - pa).abs() / pa.abs().max(1.0)).max((b.value - pb).abs() / pb.abs().max(1.0));
            closed_form_worst = Some(closed_form_worst.unwrap_or(0.0).max(worst));
        }
        rec("A", "pde", a, pred_a);
        rec("B", "pde", b, pred_b);
        rec("C", "formula", c, None);
        let gap = |x: Estimate, y: Estimate| Estimate {
            value: (x.value - y.value) / t,
            stderr: x.stderr.hypot(y.stderr) / t,
            samples: replicas,
        };
        rec("(A-B)/t", "pde", gap(a, b), pred_a.zip(pred_b).map(|(pa, pb)| (pa - pb) / t));
        rec("(A-C)/t", "pde", gap(a, c), None);
    }
    let mut checks = vec![Check::new(
        "jensen_direction",
        jensen_failures.is_empty(),
        if jensen_failures.is_empty() {
            "A(t) >= B(t) at every t".to_string()
        } else {
            format!("A(t) < B(t) at t = {jensen_failures:?}")
        },
    )];
    if let Some(worst) = closed_form_worst {
        checks.push(Check::new(
            "constant_environment_closed_form",
            worst <= 1e-6,
            format!("largest relative deviation of A, B from closed forms: {worst:.3e}"),
        ));
    }
    Ok(ExperimentResult::finish(cfg, records, Vec::new(), checks, warnings, false, true))
}

const TV_BATCHES: usize = 10;

/// Flattening of periodised local times of a fixed skeleton as `t` grows:
/// mean `S^per` must drop by half between the first and last `t`, and the
/// mean occupation measure at the last `t` must be within 0.1 of uniform in
/// total variation.
pub fn run_ldp_sanity(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let dy = &cfg.dynamics;
    let skeleton = match &cfg.sampling.skeleton {
        Some(s) => s.clone(),
        None => {
            let tree = crate::trees::enumerate_trees(0)?.remove(0);
            NumberedTree::new(&tree, &crate::trees::enumerate_numberings(&tree)[0])
        }
    };
    let (tree, numbering) = skeleton.resolve()?;
    let geometry = Geometry::new(cfg.environment.d, cfg.environment.radius, Boundary::Periodic)?;
    let uniform = TorusMeasure::uniform(geometry.clone());
    let draws = cfg.sampling.samples;
    let mut records = Vec::new();
    let mut s_means = Vec::new();
    let mut tv_last = f64::NAN;
    for (ti, &t) in dy.t.iter().enumerate() {
        let per_draw: Vec<Result<TorusMeasure>> = Exec::default().map(draws, |i| {
            let mut rng = substream(cfg.sampling.seed, &[3, ti as u64, i as u64]);
            let (times, _) = draw_time_vector(tree.k(), t, TimeSampler::Uniform, &mut rng);
            let b = assemble_skeleton_brw(&tree, &numbering, &times, &dy.x, dy.kappa, &mut rng)?;
            periodize(&local_times(&b), cfg.environment.radius, &dy.x)
        });
        let per_draw: Vec<TorusMeasure> = per_draw.into_iter().collect::<Result<_>>()?;
        let s_per = mean_stderr(&per_draw.iter().map(eval_s_per).collect::<Vec<_>>());
        let tv_each = mean_stderr(&per_draw.iter().map(|m| m.total_variation(&uniform)).collect::<Vec<_>>());
        let mean_measure = average_measure(&geometry, per_draw.iter())?;
        let tv = mean_measure.total_variation(&uniform);
        let batch = draws.div_ceil(TV_BATCHES);
        let batch_tv: Vec<f64> = per_draw
            .chunks(batch)
            .map(|c| average_measure(&geometry, c.iter()).map(|m| m.total_variation(&uniform)))
            .collect::<Result<_>>()?;
        let tv_est = Estimate {
            value: tv,
            stderr: mean_stderr(&batch_tv).stderr,
            samples: draws,
        };
        let k = tree.k() as u32;
        for (quantity, est) in [("S_per", s_per), ("tv_mean_measure", tv_est), ("tv_per_draw", tv_each)] {
            let mut r = ensemble_record(t, quantity, k, 1, est, 1);
            r.route = "skeleton".to_string();
            records.push(r);
        }
        s_means.push(s_per);
        tv_last = tv;
    }
    let (first, last) = (s_means[0], *s_means.last().unwrap());
    let monotone = s_means.windows(2).all(|w| w[1].value <= w[0].value + 3.0 * w[0].stderr.hypot(w[1].stderr));
    let checks = vec![
        Check::new(
            "s_per_halves",
            last.value <= 0.5 * first.value,
            format!("mean S_per {:.4} at t={} vs {:.4} at t={}", first.value, dy.t[0], last.value, dy.t[dy.t.len() - 1]),
        ),
        Check::new(
            "s_per_decreasing",
            monotone,
            "mean S_per nonincreasing along the t grid within 3 standard errors".to_string(),
        ),
        Check::new(
            "tv_to_uniform",
            tv_last < 0.1,
            format!("total variation of the mean occupation measure to uniform: {tv_last:.4}"),
        ),
    ];
    Ok(ExperimentResult::finish(cfg, records, Vec::new(), checks, Vec::new(), false, false))
}

fn average_measure<'a>(geometry: &Geometry, measures: impl Iterator<Item = &'a TorusMeasure>) -> Result<TorusMeasure> {
    let mut sum = vec![0.0; geometry.n_sites()];
    let mut count = 0usize;
    for m in measures {
        sum.iter_mut().zip(m.weights()).for_each(|(s, w)| *s += w);
        count += 1;
    }
    let mut weights: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    TorusMeasure::new(geometry.clone(), weights)
}

/// Paths of the data files written for `stem`.
pub fn output_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}.json")),
        dir.join(format!("{stem}.csv")),
        dir.join(format!("{stem}.meta.json")),
    )
}

/// Write `<stem>.json` (full result) and `<stem>.csv` (records).
pub fn write_outputs(result: &ExperimentResult, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let (json_path, csv_path, _) = output_paths(dir, stem);
    fs::write(&json_path, serde_json::to_string_pretty(result)? + "\n")?;
    let mut writer = csv::Writer::from_path(&csv_path)?;
    for r in &result.records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok((json_path, csv_path))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub wall_clock_seconds: f64,
    pub threads: usize,
}

/// Timing metadata, kept apart from the deterministic data files.
pub fn write_meta(dir: &Path, stem: &str, meta: &RunMeta) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = output_paths(dir, stem).2;
    fs::write(&path, serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(path)
}
