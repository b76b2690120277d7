//! Monte Carlo evaluation of the tree-indexed Feynman-Kac formula
//!
//! ```text
//! m_n(t, x) = sum_{k<n} sum_{T in T_k} sum_{I in N(T)} c_{k,n} Phi_x(T, I, t)
//! ```
//!
//! where `Phi_x(T, I, t)` integrates, over split-time vectors in the simplex
//! `0 < t_1 < ... < t_k < t`, the expectation of
//! `exp(sum_z xi(z) l(z)) * prod_{v in S} xi_2(split site of v)` for a
//! branching walk with exactly `k` splits laid out along `(T, I)`.
//! Weights are carried in log scale throughout.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::brw_sim::{walk, WalkPath};
use crate::environment::EnvironmentField;
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::lattice::{Boundary, Geometry};
use crate::rng::{derive_seed, substream};
use crate::stats::{log_weighted_mean, Estimate};
use crate::trees::{c_coeff_f64, enumerate_numberings, enumerate_trees, NumberedTree, Numbering, SkeletonTree};
use crate::variational::TorusMeasure;

/// Split times `0 = t_0 < t_1 < ... < t_k < t_{k+1} = t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeVector {
    times: Vec<f64>,
}

impl TimeVector {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 || times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid(format!("not a strictly increasing time vector from 0: {times:?}")));
        }
        Ok(TimeVector { times })
    }

    pub fn k(&self) -> usize {
        self.times.len() - 2
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `t_j` for label `j in 0..=k+1`.
    pub fn at(&self, label: usize) -> f64 {
        self.times[label]
    }
}

/// Law used to draw the interior split times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeSampler {
    /// Uniform on the simplex; importance weight `t^k / k!`.
    #[default]
    Uniform,
    /// Sorted i.i.d. draws with density `a (1 - s/t)^(a-1) / t`, which
    /// favours early splits for `a > 1`; reweighted to stay unbiased.
    Warped { concentration: f64 },
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|j| (j as f64).ln()).sum()
}

/// Draw split times and the log importance weight `-log q(t_hat)`.
pub fn draw_time_vector<R: Rng + ?Sized>(k: usize, t: f64, sampler: TimeSampler, rng: &mut R) -> (TimeVector, f64) {
    let mut inner: Vec<f64> = Vec::with_capacity(k + 2);
    inner.push(0.0);
    let mut log_weight = -ln_factorial(k);
    for _ in 0..k {
        let s = loop {
            let u: f64 = rng.random();
            let s = match sampler {
                TimeSampler::Uniform => t * u,
                TimeSampler::Warped { concentration: a } => t * -((1.0 - u).ln() / a).exp_m1(),
            };
            if s > 0.0 && s < t {
                break s;
            }
        };
        log_weight -= match sampler {
            TimeSampler::Uniform => -t.ln(),
            TimeSampler::Warped { concentration: a } => a.ln() + (a - 1.0) * (-s / t).ln_1p() - t.ln(),
        };
        inner.push(s);
    }
    inner[1..].sort_by(f64::total_cmp);
    inner.push(t);
    // ties have probability zero; nudge them apart if they occur anyway
    for i in 1..inner.len() - 1 {
        if inner[i] <= inner[i - 1] {
            inner[i] = f64::from_bits(inner[i - 1].to_bits() + 1);
        }
    }
    (TimeVector { times: inner }, log_weight)
}

/// Uniform draw from the open simplex `Z_k(t)`.
pub fn sample_time_vector(k: usize, t: f64, seed: u64) -> Result<TimeVector> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {t}")));
    }
    Ok(draw_time_vector(k, t, TimeSampler::Uniform, &mut substream(seed, &[])).0)
}

/// A branching walk with exactly `k` splits, laid out along a numbered tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonBRW {
    pub tree: SkeletonTree,
    pub numbering: Numbering,
    pub times: TimeVector,
    /// `segments[v]` is the walk on edge `(parent(v), v)` over
    /// `[t_{I(parent)}, t_{I(v)}]`; `segments[0]` is unused.
    pub segments: Vec<WalkPath>,
}

impl SkeletonBRW {
    pub fn segment(&self, child: usize) -> &WalkPath {
        &self.segments[child]
    }

    /// Position at which splitting vertex `v` splits.
    pub fn split_site(&self, v: usize) -> &[i64] {
        self.segments[v].end()
    }

    /// Terminal positions `X^(l)_t` of the leaves, in preorder.
    pub fn leaf_sites(&self) -> impl Iterator<Item = &[i64]> + '_ {
        self.tree.leaves().iter().map(move |&l| self.segments[l].end())
    }
}

/// Independent walk segments per edge, each child segment starting where its
/// parent segment ends.
pub fn assemble_skeleton_brw<R: Rng + ?Sized>(
    tree: &SkeletonTree,
    numbering: &Numbering,
    times: &TimeVector,
    x: &[i64],
    kappa: f64,
    rng: &mut R,
) -> Result<SkeletonBRW> {
    if times.k() != tree.k() {
        return Err(invalid(format!("time vector has k={} but tree has k={}", times.k(), tree.k())));
    }
    let segments = build_segments(tree, numbering, times, x, kappa, rng);
    Ok(SkeletonBRW {
        tree: tree.clone(),
        numbering: numbering.clone(),
        times: times.clone(),
        segments,
    })
}

fn build_segments<R: Rng + ?Sized>(
    tree: &SkeletonTree,
    numbering: &Numbering,
    times: &TimeVector,
    x: &[i64],
    kappa: f64,
    rng: &mut R,
) -> Vec<WalkPath> {
    let mut segments: Vec<WalkPath> = Vec::with_capacity(tree.n_vertices());
    segments.push(WalkPath::stationary(x, 0.0, 0.0));
    // vertex ids are in preorder, so every parent precedes its children
    for v in 1..tree.n_vertices() {
        let u = tree.parent(v).unwrap();
        let from = times.at(numbering.label(u));
        let to = times.at(numbering.label(v));
        let start = if u == 0 { x.to_vec() } else { segments[u].end().to_vec() };
        segments.push(walk(&start, from, to, kappa, rng));
    }
    segments
}

/// Occupation times of all segments of a skeleton walk.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeField {
    /// Raw occupation time per visited site of `Z^d`.
    pub raw: BTreeMap<Vec<i64>, f64>,
    /// Total mass `sum_{(u,v)} (t_{I(v)} - t_{I(u)})`.
    pub mass: f64,
}

impl LocalTimeField {
    pub fn dim(&self) -> usize {
        self.raw.keys().next().map_or(0, Vec::len)
    }

    pub fn normalized(&self) -> BTreeMap<Vec<i64>, f64> {
        self.raw.iter().map(|(z, l)| (z.clone(), l / self.mass)).collect()
    }
}

pub fn local_times(b: &SkeletonBRW) -> LocalTimeField {
    let mut raw: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for v in 1..b.tree.n_vertices() {
        for (site, dt) in b.segments[v].holding() {
            *raw.entry(site.to_vec()).or_insert(0.0) += dt;
        }
    }
    let mass = b
        .tree
        .edges()
        .map(|(u, v)| b.times.at(b.numbering.label(v)) - b.times.at(b.numbering.label(u)))
        .sum();
    LocalTimeField { raw, mass }
}

/// Fold the normalised local times onto the torus of side `2R + 1` centred
/// at `x`. Site `i` of the result is the point `x + coords(i)`.
pub fn periodize(field: &LocalTimeField, radius: usize, x: &[i64]) -> Result<TorusMeasure> {
    let dim = x.len();
    let geometry = Geometry::new(dim, radius, Boundary::Periodic)?;
    let mut weights = vec![0.0; geometry.n_sites()];
    let mut offset = vec![0i64; dim];
    for (site, l) in &field.raw {
        if site.len() != dim {
            return Err(invalid("local time sites and centre differ in dimension"));
        }
        for ((o, s), c) in offset.iter_mut().zip(site).zip(x) {
            *o = s - c;
        }
        let idx = geometry.index_of(&offset).expect("periodic boxes wrap every point");
        weights[idx] += l / field.mass;
    }
    TorusMeasure::new(geometry, weights)
}

/// `ln` of the Feynman-Kac integrand for one skeleton draw, or `-inf` when
/// the integrand vanishes (zero branching rate at a split, leaf off target,
/// or a path leaving a zero-boundary box).
fn log_integrand(
    tree: &SkeletonTree,
    segments: &[WalkPath],
    env: &EnvironmentField,
    target: Option<usize>,
) -> f64 {
    let geometry = env.geometry();
    let (xi, xi2) = (env.xi(), env.xi2());
    let mut log_w = 0.0;
    for seg in &segments[1..] {
        for (site, dt) in seg.holding() {
            match geometry.index_of(site) {
                Some(idx) => log_w += xi[idx] * dt,
                None => return f64::NEG_INFINITY,
            }
        }
    }
    for &s in tree.splits() {
        let idx = geometry.index_of(segments[s].end()).expect("checked above");
        log_w += xi2[idx].ln();
    }
    if let Some(y) = target {
        if tree.leaves().iter().any(|&l| geometry.index_of(segments[l].end()) != Some(y)) {
            return f64::NEG_INFINITY;
        }
    }
    log_w
}

#[derive(Debug, Clone, Copy)]
pub struct FkOptions {
    /// Samples per `(T, I)` term.
    pub samples: usize,
    pub seed: u64,
    pub sampler: TimeSampler,
    pub exec: Exec,
}

impl FkOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        FkOptions {
            samples,
            seed,
            sampler: TimeSampler::Uniform,
            exec: Exec::default(),
        }
    }
}

fn target_index(env: &EnvironmentField, y: Option<&[i64]>) -> Result<Option<usize>> {
    y.map(|y| {
        if env.geometry().contains(y) {
            Ok(env.geometry().index_of(y).unwrap())
        } else {
            Err(Error::Domain(format!("target site {y:?} is outside the box")))
        }
    })
    .transpose()
}

/// Monte Carlo estimate of `Phi_x(T, I, t)`, or of its local version with
/// every leaf required to end at `target`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_phi(
    tree: &SkeletonTree,
    numbering: &Numbering,
    t: f64,
    env: &EnvironmentField,
    x: &[i64],
    kappa: f64,
    target: Option<&[i64]>,
    opts: &FkOptions,
) -> Result<Estimate> {
    if opts.samples == 0 {
        return Err(invalid("estimate_phi needs at least one sample"));
    }
    if !(t > 0.0 && t.is_finite()) || !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(invalid(format!("need t > 0 and kappa >= 0, got t={t}, kappa={kappa}")));
    }
    if let TimeSampler::Warped { concentration } = opts.sampler {
        if !(concentration >= 1.0 && concentration.is_finite()) {
            return Err(invalid("warped sampler concentration must be >= 1"));
        }
    }
    if !numbering.is_valid_for(tree) {
        return Err(invalid(format!("numbering is not monotone for {tree}")));
    }
    if !env.geometry().contains(x) {
        return Err(Error::Domain(format!("start site {x:?} is outside the box")));
    }
    let target = target_index(env, target)?;
    let log_weights = opts.exec.map(opts.samples, |i| {
        let mut rng = substream(opts.seed, &[i as u64]);
        let (times, log_q) = draw_time_vector(tree.k(), t, opts.sampler, &mut rng);
        let segments = build_segments(tree, numbering, &times, x, kappa, &mut rng);
        log_q + log_integrand(tree, &segments, env, target)
    });
    let (shift, est) = log_weighted_mean(&log_weights);
    Ok(est.scale(shift.exp()))
}

/// `m_1(t, x)` (or `m_1(t, x, y)`) by the plain Feynman-Kac formula.
pub fn estimate_m1_fk(
    env: &EnvironmentField,
    x: &[i64],
    t: f64,
    kappa: f64,
    target: Option<&[i64]>,
    opts: &FkOptions,
) -> Result<Estimate> {
    let tree = enumerate_trees(0)?.remove(0);
    let numbering = enumerate_numberings(&tree).remove(0);
    estimate_phi(&tree, &numbering, t, env, x, kappa, target, opts)
}

/// Every `(k, T, I)` with `k <= max_k`, in a fixed order: `k` ascending,
/// trees by encoding, numberings in enumeration order.
pub fn fk_terms(max_k: usize) -> Result<Vec<(SkeletonTree, Numbering)>> {
    let mut out = Vec::new();
    for k in 0..=max_k {
        for tree in enumerate_trees(k)? {
            for numbering in enumerate_numberings(&tree) {
                out.push((tree.clone(), numbering));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiTerm {
    #[serde(flatten)]
    pub term: NumberedTree,
    pub phi: Estimate,
}

/// `Phi` estimates for every term with `k <= max_k`. Term `j` draws from
/// the substream keyed by `(seed, j)`, so a term's estimate does not depend
/// on which `n` it is later combined into.
#[allow(clippy::too_many_arguments)]
pub fn estimate_phi_terms(
    env: &EnvironmentField,
    x: &[i64],
    t: f64,
    kappa: f64,
    max_k: usize,
    target: Option<&[i64]>,
    opts: &FkOptions,
) -> Result<Vec<PhiTerm>> {
    fk_terms(max_k)?
        .into_iter()
        .enumerate()
        .map(|(j, (tree, numbering))| {
            let term_opts = FkOptions {
                seed: derive_seed(opts.seed, &[j as u64]),
                ..*opts
            };
            let phi = estimate_phi(&tree, &numbering, t, env, x, kappa, target, &term_opts)?;
            Ok(PhiTerm {
                term: NumberedTree::new(&tree, &numbering),
                phi,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermContribution {
    pub tree: String,
    pub numbering: Vec<usize>,
    pub k: usize,
    pub c_kn: f64,
    pub phi_hat: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FkEstimate {
    pub n: u32,
    pub total: Estimate,
    pub terms: Vec<TermContribution>,
}

/// Combine precomputed `Phi` terms into `m_n`; errors add in quadrature.
pub fn combine_terms(terms: &[PhiTerm], n: u32) -> Result<FkEstimate> {
    if n == 0 {
        return Err(invalid("moment order must be at least 1"));
    }
    let mut total = Estimate::exact(0.0);
    let mut out = Vec::new();
    for term in terms.iter().filter(|p| p.term.k < n as usize) {
        let c = c_coeff_f64(term.term.k, n as usize)?;
        total = total.add_independent(term.phi.scale(c));
        out.push(TermContribution {
            tree: term.term.tree.clone(),
            numbering: term.term.numbering.clone(),
            k: term.term.k,
            c_kn: c,
            phi_hat: term.phi.value,
            stderr: term.phi.stderr,
        });
    }
    if out.iter().map(|t| t.k).max() != Some(n as usize - 1) {
        return Err(invalid(format!("terms up to k = {} are needed for n = {n}", n - 1)));
    }
    Ok(FkEstimate { n, total, terms: out })
}

/// `m_n(t, x)` (or `m_n(t, x, y)`) by the tree formula.
#[allow(clippy::too_many_arguments)]
pub fn estimate_mn_fk(
    env: &EnvironmentField,
    x: &[i64],
    t: f64,
    n: u32,
    kappa: f64,
    target: Option<&[i64]>,
    opts: &FkOptions,
) -> Result<FkEstimate> {
    if n == 0 {
        return Err(invalid("moment order must be at least 1"));
    }
    let terms = estimate_phi_terms(env, x, t, kappa, n as usize - 1, target, opts)?;
    combine_terms(&terms, n)
}
