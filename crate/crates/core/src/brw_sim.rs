//! Event-driven simulation of the branching random walk in a frozen
//! environment, and direct Monte Carlo estimators of its moments.
//!
//! Particles jump at total rate `2 d kappa` (generator `kappa * Delta`),
//! split into two at rate `xi_2(y)` and die at rate `xi_0(y)`. Because
//! particles evolve independently once born, a realisation is generated
//! depth-first, one particle at a time, with exact exponential holding
//! times; there is no time discretisation.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::environment::EnvironmentField;
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::lattice::{direction, Geometry};
use crate::rng::{substream, SimRng};
use crate::stats::{mean_stderr, Estimate};

pub const DEFAULT_CAP: usize = 1_000_000;

/// Continuous-time nearest-neighbour walk on `[start_time, end_time]`.
///
/// `sites` holds the visited lattice points flattened with stride `dim`;
/// there is one more site than jump.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    dim: usize,
    start_time: f64,
    end_time: f64,
    jump_times: Vec<f64>,
    sites: Vec<i64>,
}

impl WalkPath {
    pub fn stationary(start: &[i64], start_time: f64, end_time: f64) -> Self {
        WalkPath {
            dim: start.len(),
            start_time,
            end_time,
            jump_times: Vec::new(),
            sites: start.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn n_visits(&self) -> usize {
        self.jump_times.len() + 1
    }

    pub fn site(&self, i: usize) -> &[i64] {
        &self.sites[i * self.dim..(i + 1) * self.dim]
    }

    pub fn start(&self) -> &[i64] {
        self.site(0)
    }

    pub fn end(&self) -> &[i64] {
        self.site(self.jump_times.len())
    }

    /// Position at time `s` (right-continuous).
    pub fn position_at(&self, s: f64) -> &[i64] {
        let i = self.jump_times.partition_point(|&jt| jt <= s);
        self.site(i)
    }

    /// `(site, duration)` for each holding interval.
    pub fn holding(&self) -> impl Iterator<Item = (&[i64], f64)> + '_ {
        (0..self.n_visits()).map(move |i| {
            let from = if i == 0 { self.start_time } else { self.jump_times[i - 1] };
            let to = self.jump_times.get(i).copied().unwrap_or(self.end_time);
            (self.site(i), to - from)
        })
    }

    fn push_jump(&mut self, time: f64, site: &[i64]) {
        self.jump_times.push(time);
        self.sites.extend_from_slice(site);
    }
}

/// Sample a walk with generator `kappa * Delta` in `Z^d` started at `start`
/// at `start_time` and run until `end_time`.
pub fn walk<R: Rng + ?Sized>(start: &[i64], start_time: f64, end_time: f64, kappa: f64, rng: &mut R) -> WalkPath {
    let dim = start.len();
    let mut path = WalkPath::stationary(start, start_time, end_time);
    let rate = 2.0 * dim as f64 * kappa;
    if rate <= 0.0 {
        return path;
    }
    let mut pos = start.to_vec();
    let mut time = start_time;
    loop {
        let hold: f64 = Exp1.sample(rng);
        time += hold / rate;
        if time >= end_time {
            break;
        }
        let (axis, step) = direction(rng.random_range(0..2 * dim));
        pos[axis] += step;
        path.push_jump(time, &pos);
    }
    path
}

/// Seeded walk on `[0, t]` started from `x`.
pub fn simulate_srw(x: &[i64], t: f64, kappa: f64, seed: u64) -> Result<WalkPath> {
    check_dynamics(t, kappa)?;
    if x.is_empty() {
        return Err(invalid("start site needs at least one coordinate"));
    }
    Ok(walk(x, 0.0, t, kappa, &mut substream(seed, &[])))
}

/// `int v(X_s) ds` along the path, summed exactly over holding intervals.
pub fn integrate_potential(path: &WalkPath, geometry: &Geometry, v: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (site, dt) in path.holding() {
        let idx = geometry
            .index_of(site)
            .ok_or_else(|| Error::Domain(format!("site {site:?} lies outside the field")))?;
        total += v[idx] * dt;
    }
    Ok(total)
}

fn check_dynamics(t: f64, kappa: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("horizon must be finite and >= 0, got {t}")));
    }
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(invalid(format!("kappa must be finite and >= 0, got {kappa}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Split,
    /// Killed at rate `xi_0`, or absorbed at a zero boundary.
    Killed,
    SurvivedToHorizon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub birth: f64,
    pub death: f64,
    /// Positions in box coordinates over `[birth, death]`.
    pub path: WalkPath,
    pub terminal: Terminal,
}

/// One sampled trajectory of the whole population.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchingRealization {
    pub horizon: f64,
    pub particles: Vec<ParticleRecord>,
    /// `eta(t, y)` per box site.
    pub counts: Vec<u64>,
    /// `eta(t)`.
    pub total: u64,
    /// Set when the particle cap was hit; counts are then incomplete.
    pub capped: bool,
}

trait Tracker {
    fn start(&mut self, id: usize, parent: Option<usize>, birth: f64, site: usize);
    fn jump(&mut self, time: f64, site: usize);
    fn finish(&mut self, time: f64, site: usize, terminal: Terminal);
}

struct Counter {
    target: Option<usize>,
    total: u64,
    at_target: u64,
}

impl Tracker for Counter {
    fn start(&mut self, _: usize, _: Option<usize>, _: f64, _: usize) {}
    fn jump(&mut self, _: f64, _: usize) {}
    fn finish(&mut self, _: f64, site: usize, terminal: Terminal) {
        if terminal == Terminal::SurvivedToHorizon {
            self.total += 1;
            if self.target == Some(site) {
                self.at_target += 1;
            }
        }
    }
}

struct Recorder<'g> {
    geometry: &'g Geometry,
    coords: Vec<i64>,
    records: Vec<ParticleRecord>,
    counts: Vec<u64>,
}

impl Tracker for Recorder<'_> {
    fn start(&mut self, id: usize, parent: Option<usize>, birth: f64, site: usize) {
        self.geometry.write_coords(site, &mut self.coords);
        self.records.push(ParticleRecord {
            id,
            parent,
            birth,
            death: birth,
            path: WalkPath::stationary(&self.coords, birth, birth),
            terminal: Terminal::SurvivedToHorizon,
        });
    }

    fn jump(&mut self, time: f64, site: usize) {
        self.geometry.write_coords(site, &mut self.coords);
        let rec = self.records.last_mut().unwrap();
        rec.path.push_jump(time, &self.coords);
    }

    fn finish(&mut self, time: f64, site: usize, terminal: Terminal) {
        let rec = self.records.last_mut().unwrap();
        rec.death = time;
        rec.path.end_time = time;
        rec.terminal = terminal;
        if terminal == Terminal::SurvivedToHorizon {
            self.counts[site] += 1;
        }
    }
}

/// Runs the population to `horizon`; returns `true` if capped.
fn run_population<T: Tracker>(
    env: &EnvironmentField,
    start: usize,
    horizon: f64,
    kappa: f64,
    cap: usize,
    rng: &mut SimRng,
    tracker: &mut T,
) -> bool {
    let geometry = env.geometry();
    let degree = geometry.degree();
    let move_rate = degree as f64 * kappa;
    let (xi0, xi2) = (env.xi0(), env.xi2());
    // (id, parent, birth time, site)
    let mut stack: Vec<(usize, Option<usize>, f64, usize)> = vec![(0, None, 0.0, start)];
    let mut created = 1usize;
    while let Some((id, parent, birth, mut site)) = stack.pop() {
        tracker.start(id, parent, birth, site);
        let mut time = birth;
        loop {
            let rate = move_rate + xi2[site] + xi0[site];
            if rate <= 0.0 {
                tracker.finish(horizon, site, Terminal::SurvivedToHorizon);
                break;
            }
            let hold: f64 = Exp1.sample(rng);
            time += hold / rate;
            if time >= horizon {
                tracker.finish(horizon, site, Terminal::SurvivedToHorizon);
                break;
            }
            let u = rng.random::<f64>() * rate;
            if u < move_rate {
                match geometry.neighbor(site, rng.random_range(0..degree)) {
                    Some(next) => {
                        site = next;
                        tracker.jump(time, site);
                    }
                    None => {
                        tracker.finish(time, site, Terminal::Killed);
                        break;
                    }
                }
            } else if u < move_rate + xi2[site] {
                tracker.finish(time, site, Terminal::Split);
                if created + 2 > cap {
                    return true;
                }
                // right child pushed first so the left one is expanded first
                stack.push((created + 1, Some(id), time, site));
                stack.push((created, Some(id), time, site));
                created += 2;
                break;
            } else {
                tracker.finish(time, site, Terminal::Killed);
                break;
            }
        }
    }
    false
}

fn start_index(env: &EnvironmentField, x: &[i64]) -> Result<usize> {
    let g = env.geometry();
    if !g.contains(x) {
        return Err(Error::Domain(format!("start site {x:?} is outside the box")));
    }
    Ok(g.index_of(x).expect("inside the box"))
}

/// Simulate the branching process from a single particle at `x`, recording
/// every particle's path. At most `cap` particles are created.
pub fn simulate_brwre(
    env: &EnvironmentField,
    x: &[i64],
    t: f64,
    kappa: f64,
    cap: usize,
    seed: u64,
) -> Result<BranchingRealization> {
    check_dynamics(t, kappa)?;
    if cap == 0 {
        return Err(invalid("cap must be at least 1"));
    }
    let start = start_index(env, x)?;
    let geometry = env.geometry();
    let mut recorder = Recorder {
        geometry,
        coords: vec![0; geometry.dim()],
        records: Vec::new(),
        counts: vec![0; geometry.n_sites()],
    };
    let capped = run_population(env, start, t, kappa, cap, &mut substream(seed, &[]), &mut recorder);
    let total = recorder.counts.iter().sum();
    Ok(BranchingRealization {
        horizon: t,
        particles: recorder.records,
        counts: recorder.counts,
        total,
        capped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// More than 1% of realisations hit the particle cap.
    Warning,
}

#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
    pub cap: usize,
    pub exec: Exec,
}

impl McOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        McOptions {
            samples,
            seed,
            cap: DEFAULT_CAP,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectEstimate {
    /// `E_x[eta(t)^n]` for `n = 1..=max_n`.
    pub global: Vec<Estimate>,
    /// `E_x[eta(t, y)^n]` for `n = 1..=max_n`, when a target was given.
    pub local: Option<Vec<Estimate>>,
    pub capped_fraction: f64,
    pub status: Status,
}

/// Moments of the population size up to order `max_n` from independent
/// realisations. Capped realisations are excluded and their fraction
/// reported.
pub fn estimate_moments_direct(
    env: &EnvironmentField,
    x: &[i64],
    t: f64,
    kappa: f64,
    max_n: u32,
    target: Option<&[i64]>,
    opts: &McOptions,
) -> Result<DirectEstimate> {
    check_dynamics(t, kappa)?;
    if max_n == 0 {
        return Err(invalid("moment order must be at least 1"));
    }
    if opts.samples < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    if opts.cap == 0 {
        return Err(invalid("cap must be at least 1"));
    }
    let start = start_index(env, x)?;
    let target_idx = target.map(|y| start_index(env, y)).transpose()?;
    let draws = opts.exec.map(opts.samples, |i| {
        let mut counter = Counter {
            target: target_idx,
            total: 0,
            at_target: 0,
        };
        let mut rng = substream(opts.seed, &[i as u64]);
        let capped = run_population(env, start, t, kappa, opts.cap, &mut rng, &mut counter);
        (capped, counter.total, counter.at_target)
    });
    let kept: Vec<(u64, u64)> = draws.iter().filter(|d| !d.0).map(|d| (d.1, d.2)).collect();
    let capped_fraction = (draws.len() - kept.len()) as f64 / draws.len() as f64;
    let moments = |pick: fn(&(u64, u64)) -> u64| -> Vec<Estimate> {
        (1..=max_n)
            .map(|n| {
                let vals: Vec<f64> = kept.iter().map(|d| (pick(d) as f64).powi(n as i32)).collect();
                mean_stderr(&vals)
            })
            .collect()
    };
    Ok(DirectEstimate {
        global: moments(|d| d.0),
        local: target_idx.map(|_| moments(|d| d.1)),
        capped_fraction,
        status: if capped_fraction > 0.01 { Status::Warning } else { Status::Ok },
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DirectMoment {
    pub estimate: Estimate,
    pub capped_fraction: f64,
    pub status: Status,
}

/// `m_n(t, x)`, or `m_n(t, x, y)` when `target` is given.
pub fn estimate_mn_direct(
    env: &EnvironmentField,
    x: &[i64],
    t: f64,
    kappa: f64,
    n: u32,
    target: Option<&[i64]>,
    opts: &McOptions,
) -> Result<DirectMoment> {
    let est = estimate_moments_direct(env, x, t, kappa, n, target, opts)?;
    let series = match est.local {
        Some(local) => local,
        None => est.global,
    };
    Ok(DirectMoment {
        estimate: series[n as usize - 1],
        capped_fraction: est.capped_fraction,
        status: est.status,
    })
}
