//! Deterministic moment solver on a finite box: the lattice heat equation
//! with potential for `m_1`, and the coupled hierarchy
//!
//! ```text
//! d/dt m_n = (kappa Delta + xi) m_n + xi_2 sum_{l=1}^{n-1} C(n,l) m_l m_{n-l}
//! ```
//!
//! for higher moments. `Delta f(x) = sum_{y ~ x} (f(y) - f(x))`; under the
//! zero boundary, missing neighbours contribute `f(y) = 0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::environment::EnvironmentField;
use crate::error::{invalid, Error, Result};
use crate::lattice::Geometry;

/// Largest box the dense exponential accepts.
pub const MAX_DENSE_SITES: usize = 4096;

/// `kappa Delta + diag(v)` on a box.
#[derive(Debug, Clone)]
pub struct LatticeOperator {
    geometry: Geometry,
    kappa: f64,
    potential: Vec<f64>,
}

impl LatticeOperator {
    pub fn new(geometry: Geometry, kappa: f64, potential: Vec<f64>) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(invalid(format!("kappa must be finite and nonnegative, got {kappa}")));
        }
        if potential.len() != geometry.n_sites() {
            return Err(invalid("potential length differs from the number of sites"));
        }
        Ok(LatticeOperator { geometry, kappa, potential })
    }

    /// The Anderson operator `kappa Delta + xi` of an environment.
    pub fn anderson(env: &EnvironmentField, kappa: f64) -> Result<Self> {
        LatticeOperator::new(env.geometry().clone(), kappa, env.xi().to_vec())
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// Largest explicit step that keeps RK4 well inside its stability region.
    pub fn rk4_step_bound(&self) -> f64 {
        let max_v = self.potential.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        0.5 / (self.geometry.degree() as f64 * self.kappa + max_v)
    }

    /// `out = (kappa Delta + diag(v)) u`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let g = &self.geometry;
        for i in 0..g.n_sites() {
            let mut lap = 0.0;
            for dir in 0..g.degree() {
                lap += g.neighbor(i, dir).map_or(0.0, |j| u[j]) - u[i];
            }
            out[i] = self.kappa * lap + self.potential[i] * u[i];
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let g = &self.geometry;
        let n = g.n_sites();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = self.potential[i] - self.kappa * g.degree() as f64;
            for dir in 0..g.degree() {
                if let Some(j) = g.neighbor(i, dir) {
                    a[(i, j)] += self.kappa;
                }
            }
        }
        a
    }
}

/// Initial condition of a moment field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "site", rename_all = "snake_case")]
pub enum Init {
    /// `m_n(0, .) = 1`.
    Delocalized,
    /// `m_n(0, .) = 1{. = y}` for the site with index `y`.
    Localized(usize),
}

impl Init {
    fn values(self, n_sites: usize) -> Result<Vec<f64>> {
        match self {
            Init::Delocalized => Ok(vec![1.0; n_sites]),
            Init::Localized(y) if y < n_sites => {
                let mut u = vec![0.0; n_sites];
                u[y] = 1.0;
                Ok(u)
            }
            Init::Localized(y) => Err(Error::Domain(format!("site index {y} is outside the box"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Dense exponential through the symmetric eigendecomposition.
    Expm,
    /// Classical RK4 with step at most `dt`.
    Rk4 { dt: f64 },
}

/// Snapshots of `m_n(s, .)` for `s` on an increasing grid from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentField {
    pub n: u32,
    pub init: Init,
    pub times: Vec<f64>,
    /// `values[j][i]` is the value at site `i` and time `times[j]`.
    pub values: Vec<Vec<f64>>,
}

impl MomentField {
    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_values(&self) -> &[f64] {
        self.values.last().unwrap()
    }

    pub fn final_at(&self, site: usize) -> f64 {
        self.final_values()[site]
    }
}

fn time_grid(t: f64, snapshots: usize) -> Vec<f64> {
    let s = snapshots.max(1);
    (0..=s).map(|j| if j == s { t } else { t * j as f64 / s as f64 }).collect()
}

fn check_horizon(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("horizon must be finite and nonnegative, got {t}")))
    }
}

/// `m_1` on the box with the requested initial condition, sampled at
/// `snapshots + 1` equally spaced times.
pub fn solve_m1(
    env: &EnvironmentField,
    kappa: f64,
    t: f64,
    init: Init,
    method: Method,
    snapshots: usize,
) -> Result<MomentField> {
    match method {
        Method::Rk4 { dt } => Ok(solve_mn_recursive(env, kappa, t, 1, init, dt, snapshots)?.remove(0)),
        Method::Expm => {
            check_horizon(t)?;
            let op = LatticeOperator::anderson(env, kappa)?;
            let n_sites = op.geometry().n_sites();
            if n_sites > MAX_DENSE_SITES {
                return Err(Error::Capacity {
                    what: "sites for the dense exponential",
                    limit: MAX_DENSE_SITES,
                    requested: n_sites,
                });
            }
            let u0 = DVector::from_vec(init.values(n_sites)?);
            let eig = SymmetricEigen::new(op.dense());
            let coeffs = eig.eigenvectors.tr_mul(&u0);
            let times = time_grid(t, snapshots);
            let values = times
                .iter()
                .map(|&s| {
                    if s == 0.0 {
                        return u0.iter().copied().collect();
                    }
                    let scaled = coeffs.zip_map(&eig.eigenvalues, |c, lam| c * (lam * s).exp());
                    (&eig.eigenvectors * scaled).iter().copied().collect()
                })
                .collect();
            Ok(MomentField { n: 1, init, times, values })
        }
    }
}

/// Right-hand side of the stacked hierarchy for orders `1..=n`.
struct Hierarchy<'a> {
    op: &'a LatticeOperator,
    xi2: &'a [f64],
    /// `binom[n][l] = C(n, l)`.
    binom: Vec<Vec<f64>>,
}

impl Hierarchy<'_> {
    fn rhs(&self, u: &[Vec<f64>], out: &mut [Vec<f64>]) {
        for (order, du) in out.iter_mut().enumerate() {
            let n = order + 1;
            self.op.apply(&u[order], du);
            for l in 1..n {
                let c = self.binom[n][l];
                let (a, b) = (&u[l - 1], &u[n - l - 1]);
                for i in 0..du.len() {
                    du[i] += c * self.xi2[i] * a[i] * b[i];
                }
            }
        }
    }
}

fn binomials(n: usize) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![1.0]];
    for m in 1..=n {
        let prev = &rows[m - 1];
        let row = (0..=m)
            .map(|l| if l == 0 || l == m { 1.0 } else { prev[l - 1] + prev[l] })
            .collect();
        rows.push(row);
    }
    rows
}

/// `m_1, ..., m_n` by RK4 on the stacked system. Every order uses the same
/// initial condition; the order-1 field equals `solve_m1` with `Rk4`.
pub fn solve_mn_recursive(
    env: &EnvironmentField,
    kappa: f64,
    t: f64,
    n: u32,
    init: Init,
    dt: f64,
    snapshots: usize,
) -> Result<Vec<MomentField>> {
    check_horizon(t)?;
    solve_mn_on_grid(env, kappa, &time_grid(t, snapshots), n, init, dt)
}

/// As [`solve_mn_recursive`], with snapshots at the given times. The grid
/// must start at 0 and be nondecreasing; each interval is covered by equal
/// steps no longer than `dt`.
pub fn solve_mn_on_grid(
    env: &EnvironmentField,
    kappa: f64,
    times: &[f64],
    n: u32,
    init: Init,
    dt: f64,
) -> Result<Vec<MomentField>> {
    if n == 0 {
        return Err(invalid("moment order must be at least 1"));
    }
    if times.first() != Some(&0.0) || times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(invalid("time grid must start at 0 and be nondecreasing"));
    }
    check_horizon(*times.last().unwrap())?;
    let op = LatticeOperator::anderson(env, kappa)?;
    let bound = op.rk4_step_bound();
    if !(dt > 0.0 && dt <= bound) {
        return Err(Error::StepSize { dt, bound });
    }
    let n_sites = op.geometry().n_sites();
    let orders = n as usize;
    let u0 = init.values(n_sites)?;
    let hierarchy = Hierarchy {
        op: &op,
        xi2: env.xi2(),
        binom: binomials(orders),
    };
    let mut u: Vec<Vec<f64>> = vec![u0; orders];
    let mut history: Vec<Vec<Vec<f64>>> = vec![u.clone()];

    let zeros = || vec![vec![0.0; n_sites]; orders];
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (zeros(), zeros(), zeros(), zeros(), zeros());
    let stage = |tmp: &mut Vec<Vec<f64>>, u: &[Vec<f64>], k: &[Vec<f64>], h: f64| {
        for ((t_row, u_row), k_row) in tmp.iter_mut().zip(u).zip(k) {
            for ((x, a), b) in t_row.iter_mut().zip(u_row).zip(k_row) {
                *x = a + h * b;
            }
        }
    };
    for w in times.windows(2) {
        let span = w[1] - w[0];
        let steps = if span > 0.0 { (span / dt).ceil() as usize } else { 0 };
        let h = span / steps.max(1) as f64;
        for _ in 0..steps {
            hierarchy.rhs(&u, &mut k1);
            stage(&mut tmp, &u, &k1, 0.5 * h);
            hierarchy.rhs(&tmp, &mut k2);
            stage(&mut tmp, &u, &k2, 0.5 * h);
            hierarchy.rhs(&tmp, &mut k3);
            stage(&mut tmp, &u, &k3, h);
            hierarchy.rhs(&tmp, &mut k4);
            for o in 0..orders {
                for i in 0..n_sites {
                    u[o][i] += h / 6.0 * (k1[o][i] + 2.0 * k2[o][i] + 2.0 * k3[o][i] + k4[o][i]);
                }
            }
        }
        history.push(u.clone());
    }
    Ok((0..orders)
        .map(|o| MomentField {
            n: o as u32 + 1,
            init,
            times: times.to_vec(),
            values: history.iter().map(|snap| snap[o].clone()).collect(),
        })
        .collect())
}

/// A step size that is both stable and accurate for `env`: the smaller of
/// `1e-3` and a twentieth of the stability bound.
pub fn default_dt(env: &EnvironmentField, kappa: f64) -> Result<f64> {
    let op = LatticeOperator::anderson(env, kappa)?;
    Ok((op.rk4_step_bound() / 20.0).min(1e-3))
}
