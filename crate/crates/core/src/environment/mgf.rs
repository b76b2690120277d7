//! Logarithmic moment generating functions and the growth-condition checks
//! on them.

use serde::{Deserialize, Serialize};

use super::PotentialDistribution;
use crate::error::{invalid, Result};
use crate::quadrature::log_integral;

const QUAD_TOL: f64 = 1e-11;

/// `H(t) = log <exp(t X)>` for `t >= 0`.
pub fn log_mgf(dist: &PotentialDistribution, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("log_mgf needs finite t >= 0, got {t}")));
    }
    dist.validate()?;
    signed_log_mgf(dist, t)
}

/// `log <exp(-s X)>` for `s >= 0`, always finite for nonnegative laws.
pub fn log_laplace(dist: &PotentialDistribution, s: f64) -> Result<f64> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(invalid(format!("log_laplace needs finite s >= 0, got {s}")));
    }
    dist.validate()?;
    signed_log_mgf(dist, -s)
}

/// Log-MGF of the potential `xi = xi_2 - xi_0` with independent components.
pub fn potential_log_mgf(dist0: &PotentialDistribution, dist2: &PotentialDistribution, t: f64) -> Result<f64> {
    Ok(log_mgf(dist2, t)? + log_laplace(dist0, t)?)
}

fn signed_log_mgf(dist: &PotentialDistribution, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(match *dist {
        PotentialDistribution::Constant { c } => c * t,
        PotentialDistribution::BoundedUniform { b } => {
            // log((e^{bt} - 1) / (bt)), written to avoid overflow for t > 0
            let bt = b * t;
            if bt > 0.0 {
                bt + (-(-bt).exp_m1()).ln() - bt.ln()
            } else {
                (bt.exp_m1() / bt).ln()
            }
        }
        _ => log_tilted_integral(dist, t, 0)?,
    })
}

/// `log <X^k exp(t X)>` by quadrature against the density.
fn log_tilted_integral(dist: &PotentialDistribution, t: f64, k: u32) -> Result<f64> {
    let (log_f, lo, hi) = dist
        .log_density()
        .ok_or_else(|| invalid(format!("{dist} has no density")))?;
    let kf = f64::from(k);
    let g = |r: f64| {
        let base = t * r + log_f(r);
        if k == 0 {
            base
        } else {
            base + kf * r.ln()
        }
    };
    Ok(log_integral(g, lo, hi, QUAD_TOL))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionRow {
    pub c: f64,
    pub t: f64,
    /// `(H(ct) - c H(t)) / t`
    pub ratio: f64,
    /// `rho c log c`, absent when `rho = inf`.
    pub target: Option<f64>,
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub distribution: PotentialDistribution,
    pub rho: f64,
    pub rows: Vec<AssumptionRow>,
    /// Largest `|residual|` over the rows at the largest `t`.
    pub max_residual_at_largest_t: Option<f64>,
    /// `None` in the `rho = inf` case, where there is no finite target.
    pub within_tolerance: Option<bool>,
}

/// Tabulate `(H(ct) - c H(t)) / t` against `rho c log c`.
pub fn check_assumption_h(
    dist: &PotentialDistribution,
    c_grid: &[f64],
    t_grid: &[f64],
    tol: f64,
) -> Result<AssumptionReport> {
    if c_grid.is_empty() || t_grid.is_empty() {
        return Err(invalid("c and t grids must be nonempty"));
    }
    if c_grid.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
        return Err(invalid("c grid must lie in (0, 1)"));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] <= 0.0 {
        return Err(invalid("t grid must be positive and increasing"));
    }
    let rho = dist.rho();
    let mut rows = Vec::with_capacity(c_grid.len() * t_grid.len());
    for &t in t_grid {
        let h_t = log_mgf(dist, t)?;
        for &c in c_grid {
            let ratio = (log_mgf(dist, c * t)? - c * h_t) / t;
            let target = rho.is_finite().then(|| rho * c * c.ln());
            rows.push(AssumptionRow {
                c,
                t,
                ratio,
                target,
                residual: target.map(|target| ratio - target),
            });
        }
    }
    let t_max = *t_grid.last().unwrap();
    let max_residual_at_largest_t = rho.is_finite().then(|| {
        rows.iter()
            .filter(|r| r.t == t_max)
            .filter_map(|r| r.residual)
            .fold(0.0f64, |m, r| m.max(r.abs()))
    });
    Ok(AssumptionReport {
        distribution: *dist,
        rho,
        rows,
        max_residual_at_largest_t,
        within_tolerance: max_residual_at_largest_t.map(|m| m < tol),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthRow {
    pub k: u32,
    pub t: f64,
    /// `<X^k e^{tX}> / <e^{tX}>`
    pub ratio: f64,
    /// `log(ratio) / t`; tends to zero when the moment condition holds.
    pub log_ratio_per_t: f64,
}

/// Informational table of tilted moments `<X^k e^{tX}> / <e^{tX}>`.
pub fn moment_growth_table(dist: &PotentialDistribution, ks: &[u32], t_grid: &[f64]) -> Result<Vec<GrowthRow>> {
    dist.validate()?;
    let mut rows = Vec::new();
    for &t in t_grid {
        if !(t >= 0.0) {
            return Err(invalid("t grid must be nonnegative"));
        }
        for &k in ks {
            let log_ratio = match *dist {
                PotentialDistribution::Constant { c } => f64::from(k) * c.ln(),
                _ => log_tilted_integral(dist, t, k)? - log_tilted_integral(dist, t, 0)?,
            };
            let ratio = log_ratio.exp();
            rows.push(GrowthRow {
                k,
                t,
                ratio,
                log_ratio_per_t: if t > 0.0 { log_ratio / t } else { f64::NAN },
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEXP1: PotentialDistribution = PotentialDistribution::DoubleExp { rho: 1.0 };

    #[test]
    fn zero_at_origin() {
        for d in [
            DEXP1,
            PotentialDistribution::Weibull { beta: 2.0 },
            PotentialDistribution::BoundedUniform { b: 1.0 },
            PotentialDistribution::Constant { c: 3.0 },
        ] {
            assert_eq!(log_mgf(&d, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn constant_is_linear() {
        let d = PotentialDistribution::Constant { c: 1.7 };
        assert!((log_mgf(&d, 2.0).unwrap() - 3.4).abs() < 1e-15);
        assert!((log_laplace(&d, 2.0).unwrap() + 3.4).abs() < 1e-15);
    }

    #[test]
    fn negative_t_rejected() {
        assert!(log_mgf(&DEXP1, -1.0).is_err());
    }

    #[test]
    fn double_exp_at_two_equals_log_five() {
        // <(1+V)^2> = 1 + 2 E V + E V^2 = 5
        let h = log_mgf(&DEXP1, 2.0).unwrap();
        assert!((h - 5f64.ln()).abs() < 1e-9 * 5f64.ln(), "{h}");
    }

    #[test]
    fn uniform_closed_form_matches_quadrature() {
        let b = 1.3;
        let d = PotentialDistribution::BoundedUniform { b };
        for t in [0.5, 3.0, 40.0] {
            let closed = log_mgf(&d, t).unwrap();
            let quad = log_tilted_integral(&d, t, 0).unwrap();
            assert!((closed - quad).abs() < 1e-9 * closed.abs().max(1.0), "t={t}");
            let closed_lap = log_laplace(&d, t).unwrap();
            let quad_lap = log_tilted_integral(&d, -t, 0).unwrap();
            assert!((closed_lap - quad_lap).abs() < 1e-9 * closed_lap.abs().max(1.0), "t={t}");
        }
    }

    #[test]
    fn convex_nondecreasing_on_grid() {
        for d in [
            DEXP1,
            PotentialDistribution::Weibull { beta: 1.5 },
            PotentialDistribution::BoundedUniform { b: 2.0 },
            PotentialDistribution::Constant { c: 0.5 },
        ] {
            let h: Vec<f64> = (0..60).map(|i| log_mgf(&d, 0.25 * i as f64).unwrap()).collect();
            for w in h.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "{d}");
            }
            for w in h.windows(3) {
                assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-9, "{d}");
            }
        }
    }

    #[test]
    fn assumption_constant_residual_zero() {
        let d = PotentialDistribution::Constant { c: 2.0 };
        let rep = check_assumption_h(&d, &[0.25, 0.5], &[10.0, 100.0], 1e-12).unwrap();
        assert!(rep.rows.iter().all(|r| r.residual.unwrap().abs() < 1e-12));
        assert_eq!(rep.within_tolerance, Some(true));
    }

    #[test]
    fn assumption_double_exp_rho_two() {
        let d = PotentialDistribution::DoubleExp { rho: 2.0 };
        let rep = check_assumption_h(&d, &[0.5], &[10.0, 100.0, 1000.0], 0.05).unwrap();
        let last = rep.rows.last().unwrap();
        assert!((last.target.unwrap() - 2.0 * 0.5 * 0.5f64.ln()).abs() < 1e-15);
        assert!(last.residual.unwrap().abs() < 0.05, "{last:?}");
        assert_eq!(rep.within_tolerance, Some(true));
    }

    #[test]
    fn assumption_uniform_ratio_vanishes() {
        let d = PotentialDistribution::BoundedUniform { b: 1.0 };
        let rep = check_assumption_h(&d, &[0.1, 0.5, 0.9], &[10.0, 100.0, 1000.0], 0.02).unwrap();
        for r in rep.rows.iter().filter(|r| r.t == 1000.0) {
            assert!(r.ratio.abs() < 0.02, "{r:?}");
        }
        assert_eq!(rep.within_tolerance, Some(true));
    }

    #[test]
    fn weibull_has_no_finite_target() {
        let d = PotentialDistribution::Weibull { beta: 2.0 };
        let rep = check_assumption_h(&d, &[0.5], &[10.0, 50.0], 0.1).unwrap();
        assert!(rep.within_tolerance.is_none());
        // ratio diverges to -inf in the rho = inf regime
        assert!(rep.rows[1].ratio < rep.rows[0].ratio);
    }

    #[test]
    fn growth_table_for_constant() {
        let d = PotentialDistribution::Constant { c: 2.0 };
        let rows = moment_growth_table(&d, &[1, 2], &[1.0]).unwrap();
        assert!((rows[1].ratio - 4.0).abs() < 1e-12);
    }

    #[test]
    fn growth_table_double_exp_subexponential() {
        let rows = moment_growth_table(&DEXP1, &[2], &[10.0, 100.0]).unwrap();
        assert!(rows[1].log_ratio_per_t < rows[0].log_ratio_per_t);
        assert!(rows[1].log_ratio_per_t < 0.1);
    }
}
