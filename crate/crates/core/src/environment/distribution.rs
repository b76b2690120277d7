use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Law of a single-site rate.
///
/// `DoubleExp(rho)` is realised as `rho * ln(1 + V)` with `V ~ Exp(1)`: a
/// strictly positive variable with upper tail `exp(1 - e^{r/rho})`, i.e. the
/// double-exponential tail up to the constant factor `e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialDistribution {
    DoubleExp { rho: f64 },
    /// Upper tail `exp(-r^beta)`, `beta > 1`.
    Weibull { beta: f64 },
    /// Uniform on `[0, b]`.
    BoundedUniform { b: f64 },
    Constant { c: f64 },
}

impl PotentialDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::DoubleExp { rho } => rho.is_finite() && rho > 0.0,
            Self::Weibull { beta } => beta.is_finite() && beta > 1.0,
            Self::BoundedUniform { b } => b.is_finite() && b > 0.0,
            Self::Constant { c } => c.is_finite() && c >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("parameter out of range for {self}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::DoubleExp { rho } => {
                let v: f64 = Exp1.sample(rng);
                rho * v.ln_1p()
            }
            Self::Weibull { beta } => {
                let v: f64 = Exp1.sample(rng);
                v.powf(1.0 / beta)
            }
            Self::BoundedUniform { b } => b * rng.random::<f64>(),
            Self::Constant { c } => c,
        }
    }

    /// The double-exponential parameter of the law: `rho` for `DoubleExp`,
    /// `+inf` for Weibull tails, `0` for bounded laws.
    pub fn rho(&self) -> f64 {
        match *self {
            Self::DoubleExp { rho } => rho,
            Self::Weibull { .. } => f64::INFINITY,
            Self::BoundedUniform { .. } | Self::Constant { .. } => 0.0,
        }
    }

    /// Exact upper tail `P(X > r)`.
    pub fn tail(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 1.0;
        }
        match *self {
            Self::DoubleExp { rho } => (-(r / rho).exp_m1()).exp(),
            Self::Weibull { beta } => (-r.powf(beta)).exp(),
            Self::BoundedUniform { b } => (1.0 - r / b).max(0.0),
            Self::Constant { c } => {
                if r < c {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Log-density and support `[lo, hi]` for absolutely continuous laws.
    pub(crate) fn log_density(&self) -> Option<(Box<dyn Fn(f64) -> f64 + Send + Sync>, f64, f64)> {
        match *self {
            Self::DoubleExp { rho } => Some((
                Box::new(move |r: f64| -rho.ln() + r / rho - (r / rho).exp_m1()),
                0.0,
                f64::INFINITY,
            )),
            Self::Weibull { beta } => Some((
                Box::new(move |r: f64| beta.ln() + (beta - 1.0) * r.ln() - r.powf(beta)),
                0.0,
                f64::INFINITY,
            )),
            Self::BoundedUniform { b } => Some((Box::new(move |_| -b.ln()), 0.0, b)),
            Self::Constant { .. } => None,
        }
    }
}

impl fmt::Display for PotentialDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::DoubleExp { rho } => write!(f, "double-exp:{rho}"),
            Self::Weibull { beta } => write!(f, "weibull:{beta}"),
            Self::BoundedUniform { b } => write!(f, "uniform:{b}"),
            Self::Constant { c } => write!(f, "const:{c}"),
        }
    }
}

/// Parses `double-exp:<rho>`, `weibull:<beta>`, `uniform:<b>`, `const:<c>`.
impl FromStr for PotentialDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("expected <kind>:<parameter>, got '{s}'")))?;
        let p: f64 = value
            .trim()
            .parse()
            .map_err(|e| invalid(format!("bad parameter '{value}': {e}")))?;
        let dist = match kind.trim() {
            "double-exp" | "double_exp" | "dexp" => Self::DoubleExp { rho: p },
            "weibull" => Self::Weibull { beta: p },
            "uniform" | "bounded_uniform" => Self::BoundedUniform { b: p },
            "const" | "constant" => Self::Constant { c: p },
            other => return Err(invalid(format!("unknown distribution kind '{other}'"))),
        };
        dist.validate()?;
        Ok(dist)
    }
}
