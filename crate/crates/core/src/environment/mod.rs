//! Random killing/branching rate fields `(xi_0, xi_2)` and the analytic
//! characterisation of their laws.

mod distribution;
mod field;
mod mgf;

pub use distribution::PotentialDistribution;
pub use field::{EnvironmentField, EnvironmentFile};
pub use mgf::{
    check_assumption_h, log_laplace, log_mgf, moment_growth_table, potential_log_mgf, AssumptionReport,
    AssumptionRow, GrowthRow,
};
