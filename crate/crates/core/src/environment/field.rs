use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PotentialDistribution;
use crate::error::{invalid, Result};
use crate::lattice::{Boundary, Geometry};
use crate::rng::substream;

/// A frozen realisation of the killing and branching rates on a finite box.
///
/// Immutable once built; share it freely across worker threads.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentField {
    geometry: Geometry,
    seed: u64,
    dist0: Option<PotentialDistribution>,
    dist2: Option<PotentialDistribution>,
    xi0: Vec<f64>,
    xi2: Vec<f64>,
    xi: Vec<f64>,
}

/// On-disk form. Sites are listed in the box's lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentFile {
    pub d: usize,
    #[serde(rename = "R")]
    pub r: usize,
    pub boundary: Boundary,
    pub seed: u64,
    pub dist0: Option<PotentialDistribution>,
    pub dist2: Option<PotentialDistribution>,
    pub xi0: Vec<f64>,
    pub xi2: Vec<f64>,
}

impl EnvironmentField {
    /// Draw `xi_0` and `xi_2` i.i.d. per site from independent substreams.
    pub fn sample(
        dist0: PotentialDistribution,
        dist2: PotentialDistribution,
        dim: usize,
        radius: usize,
        boundary: Boundary,
        seed: u64,
    ) -> Result<Self> {
        dist0.validate()?;
        dist2.validate()?;
        let geometry = Geometry::new(dim, radius, boundary)?;
        let n = geometry.n_sites();
        let mut rng0 = substream(seed, &[0]);
        let mut rng2 = substream(seed, &[2]);
        let xi0 = (0..n).map(|_| dist0.sample(&mut rng0)).collect();
        let xi2 = (0..n).map(|_| dist2.sample(&mut rng2)).collect();
        Ok(Self::assemble(geometry, seed, Some(dist0), Some(dist2), xi0, xi2))
    }

    pub fn constant(dim: usize, radius: usize, boundary: Boundary, xi0: f64, xi2: f64) -> Result<Self> {
        let d0 = PotentialDistribution::Constant { c: xi0 };
        let d2 = PotentialDistribution::Constant { c: xi2 };
        Self::sample(d0, d2, dim, radius, boundary, 0)
    }

    /// Build from explicit per-site values.
    pub fn from_values(geometry: Geometry, xi0: Vec<f64>, xi2: Vec<f64>) -> Result<Self> {
        let n = geometry.n_sites();
        if xi0.len() != n || xi2.len() != n {
            return Err(invalid(format!(
                "expected {n} values per field, got {} and {}",
                xi0.len(),
                xi2.len()
            )));
        }
        if xi0.iter().chain(&xi2).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("rates must be finite and nonnegative"));
        }
        Ok(Self::assemble(geometry, 0, None, None, xi0, xi2))
    }

    fn assemble(
        geometry: Geometry,
        seed: u64,
        dist0: Option<PotentialDistribution>,
        dist2: Option<PotentialDistribution>,
        xi0: Vec<f64>,
        xi2: Vec<f64>,
    ) -> Self {
        let xi = xi2.iter().zip(&xi0).map(|(b, k)| b - k).collect();
        EnvironmentField {
            geometry,
            seed,
            dist0,
            dist2,
            xi0,
            xi2,
            xi,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dist0(&self) -> Option<&PotentialDistribution> {
        self.dist0.as_ref()
    }

    pub fn dist2(&self) -> Option<&PotentialDistribution> {
        self.dist2.as_ref()
    }

    /// Killing rates.
    pub fn xi0(&self) -> &[f64] {
        &self.xi0
    }

    /// Branching rates.
    pub fn xi2(&self) -> &[f64] {
        &self.xi2
    }

    /// Potential `xi_2 - xi_0`.
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn to_file(&self) -> EnvironmentFile {
        EnvironmentFile {
            d: self.geometry.dim(),
            r: self.geometry.radius(),
            boundary: self.geometry.boundary(),
            seed: self.seed,
            dist0: self.dist0,
            dist2: self.dist2,
            xi0: self.xi0.clone(),
            xi2: self.xi2.clone(),
        }
    }

    pub fn from_file(file: EnvironmentFile) -> Result<Self> {
        let geometry = Geometry::new(file.d, file.r, file.boundary)?;
        let mut env = Self::from_values(geometry, file.xi0, file.xi2)?;
        env.seed = file.seed;
        env.dist0 = file.dist0;
        env.dist2 = file.dist2;
        Ok(env)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
