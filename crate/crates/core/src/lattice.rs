//! Finite lattice boxes `{-R, ..., R}^d` with periodic or zero (absorbing)
//! boundary, and the nearest-neighbour structure used by every route.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const MAX_SITES: usize = 1 << 24;
const NO_NEIGHBOR: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Periodic,
    Zero,
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "zero" => Ok(Boundary::Zero),
            other => Err(invalid(format!("unknown boundary '{other}'"))),
        }
    }
}

/// Site layout of a box of side `2R + 1`: lexicographic in the coordinates,
/// first axis slowest, each axis running from `-R` to `R`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Geometry {
    dim: usize,
    radius: usize,
    boundary: Boundary,
    side: usize,
    n_sites: usize,
    neighbors: Vec<usize>,
}

impl Geometry {
    pub fn new(dim: usize, radius: usize, boundary: Boundary) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        let side = 2 * radius + 1;
        let n_sites = u32::try_from(dim)
            .ok()
            .and_then(|d| side.checked_pow(d))
            .filter(|&n| n <= MAX_SITES)
            .ok_or(Error::Capacity {
                what: "lattice sites",
                limit: MAX_SITES,
                requested: usize::MAX,
            })?;
        let mut geometry = Geometry {
            dim,
            radius,
            boundary,
            side,
            n_sites,
            neighbors: Vec::new(),
        };
        let mut neighbors = Vec::with_capacity(n_sites * 2 * dim);
        let mut coords = vec![0i64; dim];
        for idx in 0..n_sites {
            geometry.write_coords(idx, &mut coords);
            for dir in 0..2 * dim {
                let (axis, step) = direction(dir);
                coords[axis] += step;
                neighbors.push(geometry.index_of(&coords).unwrap_or(NO_NEIGHBOR));
                coords[axis] -= step;
            }
        }
        geometry.neighbors = neighbors;
        Ok(geometry)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Number of lattice neighbours of a site in `Z^d`.
    pub fn degree(&self) -> usize {
        2 * self.dim
    }

    /// Box index of a lattice point. Periodic boxes wrap any point of `Z^d`;
    /// zero-boundary boxes return `None` outside the box.
    pub fn index_of(&self, coords: &[i64]) -> Option<usize> {
        debug_assert_eq!(coords.len(), self.dim);
        let r = self.radius as i64;
        let side = self.side as i64;
        let mut idx = 0usize;
        for &c in coords {
            let shifted = match self.boundary {
                Boundary::Periodic => (c + r).rem_euclid(side),
                Boundary::Zero => {
                    if c < -r || c > r {
                        return None;
                    }
                    c + r
                }
            };
            idx = idx * self.side + shifted as usize;
        }
        Some(idx)
    }

    pub fn contains(&self, coords: &[i64]) -> bool {
        let r = self.radius as i64;
        coords.len() == self.dim && coords.iter().all(|&c| (-r..=r).contains(&c))
    }

    pub fn write_coords(&self, mut idx: usize, out: &mut [i64]) {
        for axis in (0..self.dim).rev() {
            out[axis] = (idx % self.side) as i64 - self.radius as i64;
            idx /= self.side;
        }
    }

    pub fn coords(&self, idx: usize) -> Vec<i64> {
        let mut out = vec![0; self.dim];
        self.write_coords(idx, &mut out);
        out
    }

    /// Neighbour of `idx` in direction `dir < 2d`, or `None` if it lies
    /// outside a zero-boundary box.
    #[inline]
    pub fn neighbor(&self, idx: usize, dir: usize) -> Option<usize> {
        let n = self.neighbors[idx * 2 * self.dim + dir];
        (n != NO_NEIGHBOR).then_some(n)
    }

    /// Parse `"1,-2"`-style coordinates and check they lie in the box.
    pub fn parse_site(&self, text: &str) -> Result<Vec<i64>> {
        let coords = parse_coords(text)?;
        if !self.contains(&coords) {
            return Err(Error::Domain(format!(
                "site {coords:?} is not inside the box of radius {} in dimension {}",
                self.radius, self.dim
            )));
        }
        Ok(coords)
    }
}

pub fn parse_coords(text: &str) -> Result<Vec<i64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<i64>()
                .map_err(|e| invalid(format!("bad coordinate '{s}': {e}")))
        })
        .collect()
}

/// `(axis, +-1)` of direction index `dir`.
#[inline]
pub fn direction(dir: usize) -> (usize, i64) {
    (dir / 2, if dir % 2 == 0 { 1 } else { -1 })
}
