//! Lattice geometry, momentum grid and unit conventions.
//!
//! Units: ħ = 1, energies in units of the hopping `J`, times in units of
//! `1/J`, flux phases in radians (per bond, `φ = 2πΦ/N`).

use std::f64::consts::{PI, TAU};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("n_sites must be at least 2 (got {0})")]
    NonPositiveSites(usize),
    #[error("hopping must be positive (got {0})")]
    NonPositiveHopping(f64),
    #[error("field `{field}` must be finite (got {value})")]
    NonFiniteField { field: &'static str, value: f64 },
}

/// Reduce an angle into `(−π, π]`.
///
/// Values within 1e-12 of `−π` are mapped to `+π` so that e.g. `3π` lands on
/// `π` regardless of rounding in the caller's arithmetic.
pub fn wrap_angle(x: f64) -> f64 {
    if x > -PI && x <= PI {
        return x;
    }
    let mut r = x.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    if r <= -PI + 1e-12 {
        r += TAU;
    }
    if r > PI {
        // only reachable through the tolerance band above
        r = PI;
    }
    r
}

/// A ring of `N` sites with hopping `J` and a static per-bond flux phase `φ₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingConfig {
    n_sites: usize,
    hopping: f64,
    phi0: f64,
}

impl RingConfig {
    /// Validate raw parameters; `phi0` is reduced into `(−π, π]`.
    pub fn new(n_sites: usize, hopping: f64, phi0: f64) -> Result<Self, ConfigError> {
        if n_sites < 2 {
            return Err(ConfigError::NonPositiveSites(n_sites));
        }
        if !hopping.is_finite() {
            return Err(ConfigError::NonFiniteField {
                field: "hopping",
                value: hopping,
            });
        }
        if hopping <= 0.0 {
            return Err(ConfigError::NonPositiveHopping(hopping));
        }
        if !phi0.is_finite() {
            return Err(ConfigError::NonFiniteField {
                field: "phi0",
                value: phi0,
            });
        }
        Ok(Self {
            n_sites,
            hopping,
            phi0: wrap_angle(phi0),
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn hopping(&self) -> f64 {
        self.hopping
    }

    pub fn phi0(&self) -> f64 {
        self.phi0
    }

    /// Default averaging horizon `25 N / J`.
    pub fn default_horizon(&self) -> f64 {
        25.0 * self.n_sites as f64 / self.hopping
    }

    pub fn momentum_grid(&self) -> MomentumGrid {
        MomentumGrid::new(self.n_sites)
    }
}

/// Re-validate a configuration; a no-op on already valid values.
pub fn validate_config(config: RingConfig) -> Result<RingConfig, ConfigError> {
    RingConfig::new(config.n_sites, config.hopping, config.phi0)
}

/// The `N` lattice momenta `k = 2πm/N`, with integer modes `m` chosen so that
/// every `k` lies in `(−π, π]`, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumGrid {
    n_sites: usize,
    modes: Vec<i64>,
    k_values: Vec<f64>,
}

impl MomentumGrid {
    pub fn new(n_sites: usize) -> Self {
        let n = n_sites as i64;
        let lo = -((n - 1) / 2);
        let hi = n / 2;
        let modes: Vec<i64> = (lo..=hi).collect();
        let k_values = modes
            .iter()
            .map(|&m| {
                if 2 * m == n {
                    PI
                } else {
                    TAU * m as f64 / n_sites as f64
                }
            })
            .collect();
        Self {
            n_sites,
            modes,
            k_values,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn len(&self) -> usize {
        self.k_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_values.is_empty()
    }

    pub fn k_values(&self) -> &[f64] {
        &self.k_values
    }

    /// Integer mode numbers `m` with `k = 2πm/N`.
    pub fn modes(&self) -> &[i64] {
        &self.modes
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.n_sites as f64
    }

    /// Index of the grid point holding mode `m` (any integer, taken mod `N`).
    pub fn index_of_mode(&self, m: i64) -> usize {
        let n = self.n_sites as i64;
        let lo = self.modes[0];
        (m - lo).rem_euclid(n) as usize
    }

    /// Index of the grid point whose momentum is `−k`.
    pub fn mirror_index(&self, index: usize) -> usize {
        self.index_of_mode(-self.modes[index])
    }

    /// `e^{i k_index j}` for integer `j`, evaluated from the exact integer
    /// phase `m·j mod N` to avoid large-argument rounding.
    pub fn phase(&self, index: usize, j: i64) -> num_complex::Complex64 {
        let n = self.n_sites as i64;
        let r = (self.modes[index] * j).rem_euclid(n);
        num_complex::Complex64::from_polar(1.0, TAU * r as f64 / self.n_sites as f64)
    }
}

/// Free-function form of [`MomentumGrid::new`] for a validated ring.
pub fn momentum_grid(config: &RingConfig) -> MomentumGrid {
    config.momentum_grid()
}
