//! Initial states in the momentum basis and the site ↔ momentum transform.
//!
//! Conventions: `c_k = ⟨k|ψ⟩` with `|k⟩ = N^{-1/2} Σ_j e^{ikj} |j⟩`, sites
//! labelled `j = 1 … N`. Site amplitudes are stored with index `j − 1`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use num_complex::Complex64;
use thiserror::Error;

use crate::angle::parse_angle;
use crate::ring::{wrap_angle, MomentumGrid};

/// Normalization tolerance for stored states.
pub const NORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("width coefficient must be positive and finite (got {0})")]
    InvalidWidth(f64),
    #[error("width coefficient {alpha} exceeds the ring size {n_sites}; the packet collapses onto one momentum")]
    DegenerateWidth { alpha: f64, n_sites: usize },
    #[error("site {site} outside 1..={n_sites}")]
    SiteOutOfRange { site: usize, n_sites: usize },
    #[error("grid index {index} outside 0..{len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("expected {expected} amplitudes, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("state is not normalized: Σ|c|² = {0}")]
    NotNormalized(f64),
    #[error("state has zero norm")]
    ZeroNorm,
}

fn norm_sqr(amps: &[Complex64]) -> f64 {
    amps.iter().map(|c| c.norm_sqr()).sum()
}

fn check_norm(amps: &[Complex64]) -> Result<(), StateError> {
    let n = norm_sqr(amps);
    if (n - 1.0).abs() > NORM_TOLERANCE {
        Err(StateError::NotNormalized(n))
    } else {
        Ok(())
    }
}

fn normalize(mut amps: Vec<Complex64>) -> Result<Vec<Complex64>, StateError> {
    let n = norm_sqr(&amps);
    if !(n > 0.0 && n.is_finite()) {
        return Err(StateError::ZeroNorm);
    }
    let s = n.sqrt().recip();
    for a in amps.iter_mut() {
        *a *= s;
    }
    Ok(amps)
}

/// A normalized single-particle state in the momentum basis.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    grid: MomentumGrid,
    amplitudes: Vec<Complex64>,
}

impl MomentumState {
    /// Wrap amplitudes that are already normalized to within 1e-12.
    pub fn new(grid: MomentumGrid, amplitudes: Vec<Complex64>) -> Result<Self, StateError> {
        if amplitudes.len() != grid.len() {
            return Err(StateError::LengthMismatch {
                expected: grid.len(),
                got: amplitudes.len(),
            });
        }
        check_norm(&amplitudes)?;
        Ok(Self { grid, amplitudes })
    }

    /// Normalize arbitrary nonzero amplitudes.
    pub fn normalized(grid: MomentumGrid, amplitudes: Vec<Complex64>) -> Result<Self, StateError> {
        if amplitudes.len() != grid.len() {
            return Err(StateError::LengthMismatch {
                expected: grid.len(),
                got: amplitudes.len(),
            });
        }
        Ok(Self {
            grid,
            amplitudes: normalize(amplitudes)?,
        })
    }

    pub fn grid(&self) -> &MomentumGrid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// `|c_k|²` per grid point.
    pub fn weights(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.amplitudes).sqrt()
    }

    /// `⟨self|other⟩`.
    pub fn overlap(&self, other: &MomentumState) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Multiply every amplitude by `phase(k)`; used by the propagator.
    pub(crate) fn map_amplitudes(&self, f: impl Fn(usize, Complex64) -> Complex64) -> Self {
        Self {
            grid: self.grid.clone(),
            amplitudes: self
                .amplitudes
                .iter()
                .enumerate()
                .map(|(i, &c)| f(i, c))
                .collect(),
        }
    }

    /// `Σ_k |c_k|² sin²k`.
    pub fn sin2_moment(&self) -> f64 {
        self.amplitudes
            .iter()
            .zip(self.grid.k_values())
            .map(|(c, k)| c.norm_sqr() * k.sin().powi(2))
            .sum()
    }

    /// Largest `||c(k)|² − |c(−k)|²|` over the grid.
    pub fn asymmetry(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let m = self.grid.mirror_index(i);
                (self.amplitudes[i].norm_sqr() - self.amplitudes[m].norm_sqr()).abs()
            })
            .fold(0.0, f64::max)
    }

    /// CSV with columns `index,re,im`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        write_amplitudes_csv(out, &self.amplitudes)
    }
}

/// A normalized state in the site basis; `amplitudes[j − 1]` is site `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteState {
    amplitudes: Vec<Complex64>,
}

impl SiteState {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self, StateError> {
        check_norm(&amplitudes)?;
        Ok(Self { amplitudes })
    }

    pub fn normalized(amplitudes: Vec<Complex64>) -> Result<Self, StateError> {
        Ok(Self {
            amplitudes: normalize(amplitudes)?,
        })
    }

    /// Skip the normalization check; the oracle checks norms itself.
    pub(crate) fn from_raw(amplitudes: Vec<Complex64>) -> Self {
        Self { amplitudes }
    }

    pub fn n_sites(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.amplitudes).sqrt()
    }

    pub fn overlap(&self, other: &SiteState) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        write_amplitudes_csv(out, &self.amplitudes)
    }
}

fn write_amplitudes_csv<W: Write>(out: &mut W, amps: &[Complex64]) -> io::Result<()> {
    writeln!(out, "index,re,im")?;
    for (i, c) in amps.iter().enumerate() {
        writeln!(out, "{},{},{}", i, c.re, c.im)?;
    }
    Ok(())
}

/// `c_k = λ exp(−(α²/2) d(k, k0)²)` with `d` the wrapped distance on the
/// circle and `λ` from direct summation.
pub fn gaussian_packet(
    grid: &MomentumGrid,
    k0: f64,
    alpha: f64,
) -> Result<MomentumState, StateError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(StateError::InvalidWidth(alpha));
    }
    if alpha > grid.n_sites() as f64 {
        return Err(StateError::DegenerateWidth {
            alpha,
            n_sites: grid.n_sites(),
        });
    }
    if !k0.is_finite() {
        return Err(StateError::InvalidWidth(k0));
    }
    let amps: Vec<Complex64> = grid
        .k_values()
        .iter()
        .map(|&k| {
            let d = wrap_angle(k - k0);
            Complex64::new((-0.5 * alpha * alpha * d * d).exp(), 0.0)
        })
        .collect();
    let state = MomentumState::normalized(grid.clone(), amps)?;
    Ok(state)
}

/// `|l⟩`: `c_k = e^{−ikl}/√N`.
pub fn single_site(grid: &MomentumGrid, site: usize) -> Result<MomentumState, StateError> {
    let n = grid.n_sites();
    if site == 0 || site > n {
        return Err(StateError::SiteOutOfRange { site, n_sites: n });
    }
    let s = (n as f64).sqrt().recip();
    let amps = (0..grid.len())
        .map(|i| grid.phase(i, site as i64).conj() * s)
        .collect();
    Ok(MomentumState {
        grid: grid.clone(),
        amplitudes: amps,
    })
}

/// The momentum eigenstate at grid index `index`.
pub fn plane_wave(grid: &MomentumGrid, index: usize) -> Result<MomentumState, StateError> {
    if index >= grid.len() {
        return Err(StateError::IndexOutOfRange {
            index,
            len: grid.len(),
        });
    }
    let mut amps = vec![Complex64::new(0.0, 0.0); grid.len()];
    amps[index] = Complex64::new(1.0, 0.0);
    Ok(MomentumState {
        grid: grid.clone(),
        amplitudes: amps,
    })
}

/// `a_j = N^{-1/2} Σ_k e^{ikj} c_k`.
pub fn to_site_basis(state: &MomentumState) -> SiteState {
    let grid = &state.grid;
    let n = grid.n_sites();
    let s = (n as f64).sqrt().recip();
    let amps = (1..=n as i64)
        .map(|j| {
            state
                .amplitudes
                .iter()
                .enumerate()
                .map(|(i, &c)| grid.phase(i, j) * c)
                .sum::<Complex64>()
                * s
        })
        .collect();
    SiteState { amplitudes: amps }
}

/// `c_k = N^{-1/2} Σ_j e^{−ikj} a_j`.
pub fn from_site_basis(state: &SiteState) -> MomentumState {
    let n = state.n_sites();
    let grid = MomentumGrid::new(n);
    let s = (n as f64).sqrt().recip();
    let amps = (0..grid.len())
        .map(|i| {
            state
                .amplitudes
                .iter()
                .enumerate()
                .map(|(idx, &a)| grid.phase(i, idx as i64 + 1).conj() * a)
                .sum::<Complex64>()
                * s
        })
        .collect();
    MomentumState {
        grid,
        amplitudes: amps,
    }
}

/// Textual description of an initial state, e.g. `gaussian:k0=0,alpha=50`,
/// `single-site:l=1`, `plane-wave:index=0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateSpec {
    Gaussian { k0: f64, alpha: f64 },
    SingleSite { site: usize },
    PlaneWave { index: usize },
}

impl StateSpec {
    pub fn build(&self, grid: &MomentumGrid) -> Result<MomentumState, StateError> {
        match *self {
            StateSpec::Gaussian { k0, alpha } => gaussian_packet(grid, k0, alpha),
            StateSpec::SingleSite { site } => single_site(grid, site),
            StateSpec::PlaneWave { index } => plane_wave(grid, index),
        }
    }
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSpec::Gaussian { k0, alpha } => write!(f, "gaussian:k0={k0},alpha={alpha}"),
            StateSpec::SingleSite { site } => write!(f, "single-site:l={site}"),
            StateSpec::PlaneWave { index } => write!(f, "plane-wave:index={index}"),
        }
    }
}

impl FromStr for StateSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let mut params = Vec::new();
        for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value in state spec, got `{part}`"))?;
            params.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
        let get = |key: &str| {
            params
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        };
        let parse_usize = |key: &str, default: usize| -> Result<usize, String> {
            get(key)
                .map(|v| {
                    v.parse::<usize>()
                        .map_err(|_| format!("bad integer `{v}` for {key}"))
                })
                .unwrap_or(Ok(default))
        };
        for (k, _) in &params {
            let known: &[&str] = match kind {
                "gaussian" => &["k0", "alpha"],
                "single-site" | "site" => &["l", "site"],
                "plane-wave" | "plane" => &["index"],
                _ => &[],
            };
            if !known.contains(&k.as_str()) {
                return Err(format!("unknown parameter `{k}` for state `{kind}`"));
            }
        }
        match kind {
            "gaussian" => {
                let k0 = get("k0").map(parse_angle).unwrap_or(Ok(0.0))?;
                let alpha = get("alpha")
                    .ok_or("gaussian state needs alpha=<width>")?
                    .parse::<f64>()
                    .map_err(|e| format!("bad alpha: {e}"))?;
                Ok(StateSpec::Gaussian { k0, alpha })
            }
            "single-site" | "site" => {
                let site = match get("l") {
                    Some(_) => parse_usize("l", 1)?,
                    None => parse_usize("site", 1)?,
                };
                Ok(StateSpec::SingleSite { site })
            }
            "plane-wave" | "plane" => Ok(StateSpec::PlaneWave {
                index: parse_usize("index", 0)?,
            }),
            other => Err(format!(
                "unknown state `{other}` (expected gaussian, single-site or plane-wave)"
            )),
        }
    }
}

/// Grid index of the momentum closest to `k`.
pub fn nearest_index(grid: &MomentumGrid, k: f64) -> usize {
    let m = (wrap_angle(k) / (2.0 * PI) * grid.n_sites() as f64).round() as i64;
    grid.index_of_mode(m)
}
