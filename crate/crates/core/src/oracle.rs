//! Brute-force site-basis propagation for cross-checking the k-space code.
//!
//! `H(t)` has `H_{j,j+1} = −J e^{iφ(t)}` on every bond of the ring (and the
//! conjugate below the diagonal). States are advanced with Crank–Nicolson,
//! `(1 + iHh/2) a' = (1 − iHh/2) a`, with `φ` taken at each step's midpoint.
//! Square-wave steps never straddle a flux jump. None of this touches the
//! phase-integral or Bessel code.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::ring::RingConfig;
use crate::state::SiteState;
use crate::waveform::{FluxWaveform, WaveformKind};

/// Largest ring the oracle accepts.
pub const MAX_ORACLE_SITES: usize = 64;

/// Allowed norm drift before a run is rejected.
pub const UNITARITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("StepTooLarge: dt = {dt} exceeds the limit {limit}")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error("UnitarityLoss: norm drifted by {drift:e}")]
    UnitarityLoss { drift: f64 },
    #[error("oracle supports at most {MAX_ORACLE_SITES} sites (got {0})")]
    TooManySites(usize),
    #[error("state lives on {state} sites but the ring has {ring}")]
    SizeMismatch { state: usize, ring: usize },
    #[error("time must be finite and non-negative (got {0})")]
    InvalidTime(f64),
}

/// The single-particle Hamiltonian at a fixed bond phase `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoppingMatrix {
    n_sites: usize,
    hopping: f64,
    phi: f64,
}

impl HoppingMatrix {
    pub fn new(n_sites: usize, hopping: f64, phi: f64) -> Self {
        Self {
            n_sites,
            hopping,
            phi,
        }
    }

    pub fn dimension(&self) -> usize {
        self.n_sites
    }

    /// Dense matrix; for `N = 2` the two bonds add onto the same entries.
    pub fn matrix(&self) -> DMatrix<Complex64> {
        let n = self.n_sites;
        let t = Complex64::from_polar(-self.hopping, self.phi);
        let mut h = DMatrix::zeros(n, n);
        for j in 0..n {
            let next = (j + 1) % n;
            h[(j, next)] += t;
            h[(next, j)] += t.conj();
        }
        h
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: f64,
    len: f64,
    steps: usize,
    /// Bond phase when it is constant over the whole segment.
    frozen: Option<f64>,
}

/// Largest admissible step for a waveform: `min(τ/200, 0.01/J)`.
pub fn max_step(config: &RingConfig, waveform: &FluxWaveform) -> f64 {
    let cap = 0.01 / config.hopping();
    match waveform.period() {
        Some(tau) => cap.min(tau / 200.0),
        None => cap,
    }
}

fn segments(config: &RingConfig, waveform: &FluxWaveform, t: f64, dt: f64) -> Vec<Segment> {
    let phi0 = config.phi0();
    let mut cuts = vec![0.0];
    if waveform.kind() == WaveformKind::Square {
        let half = 0.5 * waveform.period().expect("square drive is periodic");
        let mut i = 1u64;
        loop {
            let c = i as f64 * half;
            if c >= t * (1.0 - 1e-12) {
                break;
            }
            cuts.push(c);
            i += 1;
        }
    }
    cuts.push(t);
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let len = w[1] - w[0];
            let steps = ((len / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let frozen = match waveform.kind() {
                WaveformKind::Constant | WaveformKind::Square => {
                    Some(phi0 + waveform.flux_at(w[0] + 0.5 * len))
                }
                _ => None,
            };
            Segment {
                start: w[0],
                len,
                steps,
                frozen,
            }
        })
        .collect()
}

/// `(1 + iHh/2)⁻¹ (1 − iHh/2)` as an explicit matrix.
fn cayley(n: usize, hopping: f64, phi: f64, h: f64) -> DMatrix<Complex64> {
    let ih = HoppingMatrix::new(n, hopping, phi).matrix() * Complex64::new(0.0, 0.5 * h);
    let id = DMatrix::<Complex64>::identity(n, n);
    let lhs = &id + &ih;
    let rhs = &id - &ih;
    lhs.lu()
        .solve(&rhs)
        .expect("1 + iHh/2 is invertible for Hermitian H")
}

fn cn_step(v: &DVector<Complex64>, n: usize, hopping: f64, phi: f64, h: f64) -> DVector<Complex64> {
    let ih = HoppingMatrix::new(n, hopping, phi).matrix() * Complex64::new(0.0, 0.5 * h);
    let id = DMatrix::<Complex64>::identity(n, n);
    let rhs = (&id - &ih) * v;
    (&id + &ih)
        .lu()
        .solve(&rhs)
        .expect("1 + iHh/2 is invertible for Hermitian H")
}

/// Propagate `state` from 0 to `t` with steps no longer than `dt`.
pub fn evolve_realspace(
    state: &SiteState,
    config: &RingConfig,
    waveform: &FluxWaveform,
    t: f64,
    dt: f64,
) -> Result<SiteState, OracleError> {
    let n = config.n_sites();
    if n > MAX_ORACLE_SITES {
        return Err(OracleError::TooManySites(n));
    }
    if state.n_sites() != n {
        return Err(OracleError::SizeMismatch {
            state: state.n_sites(),
            ring: n,
        });
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(OracleError::InvalidTime(t));
    }
    let limit = max_step(config, waveform);
    if !(dt > 0.0 && dt <= limit * (1.0 + 1e-12)) {
        return Err(OracleError::StepTooLarge { dt, limit });
    }

    let hopping = config.hopping();
    let mut v = DVector::from_column_slice(state.amplitudes());
    let mut cache: Vec<(f64, f64, DMatrix<Complex64>)> = Vec::new();
    for seg in segments(config, waveform, t, dt) {
        let h = seg.len / seg.steps as f64;
        match seg.frozen {
            Some(phi) => {
                let pos = cache.iter().position(|(p, s, _)| *p == phi && *s == h);
                let idx = pos.unwrap_or_else(|| {
                    cache.push((phi, h, cayley(n, hopping, phi, h)));
                    cache.len() - 1
                });
                let m = &cache[idx].2;
                for _ in 0..seg.steps {
                    v = m * &v;
                }
            }
            None => {
                for i in 0..seg.steps {
                    let mid = seg.start + (i as f64 + 0.5) * h;
                    let phi = config.phi0() + waveform.flux_at(mid);
                    v = cn_step(&v, n, hopping, phi, h);
                }
            }
        }
    }

    let drift = (v.norm() - state.norm()).abs();
    if drift > UNITARITY_TOLERANCE {
        return Err(OracleError::UnitarityLoss { drift });
    }
    Ok(SiteState::from_raw(v.iter().copied().collect()))
}

/// `|⟨s(0)|s(t)⟩|` from [`evolve_realspace`].
pub fn fidelity_realspace(
    state: &SiteState,
    config: &RingConfig,
    waveform: &FluxWaveform,
    t: f64,
    dt: f64,
) -> Result<f64, OracleError> {
    let out = evolve_realspace(state, config, waveform, t, dt)?;
    Ok(state.overlap(&out).norm())
}

/// Site amplitudes of `|l⟩` without going through momentum space.
pub fn site_delta(n_sites: usize, site: usize) -> Option<SiteState> {
    if site == 0 || site > n_sites {
        return None;
    }
    let mut a = vec![Complex64::new(0.0, 0.0); n_sites];
    a[site - 1] = Complex64::new(1.0, 0.0);
    Some(SiteState::from_raw(a))
}

/// Site amplitudes of the plane wave with integer mode `m`,
/// `a_j = e^{i 2π m j / N}/√N`.
pub fn site_plane_wave(n_sites: usize, m: i64) -> SiteState {
    let s = (n_sites as f64).sqrt().recip();
    let n = n_sites as i64;
    let a = (1..=n)
        .map(|j| Complex64::from_polar(s, TAU * (m * j).rem_euclid(n) as f64 / n_sites as f64))
        .collect();
    SiteState::from_raw(a)
}
