//! Parameter studies: amplitude × frequency maps, fidelity–frequency
//! curves, threshold frequencies and the small-period theory.
//!
//! Frequencies are given in units of `J` (the drive is built with
//! `ν = f·J`); amplitudes are in radians. Every average uses
//! [`mean_fidelity`] with the default [`SamplingPolicy`].

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::evolution::{mean_fidelity, EvolutionError, SamplingPolicy};
use crate::ring::RingConfig;
use crate::state::{MomentumState, StateError, StateSpec};
use crate::waveform::{DriveKind, WaveformError};

/// Search window of the numeric threshold, in units of `J`.
pub const THRESHOLD_RANGE: (f64, f64) = (0.01, 100.0);

/// Log-scan density of the numeric threshold search.
pub const SCAN_POINTS_PER_DECADE: usize = 8;

/// Relative width at which threshold bisection stops.
const BISECTION_RTOL: f64 = 1e-6;

/// Asymmetry tolerated by [`smalltau_theory`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("{0} grid is empty")]
    EmptyGrid(&'static str),
    #[error("NoBracket: average fidelity never reaches {target} in [{lo}J, {hi}J] (best {best})")]
    NoBracket {
        target: f64,
        lo: f64,
        hi: f64,
        best: f64,
    },
    #[error("TargetOutOfRange: target must lie in (0, 1) (got {0})")]
    TargetOutOfRange(f64),
    #[error("tolerance must be positive (got {0})")]
    InvalidTolerance(f64),
    #[error("alpha must be positive and finite (got {0})")]
    InvalidAlpha(f64),
    #[error("AsymmetricState: |c_k|² differs from |c_-k|² by {0:e}")]
    AsymmetricState(f64),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
}

/// Everything that identifies a sweep besides its grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepMetadata {
    pub waveform: DriveKind,
    pub config: RingConfig,
    pub horizon: f64,
    pub state: StateSpec,
}

impl fmt::Display for SweepMetadata {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "# waveform={} N={} J={} phi0={} T={} state={}",
            self.waveform,
            self.config.n_sites(),
            self.config.hopping(),
            self.config.phi0(),
            self.horizon,
            self.state
        )
    }
}

/// `F̄` on an amplitude × frequency grid; `values[a][f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub metadata: SweepMetadata,
}

impl SweepGrid {
    /// Metadata line, then `amplitude,frequency,avg_fidelity` rows with the
    /// amplitude varying slowest.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "{}", self.metadata)?;
        writeln!(out, "amplitude,frequency,avg_fidelity")?;
        for (a, row) in self.amplitudes.iter().zip(&self.values) {
            for (f, v) in self.frequencies.iter().zip(row) {
                writeln!(out, "{a},{f},{v}")?;
            }
        }
        Ok(())
    }

    /// The `F̄(φ_A)` profile at one frequency.
    pub fn column(&self, freq_index: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[freq_index]).collect()
    }

    /// Best amplitude at one frequency; exact ties go to the smallest
    /// amplitude.
    pub fn argmax_amplitude(&self, freq_index: usize) -> (f64, f64) {
        let col = self.column(freq_index);
        let i = argmax(&self.amplitudes, &col);
        (self.amplitudes[i], col[i])
    }
}

/// Index of the largest value; ties resolve to the smallest key.
pub fn argmax(keys: &[f64], values: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        let better =
            values[i] > values[best] || (values[i] == values[best] && keys[i] < keys[best]);
        if better {
            best = i;
        }
    }
    best
}

/// Width of the region around the maximum where `values ≥ level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakWidth {
    pub width: f64,
    /// The region reaches an end of the grid, so `width` is a lower bound.
    pub clipped: bool,
}

/// Full width of the peak of `values(keys)` at `level`, with linear
/// interpolation between samples; `None` if the peak is below `level`.
pub fn full_width(keys: &[f64], values: &[f64], level: f64) -> Option<PeakWidth> {
    let peak = argmax(keys, values);
    if values[peak] < level {
        return None;
    }
    let cross = |i: usize, j: usize| {
        // values[i] ≥ level > values[j]
        let s = (values[i] - level) / (values[i] - values[j]);
        keys[i] + s * (keys[j] - keys[i])
    };
    let mut l = peak;
    while l > 0 && values[l - 1] >= level {
        l -= 1;
    }
    let mut r = peak;
    while r + 1 < values.len() && values[r + 1] >= level {
        r += 1;
    }
    let left = if l == 0 { keys[0] } else { cross(l, l - 1) };
    let right = if r + 1 == values.len() {
        keys[r]
    } else {
        cross(r, r + 1)
    };
    Some(PeakWidth {
        width: right - left,
        clipped: l == 0 || r + 1 == values.len(),
    })
}

fn check_grid(name: &'static str, grid: &[f64]) -> Result<(), AnalysisError> {
    if grid.is_empty() {
        Err(AnalysisError::EmptyGrid(name))
    } else {
        Ok(())
    }
}

/// `F̄` for one drive setting.
pub fn average_at(
    state: &MomentumState,
    kind: DriveKind,
    amplitude: f64,
    frequency: f64,
    config: &RingConfig,
    horizon: f64,
) -> Result<f64, AnalysisError> {
    let w = kind.build(0.0, amplitude, frequency * config.hopping())?;
    Ok(mean_fidelity(
        state,
        config,
        &w,
        horizon,
        SamplingPolicy::default(),
    )?)
}

/// `F̄(φ_A, ν)` on the full grid. Cells run in parallel and are written by
/// index, so the result does not depend on the schedule.
pub fn sweep_amp_freq(
    state: &StateSpec,
    kind: DriveKind,
    amplitudes: &[f64],
    frequencies: &[f64],
    config: &RingConfig,
    horizon: f64,
) -> Result<SweepGrid, AnalysisError> {
    check_grid("amplitude", amplitudes)?;
    check_grid("frequency", frequencies)?;
    let s = state.build(&config.momentum_grid())?;
    let nf = frequencies.len();
    let flat: Vec<f64> = (0..amplitudes.len() * nf)
        .into_par_iter()
        .map(|cell| {
            average_at(
                &s,
                kind,
                amplitudes[cell / nf],
                frequencies[cell % nf],
                config,
                horizon,
            )
        })
        .collect::<Result<_, _>>()?;
    Ok(SweepGrid {
        amplitudes: amplitudes.to_vec(),
        frequencies: frequencies.to_vec(),
        values: flat.chunks(nf).map(|c| c.to_vec()).collect(),
        metadata: SweepMetadata {
            waveform: kind,
            config: *config,
            horizon,
            state: *state,
        },
    })
}

/// One `F̄(ν)` curve per amplitude; same layout as [`sweep_amp_freq`].
pub fn fidelity_vs_frequency(
    state: &StateSpec,
    kind: DriveKind,
    amplitudes: &[f64],
    frequencies: &[f64],
    config: &RingConfig,
    horizon: f64,
) -> Result<SweepGrid, AnalysisError> {
    sweep_amp_freq(state, kind, amplitudes, frequencies, config, horizon)
}

/// Result of the numeric threshold search.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdEstimate {
    /// In units of `J`.
    pub nu_c: f64,
    /// `F̄` at `nu_c`.
    pub value: f64,
    /// Samples around the crossing were not monotone in `ν`.
    pub non_monotone: bool,
    /// The target is already met at the bottom of the search window;
    /// `nu_c` is then that lower edge.
    pub below_range: bool,
}

fn check_target(target: f64) -> Result<(), AnalysisError> {
    if target > 0.0 && target < 1.0 {
        Ok(())
    } else {
        Err(AnalysisError::TargetOutOfRange(target))
    }
}

/// Smallest `ν` with `F̄(ν) ≥ target`: an upward log scan over
/// [`THRESHOLD_RANGE`] finds the first sample at or above the target, then
/// bisection in `log ν` narrows the bracket. The returned point satisfies
/// `F̄ ≥ target` and, for a continuous `F̄`, lies within `tol` of it.
#[allow(clippy::too_many_arguments)]
pub fn threshold_frequency_numeric(
    state: &StateSpec,
    kind: DriveKind,
    amplitude: f64,
    target: f64,
    tol: f64,
    config: &RingConfig,
    horizon: f64,
) -> Result<ThresholdEstimate, AnalysisError> {
    check_target(target)?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(AnalysisError::InvalidTolerance(tol));
    }
    let s = state.build(&config.momentum_grid())?;
    let eval = |nu: f64| average_at(&s, kind, amplitude, nu, config, horizon);

    let (lo, hi) = THRESHOLD_RANGE;
    let decades = (hi / lo).log10();
    let count = (decades * SCAN_POINTS_PER_DECADE as f64).round() as usize;
    let scan: Vec<f64> = (0..=count)
        .map(|i| lo * (hi / lo).powf(i as f64 / count as f64))
        .collect();

    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut hit = None;
    let mut best = f64::NEG_INFINITY;
    for (i, &nu) in scan.iter().enumerate() {
        let v = eval(nu)?;
        best = best.max(v);
        samples.push((nu, v));
        if v >= target {
            hit = Some(i);
            break;
        }
    }
    let Some(i) = hit else {
        return Err(AnalysisError::NoBracket {
            target,
            lo,
            hi,
            best,
        });
    };
    if i == 0 {
        return Ok(ThresholdEstimate {
            nu_c: lo,
            value: samples[0].1,
            non_monotone: false,
            below_range: true,
        });
    }

    let (mut a, mut b) = (scan[i - 1], scan[i]);
    let mut fb = samples[i].1;
    let mut bracket = vec![samples[i - 1], samples[i]];
    while b / a - 1.0 > BISECTION_RTOL {
        let mid = (a * b).sqrt();
        let v = eval(mid)?;
        bracket.push((mid, v));
        if v >= target {
            b = mid;
            fb = v;
        } else {
            a = mid;
        }
    }
    // one step past the crossing should still clear the band
    if let Some(&next) = scan.get(i + 1) {
        bracket.push((next, eval(next)?));
    }
    bracket.sort_by(|x, y| x.0.total_cmp(&y.0));
    let non_monotone = bracket.windows(2).any(|w| w[1].1 < w[0].1 - tol);
    Ok(ThresholdEstimate {
        nu_c: b,
        value: fb,
        non_monotone,
        below_range: false,
    })
}

/// `ν_c = J √((1 − e^{−1/α²}) / (12 (1 − F̄_c)))`.
pub fn threshold_theory(
    alpha: f64,
    target: f64,
    config: &RingConfig,
) -> Result<f64, AnalysisError> {
    check_target(target)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(AnalysisError::InvalidAlpha(alpha));
    }
    let num = -(-(alpha * alpha).recip()).exp_m1();
    Ok(config.hopping() * (num / (12.0 * (1.0 - target))).sqrt())
}

/// `1 − (1/6) J² τ² Σ_k |c_k|² sin² k` for a state symmetric about `k = 0`.
pub fn smalltau_theory(
    state: &MomentumState,
    tau: f64,
    config: &RingConfig,
) -> Result<f64, AnalysisError> {
    let asym = state.asymmetry();
    if asym > SYMMETRY_TOLERANCE {
        return Err(AnalysisError::AsymmetricState(asym));
    }
    let jt = config.hopping() * tau;
    Ok(1.0 - jt * jt * state.sin2_moment() / 6.0)
}

/// Origin of a threshold curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveSource {
    Numeric,
    Theory,
}

impl fmt::Display for CurveSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveSource::Numeric => "numeric",
            CurveSource::Theory => "theory",
        })
    }
}

impl FromStr for CurveSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "numeric" => Ok(CurveSource::Numeric),
            "theory" => Ok(CurveSource::Theory),
            other => Err(format!("unknown curve source `{other}`")),
        }
    }
}

/// `ν_c(α)` for one target, from one source.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCurve {
    pub alphas: Vec<f64>,
    pub nu_c: Vec<f64>,
    pub target: f64,
    pub tol: f64,
    pub source: CurveSource,
}

/// Writes `alpha,nu_c,source,target,tol` followed by the rows of every
/// curve in order.
pub fn write_threshold_csv<W: Write>(out: &mut W, curves: &[ThresholdCurve]) -> io::Result<()> {
    writeln!(out, "alpha,nu_c,source,target,tol")?;
    for c in curves {
        for (a, nu) in c.alphas.iter().zip(&c.nu_c) {
            writeln!(out, "{a},{nu},{},{},{}", c.source, c.target, c.tol)?;
        }
    }
    Ok(())
}

/// Numeric and theory `ν_c(α)` for Gaussian packets centred at `k0`.
#[allow(clippy::too_many_arguments)]
pub fn threshold_curves(
    k0: f64,
    alphas: &[f64],
    kind: DriveKind,
    amplitude: f64,
    target: f64,
    tol: f64,
    config: &RingConfig,
    horizon: f64,
) -> Result<(ThresholdCurve, ThresholdCurve), AnalysisError> {
    check_grid("alpha", alphas)?;
    let numeric: Vec<f64> = alphas
        .par_iter()
        .map(|&alpha| {
            let spec = StateSpec::Gaussian { k0, alpha };
            threshold_frequency_numeric(&spec, kind, amplitude, target, tol, config, horizon)
                .map(|e| e.nu_c)
        })
        .collect::<Result<_, _>>()?;
    let theory: Vec<f64> = alphas
        .iter()
        .map(|&alpha| threshold_theory(alpha, target, config))
        .collect::<Result<_, _>>()?;
    let curve = |nu_c, source| ThresholdCurve {
        alphas: alphas.to_vec(),
        nu_c,
        target,
        tol,
        source,
    };
    Ok((
        curve(numeric, CurveSource::Numeric),
        curve(theory, CurveSource::Theory),
    ))
}
