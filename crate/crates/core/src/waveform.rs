//! Time-periodic flux drives and the propagator phase integral
//! `f_k(t, 0) = ∫₀ᵗ cos(k + φ(t')) dt'`.
//!
//! Every drive is stored as a static offset `φ₀` plus a zero-offset part
//! `δ(t)`. The phase integral then separates into two scalar integrals,
//!
//! ```text
//! f_k(t) = cos(k + φ₀)·C(t) − sin(k + φ₀)·S(t),
//! C(t) = ∫₀ᵗ cos δ,   S(t) = ∫₀ᵗ sin δ,
//! ```
//!
//! so the `k` dependence is two multiplications once `C` and `S` are known.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::bessel::{bessel_j, bessel_j_sequence, BesselError};
use crate::ring::MomentumGrid;

/// Extra Bessel orders kept beyond `ceil(|φ_A|)` in the sine expansion.
pub const JACOBI_ANGER_MARGIN: usize = 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaveformError {
    #[error("angular frequency must be positive and finite (got {0})")]
    NonPositiveFrequency(f64),
    #[error("waveform parameter `{field}` must be finite (got {value})")]
    NonFiniteParameter { field: &'static str, value: f64 },
    #[error("tabulated waveform needs at least 4 samples for quadrature (got {0})")]
    QuadratureFailure(usize),
    #[error("invalid tabulated samples: {0}")]
    InvalidSamples(String),
    #[error("waveform `{0}` has no period")]
    NotPeriodic(WaveformKind),
    #[error(transparent)]
    Bessel(#[from] BesselError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveformKind {
    Constant,
    Square,
    Sine,
    Tabulated,
}

impl fmt::Display for WaveformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WaveformKind::Constant => "constant",
            WaveformKind::Square => "square",
            WaveformKind::Sine => "sine",
            WaveformKind::Tabulated => "tabulated",
        })
    }
}

/// The two analytic periodic drives used in sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DriveKind {
    Square,
    Sine,
}

impl DriveKind {
    /// Build a drive from the user-facing frequency `ν = ω / 2π`.
    pub fn build(
        self,
        offset: f64,
        amplitude: f64,
        nu: f64,
    ) -> Result<FluxWaveform, WaveformError> {
        let omega = TAU * nu;
        match self {
            DriveKind::Square => FluxWaveform::square(offset, amplitude, omega),
            DriveKind::Sine => FluxWaveform::sine(offset, amplitude, omega),
        }
    }
}

impl fmt::Display for DriveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriveKind::Square => "square",
            DriveKind::Sine => "sine",
        })
    }
}

impl FromStr for DriveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "square" => Ok(DriveKind::Square),
            "sine" | "sin" | "monochromatic" => Ok(DriveKind::Sine),
            other => Err(format!("unknown drive `{other}` (expected square or sine)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Constant,
    Square {
        amplitude: f64,
        omega: f64,
    },
    Sine {
        amplitude: f64,
        omega: f64,
        /// `J_0(φ_A) … J_mmax(φ_A)`.
        bessel: Vec<f64>,
    },
    Tabulated(Table),
}

#[derive(Debug, Clone, PartialEq)]
struct Table {
    period: f64,
    /// Node times, starting at 0, strictly increasing, last < period; the
    /// node at `period` repeats the first phase.
    times: Vec<f64>,
    phases: Vec<f64>,
    cum_cos: Vec<f64>,
    cum_sin: Vec<f64>,
}

/// A flux drive `φ(t) = φ₀ + δ(t)` with `δ` periodic (or zero).
#[derive(Debug, Clone, PartialEq)]
pub struct FluxWaveform {
    offset: f64,
    shape: Shape,
}

fn finite(field: &'static str, value: f64) -> Result<f64, WaveformError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(WaveformError::NonFiniteParameter { field, value })
    }
}

fn positive_omega(omega: f64) -> Result<f64, WaveformError> {
    if omega.is_finite() && omega > 0.0 {
        Ok(omega)
    } else {
        Err(WaveformError::NonPositiveFrequency(omega))
    }
}

impl FluxWaveform {
    pub fn constant(offset: f64) -> Result<Self, WaveformError> {
        Ok(Self {
            offset: finite("offset", offset)?,
            shape: Shape::Constant,
        })
    }

    /// `φ₀ + φ_A` on `[0, τ/2)`, `φ₀ − φ_A` on `[τ/2, τ)`, repeated.
    pub fn square(offset: f64, amplitude: f64, omega: f64) -> Result<Self, WaveformError> {
        Ok(Self {
            offset: finite("offset", offset)?,
            shape: Shape::Square {
                amplitude: finite("amplitude", amplitude)?,
                omega: positive_omega(omega)?,
            },
        })
    }

    /// `φ₀ + φ_A sin(ωt)`.
    pub fn sine(offset: f64, amplitude: f64, omega: f64) -> Result<Self, WaveformError> {
        let amplitude = finite("amplitude", amplitude)?;
        let max_order = amplitude.abs().ceil() as usize + JACOBI_ANGER_MARGIN;
        Ok(Self {
            offset: finite("offset", offset)?,
            shape: Shape::Sine {
                amplitude,
                omega: positive_omega(omega)?,
                bessel: bessel_j_sequence(max_order, amplitude)?,
            },
        })
    }

    /// One period of `(time, δ)` samples on `[0, period)`, linearly
    /// interpolated and extended periodically; `offset` is added on top.
    pub fn tabulated(
        offset: f64,
        period: f64,
        samples: &[(f64, f64)],
    ) -> Result<Self, WaveformError> {
        let offset = finite("offset", offset)?;
        if !(period.is_finite() && period > 0.0) {
            return Err(WaveformError::NonPositiveFrequency(TAU / period));
        }
        if samples.len() < 4 {
            return Err(WaveformError::QuadratureFailure(samples.len()));
        }
        if samples[0].0 != 0.0 {
            return Err(WaveformError::InvalidSamples(format!(
                "first sample must be at t = 0 (got {})",
                samples[0].0
            )));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(WaveformError::InvalidSamples(
                    "sample times must be strictly increasing".into(),
                ));
            }
        }
        let last = samples[samples.len() - 1].0;
        if last >= period {
            return Err(WaveformError::InvalidSamples(format!(
                "last sample time {last} must be below the period {period}"
            )));
        }
        for &(t, p) in samples {
            finite("sample time", t)?;
            finite("sample phase", p)?;
        }
        let mut times: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let mut phases: Vec<f64> = samples.iter().map(|s| s.1).collect();
        times.push(period);
        phases.push(phases[0]);
        let mut cum_cos = vec![0.0; times.len()];
        let mut cum_sin = vec![0.0; times.len()];
        for i in 1..times.len() {
            let h = times[i] - times[i - 1];
            cum_cos[i] = cum_cos[i - 1] + 0.5 * h * (phases[i - 1].cos() + phases[i].cos());
            cum_sin[i] = cum_sin[i - 1] + 0.5 * h * (phases[i - 1].sin() + phases[i].sin());
        }
        Ok(Self {
            offset,
            shape: Shape::Tabulated(Table {
                period,
                times,
                phases,
                cum_cos,
                cum_sin,
            }),
        })
    }

    pub fn kind(&self) -> WaveformKind {
        match self.shape {
            Shape::Constant => WaveformKind::Constant,
            Shape::Square { .. } => WaveformKind::Square,
            Shape::Sine { .. } => WaveformKind::Sine,
            Shape::Tabulated(_) => WaveformKind::Tabulated,
        }
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `φ_A` for square and sine drives, 0 otherwise.
    pub fn amplitude(&self) -> f64 {
        match self.shape {
            Shape::Square { amplitude, .. } | Shape::Sine { amplitude, .. } => amplitude,
            _ => 0.0,
        }
    }

    pub fn angular_frequency(&self) -> Option<f64> {
        match &self.shape {
            Shape::Constant => None,
            Shape::Square { omega, .. } | Shape::Sine { omega, .. } => Some(*omega),
            Shape::Tabulated(t) => Some(TAU / t.period),
        }
    }

    /// `τ = 2π/ω`; `None` for a constant flux.
    pub fn period(&self) -> Option<f64> {
        match &self.shape {
            Shape::Constant => None,
            Shape::Square { omega, .. } | Shape::Sine { omega, .. } => Some(TAU / omega),
            Shape::Tabulated(t) => Some(t.period),
        }
    }

    /// `φ(t)`.
    pub fn flux_at(&self, t: f64) -> f64 {
        self.offset
            + match &self.shape {
                Shape::Constant => 0.0,
                Shape::Square { amplitude, omega } => {
                    let tau = TAU / omega;
                    let r = reduce(t, tau);
                    if r < 0.5 * tau {
                        *amplitude
                    } else {
                        -*amplitude
                    }
                }
                Shape::Sine {
                    amplitude, omega, ..
                } => amplitude * (omega * t).sin(),
                Shape::Tabulated(table) => table.interp(reduce(t, table.period)),
            }
    }

    /// `(C(t), S(t)) = (∫₀ᵗ cos δ, ∫₀ᵗ sin δ)` for the zero-offset drive `δ`.
    pub fn drive_integrals(&self, t: f64) -> (f64, f64) {
        match &self.shape {
            Shape::Constant => (t, 0.0),
            Shape::Square { amplitude, omega } => {
                let tau = TAU / omega;
                let r = reduce(t, tau);
                // ∫ sgn(sin ωt) is a triangle wave peaking at τ/2
                let tri = if r < 0.5 * tau { r } else { tau - r };
                (t * amplitude.cos(), tri * amplitude.sin())
            }
            Shape::Sine { omega, bessel, .. } => {
                let r = reduce(t, TAU / omega);
                let mut c = bessel[0] * t;
                let mut s = 0.0;
                for (order, &jm) in bessel.iter().enumerate().skip(1) {
                    let n = order as f64;
                    let arg = n * omega * r;
                    if order % 2 == 0 {
                        c += 2.0 * jm * arg.sin() / (n * omega);
                    } else {
                        let half = (0.5 * arg).sin();
                        // 1 − cos x = 2 sin²(x/2)
                        s += 2.0 * jm * 2.0 * half * half / (n * omega);
                    }
                }
                (c, s)
            }
            Shape::Tabulated(table) => {
                let periods = (t / table.period).floor();
                let r = reduce(t, table.period);
                let last = table.times.len() - 1;
                let (c, s) = table.partial(r);
                (
                    periods * table.cum_cos[last] + c,
                    periods * table.cum_sin[last] + s,
                )
            }
        }
    }

    /// `f_k(t, 0) = ∫₀ᵗ cos(k + φ(t')) dt'`.
    pub fn phase_integral(&self, k: f64, t: f64) -> f64 {
        let (c, s) = self.drive_integrals(t);
        let kk = k + self.offset;
        kk.cos() * c - kk.sin() * s
    }

    /// `f_k(τ, 0) / τ`, the mean rate of phase accumulation per period.
    ///
    /// Square and sine drives use the closed forms `cos(k+φ₀)·cos φ_A` and
    /// `cos(k+φ₀)·J₀(φ_A)` directly rather than going through
    /// [`phase_integral`](Self::phase_integral).
    pub fn stroboscopic_rate(&self, k: f64) -> Result<f64, WaveformError> {
        let kk = k + self.offset;
        match &self.shape {
            Shape::Constant => Err(WaveformError::NotPeriodic(WaveformKind::Constant)),
            Shape::Square { amplitude, .. } => Ok(kk.cos() * amplitude.cos()),
            Shape::Sine { amplitude, .. } => Ok(kk.cos() * bessel_j(0, *amplitude)?),
            Shape::Tabulated(table) => {
                let last = table.times.len() - 1;
                Ok(
                    (kk.cos() * table.cum_cos[last] - kk.sin() * table.cum_sin[last])
                        / table.period,
                )
            }
        }
    }
}

/// `t mod τ` in `[0, τ)`.
fn reduce(t: f64, tau: f64) -> f64 {
    let r = t - (t / tau).floor() * tau;
    if r >= tau || r < 0.0 {
        0.0
    } else {
        r
    }
}

impl Table {
    fn segment(&self, r: f64) -> usize {
        // times[0] = 0 <= r < period = times[last]
        match self.times.binary_search_by(|x| x.partial_cmp(&r).unwrap()) {
            Ok(i) => i.min(self.times.len() - 2),
            Err(i) => i - 1,
        }
    }

    fn interp(&self, r: f64) -> f64 {
        let i = self.segment(r);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (r - t0) / (t1 - t0);
        self.phases[i] + w * (self.phases[i + 1] - self.phases[i])
    }

    fn partial(&self, r: f64) -> (f64, f64) {
        let i = self.segment(r);
        let p0 = self.phases[i];
        let p = self.interp(r);
        let h = r - self.times[i];
        (
            self.cum_cos[i] + 0.5 * h * (p0.cos() + p.cos()),
            self.cum_sin[i] + 0.5 * h * (p0.sin() + p.sin()),
        )
    }
}

/// `f_k(t, 0)` sampled on a momentum grid: one row per time, one column per
/// grid momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTable {
    pub k_grid: MomentumGrid,
    pub times: Vec<f64>,
    /// Row-major, `times.len() × k_grid.len()`.
    pub phases: Vec<f64>,
}

impl PhaseTable {
    pub fn new(waveform: &FluxWaveform, k_grid: &MomentumGrid, times: &[f64]) -> Self {
        let ks = k_grid.k_values();
        let mut phases = Vec::with_capacity(times.len() * ks.len());
        for &t in times {
            phases.extend(ks.iter().map(|&k| waveform.phase_integral(k, t)));
        }
        Self {
            k_grid: k_grid.clone(),
            times: times.to_vec(),
            phases,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.k_grid.len();
        &self.phases[i * n..(i + 1) * n]
    }
}

/// Free-function form of [`FluxWaveform::flux_at`].
pub fn flux_at(w: &FluxWaveform, t: f64) -> f64 {
    w.flux_at(t)
}

/// Free-function form of [`FluxWaveform::phase_integral`].
pub fn phase_integral(w: &FluxWaveform, k: f64, t: f64) -> f64 {
    w.phase_integral(k, t)
}

/// Free-function form of [`FluxWaveform::stroboscopic_rate`].
pub fn stroboscopic_rate(w: &FluxWaveform, k: f64) -> Result<f64, WaveformError> {
    w.stroboscopic_rate(k)
}

/// The optimal sine amplitude as quoted to three digits, `0.765π`.
pub const ROUNDED_SINE_OPTIMUM: f64 = 0.765 * PI;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    /// Adaptive Simpson quadrature, independent of the closed forms.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
            let m = 0.5 * (a + b);
            let fm = f(m);
            (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
        }
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            fa: f64,
            b: f64,
            fb: f64,
            whole: f64,
            m: f64,
            fm: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let (lm, flm, left) = simpson(f, a, fa, m, fm);
            let (rm, frm, right) = simpson(f, m, fm, b, fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                left + right + delta / 15.0
            } else {
                rec(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                    + rec(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
            }
        }
        // split into panels so the recursion never sees a near-symmetric
        // integrand that fools the error estimate
        let panels = 64;
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|i| {
                let (a, b) = (a + i as f64 * h, a + (i + 1) as f64 * h);
                let (fa, fb) = (f(a), f(b));
                let (m, fm, whole) = simpson(f, a, fa, b, fb);
                rec(f, a, fa, b, fb, whole, m, fm, tol / panels as f64, 40)
            })
            .sum()
    }

    fn sine_oracle(k: f64, phi0: f64, amp: f64, omega: f64, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        adaptive_simpson(
            &|s| (k + phi0 + amp * (omega * s).sin()).cos(),
            0.0,
            t,
            1e-13,
        )
    }

    /// `∫_a^b cos(k + φ(s)) ds` from `flux_at` alone: exact piecewise sums
    /// for square drives, adaptive quadrature otherwise.
    fn segment_oracle(w: &FluxWaveform, k: f64, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match w.kind() {
            WaveformKind::Square => {
                let half = 0.5 * w.period().unwrap();
                let mut cuts = vec![a];
                let mut j = (a / half).floor() + 1.0;
                while j * half < b {
                    cuts.push(j * half);
                    j += 1.0;
                }
                cuts.push(b);
                cuts.windows(2)
                    .map(|c| (c[1] - c[0]) * (k + w.flux_at(0.5 * (c[0] + c[1]))).cos())
                    .sum()
            }
            _ => adaptive_simpson(&|s| (k + w.flux_at(s)).cos(), a, b, 1e-13),
        }
    }

    #[test]
    fn flux_at_examples() {
        let sq = FluxWaveform::square(0.0, FRAC_PI_2, TAU).unwrap();
        assert_eq!(sq.flux_at(0.25), FRAC_PI_2);
        assert_eq!(sq.flux_at(0.75), -FRAC_PI_2);
        assert_eq!(sq.flux_at(0.0), FRAC_PI_2);
        assert_eq!(sq.flux_at(0.5), -FRAC_PI_2);
        assert_eq!(sq.flux_at(1.25), FRAC_PI_2);
        let sn = FluxWaveform::sine(0.0, 0.765 * PI, TAU).unwrap();
        assert!((sn.flux_at(0.25) - 0.765 * PI).abs() < 1e-15);
    }

    #[test]
    fn constant_phase_is_linear() {
        let w = FluxWaveform::constant(0.3).unwrap();
        for &(k, t) in &[(0.0, 1.0), (1.2, 3.5), (-2.9, 0.01)] {
            assert!((w.phase_integral(k, t) - t * (k + 0.3f64).cos()).abs() < 1e-15);
        }
        assert!(w.stroboscopic_rate(0.0).is_err());
    }

    #[test]
    fn square_half_periods_cancel_at_pi_over_2() {
        let w = FluxWaveform::square(0.0, FRAC_PI_2, 2.0).unwrap();
        let tau = w.period().unwrap();
        for i in 0..50 {
            let k = -PI + i as f64 * TAU / 50.0;
            assert!(w.phase_integral(k, tau).abs() < 1e-14);
            assert!(w.phase_integral(k, 7.0 * tau).abs() < 1e-13);
            // half period: -sin k · τ/2
            assert!((w.phase_integral(k, 0.5 * tau) + k.sin() * 0.5 * tau).abs() < 1e-14);
            assert!(w.stroboscopic_rate(k).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn square_matches_piecewise_accumulation() {
        let (phi0, amp, omega) = (0.4, 1.1, 3.0);
        let w = FluxWaveform::square(phi0, amp, omega).unwrap();
        let tau = TAU / omega;
        let k = 0.7;
        let t = 2.3 * tau;
        let plus = (k + phi0 + amp).cos();
        let minus = (k + phi0 - amp).cos();
        // two full periods, then 0.3τ of the positive half
        let want = 2.0 * 0.5 * tau * (plus + minus) + 0.3 * tau * plus;
        assert!((w.phase_integral(k, t) - want).abs() < 1e-13);
        let t = 1.8 * tau;
        let want = 0.5 * tau * (plus + minus) + 0.5 * tau * plus + 0.3 * tau * minus;
        assert!((w.phase_integral(k, t) - want).abs() < 1e-13);
    }

    #[test]
    fn sine_stroboscopic_phase_is_bessel_weighted() {
        for &amp in &[0.3, 1.0, 2.0, 0.765 * PI, 5.0] {
            let w = FluxWaveform::sine(0.0, amp, TAU).unwrap();
            let j0 = bessel_j(0, amp).unwrap();
            for n in [1u32, 3, 10] {
                for &k in &[0.0, 0.5, 2.0, -1.3] {
                    let f = w.phase_integral(k, n as f64);
                    assert!((f - n as f64 * k.cos() * j0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sine_matches_quadrature_example() {
        let w = FluxWaveform::sine(0.0, 1.0, TAU).unwrap();
        let want = adaptive_simpson(&|s: f64| (TAU * s).sin().cos(), 0.0, 0.3, 1e-14);
        assert!((w.phase_integral(0.0, 0.3) - want).abs() < 1e-10);
    }

    #[test]
    fn stroboscopic_rate_examples() {
        let w = FluxWaveform::sine(0.0, 0.765 * PI, TAU).unwrap();
        let j0 = bessel_j(0, 0.765 * PI).unwrap();
        assert!((j0 - 7.8e-4).abs() < 0.5e-4, "J0(0.765π) = {j0}");
        for &k in &[0.0, 1.0, 3.0] {
            assert!((w.stroboscopic_rate(k).unwrap() - k.cos() * j0).abs() < 1e-15);
        }
        let zero = crate::bessel::bessel_j0_zero(1).unwrap();
        let w = FluxWaveform::sine(0.0, zero, TAU).unwrap();
        for &k in &[0.0, 1.0, 3.0] {
            assert!(w.stroboscopic_rate(k).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn tabulated_square_converges_to_exact() {
        let tau = 2.0;
        let amp = 0.9;
        let exact = FluxWaveform::square(0.2, amp, TAU / tau).unwrap();
        let n = 400;
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let t = i as f64 * tau / n as f64;
                (t, if t < 0.5 * tau { amp } else { -amp })
            })
            .collect();
        let tab = FluxWaveform::tabulated(0.2, tau, &samples).unwrap();
        assert_eq!(tab.kind(), WaveformKind::Tabulated);
        // each of the two ramps per period costs at most one cell width
        let h = tau / n as f64;
        for &t in &[0.3, 1.7, 5.3] {
            let d = (tab.phase_integral(0.4, t) - exact.phase_integral(0.4, t)).abs();
            assert!(d < 2.0 * h * (t / tau + 1.0), "t={t}: {d}");
        }
        assert_eq!(tab.flux_at(0.1), 0.2 + amp);
    }

    #[test]
    fn tabulated_sine_is_second_order() {
        let tau = 1.0;
        let err = |n: usize| {
            let samples: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let t = i as f64 / n as f64;
                    (t, 1.3 * (TAU * t).sin())
                })
                .collect();
            let tab = FluxWaveform::tabulated(0.0, tau, &samples).unwrap();
            let exact = FluxWaveform::sine(0.0, 1.3, TAU).unwrap();
            (tab.phase_integral(0.5, 0.37) - exact.phase_integral(0.5, 0.37)).abs()
        };
        let (e1, e2) = (err(100), err(200));
        let order = (e1 / e2).log2();
        assert!((1.7..2.3).contains(&order), "order {order}");
    }

    #[test]
    fn tabulated_rejects_short_tables() {
        let s = [(0.0, 0.0), (0.1, 0.2), (0.2, 0.1)];
        assert_eq!(
            FluxWaveform::tabulated(0.0, 1.0, &s),
            Err(WaveformError::QuadratureFailure(3))
        );
        let s = [(0.0, 0.0), (0.1, 0.2), (0.1, 0.1), (0.5, 0.0)];
        assert!(matches!(
            FluxWaveform::tabulated(0.0, 1.0, &s),
            Err(WaveformError::InvalidSamples(_))
        ));
    }

    #[test]
    fn phase_table_first_row_zero() {
        let grid = MomentumGrid::new(12);
        let w = FluxWaveform::sine(0.1, 2.0, 3.0).unwrap();
        let times = [0.0, 0.5, 1.0, 4.0];
        let table = PhaseTable::new(&w, &grid, &times);
        assert!(table.row(0).iter().all(|&v| v == 0.0));
        for (i, &t) in times.iter().enumerate() {
            assert!(table.row(i).iter().all(|v| v.abs() <= t + 1e-14));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(FluxWaveform::square(0.0, 1.0, 0.0).is_err());
        assert!(FluxWaveform::sine(0.0, f64::NAN, 1.0).is_err());
        assert!(FluxWaveform::constant(f64::INFINITY).is_err());
        assert_eq!("Sine".parse::<DriveKind>(), Ok(DriveKind::Sine));
        assert!("triangle".parse::<DriveKind>().is_err());
    }

    fn any_waveform() -> impl Strategy<Value = FluxWaveform> {
        prop_oneof![
            (-3.0f64..3.0).prop_map(|o| FluxWaveform::constant(o).unwrap()),
            (-3.0f64..3.0, 0.0f64..3.0, 0.2f64..20.0)
                .prop_map(|(o, a, w)| FluxWaveform::square(o, a, w).unwrap()),
            (-3.0f64..3.0, 0.0f64..9.5, 0.2f64..20.0)
                .prop_map(|(o, a, w)| FluxWaveform::sine(o, a, w).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn additivity(w in any_waveform(), k in -PI..PI, t1 in 0.0f64..6.0, dt in 0.0f64..6.0) {
            let t2 = t1 + dt;
            let middle = segment_oracle(&w, k, t1, t2);
            prop_assert!((w.phase_integral(k, t1) + middle - w.phase_integral(k, t2)).abs() < 1e-11);
        }

        #[test]
        fn periodic_increment(w in any_waveform(), k in -PI..PI, n in 0u32..40) {
            if let Some(tau) = w.period() {
                let f1 = w.phase_integral(k, tau);
                let a = w.phase_integral(k, n as f64 * tau);
                let b = w.phase_integral(k, (n + 1) as f64 * tau);
                prop_assert!((b - a - f1).abs() < 1e-12 * (1.0 + n as f64 * tau));
            }
        }

        #[test]
        fn bounded_by_elapsed_time(w in any_waveform(), k in -PI..PI, t in 0.0f64..50.0) {
            prop_assert!(w.phase_integral(k, t).abs() <= t + 1e-13);
        }

        #[test]
        fn jacobi_anger_matches_quadrature(
            k in -PI..PI, amp in 0.0f64..(3.0 * PI), frac in 0.0f64..10.0, phi0 in -1.0f64..1.0
        ) {
            let omega = TAU;
            let w = FluxWaveform::sine(phi0, amp, omega).unwrap();
            let t = frac * TAU / omega;
            let want = sine_oracle(k, phi0, amp, omega, t);
            prop_assert!((w.phase_integral(k, t) - want).abs() < 1e-10);
        }
    }
}
