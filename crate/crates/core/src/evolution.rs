//! Diagonal propagator, instantaneous/stroboscopic fidelity and the
//! finite-horizon average fidelity.
//!
//! The propagator is `c_k(t) = e^{i 2J f_k(t)} c_k(0)` with `f_k` the
//! phase integral of the drive evaluated at the flux-shifted momentum
//! `k + φ₀(ring)`.

use std::io::{self, Write};

use num_complex::Complex64;
use thiserror::Error;

use crate::ring::RingConfig;
use crate::state::MomentumState;
use crate::waveform::{FluxWaveform, WaveformError};

/// Weights below this are dropped from the time-averaging kernel. The total
/// discarded mass is at most `N · 1e-20`.
const PRUNE_WEIGHT: f64 = 1e-20;

/// Minimum number of time samples for an average.
pub const MIN_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvolutionError {
    #[error("time must be finite and non-negative (got {0})")]
    InvalidTime(f64),
    #[error("state lives on {state} sites but the ring has {ring}")]
    SizeMismatch { state: usize, ring: usize },
    #[error("horizon {horizon} holds only {samples} samples (need at least {MIN_SAMPLES})")]
    HorizonTooShort { horizon: f64, samples: usize },
    #[error("invalid sampling policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
}

/// Time grid used for averages.
///
/// Steps are aligned to the drive period: `Δt = τ/M` with
/// `M = max(min_steps_per_period, ⌈τ J / max_step⌉)` rounded up to even, so
/// `Δt ≤ min(τ/64, 0.05/J)` at the defaults and square-wave flux jumps fall
/// on sample points. A constant flux uses the pseudo-period
/// `min_steps_per_period · max_step / J`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPolicy {
    pub min_steps_per_period: usize,
    /// Largest step in units of `1/J`.
    pub max_step: f64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            min_steps_per_period: 64,
            max_step: 0.05,
        }
    }
}

impl SamplingPolicy {
    /// Twice as many samples per unit time.
    pub fn refined(self) -> Self {
        Self {
            min_steps_per_period: self.min_steps_per_period * 2,
            max_step: self.max_step / 2.0,
        }
    }

    fn validate(&self) -> Result<(), EvolutionError> {
        if self.min_steps_per_period < 2 {
            return Err(EvolutionError::InvalidPolicy(
                "min_steps_per_period must be at least 2".into(),
            ));
        }
        if !(self.max_step.is_finite() && self.max_step > 0.0) {
            return Err(EvolutionError::InvalidPolicy(
                "max_step must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `(period, steps per period)` for a drive on a ring with hopping `j`.
    pub fn steps(&self, waveform: &FluxWaveform, j: f64) -> (f64, usize) {
        let max_dt = self.max_step / j;
        match waveform.period() {
            Some(p) => {
                let mut m = self.min_steps_per_period.max((p / max_dt).ceil() as usize);
                if m % 2 == 1 {
                    m += 1;
                }
                (p, m)
            }
            None => (
                self.min_steps_per_period as f64 * max_dt,
                self.min_steps_per_period,
            ),
        }
    }
}

/// Sampled `F(t)` with its running time average.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FidelitySeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Trapezoid estimate of `(1/t) ∫₀ᵗ F`, equal to `F(0)` at `t = 0`.
    pub running_average: Vec<f64>,
    /// Average over the full horizon.
    pub average: f64,
    pub horizon: f64,
}

impl FidelitySeries {
    /// CSV with columns `t,F,running_average`, every `stride`-th sample
    /// plus the final one.
    pub fn write_csv<W: Write>(&self, out: &mut W, stride: usize) -> io::Result<()> {
        writeln!(out, "t,F,running_average")?;
        let stride = stride.max(1);
        let last = self.times.len().saturating_sub(1);
        for i in (0..self.times.len()).filter(|&i| i % stride == 0 || i == last) {
            writeln!(
                out,
                "{},{},{}",
                self.times[i], self.values[i], self.running_average[i]
            )?;
        }
        Ok(())
    }
}

fn check_time(t: f64) -> Result<(), EvolutionError> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(EvolutionError::InvalidTime(t))
    }
}

fn check_size(state: &MomentumState, config: &RingConfig) -> Result<(), EvolutionError> {
    let n = state.grid().n_sites();
    if n != config.n_sites() {
        return Err(EvolutionError::SizeMismatch {
            state: n,
            ring: config.n_sites(),
        });
    }
    Ok(())
}

/// `|Σ_k w_k e^{iθ_k}|` clamped into `[0, 1]`.
fn modulus_clamped(z: Complex64) -> f64 {
    z.norm().min(1.0)
}

/// Apply the propagator `U(t, 0)`.
pub fn evolve(
    state: &MomentumState,
    config: &RingConfig,
    waveform: &FluxWaveform,
    t: f64,
) -> Result<MomentumState, EvolutionError> {
    check_time(t)?;
    check_size(state, config)?;
    let two_j = 2.0 * config.hopping();
    let (c, s) = waveform.drive_integrals(t);
    let shift = config.phi0() + waveform.offset();
    let ks = state.grid().k_values().to_vec();
    Ok(state.map_amplitudes(|i, amp| {
        let kk = ks[i] + shift;
        let f = kk.cos() * c - kk.sin() * s;
        amp * Complex64::from_polar(1.0, two_j * f)
    }))
}

/// `F(t) = |Σ_k |c_k|² e^{i 2J f_k(t)}|`.
pub fn fidelity(
    state: &MomentumState,
    config: &RingConfig,
    waveform: &FluxWaveform,
    t: f64,
) -> Result<f64, EvolutionError> {
    check_time(t)?;
    check_size(state, config)?;
    let two_j = 2.0 * config.hopping();
    let (c, s) = waveform.drive_integrals(t);
    let shift = config.phi0() + waveform.offset();
    let z: Complex64 = state
        .amplitudes()
        .iter()
        .zip(state.grid().k_values())
        .map(|(amp, &k)| {
            let kk = k + shift;
            Complex64::from_polar(amp.norm_sqr(), two_j * (kk.cos() * c - kk.sin() * s))
        })
        .sum();
    Ok(modulus_clamped(z))
}

/// `F(nτ)` from the per-period rates `r_k` alone:
/// `|Σ_k |c_k|² e^{i 2J nτ r_k}|`.
pub fn stroboscopic_fidelity(
    state: &MomentumState,
    config: &RingConfig,
    waveform: &FluxWaveform,
    n: u64,
) -> Result<f64, EvolutionError> {
    check_size(state, config)?;
    let tau = waveform
        .period()
        .ok_or(WaveformError::NotPeriodic(waveform.kind()))?;
    let scale = 2.0 * config.hopping() * n as f64 * tau;
    let mut z = Complex64::new(0.0, 0.0);
    for (amp, &k) in state.amplitudes().iter().zip(state.grid().k_values()) {
        let r = waveform.stroboscopic_rate(k + config.phi0())?;
        z += Complex64::from_polar(amp.norm_sqr(), scale * r);
    }
    Ok(modulus_clamped(z))
}

/// Finite-horizon average `(1/T) ∫₀ᵀ F(t) dt` with the full sampled series.
pub fn average_fidelity(
    state: &MomentumState,
    config: &RingConfig,
    waveform: &FluxWaveform,
    horizon: f64,
    policy: SamplingPolicy,
) -> Result<(f64, FidelitySeries), EvolutionError> {
    let kernel = AveragingKernel::new(state, config, waveform, horizon, policy)?;
    let cap = kernel.sample_count();
    let mut series = FidelitySeries {
        times: Vec::with_capacity(cap),
        values: Vec::with_capacity(cap),
        running_average: Vec::with_capacity(cap),
        average: 0.0,
        horizon,
    };
    let avg = kernel.run(|t, f, running| {
        series.times.push(t);
        series.values.push(f);
        series.running_average.push(running);
    });
    series.average = avg;
    Ok((avg, series))
}

/// Same as [`average_fidelity`] without materializing the series.
pub fn mean_fidelity(
    state: &MomentumState,
    config: &RingConfig,
    waveform: &FluxWaveform,
    horizon: f64,
    policy: SamplingPolicy,
) -> Result<f64, EvolutionError> {
    let kernel = AveragingKernel::new(state, config, waveform, horizon, policy)?;
    Ok(kernel.run(|_, _, _| {}))
}

/// Period-aligned evaluator for `F` on a uniform time grid.
///
/// With `t = pτ + jΔt`, periodicity of the drive gives
/// `f_k(t) = p·f_k(τ) + f_k(jΔt)`, so one table of phasors
/// `e^{i2J f_k(jΔt)}` over a single period serves every period; each
/// sample then costs one complex dot product over the active momenta.
struct AveragingKernel {
    horizon: f64,
    period: f64,
    steps: usize,
    dt: f64,
    /// Number of full grid samples `t_i = iΔt ≤ T`.
    grid_samples: usize,
    tail: bool,
    weights: Vec<f64>,
    /// `2J f_k(τ)` per active momentum.
    period_phase: Vec<f64>,
    table_re: Vec<f64>,
    table_im: Vec<f64>,
    // for the off-grid final sample
    cos_k: Vec<f64>,
    sin_k: Vec<f64>,
    two_j: f64,
    waveform: FluxWaveform,
}

impl AveragingKernel {
    fn new(
        state: &MomentumState,
        config: &RingConfig,
        waveform: &FluxWaveform,
        horizon: f64,
        policy: SamplingPolicy,
    ) -> Result<Self, EvolutionError> {
        check_size(state, config)?;
        policy.validate()?;
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(EvolutionError::HorizonTooShort {
                horizon,
                samples: 0,
            });
        }
        let (period, steps) = policy.steps(waveform, config.hopping());
        let dt = period / steps as f64;
        let last = (horizon / dt * (1.0 + 1e-12)).floor() as usize;
        let tail = horizon - last as f64 * dt > 1e-12 * horizon;
        let total = last + 1 + usize::from(tail);
        if total < MIN_SAMPLES {
            return Err(EvolutionError::HorizonTooShort {
                horizon,
                samples: total,
            });
        }

        let shift = config.phi0() + waveform.offset();
        let two_j = 2.0 * config.hopping();
        let mut weights = Vec::new();
        let mut cos_k = Vec::new();
        let mut sin_k = Vec::new();
        for (amp, &k) in state.amplitudes().iter().zip(state.grid().k_values()) {
            let w = amp.norm_sqr();
            if w >= PRUNE_WEIGHT {
                weights.push(w);
                cos_k.push((k + shift).cos());
                sin_k.push((k + shift).sin());
            }
        }
        let active = weights.len();
        let (cp, sp) = waveform.drive_integrals(period);
        let period_phase = (0..active)
            .map(|a| two_j * (cos_k[a] * cp - sin_k[a] * sp))
            .collect();
        let mut table_re = Vec::with_capacity(steps * active);
        let mut table_im = Vec::with_capacity(steps * active);
        for j in 0..steps {
            let (c, s) = waveform.drive_integrals(j as f64 * dt);
            for a in 0..active {
                let (im, re) = (two_j * (cos_k[a] * c - sin_k[a] * s)).sin_cos();
                table_re.push(re);
                table_im.push(im);
            }
        }
        Ok(Self {
            horizon,
            period,
            steps,
            dt,
            grid_samples: last + 1,
            tail,
            weights,
            period_phase,
            table_re,
            table_im,
            cos_k,
            sin_k,
            two_j,
            waveform: waveform.clone(),
        })
    }

    fn sample_count(&self) -> usize {
        self.grid_samples + usize::from(self.tail)
    }

    /// Walk the samples in time order, calling `visit(t, F, running average)`,
    /// and return the horizon average.
    fn run(&self, mut visit: impl FnMut(f64, f64, f64)) -> f64 {
        let active = self.weights.len();
        let mut base_re = vec![0.0; active];
        let mut base_im = vec![0.0; active];
        // trapezoid on the deficit 1 − F keeps full relative precision when
        // F is within 1e-8 of one
        let mut deficit_area = 0.0;
        let mut prev_deficit = 0.0;
        let mut prev_t = 0.0;
        let mut period_index = usize::MAX;
        for i in 0..self.grid_samples {
            let p = i / self.steps;
            let j = i % self.steps;
            if p != period_index {
                period_index = p;
                for a in 0..active {
                    let (s, c) = (p as f64 * self.period_phase[a]).sin_cos();
                    base_re[a] = self.weights[a] * c;
                    base_im[a] = self.weights[a] * s;
                }
            }
            let row = j * active..(j + 1) * active;
            let (re, im) = complex_dot(
                &base_re,
                &base_im,
                &self.table_re[row.clone()],
                &self.table_im[row],
            );
            let f = (re * re + im * im).sqrt().min(1.0);
            let t = p as f64 * self.period + j as f64 * self.dt;
            let d = 1.0 - f;
            if i > 0 {
                deficit_area += 0.5 * (t - prev_t) * (prev_deficit + d);
            }
            let running = if i == 0 { f } else { 1.0 - deficit_area / t };
            visit(t, f, running);
            prev_deficit = d;
            prev_t = t;
        }
        if self.tail {
            let t = self.horizon;
            let f = self.direct(t);
            let d = 1.0 - f;
            deficit_area += 0.5 * (t - prev_t) * (prev_deficit + d);
            visit(t, f, 1.0 - deficit_area / t);
            prev_t = t;
        }
        (1.0 - deficit_area / prev_t).clamp(0.0, 1.0)
    }

    fn direct(&self, t: f64) -> f64 {
        let (c, s) = self.waveform.drive_integrals(t);
        let z: Complex64 = (0..self.weights.len())
            .map(|a| {
                Complex64::from_polar(
                    self.weights[a],
                    self.two_j * (self.cos_k[a] * c - self.sin_k[a] * s),
                )
            })
            .sum();
        modulus_clamped(z)
    }
}

/// `Σ (br + i·bi)(gr + i·gi)` with four independent accumulators so the
/// loop vectorizes.
#[inline]
fn complex_dot(br: &[f64], bi: &[f64], gr: &[f64], gi: &[f64]) -> (f64, f64) {
    const LANES: usize = 4;
    let mut acc_re = [0.0f64; LANES];
    let mut acc_im = [0.0f64; LANES];
    let n = br.len();
    let split = n - n % LANES;
    for (((a, b), c), d) in br[..split]
        .chunks_exact(LANES)
        .zip(bi[..split].chunks_exact(LANES))
        .zip(gr[..split].chunks_exact(LANES))
        .zip(gi[..split].chunks_exact(LANES))
    {
        for l in 0..LANES {
            acc_re[l] += a[l] * c[l] - b[l] * d[l];
            acc_im[l] += a[l] * d[l] + b[l] * c[l];
        }
    }
    let mut re = (acc_re[0] + acc_re[1]) + (acc_re[2] + acc_re[3]);
    let mut im = (acc_im[0] + acc_im[1]) + (acc_im[2] + acc_im[3]);
    for i in split..n {
        re += br[i] * gr[i] - bi[i] * gi[i];
        im += br[i] * gi[i] + bi[i] * gr[i];
    }
    (re, im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bessel::{bessel_j, bessel_j0_zero};
    use crate::ring::MomentumGrid;
    use crate::state::{gaussian_packet, plane_wave, single_site};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn random_state(n: usize, seed: u64) -> MomentumState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        MomentumState::normalized(MomentumGrid::new(n), amps).unwrap()
    }

    fn ring(n: usize) -> RingConfig {
        RingConfig::new(n, 1.0, 0.0).unwrap()
    }

    #[test]
    fn evolve_at_zero_is_identity() {
        let s = random_state(20, 1);
        let w = FluxWaveform::sine(0.3, 1.2, 2.0).unwrap();
        let out = evolve(&s, &ring(20), &w, 0.0).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn square_revival_returns_initial_state() {
        let s = random_state(50, 2);
        let w = FluxWaveform::square(0.0, FRAC_PI_2, 3.0).unwrap();
        let tau = w.period().unwrap();
        for n in [1.0, 4.0, 31.0] {
            let out = evolve(&s, &ring(50), &w, n * tau).unwrap();
            for (a, b) in out.amplitudes().iter().zip(s.amplitudes()) {
                assert!((a - b).norm() < 1e-12);
            }
            assert!((fidelity(&s, &ring(50), &w, n * tau).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_fidelity_is_one() {
        let grid = MomentumGrid::new(30);
        let s = plane_wave(&grid, 7).unwrap();
        let w = FluxWaveform::sine(0.2, 2.0, 1.3).unwrap();
        for &t in &[0.0, 0.7, 13.2, 400.0] {
            assert!((fidelity(&s, &ring(30), &w, t).unwrap() - 1.0).abs() < 1e-14);
        }
        let (avg, _) =
            average_fidelity(&s, &ring(30), &w, 50.0, SamplingPolicy::default()).unwrap();
        assert!((avg - 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_site_constant_flux_follows_j0() {
        let n = 1000;
        let grid = MomentumGrid::new(n);
        let s = single_site(&grid, 1).unwrap();
        let w = FluxWaveform::constant(0.0).unwrap();
        let t = 2.404826 / 2.0;
        let f = fidelity(&s, &ring(n), &w, t).unwrap();
        assert!(f < 2e-3);
        // direct sum oracle (1/N)|Σ e^{i2t cos k}| against Bessel
        for &t in &[0.3, 1.0, 2.2, 4.9] {
            let direct = (0..n)
                .map(|m| Complex64::from_polar(1.0, 2.0 * t * (TAU * m as f64 / n as f64).cos()))
                .sum::<Complex64>()
                .norm()
                / n as f64;
            let f = fidelity(&s, &ring(n), &w, t).unwrap();
            assert!((f - direct).abs() < 1e-12);
            assert!((f - bessel_j(0, 2.0 * t).unwrap().abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn stroboscopic_freezing_at_bessel_zero() {
        let zero = bessel_j0_zero(1).unwrap();
        let w = FluxWaveform::sine(0.0, zero, 5.0).unwrap();
        for seed in 0..5 {
            let s = random_state(64, seed);
            for n in [1, 7, 100] {
                let f = stroboscopic_fidelity(&s, &ring(64), &w, n).unwrap();
                assert!((f - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn stroboscopic_zero_amplitude_reduces_to_constant() {
        let s = random_state(40, 9);
        let w = FluxWaveform::sine(0.0, 0.0, 2.0).unwrap();
        let tau = w.period().unwrap();
        let c = FluxWaveform::constant(0.0).unwrap();
        for n in [1u64, 3, 11] {
            let a = stroboscopic_fidelity(&s, &ring(40), &w, n).unwrap();
            let b = fidelity(&s, &ring(40), &c, n as f64 * tau).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        assert!(stroboscopic_fidelity(&s, &ring(40), &c, 1).is_err());
    }

    #[test]
    fn small_tau_single_site_deficit() {
        // Σ sin²k / N = 1/2 ⇒ F̄ ≈ 1 − (Jτ)²/12
        let n = 200;
        let grid = MomentumGrid::new(n);
        let s = single_site(&grid, 1).unwrap();
        let tau = 0.1;
        let w = FluxWaveform::square(0.0, FRAC_PI_2, TAU / tau).unwrap();
        let (avg, series) =
            average_fidelity(&s, &ring(n), &w, 200.0 * tau, SamplingPolicy::default()).unwrap();
        let predicted = tau * tau / 12.0;
        assert!((predicted - 8.33e-4).abs() < 1e-6);
        assert!(((1.0 - avg) / predicted - 1.0).abs() < 0.1);
        assert_eq!(series.values[0], 1.0);
        assert!(series.values.iter().all(|&f| (0.0..=1.0).contains(&f)));
    }

    #[test]
    fn square_wave_symmetric_average_matches_half_period_integral() {
        let grid = MomentumGrid::new(100);
        let s = gaussian_packet(&grid, 0.0, 3.0).unwrap();
        let tau = 0.8;
        let w = FluxWaveform::square(0.0, FRAC_PI_2, TAU / tau).unwrap();
        let (avg, _) =
            average_fidelity(&s, &ring(100), &w, 40.0 * tau, SamplingPolicy::default()).unwrap();
        // (2/τ) ∫₀^{τ/2} |Σ|c|² cos(2t sin k)| dt by fine midpoint rule
        let m = 20000;
        let h = 0.5 * tau / m as f64;
        let ws = s.weights();
        let mut acc = 0.0;
        for i in 0..m {
            let t = (i as f64 + 0.5) * h;
            let v: f64 = ws
                .iter()
                .zip(grid.k_values())
                .map(|(w, k)| w * (2.0 * t * k.sin()).cos())
                .sum();
            acc += v.abs() * h;
        }
        let want = 2.0 / tau * acc;
        assert!((avg - want).abs() < 1e-5, "{avg} vs {want}");
    }

    #[test]
    fn horizon_too_short() {
        let s = random_state(10, 3);
        let w = FluxWaveform::square(0.0, 1.0, TAU).unwrap();
        let e = average_fidelity(&s, &ring(10), &w, 0.05, SamplingPolicy::default());
        assert!(matches!(e, Err(EvolutionError::HorizonTooShort { .. })));
        assert!(evolve(&s, &ring(10), &w, -1.0).is_err());
        assert!(matches!(
            evolve(&s, &ring(11), &w, 1.0),
            Err(EvolutionError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn kernel_matches_direct_evaluation() {
        let s = random_state(24, 4);
        let cfg = RingConfig::new(24, 1.3, 0.4).unwrap();
        for w in [
            FluxWaveform::sine(0.1, 1.7, 3.1).unwrap(),
            FluxWaveform::square(-0.2, 0.9, 2.2).unwrap(),
            FluxWaveform::constant(0.5).unwrap(),
        ] {
            let (_, series) =
                average_fidelity(&s, &cfg, &w, 37.3, SamplingPolicy::default()).unwrap();
            assert!((series.times.last().unwrap() - 37.3).abs() < 1e-9);
            for (t, f) in series.times.iter().zip(&series.values).step_by(97) {
                let direct = fidelity(&s, &cfg, &w, *t).unwrap();
                assert!((f - direct).abs() < 1e-10, "{:?} t={t}", w.kind());
            }
        }
    }

    #[test]
    fn sampling_step_respects_both_limits() {
        let p = SamplingPolicy::default();
        let w = FluxWaveform::square(0.0, 1.0, TAU * 3.0).unwrap();
        let (period, m) = p.steps(&w, 1.0);
        assert_eq!(m, 64);
        assert!((period / m as f64) <= 0.05);
        let w = FluxWaveform::sine(0.0, 1.0, TAU * 0.01).unwrap();
        let (period, m) = p.steps(&w, 2.0);
        assert!(period / m as f64 <= 0.025 + 1e-15);
        assert_eq!(m % 2, 0);
    }

    #[test]
    fn refining_the_samples_barely_moves_the_average() {
        let grid = MomentumGrid::new(100);
        let cfg = ring(100);
        let cases = [
            (
                single_site(&grid, 1).unwrap(),
                FluxWaveform::sine(0.0, 2.0, TAU * 1.0).unwrap(),
            ),
            (
                gaussian_packet(&grid, 0.0, 10.0).unwrap(),
                FluxWaveform::square(0.0, 1.2, TAU * 0.3).unwrap(),
            ),
            (
                gaussian_packet(&grid, PI / 4.0, 5.0).unwrap(),
                FluxWaveform::sine(0.0, 1.0, TAU * 2.0).unwrap(),
            ),
        ];
        for (s, w) in cases {
            let t = cfg.default_horizon();
            let a = mean_fidelity(&s, &cfg, &w, t, SamplingPolicy::default()).unwrap();
            let b = mean_fidelity(&s, &cfg, &w, t, SamplingPolicy::default().refined()).unwrap();
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn running_average_ends_at_average() {
        let s = random_state(16, 5);
        let w = FluxWaveform::sine(0.0, 1.0, 4.0).unwrap();
        let (avg, series) =
            average_fidelity(&s, &ring(16), &w, 12.0, SamplingPolicy::default()).unwrap();
        assert_eq!(*series.running_average.last().unwrap(), avg);
        assert!((series.running_average[0] - 1.0).abs() < 1e-14);
        let mut buf = Vec::new();
        series.write_csv(&mut buf, 10).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,F,running_average\n0,"));
        assert!(text.trim_end().ends_with(&format!(
            "12,{},{}",
            series.values.last().unwrap(),
            avg
        )));
    }

    proptest! {
        #[test]
        fn evolution_is_unitary(seed in any::<u64>(), t in 0.0f64..200.0, amp in 0.0f64..3.0) {
            let s = random_state(33, seed);
            let w = FluxWaveform::sine(0.1, amp, 2.5).unwrap();
            let out = evolve(&s, &ring(33), &w, t).unwrap();
            prop_assert!((out.norm() - 1.0).abs() < 1e-12);
            let f = fidelity(&s, &ring(33), &w, t).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            // F = |⟨ψ(0)|ψ(t)⟩|
            prop_assert!((s.overlap(&out).norm() - f).abs() < 1e-12);
        }

        #[test]
        fn square_fidelity_is_period_periodic(seed in any::<u64>(), t in 0.0f64..30.0) {
            let s = random_state(40, seed);
            let w = FluxWaveform::square(0.0, FRAC_PI_2, 1.7).unwrap();
            let tau = w.period().unwrap();
            let a = fidelity(&s, &ring(40), &w, t).unwrap();
            let b = fidelity(&s, &ring(40), &w, t + tau).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn global_phase_does_not_change_fidelity(seed in any::<u64>(), theta in 0.0f64..TAU, t in 0.0f64..20.0) {
            let s = random_state(25, seed);
            let rotated = MomentumState::new(
                s.grid().clone(),
                s.amplitudes().iter().map(|c| c * Complex64::from_polar(1.0, theta)).collect(),
            ).unwrap();
            let w = FluxWaveform::sine(0.0, 1.4, 3.0).unwrap();
            let a = fidelity(&s, &ring(25), &w, t).unwrap();
            let b = fidelity(&rotated, &ring(25), &w, t).unwrap();
            prop_assert!((a - b).abs() < 1e-14);
        }

        #[test]
        fn static_flux_is_absorbed_into_momentum(seed in any::<u64>(), shift in -20i64..20, t in 0.0f64..20.0) {
            let n = 40;
            let s = random_state(n, seed);
            let grid = s.grid().clone();
            let phi0 = TAU * shift as f64 / n as f64;
            let with_flux = RingConfig::new(n, 1.0, phi0).unwrap();
            // c'_{k+φ₀} = c_k
            let mut shifted = vec![Complex64::new(0.0, 0.0); n];
            for i in 0..n {
                shifted[grid.index_of_mode(grid.modes()[i] + shift)] = s.amplitudes()[i];
            }
            let moved = MomentumState::new(grid, shifted).unwrap();
            let w = FluxWaveform::square(0.0, 1.1, 2.0).unwrap();
            let a = fidelity(&s, &with_flux, &w, t).unwrap();
            let b = fidelity(&moved, &ring(n), &w, t).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn stroboscopic_paths_agree(seed in any::<u64>(), amp in 0.0f64..6.0, nu in 0.1f64..5.0, n in 1u64..30) {
            let s = random_state(30, seed);
            let cfg = RingConfig::new(30, 1.0, 0.0).unwrap();
            let w = FluxWaveform::sine(0.0, amp, TAU * nu).unwrap();
            let tau = w.period().unwrap();
            let a = stroboscopic_fidelity(&s, &cfg, &w, n).unwrap();
            let b = fidelity(&s, &cfg, &w, n as f64 * tau).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
