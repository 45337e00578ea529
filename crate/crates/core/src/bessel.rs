//! Bessel functions of the first kind for integer order.
//!
//! Small arguments (`|x| < 12`) use the ascending power series. Larger
//! arguments use Miller's downward recurrence, normalized with
//! `J₀ + 2 Σ J₂ₘ = 1`. Both are accurate to ~1e-13 absolute for `|x| ≤ 50`
//! and orders up to 60.

use std::f64::consts::PI;

use thiserror::Error;

/// Largest order accepted by [`bessel_j`].
pub const MAX_ORDER: usize = 200;

/// Largest index accepted by [`bessel_j0_zero`].
pub const MAX_ZERO_INDEX: usize = 20;

const SERIES_LIMIT: f64 = 12.0;
const RESCALE_AT: f64 = 1e250;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BesselError {
    #[error("Bessel order {0} exceeds the supported maximum {MAX_ORDER}")]
    OrderTooLarge(usize),
    #[error("Bessel argument must be finite (got {0})")]
    NonFiniteArgument(f64),
    #[error("zero index {0} outside supported range 1..={MAX_ZERO_INDEX}")]
    IndexOutOfRange(usize),
}

/// `J_m(x)`.
pub fn bessel_j(m: usize, x: f64) -> Result<f64, BesselError> {
    check(m, x)?;
    if x.abs() < SERIES_LIMIT {
        Ok(series(m, x))
    } else {
        Ok(miller(m, x)[m])
    }
}

/// `[J_0(x), J_1(x), …, J_max_order(x)]`.
pub fn bessel_j_sequence(max_order: usize, x: f64) -> Result<Vec<f64>, BesselError> {
    check(max_order, x)?;
    if x.abs() < SERIES_LIMIT {
        Ok((0..=max_order).map(|m| series(m, x)).collect())
    } else {
        let mut v = miller(max_order, x);
        v.truncate(max_order + 1);
        Ok(v)
    }
}

/// The `i`-th positive zero of `J₀`, by Newton iteration from McMahon's
/// asymptotic estimate.
pub fn bessel_j0_zero(i: usize) -> Result<f64, BesselError> {
    if i == 0 || i > MAX_ZERO_INDEX {
        return Err(BesselError::IndexOutOfRange(i));
    }
    let beta = (i as f64 - 0.25) * PI;
    let mut x = beta + 1.0 / (8.0 * beta) - 31.0 / (384.0 * beta.powi(3));
    for _ in 0..50 {
        let j0 = bessel_j(0, x)?;
        let j1 = bessel_j(1, x)?;
        // J₀' = −J₁
        let dx = j0 / j1;
        x += dx;
        if dx.abs() < 1e-15 * x {
            break;
        }
    }
    Ok(x)
}

fn check(m: usize, x: f64) -> Result<(), BesselError> {
    if m > MAX_ORDER {
        return Err(BesselError::OrderTooLarge(m));
    }
    if !x.is_finite() {
        return Err(BesselError::NonFiniteArgument(x));
    }
    Ok(())
}

fn series(m: usize, x: f64) -> f64 {
    let half = 0.5 * x;
    // (x/2)^m / m!
    let mut lead = 1.0;
    for j in 1..=m {
        lead *= half / j as f64;
    }
    if lead == 0.0 {
        return 0.0;
    }
    let q = -half * half;
    let mut term = lead;
    let mut sum = lead;
    for k in 1..200 {
        term *= q / (k as f64 * (k + m) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Downward recurrence returning `J_0 … J_top` for some `top ≥ m`.
fn miller(m: usize, x: f64) -> Vec<f64> {
    let ax = x.abs();
    let base = (m as f64).max(ax.ceil());
    let mut start = (base + 30.0 + (160.0 * base).sqrt()).ceil() as usize;
    if start % 2 == 1 {
        start += 1;
    }
    let mut vals = vec![0.0; start + 2];
    let mut next = 0.0; // J_{n+1}
    let mut cur = 1e-30; // J_n
    vals[start] = cur;
    for n in (1..=start).rev() {
        let prev = 2.0 * n as f64 / ax * cur - next;
        vals[n - 1] = prev;
        next = cur;
        cur = prev;
        if cur.abs() > RESCALE_AT {
            for v in vals[n - 1..=start].iter_mut() {
                *v /= RESCALE_AT;
            }
            next /= RESCALE_AT;
            cur /= RESCALE_AT;
        }
    }
    let norm: f64 = vals[0] + 2.0 * vals[2..=start].iter().step_by(2).sum::<f64>();
    vals.truncate(start + 1);
    for v in vals.iter_mut() {
        *v /= norm;
    }
    if x < 0.0 {
        for (order, v) in vals.iter_mut().enumerate() {
            if order % 2 == 1 {
                *v = -*v;
            }
        }
    }
    vals
}
