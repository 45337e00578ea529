//! Parsing of angles written as multiples of π (`pi/2`, `0.765pi`, `3pi/8`).

use std::f64::consts::PI;

/// Parse `[coef][*]pi[/den]`, `π` in place of `pi`, or a plain number in
/// radians.
pub fn parse_angle(text: &str) -> Result<f64, String> {
    let s = text.trim().to_ascii_lowercase().replace('π', "pi");
    if s.is_empty() {
        return Err("empty angle".into());
    }
    let bad = || format!("cannot parse angle `{text}`");
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), Some(d.trim())),
        None => (s.as_str(), None),
    };
    let value = if let Some(coef) = num.strip_suffix("pi") {
        let coef = coef.trim().trim_end_matches('*').trim();
        let c = match coef {
            "" | "+" => 1.0,
            "-" => -1.0,
            c => c.parse::<f64>().map_err(|_| bad())?,
        };
        c * PI
    } else {
        num.parse::<f64>().map_err(|_| bad())?
    };
    let value = match den {
        Some(d) => {
            let d: f64 = d.parse().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(bad());
            }
            value / d
        }
        None => value,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(bad())
    }
}
