//! Command-line front end.
//!
//! Parameters come from flags and an optional TOML file (flags win). After
//! resolution every parameter a command uses is echoed into the artifact as
//! `# param key=value`, and [`RunSpec::from_header`] reads those lines back
//! so that re-running reproduces the artifact byte for byte.
//!
//! Exit codes: 0 success, 1 verify deviation above tolerance or I/O
//! failure, 2 configuration error, 3 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analysis::{self, write_threshold_csv, AnalysisError};
use crate::angle::parse_angle;
use crate::bessel::{bessel_j, bessel_j0_zero, BesselError};
use crate::evolution::{average_fidelity, evolve, fidelity, EvolutionError, SamplingPolicy};
use crate::oracle::{self, evolve_realspace, OracleError};
use crate::ring::{ConfigError, RingConfig};
use crate::state::{from_site_basis, to_site_basis, MomentumState, StateError, StateSpec};
use crate::waveform::{DriveKind, FluxWaveform, WaveformError};

/// Largest deviation `verify` accepts.
pub const VERIFY_TOLERANCE: f64 = 1e-7;

const SQUARE_AMPLITUDES: &str = "pi/8,pi/4,3pi/8,pi/2,5pi/8,3pi/4,7pi/8";
const SINE_AMPLITUDES: &str = "pi/8,pi/4,3pi/8,pi/2,5pi/8,0.765pi,7pi/8";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error("{0}")]
    Numerical(String),
    #[error("verification failed: max deviation {0:e} exceeds {VERIFY_TOLERANCE:e}")]
    VerifyFailed(f64),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::VerifyFailed(_) | CliError::Io(_) => 1,
        }
    }

    fn config(field: &str, message: impl fmt::Display) -> Self {
        CliError::Config {
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

fn analysis_error(field: &str, e: AnalysisError) -> CliError {
    match e {
        AnalysisError::NoBracket { .. } => CliError::Numerical(e.to_string()),
        AnalysisError::Evolution(e) => evolution_error(field, e),
        AnalysisError::Waveform(e) => waveform_error(field, e),
        AnalysisError::State(e) => CliError::config("state", e),
        AnalysisError::TargetOutOfRange(_) => CliError::config("target", e),
        AnalysisError::InvalidTolerance(_) => CliError::config("tol", e),
        AnalysisError::InvalidAlpha(_) => CliError::config("alphas", e),
        other => CliError::config(field, other),
    }
}

fn evolution_error(field: &str, e: EvolutionError) -> CliError {
    match e {
        EvolutionError::HorizonTooShort { .. } => CliError::config("T", e),
        EvolutionError::InvalidTime(_) => CliError::config("t", e),
        EvolutionError::Waveform(w) => waveform_error(field, w),
        other => CliError::config(field, other),
    }
}

fn waveform_error(field: &str, e: WaveformError) -> CliError {
    match e {
        WaveformError::QuadratureFailure(_) | WaveformError::Bessel(_) => {
            CliError::Numerical(e.to_string())
        }
        other => CliError::config(field, other),
    }
}

fn oracle_error(e: OracleError) -> CliError {
    match e {
        OracleError::StepTooLarge { .. } | OracleError::UnitarityLoss { .. } => {
            CliError::Numerical(e.to_string())
        }
        OracleError::TooManySites(_) => CliError::config("n", e),
        OracleError::InvalidTime(_) => CliError::config("t", e),
        OracleError::SizeMismatch { .. } => CliError::config("n", e),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ringflux",
    version,
    about = "Driven tight-binding ring: fidelities, sweeps, thresholds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Evolve a state to time t and write its amplitudes.
    Evolve(RunArgs),
    /// Sample F(t) over [0, T] and write the series with its running average.
    Fidelity(RunArgs),
    /// Average fidelity over an amplitude × frequency grid.
    Sweep(RunArgs),
    /// Average fidelity against frequency for a list of amplitudes.
    Curve(RunArgs),
    /// Threshold frequency against packet width, numeric and theory.
    Threshold(RunArgs),
    /// Cross-check the k-space propagator against the real-space oracle.
    Verify(RunArgs),
    /// Print a Bessel function value or a zero of J0.
    Bessel(BesselArgs),
}

#[derive(clap::Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// TOML file with the same keys as the long flags; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Number of sites.
    #[arg(long)]
    pub n: Option<String>,
    /// Hopping J.
    #[arg(long)]
    pub j: Option<String>,
    /// Static flux phase per bond.
    #[arg(long)]
    pub phi0: Option<String>,
    /// constant, square or sine.
    #[arg(long)]
    pub waveform: Option<String>,
    /// gaussian:k0=..,alpha=.. | single-site:l=.. | plane-wave:index=..
    #[arg(long)]
    pub state: Option<String>,
    /// Amplitude, list or range (`0:pi:pi/100`).
    #[arg(long)]
    pub amp: Option<String>,
    /// Frequency in units of J: value, list, `log:a:b:n` or `lin:a:b:n`.
    #[arg(long)]
    pub freq: Option<String>,
    /// Averaging horizon; `25N` means 25 N / J.
    #[arg(long = "T")]
    pub horizon: Option<String>,
    /// Packet widths for `threshold` (`1:50:1`).
    #[arg(long)]
    pub alphas: Option<String>,
    /// Target average fidelity.
    #[arg(long)]
    pub target: Option<String>,
    /// Fidelity tolerance band.
    #[arg(long)]
    pub tol: Option<String>,
    /// Packet centre for `threshold`.
    #[arg(long)]
    pub k0: Option<String>,
    /// Evolution time.
    #[arg(long)]
    pub t: Option<String>,
    /// Oracle step.
    #[arg(long)]
    pub dt: Option<String>,
    /// Keep every stride-th sample of the series.
    #[arg(long)]
    pub stride: Option<String>,
    /// momentum or site.
    #[arg(long)]
    pub basis: Option<String>,
    /// Seed for the random states of `verify`.
    #[arg(long)]
    pub seed: Option<String>,
}

#[derive(clap::Args, Debug, Clone)]
pub struct BesselArgs {
    /// Index of the positive zero of J0.
    #[arg(long, conflicts_with_all = ["order", "x"])]
    pub zero: Option<usize>,
    /// Order m of J_m(x).
    #[arg(long, requires = "x")]
    pub order: Option<usize>,
    /// Argument x of J_m(x).
    #[arg(long, requires = "order", allow_hyphen_values = true)]
    pub x: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Evolve,
    Fidelity,
    Sweep,
    Curve,
    Threshold,
    Verify,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Evolve => "evolve",
            Command::Fidelity => "fidelity",
            Command::Sweep => "sweep",
            Command::Curve => "curve",
            Command::Threshold => "threshold",
            Command::Verify => "verify",
        })
    }
}

impl std::str::FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "evolve" => Command::Evolve,
            "fidelity" => Command::Fidelity,
            "sweep" => Command::Sweep,
            "curve" => Command::Curve,
            "threshold" => Command::Threshold,
            "verify" => Command::Verify,
            other => return Err(format!("unknown command `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Waveform {
    Constant,
    Drive(DriveKind),
}

impl fmt::Display for Waveform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Waveform::Constant => f.write_str("constant"),
            Waveform::Drive(d) => d.fmt(f),
        }
    }
}

fn parse_waveform(s: &str) -> Result<Waveform, String> {
    if s.trim().eq_ignore_ascii_case("constant") {
        Ok(Waveform::Constant)
    } else {
        s.parse().map(Waveform::Drive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Momentum,
    Site,
}

/// A grid of values together with the text it was parsed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub text: String,
    pub values: Vec<f64>,
}

impl Grid {
    fn parse(field: &str, text: &str) -> Result<Self, CliError> {
        let values = parse_grid(text).map_err(|m| CliError::config(field, m))?;
        Ok(Self {
            text: text.trim().to_string(),
            values,
        })
    }

    fn single(&self, field: &str) -> Result<f64, CliError> {
        match self.values.as_slice() {
            [v] => Ok(*v),
            _ => Err(CliError::config(field, "expected a single value")),
        }
    }
}

/// `a:b:step` (inclusive, angles allowed), `log:a:b:n`, `lin:a:b:n`, or a
/// comma-separated list of angles/numbers.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    let t = text.trim();
    let count_range = |rest: &str, log: bool| -> Result<Vec<f64>, String> {
        let parts: Vec<&str> = rest.split(':').collect();
        let [a, b, n] = parts.as_slice() else {
            return Err(format!("expected start:stop:count in `{text}`"));
        };
        let a = parse_angle(a)?;
        let b = parse_angle(b)?;
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| format!("bad point count in `{text}`"))?;
        if n == 0 {
            return Err(format!("point count must be positive in `{text}`"));
        }
        if log && !(a > 0.0 && b > 0.0) {
            return Err(format!("log grid needs positive endpoints in `{text}`"));
        }
        if n == 1 {
            return Ok(vec![a]);
        }
        Ok((0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                if i == n - 1 {
                    b
                } else if log {
                    a * (b / a).powf(s)
                } else {
                    a + s * (b - a)
                }
            })
            .collect())
    };
    if let Some(rest) = t.strip_prefix("log:") {
        return count_range(rest, true);
    }
    if let Some(rest) = t.strip_prefix("lin:") {
        return count_range(rest, false);
    }
    if t.contains(':') {
        let parts: Vec<&str> = t.split(':').collect();
        let [a, b, step] = parts.as_slice() else {
            return Err(format!("expected start:stop:step in `{text}`"));
        };
        let a = parse_angle(a)?;
        let b = parse_angle(b)?;
        let step = parse_angle(step)?;
        if !(step > 0.0) || b < a {
            return Err(format!(
                "range `{text}` needs start ≤ stop and a positive step"
            ));
        }
        let span = (b - a) / step;
        let n = if (span - span.round()).abs() < 1e-9 * span.max(1.0) {
            span.round()
        } else {
            span.floor()
        } as usize;
        if n > 1_000_000 {
            return Err(format!("range `{text}` has too many points"));
        }
        return Ok((0..=n).map(|i| a + i as f64 * step).collect());
    }
    let values = t
        .split(',')
        .map(parse_angle)
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("empty grid".into());
    }
    Ok(values)
}

/// Fully resolved parameters of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub command: Command,
    pub ring: RingConfig,
    pub waveform: Waveform,
    pub state: StateSpec,
    pub horizon: f64,
    pub amp: Grid,
    pub freq: Grid,
    pub alphas: Grid,
    pub target: f64,
    pub tol: f64,
    pub k0: f64,
    pub time: f64,
    pub dt: f64,
    pub stride: usize,
    pub basis: Basis,
    pub seed: u64,
}

const ALL_KEYS: &[&str] = &[
    "n", "j", "phi0", "waveform", "state", "amp", "freq", "T", "alphas", "target", "tol", "k0",
    "t", "dt", "stride", "basis", "seed",
];

/// Raw string values by key, before defaults and validation.
pub type RawParams = BTreeMap<String, String>;

fn flag_params(args: &RunArgs) -> RawParams {
    let pairs = [
        ("n", &args.n),
        ("j", &args.j),
        ("phi0", &args.phi0),
        ("waveform", &args.waveform),
        ("state", &args.state),
        ("amp", &args.amp),
        ("freq", &args.freq),
        ("T", &args.horizon),
        ("alphas", &args.alphas),
        ("target", &args.target),
        ("tol", &args.tol),
        ("k0", &args.k0),
        ("t", &args.t),
        ("dt", &args.dt),
        ("stride", &args.stride),
        ("basis", &args.basis),
        ("seed", &args.seed),
    ];
    pairs
        .into_iter()
        .filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v)))
        .collect()
}

/// Keys of a TOML config file, plus the non-echoed `out` and `threads`.
pub fn file_params(text: &str) -> Result<(RawParams, Option<PathBuf>, Option<usize>), CliError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::config("config", e.message()))?;
    let mut raw = RawParams::new();
    let mut out = None;
    let mut threads = None;
    for (key, value) in table {
        let text = match &value {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            other => {
                return Err(CliError::config(
                    &key,
                    format!("expected a string or number, got {}", other.type_str()),
                ))
            }
        };
        match key.as_str() {
            "out" => out = Some(PathBuf::from(text)),
            "threads" => {
                threads = Some(
                    text.parse()
                        .map_err(|_| CliError::config("threads", "expected a positive integer"))?,
                )
            }
            k if ALL_KEYS.contains(&k) => {
                raw.insert(key, text);
            }
            _ => return Err(CliError::config(&key, "unknown key in config file")),
        }
    }
    Ok((raw, out, threads))
}

fn parse_num<T: std::str::FromStr>(field: &str, text: &str) -> Result<T, CliError> {
    text.trim()
        .parse()
        .map_err(|_| CliError::config(field, format!("cannot parse `{text}`")))
}

fn parse_f64(field: &str, text: &str) -> Result<f64, CliError> {
    let v: f64 = parse_num(field, text)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::config(
            field,
            format!("must be finite (got {text})"),
        ))
    }
}

fn parse_horizon(text: &str, n: usize, j: f64) -> Result<f64, CliError> {
    let t = text.trim();
    let v = match t.strip_suffix('N') {
        Some(coef) => {
            let c = if coef.trim().is_empty() {
                1.0
            } else {
                parse_f64("T", coef)?
            };
            c * n as f64 / j
        }
        None => parse_f64("T", t)?,
    };
    if v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::config(
            "T",
            format!("horizon must be positive (got {text})"),
        ))
    }
}

impl RunSpec {
    /// Keys this command reads, in echo order.
    pub fn keys(&self) -> Vec<&'static str> {
        let driven = self.waveform != Waveform::Constant;
        let mut k = vec!["n", "j", "phi0"];
        match self.command {
            Command::Evolve | Command::Fidelity => {
                k.extend(["waveform", "state"]);
                if driven {
                    k.extend(["amp", "freq"]);
                }
                if self.command == Command::Evolve {
                    k.extend(["t", "basis"]);
                } else {
                    k.extend(["T", "stride"]);
                }
            }
            Command::Sweep | Command::Curve => k.extend(["waveform", "state", "amp", "freq", "T"]),
            Command::Threshold => {
                k.extend(["waveform", "amp", "k0", "alphas", "target", "tol", "T"])
            }
            Command::Verify => k.extend(["amp", "freq", "dt", "seed"]),
        }
        k
    }

    fn value_text(&self, key: &str) -> String {
        match key {
            "n" => self.ring.n_sites().to_string(),
            "j" => self.ring.hopping().to_string(),
            "phi0" => self.ring.phi0().to_string(),
            "waveform" => self.waveform.to_string(),
            "state" => self.state.to_string(),
            "amp" => self.amp.text.clone(),
            "freq" => self.freq.text.clone(),
            "T" => self.horizon.to_string(),
            "alphas" => self.alphas.text.clone(),
            "target" => self.target.to_string(),
            "tol" => self.tol.to_string(),
            "k0" => self.k0.to_string(),
            "t" => self.time.to_string(),
            "dt" => self.dt.to_string(),
            "stride" => self.stride.to_string(),
            "basis" => match self.basis {
                Basis::Momentum => "momentum".into(),
                Basis::Site => "site".into(),
            },
            "seed" => self.seed.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// `# ringflux …` and `# param key=value` lines.
    pub fn header_lines(&self) -> Vec<String> {
        let mut lines = vec![format!(
            "# ringflux version={} command={}",
            env!("CARGO_PKG_VERSION"),
            self.command
        )];
        for key in self.keys() {
            lines.push(format!("# param {key}={}", self.value_text(key)));
        }
        lines
    }

    /// Apply defaults and validate. Keys the command does not use are
    /// rejected.
    pub fn resolve(command: Command, raw: &RawParams) -> Result<Self, CliError> {
        let get = |k: &str| raw.get(k).map(String::as_str);
        let n: usize = match get("n") {
            Some(v) => parse_num("n", v)?,
            None if command == Command::Verify => 16,
            None => 200,
        };
        let j = get("j")
            .map(|v| parse_f64("j", v))
            .transpose()?
            .unwrap_or(1.0);
        let phi0 = get("phi0")
            .map(parse_angle)
            .transpose()
            .map_err(|m| CliError::config("phi0", m))?;
        let ring = RingConfig::new(n, j, phi0.unwrap_or(0.0)).map_err(|e| match e {
            ConfigError::NonPositiveSites(_) => CliError::config("n", e),
            ConfigError::NonPositiveHopping(_) => CliError::config("j", e),
            ConfigError::NonFiniteField { field, .. } => {
                CliError::config(if field == "hopping" { "j" } else { field }, e)
            }
        })?;
        let waveform = match get("waveform") {
            Some(v) => parse_waveform(v).map_err(|m| CliError::config("waveform", m))?,
            None => Waveform::Drive(DriveKind::Square),
        };
        let sweep_like = matches!(
            command,
            Command::Sweep | Command::Curve | Command::Threshold
        );
        if sweep_like && waveform == Waveform::Constant {
            return Err(CliError::config(
                "waveform",
                format!("{command} needs a square or sine drive"),
            ));
        }
        let state: StateSpec = get("state")
            .unwrap_or("gaussian:k0=0,alpha=50")
            .parse()
            .map_err(|m| CliError::config("state", m))?;
        let sine = waveform == Waveform::Drive(DriveKind::Sine);
        let amp_default = match command {
            Command::Sweep => "0:pi:pi/100",
            Command::Curve if sine => SINE_AMPLITUDES,
            Command::Curve => SQUARE_AMPLITUDES,
            Command::Verify => "1",
            _ if sine => "0.765pi",
            _ => "pi/2",
        };
        let amp = Grid::parse("amp", get("amp").unwrap_or(amp_default))?;
        let freq_default = match command {
            Command::Sweep | Command::Curve => "log:0.01:3:60",
            _ => "1",
        };
        let freq = Grid::parse("freq", get("freq").unwrap_or(freq_default))?;
        if freq.values.iter().any(|f| !(*f > 0.0)) {
            return Err(CliError::config("freq", "frequencies must be positive"));
        }
        let horizon = parse_horizon(get("T").unwrap_or("25N"), n, ring.hopping())?;
        let alphas = Grid::parse("alphas", get("alphas").unwrap_or("1:50:1"))?;
        let target = get("target")
            .map(|v| parse_f64("target", v))
            .transpose()?
            .unwrap_or(0.9);
        let tol = get("tol")
            .map(|v| parse_f64("tol", v))
            .transpose()?
            .unwrap_or(0.01);
        let k0 = get("k0")
            .map(parse_angle)
            .transpose()
            .map_err(|m| CliError::config("k0", m))?
            .unwrap_or(0.0);
        let time = get("t")
            .map(|v| parse_f64("t", v))
            .transpose()?
            .unwrap_or(1.0);
        let dt = get("dt")
            .map(|v| parse_f64("dt", v))
            .transpose()?
            .unwrap_or(4e-5);
        let stride: usize = get("stride")
            .map(|v| parse_num("stride", v))
            .transpose()?
            .unwrap_or(1);
        if stride == 0 {
            return Err(CliError::config("stride", "must be at least 1"));
        }
        let basis = match get("basis").unwrap_or("momentum") {
            "momentum" => Basis::Momentum,
            "site" => Basis::Site,
            other => {
                return Err(CliError::config(
                    "basis",
                    format!("expected momentum or site, got `{other}`"),
                ))
            }
        };
        let seed = get("seed")
            .map(|v| parse_num("seed", v))
            .transpose()?
            .unwrap_or(1);

        let spec = RunSpec {
            command,
            ring,
            waveform,
            state,
            horizon,
            amp,
            freq,
            alphas,
            target,
            tol,
            k0,
            time,
            dt,
            stride,
            basis,
            seed,
        };
        let used = spec.keys();
        if let Some(extra) = raw.keys().find(|k| !used.contains(&k.as_str())) {
            return Err(CliError::config(
                extra,
                format!("not used by `{command}` with waveform={}", spec.waveform),
            ));
        }
        match command {
            Command::Evolve | Command::Fidelity | Command::Threshold
                if spec.waveform != Waveform::Constant =>
            {
                spec.amp.single("amp")?;
                if command != Command::Threshold {
                    spec.freq.single("freq")?;
                }
            }
            Command::Verify => {
                spec.amp.single("amp")?;
                spec.freq.single("freq")?;
            }
            _ => {}
        }
        Ok(spec)
    }

    /// Rebuild a spec from an artifact's metadata lines.
    pub fn from_header(text: &str) -> Result<Self, CliError> {
        let mut command = None;
        let mut raw = RawParams::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some(rest) = line.strip_prefix("# ringflux ") {
                for part in rest.split_whitespace() {
                    if let Some(c) = part.strip_prefix("command=") {
                        command = Some(c.parse().map_err(|m| CliError::config("command", m))?);
                    }
                }
            } else if let Some(rest) = line.strip_prefix("# param ") {
                let (k, v) = rest.split_once('=').ok_or_else(|| {
                    CliError::config("header", format!("malformed line `{line}`"))
                })?;
                raw.insert(k.to_string(), v.to_string());
            }
        }
        let command = command.ok_or_else(|| CliError::config("header", "no `# ringflux` line"))?;
        Self::resolve(command, &raw)
    }

    fn drive(&self, amplitude: f64, frequency: f64) -> Result<FluxWaveform, CliError> {
        let built = match self.waveform {
            Waveform::Constant => FluxWaveform::constant(0.0),
            Waveform::Drive(kind) => kind.build(0.0, amplitude, frequency * self.ring.hopping()),
        };
        built.map_err(|e| waveform_error("amp", e))
    }

    fn single_drive(&self) -> Result<FluxWaveform, CliError> {
        match self.waveform {
            Waveform::Constant => self.drive(0.0, 1.0),
            Waveform::Drive(_) => self.drive(self.amp.single("amp")?, self.freq.single("freq")?),
        }
    }

    fn build_state(&self) -> Result<MomentumState, CliError> {
        self.state
            .build(&self.ring.momentum_grid())
            .map_err(|e: StateError| CliError::config("state", e))
    }

    fn kind(&self) -> DriveKind {
        match self.waveform {
            Waveform::Drive(k) => k,
            Waveform::Constant => unreachable!("rejected during resolution"),
        }
    }
}

/// Output of a run.
#[derive(Debug, Default)]
pub struct Output {
    pub artifact: Vec<u8>,
    /// Set by `verify` when the worst deviation exceeds the tolerance.
    pub failed_deviation: Option<f64>,
}

fn header(spec: &RunSpec, first: Option<String>) -> Vec<u8> {
    let mut buf = Vec::new();
    if let Some(line) = first {
        writeln!(buf, "{line}").unwrap();
    }
    for line in spec.header_lines() {
        writeln!(buf, "{line}").unwrap();
    }
    buf
}

/// Run a resolved spec. `verify` returns its report as the artifact.
pub fn execute(spec: &RunSpec) -> Result<Output, CliError> {
    match spec.command {
        Command::Evolve => run_evolve(spec),
        Command::Fidelity => run_fidelity(spec),
        Command::Sweep | Command::Curve => run_sweep(spec),
        Command::Threshold => run_threshold(spec),
        Command::Verify => run_verify(spec),
    }
}

fn run_evolve(spec: &RunSpec) -> Result<Output, CliError> {
    let s = spec.build_state()?;
    let w = spec.single_drive()?;
    let out = evolve(&s, &spec.ring, &w, spec.time).map_err(|e| evolution_error("t", e))?;
    let mut buf = header(spec, None);
    match spec.basis {
        Basis::Momentum => out.write_csv(&mut buf)?,
        Basis::Site => to_site_basis(&out).write_csv(&mut buf)?,
    }
    Ok(Output {
        artifact: buf,
        failed_deviation: None,
    })
}

fn run_fidelity(spec: &RunSpec) -> Result<Output, CliError> {
    let s = spec.build_state()?;
    let w = spec.single_drive()?;
    let (avg, series) =
        average_fidelity(&s, &spec.ring, &w, spec.horizon, SamplingPolicy::default())
            .map_err(|e| evolution_error("T", e))?;
    let mut buf = header(spec, None);
    writeln!(buf, "# result average_fidelity={avg}")?;
    series.write_csv(&mut buf, spec.stride)?;
    Ok(Output {
        artifact: buf,
        failed_deviation: None,
    })
}

fn run_sweep(spec: &RunSpec) -> Result<Output, CliError> {
    let grid = analysis::sweep_amp_freq(
        &spec.state,
        spec.kind(),
        &spec.amp.values,
        &spec.freq.values,
        &spec.ring,
        spec.horizon,
    )
    .map_err(|e| analysis_error("amp", e))?;
    let mut buf = header(spec, Some(grid.metadata.to_string()));
    let mut body = Vec::new();
    grid.write_csv(&mut body)?;
    // skip the metadata line, already written first
    let text = String::from_utf8(body).expect("CSV is UTF-8");
    let rest = text.split_once('\n').map_or("", |(_, r)| r);
    buf.extend_from_slice(rest.as_bytes());
    Ok(Output {
        artifact: buf,
        failed_deviation: None,
    })
}

fn run_threshold(spec: &RunSpec) -> Result<Output, CliError> {
    let (numeric, theory) = analysis::threshold_curves(
        spec.k0,
        &spec.alphas.values,
        spec.kind(),
        spec.amp.single("amp")?,
        spec.target,
        spec.tol,
        &spec.ring,
        spec.horizon,
    )
    .map_err(|e| analysis_error("alphas", e))?;
    let mut buf = header(spec, None);
    write_threshold_csv(&mut buf, &[numeric, theory])?;
    Ok(Output {
        artifact: buf,
        failed_deviation: None,
    })
}

fn random_state(n: usize, rng: &mut ChaCha8Rng) -> crate::state::SiteState {
    let a = (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    crate::state::SiteState::normalized(a).expect("random vector is non-zero")
}

fn run_verify(spec: &RunSpec) -> Result<Output, CliError> {
    let n = spec.ring.n_sites();
    if n > oracle::MAX_ORACLE_SITES {
        return Err(oracle_error(OracleError::TooManySites(n)));
    }
    let amp = spec.amp.single("amp")?;
    let freq = spec.freq.single("freq")?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut report = String::new();
    let mut worst: f64 = 0.0;
    let mut line = |report: &mut String, label: String, dev: f64| {
        let verdict = if dev <= VERIFY_TOLERANCE {
            "PASS"
        } else {
            "FAIL"
        };
        writeln!(report, "{verdict} {label}: max deviation {dev:.3e}").unwrap();
        worst = worst.max(dev);
    };

    for kind in [DriveKind::Square, DriveKind::Sine] {
        let w = kind
            .build(0.0, amp, freq * spec.ring.hopping())
            .map_err(|e| waveform_error("amp", e))?;
        let tau = w.period().expect("drives are periodic");
        let mut dev: f64 = 0.0;
        for _ in 0..2 {
            let site = random_state(n, &mut rng);
            let ms = from_site_basis(&site);
            for frac in [0.37, 5.0] {
                let t = frac * tau;
                let k = to_site_basis(
                    &evolve(&ms, &spec.ring, &w, t).map_err(|e| evolution_error("t", e))?,
                );
                let r =
                    evolve_realspace(&site, &spec.ring, &w, t, spec.dt).map_err(oracle_error)?;
                for (a, b) in k.amplitudes().iter().zip(r.amplitudes()) {
                    dev = dev.max((a - b).norm());
                }
            }
        }
        line(&mut report, format!("{kind} amplitudes, t up to 5τ"), dev);

        let site = random_state(n, &mut rng);
        let ms = from_site_basis(&site);
        let mut dev: f64 = 0.0;
        for t in [0.5, 1.3, 2.9] {
            let t = t / spec.ring.hopping();
            let a = fidelity(&ms, &spec.ring, &w, t).map_err(|e| evolution_error("t", e))?;
            let b = oracle::fidelity_realspace(&site, &spec.ring, &w, t, spec.dt)
                .map_err(oracle_error)?;
            dev = dev.max((a - b).abs());
        }
        line(
            &mut report,
            format!("{kind} fidelity at t = 0.5, 1.3, 2.9 /J"),
            dev,
        );
    }

    let w = DriveKind::Square
        .build(0.0, std::f64::consts::FRAC_PI_2, freq * spec.ring.hopping())
        .map_err(|e| waveform_error("freq", e))?;
    let tau = w.period().expect("square drive is periodic");
    let site = random_state(n, &mut rng);
    let back = evolve_realspace(&site, &spec.ring, &w, tau, spec.dt).map_err(oracle_error)?;
    let dev = site
        .amplitudes()
        .iter()
        .zip(back.amplitudes())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    line(
        &mut report,
        "square π/2 revival after one period".into(),
        dev,
    );

    let mut buf = header(spec, None);
    buf.extend_from_slice(report.as_bytes());
    let verdict = if worst <= VERIFY_TOLERANCE {
        "PASS"
    } else {
        "FAIL"
    };
    writeln!(
        buf,
        "{verdict} overall: max deviation {worst:.3e} (tolerance {VERIFY_TOLERANCE:e})"
    )?;
    Ok(Output {
        artifact: buf,
        failed_deviation: (worst > VERIFY_TOLERANCE).then_some(worst),
    })
}

fn run_bessel(args: &BesselArgs) -> Result<String, CliError> {
    let bessel_err = |field: &str, e: BesselError| CliError::config(field, e);
    match (args.zero, args.order, args.x) {
        (Some(i), _, _) => Ok(format!(
            "{:.15}",
            bessel_j0_zero(i).map_err(|e| bessel_err("zero", e))?
        )),
        (None, Some(m), Some(x)) => Ok(format!(
            "{}",
            bessel_j(m, x).map_err(|e| bessel_err("order", e))?
        )),
        _ => Err(CliError::config(
            "bessel",
            "pass --zero <i> or --order <m> --x <x>",
        )),
    }
}

fn resolve_args(
    command: Command,
    args: &RunArgs,
) -> Result<(RunSpec, Option<PathBuf>, Option<usize>), CliError> {
    let (mut raw, file_out, file_threads) = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
            file_params(&text)?
        }
        None => (RawParams::new(), None, None),
    };
    raw.extend(flag_params(args));
    let spec = RunSpec::resolve(command, &raw)?;
    Ok((
        spec,
        args.out.clone().or(file_out),
        args.threads.or(file_threads),
    ))
}

fn run_command(command: Command, args: &RunArgs) -> Result<(), CliError> {
    let (spec, out, threads) = resolve_args(command, args)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config("threads", e))?;
    let output = pool.install(|| execute(&spec))?;
    match out {
        Some(path) => std::fs::write(path, &output.artifact)?,
        None => std::io::stdout().write_all(&output.artifact)?,
    }
    match output.failed_deviation {
        Some(dev) => Err(CliError::VerifyFailed(dev)),
        None => Ok(()),
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Cmd::Evolve(a) => run_command(Command::Evolve, a),
        Cmd::Fidelity(a) => run_command(Command::Fidelity, a),
        Cmd::Sweep(a) => run_command(Command::Sweep, a),
        Cmd::Curve(a) => run_command(Command::Curve, a),
        Cmd::Threshold(a) => run_command(Command::Threshold, a),
        Cmd::Verify(a) => run_command(Command::Verify, a),
        Cmd::Bessel(a) => run_bessel(a).map(|s| println!("{s}")),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
