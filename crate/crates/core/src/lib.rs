//! Exact single-particle dynamics on a tight-binding ring threaded by a
//! time-periodic magnetic flux.
//!
//! The Hamiltonian is diagonal in momentum for every flux value, so the
//! propagator is a pure phase per momentum, `e^{i 2J f_k(t)}` with
//! `f_k(t) = ∫₀ᵗ cos(k + φ(t')) dt'`. The crate computes `f_k` in closed
//! form for square and sine drives, evaluates fidelities and time-averaged
//! fidelities, runs amplitude/frequency sweeps and threshold searches, and
//! carries an independent real-space Crank–Nicolson propagator to check
//! all of it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod angle;
pub mod bessel;
pub mod cli;
pub mod evolution;
pub mod oracle;
pub mod ring;
pub mod state;
pub mod waveform;

pub use bessel::{bessel_j, bessel_j0_zero, BesselError};
pub use evolution::{
    average_fidelity, evolve, fidelity, mean_fidelity, stroboscopic_fidelity, EvolutionError,
    FidelitySeries, SamplingPolicy,
};
pub use oracle::{evolve_realspace, fidelity_realspace, HoppingMatrix, OracleError};
pub use ring::{momentum_grid, validate_config, ConfigError, MomentumGrid, RingConfig};
pub use state::{
    from_site_basis, gaussian_packet, plane_wave, single_site, to_site_basis, MomentumState,
    SiteState, StateError, StateSpec,
};
pub use waveform::{DriveKind, FluxWaveform, PhaseTable, WaveformError, WaveformKind};
