//! RIS-assisted mmWave initial access.
//!
//! The base station must raise the received SNR of every cell zone above a
//! threshold using as few beam-sweeping timeslots as possible. Each slot it
//! jointly picks a set of codebook beams and a configuration of the
//! reflecting surface, by alternating between two semidefinite-relaxed
//! subproblems (beam/zone selection and phase-shift selection) and recovering
//! rank-one solutions with Gaussian randomization.
//!
//! Crate layout:
//! - [`scenario`]: cell geometry, zone partition, LoS channels, beam codebook,
//!   per-zone SNR.
//! - [`sdp`]: a first-order operator-splitting solver for standard-form
//!   semidefinite programs, plus the complex-Hermitian-to-real embedding.
//! - [`relax`]: builders for the lifted selection problem and the two
//!   phase-shift problems.
//! - [`rounding`]: Gaussian-randomization recovery of binary / unit-modulus
//!   solutions.
//! - [`protocol`]: the per-slot alternating loop, the full initial-access
//!   run, and the conventional beam-sweeping baseline.

pub mod protocol;
pub mod relax;
pub mod rounding;
pub mod scenario;
pub mod sdp;

pub use protocol::{run_beam_sweep, run_initial_access, RunResult, Variant};
pub use scenario::{CellScenario, ScenarioParams};
