//! Experiment configuration: TOML on disk with dB/dBm units, converted to
//! linear units at this boundary and nowhere else.

use anyhow::{bail, Context, Result};
use ris_access::protocol::{AlternateConfig, Variant};
use ris_access::rounding::RoundingConfig;
use ris_access::scenario::ScenarioParams;
use ris_access::sdp::SolverSettings;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Protocol entry point selected per sweep line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    P3,
    P4,
    Sweep,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::P3 => "p3",
            Method::P4 => "p4",
            Method::Sweep => "sweep",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::P3 => Some(Variant::P3),
            Method::P4 => Some(Variant::P4),
            Method::Sweep => None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    cell_radius_m: f64,
    num_zones: usize,
    rings: usize,
    num_bs_antennas: usize,
    num_beams: usize,
    num_ris_elements: usize,
    transmit_power_dbm: f64,
    noise_power_dbm: f64,
    ref_path_loss_db: f64,
    ref_distance_m: f64,
    decay_exponent: f64,
    wavelength_m: f64,
    /// BS antenna spacing; defaults to half a wavelength.
    bs_spacing_m: Option<f64>,
    /// RIS element spacing; defaults to half a wavelength.
    ris_spacing_m: Option<f64>,
    ris_position_m: [f64; 2],
    num_users: f64,
    #[serde(default = "default_sector_span")]
    sector_span_deg: f64,
    #[serde(default)]
    layout_seed: u64,
}

fn default_sector_span() -> f64 {
    180.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    tau_db: Vec<f64>,
    variants: Vec<Method>,
    seeds: Vec<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawTuning {
    l1: Option<usize>,
    l2: Option<usize>,
    feasibility_tol: Option<f64>,
    solver_tol: Option<f64>,
    solver_max_iters: Option<usize>,
    alternate_max_iters: Option<usize>,
    alternate_unchanged_iters: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    output_dir: Option<PathBuf>,
    scenario: RawScenario,
    sweep: RawSweep,
    #[serde(default)]
    tuning: RawTuning,
}

/// Fully resolved configuration in linear units.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioParams,
    pub layout_seed: u64,
    /// Threshold sweep, kept in dB for reporting; converted per run.
    pub tau_db: Vec<f64>,
    pub variants: Vec<Method>,
    pub seeds: Vec<u64>,
    pub alternate: AlternateConfig,
    pub output_dir: PathBuf,
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig> {
    let s = raw.scenario;
    for (name, v) in [
        ("transmit_power_dbm", s.transmit_power_dbm),
        ("noise_power_dbm", s.noise_power_dbm),
        ("ref_path_loss_db", s.ref_path_loss_db),
    ] {
        if !v.is_finite() {
            bail!("scenario.{name} must be finite");
        }
    }
    if raw.sweep.tau_db.is_empty() {
        bail!("sweep.tau_db must be non-empty");
    }
    if raw.sweep.tau_db.windows(2).any(|w| !(w[0] < w[1])) {
        bail!("sweep.tau_db must be strictly increasing");
    }
    if raw.sweep.tau_db.iter().any(|t| !t.is_finite()) {
        bail!("sweep.tau_db entries must be finite");
    }
    if raw.sweep.seeds.is_empty() {
        bail!("sweep.seeds must be non-empty");
    }
    if raw.sweep.variants.is_empty() {
        bail!("sweep.variants must be non-empty");
    }

    let params = ScenarioParams {
        cell_radius: s.cell_radius_m,
        num_zones: s.num_zones,
        rings: s.rings,
        num_bs_antennas: s.num_bs_antennas,
        num_beams: s.num_beams,
        num_ris_elements: s.num_ris_elements,
        transmit_power: dbm_to_watts(s.transmit_power_dbm),
        noise_power: dbm_to_watts(s.noise_power_dbm),
        ref_path_loss: db_to_linear(s.ref_path_loss_db),
        ref_distance: s.ref_distance_m,
        decay_exponent: s.decay_exponent,
        wavelength: s.wavelength_m,
        bs_spacing: s.bs_spacing_m.unwrap_or(s.wavelength_m / 2.0),
        ris_spacing: s.ris_spacing_m.unwrap_or(s.wavelength_m / 2.0),
        ris_position: s.ris_position_m,
        num_users: s.num_users,
        // Placeholder; each run sets its own threshold from the sweep.
        snr_threshold: db_to_linear(raw.sweep.tau_db[0]),
        sector_span: s.sector_span_deg.to_radians(),
    };
    params.validate().map_err(|e| anyhow::anyhow!("scenario: {e}"))?;

    let mut alternate = AlternateConfig::default();
    let t = raw.tuning;
    let rounding = RoundingConfig {
        l1: t.l1.unwrap_or(alternate.rounding.l1),
        l2: t.l2.unwrap_or(alternate.rounding.l2),
        feasibility_tol: t.feasibility_tol.unwrap_or(alternate.rounding.feasibility_tol),
        rng_seed: 0,
    };
    if rounding.l1 == 0 || rounding.l2 == 0 {
        bail!("tuning.l1 and tuning.l2 must be at least 1");
    }
    let solver = SolverSettings {
        tol: t.solver_tol.unwrap_or(alternate.solver.tol),
        max_iters: t.solver_max_iters.unwrap_or(alternate.solver.max_iters),
        ..SolverSettings::default()
    };
    alternate.rounding = rounding;
    alternate.solver = solver;
    if let Some(v) = t.alternate_max_iters {
        alternate.max_iters = v;
    }
    if let Some(v) = t.alternate_unchanged_iters {
        alternate.unchanged_iters = v;
    }

    Ok(ExperimentConfig {
        scenario: params,
        layout_seed: s.layout_seed,
        tau_db: raw.sweep.tau_db,
        variants: raw.sweep.variants,
        seeds: raw.sweep.seeds,
        alternate,
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("out")),
    })
}

/// Parse and validate a TOML config file, converting dB/dBm to linear.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let raw: RawConfig = toml::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    resolve(raw)
}

/// Replace the configured scenario with the built-in desk-scale preset,
/// keeping the sweep, tuning, and output settings.
pub fn apply_desk_preset(cfg: &mut ExperimentConfig) {
    let tau = cfg.scenario.snr_threshold;
    cfg.scenario = ScenarioParams::desk();
    cfg.scenario.snr_threshold = tau;
}
