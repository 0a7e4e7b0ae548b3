//! Configuration files, seeded experiment runners and CSV output.
//!
//! Every experiment kind maps a scenario and a seed list to one or more CSV
//! files. Seeds run on a worker pool sized by `OMNISURF_WORKERS` (all cores
//! when unset); rows always come out in seed order, so a spec and its seeds
//! determine every output byte.

mod config;
mod experiments;
mod run;

use serde::{Deserialize, Serialize};

pub use config::{
    load_config, parse_config, parse_scenario, scenario_to_toml, ConfigFile, DEFAULT_EXPONENT,
    DEFAULT_KAPPA, DEFAULT_NOISE_W,
};
pub use experiments::{
    compare_surfaces, coverage_map, CoveragePoint, SurfaceComparison, SurfaceVariant,
};
pub use run::{header, run, ExperimentKind, ExperimentSpec, OutputFile};

use crate::beamform::PrecoderKind;
use crate::channel::Scenario;
use crate::{Error, Result};

/// Names of the scenarios shipped with the crate.
pub const CANONICAL: [&str; 3] = ["two_side", "two_room", "pattern"];

/// Source text of a shipped scenario.
pub fn canonical_text(name: &str) -> Result<&'static str> {
    match name {
        "two_side" => Ok(include_str!("../../scenarios/two_side.toml")),
        "two_room" => Ok(include_str!("../../scenarios/two_room.toml")),
        "pattern" => Ok(include_str!("../../scenarios/pattern.toml")),
        _ => Err(Error::Config {
            key: "scenario".into(),
            line: None,
            msg: format!("no canonical scenario `{name}`; known: {}", CANONICAL.join(", ")),
        }),
    }
}

/// A shipped scenario: `two_side` (one transmitter, a user on each side),
/// `two_room` (two access points sharing a surface in a wall) or `pattern`
/// (a single horn facing a masked panel).
pub fn canonical(name: &str) -> Result<Scenario> {
    parse_scenario(canonical_text(name)?)
}

/// Runner options. Each kind reads only the fields it needs; the rest keep
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentOptions {
    pub precoder: PrecoderKind,
    pub restarts: usize,
    pub max_sweeps: usize,
    /// Codebook training: BS sections and IOS lobes.
    pub n_sections: usize,
    pub n_lobes: usize,
    pub feedback_noise_w: f64,
    /// Negotiation: initial penalty and iteration cap.
    pub rho: f64,
    pub max_iter: usize,
    /// Channel estimation: tile shape, repeats per probe and probe noise
    /// standard deviation.
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub repeats: usize,
    pub probe_sigma: f64,
    /// Beam pattern: steering target and azimuth step, degrees.
    pub target_psi_deg: f64,
    pub target_phi_deg: f64,
    pub step_deg: f64,
    /// Surface comparison: `[rows, cols]` panels to sweep; empty keeps the
    /// scenario's own panel.
    pub sizes: Vec<[usize; 2]>,
    /// Coverage map: probe user, surface variant and the planar grid.
    pub probe_user: usize,
    pub surface: SurfaceVariant,
    pub x_range_m: [f64; 2],
    pub y_range_m: [f64; 2],
    pub grid_step_m: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            precoder: PrecoderKind::Zf,
            restarts: 4,
            max_sweeps: 20,
            n_sections: 4,
            n_lobes: 16,
            feedback_noise_w: 0.0,
            rho: 1.0,
            max_iter: 50,
            tile_rows: 2,
            tile_cols: 2,
            repeats: 1,
            probe_sigma: 0.0,
            target_psi_deg: 141.0,
            target_phi_deg: 0.0,
            step_deg: 1.0,
            sizes: Vec::new(),
            probe_user: 0,
            surface: SurfaceVariant::Ios,
            x_range_m: [-3.0, 3.0],
            y_range_m: [-3.0, 3.0],
            grid_step_m: 0.5,
        }
    }
}

impl ExperimentOptions {
    pub fn alt(&self) -> crate::beamform::AltOptions {
        crate::beamform::AltOptions {
            restarts: self.restarts,
            max_sweeps: self.max_sweeps,
            precoder: self.precoder,
            ..Default::default()
        }
    }
}

/// Worker count from `OMNISURF_WORKERS`; `None` lets the pool use every
/// core.
pub fn workers() -> Result<Option<usize>> {
    match std::env::var("OMNISURF_WORKERS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config {
                key: "OMNISURF_WORKERS".into(),
                line: None,
                msg: format!("expected a positive integer, got `{v}`"),
            }),
        },
    }
}
