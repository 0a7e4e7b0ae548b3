//! CSI-known hybrid beamforming: digital precoding at the transmitter
//! interleaved with discrete state selection at the surface.

mod ascent;
mod precoder;

pub use ascent::{
    alternating_optimize, exhaustive, exhaustive_oracle, optimize, random_config, AltOptions,
    AltResult, Interference, Objective, PrecoderRefresh, EXHAUSTIVE_LIMIT,
};
pub use precoder::{
    mmse_precoder, precode, sinr_and_rates, sinr_and_rates_with, zero_forcing, Beamformer,
    PrecoderKind, Rates,
};

use crate::element::{ElementStateTable, Side};
use crate::{Error, Result, C64};

/// Per-element state indices. The reflection and refraction response of an
/// element always come from the same table row, so the two sides cannot be
/// configured independently.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PhaseConfig {
    states: Vec<usize>,
}

impl PhaseConfig {
    pub fn new(states: Vec<usize>) -> Self {
        Self { states }
    }

    pub fn uniform(n_elements: usize, state: usize) -> Self {
        Self::new(vec![state; n_elements])
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Checks the length against `n_elements` and every index against `table`.
    pub fn check(&self, n_elements: usize, table: &ElementStateTable) -> Result<()> {
        if self.states.len() != n_elements {
            return Err(Error::DimensionMismatch {
                what: "phase configuration",
                expected: n_elements,
                got: self.states.len(),
            });
        }
        if let Some(&bad) = self.states.iter().find(|&&s| s >= table.len()) {
            return Err(Error::StateIndex {
                index: bad,
                len: table.len(),
            });
        }
        Ok(())
    }

    /// Diagonal of `Q` on one side, without radiation weighting.
    pub fn responses(&self, table: &ElementStateTable, side: Side) -> Vec<C64> {
        let c = table.coefficients(side);
        self.states.iter().map(|&s| c[s]).collect()
    }
}
