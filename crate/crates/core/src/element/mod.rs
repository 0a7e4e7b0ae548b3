//! Single-element response: measured state tables and the two-port circuit
//! model that can generate them.

mod circuit;
mod table;

pub use circuit::{
    abcd_matrix, circuit_coefficients, Abcd, CircuitParams, DiodeModel, DiodeState,
    ElementAdmittances, SeriesRlc,
};
pub use table::{
    canonical_phase, discrete_phase_set, validate_design_principles, DesignReport,
    DiscretePhaseSet, ElementState, ElementStateTable, Side,
};
