use std::f64::consts::{PI, TAU};
use std::fmt;

use crate::{Error, Result, C64};

/// Tolerance applied to the insertion-loss bound so that tables generated by
/// the circuit model are not rejected over rounding.
const ENERGY_SLACK: f64 = 1e-12;

/// Which half-space an outgoing wave leaves into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Same side as the transmitter.
    Reflect,
    /// Opposite side; the wave passes through the surface.
    Refract,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Reflect => "reflect",
            Side::Refract => "refract",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn canonical_phase(phase: f64) -> f64 {
    let p = phase.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if p >= TAU {
        0.0
    } else {
        p
    }
}

/// One configuration of an element's diodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementState {
    pub refl_amp: f64,
    pub refl_phase: f64,
    pub refr_amp: f64,
    pub refr_phase: f64,
}

impl ElementState {
    pub fn new(refl_amp: f64, refl_phase: f64, refr_amp: f64, refr_phase: f64) -> Self {
        Self {
            refl_amp,
            refl_phase,
            refr_amp,
            refr_phase,
        }
    }

    pub fn from_degrees(refl_amp: f64, refl_deg: f64, refr_amp: f64, refr_deg: f64) -> Self {
        Self::new(refl_amp, refl_deg.to_radians(), refr_amp, refr_deg.to_radians())
    }

    pub fn from_coefficients(refl: C64, refr: C64) -> Self {
        Self::new(refl.norm(), refl.arg(), refr.norm(), refr.arg())
    }

    pub fn amplitude(&self, side: Side) -> f64 {
        match side {
            Side::Reflect => self.refl_amp,
            Side::Refract => self.refr_amp,
        }
    }

    pub fn phase(&self, side: Side) -> f64 {
        match side {
            Side::Reflect => self.refl_phase,
            Side::Refract => self.refr_phase,
        }
    }

    pub fn coefficient(&self, side: Side) -> C64 {
        C64::from_polar(self.amplitude(side), self.phase(side))
    }

    /// `|Γ_l|² + |Γ_r|²`, the fraction of incident power that is re-radiated.
    pub fn radiated_energy(&self) -> f64 {
        self.refl_amp * self.refl_amp + self.refr_amp * self.refr_amp
    }
}

/// The finite set of responses an element can be switched between.
///
/// Reflection and refraction of one state are always used together, which is
/// how the coupling between the two sides is enforced throughout the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementStateTable {
    states: Vec<ElementState>,
}

impl ElementStateTable {
    /// Validates and canonicalizes a list of states.
    pub fn new(states: Vec<ElementState>) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::InvalidTable(format!(
                "need at least 2 states, got {}",
                states.len()
            )));
        }
        let mut out = Vec::with_capacity(states.len());
        for (i, s) in states.into_iter().enumerate() {
            let fields = [s.refl_amp, s.refl_phase, s.refr_amp, s.refr_phase];
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidTable(format!("state {i} has a non-finite field")));
            }
            if !(0.0..=1.0).contains(&s.refl_amp) || !(0.0..=1.0).contains(&s.refr_amp) {
                return Err(Error::InvalidTable(format!(
                    "state {i} amplitudes must lie in [0, 1]"
                )));
            }
            let total = s.radiated_energy();
            if total > 1.0 + ENERGY_SLACK {
                return Err(Error::InsertionLoss { state: i, total });
            }
            out.push(ElementState::new(
                s.refl_amp,
                canonical_phase(s.refl_phase),
                s.refr_amp,
                canonical_phase(s.refr_phase),
            ));
        }
        Ok(Self { states: out })
    }

    /// Measured two-state response of the 3.6 GHz prototype element:
    /// state 0 is (OFF, OFF), state 1 is (ON, ON).
    pub fn prototype() -> Self {
        Self::new(vec![
            ElementState::from_degrees(0.46, 20.0, 0.58, 300.0),
            ElementState::from_degrees(0.55, 215.0, 0.81, 123.0),
        ])
        .expect("prototype table is valid")
    }

    /// Uniform `bits`-bit phase grid with a fixed reflect-minus-refract offset:
    /// reflection phase `s·π/2^(bits−1)`, refraction phase shifted by `−offset`.
    pub fn phase_grid(bits: u32, refl_amp: f64, refr_amp: f64, offset: f64) -> Result<Self> {
        let set = DiscretePhaseSet::new(bits)?;
        Self::new(
            set.phases()
                .iter()
                .map(|&p| ElementState::new(refl_amp, p, refr_amp, p - offset))
                .collect(),
        )
    }

    /// Parses the plain-text table format: one state per line,
    /// `refl_amp refl_phase_deg refr_amp refr_phase_deg`. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut states = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidTable(format!("line {}: {e}", lineno + 1)))?;
            let [ra, rp, ta, tp] = fields[..] else {
                return Err(Error::InvalidTable(format!(
                    "line {}: expected 4 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            };
            states.push(ElementState::from_degrees(ra, rp, ta, tp));
        }
        Self::new(states)
    }

    /// Inverse of [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        let mut out = String::from("# refl_amp refl_phase_deg refr_amp refr_phase_deg\n");
        for s in &self.states {
            out.push_str(&format!(
                "{} {} {} {}\n",
                s.refl_amp,
                s.refl_phase.to_degrees(),
                s.refr_amp,
                s.refr_phase.to_degrees()
            ));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[ElementState] {
        &self.states
    }

    pub fn state(&self, index: usize) -> Result<&ElementState> {
        self.states.get(index).ok_or(Error::StateIndex {
            index,
            len: self.states.len(),
        })
    }

    /// Complex response `amp·e^{j·phase}` of `state` on `side`.
    pub fn coefficient(&self, state: usize, side: Side) -> Result<C64> {
        Ok(self.state(state)?.coefficient(side))
    }

    /// Responses of every state on one side, indexed by state.
    pub fn coefficients(&self, side: Side) -> Vec<C64> {
        self.states.iter().map(|s| s.coefficient(side)).collect()
    }

    /// Reflective-only variant: refraction amplitudes set to zero.
    pub fn reflect_only(&self) -> Self {
        self.map(|s| ElementState { refr_amp: 0.0, ..s })
    }

    /// Refractive-only variant: reflection amplitudes set to zero.
    pub fn refract_only(&self) -> Self {
        self.map(|s| ElementState { refl_amp: 0.0, ..s })
    }

    /// Both sides switched off; the surface contributes nothing.
    pub fn switched_off(&self) -> Self {
        self.map(|s| ElementState {
            refl_amp: 0.0,
            refr_amp: 0.0,
            ..s
        })
    }

    // Zeroing amplitudes can only lower the radiated energy, so the bound holds.
    fn map(&self, f: impl Fn(ElementState) -> ElementState) -> Self {
        Self {
            states: self.states.iter().copied().map(f).collect(),
        }
    }

    /// Largest `|Γ_l|² + |Γ_r|²` over all states.
    pub fn max_radiated_energy(&self) -> f64 {
        self.states
            .iter()
            .map(ElementState::radiated_energy)
            .fold(0.0, f64::max)
    }

    /// Mean amplitude of one side across states.
    pub fn mean_amplitude(&self, side: Side) -> f64 {
        self.states.iter().map(|s| s.amplitude(side)).sum::<f64>() / self.len() as f64
    }
}

/// Summary of how well a table follows the omni-surface design rules.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignReport {
    /// `|refl_amp − refr_amp|` per state; small is better.
    pub amp_gap: Vec<f64>,
    /// Smallest pairwise `|θ_i − θ_j|` of reflection phases (canonical, unwrapped).
    pub phase_sep_refl: f64,
    /// Same for refraction phases.
    pub phase_sep_refr: f64,
    /// Per-state coupling constant `(θ_refr − θ_refl) mod 2π`.
    pub coupling_const: Vec<f64>,
    /// Per-state `|θ_refl − θ_refr| mod π`, the folded reflect/refract gap.
    pub coupling_gap: Vec<f64>,
}

pub fn validate_design_principles(table: &ElementStateTable) -> DesignReport {
    let states = table.states();
    let min_sep = |side: Side| {
        let mut best = f64::INFINITY;
        for (i, a) in states.iter().enumerate() {
            for b in &states[i + 1..] {
                best = best.min((a.phase(side) - b.phase(side)).abs());
            }
        }
        best
    };
    DesignReport {
        amp_gap: states
            .iter()
            .map(|s| (s.refl_amp - s.refr_amp).abs())
            .collect(),
        phase_sep_refl: min_sep(Side::Reflect),
        phase_sep_refr: min_sep(Side::Refract),
        coupling_const: states
            .iter()
            .map(|s| canonical_phase(s.refr_phase - s.refl_phase))
            .collect(),
        coupling_gap: states
            .iter()
            .map(|s| (s.refl_phase - s.refr_phase).abs() % PI)
            .collect(),
    }
}

/// Uniform grid of `2^bits` phases spaced `π/2^(bits−1)` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePhaseSet {
    bits: u32,
    phases: Vec<f64>,
}

impl DiscretePhaseSet {
    pub fn new(bits: u32) -> Result<Self> {
        if bits == 0 {
            return Err(Error::ZeroBits);
        }
        let n = 1usize << bits;
        let step = PI / (1u64 << (bits - 1)) as f64;
        Ok(Self {
            bits,
            phases: (0..n).map(|s| s as f64 * step).collect(),
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn spacing(&self) -> f64 {
        PI / (1u64 << (self.bits - 1)) as f64
    }
}

pub fn discrete_phase_set(bits: u32) -> Result<DiscretePhaseSet> {
    DiscretePhaseSet::new(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn prototype_coefficients() {
        let t = ElementStateTable::prototype();
        let off = t.coefficient(0, Side::Reflect).unwrap();
        assert!(close(off.norm(), 0.46, 1e-12));
        assert!(close(off.arg().to_degrees(), 20.0, 1e-9));
        let on = t.coefficient(1, Side::Refract).unwrap();
        assert!(close(on.norm(), 0.81, 1e-12));
        assert!(close(on.arg().to_degrees(), 123.0, 1e-9));
    }

    #[test]
    fn zero_amplitude_side_is_zero() {
        let t = ElementStateTable::prototype().reflect_only();
        for s in 0..t.len() {
            assert_eq!(t.coefficient(s, Side::Refract).unwrap(), C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn out_of_range_state() {
        let t = ElementStateTable::prototype();
        assert_eq!(
            t.coefficient(2, Side::Reflect),
            Err(Error::StateIndex { index: 2, len: 2 })
        );
    }

    #[test]
    fn rejects_energy_violation_and_short_tables() {
        let bad = ElementState::from_degrees(0.8, 0.0, 0.8, 0.0);
        let ok = ElementState::from_degrees(0.5, 0.0, 0.5, 0.0);
        assert!(matches!(
            ElementStateTable::new(vec![ok, bad]),
            Err(Error::InsertionLoss { state: 1, .. })
        ));
        assert!(ElementStateTable::new(vec![ok]).is_err());
        assert!(ElementStateTable::new(vec![ok, ElementState::new(f64::NAN, 0.0, 0.1, 0.0)]).is_err());
    }

    #[test]
    fn phases_are_canonical() {
        let t = ElementStateTable::new(vec![
            ElementState::new(0.5, -0.5, 0.5, 7.0),
            ElementState::new(0.5, -1e-300, 0.5, TAU),
        ])
        .unwrap();
        for s in t.states() {
            for p in [s.refl_phase, s.refr_phase] {
                assert!((0.0..TAU).contains(&p), "{p}");
            }
        }
    }

    #[test]
    fn design_report_prototype() {
        let r = validate_design_principles(&ElementStateTable::prototype());
        assert!(close(r.phase_sep_refl.to_degrees(), 195.0, 1e-9));
        assert!(close(r.phase_sep_refr.to_degrees(), 177.0, 1e-9));
        assert!(close(r.coupling_gap[0].to_degrees(), 100.0, 1e-9));
        assert!(close(r.coupling_gap[1].to_degrees(), 92.0, 1e-9));
        assert!(close(r.coupling_const[0].to_degrees(), 280.0, 1e-9));
        assert!(close(r.coupling_const[1].to_degrees(), 268.0, 1e-9));
        assert!(close(r.amp_gap[0], 0.12, 1e-12));
    }

    #[test]
    fn design_report_identical_states() {
        let s = ElementState::from_degrees(0.5, 40.0, 0.6, 10.0);
        let r = validate_design_principles(&ElementStateTable::new(vec![s, s]).unwrap());
        assert_eq!(r.phase_sep_refl, 0.0);
        assert_eq!(r.phase_sep_refr, 0.0);
    }

    #[test]
    fn phase_sets() {
        assert_eq!(discrete_phase_set(1).unwrap().phases(), &[0.0, PI]);
        let two = discrete_phase_set(2).unwrap();
        for (got, want) in two.phases().iter().zip([0.0, PI / 2.0, PI, 1.5 * PI]) {
            assert!(close(*got, want, 1e-15));
        }
        let three = discrete_phase_set(3).unwrap();
        assert_eq!(three.phases().len(), 8);
        for w in three.phases().windows(2) {
            assert!(close(w[1] - w[0], PI / 4.0, 1e-15));
        }
        assert_eq!(discrete_phase_set(0), Err(Error::ZeroBits));
    }

    #[test]
    fn text_format() {
        let t = ElementStateTable::parse("# comment\n0.46 20 0.58 300\n\n0.55 215 0.81 123\n").unwrap();
        assert_eq!(t, ElementStateTable::prototype());
        assert_eq!(ElementStateTable::parse(&t.to_text()).unwrap().len(), 2);
        assert!(ElementStateTable::parse("0.4 1 0.2\n0.1 1 1 1").is_err());
        assert!(ElementStateTable::parse("0.4 x 0.2 3\n0.1 1 1 1").is_err());
    }

    #[test]
    fn phase_grid_coupling() {
        let t = ElementStateTable::phase_grid(2, 0.6, 0.6, 100f64.to_radians()).unwrap();
        let r = validate_design_principles(&t);
        for c in r.coupling_const {
            assert!(close(c.to_degrees(), 260.0, 1e-9));
        }
    }
}
