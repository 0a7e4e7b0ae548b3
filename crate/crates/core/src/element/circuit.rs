//! Two-port equivalent circuit of a two-layer element.
//!
//! The element is modelled as the cascade
//!
//! ```text
//! shunt(Y_upper) · series(1/Ys1) · feed(Y_F, Ys2) · series(1/Ys1) · shunt(Y_lower)
//! ```
//!
//! where the feed-line section is the symmetric block
//! `[[1 + Y_F/Ys2, 1/Ys2], [2Y_F + Y_F²/Ys2, 1 + Y_F/Ys2]]`. Every factor has
//! unit determinant, so the cascade does too.
//!
//! The pattern and feed-line admittances are series-RLC branches in parallel;
//! the diode is a pluggable series branch whose impedance depends on its
//! bias state.

use std::f64::consts::TAU;
use std::ops::Mul;

use super::table::{ElementState, ElementStateTable};
use crate::{Error, Result, C64};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// A 2×2 transmission (ABCD) matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Abcd {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

impl Abcd {
    pub fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Self { a, b, c, d }
    }

    pub fn identity() -> Self {
        Self::new(ONE, ZERO, ZERO, ONE)
    }

    pub fn shunt(y: C64) -> Self {
        Self::new(ONE, ZERO, y, ONE)
    }

    pub fn series(z: C64) -> Self {
        Self::new(ONE, z, ZERO, ONE)
    }

    /// Symmetric feed-line block for feed admittance `y_f` and inter-layer
    /// coupling impedance `z_s2 = 1/Ys2`.
    pub fn feed(y_f: C64, z_s2: C64) -> Self {
        let diag = ONE + y_f * z_s2;
        Self::new(diag, z_s2, y_f * 2.0 + y_f * y_f * z_s2, diag)
    }

    pub fn det(&self) -> C64 {
        self.a * self.d - self.b * self.c
    }

    pub fn is_finite(&self) -> bool {
        [self.a, self.b, self.c, self.d].iter().all(|v| v.is_finite())
    }
}

impl Mul for Abcd {
    type Output = Abcd;

    fn mul(self, r: Abcd) -> Abcd {
        Abcd::new(
            self.a * r.a + self.b * r.c,
            self.a * r.b + self.b * r.d,
            self.c * r.a + self.d * r.c,
            self.c * r.b + self.d * r.d,
        )
    }
}

/// The five branch quantities that fully determine the cascade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementAdmittances {
    pub y_upper: C64,
    pub y_lower: C64,
    pub y_feed: C64,
    /// Substrate-metal coupling impedance `1/Ys1`.
    pub z_s1: C64,
    /// Inter-layer coupling impedance `1/Ys2`.
    pub z_s2: C64,
}

impl ElementAdmittances {
    pub fn cascade(&self) -> Abcd {
        Abcd::shunt(self.y_upper)
            * Abcd::series(self.z_s1)
            * Abcd::feed(self.y_feed, self.z_s2)
            * Abcd::series(self.z_s1)
            * Abcd::shunt(self.y_lower)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiodeState {
    Off,
    On,
}

/// Series resistance/inductance when forward biased, junction capacitance
/// when off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiodeModel {
    pub on_resistance: f64,
    pub on_inductance: f64,
    pub off_capacitance: f64,
}

impl DiodeModel {
    pub fn impedance(&self, state: DiodeState, omega: f64) -> C64 {
        match state {
            DiodeState::On => C64::new(self.on_resistance, omega * self.on_inductance),
            DiodeState::Off => C64::new(0.0, -1.0 / (omega * self.off_capacitance)),
        }
    }
}

/// Series RLC branch. A zero capacitance is read as "no capacitor"
/// (shorted), matching how datasheets leave the entry empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRlc {
    pub r: f64,
    pub l: f64,
    pub c: f64,
}

impl SeriesRlc {
    pub fn impedance(&self, omega: f64) -> C64 {
        let xc = if self.c > 0.0 { -1.0 / (omega * self.c) } else { 0.0 };
        C64::new(self.r, omega * self.l + xc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitParams {
    /// Metallic patch branch (R1, L1, C1).
    pub patch: SeriesRlc,
    /// Substrate-to-ground branch (R2, L2, C2).
    pub substrate: SeriesRlc,
    /// Feed line (R3, L3, C3).
    pub feed: SeriesRlc,
    pub ys1: C64,
    pub ys2: C64,
    pub diode: DiodeModel,
    pub z0: f64,
    pub d1: f64,
    pub d2: f64,
    pub beta: f64,
}

fn admittance(z: C64, what: &'static str) -> Result<C64> {
    let y = z.inv();
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::NonFiniteAdmittance(what))
    }
}

impl CircuitParams {
    /// A plausible 3.6 GHz parameter set; reactive values put the patch
    /// resonance near the carrier.
    pub fn reference() -> Self {
        let f0 = 3.6e9;
        Self {
            patch: SeriesRlc { r: 0.8, l: 2.1e-9, c: 0.45e-12 },
            substrate: SeriesRlc { r: 1.2, l: 3.4e-9, c: 0.9e-12 },
            feed: SeriesRlc { r: 0.5, l: 4.7e-9, c: 0.0 },
            ys1: C64::new(0.0, 2.0e-2),
            ys2: C64::new(0.0, 8.0e-3),
            diode: DiodeModel {
                on_resistance: 2.1,
                on_inductance: 0.45e-9,
                off_capacitance: 0.18e-12,
            },
            z0: 376.73,
            d1: 0.0,
            d2: 0.0,
            beta: TAU * f0 / crate::SPEED_OF_LIGHT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rs = [self.patch.r, self.substrate.r, self.feed.r, self.diode.on_resistance];
        if rs.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidTable("resistances must be non-negative".into()));
        }
        if !(self.z0 > 0.0) || !(self.beta > 0.0) {
            return Err(Error::InvalidTable("Z0 and beta must be positive".into()));
        }
        Ok(())
    }

    /// Every branch is purely reactive.
    pub fn is_lossless(&self) -> bool {
        self.patch.r == 0.0
            && self.substrate.r == 0.0
            && self.feed.r == 0.0
            && self.diode.on_resistance == 0.0
            && self.ys1.re == 0.0
            && self.ys2.re == 0.0
    }

    pub fn admittances(&self, diode: DiodeState, frequency: f64) -> Result<ElementAdmittances> {
        if !(frequency > 0.0) {
            return Err(Error::NonPositiveFrequency(frequency));
        }
        self.validate()?;
        let omega = TAU * frequency;
        let pattern = admittance(self.patch.impedance(omega), "patch branch")?
            + admittance(self.substrate.impedance(omega), "substrate branch")?
            + admittance(self.diode.impedance(diode, omega), "diode branch")?;
        let y_feed = admittance(self.feed.impedance(omega), "feed line")?;
        let z_s1 = admittance(self.ys1, "Ys1")?;
        let z_s2 = admittance(self.ys2, "Ys2")?;
        if !pattern.is_finite() {
            return Err(Error::NonFiniteAdmittance("metallic pattern"));
        }
        Ok(ElementAdmittances {
            y_upper: pattern,
            y_lower: pattern,
            y_feed,
            z_s1,
            z_s2,
        })
    }

    /// Generates a two-state table (state 0 = diodes off, state 1 = on).
    pub fn state_table(&self, frequency: f64) -> Result<ElementStateTable> {
        let states = [DiodeState::Off, DiodeState::On]
            .into_iter()
            .map(|d| {
                let m = abcd_matrix(self, d, frequency)?;
                let (refl, refr) = circuit_coefficients(&m, self.z0, self.d1, self.d2, self.beta)?;
                Ok(ElementState::from_coefficients(refl, refr))
            })
            .collect::<Result<Vec<_>>>()?;
        ElementStateTable::new(states)
    }
}

pub fn abcd_matrix(params: &CircuitParams, diode: DiodeState, frequency: f64) -> Result<Abcd> {
    let m = params.admittances(diode, frequency)?.cascade();
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::NonFiniteAdmittance("cascade"))
    }
}

/// Reflection and transmission coefficients of a two-port between matched
/// half-spaces of impedance `z0`, referred to planes `d1`/`d2` away from
/// the element faces.
pub fn circuit_coefficients(m: &Abcd, z0: f64, d1: f64, d2: f64, beta: f64) -> Result<(C64, C64)> {
    let front = m.a + m.b / z0;
    let back = (m.c + m.d / z0) * z0;
    let den = front + back;
    if !(den.norm() > 1e-300) || !den.is_finite() {
        return Err(Error::SingularNetwork);
    }
    let refl = (front - back) / den * C64::from_polar(1.0, -2.0 * beta * d1);
    let refr = C64::new(2.0, 0.0) / den * C64::from_polar(1.0, -beta * (d1 + d2));
    Ok((refl, refr))
}
