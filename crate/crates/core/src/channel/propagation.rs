use std::f64::consts::{FRAC_PI_2, PI};

use super::scenario::{PathlossMode, Scenario, Vec3};
use crate::{Error, Result};

/// Normalized power radiation pattern `|cos φ|^exponent` of an element,
/// zero at or beyond grazing incidence.
pub fn radiation_gain(angle: f64, exponent: f64) -> f64 {
    if angle.abs() >= FRAC_PI_2 {
        return 0.0;
    }
    angle.cos().abs().powf(exponent)
}

/// Radiation gain toward `p` from an element at `elem` on a surface with unit
/// normal `normal`, for either half-space.
pub fn radiation_gain_toward(elem: Vec3, normal: Vec3, p: Vec3, exponent: f64) -> f64 {
    let d = p - elem;
    let cos = (d.dot(&normal) / d.norm()).abs().min(1.0);
    radiation_gain(cos.acos(), exponent)
}

/// Amplitude attenuation of a transmitter–surface–receiver path.
///
/// Scatter mode multiplies two free-space hops, `(λ/4π)²/(d1·d2)`; lens mode
/// treats the path as one unfolded hop, `(λ/4π)/(d1+d2)`.
pub fn path_loss(mode: PathlossMode, d1: f64, d2: f64, wavelength: f64) -> Result<f64> {
    if !(d1 > 0.0) || !(d2 > 0.0) {
        return Err(Error::NonPositiveDistance { d1, d2 });
    }
    let r = wavelength / (4.0 * PI);
    Ok(match mode {
        PathlossMode::Scatter => r * r / (d1 * d2),
        PathlossMode::Lens => r / (d1 + d2),
    })
}

/// Free-space amplitude of a single hop, `(λ/4π)/d`.
pub fn hop_amplitude(d: f64, wavelength: f64) -> f64 {
    wavelength / (4.0 * PI * d)
}

/// Far-field boundary `2L²/λ` of an aperture with largest dimension `size`.
pub fn rayleigh_distance(size: f64, wavelength: f64) -> f64 {
    2.0 * size * size / wavelength
}

/// Relative focal-spot area `λ²(1 + 4(z/L)²)` at distance `z` behind an
/// aperture of size `L`.
pub fn near_field_spot_area(z: f64, size: f64, wavelength: f64) -> f64 {
    wavelength * wavelength * (1.0 + 4.0 * (z / size).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRegion {
    Near,
    Boundary,
    Far,
}

pub fn classify_field(z: f64, size: f64, wavelength: f64) -> FieldRegion {
    let r = rayleigh_distance(size, wavelength);
    if (z - r).abs() <= 1e-9 * r {
        FieldRegion::Boundary
    } else if z < r {
        FieldRegion::Near
    } else {
        FieldRegion::Far
    }
}

/// Elements illuminated by transmitter `bs`'s main lobe.
///
/// When the transmitter is farther than `2η/λ` (η the border length) the
/// whole surface is lit. Otherwise an element is lit when it lies inside the
/// cone of half-angle `beamwidth/2` around the axis from the transmitter to
/// the surface center; the cone meets the plane in the elliptical footprint.
pub fn effective_area_mask(scenario: &Scenario, bs: usize, beamwidth: f64) -> Vec<bool> {
    let tx = scenario.bs[bs].position;
    let axis = scenario.ios.center - tx;
    let d1 = axis.norm();
    let elems = scenario.element_positions();
    if d1 > 2.0 * scenario.border_length() / scenario.wavelength() {
        return vec![true; elems.len()];
    }
    let half = beamwidth / 2.0;
    let axis = axis / d1;
    elems
        .iter()
        .map(|e| {
            let d = e - tx;
            let cos = (d.dot(&axis) / d.norm()).clamp(-1.0, 1.0);
            cos.acos() <= half + 1e-12
        })
        .collect()
}
