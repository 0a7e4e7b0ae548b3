use std::f64::consts::{PI, TAU};

use nalgebra::{DVector, Vector3};
use omnisurf::beamform::PhaseConfig;
use omnisurf::channel::Scenario;
use omnisurf::element::Side;
use omnisurf::pattern::*;
use omnisurf::{harness, Error, C64};

fn panel() -> Scenario {
    harness::canonical("pattern").unwrap()
}

fn one() -> DVector<C64> {
    DVector::from_element(1, C64::new(1.0, 0.0))
}

/// Far-field power toward `(ψ, φ)` summed element by element, with every
/// element lit: spherical incidence from the single feed, `|cos|^p` gains
/// and plane-wave departure phases.
fn field_oracle(s: &Scenario, states: &[usize], psi: f64, phi: f64) -> f64 {
    let lambda = s.wavelength();
    let k = TAU / lambda;
    let n = s.ios.normal;
    let u = Vector3::z().cross(&n).normalize();
    let v = n.cross(&u);
    let (psi, phi) = (psi.to_radians(), phi.to_radians());
    let dir = (u * psi.cos() + n * psi.sin()) * phi.cos() + v * phi.sin();
    let side = if dir.dot(&n) > 0.0 { Side::Reflect } else { Side::Refract };
    let p = s.radiation_exponent;
    let feed = s.bs[0].position;
    let mut f = C64::new(0.0, 0.0);
    for (m, e) in s.element_positions().iter().enumerate() {
        let r = m / s.ios.cols;
        if let Some((lo, hi)) = s.ios.active_rows {
            if r < lo || r >= hi {
                continue;
            }
        }
        let d = (feed - e).norm();
        let gin = ((feed - e).dot(&n) / d).abs().powf(p);
        let gout = dir.dot(&n).abs().powf(p);
        let q = s.ios.table.coefficient(states[m], side).unwrap();
        let inc = C64::from_polar(lambda / (4.0 * PI * d), -k * d);
        f += inc * q * (gin * gout).sqrt() * C64::from_polar(1.0, k * (e - s.ios.center).dot(&dir));
    }
    f.norm_sqr()
}

#[test]
fn pattern_matches_element_sum() {
    let mut s = panel();
    s.bs[0].beamwidth_deg = 179.0;
    let states: Vec<usize> = (0..s.n_elements()).map(|m| (m * 5 + m / 7) % 4).collect();
    let grid = AngleGrid::new(vec![20.0, 75.0, 130.0, 200.0, 300.0], vec![-10.0, 0.0, 25.0]).unwrap();
    let got = beam_pattern(&s, 0, &PhaseConfig::new(states.clone()), &one(), &grid, Observation::FarField).unwrap();
    for (j, &phi) in grid.phi_deg.iter().enumerate() {
        for (i, &psi) in grid.psi_deg.iter().enumerate() {
            let want = field_oracle(&s, &states, psi, phi);
            assert!((got.at(i, j) - want).abs() < 1e-9 * want, "({psi}, {phi}): {} vs {want}", got.at(i, j));
        }
    }
    let e = element_field(&s, 0, &PhaseConfig::new(states.clone()), direction(&s, 0, 75.0, 25.0), Observation::FarField)
        .unwrap();
    assert!((e[0].norm_sqr() - field_oracle(&s, &states, 75.0, 25.0)).abs() < 1e-9 * e[0].norm_sqr());
}

#[test]
fn beamwidth_follows_the_aperture() {
    let mut s = panel();
    s.bs[0].beamwidth_deg = 179.0;
    let cfg = steer(&s, 0, &one(), 90.0, 0.0, Observation::FarField).unwrap();
    let grid = AngleGrid::new((0..=1800).map(|i| i as f64 * 0.1).collect(), vec![0.0]).unwrap();
    let pat = beam_pattern(&s, 0, &cfg, &one(), &grid, Observation::FarField).unwrap();
    let m = pattern_metrics(&pat.sector(1.0, 179.0)).unwrap();
    let aperture = s.ios.cols as f64 * s.ios.col_pitch;
    let want = (0.886 * s.wavelength() / aperture).to_degrees();
    assert!((m.main_lobe_deg - 90.0).abs() <= 1.0, "{m:?}");
    // The feed tapers the illumination, which widens the beam a little.
    assert!(m.hpbw_deg >= 0.95 * want && m.hpbw_deg <= 1.4 * want, "{} vs {want}", m.hpbw_deg);
}

#[test]
fn steering_hits_both_sides() {
    let s = panel();
    let grid = AngleGrid::azimuth_cut(0.5).unwrap();
    for target in [60.0, 110.0, 240.0, 290.0] {
        let cfg = steer(&s, 0, &one(), target, 0.0, Observation::FarField).unwrap();
        let pat = beam_pattern(&s, 0, &cfg, &one(), &grid, Observation::FarField).unwrap();
        let (lo, hi) = if target < 180.0 { (1.0, 179.0) } else { (181.0, 359.0) };
        let m = pattern_metrics(&pat.sector(lo, hi)).unwrap();
        assert!((m.main_lobe_deg - target).abs() <= 3.0, "target {target}: {m:?}");
    }
}

#[test]
fn metrics_of_a_synthetic_cut() {
    // Two-sided sinc²: main lobe at 50°, first sidelobes near -13.3 dB.
    let psi: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.1).collect();
    let power = psi
        .iter()
        .map(|p| {
            let x = (p - 50.0) / 5.0 * PI;
            if x == 0.0 { 1.0 } else { (x.sin() / x).powi(2) }
        })
        .collect();
    let grid = PatternGrid { psi_deg: psi, phi_deg: vec![0.0], power };
    let m = pattern_metrics(&grid).unwrap();
    assert_eq!(m.main_lobe_deg, 50.0);
    // Half-power points of sinc² are at ±0.4429 of the null spacing.
    assert!((m.hpbw_deg - 2.0 * 0.4429 * 5.0).abs() <= 0.2, "{}", m.hpbw_deg);
    assert!((m.sll_db + 13.26).abs() < 0.05, "{}", m.sll_db);
    let flat = PatternGrid { psi_deg: vec![0.0, 1.0], phi_deg: vec![0.0], power: vec![1.0, 1.0] };
    assert!(matches!(pattern_metrics(&flat), Err(Error::FlatPattern)));
}

#[test]
fn grid_and_csv() {
    assert!(AngleGrid::new(vec![1.0, 1.0], vec![0.0]).is_err());
    assert!(AngleGrid::new(vec![], vec![0.0]).is_err());
    assert_eq!(AngleGrid::azimuth_cut(1.0).unwrap().psi_deg.len(), 360);
    let grid = PatternGrid { psi_deg: vec![0.0, 1.0], phi_deg: vec![0.0], power: vec![1.0, 0.1] };
    assert_eq!(grid.to_csv(), "psi_deg,phi_deg,power_db\n0,0,0.0000\n1,0,-10.0000\n");
}

#[test]
fn bad_inputs() {
    let s = panel();
    let cfg = PhaseConfig::uniform(s.n_elements(), 0);
    let grid = AngleGrid::azimuth_cut(10.0).unwrap();
    let two = DVector::from_element(2, C64::new(1.0, 0.0));
    assert!(matches!(
        beam_pattern(&s, 0, &cfg, &two, &grid, Observation::FarField),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(steer(&s, 0, &one(), 0.0, 0.0, Observation::FarField).is_err());
    assert!(beam_pattern(&s, 0, &PhaseConfig::uniform(3, 0), &one(), &grid, Observation::FarField).is_err());
}
