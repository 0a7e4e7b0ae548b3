//! Far-field beam patterns of the surface and their metrics.
//!
//! Directions are given by an azimuth `ψ` in the plane spanned by the column
//! axis and the normal, and an elevation `φ` toward the row axis. Azimuths in
//! `(0°, 180°)` lie on the transmitter's side of the surface (reflection),
//! those in `(180°, 360°)` on the far side (refraction).

use std::f64::consts::TAU;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::beamform::PhaseConfig;
use crate::channel::{
    effective_area_mask, hop_amplitude, radiation_gain, radiation_gain_toward, Scenario, Vec3,
};
use crate::element::Side;
use crate::{Error, Result, C64};

/// Unit vector toward `(ψ, φ)` in degrees, for transmitter `bs`'s side
/// convention.
pub fn direction(scenario: &Scenario, bs: usize, psi_deg: f64, phi_deg: f64) -> Vec3 {
    let (u, v) = scenario.surface_axes();
    let n = front_normal(scenario, bs);
    let (psi, phi) = (psi_deg.to_radians(), phi_deg.to_radians());
    (u * psi.cos() + n * psi.sin()) * phi.cos() + v * phi.sin()
}

/// Surface normal pointing toward transmitter `bs`.
fn front_normal(scenario: &Scenario, bs: usize) -> Vec3 {
    let n = scenario.ios.normal;
    if scenario.plane_offset(scenario.bs[bs].position) >= 0.0 {
        n
    } else {
        -n
    }
}

/// How observation points are placed.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum Observation {
    /// Plane-wave departure phases, by direction only.
    #[default]
    FarField,
    /// Exact spherical distances to a point at this range from the center.
    Range(f64),
}

/// Precomputed incident part of every element, for one transmitter.
struct Illumination {
    elems: Vec<Vec3>,
    /// `[m][k]`: incident amplitude and phase from antenna `k`, times
    /// `√G_in`, zero for masked elements.
    incident: Vec<Vec<C64>>,
    front: Vec3,
    normal: Vec3,
    center: Vec3,
    wavenumber: f64,
    exponent: f64,
}

impl Illumination {
    fn new(scenario: &Scenario, bs: usize) -> Self {
        let lambda = scenario.wavelength();
        let k = TAU / lambda;
        let elems = scenario.element_positions();
        let tx = scenario.bs_antenna_positions(bs);
        let mask = effective_area_mask(scenario, bs, scenario.bs[bs].beamwidth_deg.to_radians());
        let rows = scenario.row_mask();
        let tx_center = scenario.bs[bs].position;
        let normal = scenario.ios.normal;
        let p = scenario.radiation_exponent;
        let incident = elems
            .iter()
            .enumerate()
            .map(|(m, e)| {
                if !(mask[m] && rows[m]) {
                    return vec![C64::new(0.0, 0.0); tx.len()];
                }
                let g = radiation_gain_toward(*e, normal, tx_center, p).sqrt();
                tx.iter()
                    .map(|a| {
                        let d = (e - a).norm();
                        C64::from_polar(hop_amplitude(d, lambda) * g, -k * d)
                    })
                    .collect()
            })
            .collect();
        Self {
            elems,
            incident,
            front: front_normal(scenario, bs),
            normal,
            center: scenario.ios.center,
            wavenumber: k,
            exponent: p,
        }
    }

    fn side(&self, dir: &Vec3) -> Side {
        if dir.dot(&self.front) > 0.0 {
            Side::Reflect
        } else {
            Side::Refract
        }
    }

    /// Departure factor of element `m` toward `dir`, including `√G_out`.
    fn departure(&self, m: usize, dir: &Vec3, obs: Observation) -> C64 {
        let e = self.elems[m];
        match obs {
            Observation::FarField => {
                let cos = dir.dot(&self.normal).abs().min(1.0);
                let g = radiation_gain(cos.acos(), self.exponent).sqrt();
                C64::from_polar(g, self.wavenumber * (e - self.center).dot(dir))
            }
            Observation::Range(r) => {
                let p = self.center + dir * r;
                let d = (p - e).norm();
                let g = radiation_gain_toward(e, self.normal, p, self.exponent).sqrt();
                C64::from_polar(g * r / d, -self.wavenumber * (d - r))
            }
        }
    }

    /// Per-element contribution toward `dir`, summed over antennas with
    /// weights `v`, before the element coefficient.
    fn contributions(&self, dir: &Vec3, v: &DVector<C64>, obs: Observation) -> Vec<C64> {
        (0..self.elems.len())
            .map(|m| {
                let inc: C64 = self.incident[m].iter().zip(v.iter()).map(|(a, w)| a * w).sum();
                inc * self.departure(m, dir, obs)
            })
            .collect()
    }
}

/// Field toward `dir` excited through each antenna of transmitter `bs`.
///
/// Each element contributes its incident wave, its coefficient on the side
/// `dir` points to, the radiation gain for both angles, and the departure
/// phase toward `dir`.
pub fn element_field(
    scenario: &Scenario,
    bs: usize,
    config: &PhaseConfig,
    dir: Vec3,
    obs: Observation,
) -> Result<Vec<C64>> {
    let table = &scenario.ios.table;
    config.check(scenario.n_elements(), table)?;
    let dir = dir.normalize();
    if dir.dot(&scenario.ios.normal).abs() < 1e-12 {
        return Err(Error::InvalidScenario {
            key: "direction".into(),
            msg: "lies in the surface plane".into(),
        });
    }
    let ill = Illumination::new(scenario, bs);
    let coefs = table.coefficients(ill.side(&dir));
    let n_tx = scenario.bs[bs].n_antennas;
    let mut out = vec![C64::new(0.0, 0.0); n_tx];
    for (m, &s) in config.states().iter().enumerate() {
        let dep = ill.departure(m, &dir, obs) * coefs[s];
        for (k, a) in ill.incident[m].iter().enumerate() {
            out[k] += a * dep;
        }
    }
    Ok(out)
}

/// Sample directions, degrees, both strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    pub psi_deg: Vec<f64>,
    pub phi_deg: Vec<f64>,
}

impl AngleGrid {
    pub fn new(psi_deg: Vec<f64>, phi_deg: Vec<f64>) -> Result<Self> {
        let increasing = |v: &[f64]| !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&psi_deg) || !increasing(&phi_deg) {
            return Err(Error::InvalidScenario {
                key: "grid".into(),
                msg: "angles must be nonempty and strictly increasing".into(),
            });
        }
        Ok(Self { psi_deg, phi_deg })
    }

    /// Horizontal cut over the full circle at `step` degrees.
    pub fn azimuth_cut(step: f64) -> Result<Self> {
        let n = (360.0 / step).round() as usize;
        Self::new((0..n).map(|i| i as f64 * step).collect(), vec![0.0])
    }
}

/// Sampled linear power `F(ψ, φ)`, stored row-major over `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternGrid {
    pub psi_deg: Vec<f64>,
    pub phi_deg: Vec<f64>,
    pub power: Vec<f64>,
}

impl PatternGrid {
    pub fn at(&self, i_psi: usize, i_phi: usize) -> f64 {
        self.power[i_phi * self.psi_deg.len() + i_psi]
    }

    /// `psi_deg,phi_deg,power_db`, normalized to a 0 dB maximum.
    pub fn to_csv(&self) -> String {
        let max = self.power.iter().cloned().fold(0.0, f64::max);
        let mut out = String::from("psi_deg,phi_deg,power_db\n");
        for (j, phi) in self.phi_deg.iter().enumerate() {
            for (i, psi) in self.psi_deg.iter().enumerate() {
                let p = self.at(i, j);
                let db = if max > 0.0 { 10.0 * (p / max).log10() } else { f64::NEG_INFINITY };
                out.push_str(&format!("{psi},{phi},{db:.4}\n"));
            }
        }
        out
    }

    /// Grid restricted to azimuths in `[lo, hi]` degrees.
    pub fn sector(&self, lo: f64, hi: f64) -> PatternGrid {
        let keep: Vec<usize> = (0..self.psi_deg.len())
            .filter(|&i| self.psi_deg[i] >= lo && self.psi_deg[i] <= hi)
            .collect();
        let mut power = Vec::with_capacity(keep.len() * self.phi_deg.len());
        for j in 0..self.phi_deg.len() {
            power.extend(keep.iter().map(|&i| self.at(i, j)));
        }
        PatternGrid {
            psi_deg: keep.iter().map(|&i| self.psi_deg[i]).collect(),
            phi_deg: self.phi_deg.clone(),
            power,
        }
    }

    /// Azimuth and elevation of the largest sample; ties go to the lowest
    /// azimuth, then the lowest elevation.
    pub fn argmax(&self) -> (f64, f64) {
        let (i, j) = self.argmax_index();
        (self.psi_deg[i], self.phi_deg[j])
    }

    fn argmax_index(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for i in 0..self.psi_deg.len() {
            for j in 0..self.phi_deg.len() {
                if self.at(i, j) > self.at(best.0, best.1) {
                    best = (i, j);
                }
            }
        }
        best
    }
}

/// `F(ψ, φ) = |Σ_k E_k v_k|²` over `grid`, for transmitter `bs`.
pub fn beam_pattern(
    scenario: &Scenario,
    bs: usize,
    config: &PhaseConfig,
    v: &DVector<C64>,
    grid: &AngleGrid,
    obs: Observation,
) -> Result<PatternGrid> {
    let table = &scenario.ios.table;
    config.check(scenario.n_elements(), table)?;
    if v.len() != scenario.bs[bs].n_antennas {
        return Err(Error::DimensionMismatch {
            what: "transmit weights",
            expected: scenario.bs[bs].n_antennas,
            got: v.len(),
        });
    }
    let ill = Illumination::new(scenario, bs);
    let coefs = [table.coefficients(Side::Reflect), table.coefficients(Side::Refract)];
    let points: Vec<(f64, f64)> = grid
        .phi_deg
        .iter()
        .flat_map(|&phi| grid.psi_deg.iter().map(move |&psi| (psi, phi)))
        .collect();
    let power = points
        .par_iter()
        .map(|&(psi, phi)| {
            let dir = direction(scenario, bs, psi, phi);
            if dir.dot(&ill.normal).abs() < 1e-12 {
                return 0.0;
            }
            let c = &coefs[(ill.side(&dir) == Side::Refract) as usize];
            let contrib = ill.contributions(&dir, v, obs);
            let f: C64 = config.states().iter().zip(&contrib).map(|(&s, a)| a * c[s]).sum();
            f.norm_sqr()
        })
        .collect();
    Ok(PatternGrid {
        psi_deg: grid.psi_deg.clone(),
        phi_deg: grid.phi_deg.clone(),
        power,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternMetrics {
    pub main_lobe_deg: f64,
    pub main_lobe_phi_deg: f64,
    /// Width of the contiguous run of azimuth samples at or above half the
    /// peak, in samples times the grid step.
    pub hpbw_deg: f64,
    /// Largest other local maximum relative to the main lobe; `-inf` when
    /// the cut has no other lobe.
    pub sll_db: f64,
}

/// Main lobe, half-power beamwidth and sidelobe level of the azimuth cut
/// through the peak.
pub fn pattern_metrics(grid: &PatternGrid) -> Result<PatternMetrics> {
    let max = grid.power.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = grid.power.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > min) {
        return Err(Error::FlatPattern);
    }
    let (i0, j0) = grid.argmax_index();
    let n = grid.psi_deg.len();
    let cut: Vec<f64> = (0..n).map(|i| grid.at(i, j0)).collect();
    let step = if n > 1 {
        (grid.psi_deg[n - 1] - grid.psi_deg[0]) / (n - 1) as f64
    } else {
        0.0
    };

    let half = max / 2.0;
    let (mut lo, mut hi) = (i0, i0);
    while lo > 0 && cut[lo - 1] >= half {
        lo -= 1;
    }
    while hi + 1 < n && cut[hi + 1] >= half {
        hi += 1;
    }
    let hpbw_deg = (hi - lo + 1) as f64 * step;

    // The main lobe extends down both flanks to the first rise.
    let (mut a, mut b) = (i0, i0);
    while a > 0 && cut[a - 1] <= cut[a] {
        a -= 1;
    }
    while b + 1 < n && cut[b + 1] <= cut[b] {
        b += 1;
    }
    let side = (0..n)
        .filter(|&i| i < a || i > b)
        .filter(|&i| (i == 0 || cut[i - 1] <= cut[i]) && (i + 1 == n || cut[i + 1] <= cut[i]))
        .map(|i| cut[i])
        .fold(0.0, f64::max);
    let sll_db = if side > 0.0 { 10.0 * (side / max).log10() } else { f64::NEG_INFINITY };

    Ok(PatternMetrics {
        main_lobe_deg: grid.psi_deg[i0],
        main_lobe_phi_deg: grid.phi_deg[j0],
        hpbw_deg,
        sll_db,
    })
}

/// Coordinate ascent over element states maximizing the field toward
/// `(ψ, φ)` in degrees, with transmit weights `v`.
///
/// Starts from the state whose coefficient best co-phases each element, then
/// sweeps until no single switch raises the target power.
pub fn steer(
    scenario: &Scenario,
    bs: usize,
    v: &DVector<C64>,
    psi_deg: f64,
    phi_deg: f64,
    obs: Observation,
) -> Result<PhaseConfig> {
    let table = &scenario.ios.table;
    let dir = direction(scenario, bs, psi_deg, phi_deg);
    if dir.dot(&scenario.ios.normal).abs() < 1e-12 {
        return Err(Error::InvalidScenario {
            key: "target".into(),
            msg: "lies in the surface plane".into(),
        });
    }
    let ill = Illumination::new(scenario, bs);
    let coefs = table.coefficients(ill.side(&dir));
    let contrib = ill.contributions(&dir, v, obs);
    Ok(PhaseConfig::new(ascend_field(&contrib, &coefs)))
}

fn ascend_field(contrib: &[C64], coefs: &[C64]) -> Vec<usize> {
    let mut states: Vec<usize> = contrib
        .iter()
        .map(|a| {
            (0..coefs.len())
                .max_by(|&x, &y| (a * coefs[x]).re.total_cmp(&(a * coefs[y]).re).then(y.cmp(&x)))
                .unwrap_or(0)
        })
        .collect();
    let mut field: C64 = states.iter().zip(contrib).map(|(&s, a)| a * coefs[s]).sum();
    for _ in 0..64 {
        let mut changed = false;
        for (m, a) in contrib.iter().enumerate() {
            let rest = field - a * coefs[states[m]];
            let mut best = (states[m], field.norm_sqr());
            for (s, c) in coefs.iter().enumerate() {
                let p = (rest + a * c).norm_sqr();
                if p > best.1 * (1.0 + 1e-12) {
                    best = (s, p);
                }
            }
            if best.0 != states[m] {
                states[m] = best.0;
                field = rest + a * coefs[best.0];
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{BaseStation, PathlossMode, Surface, TableSource};
    use crate::element::{ElementState, ElementStateTable};

    fn layout(rows: usize, cols: usize, n_tx: usize, table: ElementStateTable) -> Scenario {
        let lambda = crate::SPEED_OF_LIGHT / 3.6e9;
        Scenario {
            bs: vec![BaseStation {
                position: Vec3::new(1.5, 0.4, 0.0),
                n_antennas: n_tx,
                antenna_spacing: lambda / 2.0,
                tx_power: 1.0,
                beamwidth_deg: 360.0,
                array_axis: None,
            }],
            ios: Surface {
                center: Vec3::zeros(),
                normal: Vec3::x(),
                rows,
                cols,
                row_pitch: lambda / 2.0,
                col_pitch: lambda / 2.0,
                table,
                table_source: TableSource::Prototype,
                active_rows: None,
            },
            users: vec![],
            carrier_hz: 3.6e9,
            noise_power: 1e-12,
            kappa: 4.0,
            radiation_exponent: 3.0,
            pathloss_mode: PathlossMode::Scatter,
            wall_loss_db: 0.0,
        }
    }

    #[test]
    fn directions_follow_side_convention() {
        let s = layout(1, 1, 1, ElementStateTable::prototype());
        assert!(direction(&s, 0, 90.0, 0.0).dot(&Vec3::x()) > 0.999);
        assert!(direction(&s, 0, 270.0, 0.0).dot(&Vec3::x()) < -0.999);
        assert!(direction(&s, 0, 0.0, 90.0).dot(&Vec3::z()) > 0.999);
    }

    #[test]
    fn single_element_field() {
        let s = layout(1, 1, 1, ElementStateTable::prototype());
        let lambda = s.wavelength();
        for (psi, side) in [(60.0, Side::Reflect), (250.0, Side::Refract)] {
            let dir = direction(&s, 0, psi, 0.0);
            let e = element_field(&s, 0, &PhaseConfig::uniform(1, 1), dir, Observation::FarField).unwrap();
            let tx = s.bs[0].position;
            let inc = lambda / (4.0 * std::f64::consts::PI * tx.norm());
            let g_in = radiation_gain((tx.x / tx.norm()).acos(), 3.0);
            let g_out = radiation_gain(dir.x.abs().acos(), 3.0);
            let expect = inc * s.ios.table.states()[1].amplitude(side) * (g_in * g_out).sqrt();
            assert!((e[0].norm() - expect).abs() < 1e-15 * expect.max(1.0));
        }
    }

    #[test]
    fn zero_amplitude_side_is_dark() {
        let t = ElementStateTable::prototype().refract_only();
        let s = layout(2, 4, 2, t);
        let cfg = PhaseConfig::new(vec![0, 1, 1, 0, 1, 0, 0, 1]);
        let grid = AngleGrid::azimuth_cut(5.0).unwrap();
        let f = beam_pattern(&s, 0, &cfg, &DVector::from_element(2, C64::new(1.0, 0.0)), &grid, Observation::FarField).unwrap();
        for (i, psi) in grid.psi_deg.iter().enumerate() {
            if *psi < 180.0 {
                assert_eq!(f.at(i, 0), 0.0);
            }
        }
        assert!(f.power.iter().any(|&p| p > 0.0));
    }

    #[test]
    fn global_phase_invariance() {
        let s = layout(2, 6, 2, ElementStateTable::prototype());
        let cfg = PhaseConfig::new((0..12).map(|m| m % 2).collect());
        let grid = AngleGrid::new(vec![30.0, 100.0, 200.0, 300.0], vec![-10.0, 0.0, 20.0]).unwrap();
        let v = DVector::from_vec(vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.7)]);
        let a = beam_pattern(&s, 0, &cfg, &v, &grid, Observation::FarField).unwrap();
        let b = beam_pattern(&s, 0, &cfg, &(v * C64::from_polar(1.0, 1.234)), &grid, Observation::FarField).unwrap();
        for (x, y) in a.power.iter().zip(&b.power) {
            assert!(x >= &0.0);
            assert!((x - y).abs() <= 1e-12 * x.max(1e-300));
        }
    }

    #[test]
    fn delta_and_twin_lobes() {
        let mut power = vec![0.0; 10];
        power[4] = 1.0;
        let g = PatternGrid { psi_deg: (0..10).map(|i| i as f64 * 2.0).collect(), phi_deg: vec![0.0], power };
        let m = pattern_metrics(&g).unwrap();
        assert_eq!(m.hpbw_deg, 2.0);
        assert_eq!(m.main_lobe_deg, 8.0);
        assert_eq!(m.sll_db, f64::NEG_INFINITY);

        let power = vec![0.0, 1.0, 0.2, 0.0, 1.0, 0.1];
        let g = PatternGrid { psi_deg: (0..6).map(|i| i as f64).collect(), phi_deg: vec![0.0], power };
        let m = pattern_metrics(&g).unwrap();
        assert_eq!(m.main_lobe_deg, 1.0);
        assert_eq!(m.sll_db, 0.0);
    }

    #[test]
    fn flat_pattern_is_an_error() {
        let g = PatternGrid { psi_deg: vec![0.0, 1.0], phi_deg: vec![0.0], power: vec![3.0, 3.0] };
        assert_eq!(pattern_metrics(&g), Err(Error::FlatPattern));
    }

    #[test]
    fn csv_is_normalized() {
        let g = PatternGrid { psi_deg: vec![0.0, 1.0], phi_deg: vec![0.0], power: vec![2.0, 0.2] };
        let csv = g.to_csv();
        assert_eq!(csv, "psi_deg,phi_deg,power_db\n0,0,0.0000\n1,0,-10.0000\n");
    }

    #[test]
    fn ascent_reaches_a_local_optimum() {
        let t = ElementStateTable::new(vec![
            ElementState::from_degrees(0.6, 0.0, 0.6, 90.0),
            ElementState::from_degrees(0.6, 120.0, 0.6, 210.0),
            ElementState::from_degrees(0.6, 240.0, 0.6, 330.0),
        ])
        .unwrap();
        let contrib: Vec<C64> = (0..20).map(|m| C64::from_polar(1.0 + m as f64 * 0.1, m as f64 * 0.7)).collect();
        let coefs = t.coefficients(Side::Reflect);
        let states = ascend_field(&contrib, &coefs);
        let power = |st: &[usize]| st.iter().zip(&contrib).map(|(&s, a)| a * coefs[s]).sum::<C64>().norm_sqr();
        let p = power(&states);
        for m in 0..20 {
            for s in 0..3 {
                let mut alt = states.clone();
                alt[m] = s;
                assert!(power(&alt) <= p * (1.0 + 1e-9));
            }
        }
    }
}
