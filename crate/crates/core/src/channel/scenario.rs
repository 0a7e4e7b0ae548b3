use nalgebra::Vector3;

use crate::element::{ElementStateTable, Side};
use crate::{Error, Result, SPEED_OF_LIGHT};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathlossMode {
    /// Elements act as independent scatterers; power falls as `1/(d1·d2)²`.
    Scatter,
    /// The surface acts as a flat lens; power falls as `1/(d1+d2)²`.
    Lens,
}

/// Where the element table came from, kept so a scenario can be written
/// back out exactly as it was read.
#[derive(Debug, Clone, PartialEq)]
pub enum TableSource {
    Prototype,
    /// Rows of `[refl_amp, refl_deg, refr_amp, refr_deg]`.
    Inline(Vec<[f64; 4]>),
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseStation {
    pub position: Vec3,
    pub n_antennas: usize,
    /// Uniform linear array spacing in meters.
    pub antenna_spacing: f64,
    pub tx_power: f64,
    /// Main-lobe width used for the effective-area mask, in degrees.
    pub beamwidth_deg: f64,
    /// Array axis; `None` picks the horizontal direction perpendicular to the
    /// line toward the surface.
    pub array_axis: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub center: Vec3,
    /// Unit normal. Together with the transmitter position it decides which
    /// half-space is the reflection side.
    pub normal: Vec3,
    pub rows: usize,
    pub cols: usize,
    pub row_pitch: f64,
    pub col_pitch: f64,
    pub table: ElementStateTable,
    pub table_source: TableSource,
    /// Half-open range of rows left uncovered; all rows when `None`.
    pub active_rows: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub position: Vec3,
    pub n_antennas: usize,
    pub direct_blocked: bool,
    /// Serving access point index (multi-cell scenarios).
    pub cell: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Transmitters; single-cell scenarios have exactly one.
    pub bs: Vec<BaseStation>,
    pub ios: Surface,
    pub users: Vec<User>,
    pub carrier_hz: f64,
    pub noise_power: f64,
    pub kappa: f64,
    pub radiation_exponent: f64,
    pub pathloss_mode: PathlossMode,
    /// Penetration loss of the wall the surface sits in, applied to direct
    /// links between points on opposite sides of the surface plane. `0`
    /// means no wall; infinity blocks such links.
    pub wall_loss_db: f64,
}

fn invalid(key: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::InvalidScenario {
        key: key.into(),
        msg: msg.into(),
    }
}

impl Scenario {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn n_elements(&self) -> usize {
        self.ios.rows * self.ios.cols
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz > 0.0) || !self.carrier_hz.is_finite() {
            return Err(invalid("carrier_hz", "must be positive"));
        }
        if !(self.kappa >= 0.0) {
            return Err(invalid("kappa", "must be non-negative"));
        }
        if !(self.noise_power > 0.0) {
            return Err(invalid("noise_power_w", "must be positive"));
        }
        if !(self.radiation_exponent >= 0.0) {
            return Err(invalid("radiation_exponent", "must be non-negative"));
        }
        if self.bs.is_empty() {
            return Err(invalid("bs", "at least one transmitter is required"));
        }
        let ios = &self.ios;
        if ios.rows == 0 || ios.cols == 0 {
            return Err(invalid("ios.rows", "surface needs at least one element"));
        }
        if !(ios.row_pitch > 0.0) || !(ios.col_pitch > 0.0) {
            return Err(invalid("ios.pitch", "must be positive"));
        }
        if !(ios.normal.norm() > 0.0) || (ios.normal.norm() - 1.0).abs() > 1e-9 {
            return Err(invalid("ios.normal", "must be a unit vector"));
        }
        if let Some((a, b)) = ios.active_rows {
            if a >= b || b > ios.rows {
                return Err(invalid("ios.active_rows", "must be a non-empty range within rows"));
            }
        }
        for (i, bs) in self.bs.iter().enumerate() {
            let key = |f: &str| format!("bs[{i}].{f}");
            if bs.n_antennas == 0 {
                return Err(invalid(key("n_antennas"), "must be at least 1"));
            }
            if !(bs.antenna_spacing > 0.0) {
                return Err(invalid(key("antenna_spacing"), "must be positive"));
            }
            if !(bs.tx_power > 0.0) {
                return Err(invalid(key("tx_power_w"), "must be positive"));
            }
            if !(bs.beamwidth_deg > 0.0 && bs.beamwidth_deg <= 360.0) {
                return Err(invalid(key("beamwidth_deg"), "must be in (0, 360]"));
            }
            if self.plane_offset(bs.position).abs() < 1e-12 {
                return Err(invalid(key("position"), "transmitter lies on the surface plane"));
            }
        }
        for (i, u) in self.users.iter().enumerate() {
            if self.plane_offset(u.position).abs() < 1e-12 {
                return Err(invalid(
                    format!("users[{i}].position"),
                    "user lies on the surface plane",
                ));
            }
            if u.n_antennas == 0 {
                return Err(invalid(format!("users[{i}].n_antennas"), "must be at least 1"));
            }
            if u.cell >= self.bs.len() {
                return Err(invalid(
                    format!("users[{i}].cell"),
                    format!("no access point {}", u.cell),
                ));
            }
        }
        Ok(())
    }

    /// Signed distance of `p` from the surface plane along the normal.
    pub fn plane_offset(&self, p: Vec3) -> f64 {
        (p - self.ios.center).dot(&self.ios.normal)
    }

    /// Side of `p` as seen from transmitter `bs`: reflection if both lie on
    /// the same side of the plane.
    pub fn side_from(&self, bs: usize, p: Vec3) -> Side {
        let tx = self.plane_offset(self.bs[bs].position);
        if tx.signum() == self.plane_offset(p).signum() {
            Side::Reflect
        } else {
            Side::Refract
        }
    }

    /// In-plane unit axes `(col_axis, row_axis)`; columns run horizontally.
    pub fn surface_axes(&self) -> (Vec3, Vec3) {
        let n = self.ios.normal;
        let up = Vec3::z();
        let u = up.cross(&n);
        let u = if u.norm() > 1e-9 { u.normalize() } else { Vec3::x() };
        let v = n.cross(&u);
        (u, v)
    }

    /// Element centers in row-major order, row 0 at the top.
    pub fn element_positions(&self) -> Vec<Vec3> {
        let (u, v) = self.surface_axes();
        let ios = &self.ios;
        let c0 = (ios.cols as f64 - 1.0) / 2.0;
        let r0 = (ios.rows as f64 - 1.0) / 2.0;
        let mut out = Vec::with_capacity(self.n_elements());
        for r in 0..ios.rows {
            for c in 0..ios.cols {
                out.push(
                    ios.center
                        + u * ((c as f64 - c0) * ios.col_pitch)
                        + v * ((r0 - r as f64) * ios.row_pitch),
                );
            }
        }
        out
    }

    /// Per-element coordinate along the column axis, relative to the center.
    pub fn element_col_offsets(&self) -> Vec<f64> {
        let (u, _) = self.surface_axes();
        self.element_positions()
            .iter()
            .map(|p| (p - self.ios.center).dot(&u))
            .collect()
    }

    /// Rows not covered by absorber.
    pub fn row_mask(&self) -> Vec<bool> {
        let (a, b) = self.ios.active_rows.unwrap_or((0, self.ios.rows));
        (0..self.ios.rows)
            .flat_map(|r| std::iter::repeat((a..b).contains(&r)).take(self.ios.cols))
            .collect()
    }

    /// Longest edge of the surface.
    pub fn border_length(&self) -> f64 {
        (self.ios.rows as f64 * self.ios.row_pitch).max(self.ios.cols as f64 * self.ios.col_pitch)
    }

    /// Largest dimension (diagonal) of the surface.
    pub fn largest_dimension(&self) -> f64 {
        let h = self.ios.rows as f64 * self.ios.row_pitch;
        let w = self.ios.cols as f64 * self.ios.col_pitch;
        h.hypot(w)
    }

    /// Antenna positions of transmitter `bs`, centered on its position.
    pub fn bs_antenna_positions(&self, bs: usize) -> Vec<Vec3> {
        let b = &self.bs[bs];
        let axis = b.array_axis.map(|a| a.normalize()).unwrap_or_else(|| {
            let a = Vec3::z().cross(&(self.ios.center - b.position));
            if a.norm() > 1e-9 {
                a.normalize()
            } else {
                Vec3::y()
            }
        });
        ula(b.position, axis, b.n_antennas, b.antenna_spacing)
    }

    /// Receive antennas of user `k`: a half-wavelength ULA perpendicular to the
    /// line toward the surface.
    pub fn user_antenna_positions(&self, k: usize) -> Vec<Vec3> {
        let u = &self.users[k];
        let a = Vec3::z().cross(&(self.ios.center - u.position));
        let axis = if a.norm() > 1e-9 { a.normalize() } else { Vec3::y() };
        ula(u.position, axis, u.n_antennas, self.wavelength() / 2.0)
    }

    /// Amplitude factor on the direct path from transmitter `bs` to user
    /// `k`: zero when blocked, the wall loss when it crosses the surface
    /// plane, one otherwise.
    pub fn direct_link_gain(&self, bs: usize, k: usize) -> f64 {
        let u = &self.users[k];
        if u.direct_blocked {
            0.0
        } else if self.side_from(bs, u.position) == Side::Refract {
            10f64.powf(-self.wall_loss_db / 20.0)
        } else {
            1.0
        }
    }

    pub fn users_of_cell(&self, cell: usize) -> Vec<usize> {
        (0..self.users.len())
            .filter(|&k| self.users[k].cell == cell)
            .collect()
    }

    /// Copy with a different element table.
    pub fn with_table(&self, table: ElementStateTable) -> Scenario {
        let mut s = self.clone();
        s.ios.table = table;
        s
    }

    /// Copy restricted to the users of one cell and its transmitter only.
    pub fn single_cell(&self, cell: usize) -> Scenario {
        let mut s = self.clone();
        s.bs = vec![self.bs[cell].clone()];
        s.users = self
            .users
            .iter()
            .filter(|u| u.cell == cell)
            .cloned()
            .map(|mut u| {
                u.cell = 0;
                u
            })
            .collect();
        s
    }
}

fn ula(center: Vec3, axis: Vec3, n: usize, spacing: f64) -> Vec<Vec3> {
    let c0 = (n as f64 - 1.0) / 2.0;
    (0..n)
        .map(|i| center + axis * ((i as f64 - c0) * spacing))
        .collect()
}
