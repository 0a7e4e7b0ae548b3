//! TOML scenario files.
//!
//! A scenario file holds the geometry and radio parameters at the top level,
//! an `[ios]` table, one `[[bs]]` table per transmitter and one `[[users]]`
//! table per user. An optional `[experiment]` table carries runner options.
//! Omitted keys default to: kappa 4, radiation exponent 3, scatter path
//! loss, no wall, noise 1e-12 W, an 8×8 half-wavelength prototype surface
//! facing +x, 4-antenna 0.1 W transmitters with a 60° beam, and
//! single-antenna users served by cell 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{BaseStation, PathlossMode, Scenario, Surface, TableSource, User, Vec3};
use crate::element::{ElementState, ElementStateTable};
use crate::{Error, Result, SPEED_OF_LIGHT};

use super::ExperimentOptions;

pub const DEFAULT_KAPPA: f64 = 4.0;
pub const DEFAULT_EXPONENT: f64 = 3.0;
pub const DEFAULT_NOISE_W: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    carrier_hz: f64,
    noise_power_w: Option<f64>,
    kappa: Option<f64>,
    radiation_exponent: Option<f64>,
    pathloss: Option<PathlossMode>,
    wall_loss_db: Option<f64>,
    ios: RawSurface,
    bs: Vec<RawBs>,
    #[serde(default)]
    users: Vec<RawUser>,
    #[serde(skip_serializing_if = "Option::is_none")]
    experiment: Option<ExperimentOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSurface {
    center: Option<[f64; 3]>,
    normal: Option<[f64; 3]>,
    rows: Option<usize>,
    cols: Option<usize>,
    row_pitch_m: Option<f64>,
    col_pitch_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    table_file: Option<String>,
    /// Rows of `[refl_amp, refl_deg, refr_amp, refr_deg]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    states: Option<Vec<[f64; 4]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    active_rows: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBs {
    position: [f64; 3],
    n_antennas: Option<usize>,
    antenna_spacing_m: Option<f64>,
    tx_power_w: Option<f64>,
    beamwidth_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    array_axis: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUser {
    position: [f64; 3],
    n_antennas: Option<usize>,
    direct_blocked: Option<bool>,
    cell: Option<usize>,
}

/// A parsed file: the scenario and the runner options, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub scenario: Scenario,
    pub experiment: Option<ExperimentOptions>,
}

/// Reads and validates a scenario file. Table files are resolved relative
/// to the file's directory.
pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_config(&text, path.parent())
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    parse_config(text, None).map(|c| c.scenario)
}

pub fn parse_config(text: &str, base: Option<&Path>) -> Result<ConfigFile> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    let experiment = raw.experiment.clone();
    let scenario = resolve(raw, base).map_err(|e| locate(text, e))?;
    scenario.validate().map_err(|e| locate(text, e))?;
    Ok(ConfigFile { scenario, experiment })
}

fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let line = e.span().map(|s| line_at(text, s.start));
    let key = backticked(&msg)
        .or_else(|| {
            let l = text.lines().nth(line? - 1)?;
            let (k, _) = l.split_once('=')?;
            Some(k.trim().to_string())
        })
        .unwrap_or_else(|| "scenario".into());
    Error::Config { key, line, msg }
}

fn backticked(msg: &str) -> Option<String> {
    let a = msg.find('`')?;
    let b = msg[a + 1..].find('`')?;
    Some(msg[a + 1..a + 1 + b].to_string())
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Turns a validation error into a config error pointing at the line that
/// defines the offending key.
fn locate(text: &str, e: Error) -> Error {
    let Error::InvalidScenario { key, msg } = e else {
        return e;
    };
    let line = key_line(text, &key);
    Error::Config { key, line, msg }
}

fn key_line(text: &str, key: &str) -> Option<usize> {
    let (head, field) = key.rsplit_once('.').unwrap_or(("", key));
    let (table, index) = match head.split_once('[') {
        Some((t, i)) => (t, i.trim_end_matches(']').parse::<usize>().ok()),
        None => (head, None),
    };
    let lines: Vec<&str> = text.lines().collect();
    let is_header = |l: &str| l.trim_start().starts_with('[');
    // `start` is the first line of the section body, 0-based.
    let start = if table.is_empty() {
        0
    } else {
        let header = match index {
            Some(_) => format!("[[{table}]]"),
            None => format!("[{table}]"),
        };
        let mut hits = lines.iter().enumerate().filter(|(_, l)| l.trim() == header);
        hits.nth(index.unwrap_or(0))?.0 + 1
    };
    let end = (start..lines.len()).find(|&i| is_header(lines[i])).unwrap_or(lines.len());
    let is_key = |l: &str| {
        l.trim_start()
            .strip_prefix(field)
            .is_some_and(|r| r.trim_start().starts_with('='))
    };
    match (start..end).find(|&i| is_key(lines[i])) {
        Some(i) => Some(i + 1),
        None if start > 0 => Some(start),
        None => None,
    }
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn a3(v: Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn resolve(raw: RawScenario, base: Option<&Path>) -> Result<Scenario> {
    let lambda = SPEED_OF_LIGHT / raw.carrier_hz;
    let s = raw.ios;
    let (table, table_source) = match (s.table.as_deref(), s.table_file, s.states) {
        (None | Some("prototype"), None, None) => (ElementStateTable::prototype(), TableSource::Prototype),
        (Some(other), None, None) => {
            return Err(Error::InvalidScenario {
                key: "ios.table".into(),
                msg: format!("unknown table `{other}`; use `prototype`, `table_file` or `states`"),
            })
        }
        (None, Some(file), None) => {
            let path = base.map(|b| b.join(&file)).unwrap_or_else(|| file.clone().into());
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
                path: path.display().to_string(),
                msg: e.to_string(),
            })?;
            (ElementStateTable::parse(&text)?, TableSource::File(file))
        }
        (None, None, Some(rows)) => {
            let states = rows
                .iter()
                .map(|r| ElementState::from_degrees(r[0], r[1], r[2], r[3]))
                .collect();
            (ElementStateTable::new(states)?, TableSource::Inline(rows))
        }
        _ => {
            return Err(Error::InvalidScenario {
                key: "ios.table".into(),
                msg: "give at most one of `table`, `table_file` and `states`".into(),
            })
        }
    };
    let mut normal = v3(s.normal.unwrap_or([1.0, 0.0, 0.0]));
    if normal.norm() > 0.0 && (normal.norm() - 1.0).abs() > 1e-12 {
        normal = normal.normalize();
    }
    let ios = Surface {
        center: v3(s.center.unwrap_or([0.0; 3])),
        normal,
        rows: s.rows.unwrap_or(8),
        cols: s.cols.unwrap_or(8),
        row_pitch: s.row_pitch_m.unwrap_or(lambda / 2.0),
        col_pitch: s.col_pitch_m.unwrap_or(lambda / 2.0),
        table,
        table_source,
        active_rows: s.active_rows.map(|[a, b]| (a, b)),
    };
    let bs = raw
        .bs
        .into_iter()
        .map(|b| BaseStation {
            position: v3(b.position),
            n_antennas: b.n_antennas.unwrap_or(4),
            antenna_spacing: b.antenna_spacing_m.unwrap_or(lambda / 2.0),
            tx_power: b.tx_power_w.unwrap_or(0.1),
            beamwidth_deg: b.beamwidth_deg.unwrap_or(60.0),
            array_axis: b.array_axis.map(v3),
        })
        .collect();
    let users = raw
        .users
        .into_iter()
        .map(|u| User {
            position: v3(u.position),
            n_antennas: u.n_antennas.unwrap_or(1),
            direct_blocked: u.direct_blocked.unwrap_or(false),
            cell: u.cell.unwrap_or(0),
        })
        .collect();
    Ok(Scenario {
        bs,
        ios,
        users,
        carrier_hz: raw.carrier_hz,
        noise_power: raw.noise_power_w.unwrap_or(DEFAULT_NOISE_W),
        kappa: raw.kappa.unwrap_or(DEFAULT_KAPPA),
        radiation_exponent: raw.radiation_exponent.unwrap_or(DEFAULT_EXPONENT),
        pathloss_mode: raw.pathloss.unwrap_or(PathlossMode::Scatter),
        wall_loss_db: raw.wall_loss_db.unwrap_or(0.0),
    })
}

/// Writes `scenario` with every default spelled out; parsing the result
/// gives back the same scenario.
pub fn scenario_to_toml(scenario: &Scenario, experiment: Option<&ExperimentOptions>) -> String {
    let ios = &scenario.ios;
    let (table, table_file, states) = match &ios.table_source {
        TableSource::Prototype => (Some("prototype".to_string()), None, None),
        TableSource::File(f) => (None, Some(f.clone()), None),
        TableSource::Inline(rows) => (None, None, Some(rows.clone())),
    };
    let raw = RawScenario {
        carrier_hz: scenario.carrier_hz,
        noise_power_w: Some(scenario.noise_power),
        kappa: Some(scenario.kappa),
        radiation_exponent: Some(scenario.radiation_exponent),
        pathloss: Some(scenario.pathloss_mode),
        wall_loss_db: Some(scenario.wall_loss_db),
        ios: RawSurface {
            center: Some(a3(ios.center)),
            normal: Some(a3(ios.normal)),
            rows: Some(ios.rows),
            cols: Some(ios.cols),
            row_pitch_m: Some(ios.row_pitch),
            col_pitch_m: Some(ios.col_pitch),
            table,
            table_file,
            states,
            active_rows: ios.active_rows.map(|(a, b)| [a, b]),
        },
        bs: scenario
            .bs
            .iter()
            .map(|b| RawBs {
                position: a3(b.position),
                n_antennas: Some(b.n_antennas),
                antenna_spacing_m: Some(b.antenna_spacing),
                tx_power_w: Some(b.tx_power),
                beamwidth_deg: Some(b.beamwidth_deg),
                array_axis: b.array_axis.map(a3),
            })
            .collect(),
        users: scenario
            .users
            .iter()
            .map(|u| RawUser {
                position: a3(u.position),
                n_antennas: Some(u.n_antennas),
                direct_blocked: Some(u.direct_blocked),
                cell: Some(u.cell),
            })
            .collect(),
        experiment: experiment.cloned(),
    };
    toml::to_string(&raw).expect("scenario fields are all representable in TOML")
}
