use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::{alternating_optimize, AltOptions};
use crate::channel::{synthesize_channels, Scenario};
use crate::element::ElementStateTable;
use crate::Result;

/// Surface types compared against the omni-surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceVariant {
    /// Reflects and refracts.
    #[default]
    Ios,
    /// Reflection only: refraction amplitudes zeroed.
    Irs,
    /// Refraction only: reflection amplitudes zeroed.
    Rrs,
    /// No surface: both amplitudes zeroed.
    None,
}

impl SurfaceVariant {
    pub const ALL: [SurfaceVariant; 4] = [Self::Ios, Self::Irs, Self::Rrs, Self::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ios => "ios",
            Self::Irs => "irs",
            Self::Rrs => "rrs",
            Self::None => "none",
        }
    }

    pub fn table(self, ios: &ElementStateTable) -> ElementStateTable {
        match self {
            Self::Ios => ios.clone(),
            Self::Irs => ios.reflect_only(),
            Self::Rrs => ios.refract_only(),
            Self::None => ios.switched_off(),
        }
    }
}

/// Optimized sum rates per seed, columns in [`SurfaceVariant::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceComparison {
    pub seeds: Vec<u64>,
    pub rates: Vec<[f64; 4]>,
}

impl SurfaceComparison {
    pub fn mean(&self) -> [f64; 4] {
        let n = self.rates.len().max(1) as f64;
        let mut m = [0.0; 4];
        for r in &self.rates {
            for i in 0..4 {
                m[i] += r[i] / n;
            }
        }
        m
    }

    /// Standard error of the paired difference `IOS − variant` over seeds.
    pub fn paired_std_err(&self, variant: SurfaceVariant) -> f64 {
        let i = SurfaceVariant::ALL.iter().position(|v| *v == variant).unwrap_or(0);
        let d: Vec<f64> = self.rates.iter().map(|r| r[0] - r[i]).collect();
        std_err(&d)
    }
}

pub(crate) fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub(crate) fn std_err(x: &[f64]) -> f64 {
    std_dev(x) / (x.len().max(1) as f64).sqrt()
}

/// Runs the CSI-known optimizer on every surface variant for every seed.
/// All variants see the same channel draw, since zeroing amplitudes does
/// not change the random streams.
pub fn compare_surfaces(scenario: &Scenario, seeds: &[u64], opts: &AltOptions) -> Result<SurfaceComparison> {
    let scenarios: Vec<Scenario> = SurfaceVariant::ALL
        .iter()
        .map(|v| scenario.with_table(v.table(&scenario.ios.table)))
        .collect();
    let rates = seeds
        .par_iter()
        .map(|&seed| {
            let mut row = [0.0; 4];
            for (i, s) in scenarios.iter().enumerate() {
                let ch = synthesize_channels(s, seed);
                row[i] = alternating_optimize(&ch, s, opts, seed)?.sum_rate;
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurfaceComparison {
        seeds: seeds.to_vec(),
        rates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoveragePoint {
    pub x: f64,
    pub y: f64,
    /// Probe user's rate averaged over seeds, bits/s/Hz.
    pub rate: f64,
}

/// Moves user `probe` over `points` (keeping its height), re-optimizes the
/// chosen surface variant at each position and averages the probe's rate
/// over `seeds`. Points on the surface plane are skipped.
pub fn coverage_map(
    scenario: &Scenario,
    probe: usize,
    points: &[(f64, f64)],
    seeds: &[u64],
    variant: SurfaceVariant,
    opts: &AltOptions,
) -> Result<Vec<CoveragePoint>> {
    if probe >= scenario.users.len() {
        return Err(crate::Error::InvalidScenario {
            key: "probe_user".into(),
            msg: format!("scenario has {} users", scenario.users.len()),
        });
    }
    let base = scenario.with_table(variant.table(&scenario.ios.table));
    let out = points
        .par_iter()
        .map(|&(x, y)| {
            let mut s = base.clone();
            s.users[probe].position.x = x;
            s.users[probe].position.y = y;
            if s.validate().is_err() {
                return Ok(None);
            }
            let mut total = 0.0;
            for &seed in seeds {
                let ch = synthesize_channels(&s, seed);
                total += alternating_optimize(&ch, &s, opts, seed)?.rates.rates[probe];
            }
            Ok(Some(CoveragePoint {
                x,
                y,
                rate: total / seeds.len().max(1) as f64,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Grid points from `lo` to `hi` inclusive at `step`.
pub(crate) fn axis(range: [f64; 2], step: f64) -> Vec<f64> {
    if !(step > 0.0) || range[1] < range[0] {
        return vec![range[0]];
    }
    let n = ((range[1] - range[0]) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| range[0] + i as f64 * step).collect()
}
