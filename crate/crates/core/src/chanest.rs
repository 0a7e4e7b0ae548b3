//! Grouped linear channel estimation.
//!
//! Elements are tied together in rectangular tiles that switch as one. The
//! effective channel is linear in the tile states, so it is identified by
//! one all-OFF baseline plus one probe per tile with only that tile ON.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;

use crate::beamform::PhaseConfig;
use crate::channel::{complex_normal, CascadeModel};
use crate::{Error, Result, C64};

/// Partition of the elements into groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    groups: Vec<Vec<usize>>,
    n_elements: usize,
}

/// Row-major rectangular tiles of `tile_rows × tile_cols` elements.
pub fn make_groups(rows: usize, cols: usize, tile_rows: usize, tile_cols: usize) -> Result<Grouping> {
    if tile_rows == 0 || tile_cols == 0 || rows % tile_rows != 0 || cols % tile_cols != 0 {
        return Err(Error::Grouping(format!(
            "{tile_rows}x{tile_cols} tiles do not divide a {rows}x{cols} panel"
        )));
    }
    let mut groups = Vec::new();
    for tr in 0..rows / tile_rows {
        for tc in 0..cols / tile_cols {
            let mut g = Vec::with_capacity(tile_rows * tile_cols);
            for r in tr * tile_rows..(tr + 1) * tile_rows {
                for c in tc * tile_cols..(tc + 1) * tile_cols {
                    g.push(r * cols + c);
                }
            }
            groups.push(g);
        }
    }
    Grouping::new(groups, rows * cols)
}

impl Grouping {
    /// Checks that `groups` covers `0..n_elements` exactly once.
    pub fn new(groups: Vec<Vec<usize>>, n_elements: usize) -> Result<Self> {
        let mut seen = vec![false; n_elements];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::Grouping("empty group".into()));
            }
            for &m in g {
                if m >= n_elements || seen[m] {
                    return Err(Error::Grouping(format!("element {m} out of range or repeated")));
                }
                seen[m] = true;
            }
        }
        if let Some(m) = seen.iter().position(|s| !s) {
            return Err(Error::Grouping(format!("element {m} not in any group")));
        }
        Ok(Self { groups, n_elements })
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Element configuration in which every element takes its group's state.
    pub fn expand(&self, group_states: &[usize]) -> Result<PhaseConfig> {
        check_len(self.len(), group_states.len())?;
        let mut states = vec![0; self.n_elements];
        for (g, &s) in self.groups.iter().zip(group_states) {
            for &m in g {
                states[m] = s;
            }
        }
        Ok(PhaseConfig::new(states))
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what: "group states",
            expected,
            got,
        });
    }
    Ok(())
}

/// Effective channel as a baseline plus one additive change per group.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearChannelModel {
    /// Channel with every group OFF.
    pub base: DMatrix<C64>,
    /// Change caused by switching group `g` ON alone.
    pub deltas: Vec<DMatrix<C64>>,
    pub grouping: Grouping,
    /// Number of probe measurements spent.
    pub probes: usize,
}

/// Estimates the model from `probe`, which measures the channel for a vector
/// of group states. Each configuration is measured `repeats` times and
/// averaged.
pub fn estimate<F>(mut probe: F, grouping: &Grouping, repeats: usize) -> Result<LinearChannelModel>
where
    F: FnMut(&[usize]) -> Result<DMatrix<C64>>,
{
    let repeats = repeats.max(1);
    let g_count = grouping.len();
    let mut probes = 0;
    let mut measure = |states: &[usize]| -> Result<DMatrix<C64>> {
        let mut acc: Option<DMatrix<C64>> = None;
        for _ in 0..repeats {
            let h = probe(states)?;
            probes += 1;
            acc = Some(match acc {
                None => h,
                Some(a) if a.shape() == h.shape() => a + h,
                Some(a) => {
                    return Err(Error::Probe(format!(
                        "probe shape changed from {:?} to {:?}",
                        a.shape(),
                        h.shape()
                    )))
                }
            });
        }
        Ok(acc.expect("repeats >= 1") / C64::new(repeats as f64, 0.0))
    };
    let mut states = vec![0; g_count];
    let base = measure(&states)?;
    let mut deltas = Vec::with_capacity(g_count);
    for g in 0..g_count {
        states[g] = 1;
        let on = measure(&states)?;
        states[g] = 0;
        if on.shape() != base.shape() {
            return Err(Error::Probe("probe shape changed".into()));
        }
        deltas.push(on - &base);
    }
    Ok(LinearChannelModel {
        base,
        deltas,
        grouping: grouping.clone(),
        probes,
    })
}

/// Predicted channel for two-state group settings: `base + Σ s_g Δ_g`.
pub fn predict(model: &LinearChannelModel, states: &[usize]) -> Result<DMatrix<C64>> {
    check_len(model.deltas.len(), states.len())?;
    let mut h = model.base.clone();
    for (d, &s) in model.deltas.iter().zip(states) {
        match s {
            0 => {}
            1 => h += d,
            _ => return Err(Error::StateIndex { index: s, len: 2 }),
        }
    }
    Ok(h)
}

/// Probe on the physical cascade: every element of a group takes the group
/// state, and the measurement is the `K × N` effective channel.
pub fn cascade_probe<'a>(
    model: &'a CascadeModel,
    grouping: &'a Grouping,
) -> impl FnMut(&[usize]) -> Result<DMatrix<C64>> + 'a {
    move |states| Ok(model.effective(grouping.expand(states)?.states()))
}

/// Wraps `probe` with additive complex Gaussian noise of variance `sigma²`
/// per entry.
pub fn noisy<'a, F, R>(mut probe: F, sigma: f64, rng: &'a mut R) -> impl FnMut(&[usize]) -> Result<DMatrix<C64>> + 'a
where
    F: FnMut(&[usize]) -> Result<DMatrix<C64>> + 'a,
    R: Rng + ?Sized,
{
    move |states| {
        let mut h = probe(states)?;
        for x in h.iter_mut() {
            *x += complex_normal(rng) * sigma;
        }
        Ok(h)
    }
}

impl LinearChannelModel {
    /// CSV with columns `user,antenna,group,re,im`; the baseline uses the
    /// group label `base`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("user,antenna,group,re,im\n");
        for k in 0..self.base.nrows() {
            for n in 0..self.base.ncols() {
                let b = self.base[(k, n)];
                let _ = writeln!(out, "{k},{n},base,{:e},{:e}", b.re, b.im);
                for (g, d) in self.deltas.iter().enumerate() {
                    let d = d[(k, n)];
                    let _ = writeln!(out, "{k},{n},{g},{:e},{:e}", d.re, d.im);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_counts() {
        assert_eq!(make_groups(10, 16, 5, 8).unwrap().len(), 4);
        assert_eq!(make_groups(3, 4, 1, 1).unwrap().len(), 12);
        assert!(make_groups(10, 16, 3, 8).is_err());
        let g = make_groups(10, 16, 5, 8).unwrap();
        assert_eq!(g.groups()[1][0], 8);
        assert_eq!(g.groups()[2][0], 80);
    }

    #[test]
    fn partition_is_checked() {
        assert!(Grouping::new(vec![vec![0, 1], vec![1]], 2).is_err());
        assert!(Grouping::new(vec![vec![0]], 2).is_err());
    }

    fn scalar(z: C64) -> DMatrix<C64> {
        DMatrix::from_element(1, 1, z)
    }

    #[test]
    fn exact_linear_identification() {
        let grouping = Grouping::new(vec![vec![0], vec![1]], 2).unwrap();
        let truth = [C64::new(0.0, 0.5), C64::new(-0.2, 0.0)];
        let probe = |s: &[usize]| {
            Ok(scalar(
                C64::new(1.0, 0.0) + truth[0] * s[0] as f64 + truth[1] * s[1] as f64,
            ))
        };
        let model = estimate(probe, &grouping, 1).unwrap();
        assert!((model.base[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((model.deltas[0][(0, 0)] - truth[0]).norm() < 1e-12);
        assert!((model.deltas[1][(0, 0)] - truth[1]).norm() < 1e-12);
        assert_eq!(model.probes, 3);
        let h = predict(&model, &[1, 1]).unwrap()[(0, 0)];
        assert!((h - C64::new(0.8, 0.5)).norm() < 1e-12);
        assert_eq!(predict(&model, &[0, 0]).unwrap(), model.base);
        assert!(predict(&model, &[1]).is_err());
        assert!(predict(&model, &[2, 0]).is_err());
    }

    #[test]
    fn probe_budget() {
        let grouping = make_groups(2, 4, 1, 2).unwrap();
        let model = estimate(|_: &[usize]| Ok(scalar(C64::new(1.0, 0.0))), &grouping, 3).unwrap();
        assert_eq!(model.probes, (grouping.len() + 1) * 3);
    }

    #[test]
    fn probe_errors_propagate() {
        let grouping = make_groups(1, 2, 1, 1).unwrap();
        let r = estimate(|_: &[usize]| Err(Error::Probe("down".into())), &grouping, 1);
        assert_eq!(r.unwrap_err(), Error::Probe("down".into()));
    }

    #[test]
    fn csv_has_base_row() {
        let grouping = make_groups(1, 2, 1, 1).unwrap();
        let model = estimate(|_: &[usize]| Ok(scalar(C64::new(1.0, 0.0))), &grouping, 1).unwrap();
        let csv = model.to_csv();
        assert!(csv.starts_with("user,antenna,group,re,im\n0,0,base,"));
        assert_eq!(csv.lines().count(), 4);
    }
}
