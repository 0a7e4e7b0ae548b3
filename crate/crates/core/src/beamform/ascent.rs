use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::precoder::{precode, sinr_and_rates_with, Beamformer, PrecoderKind, Rates};
use super::PhaseConfig;
use crate::channel::{CascadeModel, ChannelSet, Scenario};
use crate::{Error, Result, C64};

/// Largest number of configurations the exhaustive search will enumerate.
pub const EXHAUSTIVE_LIMIT: usize = 1 << 20;

/// Relative margin a candidate must clear to replace the incumbent; keeps
/// ties from flipping back and forth.
const IMPROVEMENT: f64 = 1e-12;

/// When the digital precoder is recomputed during coordinate ascent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecoderRefresh {
    /// Hold the precoder fixed during a sweep and refresh it afterwards.
    PerSweep,
    /// Re-derive the precoder for every candidate flip.
    #[default]
    PerFlip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AltOptions {
    pub max_sweeps: usize,
    pub restarts: usize,
    pub precoder: PrecoderKind,
    pub refresh: PrecoderRefresh,
    /// Try rectangular tile moves once single-element moves stall.
    pub tile_moves: bool,
}

impl Default for AltOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 20,
            restarts: 4,
            precoder: PrecoderKind::Zf,
            refresh: PrecoderRefresh::PerFlip,
            tile_moves: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AltResult {
    pub config: PhaseConfig,
    pub beamformer: Beamformer,
    pub rates: Rates,
    pub sum_rate: f64,
    /// Objective after the initial point and after every accepted sweep of
    /// the winning restart.
    pub trace: Vec<f64>,
    /// Sweeps run, summed over restarts.
    pub sweeps: usize,
}

/// Cross-cell interference seen by the users of `model`: a second cascade
/// driven by a fixed foreign precoder.
#[derive(Debug, Clone, Copy)]
pub struct Interference<'a> {
    pub model: &'a CascadeModel,
    pub v: &'a DMatrix<C64>,
}

/// Sum-rate objective over surface configurations.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub model: &'a CascadeModel,
    pub p_t: f64,
    pub noise: f64,
    pub precoder: PrecoderKind,
    pub interference: Option<Interference<'a>>,
    /// Cost subtracted per element and state, `penalty[m][s]`.
    pub penalty: Option<&'a [Vec<f64>]>,
    /// Surface `(rows, cols)`, enabling tile moves.
    pub layout: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct Eval {
    h: DMatrix<C64>,
    g: Option<DMatrix<C64>>,
}

impl<'a> Objective<'a> {
    pub fn new(model: &'a CascadeModel, p_t: f64, noise: f64, precoder: PrecoderKind) -> Self {
        Self {
            model,
            p_t,
            noise,
            precoder,
            interference: None,
            penalty: None,
            layout: None,
        }
    }

    fn eval(&self, states: &[usize]) -> Eval {
        Eval {
            h: self.model.effective(states),
            g: self.interference.map(|i| i.model.effective(states)),
        }
    }

    fn switch(&self, ev: &mut Eval, m: usize, from: usize, to: usize) {
        self.model.apply_switch(&mut ev.h, m, from, to);
        if let (Some(i), Some(g)) = (self.interference, ev.g.as_mut()) {
            i.model.apply_switch(g, m, from, to);
        }
    }

    fn noise_vec(&self, ev: &Eval) -> Vec<f64> {
        match (self.interference, &ev.g) {
            (Some(i), Some(g)) => {
                let gv = g * i.v;
                (0..gv.nrows())
                    .map(|k| self.noise + gv.row(k).iter().map(|x| x.norm_sqr()).sum::<f64>())
                    .collect()
            }
            _ => vec![self.noise; ev.h.nrows()],
        }
    }

    fn penalty_of(&self, states: &[usize]) -> f64 {
        self.penalty
            .map(|p| states.iter().enumerate().map(|(m, &s)| p[m][s]).sum())
            .unwrap_or(0.0)
    }

    fn penalty_delta(&self, m: usize, from: usize, to: usize) -> f64 {
        self.penalty.map(|p| p[m][to] - p[m][from]).unwrap_or(0.0)
    }

    fn rate_exact(&self, ev: &Eval) -> f64 {
        let bf = precode(self.precoder, &ev.h, self.p_t, self.noise);
        sinr_and_rates_with(&ev.h, &bf, &self.noise_vec(ev)).sum_rate
    }

    fn rate_fixed(&self, ev: &Eval, bf: &Beamformer) -> f64 {
        sinr_and_rates_with(&ev.h, bf, &self.noise_vec(ev)).sum_rate
    }

    /// Objective with the precoder re-derived for `states`, evaluated from
    /// scratch.
    pub fn value(&self, states: &[usize]) -> f64 {
        self.rate_exact(&self.eval(states)) - self.penalty_of(states)
    }

    /// Rates of `states` with their own precoder, from scratch.
    pub fn solve(&self, states: &[usize]) -> (Beamformer, Rates) {
        let ev = self.eval(states);
        let bf = precode(self.precoder, &ev.h, self.p_t, self.noise);
        let rates = sinr_and_rates_with(&ev.h, &bf, &self.noise_vec(&ev));
        (bf, rates)
    }

    fn better(val: f64, best: f64) -> bool {
        val > best + IMPROVEMENT * best.abs().max(1e-300)
    }

    /// One pass of single-element moves in ascending order. Returns whether
    /// anything changed; on a rejected fixed-precoder sweep the state is
    /// restored and `false` is returned.
    fn element_sweep(&self, st: &mut AscentState, refresh: PrecoderRefresh) -> bool {
        let n_states = self.model.n_states();
        let bf = match refresh {
            PrecoderRefresh::PerSweep => Some(precode(self.precoder, &st.ev.h, self.p_t, self.noise)),
            PrecoderRefresh::PerFlip => None,
        };
        let score = |ev: &Eval, pen: f64| match &bf {
            Some(bf) => self.rate_fixed(ev, bf) - pen,
            None => self.rate_exact(ev) - pen,
        };
        let prev = st.clone();
        let mut cur = score(&st.ev, st.pen);
        let mut changed = false;
        for m in 0..st.cfg.len() {
            let from = st.cfg[m];
            let mut best: Option<(usize, Eval, f64)> = None;
            let mut best_f = cur;
            for s in (0..n_states).filter(|&s| s != from) {
                let mut e = st.ev.clone();
                self.switch(&mut e, m, from, s);
                let p = st.pen + self.penalty_delta(m, from, s);
                let val = score(&e, p);
                if Self::better(val, best_f) {
                    best_f = val;
                    best = Some((s, e, p));
                }
            }
            if let Some((s, e, p)) = best {
                st.cfg[m] = s;
                st.ev = e;
                st.pen = p;
                cur = best_f;
                changed = true;
            }
        }
        if !changed {
            return false;
        }
        let exact = self.rate_exact(&st.ev) - st.pen;
        if exact < prev.f {
            *st = prev;
            return false;
        }
        st.f = exact;
        true
    }

    /// One pass of tile moves: every rectangle of the listed shapes, at every
    /// offset, has all its states advanced by the same step (mod the number
    /// of states). Always scored with the exact objective.
    fn tile_sweep(&self, st: &mut AscentState, rows: usize, cols: usize) -> bool {
        let n_states = self.model.n_states();
        let mut changed = false;
        for &(h, w) in TILE_SHAPES {
            if h > rows || w > cols {
                continue;
            }
            for r0 in 0..=rows - h {
                for c0 in 0..=cols - w {
                    let tile: Vec<usize> = (r0..r0 + h)
                        .flat_map(|r| (c0..c0 + w).map(move |c| r * cols + c))
                        .collect();
                    let mut best: Option<(usize, Eval, f64, f64)> = None;
                    let mut best_f = st.f;
                    for step in 1..n_states {
                        let mut e = st.ev.clone();
                        let mut p = st.pen;
                        for &m in &tile {
                            let from = st.cfg[m];
                            let to = (from + step) % n_states;
                            self.switch(&mut e, m, from, to);
                            p += self.penalty_delta(m, from, to);
                        }
                        let val = self.rate_exact(&e) - p;
                        if Self::better(val, best_f) {
                            best_f = val;
                            best = Some((step, e, p, val));
                        }
                    }
                    if let Some((step, e, p, val)) = best {
                        for &m in &tile {
                            st.cfg[m] = (st.cfg[m] + step) % n_states;
                        }
                        st.ev = e;
                        st.pen = p;
                        st.f = val;
                        changed = true;
                    }
                }
            }
        }
        changed
    }

    /// Coordinate ascent from `init`. Single elements are visited in
    /// ascending order until a sweep changes nothing; then, if `layout`
    /// (rows, cols) is given, tile moves are tried and element sweeps resume
    /// after any tile move is taken. Returns the final configuration, the
    /// objective trace (never decreasing) and the number of sweeps.
    pub fn ascend(
        &self,
        init: Vec<usize>,
        max_sweeps: usize,
        refresh: PrecoderRefresh,
        layout: Option<(usize, usize)>,
    ) -> (Vec<usize>, Vec<f64>, usize) {
        let ev = self.eval(&init);
        let pen = self.penalty_of(&init);
        let f = self.rate_exact(&ev) - pen;
        let mut st = AscentState { cfg: init, ev, pen, f };
        let mut trace = vec![f];
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            sweeps += 1;
            if self.element_sweep(&mut st, refresh) {
                trace.push(st.f);
                continue;
            }
            let Some((rows, cols)) = layout else { break };
            if sweeps >= max_sweeps {
                break;
            }
            sweeps += 1;
            if !self.tile_sweep(&mut st, rows, cols) {
                break;
            }
            trace.push(st.f);
        }
        (st.cfg, trace, sweeps)
    }
}

#[derive(Debug, Clone)]
struct AscentState {
    cfg: Vec<usize>,
    ev: Eval,
    pen: f64,
    f: f64,
}

/// Tile shapes `(rows, cols)` tried once single-element moves stall.
const TILE_SHAPES: &[(usize, usize)] = &[(1, 2), (2, 1), (2, 2), (1, 4), (4, 1), (2, 4), (4, 2), (4, 4)];

/// Uniformly random configuration from stream `stream` of `seed`.
pub fn random_config(n_elements: usize, n_states: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n_elements).map(|_| rng.random_range(0..n_states)).collect()
}

/// Best of `opts.restarts` ascents from random starting points. When `init`
/// is given, the first restart starts there instead.
pub fn optimize(obj: &Objective<'_>, opts: &AltOptions, seed: u64, init: Option<&[usize]>) -> AltResult {
    let m = obj.model.n_elements();
    let s = obj.model.n_states();
    let runs: Vec<_> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let start = match (r, init) {
                (0, Some(c)) => c.to_vec(),
                _ => random_config(m, s, seed, r as u64),
            };
            let layout = if opts.tile_moves { obj.layout } else { None };
            let (cfg, trace, sweeps) = obj.ascend(start, opts.max_sweeps, opts.refresh, layout);
            let value = obj.value(&cfg);
            (cfg, trace, sweeps, value)
        })
        .collect();
    let sweeps = runs.iter().map(|r| r.2).sum();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.3 > runs[best].3 {
            best = i;
        }
    }
    let (cfg, trace, _, _) = runs.into_iter().nth(best).expect("at least one restart");
    let (beamformer, rates) = obj.solve(&cfg);
    AltResult {
        config: PhaseConfig::new(cfg),
        beamformer,
        sum_rate: rates.sum_rate,
        rates,
        trace,
        sweeps,
    }
}

/// Hybrid optimization with CSI: coordinate ascent over element states
/// alternated with digital precoding, best over random restarts.
///
/// Uses transmitter 0's power, the scenario noise and omnidirectional
/// receive combining.
pub fn alternating_optimize(
    channels: &ChannelSet,
    scenario: &Scenario,
    opts: &AltOptions,
    seed: u64,
) -> Result<AltResult> {
    let model = CascadeModel::omni(channels, &scenario.ios.table);
    check_users(&model)?;
    let mut obj = Objective::new(&model, scenario.bs[0].tx_power, scenario.noise_power, opts.precoder);
    obj.layout = Some((scenario.ios.rows, scenario.ios.cols));
    Ok(optimize(&obj, opts, seed, None))
}

fn check_users(model: &CascadeModel) -> Result<()> {
    if model.n_users() > model.n_tx() {
        return Err(Error::TooManyUsers {
            users: model.n_users(),
            antennas: model.n_tx(),
        });
    }
    Ok(())
}

/// Enumerates every configuration and returns the best with its sum rate.
pub fn exhaustive_oracle(
    channels: &ChannelSet,
    scenario: &Scenario,
    precoder: PrecoderKind,
) -> Result<(PhaseConfig, f64)> {
    let model = CascadeModel::omni(channels, &scenario.ios.table);
    check_users(&model)?;
    let obj = Objective::new(&model, scenario.bs[0].tx_power, scenario.noise_power, precoder);
    exhaustive(&obj)
}

/// Exhaustive search over an arbitrary objective. Ties keep the first
/// configuration in lexicographic order.
pub fn exhaustive(obj: &Objective<'_>) -> Result<(PhaseConfig, f64)> {
    let m = obj.model.n_elements();
    let s = obj.model.n_states();
    let total = (s as f64).powi(m as i32);
    if total > EXHAUSTIVE_LIMIT as f64 {
        return Err(Error::InstanceTooLarge {
            configurations: total,
            bound: EXHAUSTIVE_LIMIT,
        });
    }
    let mut cfg = vec![0usize; m];
    let mut best = (cfg.clone(), obj.value(&cfg));
    loop {
        // Odometer increment, last element fastest.
        let mut i = m;
        loop {
            if i == 0 {
                return Ok((PhaseConfig::new(best.0), best.1));
            }
            i -= 1;
            cfg[i] += 1;
            if cfg[i] < s {
                break;
            }
            cfg[i] = 0;
        }
        let v = obj.value(&cfg);
        if v > best.1 {
            best = (cfg.clone(), v);
        }
    }
}
