//! Distributed configuration of a surface shared by two access points.
//!
//! Each AP only knows its own users' channels, the other AP's position and
//! the digital beamformer it reports. The APs negotiate one surface
//! configuration by consensus ADMM over the discrete state set: proposals
//! are mapped to unit phasors of their reflection phase, the consensus is
//! their mean projected back onto the achievable phasors, and each AP
//! maximizes its own sum rate minus a quadratic penalty pulling its
//! proposal toward the consensus.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::beamform::{
    alternating_optimize, optimize, precode, random_config, AltOptions, Beamformer,
    Interference, Objective, PhaseConfig, PrecoderKind,
};
use crate::channel::{synthesize_cells, synthesize_for, CascadeModel, ChannelSet, Fading, PathlossMode, Scenario};
use crate::codebook::watts_to_dbm;
use crate::element::{ElementStateTable, Side};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationOptions {
    /// Initial penalty weight.
    pub rho: f64,
    /// Factor applied to `rho` after `patience` iterations without a new
    /// lowest residual.
    pub rho_growth: f64,
    pub patience: usize,
    pub max_iter: usize,
    /// Residual (fraction of disagreeing elements) that counts as agreement.
    pub tol: f64,
    /// Settings of each AP's local solver. Restarts are used only for the
    /// first, unpenalized proposal; later updates ascend from the previous
    /// proposal.
    pub local: AltOptions,
}

impl Default for NegotiationOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            rho_growth: 1.5,
            patience: 10,
            max_iter: 50,
            tol: 0.0,
            local: AltOptions::default(),
        }
    }
}

/// What one AP holds during negotiation.
#[derive(Debug, Clone, PartialEq)]
pub struct ApState {
    pub id: usize,
    /// Indices (into the scenario) of the users this AP serves.
    pub users: Vec<usize>,
    pub proposal: PhaseConfig,
    pub beamformer: Beamformer,
    /// Scaled dual variable per element.
    pub dual: Vec<C64>,
    /// Own sum rate under the AP's interference estimate.
    pub local_sum_rate: f64,
}

/// What an AP can see of a peer: a prediction of the peer's channel to the
/// AP's own users, built from the peer's position (line of sight) and the
/// AP's own surface-to-user measurements, and the peer's reported digital
/// beamformer.
#[derive(Debug, Clone, Copy)]
pub struct PeerReport<'a> {
    pub model: &'a CascadeModel,
    pub v: &'a DMatrix<C64>,
}

/// Local problem of one AP.
#[derive(Debug, Clone, Copy)]
pub struct LocalProblem<'a> {
    /// The AP's own users' channels.
    pub own: &'a CascadeModel,
    pub peer: Option<PeerReport<'a>>,
    pub p_t: f64,
    pub noise: f64,
    pub precoder: PrecoderKind,
    pub layout: (usize, usize),
}

/// Reflection-phase phasor of every state.
fn state_phasors(table: &ElementStateTable) -> Vec<C64> {
    table
        .states()
        .iter()
        .map(|s| C64::from_polar(1.0, s.phase(Side::Reflect)))
        .collect()
}

/// Achievable phasor closest to `w`; ties go to the lowest state.
fn nearest(phasors: &[C64], w: C64) -> C64 {
    let mut best = phasors[0];
    for &p in &phasors[1..] {
        if (p - w).norm_sqr() < (best - w).norm_sqr() - 1e-12 {
            best = p;
        }
    }
    best
}

/// Penalty `ρ/(2M)·|x_s − z_m + u_m|²` for every element and state. The
/// `1/M` keeps a full disagreement worth a few bits whatever the size.
fn penalty_table(phasors: &[C64], consensus: &[C64], dual: &[C64], rho: f64) -> Vec<Vec<f64>> {
    let w = rho / (2.0 * consensus.len().max(1) as f64);
    consensus
        .iter()
        .zip(dual)
        .map(|(z, u)| phasors.iter().map(|x| w * (x - z + u).norm_sqr()).collect())
        .collect()
}

/// One ADMM proposal update: from the current proposal, coordinate ascent
/// on own sum rate minus the consensus penalty, then the digital precoder
/// for the result. The penalized objective never decreases.
pub fn local_update(
    ap: &ApState,
    problem: &LocalProblem<'_>,
    table: &ElementStateTable,
    consensus: &[C64],
    rho: f64,
    opts: &AltOptions,
) -> ApState {
    let phasors = state_phasors(table);
    let penalty = penalty_table(&phasors, consensus, &ap.dual, rho);
    let obj = objective(problem, Some(&penalty));
    let layout = opts.tile_moves.then_some(problem.layout);
    let (states, _, _) = obj.ascend(ap.proposal.states().to_vec(), opts.max_sweeps, opts.refresh, layout);
    let (beamformer, rates) = obj.solve(&states);
    ApState {
        proposal: PhaseConfig::new(states),
        beamformer,
        local_sum_rate: rates.sum_rate,
        ..ap.clone()
    }
}

fn objective<'a>(problem: &LocalProblem<'a>, penalty: Option<&'a [Vec<f64>]>) -> Objective<'a> {
    let mut obj = Objective::new(problem.own, problem.p_t, problem.noise, problem.precoder);
    obj.interference = problem.peer.map(|p| Interference { model: p.model, v: p.v });
    obj.penalty = penalty;
    obj.layout = Some(problem.layout);
    obj
}

/// Fraction of elements on which two configurations differ.
pub fn residual(a: &PhaseConfig, b: &PhaseConfig) -> f64 {
    let n = a.len().max(1);
    a.states().iter().zip(b.states()).filter(|(x, y)| x != y).count() as f64 / n as f64
}

/// Element-wise majority; ties go to the lowest state index.
pub fn majority(proposals: &[PhaseConfig], n_states: usize) -> PhaseConfig {
    let m = proposals.first().map_or(0, PhaseConfig::len);
    let states = (0..m)
        .map(|e| {
            let mut votes = vec![0usize; n_states];
            for p in proposals {
                votes[p.states()[e]] += 1;
            }
            let top = votes.iter().copied().max().unwrap_or(0);
            votes.iter().position(|&v| v == top).unwrap_or(0)
        })
        .collect();
    PhaseConfig::new(states)
}

/// One row of the negotiation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub ap: usize,
    pub local_sum_rate: f64,
    pub residual: f64,
}

/// Final outcome for one user on the true channels.
#[derive(Debug, Clone, PartialEq)]
pub struct UserOutcome {
    pub user: usize,
    pub cell: usize,
    pub rate: f64,
    /// Received power from the other cells' streams, watts.
    pub interference: f64,
}

#[derive(Debug, Clone)]
pub struct NegotiationResult {
    pub config: PhaseConfig,
    pub beamformers: Vec<Beamformer>,
    pub users: Vec<UserOutcome>,
    pub sum_rate: f64,
    pub trace: Vec<TraceRow>,
    /// Residual after each iteration.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl NegotiationResult {
    /// CSV `iter,ap,local_sum_rate,residual`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,ap,local_sum_rate,residual\n");
        for r in &self.trace {
            let _ = writeln!(out, "{},{},{:.9},{:.6}", r.iter, r.ap, r.local_sum_rate, r.residual);
        }
        out
    }

    /// CSV `user,cell,rate_bpshz,interference_dbm`.
    pub fn users_csv(&self) -> String {
        users_csv(&self.users)
    }
}

pub fn users_csv(users: &[UserOutcome]) -> String {
    let mut out = String::from("user,cell,rate_bpshz,interference_dbm\n");
    for u in users {
        let _ = writeln!(
            out,
            "{},{},{:.9},{:.6}",
            u.user,
            u.cell,
            u.rate,
            watts_to_dbm(u.interference)
        );
    }
    out
}

/// Users served by each AP.
pub fn cell_members(scenario: &Scenario) -> Vec<Vec<usize>> {
    let mut cells = vec![Vec::new(); scenario.bs.len()];
    for (k, u) in scenario.users.iter().enumerate() {
        if let Some(c) = cells.get_mut(u.cell) {
            c.push(k);
        }
    }
    cells
}

fn check_cells(scenario: &Scenario) -> Result<Vec<Vec<usize>>> {
    let n_ap = scenario.bs.len();
    if n_ap > 2 {
        return Err(Error::InvalidScenario {
            key: "bs".into(),
            msg: format!("{n_ap} access points; negotiation supports at most two"),
        });
    }
    if let Some(u) = scenario.users.iter().find(|u| u.cell >= n_ap) {
        return Err(Error::InvalidScenario {
            key: "users.cell".into(),
            msg: format!("cell {} has no access point", u.cell),
        });
    }
    let cells = cell_members(scenario);
    for (j, c) in cells.iter().enumerate() {
        if c.len() > scenario.bs[j].n_antennas {
            return Err(Error::TooManyUsers {
                users: c.len(),
                antennas: scenario.bs[j].n_antennas,
            });
        }
    }
    Ok(cells)
}

/// Rates and inter-cell interference of every user on the true channels
/// `cells` (one set per AP, all users), for a shared configuration and one
/// precoder per AP.
pub fn evaluate(
    scenario: &Scenario,
    cells: &[ChannelSet],
    members: &[Vec<usize>],
    config: &PhaseConfig,
    beamformers: &[Beamformer],
) -> Vec<UserOutcome> {
    let table = &scenario.ios.table;
    // Effective channel from every AP to every user.
    let h: Vec<DMatrix<C64>> = cells
        .iter()
        .map(|ch| CascadeModel::omni(ch, table).effective(config.states()))
        .collect();
    let mut out = Vec::with_capacity(scenario.users.len());
    for (c, users) in members.iter().enumerate() {
        for (i, &k) in users.iter().enumerate() {
            let mut signal = 0.0;
            let mut intra = 0.0;
            let mut inter = 0.0;
            for (j, bf) in beamformers.iter().enumerate() {
                let row = h[j].row(k);
                for s in 0..bf.v.ncols() {
                    let p = (row * bf.v.column(s))[(0, 0)].norm_sqr();
                    match (j == c, s == i) {
                        (true, true) => signal = p,
                        (true, false) => intra += p,
                        (false, _) => inter += p,
                    }
                }
            }
            let sinr = signal / (intra + inter + scenario.noise_power);
            out.push(UserOutcome {
                user: k,
                cell: c,
                rate: (1.0 + sinr).log2(),
                interference: inter,
            });
        }
    }
    out.sort_by_key(|u| u.user);
    out
}

/// Each AP's precoder for its own users under `config`, from true CSI.
pub fn cell_precoders(
    scenario: &Scenario,
    cells: &[ChannelSet],
    members: &[Vec<usize>],
    config: &PhaseConfig,
    precoder: PrecoderKind,
) -> Vec<Beamformer> {
    cells
        .iter()
        .zip(members)
        .enumerate()
        .map(|(j, (ch, users))| {
            let model = CascadeModel::omni(&ch.select_users(users), &scenario.ios.table);
            let h = model.effective(config.states());
            precode(precoder, &h, scenario.bs[j].tx_power, scenario.noise_power)
        })
        .collect()
}

fn total(users: &[UserOutcome]) -> f64 {
    users.iter().map(|u| u.rate).sum()
}

/// Negotiates a shared configuration on the channel realization of `seed`.
pub fn negotiate(scenario: &Scenario, opts: &NegotiationOptions, seed: u64) -> Result<NegotiationResult> {
    let cells = synthesize_cells(scenario, seed);
    negotiate_on(scenario, &cells, opts, seed)
}

/// [`negotiate`] on given true channels (one set per AP, all users).
pub fn negotiate_on(
    scenario: &Scenario,
    cells: &[ChannelSet],
    opts: &NegotiationOptions,
    seed: u64,
) -> Result<NegotiationResult> {
    let members = check_cells(scenario)?;
    let table = &scenario.ios.table;
    let layout = (scenario.ios.rows, scenario.ios.cols);

    if scenario.bs.len() == 1 {
        let r = alternating_optimize(&cells[0], scenario, &opts.local, seed)?;
        let users = evaluate(scenario, cells, &members, &r.config, std::slice::from_ref(&r.beamformer));
        return Ok(NegotiationResult {
            config: r.config,
            beamformers: vec![r.beamformer],
            sum_rate: r.sum_rate,
            users,
            trace: Vec::new(),
            residuals: vec![0.0],
            iterations: 0,
            converged: true,
        });
    }

    // Each AP's own-user channels and its prediction of the peer's.
    let own: Vec<CascadeModel> = cells
        .iter()
        .zip(&members)
        .map(|(ch, users)| CascadeModel::omni(&ch.select_users(users), table))
        .collect();
    let predicted: Vec<CascadeModel> = (0..2)
        .map(|j| {
            let peer = 1 - j;
            let mut est = synthesize_for(scenario, peer, seed, Fading::LosOnly).select_users(&members[j]);
            // Surface-to-user links are shared in scatter mode, so the AP's
            // own measurements of them apply to the peer's path too.
            if scenario.pathloss_mode == PathlossMode::Scatter {
                est.h_iu = cells[j].select_users(&members[j]).h_iu;
            }
            CascadeModel::omni(&est, table)
        })
        .collect();
    let problem = |j: usize| LocalProblem {
        own: &own[j],
        peer: None,
        p_t: scenario.bs[j].tx_power,
        noise: scenario.noise_power,
        precoder: opts.local.precoder,
        layout,
    };

    // Iteration 0: unpenalized proposals, no interference knowledge yet.
    let m = scenario.n_elements();
    let mut aps: Vec<ApState> = (0..2)
        .map(|j| {
            let obj = objective(&problem(j), None);
            let r = optimize(&obj, &opts.local, seed, None);
            ApState {
                id: j,
                users: members[j].clone(),
                proposal: r.config,
                beamformer: r.beamformer,
                dual: vec![C64::new(0.0, 0.0); m],
                local_sum_rate: r.sum_rate,
            }
        })
        .collect();

    let phasors = state_phasors(table);
    let mut trace = Vec::new();
    let mut residuals = Vec::new();
    let mut res = residual(&aps[0].proposal, &aps[1].proposal);
    for ap in &aps {
        trace.push(TraceRow {
            iter: 0,
            ap: ap.id,
            local_sum_rate: ap.local_sum_rate,
            residual: res,
        });
    }
    residuals.push(res);

    let mut rho = opts.rho;
    let mut best_res = res;
    let mut stale = 0;
    let mut iterations = 0;
    while res > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        // Consensus and dual step from the last exchange.
        let x: Vec<Vec<C64>> = aps
            .iter()
            .map(|ap| ap.proposal.states().iter().map(|&s| phasors[s]).collect())
            .collect();
        let z: Vec<C64> = (0..m)
            .map(|e| nearest(&phasors, (x[0][e] + aps[0].dual[e] + x[1][e] + aps[1].dual[e]) / 2.0))
            .collect();
        for (ap, xj) in aps.iter_mut().zip(&x) {
            for e in 0..m {
                ap.dual[e] += xj[e] - z[e];
            }
        }
        // Synchronous round: both update against the reports of the last one.
        let reported: Vec<DMatrix<C64>> = aps.iter().map(|ap| ap.beamformer.v.clone()).collect();
        aps = (0..2)
            .map(|j| {
                let p = LocalProblem {
                    peer: Some(PeerReport {
                        model: &predicted[j],
                        v: &reported[1 - j],
                    }),
                    ..problem(j)
                };
                local_update(&aps[j], &p, table, &z, rho, &opts.local)
            })
            .collect();
        res = residual(&aps[0].proposal, &aps[1].proposal);
        for ap in &aps {
            trace.push(TraceRow {
                iter: iterations,
                ap: ap.id,
                local_sum_rate: ap.local_sum_rate,
                residual: res,
            });
        }
        residuals.push(res);
        if res < best_res {
            best_res = res;
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                rho *= opts.rho_growth;
                stale = 0;
            }
        }
    }

    let proposals: Vec<PhaseConfig> = aps.iter().map(|ap| ap.proposal.clone()).collect();
    let config = majority(&proposals, table.len());
    let beamformers = cell_precoders(scenario, cells, &members, &config, opts.local.precoder);
    let users = evaluate(scenario, cells, &members, &config, &beamformers);
    Ok(NegotiationResult {
        config,
        beamformers,
        sum_rate: total(&users),
        users,
        trace,
        residuals,
        iterations,
        converged: res <= opts.tol,
    })
}

/// Sum rate over all users for `config` with every AP precoding on true CSI.
pub fn centralized_value(
    scenario: &Scenario,
    cells: &[ChannelSet],
    config: &PhaseConfig,
    precoder: PrecoderKind,
) -> Result<f64> {
    let members = check_cells(scenario)?;
    let bfs = cell_precoders(scenario, cells, &members, config, precoder);
    Ok(total(&evaluate(scenario, cells, &members, config, &bfs)))
}

/// Exhaustive centralized optimum with full CSI; ties keep the first
/// configuration in lexicographic order.
pub fn centralized_exhaustive(
    scenario: &Scenario,
    cells: &[ChannelSet],
    precoder: PrecoderKind,
) -> Result<(PhaseConfig, f64)> {
    let m = scenario.n_elements();
    let s = scenario.ios.table.len();
    let count = (s as f64).powi(m as i32);
    if count > crate::beamform::EXHAUSTIVE_LIMIT as f64 {
        return Err(Error::InstanceTooLarge {
            configurations: count,
            bound: crate::beamform::EXHAUSTIVE_LIMIT,
        });
    }
    let mut cfg = vec![0usize; m];
    let mut best = (cfg.clone(), centralized_value(scenario, cells, &PhaseConfig::new(cfg.clone()), precoder)?);
    'outer: loop {
        let mut i = m;
        loop {
            if i == 0 {
                break 'outer;
            }
            i -= 1;
            cfg[i] += 1;
            if cfg[i] < s {
                break;
            }
            cfg[i] = 0;
        }
        let v = centralized_value(scenario, cells, &PhaseConfig::new(cfg.clone()), precoder)?;
        if v > best.1 {
            best = (cfg.clone(), v);
        }
    }
    Ok((PhaseConfig::new(best.0), best.1))
}

/// Sum rate of a uniformly random configuration (stream `1 << 34`).
pub fn random_baseline(scenario: &Scenario, cells: &[ChannelSet], precoder: PrecoderKind, seed: u64) -> Result<f64> {
    let cfg = random_config(scenario.n_elements(), scenario.ios.table.len(), seed, 1 << 34);
    centralized_value(scenario, cells, &PhaseConfig::new(cfg), precoder)
}

/// Outcome with the surface removed: only direct links remain and each AP
/// precodes on them.
pub fn surface_off(scenario: &Scenario, cells: &[ChannelSet], precoder: PrecoderKind) -> Result<Vec<UserOutcome>> {
    let members = check_cells(scenario)?;
    let off: Vec<ChannelSet> = cells
        .iter()
        .map(|ch| {
            let mut ch = ch.clone();
            ch.active.fill(false);
            ch
        })
        .collect();
    let config = PhaseConfig::uniform(scenario.n_elements(), 0);
    let bfs = cell_precoders(scenario, &off, &members, &config, precoder);
    Ok(evaluate(scenario, &off, &members, &config, &bfs))
}

/// Empirical CDFs of per-user inter-cell interference (dBm), surface on
/// (negotiated) and off, at common sampled levels.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceCdf {
    pub levels_dbm: Vec<f64>,
    pub on: Vec<f64>,
    pub off: Vec<f64>,
    pub samples_on: Vec<f64>,
    pub samples_off: Vec<f64>,
}

/// Number of sampled CDF levels.
pub const CDF_LEVELS: usize = 50;

impl InterferenceCdf {
    /// CSV `interference_dbm,cdf_on,cdf_off`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("interference_dbm,cdf_on,cdf_off\n");
        for ((l, a), b) in self.levels_dbm.iter().zip(&self.on).zip(&self.off) {
            let _ = writeln!(out, "{l:.6},{a:.6},{b:.6}");
        }
        out
    }
}

fn ecdf(samples: &[f64], level: f64) -> f64 {
    samples.iter().filter(|&&x| x <= level).count() as f64 / samples.len().max(1) as f64
}

/// Monte Carlo over one channel draw per seed.
pub fn interference_cdf(scenario: &Scenario, opts: &NegotiationOptions, seeds: &[u64]) -> Result<InterferenceCdf> {
    use rayon::prelude::*;
    let per_trial: Vec<(Vec<f64>, Vec<f64>)> = seeds
        .par_iter()
        .map(|&s| {
            let cells = synthesize_cells(scenario, s);
            let on = negotiate_on(scenario, &cells, opts, s)?;
            let off = surface_off(scenario, &cells, opts.local.precoder)?;
            let dbm = |u: &[UserOutcome]| u.iter().map(|u| watts_to_dbm(u.interference)).collect::<Vec<_>>();
            Ok((dbm(&on.users), dbm(&off)))
        })
        .collect::<Result<_>>()?;
    let samples_on: Vec<f64> = per_trial.iter().flat_map(|t| t.0.iter().copied()).collect();
    let samples_off: Vec<f64> = per_trial.iter().flat_map(|t| t.1.iter().copied()).collect();
    let finite = || samples_on.iter().chain(&samples_off).copied().filter(|x| x.is_finite());
    let lo = finite().fold(f64::INFINITY, f64::min);
    let hi = finite().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (0.0, 0.0) };
    let levels_dbm: Vec<f64> = (0..CDF_LEVELS)
        .map(|i| lo + (hi - lo) * i as f64 / (CDF_LEVELS - 1) as f64)
        .collect();
    Ok(InterferenceCdf {
        on: levels_dbm.iter().map(|&l| ecdf(&samples_on, l)).collect(),
        off: levels_dbm.iter().map(|&l| ecdf(&samples_off, l)).collect(),
        levels_dbm,
        samples_on,
        samples_off,
    })
}
