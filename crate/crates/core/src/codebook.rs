//! Beam training without channel knowledge.
//!
//! The transmitter sweeps sector codewords aimed at points between itself
//! and the surface; the surface then identifies each user's best outgoing
//! lobe one bit per layer using two multi-lobe codewords per layer. Users
//! only ever report received power, so training sees no channel state.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::beamform::{precode, random_config, sinr_and_rates, Beamformer, PhaseConfig, PrecoderKind, Rates};
use crate::channel::{complex_normal, synthesize_channels, CascadeModel, ChannelSet, Scenario, Vec3};
use crate::element::{ElementStateTable, Side};
use crate::{Error, Result, C64};

/// Transmit codewords, one per section of the region between the
/// transmitter and the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorCodebook {
    /// Transmitter the codewords belong to.
    pub bs: usize,
    pub centers: Vec<Vec3>,
    /// Unit-norm steering vectors, entries of modulus `1/√N`.
    pub codewords: Vec<DVector<C64>>,
}

/// Centers of `n_b` sections tiling the horizontal box spanned by `a` and
/// `b`. A degenerate axis gives a 1-D split along the other; otherwise the
/// grid is as square as the factorization of `n_b` allows, with more cells
/// along the longer side. Heights are the midpoint of the two ends.
pub fn sector_centers(a: Vec3, b: Vec3, n_b: usize) -> Vec<Vec3> {
    let lo = a.inf(&b);
    let hi = a.sup(&b);
    let ext = hi - lo;
    let z = (a.z + b.z) / 2.0;
    let (nx, ny) = if ext.y <= 1e-9 {
        (n_b, 1)
    } else if ext.x <= 1e-9 {
        (1, n_b)
    } else {
        let small = (1..=n_b)
            .filter(|d| n_b % d == 0 && d * d <= n_b)
            .max()
            .unwrap_or(1);
        let large = n_b / small;
        if ext.x >= ext.y {
            (large, small)
        } else {
            (small, large)
        }
    };
    let mut out = Vec::with_capacity(n_b);
    for j in 0..ny {
        for i in 0..nx {
            out.push(Vec3::new(
                lo.x + ext.x * (i as f64 + 0.5) / nx as f64,
                lo.y + ext.y * (j as f64 + 0.5) / ny as f64,
                z,
            ));
        }
    }
    out
}

/// Sector codebook for transmitter `bs`: codeword `i` co-phases the array
/// toward section center `i`.
pub fn build_sector_codebook(scenario: &Scenario, bs: usize, n_b: usize) -> Result<SectorCodebook> {
    if n_b == 0 {
        return Err(Error::InsufficientSections { sections: 0, users: 1 });
    }
    let k = TAU / scenario.wavelength();
    let ants = scenario.bs_antenna_positions(bs);
    let norm = 1.0 / (ants.len() as f64).sqrt();
    let centers = sector_centers(scenario.bs[bs].position, scenario.ios.center, n_b);
    let codewords = centers
        .iter()
        .map(|c| DVector::from_iterator(ants.len(), ants.iter().map(|a| C64::from_polar(norm, k * (a - c).norm()))))
        .collect();
    Ok(SectorCodebook { bs, centers, codewords })
}

/// Direction cosine (along the surface column axis) of basic lobe `p`,
/// counted from zero.
pub fn lobe_direction(p: usize, n_g: usize) -> f64 {
    -1.0 + (2 * p + 1) as f64 / n_g as f64
}

/// Interval of direction cosines covered by lobe `p`.
pub fn lobe_coverage(p: usize, n_g: usize) -> (f64, f64) {
    (-1.0 + (2 * p) as f64 / n_g as f64, -1.0 + (2 * p + 2) as f64 / n_g as f64)
}

/// Single-lobe codewords and their binary hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct LobeCodebook {
    pub n_g: usize,
    /// `basic[p][m]`: unit-modulus response steering toward lobe `p`.
    pub basic: Vec<DVector<C64>>,
    /// `layers[s][b]`: multi-lobe codeword covering the lobes whose bit
    /// `s`, counted from the most significant, equals `b`.
    pub layers: Vec<[DVector<C64>; 2]>,
    /// Element offsets along the column axis, meters.
    pub offsets: Vec<f64>,
    pub wavenumber: f64,
}

/// Sweeps of single-element refinement applied to multi-lobe codewords.
const REFINE_SWEEPS: usize = 10;

/// Fractions of each lobe's coverage interval where refinement checks the
/// response.
const REFINE_SAMPLES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

impl LobeCodebook {
    /// Number of layers including the bottom layer of basic codewords.
    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    /// Lobes covered by branch `b` of layer `s` (both from zero).
    pub fn covered(&self, s: usize, b: usize) -> Vec<usize> {
        let shift = self.layers.len() - 1 - s;
        (0..self.n_g).filter(|p| (p >> shift) & 1 == b).collect()
    }
}

/// Builds the lobe codebook for elements at column offsets `x` (meters).
pub fn build_lobe_codebook(n_g: usize, x: &[f64], wavelength: f64) -> Result<LobeCodebook> {
    if n_g < 2 || !n_g.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n_g));
    }
    let k = TAU / wavelength;
    let basic: Vec<DVector<C64>> = (0..n_g)
        .map(|p| {
            let phi = lobe_direction(p, n_g);
            DVector::from_iterator(x.len(), x.iter().map(|&xm| C64::from_polar(1.0, -k * phi * xm)))
        })
        .collect();
    let bits = n_g.trailing_zeros() as usize;
    let layers = (0..bits)
        .map(|s| {
            let shift = bits - 1 - s;
            let branch = |b: usize| {
                let mut g = DVector::from_element(x.len(), C64::new(0.0, 0.0));
                let covered: Vec<usize> = (0..n_g).filter(|p| (p >> shift) & 1 == b).collect();
                let n = covered.len() as f64;
                for (i, &p) in covered.iter().enumerate() {
                    // Quadratic weight phases keep the sum close to constant
                    // modulus, so little is lost when only phase is kept.
                    let w = C64::from_polar(1.0, 2.0 * PI * (i * i) as f64 / n);
                    g += &basic[p] * w;
                }
                g.map(|z| if z.norm() > 1e-12 { z / z.norm() } else { C64::new(1.0, 0.0) })
            };
            [branch(0), branch(1)]
        })
        .collect();
    Ok(LobeCodebook {
        n_g,
        basic,
        layers,
        offsets: x.to_vec(),
        wavenumber: k,
    })
}

/// Estimated incident steering matrix, `M × K`: column `k` holds the
/// spherical-wave phase `e^{-j2πd/λ}` from section center `k` to each
/// element, matching the propagation phase convention of the channel model.
pub fn estimate_steering(centers: &[Vec3], elements: &[Vec3], wavelength: f64) -> DMatrix<C64> {
    let k = TAU / wavelength;
    DMatrix::from_fn(elements.len(), centers.len(), |m, c| {
        C64::from_polar(1.0, -k * (elements[m] - centers[c]).norm())
    })
}

/// Side whose responses are used to realize codewords: the one with the
/// larger mean amplitude.
pub fn projection_side(table: &ElementStateTable) -> Side {
    if table.mean_amplitude(Side::Refract) > table.mean_amplitude(Side::Reflect) {
        Side::Refract
    } else {
        Side::Reflect
    }
}

/// Relative cost difference below which two states count as tied.
const TIE_TOL: f64 = 1e-12;

/// Per element, the state minimizing `Σ_k |G[m,k] − q·Ĥ[m,k]|²`; ties go to
/// the lowest state index.
pub fn construct_q(targets: &DMatrix<C64>, steering: &DMatrix<C64>, table: &ElementStateTable) -> Result<PhaseConfig> {
    if targets.shape() != steering.shape() {
        return Err(Error::DimensionMismatch {
            what: "steering matrix entries",
            expected: targets.len(),
            got: steering.len(),
        });
    }
    let side = projection_side(table);
    let responses = table.coefficients(side);
    let states = (0..targets.nrows())
        .map(|m| {
            let mut best = (0, f64::INFINITY);
            for (s, q) in responses.iter().enumerate() {
                let cost: f64 = (0..targets.ncols())
                    .map(|k| (targets[(m, k)] - q * steering[(m, k)]).norm_sqr())
                    .sum();
                if cost < best.1 * (1.0 - TIE_TOL) {
                    best = (s, cost);
                }
            }
            best.0
        })
        .collect();
    Ok(PhaseConfig::new(states))
}

/// Measurement front end for training. It holds the channel privately and
/// only returns what a receiver could observe: a (noisy) power or a (noisy)
/// pilot for a given transmit vector, surface configuration and combiner.
pub struct Sounder<'a> {
    channels: &'a ChannelSet,
    table: &'a ElementStateTable,
    noise: f64,
    rng: ChaCha8Rng,
    soundings: usize,
}

impl<'a> Sounder<'a> {
    /// `noise` is the feedback noise power; zero makes every report exact.
    pub fn new(channels: &'a ChannelSet, table: &'a ElementStateTable, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 << 32);
        Self {
            channels,
            table,
            noise,
            rng,
            soundings: 0,
        }
    }

    pub fn n_users(&self) -> usize {
        self.channels.n_users()
    }

    pub fn n_tx(&self) -> usize {
        self.channels.n_tx()
    }

    pub fn n_rx(&self, user: usize) -> usize {
        self.channels.h_iu[user].nrows()
    }

    pub fn n_elements(&self) -> usize {
        self.channels.n_elements()
    }

    /// Number of measurements made so far.
    pub fn soundings(&self) -> usize {
        self.soundings
    }

    /// Complex baseband observation `wᴴ h̃ v + n`.
    pub fn pilot(&mut self, user: usize, config: &PhaseConfig, v: &DVector<C64>, w: &DVector<C64>) -> Result<C64> {
        self.soundings += 1;
        self.observe(user, config, v, w)
    }

    /// Reported received power `|wᴴ h̃ v + n|²`.
    pub fn power(&mut self, user: usize, config: &PhaseConfig, v: &DVector<C64>, w: &DVector<C64>) -> Result<f64> {
        Ok(self.pilot(user, config, v, w)?.norm_sqr())
    }

    /// One transmission heard by every user through an omnidirectional
    /// combiner; counts as a single sounding.
    pub fn broadcast_power(&mut self, config: &PhaseConfig, v: &DVector<C64>) -> Result<Vec<f64>> {
        self.soundings += 1;
        (0..self.n_users())
            .map(|k| Ok(self.observe(k, config, v, &omni(self.n_rx(k)))?.norm_sqr()))
            .collect()
    }

    fn observe(&mut self, user: usize, config: &PhaseConfig, v: &DVector<C64>, w: &DVector<C64>) -> Result<C64> {
        let ch = self.channels;
        let q = ch.q_diagonal(user, self.table, config)?;
        let hv = &ch.h_bi * v;
        let mut y = C64::new(0.0, 0.0);
        let dv = &ch.h_d[user] * v;
        for r in 0..w.len() {
            let mut acc = dv[r];
            for m in 0..q.len() {
                acc += ch.h_iu[user][(r, m)] * q[m] * hv[m];
            }
            y += w[r].conj() * acc;
        }
        if self.noise > 0.0 {
            y += complex_normal(&mut self.rng) * self.noise.sqrt();
        }
        Ok(y)
    }
}

/// Candidate receive combiners: the identity for one antenna, otherwise a
/// DFT grid with one beam per antenna.
pub fn combiner_candidates(n_r: usize) -> Vec<DVector<C64>> {
    let norm = 1.0 / (n_r as f64).sqrt();
    (0..n_r)
        .map(|i| {
            DVector::from_iterator(
                n_r,
                (0..n_r).map(|r| C64::from_polar(norm, TAU * (r * i) as f64 / n_r as f64)),
            )
        })
        .collect()
}

fn omni(n_r: usize) -> DVector<C64> {
    DVector::from_element(n_r, C64::new(1.0 / (n_r as f64).sqrt(), 0.0))
}

/// Point the incident wave on the surface is assumed to come from when
/// codewords are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteeringOrigin {
    /// The transmitter array driven by the selected sector codeword.
    #[default]
    Transmitter,
    /// The center of the selected section.
    SectionCenter,
}

impl SteeringOrigin {
    /// Estimated incident phases, `M × K`, for the selected sections.
    fn steering(self, scenario: &Scenario, sectors: &SectorCodebook, sections: &[usize]) -> DMatrix<C64> {
        let elements = scenario.element_positions();
        match self {
            Self::Transmitter => {
                let k = TAU / scenario.wavelength();
                let ants = scenario.bs_antenna_positions(sectors.bs);
                let mut h = DMatrix::from_fn(elements.len(), sections.len(), |m, c| {
                    let v = &sectors.codewords[sections[c]];
                    ants.iter()
                        .zip(v.iter())
                        .map(|(a, w)| {
                            let d = (elements[m] - a).norm();
                            C64::from_polar(1.0 / d, -k * d) * w
                        })
                        .sum::<C64>()
                });
                // Unit mean modulus per column; relative amplitudes are kept.
                for mut col in h.column_iter_mut() {
                    let mean = col.iter().map(|z| z.norm()).sum::<f64>() / col.len() as f64;
                    if mean > 0.0 {
                        col /= C64::new(mean, 0.0);
                    }
                }
                h
            }
            Self::SectionCenter => {
                let centers: Vec<Vec3> = sections.iter().map(|&i| sectors.centers[i]).collect();
                estimate_steering(&centers, &elements, scenario.wavelength())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOptions {
    pub n_sections: usize,
    pub n_lobes: usize,
    /// Additive noise power on every report; zero for noiseless training.
    pub feedback_noise: f64,
    pub precoder: PrecoderKind,
    pub origin: SteeringOrigin,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            n_sections: 4,
            n_lobes: 16,
            feedback_noise: 0.0,
            precoder: PrecoderKind::Zf,
            origin: SteeringOrigin::Transmitter,
        }
    }
}

/// One reported measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 0 for the sector sweep, `s` for surface layer `s`, depth for the
    /// combiner sweep.
    pub round: usize,
    pub codeword: usize,
    pub user: usize,
    pub power: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingResult {
    pub sections: Vec<usize>,
    pub lobes: Vec<usize>,
    pub combiners: Vec<usize>,
    /// Selected sector codewords, `N × K`.
    pub v_a: DMatrix<C64>,
    /// Sector and surface soundings.
    pub training_count: usize,
    /// Soundings spent choosing receive combiners.
    pub combiner_soundings: usize,
    pub trace: Vec<TraceRow>,
}

/// Surface configuration realizing lobe codeword `g` for user `k`.
fn realize(g: &DVector<C64>, steer: &DMatrix<C64>, k: usize, table: &ElementStateTable) -> Result<PhaseConfig> {
    let target = DMatrix::from_column_slice(g.len(), 1, g.as_slice());
    let h = DMatrix::from_column_slice(steer.nrows(), 1, steer.column(k).as_slice());
    construct_q(&target, &h, table)
}

/// Realizes branch `b` of layer `s` for user `k`, then improves the
/// projection element by element so that, under the estimated incidence,
/// the weakest covered direction beats the strongest uncovered one by the
/// widest margin. Only directions in lobes still open to this user (those
/// matching the bits decided so far, `prefix`) are checked. Coarse phase
/// tables otherwise leave quantization lobes that can outshine the
/// intended ones.
fn realize_layer(
    lobes: &LobeCodebook,
    s: usize,
    b: usize,
    prefix: usize,
    steer: &DMatrix<C64>,
    k: usize,
    table: &ElementStateTable,
) -> Result<PhaseConfig> {
    let mut states = realize(&lobes.layers[s][b], steer, k, table)?.states().to_vec();
    let coeffs = table.coefficients(projection_side(table));
    let covered = lobes.covered(s, b);
    // Sample directions with their coverage flag and far-field weights.
    let mut is_covered = Vec::new();
    let mut look: Vec<Vec<C64>> = Vec::new();
    let shift = lobes.layers.len() - s;
    let open = (0..lobes.n_g).filter(|p| s == 0 || p >> shift == prefix >> shift);
    for p in open {
        let (lo, hi) = lobe_coverage(p, lobes.n_g);
        for f in REFINE_SAMPLES {
            let phi = lo + f * (hi - lo);
            is_covered.push(covered.contains(&p));
            look.push(lobes.offsets.iter().map(|&x| C64::from_polar(1.0, lobes.wavenumber * phi * x)).collect());
        }
    }
    let mut af: Vec<C64> = look
        .iter()
        .map(|w| {
            states
                .iter()
                .enumerate()
                .map(|(m, &st)| coeffs[st] * steer[(m, k)] * w[m])
                .sum()
        })
        .collect();
    let margin = |af: &[C64]| {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (p, a) in af.iter().enumerate() {
            if is_covered[p] {
                lo = lo.min(a.norm_sqr());
            } else {
                hi = hi.max(a.norm_sqr());
            }
        }
        lo - hi
    };
    let mut best = margin(&af);
    let mut trial = af.clone();
    for _ in 0..REFINE_SWEEPS {
        let mut improved = false;
        for m in 0..states.len() {
            for cand in 0..coeffs.len() {
                if cand == states[m] {
                    continue;
                }
                let step = (coeffs[cand] - coeffs[states[m]]) * steer[(m, k)];
                for (p, t) in trial.iter_mut().enumerate() {
                    *t = af[p] + step * look[p][m];
                }
                let value = margin(&trial);
                if value > best + 1e-12 * best.abs().max(1.0) {
                    best = value;
                    states[m] = cand;
                    af.copy_from_slice(&trial);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(PhaseConfig::new(states))
}

/// Largest `|v_iᴴ v_j|` two selected sector codewords may have. Sections
/// lying on the same ray from the array give nearly identical codewords,
/// which would leave the beam-domain channel rank deficient.
const MAX_CODEWORD_CORRELATION: f64 = 0.8;

/// Greedy section choice over `reports` sorted by decreasing power: each
/// user takes its strongest free section whose codeword is nearly
/// orthogonal to those already chosen. Users left without one then take
/// their strongest free section.
fn select_sections(reports: &[(f64, usize, usize)], codewords: &[DVector<C64>], users: usize) -> Vec<usize> {
    let mut sections = vec![usize::MAX; users];
    let mut taken = vec![false; codewords.len()];
    for orthogonal in [true, false] {
        for &(_, k, i) in reports {
            if sections[k] != usize::MAX || taken[i] {
                continue;
            }
            let clear = !orthogonal
                || sections
                    .iter()
                    .filter(|&&j| j != usize::MAX)
                    .all(|&j| codewords[i].dotc(&codewords[j]).norm() <= MAX_CODEWORD_CORRELATION);
            if clear {
                sections[k] = i;
                taken[i] = true;
            }
        }
    }
    sections
}

/// Runs the three training rounds for every user of `sounder`.
pub fn beam_train(
    scenario: &Scenario,
    sounder: &mut Sounder<'_>,
    sectors: &SectorCodebook,
    lobes: &LobeCodebook,
    origin: SteeringOrigin,
    seed: u64,
) -> Result<TrainingResult> {
    let users = sounder.n_users();
    let n_b = sectors.codewords.len();
    if n_b < users {
        return Err(Error::InsufficientSections { sections: n_b, users });
    }
    let table = &scenario.ios.table;
    let m = sounder.n_elements();
    let mut trace = Vec::new();
    let start = sounder.soundings();

    // (a) sector sweep under a random surface configuration.
    let random_q = PhaseConfig::new(random_config(m, table.len(), seed, 1 << 33));
    let mut reports = Vec::with_capacity(users * n_b);
    for (i, v) in sectors.codewords.iter().enumerate() {
        let powers = sounder.broadcast_power(&random_q, v)?;
        for (k, &p) in powers.iter().enumerate() {
            trace.push(TraceRow { round: 0, codeword: i, user: k, power: p });
            reports.push((p, k, i));
        }
    }
    reports.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let sections = select_sections(&reports, &sectors.codewords, users);
    let steer = origin.steering(scenario, sectors, &sections);

    // (b) one bit of the lobe index per layer and user.
    let mut chosen = vec![0usize; users];
    for s in 0..lobes.layers.len() {
        for k in 0..users {
            let v = &sectors.codewords[sections[k]];
            let w = omni(sounder.n_rx(k));
            let mut p = [0.0; 2];
            for b in 0..2 {
                let q = realize_layer(lobes, s, b, chosen[k], &steer, k, table)?;
                p[b] = sounder.power(k, &q, v, &w)?;
                trace.push(TraceRow { round: s + 1, codeword: b, user: k, power: p[b] });
            }
            if p[1] > p[0] {
                chosen[k] |= 1 << (lobes.layers.len() - 1 - s);
            }
        }
    }
    let training_count = sounder.soundings() - start;

    // (c) receive combiner under the final configuration.
    let config = joint_config(lobes, &chosen, &steer, table)?;
    let depth = lobes.depth();
    let mut combiners = vec![0usize; users];
    let before = sounder.soundings();
    for k in 0..users {
        let n_r = sounder.n_rx(k);
        if n_r == 1 {
            continue;
        }
        let v = &sectors.codewords[sections[k]];
        let mut best = (0, f64::NEG_INFINITY);
        for (i, w) in combiner_candidates(n_r).iter().enumerate() {
            let p = sounder.power(k, &config, v, w)?;
            trace.push(TraceRow { round: depth, codeword: i, user: k, power: p });
            if p > best.1 {
                best = (i, p);
            }
        }
        combiners[k] = best.0;
    }
    let combiner_soundings = sounder.soundings() - before;

    let n = sounder.n_tx();
    let mut v_a = DMatrix::from_element(n, users, C64::new(0.0, 0.0));
    for (k, &i) in sections.iter().enumerate() {
        v_a.set_column(k, &sectors.codewords[i]);
    }
    Ok(TrainingResult {
        sections,
        lobes: chosen,
        combiners,
        v_a,
        training_count,
        combiner_soundings,
        trace,
    })
}

/// Surface configuration serving every user's chosen lobe at once.
fn joint_config(lobes: &LobeCodebook, chosen: &[usize], steer: &DMatrix<C64>, table: &ElementStateTable) -> Result<PhaseConfig> {
    let m = steer.nrows();
    let targets = DMatrix::from_fn(m, chosen.len(), |i, k| lobes.basic[chosen[k]][i]);
    construct_q(&targets, steer, table)
}

/// Reference search: sounds every basic lobe for user `k` through section
/// `section` and returns the strongest.
pub fn exhaustive_lobe(
    scenario: &Scenario,
    sounder: &mut Sounder<'_>,
    sectors: &SectorCodebook,
    lobes: &LobeCodebook,
    origin: SteeringOrigin,
    user: usize,
    section: usize,
) -> Result<usize> {
    let steer = origin.steering(scenario, sectors, &[section]);
    let w = omni(sounder.n_rx(user));
    let mut best = (0, f64::NEG_INFINITY);
    for (p, g) in lobes.basic.iter().enumerate() {
        let q = realize(g, &steer, 0, &scenario.ios.table)?;
        let power = sounder.power(user, &q, &sectors.codewords[section], &w)?;
        if power > best.1 {
            best = (p, power);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub training: TrainingResult,
    pub config: PhaseConfig,
    pub beamformer: Beamformer,
    pub rates: Rates,
    pub sum_rate: f64,
    /// Beam-domain pilots used to form the digital precoder.
    pub pilot_count: usize,
}

/// Full CSI-free procedure on an existing channel realization: training,
/// surface construction, a `K × K` beam-domain pilot round, digital
/// precoding and the resulting rates on the true channel.
pub fn run_pipeline(
    scenario: &Scenario,
    channels: &ChannelSet,
    opts: &TrainingOptions,
    seed: u64,
) -> Result<PipelineResult> {
    let table = &scenario.ios.table;
    let sectors = build_sector_codebook(scenario, 0, opts.n_sections)?;
    let lobes = build_lobe_codebook(opts.n_lobes, &scenario.element_col_offsets(), scenario.wavelength())?;
    let mut sounder = Sounder::new(channels, table, opts.feedback_noise, seed);
    let training = beam_train(scenario, &mut sounder, &sectors, &lobes, opts.origin, seed)?;

    let steer = opts.origin.steering(scenario, &sectors, &training.sections);
    let config = joint_config(&lobes, &training.lobes, &steer, table)?;

    let users = channels.n_users();
    let combiners: Vec<DVector<C64>> = (0..users)
        .map(|k| {
            let n_r = channels.h_iu[k].nrows();
            if n_r == 1 {
                omni(1)
            } else {
                combiner_candidates(n_r)[training.combiners[k]].clone()
            }
        })
        .collect();

    // Beam-domain channel B[k, j] = w_kᴴ h̃_k v_A[:, j], one pilot per entry.
    let before = sounder.soundings();
    let mut b = DMatrix::from_element(users, users, C64::new(0.0, 0.0));
    for k in 0..users {
        for j in 0..users {
            let v = training.v_a.column(j).into_owned();
            b[(k, j)] = sounder.pilot(k, &config, &v, &combiners[k])?;
        }
    }
    let pilot_count = sounder.soundings() - before;
    let p_t = scenario.bs[0].tx_power;
    let v_d = precode(opts.precoder, &b, p_t, scenario.noise_power);
    let mut v = &training.v_a * &v_d.v;
    let power: f64 = v.iter().map(|x| x.norm_sqr()).sum();
    if power > 0.0 {
        v *= C64::new((p_t / power).sqrt(), 0.0);
    }
    let beamformer = Beamformer { v };

    let model = CascadeModel::new(channels, table, &combiners)?;
    let h = model.effective(config.states());
    let rates = sinr_and_rates(&h, &beamformer, scenario.noise_power);
    Ok(PipelineResult {
        training,
        config,
        beamformer,
        sum_rate: rates.sum_rate,
        rates,
        pilot_count,
    })
}

/// [`run_pipeline`] on the channel realization drawn from `seed`.
pub fn codebook_pipeline(scenario: &Scenario, opts: &TrainingOptions, seed: u64) -> Result<PipelineResult> {
    let channels = synthesize_channels(scenario, seed);
    run_pipeline(scenario, &channels, opts, seed)
}

/// Soundings an exhaustive surface search would need: one per basic lobe
/// per user, after the same sector sweep.
pub fn exhaustive_training_count(n_b: usize, users: usize, n_g: usize) -> usize {
    n_b + users * n_g
}

/// Sounding count of the hierarchical scheme: the sector sweep plus two
/// codewords per layer per user. The sector sweep is shared by all users.
pub fn hierarchical_training_count(n_b: usize, users: usize, n_g: usize) -> usize {
    n_b + 2 * users * n_g.trailing_zeros() as usize
}

/// Received power in dBm for a power in watts.
pub fn watts_to_dbm(p: f64) -> f64 {
    10.0 * (p.max(1e-30) / 1e-3).log10()
}

/// Training trace as CSV: `round,codeword_id,user,rx_power_dbm`.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("round,codeword_id,user,rx_power_dbm\n");
    for r in trace {
        out.push_str(&format!("{},{},{},{:.6}\n", r.round, r.codeword, r.user, watts_to_dbm(r.power)));
    }
    out
}

/// Selections as CSV: `user,section,lobe,combiner`.
pub fn selections_csv(t: &TrainingResult) -> String {
    let mut out = String::from("user,section,lobe,combiner\n");
    for k in 0..t.sections.len() {
        out.push_str(&format!("{k},{},{},{}\n", t.sections[k], t.lobes[k], t.combiners[k]));
    }
    out
}

/// Direction cosine of `p` seen from the surface center along the column
/// axis, the coordinate lobes are indexed in.
pub fn direction_cosine(scenario: &Scenario, p: Vec3) -> f64 {
    let (u, _) = scenario.surface_axes();
    let d = p - scenario.ios.center;
    d.dot(&u) / d.norm()
}

/// Lobe whose coverage contains direction cosine `phi`.
pub fn lobe_of(phi: f64, n_g: usize) -> usize {
    let p = ((phi + 1.0) / 2.0 * n_g as f64).floor();
    (p.max(0.0) as usize).min(n_g - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{BaseStation, PathlossMode, Surface, TableSource, User};
    use crate::element::ElementState;

    fn scenario(user: Vec3) -> Scenario {
        let lambda = crate::SPEED_OF_LIGHT / 3.6e9;
        Scenario {
            bs: vec![BaseStation {
                position: Vec3::new(1.2, 0.6, 0.0),
                n_antennas: 4,
                antenna_spacing: lambda / 2.0,
                tx_power: 0.1,
                beamwidth_deg: 60.0,
                array_axis: None,
            }],
            ios: Surface {
                center: Vec3::zeros(),
                normal: Vec3::x(),
                rows: 2,
                cols: 8,
                row_pitch: lambda / 2.0,
                col_pitch: lambda / 2.0,
                table: ElementStateTable::phase_grid(2, 0.6, 0.6, 1.0).unwrap(),
                table_source: TableSource::Prototype,
                active_rows: None,
            },
            users: vec![User {
                position: user,
                n_antennas: 1,
                direct_blocked: true,
                cell: 0,
            }],
            carrier_hz: 3.6e9,
            noise_power: 1e-13,
            kappa: f64::INFINITY,
            radiation_exponent: 3.0,
            pathloss_mode: PathlossMode::Scatter,
            wall_loss_db: 0.0,
        }
    }

    #[test]
    fn sector_midpoints() {
        let c = sector_centers(Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0), 2);
        assert_eq!(c.len(), 2);
        assert!((c[0].x - 2.5).abs() < 1e-12 && (c[1].x - 7.5).abs() < 1e-12);
        let one = sector_centers(Vec3::new(0.0, 0.0, 2.0), Vec3::new(4.0, 2.0, 0.0), 1);
        assert!((one[0] - Vec3::new(2.0, 1.0, 1.0)).norm() < 1e-12);
        // 2-D boxes: cells tile without overlap.
        let c = sector_centers(Vec3::zeros(), Vec3::new(6.0, 2.0, 0.0), 6);
        assert_eq!(c.len(), 6);
        assert!((c[0] - Vec3::new(1.0, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn sector_codewords_are_unit_modulus() {
        let s = scenario(Vec3::new(10.0, 1.0, 0.0));
        let book = build_sector_codebook(&s, 0, 4).unwrap();
        for w in &book.codewords {
            assert!(w.iter().all(|z| (z.norm() - 0.5).abs() < 1e-12));
            assert!((w.norm() - 1.0).abs() < 1e-12);
        }
        assert!(build_sector_codebook(&s, 0, 0).is_err());
    }

    #[test]
    fn lobe_geometry() {
        assert!((lobe_direction(0, 8) + 0.875).abs() < 1e-15);
        assert!((lobe_direction(7, 8) - 0.875).abs() < 1e-15);
        assert_eq!(lobe_coverage(0, 8), (-1.0, -0.75));
        for n_g in [2, 4, 8, 16] {
            assert_eq!(lobe_coverage(0, n_g).0, -1.0);
            assert!((lobe_coverage(n_g - 1, n_g).1 - 1.0).abs() < 1e-15);
            for p in 1..n_g {
                assert_eq!(lobe_coverage(p - 1, n_g).1, lobe_coverage(p, n_g).0);
            }
        }
        assert_eq!(lobe_of(-1.0, 8), 0);
        assert_eq!(lobe_of(1.0, 8), 7);
        assert_eq!(lobe_of(lobe_direction(5, 8), 8), 5);
    }

    #[test]
    fn hierarchy_shape() {
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.04).collect();
        let book = build_lobe_codebook(8, &x, 0.083).unwrap();
        assert_eq!(book.depth(), 4);
        assert_eq!(book.layers.len(), 3);
        assert_eq!(book.covered(0, 1), vec![4, 5, 6, 7]);
        assert_eq!(book.covered(2, 1), vec![1, 3, 5, 7]);
        for s in 0..3 {
            let mut all = book.covered(s, 0);
            all.extend(book.covered(s, 1));
            all.sort();
            assert_eq!(all, (0..8).collect::<Vec<_>>());
        }
        for g in book.basic.iter().chain(book.layers.iter().flatten()) {
            assert!(g.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
        assert!(matches!(build_lobe_codebook(6, &x, 0.083), Err(Error::NotPowerOfTwo(6))));
        assert!(build_lobe_codebook(1, &x, 0.083).is_err());
    }

    #[test]
    fn steering_phases() {
        let lambda = 0.1;
        let e = [Vec3::new(0.0, 0.3, 0.1)];
        let h = estimate_steering(&e, &e, lambda);
        assert!((h[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-12);
        // Moving the center one wavelength further along the ray.
        let c = Vec3::new(1.0, 2.0, 0.5);
        let dir = (c - e[0]).normalize();
        let a = estimate_steering(&[c], &e, lambda)[(0, 0)];
        let b = estimate_steering(&[c + dir * lambda], &e, lambda)[(0, 0)];
        assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn steering_matches_distances() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = || Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let elements: Vec<Vec3> = (0..4).map(|_| p()).collect();
        let centers = [p(), p()];
        let h = estimate_steering(&centers, &elements, 0.05);
        for m in 0..4 {
            for k in 0..2 {
                let d = ((elements[m].x - centers[k].x).powi(2)
                    + (elements[m].y - centers[k].y).powi(2)
                    + (elements[m].z - centers[k].z).powi(2))
                .sqrt();
                let want = C64::new((TAU * d / 0.05).cos(), -(TAU * d / 0.05).sin());
                assert!((h[(m, k)] - want).norm() < 1e-9);
            }
        }
    }

    fn binary_table() -> ElementStateTable {
        ElementStateTable::new(vec![
            ElementState::new(1.0, 0.0, 0.0, 0.0),
            ElementState::new(1.0, PI, 0.0, 0.0),
        ])
        .unwrap()
    }

    #[test]
    fn construct_q_nearest_and_ties() {
        let t = binary_table();
        let one = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let near = DMatrix::from_element(1, 1, C64::from_polar(1.0, 10f64.to_radians()));
        assert_eq!(construct_q(&near, &one, &t).unwrap().states(), &[0]);
        let far = DMatrix::from_element(1, 1, C64::from_polar(1.0, 170f64.to_radians()));
        assert_eq!(construct_q(&far, &one, &t).unwrap().states(), &[1]);
        let tie = DMatrix::from_element(1, 1, C64::new(0.0, 1.0));
        assert_eq!(construct_q(&tie, &one, &t).unwrap().states(), &[0]);
        assert!(construct_q(&DMatrix::zeros(2, 1), &one, &t).is_err());
    }

    #[test]
    fn construct_q_matches_enumeration() {
        let t = ElementStateTable::prototype();
        let coeffs = t.coefficients(projection_side(&t));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g = DMatrix::from_fn(5, 2, |_, _| complex_normal(&mut rng));
            let h = DMatrix::from_fn(5, 2, |_, _| complex_normal(&mut rng));
            let cost = |states: &[usize]| -> f64 {
                (0..5)
                    .flat_map(|m| (0..2).map(move |k| (m, k)))
                    .map(|(m, k)| (g[(m, k)] - coeffs[states[m]] * h[(m, k)]).norm_sqr())
                    .sum()
            };
            let best = (0..1usize << 5)
                .map(|bits| (0..5).map(|m| (bits >> m) & 1).collect::<Vec<_>>())
                .map(|s| cost(&s))
                .fold(f64::INFINITY, f64::min);
            let q = construct_q(&g, &h, &t).unwrap();
            assert!((cost(q.states()) - best).abs() < 1e-12);
        }
    }

    #[test]
    fn counts() {
        assert_eq!(hierarchical_training_count(4, 1, 16) - 4, 8);
        assert_eq!(exhaustive_training_count(4, 1, 16) - 4, 16);
        assert_eq!(hierarchical_training_count(4, 2, 8), 4 + 12);
    }

    #[test]
    fn training_is_deterministic_and_counted() {
        let s = scenario(Vec3::new(8.0, 3.0, 0.0));
        let opts = TrainingOptions {
            n_lobes: 8,
            ..TrainingOptions::default()
        };
        let a = codebook_pipeline(&s, &opts, 3).unwrap();
        let b = codebook_pipeline(&s, &opts, 3).unwrap();
        assert_eq!(a.training.lobes, b.training.lobes);
        assert_eq!(a.training.sections, b.training.sections);
        assert_eq!(a.sum_rate, b.sum_rate);
        assert_eq!(a.training.training_count, hierarchical_training_count(4, 1, 8));
        assert_eq!(a.pilot_count, 1);
        assert!(a.sum_rate > 0.0);
        let csv = trace_csv(&a.training.trace);
        assert!(csv.starts_with("round,codeword_id,user,rx_power_dbm\n"));
        assert_eq!(csv.lines().count(), a.training.trace.len() + 1);
        assert!(selections_csv(&a.training).starts_with("user,section,lobe,combiner\n0,"));
    }

    #[test]
    fn too_few_sections() {
        let mut s = scenario(Vec3::new(8.0, 3.0, 0.0));
        s.users.push(s.users[0].clone());
        let opts = TrainingOptions {
            n_sections: 1,
            ..TrainingOptions::default()
        };
        assert!(matches!(
            codebook_pipeline(&s, &opts, 0),
            Err(Error::InsufficientSections { sections: 1, users: 2 })
        ));
    }

    #[test]
    fn reports_are_power_only() {
        let s = scenario(Vec3::new(8.0, 3.0, 0.0));
        let ch = synthesize_channels(&s, 1);
        let mut snd = Sounder::new(&ch, &s.ios.table, 0.0, 1);
        let cfg = PhaseConfig::uniform(s.ios.rows * s.ios.cols, 0);
        let v = DVector::from_element(4, C64::new(0.5, 0.0));
        let w = omni(1);
        let p = snd.power(0, &cfg, &v, &w).unwrap();
        let y = snd.pilot(0, &cfg, &v, &w).unwrap();
        assert!((p - y.norm_sqr()).abs() <= 1e-12 * p);
        assert_eq!(snd.soundings(), 2);
    }
}
