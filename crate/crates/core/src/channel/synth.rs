use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::propagation::{effective_area_mask, hop_amplitude, radiation_gain_toward};
use super::scenario::{PathlossMode, Scenario};
use crate::beamform::PhaseConfig;
use crate::element::{ElementStateTable, Side};
use crate::{Error, Result, C64};

/// All propagation links seen from one transmitter.
///
/// Link vectors are stored as received-signal rows: the effective channel
/// of user `k` is `h_d[k] + h_iu[k] · diag(q_k) · h_bi`, with no further
/// conjugation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Transmitter to surface, `M × N`.
    pub h_bi: DMatrix<C64>,
    /// Surface to user `k`, `N_r × M`.
    pub h_iu: Vec<DMatrix<C64>>,
    /// Direct transmitter to user `k`, `N_r × N`; zero when blocked.
    pub h_d: Vec<DMatrix<C64>>,
    /// Incidence radiation gain per element.
    pub gain_in: Vec<f64>,
    /// Departure radiation gain per user, per element.
    pub gain_out: Vec<Vec<f64>>,
    /// Effective-area and absorber mask.
    pub active: Vec<bool>,
    /// Which side of the surface each user is on, relative to the transmitter.
    pub sides: Vec<Side>,
}

impl ChannelSet {
    pub fn n_elements(&self) -> usize {
        self.h_bi.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.h_bi.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.h_iu.len()
    }

    /// `√(G_in·G_out)` times the mask, the geometric part of a `Q` entry.
    pub fn element_weight(&self, k: usize, m: usize) -> f64 {
        if self.active[m] {
            (self.gain_in[m] * self.gain_out[k][m]).sqrt()
        } else {
            0.0
        }
    }

    /// Diagonal of `Q` for user `k`.
    pub fn q_diagonal(&self, k: usize, table: &ElementStateTable, config: &PhaseConfig) -> Result<Vec<C64>> {
        config.check(self.n_elements(), table)?;
        Ok(config
            .states()
            .iter()
            .enumerate()
            .map(|(m, &s)| table.states()[s].coefficient(self.sides[k]) * self.element_weight(k, m))
            .collect())
    }

    /// Keeps only the listed users.
    pub fn select_users(&self, users: &[usize]) -> ChannelSet {
        ChannelSet {
            h_bi: self.h_bi.clone(),
            h_iu: users.iter().map(|&k| self.h_iu[k].clone()).collect(),
            h_d: users.iter().map(|&k| self.h_d[k].clone()).collect(),
            gain_in: self.gain_in.clone(),
            gain_out: users.iter().map(|&k| self.gain_out[k].clone()).collect(),
            active: self.active.clone(),
            sides: users.iter().map(|&k| self.sides[k]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h_bi.iter().all(|v| v.is_finite())
            && self.h_iu.iter().flat_map(|h| h.iter()).all(|v| v.is_finite())
            && self.h_d.iter().flat_map(|h| h.iter()).all(|v| v.is_finite())
    }
}

fn rician_weights(kappa: f64) -> (f64, f64) {
    if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        ((kappa / (kappa + 1.0)).sqrt(), (1.0 / (kappa + 1.0)).sqrt())
    }
}

/// Circularly-symmetric complex Gaussian with unit variance.
pub(crate) fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Which random components to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fading {
    /// Rician mix of geometric line-of-sight and i.i.d. scattering.
    Rician,
    /// Line-of-sight only, as a transmitter would predict from positions.
    LosOnly,
}

/// Channels from transmitter 0. See [`synthesize_for`].
pub fn synthesize_channels(scenario: &Scenario, seed: u64) -> ChannelSet {
    synthesize_for(scenario, 0, seed, Fading::Rician)
}

/// One [`ChannelSet`] per transmitter, sharing the surface-to-user draws.
pub fn synthesize_cells(scenario: &Scenario, seed: u64) -> Vec<ChannelSet> {
    (0..scenario.bs.len())
        .map(|j| synthesize_for(scenario, j, seed, Fading::Rician))
        .collect()
}

/// Draws every link seen from transmitter `bs`.
///
/// The scattering components come from independent ChaCha streams of
/// `seed`: stream 0 for surface-to-user links (shared by all transmitters)
/// and stream `1 + bs` for the transmitter's own links, so the result is a
/// pure function of `(scenario, bs, seed)`.
pub fn synthesize_for(scenario: &Scenario, bs: usize, seed: u64, fading: Fading) -> ChannelSet {
    let lambda = scenario.wavelength();
    let k_wave = TAU / lambda;
    let (w_los, w_nlos) = match fading {
        Fading::Rician => rician_weights(scenario.kappa),
        Fading::LosOnly => (1.0, 0.0),
    };
    let los = |d: f64| C64::from_polar(w_los, -k_wave * d);
    let mode = scenario.pathloss_mode;
    let p = scenario.radiation_exponent;
    let normal = scenario.ios.normal;

    let elems = scenario.element_positions();
    let tx_center = scenario.bs[bs].position;
    let tx = scenario.bs_antenna_positions(bs);
    let m_count = elems.len();

    let mut user_rng = ChaCha8Rng::seed_from_u64(seed);
    user_rng.set_stream(0);
    let mut tx_rng = ChaCha8Rng::seed_from_u64(seed);
    tx_rng.set_stream(1 + bs as u64);

    let nlos = |rng: &mut ChaCha8Rng| {
        let g = complex_normal(rng);
        if w_nlos == 0.0 {
            C64::new(0.0, 0.0)
        } else {
            g * w_nlos
        }
    };

    let h_bi = DMatrix::from_fn(m_count, tx.len(), |_, _| C64::new(0.0, 0.0));
    let mut h_bi = h_bi;
    for m in 0..m_count {
        for (n, a) in tx.iter().enumerate() {
            let d = (elems[m] - a).norm();
            let amp = match mode {
                PathlossMode::Scatter => hop_amplitude(d, lambda),
                PathlossMode::Lens => 1.0,
            };
            h_bi[(m, n)] = (los(d) + nlos(&mut tx_rng)) * amp;
        }
    }

    let mut h_iu = Vec::with_capacity(scenario.users.len());
    let mut h_d = Vec::with_capacity(scenario.users.len());
    let mut gain_out = Vec::with_capacity(scenario.users.len());
    let mut sides = Vec::with_capacity(scenario.users.len());
    for (k, user) in scenario.users.iter().enumerate() {
        let rx = scenario.user_antenna_positions(k);
        let mut hiu = DMatrix::from_element(rx.len(), m_count, C64::new(0.0, 0.0));
        for (r, b) in rx.iter().enumerate() {
            for m in 0..m_count {
                let d2 = (elems[m] - b).norm();
                let amp = match mode {
                    PathlossMode::Scatter => hop_amplitude(d2, lambda),
                    PathlossMode::Lens => {
                        let d1 = (elems[m] - tx_center).norm();
                        hop_amplitude(d1 + d2, lambda)
                    }
                };
                hiu[(r, m)] = (los(d2) + nlos(&mut user_rng)) * amp;
            }
        }
        let gain = scenario.direct_link_gain(bs, k);
        let mut hd = DMatrix::from_element(rx.len(), tx.len(), C64::new(0.0, 0.0));
        for (r, b) in rx.iter().enumerate() {
            for (n, a) in tx.iter().enumerate() {
                // Always draw so the stream layout does not depend on blockage.
                let g = nlos(&mut tx_rng);
                if gain > 0.0 {
                    let d = (b - a).norm();
                    hd[(r, n)] = (los(d) + g) * hop_amplitude(d, lambda) * gain;
                }
            }
        }
        h_iu.push(hiu);
        h_d.push(hd);
        gain_out.push(
            elems
                .iter()
                .map(|e| radiation_gain_toward(*e, normal, user.position, p))
                .collect(),
        );
        sides.push(scenario.side_from(bs, user.position));
    }

    let gain_in = elems
        .iter()
        .map(|e| radiation_gain_toward(*e, normal, tx_center, p))
        .collect();
    let mask = effective_area_mask(scenario, bs, scenario.bs[bs].beamwidth_deg.to_radians());
    let rows = scenario.row_mask();
    let active = mask.iter().zip(&rows).map(|(a, b)| *a && *b).collect();

    ChannelSet {
        h_bi,
        h_iu,
        h_d,
        gain_in,
        gain_out,
        active,
        sides,
    }
}

/// Effective channel of every user, `N_r × N` each:
/// `h_d + h_iu · Q · h_bi` with `Q` built from `config` on the user's side.
pub fn cascaded_channel(
    channels: &ChannelSet,
    table: &ElementStateTable,
    config: &PhaseConfig,
) -> Result<Vec<DMatrix<C64>>> {
    (0..channels.n_users())
        .map(|k| {
            let q = DMatrix::from_diagonal(&DVector::from_vec(channels.q_diagonal(k, table, config)?));
            Ok(&channels.h_d[k] + &channels.h_iu[k] * q * &channels.h_bi)
        })
        .collect()
}

/// Omnidirectional combiner `1/√N_r` on every receive antenna.
pub fn omni_combiner(n_r: usize) -> DVector<C64> {
    DVector::from_element(n_r, C64::new(1.0 / (n_r as f64).sqrt(), 0.0))
}

pub fn omni_combiners(channels: &ChannelSet) -> Vec<DVector<C64>> {
    channels.h_iu.iter().map(|h| omni_combiner(h.nrows())).collect()
}

/// The channel after combining, factored for fast single-element updates:
/// row `k` of the effective channel is
/// `direct_k + Σ_m coeff(side_k, s_m) · terms_k[m, :]`.
#[derive(Debug, Clone)]
pub struct CascadeModel {
    pub users: Vec<UserCascade>,
    coeffs: [Vec<C64>; 2],
    n_tx: usize,
    n_elements: usize,
}

#[derive(Debug, Clone)]
pub struct UserCascade {
    pub side: Side,
    /// `w^H h_d`, length `N`.
    pub direct: DVector<C64>,
    /// `M × N`; row `m` is `(w^H h_iu[:, m]) · √(G_in G_out) · h_bi[m, :]`.
    pub terms: DMatrix<C64>,
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Reflect => 0,
        Side::Refract => 1,
    }
}

impl CascadeModel {
    pub fn new(
        channels: &ChannelSet,
        table: &ElementStateTable,
        combiners: &[DVector<C64>],
    ) -> Result<Self> {
        if combiners.len() != channels.n_users() {
            return Err(Error::DimensionMismatch {
                what: "combiners",
                expected: channels.n_users(),
                got: combiners.len(),
            });
        }
        let m_count = channels.n_elements();
        let n = channels.n_tx();
        let mut users = Vec::with_capacity(combiners.len());
        for (k, w) in combiners.iter().enumerate() {
            if w.len() != channels.h_iu[k].nrows() {
                return Err(Error::DimensionMismatch {
                    what: "combiner length",
                    expected: channels.h_iu[k].nrows(),
                    got: w.len(),
                });
            }
            let wh = w.adjoint();
            let direct = (&wh * &channels.h_d[k]).transpose();
            let folded = &wh * &channels.h_iu[k];
            let mut terms = channels.h_bi.clone();
            for m in 0..m_count {
                let scale = folded[(0, m)] * channels.element_weight(k, m);
                for j in 0..n {
                    terms[(m, j)] *= scale;
                }
            }
            users.push(UserCascade {
                side: channels.sides[k],
                direct,
                terms,
            });
        }
        Ok(Self {
            users,
            coeffs: [table.coefficients(Side::Reflect), table.coefficients(Side::Refract)],
            n_tx: n,
            n_elements: m_count,
        })
    }

    pub fn omni(channels: &ChannelSet, table: &ElementStateTable) -> Self {
        Self::new(channels, table, &omni_combiners(channels)).expect("omni combiners match")
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn n_states(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn coefficient(&self, k: usize, state: usize) -> C64 {
        self.coeffs[side_index(self.users[k].side)][state]
    }

    /// `K × N` effective channel for a full configuration.
    pub fn effective(&self, states: &[usize]) -> DMatrix<C64> {
        let mut h = DMatrix::from_element(self.users.len(), self.n_tx, C64::new(0.0, 0.0));
        for (k, u) in self.users.iter().enumerate() {
            for j in 0..self.n_tx {
                h[(k, j)] = u.direct[j];
            }
            for (m, &s) in states.iter().enumerate() {
                let c = self.coefficient(k, s);
                if c == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..self.n_tx {
                    h[(k, j)] += c * u.terms[(m, j)];
                }
            }
        }
        h
    }

    /// Updates `h` in place for element `m` switching from `from` to `to`.
    pub fn apply_switch(&self, h: &mut DMatrix<C64>, m: usize, from: usize, to: usize) {
        for (k, u) in self.users.iter().enumerate() {
            let delta = self.coefficient(k, to) - self.coefficient(k, from);
            for j in 0..self.n_tx {
                h[(k, j)] += delta * u.terms[(m, j)];
            }
        }
    }
}
