use nalgebra::DMatrix;

use crate::{Error, Result, C64};

/// Relative eigenvalue floor below which a Gram matrix is treated as singular.
const RANK_TOL: f64 = 1e-12;

/// Digital precoder, one column per user.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    pub v: DMatrix<C64>,
}

impl Beamformer {
    pub fn zeros(n_tx: usize, users: usize) -> Self {
        Self {
            v: DMatrix::from_element(n_tx, users, C64::new(0.0, 0.0)),
        }
    }

    /// Total transmit power `Tr(V Vᴴ)`.
    pub fn power(&self) -> f64 {
        self.v.iter().map(|x| x.norm_sqr()).sum()
    }

    pub fn column(&self, k: usize) -> Vec<C64> {
        self.v.column(k).iter().copied().collect()
    }

    fn scaled_to(mut v: DMatrix<C64>, p_t: f64) -> Self {
        let p: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        if p > 0.0 && p.is_finite() {
            v *= C64::new((p_t / p).sqrt(), 0.0);
        } else {
            v.fill(C64::new(0.0, 0.0));
        }
        Self { v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecoderKind {
    #[default]
    Zf,
    Mmse,
}

/// Numerical rank of `H Hᴴ` from its Hermitian eigenvalues.
fn gram_rank(gram: &DMatrix<C64>) -> usize {
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    eig.iter().filter(|&&e| e > RANK_TOL * max && max > 0.0).count()
}

/// Zero-forcing precoder `Hᴴ(HHᴴ)⁻¹`, scaled to total power `p_t`.
pub fn zero_forcing(h: &DMatrix<C64>, p_t: f64) -> Result<Beamformer> {
    let (k, n) = h.shape();
    if k > n {
        return Err(Error::TooManyUsers { users: k, antennas: n });
    }
    let hh = h.adjoint();
    let gram = h * &hh;
    let max_diag = gram.diagonal().iter().fold(0.0f64, |a, b| a.max(b.re));
    let rank_deficient = |gram: &DMatrix<C64>| Error::RankDeficient {
        rank: gram_rank(gram),
        users: k,
    };
    if !(max_diag > 0.0) {
        return Err(rank_deficient(&gram));
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| rank_deficient(&gram))?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, b| a.min(b.re));
    if min_pivot * min_pivot <= RANK_TOL * max_diag {
        return Err(rank_deficient(&gram));
    }
    let v = hh * chol.inverse();
    Ok(Beamformer::scaled_to(v, p_t))
}

/// Regularized zero forcing with regularizer `K·noise/p_t`, scaled to `p_t`.
pub fn mmse_precoder(h: &DMatrix<C64>, p_t: f64, noise: f64) -> Beamformer {
    let k = h.nrows();
    let hh = h.adjoint();
    let mut gram = h * &hh;
    let reg = k as f64 * noise / p_t;
    for i in 0..k {
        gram[(i, i)] += reg;
    }
    match gram.try_inverse() {
        Some(inv) => Beamformer::scaled_to(hh * inv, p_t),
        None => Beamformer::zeros(h.ncols(), k),
    }
}

/// Precoder used inside optimization loops: zero forcing falls back to the
/// regularized form when the channel is rank deficient.
pub fn precode(kind: PrecoderKind, h: &DMatrix<C64>, p_t: f64, noise: f64) -> Beamformer {
    match kind {
        PrecoderKind::Zf => zero_forcing(h, p_t).unwrap_or_else(|_| mmse_precoder(h, p_t, noise)),
        PrecoderKind::Mmse => mmse_precoder(h, p_t, noise),
    }
}

/// Per-user SINR and rate, plus the sum rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub sinr: Vec<f64>,
    pub rates: Vec<f64>,
    pub sum_rate: f64,
}

/// SINR `|h_k v_k|² / (Σ_{j≠k} |h_k v_j|² + noise_k)` for every row of `h`.
pub fn sinr_and_rates_with(h: &DMatrix<C64>, bf: &Beamformer, noise: &[f64]) -> Rates {
    let hv = h * &bf.v;
    let k = h.nrows();
    let mut sinr = Vec::with_capacity(k);
    for i in 0..k {
        let signal = hv[(i, i)].norm_sqr();
        let interference: f64 = (0..hv.ncols()).filter(|&j| j != i).map(|j| hv[(i, j)].norm_sqr()).sum();
        sinr.push(signal / (interference + noise[i]));
    }
    let rates: Vec<f64> = sinr.iter().map(|g| (1.0 + g).log2()).collect();
    let sum_rate = rates.iter().sum();
    Rates { sinr, rates, sum_rate }
}

pub fn sinr_and_rates(h: &DMatrix<C64>, bf: &Beamformer, noise: f64) -> Rates {
    sinr_and_rates_with(h, bf, &vec![noise; h.nrows()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_h(k: usize, n: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(k, n, |_, _| crate::channel::complex_normal(&mut rng))
    }

    #[test]
    fn identity_channel() {
        let h = DMatrix::<C64>::identity(2, 2);
        let bf = zero_forcing(&h, 2.0).unwrap();
        assert!((&bf.v - DMatrix::<C64>::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn diagonal_channel_is_nulled() {
        let mut h = DMatrix::<C64>::zeros(2, 2);
        h[(0, 0)] = C64::new(1.0, 0.0);
        h[(1, 1)] = C64::new(2.0, 0.0);
        let hv = &h * zero_forcing(&h, 3.0).unwrap().v;
        assert!(hv[(0, 1)].norm() < 1e-9 && hv[(1, 0)].norm() < 1e-9);
    }

    #[test]
    fn zf_matches_normal_equations() {
        let h = random_h(2, 4, 3);
        let bf = zero_forcing(&h, 1.5).unwrap();
        assert!((bf.power() - 1.5).abs() < 1e-9);
        // Solve (H Hᴴ) X = I by Cramer's rule for the 2×2 Gram.
        let g = &h * h.adjoint();
        let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
        let mut inv = DMatrix::<C64>::zeros(2, 2);
        inv[(0, 0)] = g[(1, 1)] / det;
        inv[(1, 1)] = g[(0, 0)] / det;
        inv[(0, 1)] = -g[(0, 1)] / det;
        inv[(1, 0)] = -g[(1, 0)] / det;
        let mut v = h.adjoint() * inv;
        let p: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        v *= C64::new((1.5 / p).sqrt(), 0.0);
        assert!((&v - &bf.v).norm() < 1e-9);
        let hv = &h * &bf.v;
        assert!(hv[(0, 1)].norm() < 1e-9 && hv[(1, 0)].norm() < 1e-9);
    }

    #[test]
    fn zf_rejects_rank_deficient() {
        let mut h = random_h(2, 4, 5);
        let row: Vec<C64> = h.row(0).iter().map(|x| x * 2.0).collect();
        for (j, x) in row.into_iter().enumerate() {
            h[(1, j)] = x;
        }
        assert!(matches!(
            zero_forcing(&h, 1.0),
            Err(Error::RankDeficient { rank: 1, users: 2 })
        ));
        assert!(matches!(
            zero_forcing(&random_h(3, 2, 1), 1.0),
            Err(Error::TooManyUsers { .. })
        ));
    }

    fn direction_gap(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (0..a.ncols())
            .map(|k| {
                let x = a.column(k);
                let y = b.column(k);
                let c = x.dotc(&y).norm() / (x.norm() * y.norm());
                1.0 - c
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn mmse_limits() {
        let h = random_h(2, 4, 9);
        let zf = zero_forcing(&h, 1.0).unwrap();
        assert!(direction_gap(&mmse_precoder(&h, 1.0, 1e-12).v, &zf.v) < 1e-6);
        let mf = Beamformer::scaled_to(h.adjoint(), 1.0);
        assert!(direction_gap(&mmse_precoder(&h, 1.0, 1e9).v, &mf.v) < 1e-6);
    }

    #[test]
    fn mmse_beats_zf_at_mid_snr() {
        for seed in 0..50 {
            let h = random_h(2, 2, seed);
            let noise = 0.5;
            let zf = sinr_and_rates(&h, &zero_forcing(&h, 1.0).unwrap(), noise).sum_rate;
            let mmse = sinr_and_rates(&h, &mmse_precoder(&h, 1.0, noise), noise).sum_rate;
            assert!(mmse >= zf - 1e-9, "seed {seed}: {mmse} < {zf}");
        }
    }

    #[test]
    fn rate_formula() {
        let h = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let bf = Beamformer { v: DMatrix::from_element(1, 1, C64::new(1.0, 0.0)) };
        let r = sinr_and_rates(&h, &bf, 1.0);
        assert!((r.sinr[0] - 1.0).abs() < 1e-15 && (r.rates[0] - 1.0).abs() < 1e-15);
        let r = sinr_and_rates(&h, &bf, 1.0 / 3.0);
        assert!((r.rates[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zf_removes_interference() {
        let h = random_h(2, 4, 21);
        let bf = zero_forcing(&h, 1.0).unwrap();
        let r = sinr_and_rates(&h, &bf, 0.1);
        let hv = &h * &bf.v;
        for k in 0..2 {
            let single = (1.0 + hv[(k, k)].norm_sqr() / 0.1).log2();
            assert!((r.rates[k] - single).abs() < 1e-9);
            assert!(hv[(k, 1 - k)].norm_sqr() < 1e-18);
        }
    }

    #[test]
    fn zero_channel_gives_zero_precoder() {
        let h = DMatrix::<C64>::zeros(2, 4);
        let bf = precode(PrecoderKind::Zf, &h, 1.0, 1e-3);
        assert_eq!(bf.power(), 0.0);
    }
}
