//! Phase-selection encoding, the lifted channel `Ĥ = ΘF`, and the convex
//! reformulation pieces (Schur-complement lifting of `X = BĤW` and the
//! second-order-cone form of the SINR constraints).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::{CMat, CVec, ChannelSet};
use crate::error::{Error, Result};

/// The `L` available reflection coefficients `exp(j l 2π/L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseVector {
    pub theta: CVec,
}

impl PhaseVector {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

pub fn build_phase_vector(l: usize) -> Result<PhaseVector> {
    if l == 0 {
        return Err(Error::Domain("phase level count must be >= 1".into()));
    }
    let step = 2.0 * PI / l as f64;
    let theta = CVec::from_fn(l, |i, _| match (4 * i) % (4 * l) {
        // Exact values at the quarter turns keep L = 2, 4 free of rounding.
        0 => Complex64::new(1.0, 0.0),
        x if x == l => Complex64::new(0.0, 1.0),
        x if x == 2 * l => Complex64::new(-1.0, 0.0),
        x if x == 3 * l => Complex64::new(0.0, -1.0),
        _ => Complex64::from_polar(1.0, step * i as f64),
    });
    Ok(PhaseVector { theta })
}

/// One phase level per IRS element; the compressed form of the one-hot
/// matrix `B`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhaseSelection {
    pub levels: Vec<usize>,
}

impl PhaseSelection {
    pub fn new(levels: Vec<usize>, l: usize) -> Result<Self> {
        if let Some((n, &v)) = levels.iter().enumerate().find(|(_, &v)| v >= l) {
            return Err(Error::Domain(format!(
                "level {v} of element {n} out of range for L = {l}"
            )));
        }
        Ok(Self { levels })
    }

    pub fn zeros(n: usize) -> Self {
        Self { levels: vec![0; n] }
    }

    pub fn n(&self) -> usize {
        self.levels.len()
    }

    /// The `n`-th selection in lexicographic order (element 0 most
    /// significant).
    pub fn from_index(mut index: u128, n: usize, l: usize) -> Self {
        let mut levels = vec![0; n];
        for slot in levels.iter_mut().rev() {
            *slot = (index % l as u128) as usize;
            index /= l as u128;
        }
        Self { levels }
    }

    pub fn to_index(&self, l: usize) -> u128 {
        self.levels.iter().fold(0u128, |acc, &v| acc * l as u128 + v as u128)
    }

    /// One-hot rows `b_n`, N x L.
    pub fn one_hot(&self, l: usize) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n(), l);
        for (n, &v) in self.levels.iter().enumerate() {
            b[(n, v)] = 1.0;
        }
        b
    }

    /// The block selection matrix `B`, N x NL.
    pub fn selection_matrix(&self, l: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut b = DMatrix::zeros(n, n * l);
        for (i, &v) in self.levels.iter().enumerate() {
            b[(i, i * l + v)] = 1.0;
        }
        b
    }

    pub fn display(&self) -> String {
        self.levels.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
    }
}

/// Diagonal of `Φ = BΘ` for a selection.
pub fn expand_selection(sel: &PhaseSelection, l: usize) -> Result<CVec> {
    let phase = build_phase_vector(l)?;
    let sel = PhaseSelection::new(sel.levels.clone(), l)?;
    Ok(CVec::from_iterator(sel.n(), sel.levels.iter().map(|&v| phase.theta[v])))
}

/// Maps each diagonal entry of `Φ` to the nearest of the `L` levels.
pub fn recover_levels(phi: &CVec, l: usize) -> Result<PhaseSelection> {
    let phase = build_phase_vector(l)?;
    let levels = phi
        .iter()
        .map(|z| {
            (0..l)
                .min_by(|&a, &b| {
                    let da = (z - phase.theta[a]).norm();
                    let db = (z - phase.theta[b]).norm();
                    da.total_cmp(&db)
                })
                .unwrap_or(0)
        })
        .collect();
    Ok(PhaseSelection { levels })
}

/// Quantities derived from one channel realization and level count.
#[derive(Clone, Debug)]
pub struct ReformulatedData {
    pub phase: PhaseVector,
    /// NL x N, block diagonal with `θ` in each column block.
    pub theta: CMat,
    /// NL x M.
    pub hhat: CMat,
    /// N x L; entry `(n, l)` is the squared norm of row `nL + l` of `Ĥ`.
    pub hbar: DMatrix<f64>,
    pub channels: ChannelSet,
    pub l: usize,
}

pub fn build_reformulated(channels: &ChannelSet, l: usize) -> Result<ReformulatedData> {
    let phase = build_phase_vector(l)?;
    let (n, m) = (channels.n(), channels.m());
    let mut theta = CMat::zeros(n * l, n);
    for i in 0..n {
        for j in 0..l {
            theta[(i * l + j, i)] = phase.theta[j];
        }
    }
    let hhat = &theta * &channels.f;
    let hbar = DMatrix::<f64>::from_fn(n, l, |i, j| hhat.row(i * l + j).iter().map(|z| z.norm_sqr()).sum());

    for i in 0..n {
        let row_norm: f64 = (0..m).map(|j| channels.f[(i, j)].norm_sqr()).sum();
        for j in 0..l {
            if (hbar[(i, j)] - row_norm).abs() > 1e-12 * row_norm.max(f64::MIN_POSITIVE) {
                return Err(Error::Contract(format!(
                    "lifted row norm {} differs from channel row norm {row_norm} at element {i}",
                    hbar[(i, j)]
                )));
            }
        }
    }

    Ok(ReformulatedData { phase, theta, hhat, hbar, channels: channels.clone(), l })
}

impl ReformulatedData {
    pub fn n(&self) -> usize {
        self.channels.n()
    }

    pub fn m(&self) -> usize {
        self.channels.m()
    }

    pub fn k(&self) -> usize {
        self.channels.k()
    }

    /// `BĤ` (N x M) for a selection, formed by picking rows of `Ĥ`.
    pub fn selected_rows(&self, sel: &PhaseSelection) -> CMat {
        CMat::from_fn(self.n(), self.m(), |i, j| self.hhat[(i * self.l + sel.levels[i], j)])
    }

    /// `Σ_n h̄_nᵀ b_n`.
    pub fn hbar_sum(&self, sel: &PhaseSelection) -> f64 {
        sel.levels.iter().enumerate().map(|(i, &v)| self.hbar[(i, v)]).sum()
    }
}

/// Continuous design variables of the reformulated problem.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignPoint {
    /// N x K.
    pub x: CMat,
    /// M x K.
    pub w: CMat,
    /// N x N Hermitian.
    pub s: CMat,
    /// K x K Hermitian.
    pub t: CMat,
}

/// SINR of user `k` given the effective precoder columns `x`.
pub fn sinr(x: &CMat, h: &[CVec], sigma2: &[f64], k: usize) -> f64 {
    let hk = &h[k];
    let mut signal = 0.0;
    let mut interference = 0.0;
    for j in 0..x.ncols() {
        let g = hk.dotc(&x.column(j)).norm_sqr();
        if j == k {
            signal = g;
        } else {
            interference += g;
        }
    }
    signal / (interference + sigma2[k])
}

/// SINR of every user for beamformers `w` under the phase diagonal `phi`.
pub fn sinr_all(channels: &ChannelSet, phi: &CVec, w: &CMat, sigma2: &[f64]) -> Vec<f64> {
    let x = effective_precoder(channels, phi, w);
    (0..channels.k()).map(|k| sinr(&x, &channels.h, sigma2, k)).collect()
}

/// `X = ΦFW`.
pub fn effective_precoder(channels: &ChannelSet, phi: &CVec, w: &CMat) -> CMat {
    let mut pf = channels.f.clone();
    for (i, mut row) in pf.row_iter_mut().enumerate() {
        row *= phi[i];
    }
    pf * w
}

/// `Σ_k ‖w_k‖²`.
pub fn transmit_power(w: &CMat) -> f64 {
    w.iter().map(|z| z.norm_sqr()).sum()
}

/// The Hermitian block matrix `[[S, X, G], [Xᴴ, T, Wᴴ], [Gᴴ, W, I_M]]` with
/// `G = BĤ`.
pub fn lifting_block(g: &CMat, p: &DesignPoint) -> CMat {
    let (n, m) = (g.nrows(), g.ncols());
    let k = p.w.ncols();
    let d = n + k + m;
    let mut out = CMat::zeros(d, d);
    out.view_mut((0, 0), (n, n)).copy_from(&p.s);
    out.view_mut((0, n), (n, k)).copy_from(&p.x);
    out.view_mut((0, n + k), (n, m)).copy_from(g);
    out.view_mut((n, 0), (k, n)).copy_from(&p.x.adjoint());
    out.view_mut((n, n), (k, k)).copy_from(&p.t);
    out.view_mut((n, n + k), (k, m)).copy_from(&p.w.adjoint());
    out.view_mut((n + k, 0), (m, n)).copy_from(&g.adjoint());
    out.view_mut((n + k, n), (m, k)).copy_from(&p.w);
    out.view_mut((n + k, n + k), (m, m)).fill_with_identity();
    out
}

/// The point `X = GW, S = GGᴴ, T = WᴴW` at which the lifted constraints hold
/// with equality.
pub fn lifting_witness(g: &CMat, w: &CMat) -> DesignPoint {
    DesignPoint {
        x: g * w,
        w: w.clone(),
        s: g * g.adjoint(),
        t: w.adjoint() * w,
    }
}

/// `Tr(S) − Σ_n h̄_nᵀ b_n`.
pub fn trace_residual(data: &ReformulatedData, sel: &PhaseSelection, s: &CMat) -> f64 {
    s.trace().re - data.hbar_sum(sel)
}

/// Residuals of the SOC pair for user `k`: the cone residual (`≤ 0` when
/// satisfied) and the imaginary part of `h_kᴴ x_k` (must vanish).
pub fn sinr_to_soc(x: &CMat, h: &[CVec], gamma: &[f64], sigma2: &[f64], k: usize) -> (f64, f64) {
    let hk = &h[k];
    let mut interference = sigma2[k];
    for j in 0..x.ncols() {
        if j != k {
            interference += hk.dotc(&x.column(j)).norm_sqr();
        }
    }
    let s = hk.dotc(&x.column(k));
    (interference.sqrt() - s.re / gamma[k].sqrt(), s.im)
}

/// Rotates each column of `x` (and the matching column of `w`) so that
/// `h_kᴴ x_k` is real and nonnegative.
pub fn normalize_column_phases(x: &mut CMat, w: Option<&mut CMat>, h: &[CVec]) {
    let mut rotations = Vec::with_capacity(x.ncols());
    for k in 0..x.ncols() {
        let s = h[k].dotc(&x.column(k));
        let r = if s.norm() > 0.0 { s.conj() / s.norm() } else { Complex64::new(1.0, 0.0) };
        for z in x.column_mut(k).iter_mut() {
            *z *= r;
        }
        rotations.push(r);
    }
    if let Some(w) = w {
        for (k, r) in rotations.into_iter().enumerate() {
            for z in w.column_mut(k).iter_mut() {
                *z *= r;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channels, ScenarioConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn channels(n: usize, m: usize, k: usize, seed: u64) -> ChannelSet {
        let mut cfg = ScenarioConfig { n, m, seed, ..ScenarioConfig::desk() };
        cfg.set_users(k);
        generate_channels(&cfg).unwrap()
    }

    #[test]
    fn phase_vectors() {
        assert_eq!(build_phase_vector(1).unwrap().theta.as_slice(), &[c(1.0, 0.0)]);
        assert_eq!(build_phase_vector(2).unwrap().theta.as_slice(), &[c(1.0, 0.0), c(-1.0, 0.0)]);
        assert_eq!(
            build_phase_vector(4).unwrap().theta.as_slice(),
            &[c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)]
        );
        assert!(build_phase_vector(0).is_err());
        for l in 1..9 {
            let p = build_phase_vector(l).unwrap();
            for z in p.theta.iter() {
                assert!((z.norm() - 1.0).abs() < 1e-15);
                assert!((z.powu(l as u32) - 1.0).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn expand_examples() {
        let phi = expand_selection(&PhaseSelection::zeros(3), 4).unwrap();
        assert!(phi.iter().all(|z| *z == c(1.0, 0.0)));
        let phi = expand_selection(&PhaseSelection { levels: vec![1, 3] }, 4).unwrap();
        assert_eq!(phi.as_slice(), &[c(0.0, 1.0), c(0.0, -1.0)]);
        assert!(expand_selection(&PhaseSelection { levels: vec![4] }, 4).is_err());
    }

    #[test]
    fn expand_recover_round_trip() {
        for l in 1..6 {
            for idx in 0..(l as u128).pow(3) {
                let sel = PhaseSelection::from_index(idx, 3, l);
                assert_eq!(sel.to_index(l), idx);
                let phi = expand_selection(&sel, l).unwrap();
                assert_eq!(recover_levels(&phi, l).unwrap(), sel);
            }
        }
    }

    #[test]
    fn selection_matrix_times_theta_is_phi() {
        let ch = channels(4, 3, 2, 1);
        let data = build_reformulated(&ch, 4).unwrap();
        let sel = PhaseSelection { levels: vec![2, 0, 3, 1] };
        let b = sel.selection_matrix(4).map(|v| c(v, 0.0));
        let phi = expand_selection(&sel, 4).unwrap();
        let bt = &b * &data.theta;
        assert!((bt - CMat::from_diagonal(&phi)).map(|z| z.norm()).max() < 1e-15);
        for i in 0..4 {
            assert_eq!(sel.one_hot(4).row(i).sum(), 1.0);
        }
    }

    #[test]
    fn single_level_lifting_is_trivial() {
        let ch = channels(3, 2, 2, 5);
        let data = build_reformulated(&ch, 1).unwrap();
        assert_eq!(data.hhat, ch.f);
        assert_eq!(data.theta, CMat::identity(3, 3));
    }

    #[test]
    fn lifted_rows_match_phase_times_channel() {
        for seed in 0..20 {
            let ch = channels(5, 3, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = 2 + (seed as usize % 3);
            let data = build_reformulated(&ch, l).unwrap();
            let sel = PhaseSelection { levels: (0..5).map(|_| rng.gen_range(0..l)).collect() };
            let phi = expand_selection(&sel, l).unwrap();
            let b = sel.selection_matrix(l).map(|v| c(v, 0.0));
            let lhs = &b * &data.hhat;
            let rhs = CMat::from_diagonal(&phi) * &ch.f;
            assert!((&lhs - &rhs).map(|z| z.norm()).max() < 1e-12 * ch.f.map(|z| z.norm()).max());
            assert_eq!(data.selected_rows(&sel), lhs);
        }
    }

    #[test]
    fn hbar_equals_row_norms() {
        let ch = channels(4, 3, 2, 8);
        let data = build_reformulated(&ch, 4).unwrap();
        for i in 0..4 {
            // Row norm from the raw entries.
            let mut acc = 0.0;
            for j in 0..3 {
                let z = ch.f[(i, j)];
                acc += z.re * z.re + z.im * z.im;
            }
            for l in 0..4 {
                assert!((data.hbar[(i, l)] - acc).abs() <= 1e-13 * acc);
            }
        }
        let total: f64 = (0..4).map(|i| data.hbar[(i, 0)]).sum();
        for idx in 0..256u128 {
            let sel = PhaseSelection::from_index(idx, 4, 4);
            assert!((data.hbar_sum(&sel) - total).abs() <= 1e-12 * total);
        }
    }

    #[test]
    fn sinr_examples() {
        let h = vec![CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)])];
        let x = CMat::from_column_slice(2, 1, &[c(2.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(sinr(&x, &h, &[1.0], 0), 4.0);
        let x = CMat::from_column_slice(2, 1, &[c(0.0, 0.0), c(5.0, 1.0)]);
        assert_eq!(sinr(&x, &h, &[1.0], 0), 0.0);
    }

    #[test]
    fn sinr_homogeneity() {
        let ch = channels(3, 2, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = CMat::from_fn(3, 3, |_, _| c(rng.gen(), rng.gen()));
        let sigma2 = [0.3, 0.7, 1.1];
        let s = c(1.7, -0.4);
        let scaled: Vec<f64> = sigma2.iter().map(|v| v * s.norm_sqr()).collect();
        for k in 0..3 {
            let a = sinr(&x, &ch.h, &sigma2, k);
            let b = sinr(&(&x * s), &ch.h, &scaled, k);
            assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn transmit_power_examples() {
        assert_eq!(transmit_power(&CMat::zeros(3, 2)), 0.0);
        let w = CMat::from_column_slice(2, 1, &[c(3.0, 0.0), c(0.0, 4.0)]);
        assert_eq!(transmit_power(&w), 25.0);
        let u = CMat::from_column_slice(
            2,
            2,
            &[c(0.6, 0.0), c(0.0, 0.8), c(0.0, 0.8), c(0.6, 0.0)],
        );
        assert!((transmit_power(&u) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_beamformer_witness() {
        let ch = channels(3, 2, 2, 4);
        let data = build_reformulated(&ch, 2).unwrap();
        let g = data.selected_rows(&PhaseSelection::zeros(3));
        let p = lifting_witness(&g, &CMat::zeros(2, 2));
        assert_eq!(p.x, CMat::zeros(3, 2));
        assert_eq!(p.t, CMat::zeros(2, 2));
        let block = lifting_block(&g, &p);
        assert_eq!(block.view((3, 3), (2, 2)).into_owned(), CMat::zeros(2, 2));
    }

    #[test]
    fn soc_boundary_case() {
        let h = vec![CVec::from_vec(vec![c(1.0, 0.0)])];
        let (gamma, sigma2) = (3.0f64, 2.0f64);
        let x = CMat::from_element(1, 1, c((gamma * sigma2).sqrt(), 0.0));
        let (r, im) = sinr_to_soc(&x, &h, &[gamma], &[sigma2], 0);
        assert!(r.abs() < 1e-15);
        assert_eq!(im, 0.0);
    }

    #[test]
    fn column_rotation_keeps_sinr() {
        let ch = channels(3, 2, 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = CMat::from_fn(3, 2, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let sigma2 = [1e-3, 2e-3];
        let before: Vec<f64> = (0..2).map(|k| sinr(&x, &ch.h, &sigma2, k)).collect();
        normalize_column_phases(&mut x, None, &ch.h);
        for k in 0..2 {
            let s = ch.h[k].dotc(&x.column(k));
            assert!(s.im.abs() < 1e-15 * s.norm().max(1e-300) + 1e-30);
            assert!(s.re >= 0.0);
            assert!((sinr(&x, &ch.h, &sigma2, k) - before[k]).abs() < 1e-12 * before[k]);
        }
    }
}
