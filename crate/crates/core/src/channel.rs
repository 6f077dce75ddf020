//! Scenario configuration and Rician channel generation.
//!
//! Geometry: the BS sits at the origin and the IRS at distance `D` along the
//! x-axis. Both carry half-wavelength uniform linear arrays parallel to the
//! y-axis, so the BS-IRS line-of-sight path is broadside at both ends. Users
//! lie on a half-circle of radius `r` centred on the IRS; user `k` sees the
//! IRS array at angle `pi * k / (K + 1)` from the array axis.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Default reference path gain at 1 m (-30 dB).
pub const DEFAULT_REF_GAIN: f64 = 1e-3;

/// All parameters of one simulated deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// BS antennas.
    pub m: usize,
    /// Single-antenna users.
    pub k: usize,
    /// IRS elements.
    pub n: usize,
    /// Discrete phase levels per element.
    pub l: usize,
    /// Per-user minimum SINR, linear.
    pub gamma: Vec<f64>,
    /// Per-user noise variance in watts.
    pub sigma2: Vec<f64>,
    /// BS-IRS distance in meters.
    pub bs_irs_distance: f64,
    /// Radius of the user half-circle around the IRS, meters.
    pub user_radius: f64,
    /// Path gain at the 1 m reference distance, linear.
    #[serde(default = "default_ref_gain")]
    pub ref_gain: f64,
    pub alpha_bi: f64,
    pub alpha_iu: f64,
    pub beta_bi: f64,
    pub beta_iu: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ref_gain() -> f64 {
    DEFAULT_REF_GAIN
}

/// Converts dB to a linear ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

/// Converts watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts * 1000.0).log10()
}

impl ScenarioConfig {
    /// Small instance that GBD and the exhaustive oracle both handle in
    /// well under a second.
    pub fn desk() -> Self {
        let k = 2;
        Self {
            m: 3,
            k,
            n: 4,
            l: 2,
            gamma: vec![db_to_linear(10.0); k],
            sigma2: vec![dbm_to_watts(-117.0); k],
            bs_irs_distance: 25.0,
            user_radius: 10.0,
            ref_gain: DEFAULT_REF_GAIN,
            alpha_bi: 2.2,
            alpha_iu: 2.8,
            beta_bi: 1.0,
            beta_iu: 1.0,
            seed: 0,
        }
    }

    /// Full-size setup (M=6, K=4, N=64, L=4). Exact GBD at this
    /// size is far beyond desk scale.
    pub fn full_scale() -> Self {
        let k = 4;
        Self {
            m: 6,
            k,
            n: 64,
            l: 4,
            gamma: vec![db_to_linear(10.0); k],
            sigma2: vec![dbm_to_watts(-117.0); k],
            ..Self::desk()
        }
    }

    /// Sets every user's SINR target to `db` decibels.
    pub fn set_gamma_db(&mut self, db: f64) {
        self.gamma = vec![db_to_linear(db); self.k];
    }

    /// Resizes the per-user vectors after changing `k`, repeating the first
    /// entry.
    pub fn set_users(&mut self, k: usize) {
        let g = self.gamma.first().copied().unwrap_or(1.0);
        let s = self.sigma2.first().copied().unwrap_or(1.0);
        self.k = k;
        self.gamma = vec![g; k];
        self.sigma2 = vec![s; k];
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m == 0 || self.k == 0 || self.n == 0 || self.l == 0 {
            return bad(format!(
                "m, k, n, l must be >= 1 (got m={}, k={}, n={}, l={})",
                self.m, self.k, self.n, self.l
            ));
        }
        if self.gamma.len() != self.k || self.sigma2.len() != self.k {
            return bad(format!(
                "gamma and sigma2 need {} entries (got {} and {})",
                self.k,
                self.gamma.len(),
                self.sigma2.len()
            ));
        }
        let positive = [
            ("bs_irs_distance", self.bs_irs_distance),
            ("user_radius", self.user_radius),
            ("ref_gain", self.ref_gain),
            ("beta_bi", self.beta_bi),
            ("beta_iu", self.beta_iu),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite (got {v})"));
            }
        }
        for (name, v) in [("alpha_bi", self.alpha_bi), ("alpha_iu", self.alpha_iu)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if let Some(g) = self.gamma.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return bad(format!("gamma entries must be positive (got {g})"));
        }
        if let Some(s) = self.sigma2.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return bad(format!("sigma2 entries must be positive (got {s})"));
        }
        Ok(())
    }

    /// Number of distinct phase selections, `L^N`, saturating.
    pub fn selection_count(&self) -> u128 {
        (self.l as u128).checked_pow(self.n as u32).unwrap_or(u128::MAX)
    }
}

/// Large-scale power gain `L0 * d^(-alpha)`.
pub fn path_gain(d: f64, alpha: f64, ref_gain: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be positive (got {d})")));
    }
    if !(ref_gain > 0.0) {
        return Err(Error::Domain(format!("reference gain must be positive (got {ref_gain})")));
    }
    Ok(ref_gain * d.powf(-alpha))
}

/// Half-wavelength ULA response; `angle` is measured from the array axis.
/// Entries have unit modulus.
pub fn ula_response(len: usize, angle: f64) -> CVec {
    let c = angle.cos();
    CVec::from_fn(len, |i, _| Complex64::from_polar(1.0, PI * i as f64 * c))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserPlacement {
    /// Angle from the IRS array axis, radians.
    pub angle: f64,
    /// Distance to the IRS, meters.
    pub distance: f64,
}

/// Spreads the users evenly over a half-circle around the IRS, excluding
/// the end points.
pub fn place_users(cfg: &ScenarioConfig) -> Vec<UserPlacement> {
    let k = cfg.k;
    (1..=k)
        .map(|i| UserPlacement {
            angle: PI * i as f64 / (k as f64 + 1.0),
            distance: cfg.user_radius,
        })
        .collect()
}

/// Realized channels for one scenario draw.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    /// BS to IRS, N x M.
    pub f: CMat,
    /// IRS to user k, length N each; the received signal is `h_k^H Phi F W s`.
    pub h: Vec<CVec>,
}

impl ChannelSet {
    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    pub fn m(&self) -> usize {
        self.f.ncols()
    }

    pub fn k(&self) -> usize {
        self.h.len()
    }

    pub fn is_finite(&self) -> bool {
        self.f.iter().all(|z| z.re.is_finite() && z.im.is_finite())
            && self
                .h
                .iter()
                .flat_map(|v| v.iter())
                .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

// RNG sub-stream ids. Streams are independent ChaCha sequences under one seed.
const STREAM_BS_IRS: u64 = 0;
const STREAM_USER_BASE: u64 = 1;

fn cn01(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn rician_weights(beta: f64) -> (f64, f64) {
    ((beta / (1.0 + beta)).sqrt(), (1.0 / (1.0 + beta)).sqrt())
}

/// Draws `F` and every `h_k`. Entries are drawn element-major, so a draw
/// with `N` elements is a prefix of the same seed's draw with more elements.
pub fn generate_channels(cfg: &ScenarioConfig) -> Result<ChannelSet> {
    cfg.validate()?;
    let (n, m) = (cfg.n, cfg.m);

    // BS-IRS: broadside at both arrays.
    let a_irs = ula_response(n, PI / 2.0);
    let a_bs = ula_response(m, PI / 2.0);
    let los = &a_irs * a_bs.adjoint();
    let gain = path_gain(cfg.bs_irs_distance, cfg.alpha_bi, cfg.ref_gain)?.sqrt();
    let (w_los, w_nlos) = rician_weights(cfg.beta_bi);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_BS_IRS);
    let mut f = CMat::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            f[(i, j)] = (los[(i, j)] * w_los + cn01(&mut rng) * w_nlos) * gain;
        }
    }

    let (w_los, w_nlos) = rician_weights(cfg.beta_iu);
    let h = place_users(cfg)
        .iter()
        .enumerate()
        .map(|(k, user)| -> Result<CVec> {
            let gain = path_gain(user.distance, cfg.alpha_iu, cfg.ref_gain)?.sqrt();
            let los = ula_response(n, user.angle);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(STREAM_USER_BASE + k as u64);
            Ok(CVec::from_fn(n, |i, _| {
                (los[i] * w_los + cn01(&mut rng) * w_nlos) * gain
            }))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ChannelSet { f, h })
}

/// On-disk form of a [`ChannelSet`]: JSON with complex entries stored as
/// `[re, im]` pairs, `f` row-major (one array per IRS element) and `h` one
/// array per user.
#[derive(Debug, Serialize, Deserialize)]
pub struct ChannelFile {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub f: Vec<Vec<[f64; 2]>>,
    pub h: Vec<Vec<[f64; 2]>>,
}

impl From<&ChannelSet> for ChannelFile {
    fn from(c: &ChannelSet) -> Self {
        let pair = |z: &Complex64| [z.re, z.im];
        ChannelFile {
            n: c.n(),
            m: c.m(),
            k: c.k(),
            f: (0..c.n())
                .map(|i| (0..c.m()).map(|j| pair(&c.f[(i, j)])).collect())
                .collect(),
            h: c.h.iter().map(|v| v.iter().map(pair).collect()).collect(),
        }
    }
}

impl TryFrom<ChannelFile> for ChannelSet {
    type Error = Error;

    fn try_from(file: ChannelFile) -> Result<Self> {
        let shape_err = || Error::Parse("channel file dimensions do not match its header".into());
        if file.f.len() != file.n || file.h.len() != file.k {
            return Err(shape_err());
        }
        if file.f.iter().any(|row| row.len() != file.m) || file.h.iter().any(|v| v.len() != file.n) {
            return Err(shape_err());
        }
        let f = CMat::from_fn(file.n, file.m, |i, j| {
            let [re, im] = file.f[i][j];
            Complex64::new(re, im)
        });
        let h = file
            .h
            .iter()
            .map(|v| CVec::from_iterator(file.n, v.iter().map(|&[re, im]| Complex64::new(re, im))))
            .collect();
        let set = ChannelSet { f, h };
        if !set.is_finite() {
            return Err(Error::Parse("channel file contains non-finite entries".into()));
        }
        Ok(set)
    }
}

impl ChannelSet {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&ChannelFile::from(self)).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ChannelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_gain_examples() {
        assert_eq!(path_gain(1.0, 2.2, 1e-3).unwrap(), 1e-3);
        // 1e-3 * 25^-2.2, evaluated independently in extended precision.
        let g = path_gain(25.0, 2.2, 1e-3).unwrap();
        assert!((g - 8.404_888_974_092_055e-7).abs() < 1e-19);
        assert_eq!(path_gain(10.0, 0.0, 7.0).unwrap(), 7.0);
    }

    #[test]
    fn path_gain_rejects_nonpositive_distance() {
        assert!(matches!(path_gain(0.0, 2.0, 1e-3), Err(Error::Domain(_))));
        assert!(matches!(path_gain(-3.0, 2.0, 1e-3), Err(Error::Domain(_))));
    }

    #[test]
    fn users_on_half_circle() {
        let mut cfg = ScenarioConfig::desk();
        cfg.set_users(1);
        let p = place_users(&cfg);
        assert!((p[0].angle - PI / 2.0).abs() < 1e-15);

        cfg.set_users(2);
        let p = place_users(&cfg);
        assert!((p[0].angle - PI / 3.0).abs() < 1e-15);
        assert!((p[1].angle - 2.0 * PI / 3.0).abs() < 1e-15);

        cfg.set_users(7);
        assert!(place_users(&cfg).iter().all(|u| u.distance == cfg.user_radius));
    }

    #[test]
    fn same_seed_same_channels() {
        let cfg = ScenarioConfig { seed: 42, ..ScenarioConfig::desk() };
        let a = generate_channels(&cfg).unwrap();
        let b = generate_channels(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_channels(&ScenarioConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn large_rician_factor_gives_los_channel() {
        let cfg = ScenarioConfig { beta_bi: 1e12, n: 5, m: 3, ..ScenarioConfig::desk() };
        let ch = generate_channels(&cfg).unwrap();
        let g = path_gain(cfg.bs_irs_distance, cfg.alpha_bi, cfg.ref_gain).unwrap().sqrt();
        let los = ula_response(5, PI / 2.0) * ula_response(3, PI / 2.0).adjoint();
        let err = (&ch.f - los * Complex64::from(g)).map(|z| z.norm()).max();
        assert!(err < 1e-5 * g);
        // Rank one: every 2x2 minor vanishes.
        let f = &ch.f;
        let minor = f[(0, 0)] * f[(1, 1)] - f[(0, 1)] * f[(1, 0)];
        assert!(minor.norm() < 1e-5 * g * g);
    }

    #[test]
    fn los_entries_unit_modulus() {
        for angle in [0.1, 0.7, PI / 2.0, 2.9] {
            assert!(ula_response(9, angle).iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn rayleigh_variance_matches_path_gain() {
        let base = ScenarioConfig { beta_bi: 1e-300, n: 1, m: 1, ..ScenarioConfig::desk() };
        let pg = path_gain(base.bs_irs_distance, base.alpha_bi, base.ref_gain).unwrap();
        let draws = 20_000;
        let mean: f64 = (0..draws)
            .map(|s| {
                let ch = generate_channels(&ScenarioConfig { seed: s, ..base.clone() }).unwrap();
                ch.f[(0, 0)].norm_sqr()
            })
            .sum::<f64>()
            / draws as f64;
        assert!((mean / pg - 1.0).abs() < 0.05, "mean {mean} vs {pg}");
    }

    #[test]
    fn element_prefix_consistency() {
        let small = ScenarioConfig { n: 3, seed: 9, ..ScenarioConfig::desk() };
        let big = ScenarioConfig { n: 6, ..small.clone() };
        let a = generate_channels(&small).unwrap();
        let b = generate_channels(&big).unwrap();
        assert_eq!(a.f, b.f.rows(0, 3).into_owned());
        for k in 0..a.k() {
            assert_eq!(a.h[k], b.h[k].rows(0, 3).into_owned());
        }
    }

    #[test]
    fn json_round_trip() {
        let ch = generate_channels(&ScenarioConfig { seed: 3, ..ScenarioConfig::desk() }).unwrap();
        let back = ChannelSet::from_json(&ch.to_json().unwrap()).unwrap();
        assert_eq!(ch, back);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = ScenarioConfig::desk();
        cfg.l = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::desk();
        cfg.gamma.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::desk();
        cfg.sigma2[0] = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::desk();
        cfg.beta_iu = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dbm_conversion() {
        assert!((watts_to_dbm(1.0) - 30.0).abs() < 1e-12);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
    }
}
