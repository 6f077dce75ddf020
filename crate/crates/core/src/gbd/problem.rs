//! Problem instance and the convex beamforming subproblems (fixed-phase
//! primal, l1 feasibility check, and the relaxed-selection program used by
//! the penalty-SCA baseline).
//!
//! All subproblems are assembled in normalized units: channels are divided
//! by their RMS entry and noise amplitudes by the largest one, so that the
//! interior-point tolerances are meaningful regardless of path loss.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::{generate_channels, CMat, CVec, ChannelSet, ScenarioConfig};
use crate::conic::duals::{
    duals_from_vector, DualBundle, LiftDims, LIFT_BLOCK, PHASE_BLOCK, SOC_BLOCK_PREFIX, TRACE_BLOCK,
};
use crate::conic::{
    embed_hermitian, hermitian_psd_rows, point_residuals, solve, sym_to_svec, AffineExpr, ComplexExpr,
    Cone, ConeProgram, ConicSettings, ConicSolution, ConicStatus, Layout, Residuals,
};
use crate::error::{Error, Result};
use crate::reformulation::{
    build_reformulated, expand_selection, normalize_column_phases, sinr_all, transmit_power,
    DesignPoint, PhaseSelection, ReformulatedData,
};

/// Unit conversions between physical and normalized quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaling {
    /// RMS entry of `F`.
    pub f_ref: f64,
    /// RMS entry of the stacked `h_k`.
    pub h_ref: f64,
    /// Largest noise amplitude `max_k σ_k`.
    pub s_ref: f64,
}

impl Scaling {
    /// Watts per normalized power unit.
    pub fn power(&self) -> f64 {
        let w = self.w_scale();
        w * w
    }

    /// Physical beamformer amplitude per normalized unit.
    pub fn w_scale(&self) -> f64 {
        self.s_ref / (self.f_ref * self.h_ref)
    }

    /// Physical effective precoder amplitude per normalized unit.
    pub fn x_scale(&self) -> f64 {
        self.s_ref / self.h_ref
    }
}

/// Default cap on the normalized power of the feasibility check. Noise
/// amplitudes and channel entries are of unit scale after normalization,
/// so feasible designs sit many orders of magnitude below it.
pub const DEFAULT_POWER_CAP: f64 = 1e6;

/// One channel realization with its QoS targets, ready for the solvers.
#[derive(Clone, Debug)]
pub struct Instance {
    /// Physical-unit data.
    pub data: ReformulatedData,
    pub gamma: Vec<f64>,
    pub sigma2: Vec<f64>,
    /// Normalized-unit data.
    pub scaled: ReformulatedData,
    /// Normalized noise amplitudes `σ_k / s_ref`.
    pub sigma_scaled: Vec<f64>,
    pub scale: Scaling,
    pub conic: ConicSettings,
    /// Bound on `Tr(T)` in the feasibility check, normalized units.
    pub power_cap: f64,
}

fn rms(values: impl Iterator<Item = Complex64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), z| (s + z.norm_sqr(), c + 1));
    (sum / count.max(1) as f64).sqrt()
}

impl Instance {
    pub fn new(channels: &ChannelSet, l: usize, gamma: &[f64], sigma2: &[f64]) -> Result<Self> {
        let k = channels.k();
        if gamma.len() != k || sigma2.len() != k {
            return Err(Error::InvalidConfig(format!(
                "need {k} SINR targets and noise powers, got {} and {}",
                gamma.len(),
                sigma2.len()
            )));
        }
        if gamma.iter().chain(sigma2).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("SINR targets and noise powers must be positive".into()));
        }
        if !channels.is_finite() {
            return Err(Error::InvalidConfig("channels contain non-finite entries".into()));
        }
        let f_ref = rms(channels.f.iter().copied());
        let h_ref = rms(channels.h.iter().flat_map(|v| v.iter().copied()));
        if !(f_ref > 0.0 && h_ref > 0.0) {
            return Err(Error::InvalidConfig("channels are identically zero".into()));
        }
        let s_ref = sigma2.iter().copied().fold(0.0, f64::max).sqrt();
        let scale = Scaling { f_ref, h_ref, s_ref };

        let scaled_channels = ChannelSet {
            f: channels.f.map(|z| z / f_ref),
            h: channels.h.iter().map(|v| v.map(|z| z / h_ref)).collect(),
        };
        Ok(Self {
            data: build_reformulated(channels, l)?,
            gamma: gamma.to_vec(),
            sigma2: sigma2.to_vec(),
            scaled: build_reformulated(&scaled_channels, l)?,
            sigma_scaled: sigma2.iter().map(|s| s.sqrt() / s_ref).collect(),
            scale,
            conic: ConicSettings::default(),
            power_cap: DEFAULT_POWER_CAP,
        })
    }

    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let ch = generate_channels(cfg)?;
        Self::new(&ch, cfg.l, &cfg.gamma, &cfg.sigma2)
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn m(&self) -> usize {
        self.data.m()
    }

    pub fn k(&self) -> usize {
        self.data.k()
    }

    pub fn l(&self) -> usize {
        self.data.l
    }

    pub fn dims(&self) -> LiftDims {
        LiftDims { n: self.n(), k: self.k(), m: self.m() }
    }

    pub fn check_selection(&self, sel: &PhaseSelection) -> Result<()> {
        if sel.n() != self.n() {
            return Err(Error::Domain(format!(
                "selection has {} elements, instance has {}",
                sel.n(),
                self.n()
            )));
        }
        PhaseSelection::new(sel.levels.clone(), self.l()).map(|_| ())
    }

    /// Physical SINR of every user for beamformers `w` under `sel`.
    pub fn achieved_sinr(&self, sel: &PhaseSelection, w: &CMat) -> Vec<f64> {
        let phi = expand_selection(sel, self.l()).expect("validated selection");
        sinr_all(&self.data.channels, &phi, w, &self.sigma2)
    }
}

/// What the subproblem minimizes.
#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    /// `Tr(T)`, equal to `Σ‖w_k‖²` at every optimum since the lifting
    /// block forces `T ⪰ WᴴW`.
    Power,
    /// `Σ λ_k` with the SINR cones relaxed by `λ_k ≥ 0` and `Tr(T)` capped
    /// at [`Instance::power_cap`].
    Slack,
    /// `Tr(T)` plus the linearized penalty `(1/μ) Σ (b − 2 b⁰ b + (b⁰)²)`.
    Penalized { mu: f64, anchor: DMatrix<f64> },
}

/// How the phase selection enters the program.
#[derive(Clone, Debug, PartialEq)]
pub enum SelectionMode {
    Fixed(PhaseSelection),
    /// Continuous `b ∈ [0,1]^{N×L}` with one-hot sums.
    Relaxed,
}

/// Variable offsets of an assembled subproblem.
#[derive(Clone, Debug)]
pub struct Vars {
    pub x: usize,
    pub w: usize,
    pub s: usize,
    pub t: usize,
    pub lambda: Option<usize>,
    pub b: Option<usize>,
    n: usize,
    m: usize,
    k: usize,
    l: usize,
}

impl Vars {
    fn x(&self, n: usize, k: usize) -> (usize, usize) {
        let i = self.x + 2 * (k * self.n + n);
        (i, i + 1)
    }

    fn w(&self, m: usize, k: usize) -> (usize, usize) {
        let i = self.w + 2 * (k * self.m + m);
        (i, i + 1)
    }

    pub fn b(&self, n: usize, l: usize) -> usize {
        self.b.expect("relaxed selection") + n * self.l + l
    }

    /// Entry `(i, j)` of a Hermitian variable matrix stored as `d` diagonal
    /// reals followed by `(re, im)` pairs of the strict upper triangle.
    fn herm(base: usize, d: usize, i: usize, j: usize) -> ComplexExpr {
        if i == j {
            return ComplexExpr { re: AffineExpr::var(base + i), im: AffineExpr::default() };
        }
        let (a, b, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
        // Position of (a, b) among strict-upper pairs in row-major order.
        let pos = a * d - a * (a + 1) / 2 + (b - a - 1);
        let re = base + d + 2 * pos;
        ComplexExpr { re: AffineExpr::var(re), im: AffineExpr::term(re + 1, sign) }
    }

    fn s(&self, i: usize, j: usize) -> ComplexExpr {
        Self::herm(self.s, self.n, i, j)
    }

    fn t(&self, i: usize, j: usize) -> ComplexExpr {
        Self::herm(self.t, self.k, i, j)
    }

    fn herm_value(x: &[f64], base: usize, d: usize) -> CMat {
        CMat::from_fn(d, d, |i, j| {
            let e = Self::herm(base, d, i, j);
            Complex64::new(e.re.eval(x), e.im.eval(x))
        })
    }
}

/// `Σ_n conj(h_n) x_{n,j}` as a complex expression.
fn inner(h: &CVec, v: &Vars, j: usize) -> ComplexExpr {
    let mut out = ComplexExpr::default();
    for n in 0..h.len() {
        let (a, b) = (h[n].re, h[n].im);
        let (xr, xi) = v.x(n, j);
        out.re.add_term(xr, a).add_term(xi, b);
        out.im.add_term(xi, a).add_term(xr, -b);
    }
    out
}

/// An assembled subproblem together with its variable map.
#[derive(Clone, Debug)]
pub struct Subproblem {
    pub program: ConeProgram,
    pub vars: Vars,
}

const SLACK_BLOCK: &str = "slack";
const CAP_BLOCK: &str = "power_cap";

pub fn build_subproblem(inst: &Instance, objective: &Objective, selection: &SelectionMode) -> Result<Subproblem> {
    let data = &inst.scaled;
    let (n, m, k, l) = (inst.n(), inst.m(), inst.k(), inst.l());
    if let SelectionMode::Fixed(sel) = selection {
        inst.check_selection(sel)?;
    }

    let mut layout = Layout::default();
    let x = layout.add("x", 2 * n * k);
    let w = layout.add("w", 2 * m * k);
    let s = layout.add("s", n * n);
    let t = layout.add("t", k * k);
    let lambda = matches!(objective, Objective::Slack).then(|| layout.add("lambda", k));
    let b = matches!(selection, SelectionMode::Relaxed).then(|| layout.add("b", n * l));
    let v = Vars { x, w, s, t, lambda, b, n, m, k, l };
    let mut p = ConeProgram::new(layout);

    match objective {
        Objective::Power => {
            for i in 0..k {
                p.objective[t + i] = 1.0;
            }
        }
        Objective::Slack => {
            let lam = lambda.unwrap();
            for i in 0..k {
                p.objective[lam + i] = 1.0;
            }
        }
        Objective::Penalized { mu, anchor } => {
            if !(*mu > 0.0) {
                return Err(Error::Domain(format!("penalty factor must be positive (got {mu})")));
            }
            if b.is_none() {
                return Err(Error::Contract("penalized objective needs a relaxed selection".into()));
            }
            for i in 0..k {
                p.objective[t + i] = 1.0;
            }
            for i in 0..n {
                for j in 0..l {
                    let a = anchor[(i, j)];
                    p.objective[v.b(i, j)] = (1.0 - 2.0 * a) / mu;
                    p.objective_constant += a * a / mu;
                }
            }
        }
    }

    // SINR cones: ‖(h_kᴴx_j for j ≠ k, σ_k)‖ ≤ Re(h_kᴴx_k)/√γ_k (+ λ_k).
    let h = &data.channels.h;
    for user in 0..k {
        let mut head = inner(&h[user], &v, user).re.scaled(1.0 / inst.gamma[user].sqrt());
        if let Some(lam) = lambda {
            head.add_term(lam + user, 1.0);
        }
        let mut rows = vec![head];
        for j in (0..k).filter(|&j| j != user) {
            let e = inner(&h[user], &v, j);
            rows.push(e.re);
            rows.push(e.im);
        }
        rows.push(AffineExpr::constant(inst.sigma_scaled[user]));
        p.push(&format!("{SOC_BLOCK_PREFIX}{user}"), Cone::Soc, rows);
    }

    p.push(
        PHASE_BLOCK,
        Cone::Zero,
        (0..k).map(|user| inner(&h[user], &v, user).im.scaled(-1.0)).collect(),
    );

    // Lifting block [[S, X, BĤ], [Xᴴ, T, Wᴴ], [(BĤ)ᴴ, W, I]].
    let g_entry = |i: usize, c: usize| -> ComplexExpr {
        match selection {
            SelectionMode::Fixed(sel) => ComplexExpr::constant(data.hhat[(i * l + sel.levels[i], c)]),
            SelectionMode::Relaxed => {
                let mut e = ComplexExpr::default();
                for j in 0..l {
                    let z = data.hhat[(i * l + j, c)];
                    e.re.add_term(v.b(i, j), z.re);
                    e.im.add_term(v.b(i, j), z.im);
                }
                e
            }
        }
    };
    let d = n + k + m;
    let rows = hermitian_psd_rows(d, |i, j| {
        if j < n {
            v.s(i, j)
        } else if j < n + k {
            if i < n {
                let (re, im) = v.x(i, j - n);
                ComplexExpr { re: AffineExpr::var(re), im: AffineExpr::var(im) }
            } else {
                v.t(i - n, j - n)
            }
        } else if i < n {
            g_entry(i, j - n - k)
        } else if i < n + k {
            // (Wᴴ)_{i−n, j−n−k} = conj(W_{j−n−k, i−n})
            let (re, im) = v.w(j - n - k, i - n);
            ComplexExpr { re: AffineExpr::var(re), im: AffineExpr::term(im, -1.0) }
        } else {
            ComplexExpr::constant(Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0))
        }
    });
    p.push(LIFT_BLOCK, Cone::Psd(2 * d), rows);

    // Σ h̄ᵀb − Tr(S) ≥ 0.
    let mut tr = AffineExpr::default();
    for i in 0..n {
        tr.add_term(s + i, -1.0);
    }
    match selection {
        SelectionMode::Fixed(sel) => tr.constant = data.hbar_sum(sel),
        SelectionMode::Relaxed => {
            for i in 0..n {
                for j in 0..l {
                    tr.add_term(v.b(i, j), data.hbar[(i, j)]);
                }
            }
        }
    }
    p.push(TRACE_BLOCK, Cone::Nonneg, vec![tr]);

    if let Some(lam) = lambda {
        p.push(SLACK_BLOCK, Cone::Nonneg, (0..k).map(|i| AffineExpr::var(lam + i)).collect());
        let mut cap = AffineExpr::constant(inst.power_cap);
        for i in 0..k {
            cap.add_term(t + i, -1.0);
        }
        p.push(CAP_BLOCK, Cone::Nonneg, vec![cap]);
    }
    if b.is_some() {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut sums = Vec::new();
        for i in 0..n {
            let mut sum = AffineExpr::constant(-1.0);
            for j in 0..l {
                lo.push(AffineExpr::var(v.b(i, j)));
                let mut u = AffineExpr::term(v.b(i, j), -1.0);
                u.constant = 1.0;
                hi.push(u);
                sum.add_term(v.b(i, j), 1.0);
            }
            sums.push(sum);
        }
        p.push("b_lower", Cone::Nonneg, lo);
        p.push("b_upper", Cone::Nonneg, hi);
        p.push("one_hot", Cone::Zero, sums);
    }

    Ok(Subproblem { program: p, vars: v })
}

/// Design variables read back from a solve, in normalized units.
pub fn read_design(sub: &Subproblem, x: &[f64]) -> DesignPoint {
    let v = &sub.vars;
    DesignPoint {
        x: CMat::from_fn(v.n, v.k, |i, j| {
            let (a, b) = v.x(i, j);
            Complex64::new(x[a], x[b])
        }),
        w: CMat::from_fn(v.m, v.k, |i, j| {
            let (a, b) = v.w(i, j);
            Complex64::new(x[a], x[b])
        }),
        s: Vars::herm_value(x, v.s, v.n),
        t: Vars::herm_value(x, v.t, v.k),
    }
}

impl Instance {
    /// Converts a normalized design to physical units.
    pub fn to_physical(&self, p: &DesignPoint) -> DesignPoint {
        let sc = &self.scale;
        let (xs, ws, fs) = (sc.x_scale(), sc.w_scale(), sc.f_ref);
        let mut out = DesignPoint {
            x: p.x.map(|z| z * xs),
            w: p.w.map(|z| z * ws),
            s: p.s.map(|z| z * fs * fs),
            t: p.t.map(|z| z * ws * ws),
        };
        normalize_column_phases(&mut out.x, Some(&mut out.w), &self.data.channels.h);
        out
    }
}

/// Outcome of one subproblem solve at a fixed selection.
#[derive(Clone, Debug)]
pub struct PrimalResult {
    pub selection: PhaseSelection,
    /// True for a solved power minimization, false for an l1 feasibility
    /// check.
    pub feasible: bool,
    /// Physical-unit design.
    pub design: DesignPoint,
    /// Transmit power in watts (feasible case) or `Σλ_k` in normalized
    /// noise-amplitude units (infeasible case).
    pub objective: f64,
    /// Dual objective in normalized units; the value every cut takes at
    /// its origin.
    pub dual_objective: f64,
    pub lambda: Option<Vec<f64>>,
    pub duals: DualBundle,
    /// Raw dual vector of the normalized program.
    pub z: Vec<f64>,
    /// KKT residuals of the certified pair.
    pub residuals: Residuals,
    pub iterations: u32,
}

impl PrimalResult {
    pub fn slack_sum(&self) -> f64 {
        self.lambda.as_ref().map_or(0.0, |l| l.iter().sum())
    }
}

#[derive(Clone, Debug)]
pub enum PrimalSolve {
    Optimal(Box<PrimalResult>),
    Infeasible,
}

/// Writes a normalized design (and slacks) into a primal vector.
fn write_design(sub: &Subproblem, p: &DesignPoint, lambda: Option<&[f64]>) -> Vec<f64> {
    let v = &sub.vars;
    let mut x = vec![0.0; sub.program.layout.len()];
    for j in 0..v.k {
        for i in 0..v.n {
            let (a, b) = v.x(i, j);
            x[a] = p.x[(i, j)].re;
            x[b] = p.x[(i, j)].im;
        }
        for i in 0..v.m {
            let (a, b) = v.w(i, j);
            x[a] = p.w[(i, j)].re;
            x[b] = p.w[(i, j)].im;
        }
    }
    for (base, d, mat) in [(v.s, v.n, &p.s), (v.t, v.k, &p.t)] {
        for i in 0..d {
            x[base + i] = mat[(i, i)].re;
            for j in i + 1..d {
                let e = Vars::herm(base, d, i, j);
                let idx = e.re.terms[0].0;
                x[idx] = mat[(i, j)].re;
                x[idx + 1] = mat[(i, j)].im;
            }
        }
    }
    if let (Some(lam), Some(vals)) = (v.lambda, lambda) {
        x[lam..lam + vals.len()].copy_from_slice(vals);
    }
    x
}

/// Per-user `(Re(h_kᴴx_k)/√γ_k, ‖(h_kᴴx_j)_{j≠k}‖)` in normalized units.
fn cone_sides(inst: &Instance, x: &CMat) -> Vec<(f64, f64)> {
    let h = &inst.scaled.channels.h;
    (0..inst.k())
        .map(|k| {
            let head = h[k].dotc(&x.column(k)).re / inst.gamma[k].sqrt();
            let interf: f64 = (0..inst.k())
                .filter(|&j| j != k)
                .map(|j| h[k].dotc(&x.column(j)).norm_sqr())
                .sum();
            (head, interf.sqrt())
        })
        .collect()
}

/// Exact optimum of the power minimization at a fixed selection through
/// the downlink fixed point `λ_k = 1 / ((1 + 1/γ_k) g_kᴴ (I + Σ_j λ_j g_j g_jᴴ)⁻¹ g_k)`
/// with `g_k = Gᴴh_k`, warm-started at `lambda`. Returns the multipliers of
/// the squared SINR constraints and the beamformers, or `None` if the
/// iterates leave the positive orthant or the power system is singular.
fn downlink_fixed_point(inst: &Instance, g: &CMat, mut lambda: Vec<f64>) -> Option<(Vec<f64>, CMat)> {
    const MAX_ROUNDS: usize = 20_000;
    let (k, m) = (inst.k(), inst.m());
    let gs: Vec<CVec> = inst.scaled.channels.h.iter().map(|h| g.adjoint() * h).collect();
    let inverse = |lambda: &[f64]| {
        let mut a = CMat::identity(m, m);
        for (gj, lj) in gs.iter().zip(lambda) {
            a += gj * gj.adjoint() * Complex64::from(*lj);
        }
        a.try_inverse()
    };
    // Stop at convergence or once rounding noise stops the change from
    // shrinking; the caller certifies whatever comes out.
    let (mut best, mut stale) = (f64::INFINITY, 0);
    for _ in 0..MAX_ROUNDS {
        let inv = inverse(&lambda)?;
        let next: Vec<f64> = (0..k)
            .map(|u| 1.0 / ((1.0 + 1.0 / inst.gamma[u]) * gs[u].dotc(&(&inv * &gs[u])).re))
            .collect();
        let change = next.iter().zip(&lambda).map(|(a, b)| (a - b).abs() / a.abs()).fold(0.0, f64::max);
        lambda = next;
        if !lambda.iter().all(|v| v.is_finite() && *v > 0.0) {
            return None;
        }
        if change < best {
            best = change;
            stale = 0;
        } else {
            stale += 1;
        }
        if change <= 4.0 * f64::EPSILON || stale >= 50 {
            break;
        }
    }
    let inv = inverse(&lambda)?;
    let dirs: Vec<CVec> = gs.iter().map(|gk| (&inv * gk).normalize()).collect();
    // Powers meeting every SINR target with equality.
    let a = DMatrix::from_fn(k, k, |u, j| {
        let c = gs[u].dotc(&dirs[j]).norm_sqr();
        if u == j { c / inst.gamma[u] } else { -c }
    });
    let rhs = nalgebra::DVector::from_iterator(k, inst.sigma_scaled.iter().map(|s| s * s));
    let powers = a.lu().solve(&rhs)?;
    if !powers.iter().all(|p| p.is_finite() && *p > 0.0) {
        return None;
    }
    let w = CMat::from_fn(m, k, |i, j| dirs[j][i] * powers[j].sqrt());
    Some((lambda, w))
}

/// A primal-dual pair of a fixed-selection subproblem whose KKT residuals
/// were checked directly.
struct Certified {
    design: DesignPoint,
    lambda: Option<Vec<f64>>,
    z: Vec<f64>,
    dual: f64,
    duals: DualBundle,
    residuals: Residuals,
}

/// Where the SINR cone multipliers of a certified pair come from.
enum ConeDuals {
    /// Multipliers of the squared constraints `σ² + interference −
    /// |signal|²/γ ≤ 0`, converted to complementary cone multipliers.
    Squared(Vec<f64>),
    /// Cone multiplier vectors, one per user, in row order.
    Vectors(Vec<Vec<f64>>),
}

/// Lifts a beamformer into the PSD program and certifies it.
///
/// Every feasible point has `S = GGᴴ` and hence `X = GW`, so the lifting
/// block has no interior: interior-point iterates stall short of full
/// accuracy and infeasibility is only weak. The primal side is therefore
/// rebuilt from `W` alone (`X = GW`, `T = WᴴW`, column phases aligned, `W`
/// rescaled onto the SINR cones or the slacks recomputed). On the dual
/// side the cone multipliers are supplied, the phase multipliers are
/// chosen to maximize the dual objective, and the lifting and trace
/// multipliers are completed so that stationarity holds: with `Q₂₂ = κI`
/// and `Q₂₁ = μ` read off the Lagrangian gradient, `Q₁₁ = qI`, `Q₃₂ = 0`,
/// `Q₃₁ = −GᴴP`, `Q₃₃ = GᴴPG` where `P = qI − μᴴμ/κ` and `q` is the smallest
/// value keeping `P ⪰ 0`. The pair is accepted when its KKT residuals on
/// the PSD program are within tolerance.
fn certify(inst: &Instance, sub: &Subproblem, sel: &PhaseSelection, mut w: CMat, cone: ConeDuals) -> std::result::Result<Certified, String> {
    let program = &sub.program;
    let (n, k, m) = (inst.n(), inst.k(), inst.m());
    let g = inst.scaled.selected_rows(sel);
    let h = &inst.scaled.channels.h;
    let slack_mode = sub.vars.lambda.is_some();

    let offsets = program.block_offsets();
    let block = |name: &str| {
        let i = program.block_index(name).expect("block present");
        offsets[i]..offsets[i] + program.blocks[i].rows.len()
    };
    let soc = |user: usize| block(&format!("{SOC_BLOCK_PREFIX}{user}"));

    let mut x = &g * &w;
    normalize_column_phases(&mut x, Some(&mut w), h);
    let lambda = if slack_mode {
        let power = w.norm_squared();
        if power > inst.power_cap {
            let c = Complex64::from((inst.power_cap / power).sqrt() * (1.0 - 8.0 * f64::EPSILON));
            w *= c;
            x *= c;
        }
        let sides = cone_sides(inst, &x);
        Some(
            sides
                .iter()
                .zip(&inst.sigma_scaled)
                .map(|(&(head, interf), s)| ((interf * interf + s * s).sqrt() - head).max(0.0))
                .collect::<Vec<f64>>(),
        )
    } else {
        let mut c: f64 = 1.0;
        for (user, &(head, interf)) in cone_sides(inst, &x).iter().enumerate() {
            let margin = head * head - interf * interf;
            if !(head > 0.0 && margin > 0.0) {
                return Err(format!("user {user} has no SINR margin to rescale"));
            }
            c = c.max(inst.sigma_scaled[user] / margin.sqrt());
        }
        let c = Complex64::from(c * (1.0 + 8.0 * f64::EPSILON));
        w *= c;
        x *= c;
        None
    };
    let design = DesignPoint { s: &g * g.adjoint(), t: w.adjoint() * &w, x, w };
    let xv = write_design(sub, &design, lambda.as_deref());

    let mut z = vec![0.0; program.num_rows()];
    match cone {
        ConeDuals::Squared(lam) => {
            // α_k (1, −tail/‖tail‖) with α_k = 2 λ_k · head_k.
            let rows = program.rows_at(&xv);
            for (user, &(head, _)) in cone_sides(inst, &design.x).iter().enumerate() {
                let r = soc(user);
                let tail = &rows[r.start + 1..r.end];
                let norm = tail.iter().map(|t| t * t).sum::<f64>().sqrt();
                let alpha = 2.0 * lam[user] * head;
                z[r.start] = alpha;
                for (zi, t) in z[r.start + 1..r.end].iter_mut().zip(tail) {
                    *zi = -alpha * t / norm;
                }
            }
        }
        ConeDuals::Vectors(vs) => {
            for (user, v) in vs.iter().enumerate() {
                z[soc(user)].copy_from_slice(v);
            }
        }
    }
    if slack_mode {
        // Stationarity in λ_k reads 1 = α_k + ν_k.
        let slack = block(SLACK_BLOCK);
        for user in 0..k {
            let r = soc(user);
            let alpha = z[r.start];
            if alpha > 1.0 {
                z[r.clone()].iter_mut().for_each(|v| *v /= alpha);
            }
            z[slack.start + user] = 1.0 - z[r.start];
        }
    }

    let v = &sub.vars;
    let mu_of = |z: &[f64]| {
        let r = program.lagrangian_gradient(z);
        CMat::from_fn(k, n, |user, i| {
            let (a, b) = v.x(i, user);
            Complex64::new(0.5 * r[a], -0.5 * r[b])
        })
    };
    // The phase multipliers leave stationarity intact whatever their value;
    // pick the ones maximizing the dual objective, i.e. minimizing ‖μG‖²
    // row by row.
    let phase = block(PHASE_BLOCK);
    let mu0 = mu_of(&z);
    for user in 0..k {
        z[phase.start + user] = 1.0;
        let mu1 = mu_of(&z);
        let a = mu0.row(user) * &g;
        let b = (mu1.row(user) - mu0.row(user)) * &g;
        let bb = b.norm_squared();
        z[phase.start + user] = if bb > 0.0 { -a.dotc(&b).re / bb } else { 0.0 };
    }
    let mu = mu_of(&z);
    if slack_mode {
        // The dual objective −κ·cap − ‖μG‖²/κ + … peaks at κ = ‖μG‖/√cap,
        // but an uncapped optimum has μG = 0 and the peak is only reached
        // in the limit κ → 0 with q ∝ 1/κ. Spending half the slack on κ
        // keeps the cut coefficients bounded while still separating.
        let mg = (&mu * &g).norm();
        let total: f64 = lambda.as_ref().map_or(0.0, |l| l.iter().sum());
        let floor = if total > MIN_INFEASIBLE_SLACK {
            0.5 * total / inst.power_cap
        } else {
            0.5 * inst.conic.tol * (1.0 + total) / inst.power_cap
        };
        z[block(CAP_BLOCK).start] = (mg / inst.power_cap.sqrt()).max(floor);
    }
    let r0 = program.lagrangian_gradient(&z);

    let kappa = r0[v.t];
    let spread = (0..k).map(|i| (r0[v.t + i] - kappa).abs()).fold(0.0, f64::max);
    if !(kappa > 0.0) || spread > 1e-12 * kappa.max(1.0) {
        return Err(format!("power multiplier {kappa:.3e} (spread {spread:.1e}) cannot anchor the lifting dual"));
    }
    let mm = mu.adjoint() * &mu / Complex64::from(kappa);
    let lmax = nalgebra::SymmetricEigen::new(mm.clone()).eigenvalues.max();
    let q = lmax.max(0.0) * (1.0 + 1e-12) + f64::MIN_POSITIVE;
    let pm = CMat::identity(n, n) * Complex64::from(q) - mm;
    let d = n + k + m;
    let mut qm = CMat::zeros(d, d);
    qm.view_mut((0, 0), (n, n)).copy_from(&(CMat::identity(n, n) * Complex64::from(q)));
    qm.view_mut((n, n), (k, k)).copy_from(&(CMat::identity(k, k) * Complex64::from(kappa)));
    qm.view_mut((n, 0), (k, n)).copy_from(&mu);
    qm.view_mut((0, n), (n, k)).copy_from(&mu.adjoint());
    let q31 = -(g.adjoint() * &pm);
    qm.view_mut((n + k, 0), (m, n)).copy_from(&q31);
    qm.view_mut((0, n + k), (n, m)).copy_from(&q31.adjoint());
    qm.view_mut((n + k, n + k), (m, m)).copy_from(&(g.adjoint() * &pm * &g));
    z[block(LIFT_BLOCK)].copy_from_slice(&sym_to_svec(&embed_hermitian(&qm)));
    z[block(TRACE_BLOCK).start] = q;

    let residuals = point_residuals(program, &xv, &z);
    let tol = inst.conic.tol;
    let bound_ok = match &lambda {
        None => residuals.gap <= tol,
        Some(l) => {
            let total: f64 = l.iter().sum();
            let d = program.dual_value(&z);
            let target = if total > MIN_INFEASIBLE_SLACK { 0.5 * total } else { total };
            d >= target - tol * (1.0 + total)
        }
    };
    if residuals.primal <= tol && residuals.dual <= tol && bound_ok {
        let duals = duals_from_vector(&z, program, inst.dims()).map_err(|e| e.to_string())?;
        Ok(Certified { design, lambda, dual: program.dual_value(&z), duals, z, residuals })
    } else {
        Err(format!(
            "refined pair has residuals {:.2e}/{:.2e}, gap {:.2e}",
            residuals.primal, residuals.dual, residuals.gap
        ))
    }
}

/// `Σ_m conj(g_m) w_{m,j}` over the beamformer variables of the reduced
/// program.
fn inner_reduced(g: &CVec, w0: usize, m: usize, j: usize) -> ComplexExpr {
    let mut out = ComplexExpr::default();
    for i in 0..m {
        let (a, b) = (g[i].re, g[i].im);
        let xr = w0 + 2 * (j * m + i);
        out.re.add_term(xr, a).add_term(xr + 1, b);
        out.im.add_term(xr + 1, a).add_term(xr, -b);
    }
    out
}

/// The feasibility check with `X = GW` substituted: an SOCP in `(W, λ)`
/// with the same cone rows as the PSD program, which has an interior.
fn reduced_slack_program(inst: &Instance, g: &CMat) -> ConeProgram {
    let (k, m) = (inst.k(), inst.m());
    let mut layout = Layout::default();
    let w0 = layout.add("w", 2 * m * k);
    let lam = layout.add("lambda", k);
    let mut p = ConeProgram::new(layout);
    for i in 0..k {
        p.objective[lam + i] = 1.0;
    }
    let gs: Vec<CVec> = inst.scaled.channels.h.iter().map(|h| g.adjoint() * h).collect();
    for user in 0..k {
        let mut head = inner_reduced(&gs[user], w0, m, user).re.scaled(1.0 / inst.gamma[user].sqrt());
        head.add_term(lam + user, 1.0);
        let mut rows = vec![head];
        for j in (0..k).filter(|&j| j != user) {
            let e = inner_reduced(&gs[user], w0, m, j);
            rows.push(e.re);
            rows.push(e.im);
        }
        rows.push(AffineExpr::constant(inst.sigma_scaled[user]));
        p.push(&format!("{SOC_BLOCK_PREFIX}{user}"), Cone::Soc, rows);
    }
    p.push(
        PHASE_BLOCK,
        Cone::Zero,
        (0..k).map(|user| inner_reduced(&gs[user], w0, m, user).im.scaled(-1.0)).collect(),
    );
    p.push(SLACK_BLOCK, Cone::Nonneg, (0..k).map(|i| AffineExpr::var(lam + i)).collect());
    let mut cap = vec![AffineExpr::constant(inst.power_cap.sqrt())];
    cap.extend((0..2 * m * k).map(|i| AffineExpr::var(w0 + i)));
    p.push(CAP_BLOCK, Cone::Soc, cap);
    p
}

fn failure(context: &str, sel: &PhaseSelection, detail: String) -> Error {
    Error::numerical(format!("{context} at selection [{}]", sel.display()), detail)
}

fn backend_summary(sol: &ConicSolution) -> String {
    format!(
        "backend status {} after {} iterations (residuals {:.2e}/{:.2e}, gap {:.2e})",
        sol.backend_status, sol.iterations, sol.residuals.primal, sol.residuals.dual, sol.residuals.gap
    )
}

/// Power minimization: `Ok(Ok(_))` certified optimum, `Ok(Err(reason))`
/// when no optimum could be certified.
fn power_attempt(inst: &Instance, sel: &PhaseSelection) -> Result<std::result::Result<(Certified, u32), String>> {
    let sub = build_subproblem(inst, &Objective::Power, &SelectionMode::Fixed(sel.clone()))?;
    let sol = solve(&sub.program, &inst.conic)?;
    if !(sol.status == ConicStatus::Optimal || sol.near_optimal) {
        return Ok(Err(backend_summary(&sol)));
    }
    let g = inst.scaled.selected_rows(sel);
    let w = read_design(&sub, &sol.x).w;
    let x = &g * &w;
    let offsets = sub.program.block_offsets();
    let warm: Vec<f64> = cone_sides(inst, &x)
        .iter()
        .enumerate()
        .map(|(user, &(head, _))| {
            let i = sub.program.block_index(&format!("{SOC_BLOCK_PREFIX}{user}")).expect("block present");
            (sol.z[offsets[i]] / (2.0 * head.abs())).max(f64::MIN_POSITIVE)
        })
        .collect();
    let Some((lam, exact)) = downlink_fixed_point(inst, &g, warm) else {
        return Ok(Err(format!("{}; downlink fixed point broke down", backend_summary(&sol))));
    };
    Ok(certify(inst, &sub, sel, exact, ConeDuals::Squared(lam))
        .map(|c| (c, sol.iterations))
        .map_err(|e| format!("{}; {e}", backend_summary(&sol))))
}

fn feasibility_certified(inst: &Instance, sel: &PhaseSelection) -> Result<(Certified, u32)> {
    inst.check_selection(sel)?;
    let sub = build_subproblem(inst, &Objective::Slack, &SelectionMode::Fixed(sel.clone()))?;
    let g = inst.scaled.selected_rows(sel);
    let reduced = reduced_slack_program(inst, &g);
    let sol = solve(&reduced, &inst.conic)?;
    if sol.status != ConicStatus::Optimal {
        return Err(failure("feasibility check", sel, backend_summary(&sol)));
    }
    let m = inst.m();
    let w = CMat::from_fn(m, inst.k(), |i, j| Complex64::new(sol.x[2 * (j * m + i)], sol.x[2 * (j * m + i) + 1]));
    let offsets = reduced.block_offsets();
    let vectors = (0..inst.k())
        .map(|user| {
            let i = reduced.block_index(&format!("{SOC_BLOCK_PREFIX}{user}")).expect("block present");
            sol.z[offsets[i]..offsets[i] + reduced.blocks[i].rows.len()].to_vec()
        })
        .collect();
    certify(inst, &sub, sel, w, ConeDuals::Vectors(vectors))
        .map(|c| (c, sol.iterations))
        .map_err(|e| failure("feasibility check", sel, format!("{}; {e}", backend_summary(&sol))))
}

fn feasibility_result(sel: &PhaseSelection, inst: &Instance, c: Certified, iterations: u32) -> PrimalResult {
    let lambda = c.lambda.expect("slack program");
    PrimalResult {
        selection: sel.clone(),
        feasible: false,
        design: inst.to_physical(&c.design),
        objective: lambda.iter().sum(),
        dual_objective: c.dual,
        lambda: Some(lambda),
        duals: c.duals,
        z: c.z,
        residuals: c.residuals,
        iterations,
    }
}

/// Power minimization at `sel`, or the certified feasibility check when the
/// selection admits no design.
fn power_or_feasibility(inst: &Instance, sel: &PhaseSelection) -> Result<PrimalResult> {
    let reason = match power_attempt(inst, sel)? {
        Ok((c, iterations)) => {
            let design = inst.to_physical(&c.design);
            let objective = transmit_power(&design.w);
            return Ok(PrimalResult {
                selection: sel.clone(),
                feasible: true,
                design,
                objective,
                dual_objective: c.dual,
                lambda: None,
                duals: c.duals,
                z: c.z,
                residuals: c.residuals,
                iterations,
            });
        }
        Err(reason) => reason,
    };
    let (c, iterations) = feasibility_certified(inst, sel)?;
    let r = feasibility_result(sel, inst, c, iterations);
    if r.slack_sum() <= MIN_INFEASIBLE_SLACK {
        return Err(failure(
            "power minimization",
            sel,
            format!("{reason}; the feasibility check needs only {:.3e} slack", r.slack_sum()),
        ));
    }
    Ok(r)
}

/// Power minimization at a fixed selection. A selection is reported
/// infeasible when the power program admits no certified optimum and the
/// feasibility check certifies a positive slack.
pub fn solve_primal(inst: &Instance, sel: &PhaseSelection) -> Result<PrimalSolve> {
    let r = power_or_feasibility(inst, sel)?;
    Ok(if r.feasible { PrimalSolve::Optimal(Box::new(r)) } else { PrimalSolve::Infeasible })
}

/// Minimal total SINR-cone slack at a fixed selection, with the transmit
/// power capped at [`Instance::power_cap`].
pub fn solve_feasibility(inst: &Instance, sel: &PhaseSelection) -> Result<PrimalResult> {
    let (c, iterations) = feasibility_certified(inst, sel)?;
    Ok(feasibility_result(sel, inst, c, iterations))
}

/// Slack sums at or below this (normalized) level are indistinguishable
/// from feasibility.
pub const MIN_INFEASIBLE_SLACK: f64 = 1e-6;

/// Power minimization at `sel`, falling back to the feasibility check when
/// the selection admits no design.
pub fn evaluate(inst: &Instance, sel: &PhaseSelection) -> Result<PrimalResult> {
    power_or_feasibility(inst, sel)
}
