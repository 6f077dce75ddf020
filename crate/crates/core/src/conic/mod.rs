//! Thin conic-programming layer over Clarabel.
//!
//! Every constraint row is an affine expression `a·x + c` that must lie in
//! the block's cone. In Clarabel's form `Ax + s = b, s ∈ K` this is
//! `A = −a`, `b = c`, and the dual `z ∈ K*` enters the Lagrangian as
//! `cᵀx − Σ zᵢ (aᵢ·x + cᵢ)`.
//!
//! PSD blocks list the upper triangle column by column with off-diagonal
//! rows scaled by `√2` (Clarabel's `PSDTriangleConeT` convention).

mod dump;
pub mod duals;

use std::f64::consts::SQRT_2;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::CMat;
use crate::error::{Error, Result};

pub use dump::{dump_program, parse_program};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cone {
    Zero,
    Nonneg,
    /// `(t, x)` with `‖x‖ ≤ t`.
    Soc,
    /// Real symmetric PSD of the given order.
    Psd(usize),
}

impl Cone {
    fn name(&self) -> &'static str {
        match self {
            Cone::Zero => "zero",
            Cone::Nonneg => "nonneg",
            Cone::Soc => "soc",
            Cone::Psd(_) => "psd",
        }
    }
}

/// Sparse affine function of the variable vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        Self { terms: vec![(i, 1.0)], constant: 0.0 }
    }

    pub fn term(i: usize, a: f64) -> Self {
        Self { terms: vec![(i, a)], constant: 0.0 }
    }

    pub fn add_term(&mut self, i: usize, a: f64) -> &mut Self {
        if a != 0.0 {
            self.terms.push((i, a));
        }
        self
    }

    pub fn add(&mut self, other: &AffineExpr, scale: f64) -> &mut Self {
        for &(i, a) in &other.terms {
            self.add_term(i, a * scale);
        }
        self.constant += other.constant * scale;
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(i, a)| (i, a * s)).collect(),
            constant: self.constant * s,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>() + self.constant
    }
}

/// Complex affine expression `re + j·im`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComplexExpr {
    pub re: AffineExpr,
    pub im: AffineExpr,
}

impl ComplexExpr {
    pub fn constant(z: Complex64) -> Self {
        Self { re: AffineExpr::constant(z.re), im: AffineExpr::constant(z.im) }
    }

    pub fn conj(&self) -> Self {
        Self { re: self.re.clone(), im: self.im.scaled(-1.0) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintBlock {
    pub name: String,
    pub cone: Cone,
    pub rows: Vec<AffineExpr>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarSlice {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Named, contiguous segments of the variable vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Layout {
    pub slices: Vec<VarSlice>,
}

impl Layout {
    pub fn add(&mut self, name: &str, len: usize) -> usize {
        let start = self.len();
        self.slices.push(VarSlice { name: name.to_string(), start, len });
        start
    }

    pub fn len(&self) -> usize {
        self.slices.last().map_or(0, |s| s.start + s.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&VarSlice> {
        self.slices.iter().find(|s| s.name == name)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConeProgram {
    pub layout: Layout,
    /// Dense objective coefficients, one per variable.
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub blocks: Vec<ConstraintBlock>,
}

impl ConeProgram {
    pub fn new(layout: Layout) -> Self {
        let n = layout.len();
        Self { layout, objective: vec![0.0; n], objective_constant: 0.0, blocks: Vec::new() }
    }

    pub fn push(&mut self, name: &str, cone: Cone, rows: Vec<AffineExpr>) {
        self.blocks.push(ConstraintBlock { name: name.to_string(), cone, rows });
    }

    pub fn num_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.rows.len()).sum()
    }

    /// Row offset of each block in the stacked constraint vector.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.blocks
            .iter()
            .map(|b| {
                let o = acc;
                acc += b.rows.len();
                o
            })
            .collect()
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layout.len();
        if self.objective.len() != n {
            return Err(Error::Contract(format!(
                "objective has {} entries for {n} variables",
                self.objective.len()
            )));
        }
        for b in &self.blocks {
            let ok = match b.cone {
                Cone::Zero | Cone::Nonneg => true,
                Cone::Soc => !b.rows.is_empty(),
                Cone::Psd(d) => b.rows.len() == d * (d + 1) / 2,
            };
            if !ok {
                return Err(Error::Contract(format!(
                    "block {} has {} rows, inconsistent with its {} cone",
                    b.name,
                    b.rows.len(),
                    b.cone.name()
                )));
            }
            if let Some(&(i, _)) = b.rows.iter().flat_map(|r| r.terms.iter()).find(|(i, _)| *i >= n) {
                return Err(Error::Contract(format!("block {} references variable {i} of {n}", b.name)));
            }
        }
        Ok(())
    }

    /// Objective value of the Lagrange dual function at `z`, assuming dual
    /// feasibility `Aᵀz + c = 0`: `objective_constant − Σ zᵢ cᵢ`.
    pub fn dual_value(&self, z: &[f64]) -> f64 {
        let consts = self.blocks.iter().flat_map(|b| b.rows.iter().map(|r| r.constant));
        self.objective_constant - consts.zip(z).map(|(c, z)| c * z).sum::<f64>()
    }

    /// Stationarity residual `c − Σ zᵢ aᵢ` (the gradient of the Lagrangian).
    pub fn lagrangian_gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut g = self.objective.clone();
        for (r, zi) in self.blocks.iter().flat_map(|b| b.rows.iter()).zip(z) {
            for &(i, a) in &r.terms {
                g[i] -= a * zi;
            }
        }
        g
    }

    pub fn primal_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + self.objective_constant
    }

    /// Row values `a·x + c` in block order.
    pub fn rows_at(&self, x: &[f64]) -> Vec<f64> {
        self.rows().map(|r| r.eval(x)).collect()
    }

    fn rows(&self) -> impl Iterator<Item = &AffineExpr> {
        self.blocks.iter().flat_map(|b| b.rows.iter())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConicSettings {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for ConicSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Scaled KKT residuals computed from the returned iterate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Residuals {
    /// `‖a·x + c − s‖∞ / (1 + ‖c‖∞)`.
    pub primal: f64,
    /// `‖c − Σ zᵢ aᵢ‖∞ / (1 + ‖c‖∞)`.
    pub dual: f64,
    /// `|p − d| / (1 + |p|)`.
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub backend_status: String,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: u32,
    pub residuals: Residuals,
    /// The backend stopped at reduced accuracy; the iterate may still be
    /// certifiable by a problem-specific refinement.
    pub near_optimal: bool,
    /// For an infeasible program: `Σ zᵢ cᵢ` of the normalized Farkas ray
    /// (strictly positive) and the radius within which the ray excludes
    /// every point.
    pub certificate: Option<Certificate>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Certificate {
    pub rhs_dot: f64,
    pub radius: f64,
}

impl ConicSolution {
    pub fn slice<'a>(&'a self, program: &ConeProgram, name: &str) -> Option<&'a [f64]> {
        program.layout.get(name).map(|s| &self.x[s.start..s.start + s.len])
    }

    pub fn block_dual<'a>(&'a self, program: &ConeProgram, name: &str) -> Option<&'a [f64]> {
        let i = program.block_index(name)?;
        let o = program.block_offsets()[i];
        Some(&self.z[o..o + program.blocks[i].rows.len()])
    }
}

/// Radius a Farkas ray must certify, in units of the variable vector.
const CERTIFICATE_RADIUS: f64 = 1e4;

pub fn solve(program: &ConeProgram, settings: &ConicSettings) -> Result<ConicSolution> {
    program.validate()?;
    let n = program.layout.len();
    let m = program.num_rows();

    let (mut ri, mut ci, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::with_capacity(m);
    for (row, expr) in program.rows().enumerate() {
        for &(j, a) in &expr.terms {
            ri.push(row);
            ci.push(j);
            vals.push(-a);
        }
        b.push(expr.constant);
    }
    let a = CscMatrix::new_from_triplets(m, n, ri, ci, vals);
    let p = CscMatrix::zeros((n, n));
    let cones: Vec<SupportedConeT<f64>> = program
        .blocks
        .iter()
        .filter(|blk| !blk.rows.is_empty())
        .map(|blk| match blk.cone {
            Cone::Zero => SupportedConeT::ZeroConeT(blk.rows.len()),
            Cone::Nonneg => SupportedConeT::NonnegativeConeT(blk.rows.len()),
            Cone::Soc => SupportedConeT::SecondOrderConeT(blk.rows.len()),
            Cone::Psd(d) => SupportedConeT::PSDTriangleConeT(d),
        })
        .collect();

    let tol = settings.tol;
    let backend = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(settings.max_iter)
        .tol_gap_abs(tol)
        .tol_gap_rel(tol)
        .tol_feas(tol)
        .tol_infeas_abs(tol)
        .tol_infeas_rel(tol)
        .chordal_decomposition_enable(false)
        .presolve_enable(false)
        .build()
        .map_err(|e| Error::numerical("conic setup", e.to_string()))?;

    let mut solver = DefaultSolver::new(&p, &program.objective, &a, &b, &cones, backend)
        .map_err(|e| Error::numerical("conic setup", e.to_string()))?;
    solver.solve();
    let sol = &solver.solution;

    let x = sol.x.clone();
    let z = sol.z.clone();
    let s = sol.s.clone();
    let residuals = kkt_residuals(program, &x, &z, &s);
    let backend_status = format!("{:?}", sol.status);

    let within = |r: &Residuals| r.primal <= tol && r.dual <= tol && r.gap <= tol;
    let mut certificate = None;
    let status = match sol.status {
        SolverStatus::Solved => ConicStatus::Optimal,
        SolverStatus::AlmostSolved if within(&residuals) => ConicStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            match farkas_certificate(program, &z) {
                Some(c) if c.radius >= CERTIFICATE_RADIUS => {
                    certificate = Some(c);
                    ConicStatus::Infeasible
                }
                _ => ConicStatus::NumericalFailure,
            }
        }
        SolverStatus::DualInfeasible => ConicStatus::Unbounded,
        _ => ConicStatus::NumericalFailure,
    };

    let primal_objective = program.primal_value(&x);
    let dual_objective = program.dual_value(&z);
    Ok(ConicSolution {
        status,
        backend_status,
        x,
        z,
        s,
        primal_objective,
        dual_objective,
        iterations: sol.iterations,
        residuals,
        near_optimal: matches!(sol.status, SolverStatus::AlmostSolved),
        certificate,
    })
}

fn norm_inf(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |acc, x| acc.max(x.abs()))
}

fn kkt_residuals(program: &ConeProgram, x: &[f64], z: &[f64], s: &[f64]) -> Residuals {
    let c_scale = 1.0 + norm_inf(program.objective.iter().copied());
    let b_scale = 1.0 + norm_inf(program.rows().map(|r| r.constant));
    let primal = norm_inf(program.rows().zip(s).map(|(r, s)| r.eval(x) - s)) / b_scale;
    let dual = norm_inf(program.lagrangian_gradient(z).into_iter()) / c_scale;
    let p = program.primal_value(x);
    let d = program.dual_value(z);
    Residuals { primal, dual, gap: (p - d).abs() / (1.0 + p.abs()) }
}

/// Largest distance-like violation of `v` (one value per row) from the
/// cones of `program`: `|r|` on zero rows, `−r` on nonnegative rows,
/// `‖tail‖ − head` on second-order cones and `−λ_min` on PSD blocks.
pub fn cone_violation(program: &ConeProgram, v: &[f64], dual: bool) -> f64 {
    let mut worst: f64 = 0.0;
    let mut o = 0;
    for b in &program.blocks {
        let vb = &v[o..o + b.rows.len()];
        o += b.rows.len();
        let viol = match b.cone {
            Cone::Zero if dual => 0.0,
            Cone::Zero => norm_inf(vb.iter().copied()),
            Cone::Nonneg => vb.iter().fold(0.0, |acc: f64, &r| acc.max(-r)),
            Cone::Soc => vb[1..].iter().map(|r| r * r).sum::<f64>().sqrt() - vb[0],
            Cone::Psd(d) => -svec_to_sym(vb, d).symmetric_eigenvalues().min(),
        };
        worst = worst.max(viol);
    }
    worst
}

/// KKT residuals of an arbitrary primal-dual pair, without reference to a
/// slack vector: primal cone violation of the rows at `x`, stationarity
/// and dual cone violation of `z`, and the relative objective gap.
pub fn point_residuals(program: &ConeProgram, x: &[f64], z: &[f64]) -> Residuals {
    let c_scale = 1.0 + norm_inf(program.objective.iter().copied());
    let b_scale = 1.0 + norm_inf(program.rows().map(|r| r.constant));
    let rows = program.rows_at(x);
    let primal = cone_violation(program, &rows, false) / b_scale;
    let stationarity = norm_inf(program.lagrangian_gradient(z).into_iter());
    let dual = stationarity.max(cone_violation(program, z, true)) / c_scale;
    let p = program.primal_value(x);
    let d = program.dual_value(z);
    Residuals { primal, dual, gap: (p - d).abs() / (1.0 + p.abs()) }
}

/// Checks `z` as a Farkas ray: for every `x` with all rows in their cones,
/// `0 ≤ Σ zᵢ rowᵢ(x) = Σ zᵢ cᵢ + gᵀx` where `g = Σ zᵢ aᵢ`. When `Σ zᵢ cᵢ < 0`
/// no feasible point exists within radius `|Σ zᵢ cᵢ| / ‖g‖₂`.
fn farkas_certificate(program: &ConeProgram, z: &[f64]) -> Option<Certificate> {
    if !in_self_dual_cones(program, z) {
        return None;
    }
    let rhs_dot: f64 = program.rows().zip(z).map(|(r, z)| r.constant * z).sum();
    if !(rhs_dot < 0.0) {
        return None;
    }
    let mut g = vec![0.0; program.layout.len()];
    for (r, zi) in program.rows().zip(z) {
        for &(i, a) in &r.terms {
            g[i] += a * zi;
        }
    }
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let radius = if gn == 0.0 { f64::INFINITY } else { -rhs_dot / gn };
    Some(Certificate { rhs_dot: -rhs_dot, radius })
}

/// Membership of `z` in the dual cones, up to a small relative slack.
fn in_self_dual_cones(program: &ConeProgram, z: &[f64]) -> bool {
    let scale = norm_inf(z.iter().copied()).max(f64::MIN_POSITIVE);
    let slack = 1e-9 * scale;
    let mut o = 0;
    for b in &program.blocks {
        let zb = &z[o..o + b.rows.len()];
        o += b.rows.len();
        let ok = match b.cone {
            Cone::Zero => true,
            Cone::Nonneg => zb.iter().all(|&v| v >= -slack),
            Cone::Soc => zb[0] + slack >= zb[1..].iter().map(|v| v * v).sum::<f64>().sqrt(),
            Cone::Psd(d) => {
                let m = svec_to_sym(zb, d);
                let eig = m.symmetric_eigenvalues();
                eig.iter().all(|&e| e >= -slack * d as f64)
            }
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Rows of a real PSD block from the upper triangle of a symmetric matrix
/// of affine expressions.
pub fn psd_rows(d: usize, upper: impl Fn(usize, usize) -> AffineExpr) -> Vec<AffineExpr> {
    let mut rows = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in 0..=j {
            let e = upper(i, j);
            rows.push(if i == j { e } else { e.scaled(SQRT_2) });
        }
    }
    rows
}

/// Rows of the real embedding `[[Re M, −Im M], [Im M, Re M]]` of a
/// Hermitian matrix given by its upper triangle (`i ≤ j`); the embedded
/// block has order `2d`.
pub fn hermitian_psd_rows(d: usize, upper: impl Fn(usize, usize) -> ComplexExpr) -> Vec<AffineExpr> {
    let mut table: Vec<Vec<ComplexExpr>> = vec![vec![ComplexExpr::default(); d]; d];
    for j in 0..d {
        for i in 0..=j {
            let e = upper(i, j);
            if i != j {
                table[j][i] = e.conj();
            }
            table[i][j] = e;
        }
    }
    psd_rows(2 * d, |r, c| {
        let (bi, i) = (r / d, r % d);
        let (bj, j) = (c / d, c % d);
        let e = &table[i][j];
        match (bi, bj) {
            (0, 0) | (1, 1) => e.re.clone(),
            (0, 1) => e.im.scaled(-1.0),
            _ => e.im.clone(),
        }
    })
}

/// Symmetric matrix from its scaled upper-triangle vector.
pub fn svec_to_sym(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in 0..=j {
            let val = if i == j { v[k] } else { v[k] / SQRT_2 };
            m[(i, j)] = val;
            m[(j, i)] = val;
            k += 1;
        }
    }
    m
}

/// Scaled upper-triangle vector of a symmetric matrix; inverse of
/// [`svec_to_sym`].
pub fn sym_to_svec(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut v = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in 0..=j {
            v.push(if i == j { m[(i, j)] } else { m[(i, j)] * SQRT_2 });
        }
    }
    v
}

/// Real symmetric `Z = ½ E(Q)` with `unembed_hermitian(Z) = Q`; `Z` is PSD
/// exactly when `Q` is.
pub fn embed_hermitian(q: &CMat) -> DMatrix<f64> {
    let d = q.nrows();
    DMatrix::from_fn(2 * d, 2 * d, |r, c| {
        let e = q[(r % d, c % d)];
        0.5 * match (r / d, c / d) {
            (0, 0) | (1, 1) => e.re,
            (0, 1) => -e.im,
            _ => e.im,
        }
    })
}

/// Complex Hermitian `Q` with `Re Tr(Q M) = ⟨Z, E(M)⟩` for the real
/// embedding `E`.
pub fn unembed_hermitian(z: &DMatrix<f64>) -> CMat {
    let d = z.nrows() / 2;
    CMat::from_fn(d, d, |i, j| {
        Complex64::new(
            z[(i, j)] + z[(d + i, d + j)],
            z[(d + i, j)] - z[(i, d + j)],
        )
    })
}
