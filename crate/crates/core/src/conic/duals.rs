//! Dual multipliers of the beamforming subproblems, regrouped as
//! `α_k` (SINR cones), `β_k` (signal-phase equalities), `Q` (lifting PSD
//! block) and `q` (trace inequality).

use crate::channel::CMat;
use crate::error::{Error, Result};

use super::{svec_to_sym, unembed_hermitian, ConeProgram, ConicSolution, ConicStatus};

/// Block names shared with the subproblem builder.
pub const SOC_BLOCK_PREFIX: &str = "sinr_user";
pub const PHASE_BLOCK: &str = "signal_phase";
pub const LIFT_BLOCK: &str = "lifting";
pub const TRACE_BLOCK: &str = "trace";

/// Sizes `(N, K, M)` of the lifting matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LiftDims {
    pub n: usize,
    pub k: usize,
    pub m: usize,
}

#[derive(Clone, Debug)]
pub struct DualBundle {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Full Hermitian multiplier, `(N+K+M)` square.
    pub q_mat: CMat,
    pub q: f64,
    pub dims: LiftDims,
}

impl DualBundle {
    fn block(&self, r0: usize, c0: usize, r: usize, c: usize) -> CMat {
        self.q_mat.view((r0, c0), (r, c)).into_owned()
    }

    pub fn q11(&self) -> CMat {
        let d = self.dims;
        self.block(0, 0, d.n, d.n)
    }

    pub fn q21(&self) -> CMat {
        let d = self.dims;
        self.block(d.n, 0, d.k, d.n)
    }

    pub fn q22(&self) -> CMat {
        let d = self.dims;
        self.block(d.n, d.n, d.k, d.k)
    }

    pub fn q31(&self) -> CMat {
        let d = self.dims;
        self.block(d.n + d.k, 0, d.m, d.n)
    }

    pub fn q32(&self) -> CMat {
        let d = self.dims;
        self.block(d.n + d.k, d.n, d.m, d.k)
    }

    pub fn q33(&self) -> CMat {
        let d = self.dims;
        self.block(d.n + d.k, d.n + d.k, d.m, d.m)
    }
}

/// Regroups the dual vector of an optimal beamforming subproblem.
///
/// The Lagrangian is `objective + Σ α_k (C1a residual) + Σ β_k Im(h_kᴴx_k)
/// − Tr(Q M) + q (Tr S − Σ h̄ᵀb)` with `M` the lifting matrix, so every
/// multiplier other than `β` is nonnegative or PSD.
pub fn extract_duals(sol: &ConicSolution, program: &ConeProgram, dims: LiftDims) -> Result<DualBundle> {
    if sol.status != ConicStatus::Optimal {
        return Err(Error::Contract(format!("duals requested from a {:?} solve", sol.status)));
    }
    duals_from_vector(&sol.z, program, dims)
}

/// Same regrouping for a dual vector verified by other means.
pub fn duals_from_vector(z: &[f64], program: &ConeProgram, dims: LiftDims) -> Result<DualBundle> {
    if z.len() != program.num_rows() {
        return Err(Error::Contract(format!("dual vector has {} entries for {} rows", z.len(), program.num_rows())));
    }
    let block_dual = |name: &str| {
        let i = program.block_index(name)?;
        let o = program.block_offsets()[i];
        Some(&z[o..o + program.blocks[i].rows.len()])
    };
    let missing = |name: &str| Error::Contract(format!("program has no block {name}"));

    let mut alpha = Vec::with_capacity(dims.k);
    for k in 0..dims.k {
        let name = format!("{SOC_BLOCK_PREFIX}{k}");
        let z = block_dual(&name).ok_or_else(|| missing(&name))?;
        alpha.push(z[0]);
    }
    // The phase rows are written as `−Im(h_kᴴx_k) ∈ {0}`.
    let beta = match block_dual(PHASE_BLOCK) {
        Some(z) => z.to_vec(),
        None => return Err(missing(PHASE_BLOCK)),
    };
    let q = block_dual(TRACE_BLOCK).ok_or_else(|| missing(TRACE_BLOCK))?[0];
    let zl = block_dual(LIFT_BLOCK).ok_or_else(|| missing(LIFT_BLOCK))?;
    let d = dims.n + dims.k + dims.m;
    let q_mat = unembed_hermitian(&svec_to_sym(zl, 2 * d));
    Ok(DualBundle { alpha, beta, q_mat, q, dims })
}
