//! Benders cuts as affine functions of the one-hot selection `b`.
//!
//! All cut values are in normalized power units (see [`Instance`]).

use nalgebra::DMatrix;

use super::problem::{build_subproblem, Instance, Objective, PrimalResult, SelectionMode, MIN_INFEASIBLE_SLACK};
use crate::conic::duals::DualBundle;
use crate::error::{Error, Result};
use crate::reformulation::{PhaseSelection, ReformulatedData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CutKind {
    /// `η ≥ cut(b)`.
    Optimality,
    /// `0 ≥ cut(b)`.
    Feasibility,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cut {
    pub kind: CutKind,
    pub constant: f64,
    /// Coefficient of `b_n[l]`, `N × L`.
    pub coeffs: DMatrix<f64>,
    pub origin_iteration: usize,
    pub origin: PhaseSelection,
}

impl Cut {
    /// Value at a one-hot selection.
    pub fn eval(&self, sel: &PhaseSelection) -> f64 {
        self.constant + sel.levels.iter().enumerate().map(|(n, &l)| self.coeffs[(n, l)]).sum::<f64>()
    }

    /// Value at a relaxed selection `b ∈ [0,1]^{N×L}`.
    pub fn eval_relaxed(&self, b: &DMatrix<f64>) -> f64 {
        self.constant + self.coeffs.component_mul(b).sum()
    }

    /// True when the cut does not depend on the selection.
    pub fn is_flat(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }
}

/// Coefficients `−q·h̄_n[l] − 2 Re[Ĥ Q₃₁]_{nL+l, n}` of the dual function
/// in `b`, shifted per element to zero row mean. The shift is exact on
/// one-hot selections since each row of `b` sums to one, and it removes
/// the `−q·h̄_n[l]` part entirely because `h̄_n[l]` does not depend on `l`.
pub fn cut_coefficients(data: &ReformulatedData, duals: &DualBundle) -> (DMatrix<f64>, f64) {
    let (n, l) = (data.n(), data.l);
    let hq = &data.hhat * duals.q31();
    let mut coeffs = DMatrix::from_fn(n, l, |i, j| -duals.q * data.hbar[(i, j)] - 2.0 * hq[(i * l + j, i)].re);
    let mut shift = 0.0;
    for i in 0..n {
        let mean = coeffs.row(i).mean();
        for j in 0..l {
            coeffs[(i, j)] -= mean;
        }
        shift += mean;
    }
    (coeffs, shift)
}

fn assemble(kind: CutKind, inst: &Instance, res: &PrimalResult, iteration: usize) -> Cut {
    let (coeffs, _) = cut_coefficients(&inst.scaled, &res.duals);
    let at_origin: f64 = res.selection.levels.iter().enumerate().map(|(n, &l)| coeffs[(n, l)]).sum();
    Cut {
        kind,
        constant: res.dual_objective - at_origin,
        coeffs,
        origin_iteration: iteration,
        origin: res.selection.clone(),
    }
}

/// `η ≥ d^(t) + g(B) − g(B^(t))` from a solved power minimization, where
/// `d^(t)` is the certified dual objective.
pub fn build_optimality_cut(inst: &Instance, res: &PrimalResult, iteration: usize) -> Result<Cut> {
    if !res.feasible {
        return Err(Error::Contract("optimality cut requested from a feasibility check".into()));
    }
    Ok(assemble(CutKind::Optimality, inst, res, iteration))
}

/// `0 ≥ d̃^(t) + g̃(B) − g̃(B^(t))` from a feasibility check with positive
/// slack; `d̃^(t) > 0` so the origin is excluded.
pub fn build_feasibility_cut(inst: &Instance, res: &PrimalResult, iteration: usize) -> Result<Cut> {
    if res.feasible || res.slack_sum() <= MIN_INFEASIBLE_SLACK {
        return Err(Error::Contract(format!(
            "feasibility cut requested with slack {:.3e}",
            res.slack_sum()
        )));
    }
    let cut = assemble(CutKind::Feasibility, inst, res, iteration);
    if !(cut.eval(&res.selection) > 0.0) {
        return Err(Error::numerical(
            format!("feasibility cut at selection [{}]", res.selection.display()),
            format!("dual bound {:.3e} does not separate the selection", res.dual_objective),
        ));
    }
    Ok(cut)
}

/// The same cut value computed without the closed-form coefficients: the
/// Lagrange dual function of the subproblem assembled at `sel`, evaluated
/// at the multipliers of `res`.
pub fn dual_function_value(inst: &Instance, res: &PrimalResult, sel: &PhaseSelection) -> Result<f64> {
    let objective = if res.feasible { Objective::Power } else { Objective::Slack };
    let sub = build_subproblem(inst, &objective, &SelectionMode::Fixed(sel.clone()))?;
    if sub.program.num_rows() != res.z.len() {
        return Err(Error::Contract("dual vector does not match the subproblem".into()));
    }
    Ok(sub.program.dual_value(&res.z))
}
