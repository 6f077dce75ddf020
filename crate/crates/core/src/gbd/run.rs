//! The decomposition loop: alternate subproblem solves and master solves
//! until the bounds meet.

use std::collections::HashSet;
use std::io::Write;

use super::cuts::{build_feasibility_cut, build_optimality_cut, Cut};
use super::master::{solve_master, MasterOutcome};
use super::problem::{evaluate, Instance, PrimalResult};
use crate::error::{Error, Result};
use crate::reformulation::{DesignPoint, PhaseSelection};

/// Iteration cap applied when the selection space is larger than this.
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GbdConfig {
    /// Convergence tolerance relative to `max(1, UB)`, with UB in
    /// normalized power units.
    pub delta_rel: f64,
    /// Defaults to `min(L^N + 1, DEFAULT_MAX_ITER)`.
    pub max_iter: Option<usize>,
}

impl Default for GbdConfig {
    fn default() -> Self {
        Self { delta_rel: 1e-6, max_iter: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GbdStatus {
    Converged,
    NotConverged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub feasible: bool,
    /// Transmit power in watts, or the slack sum of the feasibility check
    /// on infeasible iterations.
    pub primal_objective: f64,
    /// Master optimum in watts.
    pub eta: f64,
    pub ub: f64,
    pub lb: f64,
    pub selection: PhaseSelection,
}

#[derive(Clone, Debug)]
pub struct GbdState {
    /// Watts; infinite until the first feasible subproblem.
    pub ub: f64,
    /// Watts.
    pub lb: f64,
    pub incumbent: Option<(PhaseSelection, DesignPoint)>,
    pub cuts: Vec<Cut>,
    /// Iterations whose subproblem was feasible.
    pub feasible_iterations: Vec<usize>,
    pub infeasible_iterations: Vec<usize>,
    pub iteration: usize,
    pub trace: Vec<TraceEntry>,
    pub status: GbdStatus,
}

impl GbdState {
    fn new() -> Self {
        Self {
            ub: f64::INFINITY,
            lb: 0.0,
            incumbent: None,
            cuts: Vec::new(),
            feasible_iterations: Vec::new(),
            infeasible_iterations: Vec::new(),
            iteration: 0,
            trace: Vec::new(),
            status: GbdStatus::NotConverged,
        }
    }

    pub fn gap(&self) -> f64 {
        self.ub - self.lb
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["iteration", "feasible", "primal_objective", "eta", "ub", "lb", "selection"])
            .map_err(csv_err)?;
        for t in &self.trace {
            w.write_record([
                t.iteration.to_string(),
                (t.feasible as u8).to_string(),
                format!("{:e}", t.primal_objective),
                format!("{:e}", t.eta),
                format!("{:e}", t.ub),
                format!("{:e}", t.lb),
                t.selection.display(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn default_max_iter(n: usize, l: usize) -> usize {
    (l as u128)
        .checked_pow(n as u32)
        .map_or(DEFAULT_MAX_ITER, |s| s.saturating_add(1).min(DEFAULT_MAX_ITER as u128) as usize)
}

/// Runs the decomposition from the all-zero selection. A subproblem or
/// master failure aborts the run.
pub fn run(inst: &Instance, cfg: &GbdConfig) -> Result<GbdState> {
    run_observed(inst, cfg, |_, _| {})
}

/// As [`run`], calling `observe` after every iteration.
pub fn run_observed(
    inst: &Instance,
    cfg: &GbdConfig,
    mut observe: impl FnMut(&GbdState, &PrimalResult),
) -> Result<GbdState> {
    if !(cfg.delta_rel >= 0.0) {
        return Err(Error::InvalidConfig(format!("delta must be nonnegative, got {}", cfg.delta_rel)));
    }
    let (n, l) = (inst.n(), inst.l());
    let max_iter = cfg.max_iter.unwrap_or_else(|| default_max_iter(n, l));
    let watts = inst.scale.power();
    let infeasible = || Error::Infeasible { gamma: inst.gamma.clone() };

    let mut st = GbdState::new();
    // Bounds in normalized units; the state carries watts.
    let (mut ub, mut lb) = (f64::INFINITY, 0.0_f64);
    let mut visited = HashSet::new();
    let mut sel = PhaseSelection::zeros(n);

    while st.iteration < max_iter {
        st.iteration += 1;
        let it = st.iteration;
        let res = evaluate(inst, &sel)?;
        visited.insert(sel.clone());
        let cut = if res.feasible {
            let p = res.objective / watts;
            if p < ub {
                ub = p;
                st.incumbent = Some((sel.clone(), res.design.clone()));
            }
            st.feasible_iterations.push(it);
            build_optimality_cut(inst, &res, it)?
        } else {
            st.infeasible_iterations.push(it);
            let c = build_feasibility_cut(inst, &res, it)?;
            if c.is_flat() {
                return Err(infeasible());
            }
            c
        };
        st.cuts.push(cut);

        let m = match solve_master(&st.cuts, n, l, &inst.conic)? {
            MasterOutcome::Solved(m) => m,
            MasterOutcome::Infeasible { .. } => return Err(infeasible()),
        };
        lb = lb.max(m.eta);
        st.ub = ub * watts;
        st.lb = lb * watts;
        st.trace.push(TraceEntry {
            iteration: it,
            feasible: res.feasible,
            primal_objective: res.objective,
            eta: m.eta * watts,
            ub: st.ub,
            lb: st.lb,
            selection: sel.clone(),
        });
        observe(&st, &res);

        let delta = cfg.delta_rel * ub.max(1.0);
        if ub - lb <= delta {
            st.status = GbdStatus::Converged;
            return Ok(st);
        }
        if visited.contains(&m.selection) {
            return Err(Error::CutValidity(format!(
                "master returned visited selection [{}] with eta {:.9e} below UB {:.9e} at iteration {it}",
                m.selection.display(),
                m.eta,
                ub
            )));
        }
        sel = m.selection;
    }
    Ok(st)
}
