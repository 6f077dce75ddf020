//! Exhaustive search over all `L^N` phase selections.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gbd::master::TIE_TOL;
use crate::gbd::{solve_primal, Instance, PrimalSolve};
use crate::reformulation::PhaseSelection;

pub const DEFAULT_BUDGET: u64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleConfig {
    /// Largest selection count the oracle agrees to enumerate.
    pub budget: u64,
    /// Keep the per-selection table.
    pub keep_table: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET, keep_table: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    /// Optimal transmit power, watts.
    Feasible(f64),
    Infeasible,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleEntry {
    pub selection: PhaseSelection,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    /// Lexicographically first selection within the tie tolerance of the
    /// minimum, with its power in watts; `None` when no selection is
    /// feasible.
    pub best: Option<(PhaseSelection, f64)>,
    pub per_selection: Option<Vec<OracleEntry>>,
    pub evaluated: usize,
    pub infeasible: usize,
    /// Selections whose solve failed; they are excluded from the minimum,
    /// so a nonzero count means the result is not a certified optimum.
    pub failures: Vec<(PhaseSelection, String)>,
}

impl OracleResult {
    pub fn best_objective(&self) -> Option<f64> {
        self.best.as_ref().map(|(_, p)| *p)
    }

    pub fn is_trustworthy(&self) -> bool {
        self.failures.is_empty()
    }

    /// One row per selection: `selection,status,power_w`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let table = self
            .per_selection
            .as_ref()
            .ok_or_else(|| Error::Contract("oracle ran without keeping its table".into()))?;
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["selection", "status", "power_w"]).map_err(csv_err)?;
        for e in table {
            let (status, power) = match &e.outcome {
                Outcome::Feasible(p) => ("optimal", format!("{p:e}")),
                Outcome::Infeasible => ("infeasible", String::new()),
                Outcome::Failed(_) => ("failed", String::new()),
            };
            w.write_record([e.selection.display(), status.to_string(), power]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn selection_count(n: usize, l: usize) -> Option<u128> {
    (l as u128).checked_pow(n as u32)
}

/// Solves the fixed-selection program at every selection, in parallel.
pub fn enumerate(inst: &Instance, cfg: &OracleConfig) -> Result<OracleResult> {
    let (n, l) = (inst.n(), inst.l());
    let total = selection_count(n, l).unwrap_or(u128::MAX);
    if total > cfg.budget as u128 {
        return Err(Error::BudgetExceeded { needed: total, budget: cfg.budget });
    }
    let entries: Vec<OracleEntry> = (0..total as u64)
        .into_par_iter()
        .map(|i| {
            let selection = PhaseSelection::from_index(i as u128, n, l);
            let outcome = match solve_primal(inst, &selection) {
                Ok(PrimalSolve::Optimal(r)) => Outcome::Feasible(r.objective),
                Ok(PrimalSolve::Infeasible) => Outcome::Infeasible,
                Err(e) => Outcome::Failed(e.to_string()),
            };
            OracleEntry { selection, outcome }
        })
        .collect();

    let min = entries
        .iter()
        .filter_map(|e| match e.outcome {
            Outcome::Feasible(p) => Some(p),
            _ => None,
        })
        .fold(f64::INFINITY, f64::min);
    let best = entries.iter().find_map(|e| match e.outcome {
        Outcome::Feasible(p) if p <= min * (1.0 + TIE_TOL) => Some((e.selection.clone(), p)),
        _ => None,
    });
    let failures = entries
        .iter()
        .filter_map(|e| match &e.outcome {
            Outcome::Failed(msg) => Some((e.selection.clone(), msg.clone())),
            _ => None,
        })
        .collect();
    let infeasible = entries.iter().filter(|e| e.outcome == Outcome::Infeasible).count();
    Ok(OracleResult {
        best,
        evaluated: entries.len(),
        infeasible,
        failures,
        per_selection: cfg.keep_table.then_some(entries),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{CMat, CVec, ChannelSet, ScenarioConfig};
    use crate::reformulation::expand_selection;

    #[test]
    fn refuses_over_budget() {
        let cfg = ScenarioConfig { n: 13, ..ScenarioConfig::desk() };
        let inst = Instance::from_config(&cfg).unwrap();
        match enumerate(&inst, &OracleConfig::default()) {
            Err(Error::BudgetExceeded { needed, budget }) => {
                assert_eq!(needed, 8192);
                assert_eq!(budget, 4096);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn singleton_space() {
        let cfg = ScenarioConfig { n: 1, l: 1, k: 1, gamma: vec![10.0], sigma2: vec![1e-12], ..ScenarioConfig::desk() };
        let inst = Instance::from_config(&cfg).unwrap();
        let r = enumerate(&inst, &OracleConfig { keep_table: true, ..Default::default() }).unwrap();
        assert_eq!(r.evaluated, 1);
        assert_eq!(r.best.as_ref().unwrap().0.levels, vec![0]);
        assert_eq!(r.per_selection.unwrap().len(), 1);
    }

    /// Single user: power `γσ² / ‖Fᴴ Φᴴ h‖²` at every selection.
    #[test]
    fn single_user_matches_matched_filter() {
        let cfg = ScenarioConfig { n: 2, l: 2, k: 1, gamma: vec![4.0], sigma2: vec![1e-11], seed: 7, ..ScenarioConfig::desk() };
        let inst = Instance::from_config(&cfg).unwrap();
        let ch: &ChannelSet = &inst.data.channels;
        let closed: Vec<f64> = (0..4)
            .map(|i| {
                let sel = PhaseSelection::from_index(i, 2, 2);
                let phi = expand_selection(&sel, 2).unwrap();
                let phi_mat = CMat::from_diagonal(&phi);
                let g: CVec = ch.f.adjoint() * phi_mat.adjoint() * &ch.h[0];
                4.0 * 1e-11 / g.norm_squared()
            })
            .collect();
        let r = enumerate(&inst, &OracleConfig { keep_table: true, ..Default::default() }).unwrap();
        for (e, want) in r.per_selection.as_ref().unwrap().iter().zip(&closed) {
            match e.outcome {
                Outcome::Feasible(p) => assert!((p - want).abs() <= 1e-7 * want, "{p} vs {want}"),
                ref o => panic!("{o:?}"),
            }
        }
        let best = closed.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((r.best_objective().unwrap() - best).abs() <= 1e-7 * best);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
