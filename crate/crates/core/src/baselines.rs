//! Suboptimal comparison schemes: random discrete phases, per-element
//! coordinate refinement, and penalty-based successive convex
//! approximation over the relaxed selection.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conic::{solve, ConicStatus};
use crate::error::{Error, Result};
use crate::gbd::problem::{build_subproblem, Objective, SelectionMode};
use crate::gbd::{solve_primal, Instance, PrimalSolve};
use crate::reformulation::{DesignPoint, PhaseSelection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineScheme {
    RandomPhase,
    AlternatingOpt,
    PenaltySca,
}

#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub scheme: BaselineScheme,
    pub selection: PhaseSelection,
    /// Physical-unit design, absent when the selection is infeasible.
    pub design: Option<DesignPoint>,
    /// Transmit power in watts; `None` for an infeasible selection.
    pub objective: Option<f64>,
    pub iterations: usize,
    /// Per-iteration objective: watts for coordinate refinement, surrogate
    /// value in normalized units for SCA.
    pub trace: Vec<f64>,
}

impl BaselineResult {
    pub fn is_feasible(&self) -> bool {
        self.objective.is_some()
    }
}

fn fixed(inst: &Instance, sel: &PhaseSelection) -> Result<(Option<f64>, Option<DesignPoint>)> {
    Ok(match solve_primal(inst, sel)? {
        PrimalSolve::Optimal(r) => (Some(r.objective), Some(r.design)),
        PrimalSolve::Infeasible => (None, None),
    })
}

/// Levels drawn uniformly and independently from a seeded generator.
pub fn random_selection(n: usize, l: usize, seed: u64) -> PhaseSelection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PhaseSelection { levels: (0..n).map(|_| rng.gen_range(0..l)).collect() }
}

pub fn random_phase_baseline(inst: &Instance, seed: u64) -> Result<BaselineResult> {
    let selection = random_selection(inst.n(), inst.l(), seed);
    let (objective, design) = fixed(inst, &selection)?;
    Ok(BaselineResult {
        scheme: BaselineScheme::RandomPhase,
        selection,
        design,
        objective,
        iterations: 1,
        trace: objective.into_iter().collect(),
    })
}

/// Relative improvement a move must achieve to be accepted.
const ACCEPT_REL: f64 = 1e-9;

fn improves(candidate: Option<f64>, current: Option<f64>) -> bool {
    match (candidate, current) {
        (Some(c), Some(p)) => c < p * (1.0 - ACCEPT_REL),
        (Some(_), None) => true,
        _ => false,
    }
}

/// Coordinate refinement from the all-zero selection: each round visits
/// the elements in order and moves each to its best level with the others
/// held fixed, until a round changes nothing.
pub fn alternating_opt_baseline(inst: &Instance, max_rounds: usize) -> Result<BaselineResult> {
    let (n, l) = (inst.n(), inst.l());
    let mut cache: HashMap<PhaseSelection, (Option<f64>, Option<DesignPoint>)> = HashMap::new();
    let mut value = |sel: &PhaseSelection| -> Result<Option<f64>> {
        if let Some((v, _)) = cache.get(sel) {
            return Ok(*v);
        }
        let r = fixed(inst, sel)?;
        let v = r.0;
        cache.insert(sel.clone(), r);
        Ok(v)
    };

    let mut cur = PhaseSelection::zeros(n);
    let mut best = value(&cur)?;
    let mut trace = best.into_iter().collect::<Vec<_>>();
    let mut rounds = 0;
    while rounds < max_rounds {
        rounds += 1;
        let mut changed = false;
        for i in 0..n {
            let mut pick = None;
            let mut pick_value = best;
            for lvl in (0..l).filter(|&v| v != cur.levels[i]) {
                let mut cand = cur.clone();
                cand.levels[i] = lvl;
                let v = value(&cand)?;
                if improves(v, pick_value) {
                    pick = Some(cand);
                    pick_value = v;
                }
            }
            if let Some(p) = pick {
                cur = p;
                best = pick_value;
                changed = true;
                trace.extend(best);
            }
        }
        if !changed {
            break;
        }
    }
    let design = cache.remove(&cur).and_then(|(_, d)| d);
    Ok(BaselineResult {
        scheme: BaselineScheme::AlternatingOpt,
        selection: cur,
        design,
        objective: best,
        iterations: rounds,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaConfig {
    /// Penalty factors, applied in order with warm starts.
    pub mu: Vec<f64>,
    pub max_iter: usize,
    /// Stop a stage when the surrogate changes by at most `tol` relative.
    pub tol: f64,
}

impl Default for ScaConfig {
    fn default() -> Self {
        Self { mu: vec![1.0, 0.1, 0.01], max_iter: 30, tol: 1e-6 }
    }
}

/// Outcome of one SCA stage at a fixed penalty factor.
#[derive(Clone, Debug)]
pub struct ScaStage {
    pub b: DMatrix<f64>,
    /// Optimal surrogate values, normalized units.
    pub trace: Vec<f64>,
    pub feasible: bool,
}

/// `(1/μ) Σ (b − b²)`.
pub fn penalty(b: &DMatrix<f64>, mu: f64) -> f64 {
    b.iter().map(|v| v - v * v).sum::<f64>() / mu
}

/// Iterates the linearized penalty program from `anchor` until the
/// surrogate settles. An infeasible relaxed program ends the stage with
/// `feasible = false`.
pub fn sca_stage(inst: &Instance, mu: f64, anchor: DMatrix<f64>, max_iter: usize, tol: f64) -> Result<ScaStage> {
    if !(mu > 0.0) {
        return Err(Error::Domain(format!("penalty factor must be positive (got {mu})")));
    }
    let (n, l) = (inst.n(), inst.l());
    let mut b = anchor;
    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..max_iter {
        let sub = build_subproblem(inst, &Objective::Penalized { mu, anchor: b.clone() }, &SelectionMode::Relaxed)?;
        let sol = solve(&sub.program, &inst.conic)?;
        match sol.status {
            ConicStatus::Optimal => {}
            ConicStatus::Infeasible => return Ok(ScaStage { b, trace, feasible: false }),
            _ if sol.near_optimal => {}
            _ => {
                return Err(Error::numerical(
                    "penalty SCA step",
                    format!("backend status {} after {} iterations", sol.backend_status, sol.iterations),
                ))
            }
        }
        let next = DMatrix::from_fn(n, l, |i, j| sol.x[sub.vars.b(i, j)].clamp(0.0, 1.0));
        let value = sol.primal_objective;
        b = next;
        let settled = trace.last().is_some_and(|&prev: &f64| (prev - value).abs() <= tol * (1.0 + prev.abs()));
        trace.push(value);
        if settled {
            break;
        }
    }
    Ok(ScaStage { b, trace, feasible: true })
}

/// Largest entry per element, lowest level on ties.
pub fn round_selection(b: &DMatrix<f64>) -> PhaseSelection {
    let levels = (0..b.nrows())
        .map(|i| (0..b.ncols()).fold(0, |best, j| if b[(i, j)] > b[(i, best)] { j } else { best }))
        .collect();
    PhaseSelection { levels }
}

/// Penalty SCA from the uniform point `1/L`, rounded and re-solved at
/// the resulting selection.
pub fn penalty_sca(inst: &Instance, cfg: &ScaConfig) -> Result<BaselineResult> {
    let (n, l) = (inst.n(), inst.l());
    let mut b = DMatrix::from_element(n, l, 1.0 / l as f64);
    let mut trace = Vec::new();
    let mut iterations = 0;
    for &mu in &cfg.mu {
        let stage = sca_stage(inst, mu, b, cfg.max_iter, cfg.tol)?;
        iterations += stage.trace.len();
        trace.extend(&stage.trace);
        b = stage.b;
        if !stage.feasible {
            return Ok(BaselineResult {
                scheme: BaselineScheme::PenaltySca,
                selection: round_selection(&b),
                design: None,
                objective: None,
                iterations,
                trace,
            });
        }
    }
    let selection = round_selection(&b);
    let (objective, design) = fixed(inst, &selection)?;
    Ok(BaselineResult { scheme: BaselineScheme::PenaltySca, selection, design, objective, iterations, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ScenarioConfig;

    fn desk(seed: u64) -> Instance {
        Instance::from_config(&ScenarioConfig { seed, ..ScenarioConfig::desk() }).unwrap()
    }

    #[test]
    fn random_phase_is_deterministic() {
        let inst = desk(3);
        let a = random_phase_baseline(&inst, 11).unwrap();
        let b = random_phase_baseline(&inst, 11).unwrap();
        assert_eq!(a.selection, b.selection);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn single_level_has_no_randomness() {
        let cfg = ScenarioConfig { l: 1, ..ScenarioConfig::desk() };
        let inst = Instance::from_config(&cfg).unwrap();
        let r = random_phase_baseline(&inst, 5).unwrap();
        assert_eq!(r.selection, PhaseSelection::zeros(inst.n()));
        let (direct, _) = fixed(&inst, &PhaseSelection::zeros(inst.n())).unwrap();
        assert_eq!(r.objective, direct);
    }

    #[test]
    fn refinement_is_monotone() {
        let inst = desk(1);
        let r = alternating_opt_baseline(&inst, 20).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.objective, r.trace.last().copied());
    }

    #[test]
    fn single_element_refinement_is_exhaustive() {
        let cfg = ScenarioConfig { n: 1, l: 4, k: 1, gamma: vec![10.0], sigma2: vec![1e-12], seed: 2, ..ScenarioConfig::desk() };
        let inst = Instance::from_config(&cfg).unwrap();
        let r = alternating_opt_baseline(&inst, 10).unwrap();
        let best = (0..4)
            .map(|i| fixed(&inst, &PhaseSelection::from_index(i, 1, 4)).unwrap().0.unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!((r.objective.unwrap() - best).abs() <= 1e-9 * best * 10.0);
    }

    #[test]
    fn penalty_vanishes_on_binary_points() {
        let b = PhaseSelection { levels: vec![1, 0, 2] }.one_hot(3);
        assert_eq!(penalty(&b, 0.01), 0.0);
        assert!(penalty(&DMatrix::from_element(3, 3, 1.0 / 3.0), 1.0) > 0.0);
    }

    #[test]
    fn rounding_prefers_lowest_level_on_ties() {
        let b = DMatrix::from_row_slice(2, 3, &[0.4, 0.4, 0.2, 0.1, 0.3, 0.6]);
        assert_eq!(round_selection(&b).levels, vec![0, 2]);
    }

    #[test]
    fn sca_surrogate_is_nonincreasing() {
        let inst = desk(2);
        let stage = sca_stage(&inst, 1.0, DMatrix::from_element(inst.n(), inst.l(), 0.5), 15, 1e-7).unwrap();
        assert!(stage.feasible);
        for w in stage.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-6 * (1.0 + w[0].abs()), "{:?}", stage.trace);
        }
        let r = penalty_sca(&inst, &ScaConfig::default()).unwrap();
        assert_eq!(penalty(&r.selection.one_hot(inst.l()), 0.01), 0.0);
        assert!(r.is_feasible());
    }

    #[test]
    fn nonpositive_mu_is_rejected() {
        let inst = desk(0);
        let b = DMatrix::from_element(inst.n(), inst.l(), 0.5);
        assert!(matches!(sca_stage(&inst, 0.0, b, 5, 1e-6), Err(Error::Domain(_))));
    }
}
