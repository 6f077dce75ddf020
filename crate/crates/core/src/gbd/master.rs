//! The mixed-integer master program over the cut pool, solved by
//! branch-and-bound on LP relaxations.
//!
//! Node bounds are not read off the LP objective. The LP duals are turned
//! into a Lagrangian bound `min_b Σ μⱼ cutⱼ(b) + Σ νⱼ fcutⱼ(b)` over the
//! node's one-hot box, which is separable per element and valid for any
//! `μ ≥ 0` with `Σ μ = 1` and `ν ≥ 0`, so an inaccurate LP only weakens
//! pruning.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use super::cuts::{Cut, CutKind};
use crate::conic::{solve, AffineExpr, Cone, ConeProgram, ConicSettings, ConicStatus, Layout};
use crate::error::Result;
use crate::reformulation::PhaseSelection;

/// Values within this relative distance of the optimum count as ties and
/// are resolved lexicographically.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct MasterSolution {
    /// Optimal `η`, normalized units.
    pub eta: f64,
    pub selection: PhaseSelection,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MasterOutcome {
    Solved(MasterSolution),
    /// The feasibility cuts exclude every selection.
    Infeasible { nodes: usize },
}

/// `max(0, max_j cutⱼ(sel))` if no feasibility cut is positive at `sel`.
pub fn master_value(cuts: &[Cut], sel: &PhaseSelection) -> Option<f64> {
    let mut eta: f64 = 0.0;
    for c in cuts {
        let v = c.eval(sel);
        match c.kind {
            CutKind::Optimality => eta = eta.max(v),
            CutKind::Feasibility if v > 0.0 => return None,
            CutKind::Feasibility => {}
        }
    }
    Some(eta)
}

/// Reference solution by enumerating all `L^N` selections.
pub fn brute_force(cuts: &[Cut], n: usize, l: usize) -> Option<(f64, PhaseSelection)> {
    let values: Vec<_> = (0..(l as u128).pow(n as u32))
        .map(|i| PhaseSelection::from_index(i, n, l))
        .filter_map(|s| master_value(cuts, &s).map(|v| (v, s)))
        .collect();
    let best = values.iter().map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
    values.into_iter().find(|(v, _)| *v <= best + tie_slack(best))
}

fn tie_slack(v: f64) -> f64 {
    TIE_TOL * (1.0 + v.abs())
}

#[derive(Clone, Debug)]
struct Node {
    fixed: Vec<Option<usize>>,
    bound: f64,
}

impl Node {
    fn leaf(&self) -> Option<PhaseSelection> {
        self.fixed.iter().copied().collect::<Option<Vec<_>>>().map(|levels| PhaseSelection { levels })
    }

    fn child(&self, n: usize, l: usize, bound: f64) -> Node {
        let mut fixed = self.fixed.clone();
        fixed[n] = Some(l);
        Node { fixed, bound }
    }
}

enum Relaxation {
    Bound { bound: f64, point: DMatrix<f64> },
    Infeasible,
    Unknown,
}

struct Master<'a> {
    cuts: &'a [Cut],
    n: usize,
    l: usize,
    settings: ConicSettings,
    nodes: usize,
}

impl Master<'_> {
    fn row_scale(c: &Cut) -> f64 {
        c.coeffs.amax().max(c.constant.abs()).max(1.0)
    }

    /// Lagrangian bound over the node box, `+∞` if the multipliers prove
    /// the box holds no feasible selection.
    fn lagrangian(&self, fixed: &[Option<usize>], mu: &[f64], nu: &[f64], floor: f64) -> f64 {
        let total: f64 = mu.iter().sum::<f64>() + floor;
        let (mu_scale, ray) = if total > 0.0 { (1.0 / total, false) } else { (0.0, true) };
        let mut coef = DMatrix::zeros(self.n, self.l);
        let mut constant = 0.0;
        let (mut oi, mut fi) = (0, 0);
        for c in self.cuts {
            let w = match c.kind {
                CutKind::Optimality => {
                    oi += 1;
                    mu[oi - 1] * mu_scale
                }
                CutKind::Feasibility => {
                    fi += 1;
                    nu[fi - 1]
                }
            };
            if w > 0.0 {
                coef += &c.coeffs * w;
                constant += c.constant * w;
            }
        }
        let mut value = constant;
        for (n, f) in fixed.iter().enumerate() {
            value += match f {
                Some(l) => coef[(n, *l)],
                None => coef.row(n).min(),
            };
        }
        match ray {
            true if value > 0.0 => f64::INFINITY,
            true => f64::NEG_INFINITY,
            false => value,
        }
    }

    fn relax(&mut self, fixed: &[Option<usize>]) -> Result<Relaxation> {
        let (n, l) = (self.n, self.l);
        let mut layout = Layout::default();
        let b0 = layout.add("b", n * l);
        let eta = layout.add("eta", 1);
        let mut p = ConeProgram::new(layout);
        p.objective[eta] = 1.0;

        let mut one_hot = Vec::new();
        for i in 0..n {
            match fixed[i] {
                Some(f) => {
                    for j in 0..l {
                        let mut e = AffineExpr::var(b0 + i * l + j);
                        e.constant = -((j == f) as u8 as f64);
                        one_hot.push(e);
                    }
                }
                None => {
                    let mut e = AffineExpr::constant(-1.0);
                    for j in 0..l {
                        e.add_term(b0 + i * l + j, 1.0);
                    }
                    one_hot.push(e);
                }
            }
        }
        p.push("one_hot", Cone::Zero, one_hot);
        p.push("bounds", Cone::Nonneg, (0..n * l).map(|i| AffineExpr::var(b0 + i)).collect());
        p.push("floor", Cone::Nonneg, vec![AffineExpr::var(eta)]);

        let cut_row = |c: &Cut, sign: f64| {
            let s = sign / Self::row_scale(c);
            let mut e = AffineExpr::constant(c.constant * s);
            for i in 0..n {
                for j in 0..l {
                    e.add_term(b0 + i * l + j, c.coeffs[(i, j)] * s);
                }
            }
            e
        };
        let (opt, feas): (Vec<&Cut>, Vec<&Cut>) = self.cuts.iter().partition(|c| c.kind == CutKind::Optimality);
        let opt_rows = opt
            .iter()
            .map(|c| {
                let mut e = cut_row(c, -1.0);
                e.add_term(eta, 1.0 / Self::row_scale(c));
                e
            })
            .collect();
        p.push("optimality", Cone::Nonneg, opt_rows);
        p.push("feasibility", Cone::Nonneg, feas.iter().map(|c| cut_row(c, -1.0)).collect());

        self.nodes += 1;
        let sol = solve(&p, &self.settings)?;
        let dual = |name: &str| sol.block_dual(&p, name).map(<[f64]>::to_vec).unwrap_or_default();
        let unscale = |z: Vec<f64>, cuts: &[&Cut]| -> Vec<f64> {
            z.iter().zip(cuts).map(|(z, c)| z.max(0.0) / Self::row_scale(c)).collect()
        };
        let mu = unscale(dual("optimality"), &opt);
        let nu = unscale(dual("feasibility"), &feas);
        let floor = dual("floor").first().copied().unwrap_or(0.0).max(0.0);
        if sol.z.iter().any(|v| !v.is_finite()) {
            return Ok(Relaxation::Unknown);
        }
        match sol.status {
            ConicStatus::Infeasible => {
                let value = self.lagrangian(fixed, &vec![0.0; mu.len()], &nu, 0.0);
                Ok(if value == f64::INFINITY { Relaxation::Infeasible } else { Relaxation::Unknown })
            }
            _ => {
                let bound = self.lagrangian(fixed, &mu, &nu, floor);
                let x = sol.slice(&p, "b").map(<[f64]>::to_vec);
                match x {
                    Some(x) if x.iter().all(|v| v.is_finite()) && sol.status == ConicStatus::Optimal => {
                        Ok(Relaxation::Bound { bound, point: DMatrix::from_row_slice(n, l, &x) })
                    }
                    _ if bound.is_finite() => Ok(Relaxation::Bound { bound, point: DMatrix::zeros(n, l) }),
                    _ => Ok(Relaxation::Unknown),
                }
            }
        }
    }

    /// Rounds the LP point of a node to its largest entry per element,
    /// lowest level on ties.
    fn round(fixed: &[Option<usize>], point: &DMatrix<f64>) -> PhaseSelection {
        let levels = fixed
            .iter()
            .enumerate()
            .map(|(i, f)| {
                f.unwrap_or_else(|| {
                    let row = point.row(i);
                    (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
                })
            })
            .collect();
        PhaseSelection { levels }
    }

    fn most_fractional(fixed: &[Option<usize>], point: &DMatrix<f64>) -> usize {
        let mut best = None;
        let mut frac = f64::NEG_INFINITY;
        for (i, f) in fixed.iter().enumerate() {
            if f.is_none() {
                let v = 1.0 - point.row(i).max();
                if v > frac {
                    frac = v;
                    best = Some(i);
                }
            }
        }
        best.expect("branching on a leaf")
    }

    /// Best-bound search for the optimal value.
    fn optimum(&mut self) -> Result<Option<f64>> {
        let mut open = vec![Node { fixed: vec![None; self.n], bound: 0.0 }];
        let mut best: Option<f64> = None;
        let better = |v: f64, best: Option<f64>| best.is_none_or(|b| v < b);
        while !open.is_empty() {
            let i = (0..open.len())
                .min_by(|&a, &b| open[a].bound.partial_cmp(&open[b].bound).unwrap_or(Ordering::Equal))
                .unwrap();
            let node = open.swap_remove(i);
            if let Some(b) = best {
                if node.bound >= b - 1e-12 * (1.0 + b.abs()) {
                    continue;
                }
            }
            if let Some(sel) = node.leaf() {
                if let Some(v) = master_value(self.cuts, &sel) {
                    if better(v, best) {
                        best = Some(v);
                    }
                }
                continue;
            }
            let (bound, branch_on) = match self.relax(&node.fixed)? {
                Relaxation::Infeasible => continue,
                Relaxation::Unknown => (node.bound, node.fixed.iter().position(Option::is_none).unwrap()),
                Relaxation::Bound { bound, point } => {
                    let sel = Self::round(&node.fixed, &point);
                    if let Some(v) = master_value(self.cuts, &sel) {
                        if better(v, best) {
                            best = Some(v);
                        }
                    }
                    (bound.max(node.bound), Self::most_fractional(&node.fixed, &point))
                }
            };
            if let Some(b) = best {
                if bound >= b - 1e-12 * (1.0 + b.abs()) {
                    continue;
                }
            }
            for l in 0..self.l {
                open.push(node.child(branch_on, l, bound));
            }
        }
        Ok(best)
    }

    /// Depth-first search in lexicographic order for the first selection
    /// within the tie tolerance of `target`.
    fn first_within(&mut self, node: Node, target: f64) -> Result<Option<(f64, PhaseSelection)>> {
        let limit = target + tie_slack(target);
        if let Some(sel) = node.leaf() {
            return Ok(master_value(self.cuts, &sel).filter(|&v| v <= limit).map(|v| (v, sel)));
        }
        let bound = match self.relax(&node.fixed)? {
            Relaxation::Infeasible => return Ok(None),
            Relaxation::Unknown => node.bound,
            Relaxation::Bound { bound, .. } => bound.max(node.bound),
        };
        if bound > limit {
            return Ok(None);
        }
        let next = node.fixed.iter().position(Option::is_none).unwrap();
        for l in 0..self.l {
            if let Some(hit) = self.first_within(node.child(next, l, bound), target)? {
                return Ok(Some(hit));
            }
        }
        Ok(None)
    }
}

/// Exact optimum of `min η` subject to the cut pool and `η ≥ 0`, with
/// ties resolved toward the lexicographically smallest selection.
pub fn solve_master(cuts: &[Cut], n: usize, l: usize, settings: &ConicSettings) -> Result<MasterOutcome> {
    let mut m = Master { cuts, n, l, settings: *settings, nodes: 0 };
    let Some(best) = m.optimum()? else {
        return Ok(MasterOutcome::Infeasible { nodes: m.nodes });
    };
    let root = Node { fixed: vec![None; n], bound: 0.0 };
    let (eta, selection) = m
        .first_within(root, best)?
        .expect("the optimal selection lies within its own tie tolerance");
    Ok(MasterOutcome::Solved(MasterSolution { eta, selection, nodes: m.nodes }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cut(kind: CutKind, constant: f64, coeffs: DMatrix<f64>) -> Cut {
        let origin = PhaseSelection::zeros(coeffs.nrows());
        Cut { kind, constant, coeffs, origin_iteration: 0, origin }
    }

    fn solved(cuts: &[Cut], n: usize, l: usize) -> MasterSolution {
        match solve_master(cuts, n, l, &ConicSettings::default()).unwrap() {
            MasterOutcome::Solved(s) => s,
            MasterOutcome::Infeasible { .. } => panic!("master infeasible"),
        }
    }

    #[test]
    fn flat_cut_gives_its_constant() {
        let s = solved(&[cut(CutKind::Optimality, 5.0, DMatrix::zeros(3, 2))], 3, 2);
        assert_eq!(s.eta, 5.0);
        assert_eq!(s.selection.levels, vec![0, 0, 0]);
    }

    #[test]
    fn single_element_prefers_discounted_level() {
        let s = solved(&[cut(CutKind::Optimality, 1.0, DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]))], 1, 2);
        assert_eq!(s.eta, 0.0);
        assert_eq!(s.selection.levels, vec![0]);
    }

    #[test]
    fn empty_pool_uses_the_floor() {
        let s = solved(&[], 4, 3);
        assert_eq!(s.eta, 0.0);
        assert_eq!(s.selection.levels, vec![0; 4]);
    }

    #[test]
    fn feasibility_cuts_exclude_selections() {
        // Excludes b_0 = 0, leaving level 1 at element 0.
        let f = cut(CutKind::Feasibility, 0.5, DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 0.0, 0.0]));
        let s = solved(&[f.clone()], 2, 2);
        assert_eq!(s.selection.levels, vec![1, 0]);
        let everywhere = cut(CutKind::Feasibility, 0.5, DMatrix::zeros(2, 2));
        assert!(matches!(
            solve_master(&[everywhere], 2, 2, &ConicSettings::default()).unwrap(),
            MasterOutcome::Infeasible { .. }
        ));
    }

    #[test]
    fn steep_feasibility_cuts_are_handled() {
        let mut coeffs = DMatrix::zeros(3, 2);
        coeffs[(1, 0)] = 3e7;
        coeffs[(1, 1)] = -3e7;
        let f = cut(CutKind::Feasibility, 0.25, coeffs);
        let o = cut(CutKind::Optimality, 2.0, DMatrix::from_row_slice(3, 2, &[0.0, 0.5, 0.0, 0.0, 0.3, 0.0]));
        let (v, sel) = brute_force(&[f.clone(), o.clone()], 3, 2).unwrap();
        let s = solved(&[f, o], 3, 2);
        assert_eq!(s.selection, sel);
        assert_eq!(s.eta, v);
    }

    fn random_pool(seed: u64, n: usize, l: usize, count: usize, feas: usize) -> Vec<Cut> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = Vec::new();
        for i in 0..count + feas {
            let kind = if i < count { CutKind::Optimality } else { CutKind::Feasibility };
            let coeffs = DMatrix::from_fn(n, l, |_, _| rng.gen_range(-1.0..1.0));
            let constant = match kind {
                CutKind::Optimality => rng.gen_range(0.0..3.0),
                CutKind::Feasibility => rng.gen_range(-1.0..0.5),
            };
            pool.push(cut(kind, constant, coeffs));
        }
        pool
    }

    #[test]
    fn matches_enumeration_on_random_pools() {
        for seed in 0..40 {
            let pool = random_pool(seed, 3, 2, 1 + seed as usize % 5, seed as usize % 3);
            let reference = brute_force(&pool, 3, 2);
            match (solve_master(&pool, 3, 2, &ConicSettings::default()).unwrap(), reference) {
                (MasterOutcome::Solved(s), Some((v, sel))) => {
                    assert!((s.eta - v).abs() <= 1e-12, "seed {seed}");
                    assert_eq!(s.selection, sel, "seed {seed}");
                }
                (MasterOutcome::Infeasible { .. }, None) => {}
                (got, want) => panic!("seed {seed}: {got:?} vs {want:?}"),
            }
        }
    }

    #[test]
    fn ties_resolve_lexicographically() {
        // Levels 0 and 1 of element 1 cost the same.
        let o = cut(CutKind::Optimality, 1.0, DMatrix::from_row_slice(2, 3, &[0.2, 0.0, 0.0, 0.0, 0.0, 0.4]));
        let s = solved(&[o], 2, 3);
        assert_eq!(s.selection.levels, vec![1, 0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn larger_pools_match_enumeration(seed in 0u64..10_000, count in 1usize..6, feas in 0usize..3) {
            let pool = random_pool(seed, 4, 3, count, feas);
            let reference = brute_force(&pool, 4, 3);
            match solve_master(&pool, 4, 3, &ConicSettings::default()).unwrap() {
                MasterOutcome::Solved(s) => {
                    let (v, sel) = reference.expect("enumeration found no feasible selection");
                    prop_assert!((s.eta - v).abs() <= 1e-12);
                    prop_assert_eq!(s.selection, sel);
                }
                MasterOutcome::Infeasible { .. } => prop_assert!(reference.is_none()),
            }
        }
    }
}
