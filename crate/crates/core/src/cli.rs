//! Experiment plans, Monte-Carlo sweeps and single-instance reports
//! behind the command-line tool.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{alternating_opt_baseline, penalty_sca, random_phase_baseline, ScaConfig};
use crate::channel::{watts_to_dbm, ScenarioConfig};
use crate::error::{Error, Result};
use crate::gbd::{run, GbdConfig, GbdState, GbdStatus, Instance};
use crate::oracle::{enumerate, selection_count, OracleConfig, DEFAULT_BUDGET};
use crate::reformulation::{DesignPoint, PhaseSelection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Gbd,
    Oracle,
    RandomPhase,
    AlternatingOpt,
    PenaltySca,
}

impl Scheme {
    pub const ALL: [Scheme; 5] =
        [Scheme::Gbd, Scheme::Oracle, Scheme::RandomPhase, Scheme::AlternatingOpt, Scheme::PenaltySca];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Gbd => "gbd",
            Scheme::Oracle => "oracle",
            Scheme::RandomPhase => "random_phase",
            Scheme::AlternatingOpt => "alternating_opt",
            Scheme::PenaltySca => "penalty_sca",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Single,
    /// Common SINR target of every user, dB.
    GammaDb(Vec<f64>),
    /// IRS element counts.
    N(Vec<usize>),
}

fn default_trials() -> usize {
    1
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::Gbd]
}

fn default_budget() -> u64 {
    DEFAULT_BUDGET
}

fn default_delta() -> f64 {
    GbdConfig::default().delta_rel
}

fn default_ao_rounds() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub label: Option<String>,
    pub base: ScenarioConfig,
    pub sweep: Sweep,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_budget")]
    pub oracle_budget: u64,
    /// Relative convergence tolerance of GBD.
    #[serde(default = "default_delta")]
    pub delta_rel: f64,
    #[serde(default = "default_ao_rounds")]
    pub ao_rounds: usize,
    /// Record wall-clock times; off by default so reruns are bit-identical.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentPlan {
    pub fn single(base: ScenarioConfig) -> Self {
        Self {
            label: None,
            base,
            sweep: Sweep::Single,
            trials: 1,
            schemes: default_schemes(),
            output: None,
            oracle_budget: DEFAULT_BUDGET,
            delta_rel: default_delta(),
            ao_rounds: default_ao_rounds(),
            timing: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// `(sweep value, scenario)` for every sweep point.
    pub fn points(&self) -> Vec<(f64, ScenarioConfig)> {
        match &self.sweep {
            Sweep::Single => vec![(0.0, self.base.clone())],
            Sweep::GammaDb(v) => v
                .iter()
                .map(|&db| {
                    let mut c = self.base.clone();
                    c.set_gamma_db(db);
                    (db, c)
                })
                .collect(),
            Sweep::N(v) => v.iter().map(|&n| (n as f64, ScenarioConfig { n, ..self.base.clone() })).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("no schemes selected".into()));
        }
        if !(self.delta_rel >= 0.0) {
            return Err(Error::InvalidConfig(format!("delta_rel must be nonnegative (got {})", self.delta_rel)));
        }
        let points = self.points();
        if points.is_empty() {
            return Err(Error::InvalidConfig("sweep has no points".into()));
        }
        for (_, cfg) in &points {
            cfg.validate()?;
            if self.schemes.contains(&Scheme::Oracle) {
                let count = selection_count(cfg.n, cfg.l).unwrap_or(u128::MAX);
                if count > self.oracle_budget as u128 {
                    return Err(Error::InvalidConfig(format!(
                        "oracle needs {count} selections at n = {}, over the budget {}",
                        cfg.n, self.oracle_budget
                    )));
                }
            }
        }
        Ok(())
    }

    fn gbd_config(&self) -> GbdConfig {
        GbdConfig { delta_rel: self.delta_rel, max_iter: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowStatus {
    Optimal,
    Feasible,
    NotConverged,
    Infeasible,
    Failed,
}

impl RowStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RowStatus::Optimal => "optimal",
            RowStatus::Feasible => "feasible",
            RowStatus::NotConverged => "not_converged",
            RowStatus::Infeasible => "infeasible",
            RowStatus::Failed => "failed",
        }
    }
}

/// Outcome of one scheme on one instance.
#[derive(Clone, Debug)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub status: RowStatus,
    /// Watts.
    pub power: Option<f64>,
    pub selection: Option<PhaseSelection>,
    pub design: Option<DesignPoint>,
    pub iterations: usize,
    pub gbd: Option<GbdState>,
    pub detail: Option<String>,
}

impl SchemeOutcome {
    fn from_error(scheme: Scheme, e: &Error) -> Self {
        let status = match e {
            Error::Infeasible { .. } => RowStatus::Infeasible,
            _ => RowStatus::Failed,
        };
        Self {
            scheme,
            status,
            power: None,
            selection: None,
            design: None,
            iterations: 0,
            gbd: None,
            detail: Some(e.to_string()),
        }
    }
}

/// Runs one scheme; solver errors become a failed outcome rather than
/// aborting.
pub fn run_scheme(inst: &Instance, scheme: Scheme, plan: &ExperimentPlan, seed: u64) -> SchemeOutcome {
    let result = match scheme {
        Scheme::Gbd => run(inst, &plan.gbd_config()).map(|st| {
            let status = match st.status {
                GbdStatus::Converged => RowStatus::Optimal,
                GbdStatus::NotConverged => RowStatus::NotConverged,
            };
            let (selection, design) = st.incumbent.clone().unzip();
            SchemeOutcome {
                scheme,
                status,
                power: st.ub.is_finite().then_some(st.ub),
                selection,
                design,
                iterations: st.iteration,
                gbd: Some(st),
                detail: None,
            }
        }),
        Scheme::Oracle => {
            enumerate(inst, &OracleConfig { budget: plan.oracle_budget, keep_table: false }).map(|o| {
                let (selection, power) = o.best.clone().unzip();
                let status = match (&power, o.is_trustworthy()) {
                    (_, false) => RowStatus::Failed,
                    (Some(_), true) => RowStatus::Optimal,
                    (None, true) => RowStatus::Infeasible,
                };
                SchemeOutcome {
                    scheme,
                    status,
                    power,
                    selection,
                    design: None,
                    iterations: o.evaluated,
                    gbd: None,
                    detail: (!o.failures.is_empty()).then(|| format!("{} selections failed", o.failures.len())),
                }
            })
        }
        Scheme::RandomPhase | Scheme::AlternatingOpt | Scheme::PenaltySca => {
            let r = match scheme {
                Scheme::RandomPhase => random_phase_baseline(inst, seed),
                Scheme::AlternatingOpt => alternating_opt_baseline(inst, plan.ao_rounds),
                _ => penalty_sca(inst, &ScaConfig::default()),
            };
            r.map(|b| SchemeOutcome {
                scheme,
                status: if b.is_feasible() { RowStatus::Feasible } else { RowStatus::Infeasible },
                power: b.objective,
                selection: Some(b.selection),
                design: b.design,
                iterations: b.iterations,
                gbd: None,
                detail: None,
            })
        }
    };
    result.unwrap_or_else(|e| SchemeOutcome::from_error(scheme, &e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub sweep_value: f64,
    pub trial: usize,
    pub scheme: Scheme,
    pub status: RowStatus,
    pub power_dbm: Option<f64>,
    pub iterations: usize,
    pub wall_ms: Option<f64>,
}

/// Seed of a trial: the base seed plus the trial index.
pub fn trial_seed(base: &ScenarioConfig, trial: usize) -> u64 {
    base.seed.wrapping_add(trial as u64)
}

/// Every scheme on every (sweep point, trial), in that order.
pub fn run_plan(plan: &ExperimentPlan) -> Result<Vec<Row>> {
    plan.validate()?;
    let jobs: Vec<(f64, usize, ScenarioConfig)> = plan
        .points()
        .into_iter()
        .flat_map(|(v, cfg)| (0..plan.trials).map(move |t| (v, t, cfg.clone())))
        .collect();
    let rows: Vec<Vec<Row>> = jobs
        .par_iter()
        .map(|(value, trial, cfg)| {
            let seed = trial_seed(cfg, *trial);
            let cfg = ScenarioConfig { seed, ..cfg.clone() };
            let inst = Instance::from_config(&cfg);
            plan.schemes
                .iter()
                .map(|&scheme| {
                    let start = Instant::now();
                    let out = match &inst {
                        Ok(inst) => run_scheme(inst, scheme, plan, seed),
                        Err(e) => SchemeOutcome::from_error(scheme, e),
                    };
                    let ms = start.elapsed().as_secs_f64() * 1e3;
                    Row {
                        sweep_value: *value,
                        trial: *trial,
                        scheme,
                        status: out.status,
                        power_dbm: out.power.map(watts_to_dbm),
                        iterations: out.iterations,
                        wall_ms: plan.timing.then_some(ms),
                    }
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.9}"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_rows<W: Write>(rows: &[Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sweep_value", "trial", "scheme", "status", "power_dBm", "iterations", "wall_ms"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.sweep_value.to_string(),
            r.trial.to_string(),
            r.scheme.to_string(),
            r.status.name().to_string(),
            opt(r.power_dbm),
            r.iterations.to_string(),
            r.wall_ms.map_or_else(String::new, |x| format!("{x:.3}")),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per (sweep point, scheme) aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub trials: usize,
    /// Trials with a finite power.
    pub feasible: usize,
    pub infeasible: usize,
    pub failed: usize,
    /// Mean power over feasible trials, converted to dBm after averaging
    /// in watts.
    pub mean_power_dbm: Option<f64>,
}

pub fn summarize(rows: &[Row]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, Scheme)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(v, s)| v == r.sweep_value && s == r.scheme) {
            keys.push((r.sweep_value, r.scheme));
        }
    }
    keys.into_iter()
        .map(|(value, scheme)| {
            let group: Vec<&Row> = rows.iter().filter(|r| r.sweep_value == value && r.scheme == scheme).collect();
            let watts: Vec<f64> = group.iter().filter_map(|r| r.power_dbm).map(|d| 10f64.powf(d / 10.0) / 1e3).collect();
            let mean = (!watts.is_empty()).then(|| watts_to_dbm(watts.iter().sum::<f64>() / watts.len() as f64));
            SummaryRow {
                sweep_value: value,
                scheme,
                trials: group.len(),
                feasible: watts.len(),
                infeasible: group.iter().filter(|r| r.status == RowStatus::Infeasible).count(),
                failed: group.iter().filter(|r| r.status == RowStatus::Failed).count(),
                mean_power_dbm: mean,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sweep_value", "scheme", "trials", "feasible", "infeasible", "failed", "mean_power_dBm"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.sweep_value.to_string(),
            r.scheme.to_string(),
            r.trials.to_string(),
            r.feasible.to_string(),
            r.infeasible.to_string(),
            r.failed.to_string(),
            opt(r.mean_power_dbm),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Paired GBD-versus-oracle comparison on one instance.
#[derive(Clone, Debug)]
pub struct PairedCheck {
    pub seed: u64,
    pub gbd: Option<f64>,
    pub oracle: Option<f64>,
    pub iterations: usize,
    pub matches: bool,
    pub detail: Option<String>,
}

pub const MATCH_REL_TOL: f64 = 1e-5;

pub fn oracle_check(plan: &ExperimentPlan) -> Result<Vec<PairedCheck>> {
    plan.validate()?;
    let points = plan.points();
    let jobs: Vec<ScenarioConfig> = points
        .iter()
        .flat_map(|(_, cfg)| (0..plan.trials).map(move |t| ScenarioConfig { seed: trial_seed(cfg, t), ..cfg.clone() }))
        .collect();
    jobs.par_iter()
        .map(|cfg| {
            let inst = Instance::from_config(cfg)?;
            let g = run_scheme(&inst, Scheme::Gbd, plan, cfg.seed);
            let o = run_scheme(&inst, Scheme::Oracle, plan, cfg.seed);
            let matches = match (g.power, o.power) {
                (Some(a), Some(b)) => g.status == RowStatus::Optimal && (a - b).abs() <= MATCH_REL_TOL * b,
                (None, None) => g.status == RowStatus::Infeasible && o.status == RowStatus::Infeasible,
                _ => false,
            };
            Ok(PairedCheck {
                seed: cfg.seed,
                gbd: g.power,
                oracle: o.power,
                iterations: g.iterations,
                matches,
                detail: g.detail.or(o.detail),
            })
        })
        .collect()
}

/// Human-readable report of one scheme on one instance.
pub fn report(inst: &Instance, out: &SchemeOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scheme     {}", out.scheme);
    let _ = writeln!(s, "status     {}", out.status.name());
    if let Some(p) = out.power {
        let _ = writeln!(s, "power      {:.6} dBm ({p:.6e} W)", watts_to_dbm(p));
    }
    if let Some(sel) = &out.selection {
        let _ = writeln!(s, "selection  [{}]", sel.display());
        if let Some(d) = &out.design {
            let sinr = inst.achieved_sinr(sel, &d.w);
            let fmt: Vec<String> = sinr
                .iter()
                .zip(&inst.gamma)
                .map(|(a, g)| format!("{:.4} dB (target {:.4} dB)", 10.0 * a.log10(), 10.0 * g.log10()))
                .collect();
            let _ = writeln!(s, "sinr       {}", fmt.join(", "));
        }
    }
    let _ = writeln!(s, "iterations {}", out.iterations);
    if let Some(st) = &out.gbd {
        let _ = writeln!(
            s,
            "bounds     UB {:.6e} W, LB {:.6e} W, {} optimality / {} feasibility cuts",
            st.ub,
            st.lb,
            st.feasible_iterations.len(),
            st.infeasible_iterations.len()
        );
    }
    if let Some(d) = &out.detail {
        let _ = writeln!(s, "detail     {d}");
    }
    s
}

/// Process exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible { .. } => 2,
        Error::NumericalFailure { .. } | Error::CutValidity(_) | Error::Contract(_) => 3,
        Error::InvalidConfig(_) | Error::Parse(_) | Error::Domain(_) | Error::BudgetExceeded { .. } => 4,
        Error::Io(_) => 1,
    }
}

/// Exit status of a single-scheme run.
pub fn outcome_code(out: &SchemeOutcome) -> i32 {
    match out.status {
        RowStatus::Optimal | RowStatus::Feasible => 0,
        RowStatus::Infeasible => 2,
        RowStatus::NotConverged | RowStatus::Failed => 3,
    }
}
