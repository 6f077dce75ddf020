//! Generalized Benders decomposition over the discrete phase selection.

pub mod cuts;
pub mod master;
pub mod problem;
pub mod run;

pub use cuts::{build_feasibility_cut, build_optimality_cut, Cut, CutKind};
pub use master::{solve_master, MasterOutcome, MasterSolution};
pub use problem::{
    evaluate, solve_feasibility, solve_primal, Instance, PrimalResult, PrimalSolve, Scaling,
};
pub use run::{run, run_observed, GbdConfig, GbdState, GbdStatus, TraceEntry};
