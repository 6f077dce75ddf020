use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use irs_gbd::channel::{generate_channels, ScenarioConfig};
use irs_gbd::cli::{
    exit_code, oracle_check, outcome_code, report, run_plan, run_scheme, summarize, write_rows, write_summary,
    ExperimentPlan, Scheme, Sweep, MATCH_REL_TOL,
};
use irs_gbd::gbd::Instance;
use irs_gbd::oracle::selection_count;
use irs_gbd::{Error, Result};

#[derive(Parser)]
#[command(name = "irs-gbd", version, about = "Joint beamforming and discrete IRS phase design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme on one seeded instance.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "gbd")]
        scheme: String,
        /// Write the GBD iteration trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a plan file and write per-trial rows as CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Per-point means, infeasible and failure counts.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Paired GBD versus exhaustive-oracle harness.
    OracleCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Write the channel realization of one seed as JSON.
    DumpChannels {
        #[command(flatten)]
        common: Common,
    },
}

/// Plan file plus overrides of its keys.
#[derive(Args)]
struct Common {
    /// TOML plan; defaults to the desk-scale scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    /// Common SINR target, dB.
    #[arg(long)]
    gamma_db: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated scheme names.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Record wall-clock times (rows are then not reproducible).
    #[arg(long)]
    timing: bool,
}

impl Common {
    fn plan(&self) -> Result<ExperimentPlan> {
        let mut plan = match &self.config {
            Some(p) => ExperimentPlan::load(p)?,
            None => ExperimentPlan::single(ScenarioConfig::desk()),
        };
        let b = &mut plan.base;
        if let Some(v) = self.seed {
            b.seed = v;
        }
        if let Some(v) = self.m {
            b.m = v;
        }
        if let Some(v) = self.k {
            b.set_users(v);
        }
        if let Some(v) = self.n {
            b.n = v;
        }
        if let Some(v) = self.l {
            b.l = v;
        }
        if let Some(v) = self.gamma_db {
            b.set_gamma_db(v);
        }
        if let Some(v) = self.trials {
            plan.trials = v;
        }
        if let Some(v) = &self.schemes {
            plan.schemes = v.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        if self.output.is_some() {
            plan.output.clone_from(&self.output);
        }
        plan.timing |= self.timing;
        plan.validate()?;
        Ok(plan)
    }
}

fn sink(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve { common, scheme, trace } => {
            let plan = common.plan()?;
            let scheme: Scheme = scheme.parse()?;
            let inst = Instance::from_config(&plan.base)?;
            if scheme == Scheme::Oracle {
                let needed = selection_count(inst.n(), inst.l()).unwrap_or(u128::MAX);
                if needed > plan.oracle_budget as u128 {
                    return Err(Error::BudgetExceeded { needed, budget: plan.oracle_budget });
                }
            }
            let out = run_scheme(&inst, scheme, &plan, plan.base.seed);
            print!("{}", report(&inst, &out));
            if let (Some(path), Some(st)) = (trace, &out.gbd) {
                st.write_trace_csv(BufWriter::new(File::create(path)?))?;
            }
            Ok(outcome_code(&out))
        }
        Command::Sweep { common, summary } => {
            let plan = common.plan()?;
            if matches!(plan.sweep, Sweep::N(ref v) if v.iter().any(|&n| n > 16)) {
                eprintln!("note: GBD at this IRS size is not desk-scale");
            }
            let rows = run_plan(&plan)?;
            write_rows(&rows, sink(plan.output.as_ref())?)?;
            let table = summarize(&rows);
            match summary {
                Some(p) => write_summary(&table, sink(Some(&p))?)?,
                None => write_summary(&table, io::stderr().lock())?,
            }
            Ok(0)
        }
        Command::OracleCheck { common } => {
            let plan = common.plan()?;
            let checks = oracle_check(&plan)?;
            let mut out = sink(plan.output.as_ref())?;
            writeln!(out, "seed,gbd_w,oracle_w,gbd_iterations,match")?;
            for c in &checks {
                let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.9e}"));
                writeln!(out, "{},{},{},{},{}", c.seed, f(c.gbd), f(c.oracle), c.iterations, c.matches as u8)?;
            }
            let ok = checks.iter().filter(|c| c.matches).count();
            eprintln!("{ok}/{} instances match within {MATCH_REL_TOL:e} relative", checks.len());
            Ok(if ok == checks.len() { 0 } else { 1 })
        }
        Command::DumpChannels { common } => {
            let plan = common.plan()?;
            let ch = generate_channels(&plan.base)?;
            let mut out = sink(plan.output.as_ref())?;
            writeln!(out, "{}", ch.to_json()?)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
