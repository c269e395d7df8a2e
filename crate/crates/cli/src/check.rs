use clap::Args;
use hsr_core::check::{run_suite, Suite};

use crate::{CmdResult, Common, Failure};

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Suite to run (ball, limit, grad, rsgd, agg). Repeatable; all by default.
    #[arg(long)]
    suite: Vec<Suite>,
    /// Overrides each suite's default tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
}

pub fn run(common: &Common, args: &CheckArgs) -> CmdResult {
    let suites = if args.suite.is_empty() { Suite::ALL.to_vec() } else { args.suite.clone() };
    let seed = common.seed.unwrap_or(0);
    let mut failed = 0;
    for s in suites {
        let report = run_suite(s, args.tolerance, seed)?;
        print!("{report}");
        if !report.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        Err(Failure::Checks(failed))
    } else {
        Ok(())
    }
}
