//! `gradcheck`: finite-difference verification of the operator registry.

use crate::options::{validation, CliError, Options};
use inceptext::gradcheck::{builtin_checks, run_checks, DEFAULT_SEEDS, TOLERANCE};

pub fn run(opts: &Options) -> Result<(), CliError> {
    let scope = opts.string("scope")?.unwrap_or_else(|| "all".to_string());
    opts.reject_unknown()?;
    let mut checks = builtin_checks();
    if scope != "all" {
        let names: Vec<&str> = checks.iter().map(|c| c.name).collect();
        if !names.contains(&scope.as_str()) {
            return Err(validation(format!(
                "unknown operator {scope:?}; available: all, {}",
                names.join(", ")
            )));
        }
        checks.retain(|c| c.name == scope);
    }
    let outcomes = run_checks(&checks, &DEFAULT_SEEDS, TOLERANCE);
    let mut any_failed = false;
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!(
            "{:28} max_rel_err={:<14.6e} tolerance={:.0e} {status}",
            o.name, o.max_rel_err, o.tolerance
        );
        if let Some(f) = &o.failure {
            println!("    error: {f}");
        }
        any_failed |= !o.passed;
    }
    if any_failed {
        return Err(CliError::GradcheckFailed);
    }
    Ok(())
}
