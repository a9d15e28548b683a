//! Learns policies from generated staging traces for both built-in apps,
//! enforces them on a labeled test corpus and prints the metric table.

use guardian::enforce::EnforceConfig;
use guardian::eval::{builtin, render_table, run_scenario, scenario::BUILTIN_APPS, EvalPlan};
use guardian::induce::DeterministicAggregator;
use guardian::learn::LearnConfig;

fn main() -> guardian::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let plan = EvalPlan { seed, ..EvalPlan::default() };
    let mut reports = Vec::new();
    for app in BUILTIN_APPS {
        let exp = run_scenario(&builtin(app)?, &plan, &LearnConfig::default(), &EnforceConfig::default(), &DeterministicAggregator)?;
        for e in &exp.report.ledger {
            match e.first_block() {
                Some((step, v)) => println!("{:<18} {:<28} blocked at step {step}: {:?}", e.trace_id, e.mutation.as_deref().unwrap_or("-"), v.violations.iter().map(|x| x.kind).collect::<Vec<_>>()),
                None => println!("{:<18} {:<28} allowed", e.trace_id, e.mutation.as_deref().unwrap_or("-")),
            }
        }
        reports.push(exp.report);
    }
    print!("{}", render_table(&reports));
    Ok(())
}
