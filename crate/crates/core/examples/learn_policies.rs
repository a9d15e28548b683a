//! Learns policies from a JSONL trace log and writes them to a directory.
//!
//! ```text
//! cargo run --example learn_policies -- traces.jsonl out/
//! ```
//! Without arguments a staging log is generated for the knowledge assistant
//! and the policies are printed instead of written.

use guardian::eval::builtin;
use guardian::induce::DeterministicAggregator;
use guardian::learn::{learn_from_events, LearnConfig};
use guardian::trace::read_trace_path;

fn main() -> guardian::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let events = match args.first() {
        Some(path) => read_trace_path(path.as_ref())?,
        None => builtin("knowledge_assistant")?
            .generate_staging(60, 12)
            .into_iter()
            .flat_map(|s| s.trace.events)
            .collect(),
    };
    let learned = learn_from_events(events, &LearnConfig::default(), &DeterministicAggregator)?;
    for s in &learned.summaries {
        println!("{} / {}: {} calls, {} clusters", s.agent_role, s.tool_name, s.invocations, s.clusters);
    }
    match args.get(1) {
        Some(dir) => {
            for p in learned.write(dir.as_ref())? {
                println!("wrote {}", p.display());
            }
        }
        None => learned.policies.iter().for_each(|p| println!("\n{}", p.render())),
    }
    Ok(())
}
