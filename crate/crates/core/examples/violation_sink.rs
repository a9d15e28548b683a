//! Routes non-allow verdicts to a custom sink and honors the kill flag.

use std::sync::Arc;

use guardian::enforce::{EnforceConfig, Enforcer, InvocationContext, SinkError, Verdict, ViolationSink};
use guardian::policy::{read_policy, PolicyRepository, Snapshot};

struct Stderr;

impl ViolationSink for Stderr {
    fn deliver(&self, trace_id: Option<&str>, verdict: &Verdict) -> Result<(), SinkError> {
        for v in &verdict.violations {
            eprintln!("[{}] {} {}: {}", trace_id.unwrap_or("-"), verdict.decision, v.kind, v.detail);
        }
        Ok(())
    }
}

fn main() -> guardian::Result<()> {
    let policy = read_policy(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/read_file_policy.json").as_ref())?;
    let repo = Arc::new(PolicyRepository::from_snapshot(Snapshot::from_policies([policy])?));
    let enforcer = Enforcer::new(repo, EnforceConfig::default()).with_sink(Box::new(Stderr));

    let mut prior = vec!["list_files".to_string()];
    for input in ["./Cars/Sedan.txt", "./AI/ai-intro-2025.txt", "~/.ssh/id_rsa", "./Cars/Coupe.txt"] {
        if enforcer.kills.is_killed("run-1") {
            println!("trace stopped, skipping {input}");
            continue;
        }
        let ctx = InvocationContext {
            agent_role: "Senior Data Researcher".into(),
            tool_name: "read_file".into(),
            tool_input: input.into(),
            thoughts: String::new(),
            input_tokens: 2000,
            output_tokens: 100,
            timestamp: 1_748_944_800_000,
            idle_ms: 2000,
            processing_ms: 5000,
            prior_tools: prior.clone(),
        };
        let (verdict, ack) = enforcer.check(&ctx, Some("run-1"));
        println!("{input}: {} delivered={} kill={}", verdict.decision, ack.delivered, ack.kill);
        prior.push("read_file".into());
    }
    Ok(())
}
