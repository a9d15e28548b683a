//! Checks a few invocations against the bundled read_file policy.

use guardian::enforce::{check_invocation, EnforceConfig, InvocationContext};
use guardian::policy::{read_policy, Snapshot};

fn main() -> guardian::Result<()> {
    let policy = read_policy(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/read_file_policy.json").as_ref())?;
    let snapshot = Snapshot::from_policies([policy])?;
    let base = InvocationContext {
        agent_role: "Senior Data Researcher".into(),
        tool_name: "read_file".into(),
        tool_input: "./Cars/Sedan.txt".into(),
        thoughts: String::new(),
        input_tokens: 2000,
        output_tokens: 100,
        timestamp: 1_748_944_800_000, // 10:00 UTC
        idle_ms: 2000,
        processing_ms: 5000,
        prior_tools: vec!["list_files".into()],
    };
    let cases = [
        ("learned shape", base.clone()),
        ("path traversal", InvocationContext { tool_input: "../../etc/passwd".into(), ..base.clone() }),
        ("skipped listing", InvocationContext { prior_tools: vec![], ..base.clone() }),
        ("token burst", InvocationContext { input_tokens: 9000, ..base.clone() }),
        ("03:00 UTC", InvocationContext { timestamp: base.timestamp - 7 * 3_600_000, ..base.clone() }),
    ];
    let cfg = EnforceConfig::default();
    for (name, ctx) in cases {
        let v = check_invocation(&ctx, &snapshot, &cfg);
        println!("{name:<16} {:<9} {:?}", v.decision.to_string(), v.violations.iter().map(|x| x.detail.as_str()).collect::<Vec<_>>());
    }
    Ok(())
}
