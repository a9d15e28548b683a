//! Builds the tool graph and per-tool leading contexts from three traces.

use guardian::cfg::{build_cfg, flow_specs, FlowMode};
use guardian::trace::{ExecutionSequence, TraceEvent};

fn trace(id: &str, tools: &[&str]) -> ExecutionSequence {
    let events = tools
        .iter()
        .enumerate()
        .map(|(i, t)| TraceEvent {
            trace_id: id.into(),
            seq_index: i as u64,
            timestamp: 36_000_000 + i as i64 * 1000,
            agent_role: "Researcher".into(),
            thoughts: String::new(),
            tool_name: t.to_string(),
            tool_input: String::new(),
            task_result: String::new(),
            input_tokens: 0,
            output_tokens: 0,
            idle_ms: 0,
            processing_ms: 0,
        })
        .collect();
    ExecutionSequence::from_events(events).unwrap()
}

fn main() -> guardian::Result<()> {
    let traces = [
        trace("a", &["list_files", "read_file", "serper_search"]),
        trace("b", &["list_files", "read_file", "read_file", "serper_search"]),
        trace("c", &["serper_search", "send_email"]),
    ];
    print!("{}", build_cfg(&traces)?.render());
    let specs = flow_specs(&traces);
    for spec in specs.values() {
        print!("{}", spec.render());
    }
    let read = &specs["read_file"];
    for prior in [vec!["list_files"], vec!["serper_search"], vec!["list_files", "read_file", "read_file"]] {
        println!("read_file after {prior:?}: path={} edge={}", read.allows(&prior, FlowMode::Path), read.allows(&prior, FlowMode::Edge));
    }
    Ok(())
}
