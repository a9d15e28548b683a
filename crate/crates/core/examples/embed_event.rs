//! Embeds two invocations and compares them block by block.

use guardian::embed::{cosine_similarity, embed_event, Block, EmbedConfig};
use guardian::trace::TraceEvent;

fn main() {
    let event = |tool: &str, input: &str| TraceEvent {
        trace_id: "t".into(),
        seq_index: 0,
        timestamp: 1_748_944_800_000,
        agent_role: "Senior Data Researcher".into(),
        thoughts: "Read the report on AI trends".into(),
        tool_name: tool.into(),
        tool_input: input.into(),
        task_result: "File contents returned".into(),
        input_tokens: 1800,
        output_tokens: 90,
        idle_ms: 1500,
        processing_ms: 4000,
    };
    let cfg = EmbedConfig::default();
    let a = embed_event(&event("read_file", "./AI/ai-intro-2025.txt"), &cfg);
    let b = embed_event(&event("read_file", "./AI/ai-trends-2025.txt"), &cfg);
    let c = embed_event(&event("send_email", "boss@example.com"), &cfg);
    for block in [Block::ToolType, Block::ToolInput] {
        println!("{block:?}: similar={:.3} different={:.3}", cosine_similarity(a.block(block), b.block(block)), cosine_similarity(a.block(block), c.block(block)));
    }
    println!("whole vector: {:.3} vs {:.3}", cosine_similarity(a.as_slice(), b.as_slice()), cosine_similarity(a.as_slice(), c.as_slice()));
}
