//! Clusters read_file inputs by embedding similarity.

use guardian::cluster::{cluster_embeddings, cosine_distance, ClusterParams};
use guardian::embed::{embed_event, EmbedConfig};
use guardian::trace::TraceEvent;

fn main() -> guardian::Result<()> {
    let inputs = [
        "./Cars/Sedan.txt",
        "./Cars/Hatchback.txt",
        "./Cars/Coupe.txt",
        "./AI/ai-intro-2025.txt",
        "./AI/ai-trends-2025.txt",
        "./AI/ai-safety-2025.txt",
    ];
    let vectors: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let e = TraceEvent {
                trace_id: format!("t{i}"),
                seq_index: 0,
                timestamp: 1_748_944_800_000,
                agent_role: "Senior Data Researcher".into(),
                thoughts: String::new(),
                tool_name: "read_file".into(),
                tool_input: input.to_string(),
                task_result: String::new(),
                input_tokens: 2000,
                output_tokens: 100,
                idle_ms: 0,
                processing_ms: 0,
            };
            embed_event(&e, &EmbedConfig::default())
        })
        .collect();
    let d = |i: usize, j: usize| cosine_distance(vectors[i].as_slice(), vectors[j].as_slice());
    println!("distance Sedan-Coupe {:.4}, Sedan-ai-intro {:.4}", d(0, 2), d(0, 3));
    for threshold in [0.02, 0.12, 0.35] {
        let params = ClusterParams { merge_threshold: threshold, ..ClusterParams::default() };
        let set = cluster_embeddings("read_file", &vectors, &params)?;
        let named: Vec<Vec<&str>> = set.clusters.iter().map(|c| c.iter().map(|&i| inputs[i]).collect()).collect();
        println!("threshold {threshold}: {named:?}");
    }
    Ok(())
}
