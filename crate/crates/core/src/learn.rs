//! End-to-end staging: trace events in, one policy per (role, tool) out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cfg::flow_specs;
use crate::cluster::{cluster_embeddings, merge_semantic, ClusterParams};
use crate::embed::{embed_event, EmbedConfig};
use crate::error::{Error, Result};
use crate::induce::{induce_rule, Aggregator, Warning};
use crate::policy::{build_policy, write_policy, AccessControlPolicy};
use crate::trace::{assemble_sequences, filter_rare, ExecutionSequence, TraceEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    /// Sequences whose collapsed path occurs fewer times are flagged and
    /// left out of learning. 1 keeps everything.
    pub min_freq: usize,
    pub cluster: ClusterParams,
    pub embed: EmbedConfig,
    /// Policy timestamp; defaults to the newest event in the corpus so
    /// that identical corpora give identical bundles.
    pub created_at: Option<i64>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            min_freq: 1,
            cluster: ClusterParams::default(),
            embed: EmbedConfig::default(),
            created_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolSummary {
    pub agent_role: String,
    pub tool_name: String,
    pub invocations: usize,
    pub clusters: usize,
    pub patterns: usize,
    pub flagged_rules: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct LearnOutput {
    pub policies: Vec<AccessControlPolicy>,
    pub summaries: Vec<ToolSummary>,
    pub warnings: Vec<Warning>,
    /// Trace ids excluded by the frequency filter.
    pub flagged_traces: Vec<String>,
}

impl LearnOutput {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.policies.iter().map(|p| write_policy(dir, p)).collect()
    }
}

pub fn learn_from_events(
    events: Vec<TraceEvent>,
    config: &LearnConfig,
    aggregator: &dyn Aggregator,
) -> Result<LearnOutput> {
    learn(assemble_sequences(events)?, config, aggregator)
}

pub fn learn(
    sequences: Vec<ExecutionSequence>,
    config: &LearnConfig,
    aggregator: &dyn Aggregator,
) -> Result<LearnOutput> {
    config.cluster.validate()?;
    config.embed.validate()?;
    if sequences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let created_at = config.created_at.unwrap_or_else(|| {
        sequences
            .iter()
            .flat_map(|s| s.events.iter().map(|e| e.timestamp))
            .max()
            .unwrap_or(0)
    });

    let mut by_role: BTreeMap<String, Vec<ExecutionSequence>> = BTreeMap::new();
    for s in sequences {
        by_role.entry(s.agent_role.clone()).or_default().push(s);
    }

    let mut out = LearnOutput::default();
    for (role, seqs) in by_role {
        let filtered = filter_rare(seqs, config.min_freq);
        out.flagged_traces
            .extend(filtered.flagged.iter().map(|s| s.trace_id.clone()));
        if filtered.kept.is_empty() {
            out.warnings.push(Warning {
                scope: format!("role:{role}"),
                message: "every trace was below the frequency threshold".into(),
            });
            continue;
        }
        let specs = flow_specs(&filtered.kept);
        let trace_count = filtered.kept.len();

        let mut per_tool: BTreeMap<&str, Vec<&TraceEvent>> = BTreeMap::new();
        for s in &filtered.kept {
            for e in &s.events {
                per_tool.entry(e.tool_name.as_str()).or_default().push(e);
            }
        }

        for (tool, events) in per_tool {
            let vectors: Vec<_> = events.iter().map(|e| embed_event(e, &config.embed)).collect();
            let raw: Vec<String> = events.iter().map(|e| e.tool_input.clone()).collect();
            let set = cluster_embeddings(tool, &vectors, &config.cluster)?;
            let (set, warnings) = merge_semantic(&set, &raw, aggregator);
            out.warnings.extend(warnings);

            let mut rules = Vec::with_capacity(set.len());
            for (k, members) in set.clusters.iter().enumerate() {
                let member_events: Vec<&TraceEvent> = members.iter().map(|&i| events[i]).collect();
                let (rule, warnings) = induce_rule(k, &member_events, aggregator, &config.embed)?;
                out.warnings.extend(warnings.into_iter().map(|w| Warning {
                    scope: format!("{}:{tool}:rule{k}", w.scope),
                    message: w.message,
                }));
                rules.push(rule);
            }

            let flow = specs.get(tool).cloned().expect("every tool has a flow spec");
            let mut policy = build_policy(
                &role,
                tool,
                rules,
                flow,
                config.embed.clone(),
                trace_count,
                created_at,
            )?;
            policy.flagged_rules = set.flagged();
            out.summaries.push(ToolSummary {
                agent_role: role.clone(),
                tool_name: tool.to_string(),
                invocations: events.len(),
                clusters: policy.rules.len(),
                patterns: policy.rules.iter().map(|r| r.textual.patterns.len()).sum(),
                flagged_rules: policy.flagged_rules.clone(),
            });
            out.policies.push(policy);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enforce::{check_invocation, EnforceConfig, InvocationContext};
    use crate::induce::DeterministicAggregator;
    use crate::policy::Snapshot;

    fn ev(trace: &str, i: u64, tool: &str, input: &str) -> TraceEvent {
        TraceEvent {
            trace_id: trace.into(),
            seq_index: i,
            timestamp: 9 * 3_600_000 + i as i64 * 1000,
            agent_role: "Senior Data Researcher".into(),
            thoughts: format!("use {tool}"),
            tool_name: tool.into(),
            tool_input: input.into(),
            task_result: "ok".into(),
            input_tokens: 100 + i,
            output_tokens: 10,
            idle_ms: 0,
            processing_ms: 0,
        }
    }

    #[test]
    fn learned_policies_accept_their_training_corpus() {
        let mut events = Vec::new();
        for (t, file) in ["intro", "trends", "agents"].iter().enumerate() {
            let id = format!("t{t}");
            events.push(ev(&id, 0, "list_files", "./AI"));
            events.push(ev(&id, 1, "read_file", &format!("./AI/ai-{file}-2025.txt")));
        }
        let out = learn_from_events(events.clone(), &LearnConfig::default(), &DeterministicAggregator).unwrap();
        assert_eq!(out.policies.len(), 2);
        let snap = Snapshot::from_policies(out.policies.clone()).unwrap();
        let seqs = assemble_sequences(crate::trace::parse_trace_str(&crate::trace::serialize_trace_log(&events)).unwrap()).unwrap();
        for s in &seqs {
            let mut prior = Vec::new();
            for e in &s.events {
                let ctx = InvocationContext::from_event(e, prior.clone());
                let v = check_invocation(&ctx, &snap, &EnforceConfig::default());
                assert!(v.is_allow(), "{v:?}");
                prior.push(e.tool_name.clone());
            }
        }
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(matches!(
            learn(Vec::new(), &LearnConfig::default(), &DeterministicAggregator),
            Err(Error::EmptyCorpus)
        ));
    }
}
