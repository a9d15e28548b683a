//! Brute-force oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use guardian::cfg::ToolFlowSpec;
use guardian::embed::EmbedConfig;
use guardian::enforce::{Decision, EnforceConfig, InvocationContext, Severity, ViolationKind};
use guardian::induce::{AttributePredicate, ClusterRule, HourWindow, Interval, TextualPredicate};
use guardian::policy::{build_policy, AccessControlPolicy};
use guardian::trace::{ExecutionSequence, TraceEvent};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const ROLE: &str = "Senior Data Researcher";

pub fn event(trace: &str, i: u64, tool: &str, input: &str, ts: i64) -> TraceEvent {
    TraceEvent {
        trace_id: trace.into(),
        seq_index: i,
        timestamp: ts,
        agent_role: ROLE.into(),
        thoughts: format!("call {tool}"),
        tool_name: tool.into(),
        tool_input: input.into(),
        task_result: "done".into(),
        input_tokens: 100,
        output_tokens: 10,
        idle_ms: 0,
        processing_ms: 0,
    }
}

pub fn sequence(id: &str, tools: &[String]) -> ExecutionSequence {
    let events = tools
        .iter()
        .enumerate()
        .map(|(i, t)| event(id, i as u64, t, "x", 36_000_000 + i as i64 * 1000))
        .collect();
    ExecutionSequence::from_events(events).unwrap()
}

/// Drops an element when it equals its predecessor.
pub fn collapse_oracle(tools: &[String]) -> Vec<String> {
    tools
        .iter()
        .enumerate()
        .filter(|(i, t)| *i == 0 || tools[i - 1] != **t)
        .map(|(_, t)| t.clone())
        .collect()
}

/// Allowed iff some training sequence invokes `tool` right after a prefix
/// whose collapse equals the collapse of `prior`.
pub fn prefix_set_oracle(corpus: &[Vec<String>], tool: &str, prior: &[String]) -> bool {
    let want = collapse_oracle(prior);
    corpus.iter().any(|s| {
        (0..s.len()).any(|i| s[i] == tool && collapse_oracle(&s[..i]) == want)
    })
}

pub fn random_tools(rng: &mut impl Rng, alphabet: &[&str], max_len: usize) -> Vec<String> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| alphabet.choose(rng).unwrap().to_string()).collect()
}

/// Exact average-linkage HAC over points on a line with `|x - y|`
/// distances. Average distances are compared as fractions by
/// cross-multiplication; the merge rule is "closest pair, ties to the
/// smallest (min member, min member) key, stop above `num/den`".
pub fn hac_oracle(points: &[i64], num: i64, den: i64) -> Vec<BTreeSet<usize>> {
    let mut clusters: Vec<BTreeSet<usize>> = (0..points.len()).map(|i| BTreeSet::from([i])).collect();
    loop {
        // (sum, pairs, key, a, b)
        let mut best: Option<(i64, i64, (usize, usize), usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in 0..clusters.len() {
                if a == b {
                    continue;
                }
                let sum: i64 = clusters[a]
                    .iter()
                    .flat_map(|&i| clusters[b].iter().map(move |&j| (points[i] - points[j]).abs()))
                    .sum();
                let pairs = (clusters[a].len() * clusters[b].len()) as i64;
                let (ka, kb) = (*clusters[a].first().unwrap(), *clusters[b].first().unwrap());
                let key = (ka.min(kb), ka.max(kb));
                let better = match best {
                    None => true,
                    Some((bs, bp, bk, _, _)) => sum * bp < bs * pairs || (sum * bp == bs * pairs && key < bk),
                };
                if better {
                    best = Some((sum, pairs, key, a, b));
                }
            }
        }
        match best {
            Some((sum, pairs, _, a, b)) if sum * den <= num * pairs => {
                let moved = clusters[b].clone();
                clusters[a].extend(moved);
                clusters.remove(b);
            }
            _ => break,
        }
    }
    clusters.sort_by_key(|c| *c.first().unwrap());
    clusters
}

/// Severity of each kind under `cfg`.
fn severity(cfg: &EnforceConfig, kind: ViolationKind) -> Severity {
    let s = &cfg.severity;
    match kind {
        ViolationKind::Flow => s.flow,
        ViolationKind::InputPattern => s.input_pattern,
        ViolationKind::Attribute => s.attribute,
        ViolationKind::UnknownTool => s.unknown_tool,
        ViolationKind::NoPolicy => s.no_policy,
        ViolationKind::Internal => Severity::Terminate,
    }
}

fn decide(cfg: &EnforceConfig, kinds: &[ViolationKind]) -> Decision {
    kinds
        .iter()
        .map(|&k| match severity(cfg, k) {
            Severity::Advisory => Decision::Allow,
            Severity::Alert => Decision::Alert,
            Severity::Terminate => Decision::Terminate,
        })
        .max()
        .unwrap_or(Decision::Allow)
}

/// A policy whose patterns are plain literals, with integer quarter-hour
/// windows, so the oracle can decide membership by string equality and
/// integer arithmetic.
#[derive(Debug, Clone)]
pub struct LiteralRule {
    pub literals: Vec<String>,
    pub tokens_in: (u64, u64),
    pub tokens_out: (u64, u64),
    pub idle: (u64, u64),
    pub processing: (u64, u64),
    /// Quarter hours.
    pub hours_q: (u64, u64),
}

#[derive(Debug, Clone)]
pub struct LiteralAcp {
    pub role: String,
    pub tool: String,
    pub contexts: BTreeSet<Vec<String>>,
    pub rules: Vec<LiteralRule>,
}

impl LiteralAcp {
    pub fn to_policy(&self) -> AccessControlPolicy {
        let rules = self
            .rules
            .iter()
            .enumerate()
            .map(|(k, r)| ClusterRule {
                rule_index: k,
                textual: TextualPredicate::new(r.literals.clone()).unwrap(),
                attribute: AttributePredicate {
                    input_tokens: Interval { min: r.tokens_in.0, max: r.tokens_in.1 },
                    output_tokens: Interval { min: r.tokens_out.0, max: r.tokens_out.1 },
                    hours: HourWindow {
                        min_hour: r.hours_q.0 as f64 / 4.0,
                        max_hour: r.hours_q.1 as f64 / 4.0,
                    },
                    idle_ms: Interval { min: r.idle.0, max: r.idle.1 },
                    processing_ms: Interval { min: r.processing.0, max: r.processing.1 },
                },
                support: 1,
            })
            .collect();
        let flow = ToolFlowSpec {
            tool_name: self.tool.clone(),
            repeat: false,
            required_leading_contexts: self.contexts.clone(),
        };
        build_policy(&self.role, &self.tool, rules, flow, EmbedConfig::default(), 1, 0).unwrap()
    }
}

/// `lo/f <= v <= hi*f` with `f = f2/2`, in integers.
fn within(v: u64, (lo, hi): (u64, u64), f2: u64) -> bool {
    v * f2 >= 2 * lo && 2 * v <= hi * f2
}

/// Expected decision and violation kinds, from the policy definition alone.
pub fn acp_oracle(
    policies: &[LiteralAcp],
    ctx: &InvocationContext,
    cfg: &EnforceConfig,
    slack_f2: u64,
) -> (Decision, Vec<ViolationKind>) {
    let Some(p) = policies.iter().find(|p| p.role == ctx.agent_role && p.tool == ctx.tool_name) else {
        let kind = if policies.iter().any(|p| p.role == ctx.agent_role) {
            ViolationKind::UnknownTool
        } else {
            ViolationKind::NoPolicy
        };
        return (decide(cfg, &[kind]), vec![kind]);
    };
    let mut kinds = Vec::new();
    let prior = collapse_oracle(&ctx.prior_tools);
    let flow_ok = match cfg.flow_mode {
        guardian::cfg::FlowMode::Path => p.contexts.contains(&prior),
        guardian::cfg::FlowMode::Edge => p.contexts.iter().any(|c| c.last() == prior.last()),
    };
    if !flow_ok {
        kinds.push(ViolationKind::Flow);
    }
    let minute = (ctx.timestamp.rem_euclid(86_400_000) / 60_000) as u64;
    let mut best: Option<Vec<ViolationKind>> = None;
    for r in &p.rules {
        let mut failed = Vec::new();
        if !r.literals.contains(&ctx.tool_input) {
            failed.push(ViolationKind::InputPattern);
        }
        for (v, iv) in [
            (ctx.input_tokens, r.tokens_in),
            (ctx.output_tokens, r.tokens_out),
            (ctx.idle_ms, r.idle),
            (ctx.processing_ms, r.processing),
        ] {
            if !within(v, iv, slack_f2) {
                failed.push(ViolationKind::Attribute);
            }
        }
        // hour = minute/60, bounds q/4 hours.
        let hour_ok = if cfg.time_constraints_exempt_from_slack {
            4 * minute >= 60 * r.hours_q.0 && 4 * minute <= 60 * r.hours_q.1
        } else {
            2 * slack_f2 * minute >= 60 * r.hours_q.0 && 8 * minute <= 60 * r.hours_q.1 * slack_f2
        };
        if !hour_ok {
            failed.push(ViolationKind::Attribute);
        }
        if failed.is_empty() {
            best = None;
            break;
        }
        if best.as_ref().is_none_or(|b| failed.len() < b.len()) {
            best = Some(failed);
        }
    }
    kinds.extend(best.unwrap_or_default());
    kinds.sort();
    (decide(cfg, &kinds), kinds)
}

/// Random policy exercising every serialized field.
pub fn random_policy(rng: &mut impl Rng, role: &str, tool: &str) -> AccessControlPolicy {
    let words = ["alpha", "beta", "gamma", "a.b", "x y", "100%", "é", "\"q\"", "new\nline"];
    let n_rules = rng.random_range(1..=4);
    let rules = (0..n_rules)
        .map(|k| {
            let n_pat = rng.random_range(1..=3);
            let patterns = (0..n_pat)
                .map(|_| match rng.random_range(0..3) {
                    0 => regex::escape(words.choose(rng).unwrap()),
                    1 => format!("^{}\\d{{{},{}}}$", regex::escape(words.choose(rng).unwrap()), 1, rng.random_range(1..5)),
                    _ => format!(".{{0,{}}}", rng.random_range(1..30)),
                })
                .collect();
            let iv = |rng: &mut dyn rand::RngCore| {
                let a = rng.random_range(0..5000u64);
                Interval { min: a, max: a + rng.random_range(0..5000u64) }
            };
            let lo: f64 = rng.random_range(0.0..12.0);
            ClusterRule {
                rule_index: k,
                textual: TextualPredicate::new(patterns).unwrap(),
                attribute: AttributePredicate {
                    input_tokens: iv(rng),
                    output_tokens: iv(rng),
                    hours: HourWindow { min_hour: lo, max_hour: lo + rng.random_range(0.0..11.9) },
                    idle_ms: iv(rng),
                    processing_ms: iv(rng),
                },
                support: rng.random_range(1..100),
            }
        })
        .collect();
    let alphabet = ["list_files", "read_file", "send_email", "serper_search"];
    let mut contexts = BTreeSet::new();
    for _ in 0..rng.random_range(1..4) {
        contexts.insert(collapse_oracle(&random_tools(rng, &alphabet, 4)));
    }
    let flow = ToolFlowSpec {
        tool_name: tool.into(),
        repeat: rng.random_bool(0.5),
        required_leading_contexts: contexts,
    };
    let embed = EmbedConfig {
        timezone_offset_minutes: rng.random_range(-720..=840),
        ..EmbedConfig::default()
    };
    let mut p = build_policy(role, tool, rules, flow, embed, rng.random_range(1..500), rng.random_range(0..2_000_000_000_000)).unwrap();
    p.flagged_rules = (0..n_rules).filter(|_| rng.random_bool(0.3)).collect();
    p
}
