//! Per-invocation policy evaluation.
//!
//! An invocation is allowed when its tool path is a learned leading context
//! and at least one cluster rule accepts it: the input full-matches one of
//! the rule's patterns and every attribute lies inside the rule's ranges,
//! widened by the slack factor. Hour windows are applied exactly unless
//! configured otherwise.

pub mod service;

use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::cfg::{collapse_path, FlowMode};
use crate::embed::EmbedConfig;
use crate::induce::{format_hour, ClusterRule, TextualPredicate};
use crate::policy::{LoadedPolicy, PolicyRepository, Snapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationContext {
    pub agent_role: String,
    pub tool_name: String,
    pub tool_input: String,
    #[serde(default)]
    pub thoughts: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// UTC milliseconds.
    pub timestamp: i64,
    #[serde(default)]
    pub idle_ms: u64,
    #[serde(default)]
    pub processing_ms: u64,
    /// Tools already invoked in this trace, oldest first.
    #[serde(default)]
    pub prior_tools: Vec<String>,
}

impl InvocationContext {
    pub fn from_event(event: &crate::trace::TraceEvent, prior_tools: Vec<String>) -> Self {
        InvocationContext {
            agent_role: event.agent_role.clone(),
            tool_name: event.tool_name.clone(),
            tool_input: event.tool_input.clone(),
            thoughts: event.thoughts.clone(),
            input_tokens: event.input_tokens,
            output_tokens: event.output_tokens,
            timestamp: event.timestamp,
            idle_ms: event.idle_ms,
            processing_ms: event.processing_ms,
            prior_tools,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Flow,
    InputPattern,
    Attribute,
    UnknownTool,
    NoPolicy,
    /// The checker itself failed; only produced by the service.
    Internal,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::Flow => "flow",
            ViolationKind::InputPattern => "input_pattern",
            ViolationKind::Attribute => "attribute",
            ViolationKind::UnknownTool => "unknown_tool",
            ViolationKind::NoPolicy => "no_policy",
            ViolationKind::Internal => "internal",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Allow,
    Alert,
    Terminate,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Allow => "allow",
            Decision::Alert => "alert",
            Decision::Terminate => "terminate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn allow() -> Self {
        Verdict {
            decision: Decision::Allow,
            violations: Vec::new(),
        }
    }

    pub fn is_allow(&self) -> bool {
        self.decision == Decision::Allow
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// Reported but does not block.
    Advisory,
    Alert,
    Terminate,
}

impl Severity {
    fn decision(self) -> Decision {
        match self {
            Severity::Advisory => Decision::Allow,
            Severity::Alert => Decision::Alert,
            Severity::Terminate => Decision::Terminate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeverityMap {
    pub flow: Severity,
    pub input_pattern: Severity,
    pub attribute: Severity,
    pub unknown_tool: Severity,
    pub no_policy: Severity,
}

impl Default for SeverityMap {
    fn default() -> Self {
        SeverityMap {
            flow: Severity::Terminate,
            input_pattern: Severity::Terminate,
            attribute: Severity::Alert,
            unknown_tool: Severity::Terminate,
            no_policy: Severity::Terminate,
        }
    }
}

impl SeverityMap {
    pub fn of(&self, kind: ViolationKind) -> Severity {
        match kind {
            ViolationKind::Flow => self.flow,
            ViolationKind::InputPattern => self.input_pattern,
            ViolationKind::Attribute => self.attribute,
            ViolationKind::UnknownTool => self.unknown_tool,
            ViolationKind::NoPolicy => self.no_policy,
            ViolationKind::Internal => Severity::Terminate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnforceConfig {
    pub attribute_slack_factor: f64,
    pub time_constraints_exempt_from_slack: bool,
    pub flow_mode: FlowMode,
    pub severity: SeverityMap,
}

impl Default for EnforceConfig {
    fn default() -> Self {
        EnforceConfig {
            attribute_slack_factor: 2.0,
            time_constraints_exempt_from_slack: true,
            flow_mode: FlowMode::Path,
            severity: SeverityMap::default(),
        }
    }
}

impl EnforceConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.attribute_slack_factor >= 1.0) || !self.attribute_slack_factor.is_finite() {
            return Err(crate::Error::Config(format!(
                "attribute_slack_factor must be a finite number >= 1, got {}",
                self.attribute_slack_factor
            )));
        }
        Ok(())
    }

    pub fn verdict(&self, violations: Vec<Violation>) -> Verdict {
        let decision = violations
            .iter()
            .map(|v| self.severity.of(v.kind).decision())
            .max()
            .unwrap_or(Decision::Allow);
        Verdict {
            decision,
            violations,
        }
    }
}

fn widened(min: f64, max: f64, factor: f64) -> (f64, f64) {
    ((min / factor).max(0.0), max * factor)
}

/// One violation per attribute outside the rule's (widened) range.
pub fn check_attributes(
    ctx: &InvocationContext,
    rule: &ClusterRule,
    embed: &EmbedConfig,
    cfg: &EnforceConfig,
) -> Vec<Violation> {
    let a = &rule.attribute;
    let f = cfg.attribute_slack_factor;
    let mut out = Vec::new();
    for (name, value, iv) in [
        ("max_input_tokens", ctx.input_tokens, a.input_tokens),
        ("max_output_tokens", ctx.output_tokens, a.output_tokens),
        ("max_idle_time", ctx.idle_ms, a.idle_ms),
        ("max_processing_time", ctx.processing_ms, a.processing_ms),
    ] {
        let (lo, hi) = widened(iv.min as f64, iv.max as f64, f);
        let v = value as f64;
        if v < lo || v > hi {
            out.push(Violation {
                kind: ViolationKind::Attribute,
                detail: format!("{name} {value} outside [{lo}, {hi}]"),
                rule_index: Some(rule.rule_index),
            });
        }
    }
    let hour = embed.hour_of_day(ctx.timestamp);
    let (lo, hi) = if cfg.time_constraints_exempt_from_slack {
        (a.hours.min_hour, a.hours.max_hour)
    } else {
        widened(a.hours.min_hour, a.hours.max_hour, f)
    };
    if hour < lo || hour > hi {
        out.push(Violation {
            kind: ViolationKind::Attribute,
            detail: format!(
                "time {} outside window {}-{}",
                format_hour(hour),
                format_hour(lo),
                format_hour(hi.min(23.999_999))
            ),
            rule_index: Some(rule.rule_index),
        });
    }
    out
}

pub fn check_input(tool_input: &str, predicate: &TextualPredicate) -> crate::Result<bool> {
    Ok(predicate.compile()?.matches(tool_input))
}

/// Evaluates one invocation against the snapshot.
pub fn check_invocation(ctx: &InvocationContext, snapshot: &Snapshot, cfg: &EnforceConfig) -> Verdict {
    let Some(loaded) = snapshot.lookup(&ctx.agent_role, &ctx.tool_name) else {
        let kind = if snapshot.has_role(&ctx.agent_role) {
            ViolationKind::UnknownTool
        } else {
            ViolationKind::NoPolicy
        };
        return cfg.verdict(vec![Violation {
            kind,
            detail: format!("no policy for {} / {}", ctx.agent_role, ctx.tool_name),
            rule_index: None,
        }]);
    };
    evaluate_policy(ctx, loaded, cfg)
}

fn evaluate_policy(ctx: &InvocationContext, loaded: &LoadedPolicy, cfg: &EnforceConfig) -> Verdict {
    let policy = &loaded.policy;
    let mut violations = Vec::new();
    if !policy.flow.allows(&ctx.prior_tools, cfg.flow_mode) {
        violations.push(Violation {
            kind: ViolationKind::Flow,
            detail: format!(
                "path [{}] is not a learned leading context of {}",
                collapse_path(&ctx.prior_tools).join(" -> "),
                policy.tool_name
            ),
            rule_index: None,
        });
    }

    let mut best: Option<Vec<Violation>> = None;
    for (rule, predicate) in policy.rules.iter().zip(&loaded.predicates) {
        let mut failed = check_attributes(ctx, rule, &policy.embed_config, cfg);
        if !predicate.matches(&ctx.tool_input) {
            failed.insert(
                0,
                Violation {
                    kind: ViolationKind::InputPattern,
                    detail: format!("input does not match rule {} patterns", rule.rule_index),
                    rule_index: Some(rule.rule_index),
                },
            );
        }
        if failed.is_empty() {
            best = None;
            break;
        }
        if best.as_ref().is_none_or(|b| failed.len() < b.len()) {
            best = Some(failed);
        }
    }
    if let Some(failed) = best {
        violations.extend(failed);
    }
    cfg.verdict(violations)
}

#[derive(Debug, thiserror::Error)]
#[error("violation sink: {0}")]
pub struct SinkError(pub String);

/// Receives every non-allow verdict, e.g. to relay it to the orchestrating
/// model.
pub trait ViolationSink: Send + Sync {
    fn deliver(&self, trace_id: Option<&str>, verdict: &Verdict) -> Result<(), SinkError>;
}

/// Keeps delivered verdicts in memory.
#[derive(Debug, Default)]
pub struct CollectingSink {
    pub delivered: Mutex<Vec<(Option<String>, Verdict)>>,
}

impl ViolationSink for CollectingSink {
    fn deliver(&self, trace_id: Option<&str>, verdict: &Verdict) -> Result<(), SinkError> {
        self.delivered
            .lock()
            .map_err(|_| SinkError("poisoned".into()))?
            .push((trace_id.map(str::to_string), verdict.clone()));
        Ok(())
    }
}

/// Writes verdicts to the tracing log.
#[derive(Debug, Default, Clone, Copy)]
pub struct LogSink;

impl ViolationSink for LogSink {
    fn deliver(&self, trace_id: Option<&str>, verdict: &Verdict) -> Result<(), SinkError> {
        for v in &verdict.violations {
            tracing::warn!(trace = trace_id.unwrap_or("-"), decision = %verdict.decision, kind = %v.kind, "{}", v.detail);
        }
        Ok(())
    }
}

/// Trace ids that received a terminate verdict.
#[derive(Debug, Default)]
pub struct KillFlags(Mutex<HashSet<String>>);

impl KillFlags {
    pub fn set(&self, trace_id: &str) {
        self.0.lock().expect("kill flags").insert(trace_id.to_string());
    }

    pub fn is_killed(&self, trace_id: &str) -> bool {
        self.0.lock().expect("kill flags").contains(trace_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Acknowledgment {
    pub delivered: bool,
    /// The caller must stop this trace.
    pub kill: bool,
}

/// Hands a non-allow verdict to `sink` once. A sink failure is logged and
/// does not change the decision.
pub fn on_violation(
    verdict: &Verdict,
    trace_id: Option<&str>,
    sink: &dyn ViolationSink,
    kills: &KillFlags,
) -> Acknowledgment {
    if verdict.is_allow() {
        return Acknowledgment {
            delivered: false,
            kill: false,
        };
    }
    let delivered = match sink.deliver(trace_id, verdict) {
        Ok(()) => true,
        Err(e) => {
            tracing::error!("{e}");
            false
        }
    };
    let kill = verdict.decision == Decision::Terminate;
    if kill {
        if let Some(id) = trace_id {
            kills.set(id);
        }
    }
    Acknowledgment { delivered, kill }
}

/// Repository, configuration and sink bundled for in-process use.
pub struct Enforcer {
    pub repo: Arc<PolicyRepository>,
    pub config: EnforceConfig,
    pub sink: Box<dyn ViolationSink>,
    pub kills: KillFlags,
}

impl Enforcer {
    pub fn new(repo: Arc<PolicyRepository>, config: EnforceConfig) -> Self {
        Enforcer {
            repo,
            config,
            sink: Box::new(LogSink),
            kills: KillFlags::default(),
        }
    }

    pub fn with_sink(mut self, sink: Box<dyn ViolationSink>) -> Self {
        self.sink = sink;
        self
    }

    pub fn check(&self, ctx: &InvocationContext, trace_id: Option<&str>) -> (Verdict, Acknowledgment) {
        let verdict = check_invocation(ctx, &self.repo.snapshot(), &self.config);
        let ack = on_violation(&verdict, trace_id, self.sink.as_ref(), &self.kills);
        (verdict, ack)
    }
}
