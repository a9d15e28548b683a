//! Per-agent, per-tool access-control policies and the policy repository.
//!
//! A policy file is a JSON document with sorted keys:
//!
//! ```text
//! agent_role, attribute_constraints[], embed_config, flow{repeat,
//! required_leading_contexts}, input_patterns[], metadata, rule_id, tool_name
//! ```
//!
//! `attribute_constraints` and `input_patterns` are parallel lists keyed by
//! `rule_index`; together entry *k* of each forms cluster rule *k*. The
//! `metadata.policy_envelope` block is the union of all rule ranges, written
//! for human review and ignored when reading.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde_json::{json, Map, Value};

use crate::cfg::ToolFlowSpec;
use crate::embed::EmbedConfig;
use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::induce::{
    format_hour, AttributePredicate, ClusterRule, CompiledPredicate, HourWindow, Interval,
    TextualPredicate,
};

#[derive(Debug, Clone, PartialEq)]
pub struct AccessControlPolicy {
    pub rule_id: String,
    pub agent_role: String,
    pub tool_name: String,
    pub rules: Vec<ClusterRule>,
    pub flow: ToolFlowSpec,
    pub embed_config: EmbedConfig,
    /// UTC milliseconds.
    pub created_at: i64,
    pub source_trace_count: usize,
    /// Indices of rules learned from too few members, kept for review.
    pub flagged_rules: Vec<usize>,
}

/// Lowercase, with every non-alphanumeric character replaced by `_`.
pub fn role_slug(agent_role: &str) -> String {
    agent_role
        .trim()
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

pub fn canonical_tool_name(tool_name: &str) -> String {
    tool_name.trim().to_lowercase()
}

pub fn action_hash(tool_name: &str) -> String {
    format!("{:016x}", fnv1a64(canonical_tool_name(tool_name).as_bytes()))
}

pub fn rule_id(agent_role: &str, tool_name: &str) -> String {
    format!("{}/{}", role_slug(agent_role), action_hash(tool_name))
}

pub fn build_policy(
    agent_role: &str,
    tool_name: &str,
    rules: Vec<ClusterRule>,
    flow: ToolFlowSpec,
    embed_config: EmbedConfig,
    source_trace_count: usize,
    created_at: i64,
) -> Result<AccessControlPolicy> {
    if rules.is_empty() {
        return Err(Error::EmptyRules {
            tool_name: tool_name.to_string(),
        });
    }
    if flow.tool_name != tool_name {
        return Err(Error::schema(
            "flow",
            format!("spec is for `{}`, not `{tool_name}`", flow.tool_name),
        ));
    }
    let policy = AccessControlPolicy {
        rule_id: rule_id(agent_role, tool_name),
        agent_role: agent_role.to_string(),
        tool_name: tool_name.to_string(),
        rules,
        flow,
        embed_config,
        created_at,
        source_trace_count,
        flagged_rules: Vec::new(),
    };
    policy.validate()?;
    Ok(policy)
}

impl AccessControlPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.rule_id != rule_id(&self.agent_role, &self.tool_name) {
            return Err(Error::schema(
                "rule_id",
                format!(
                    "expected {} for ({}, {})",
                    rule_id(&self.agent_role, &self.tool_name),
                    self.agent_role,
                    self.tool_name
                ),
            ));
        }
        if self.rules.is_empty() {
            return Err(Error::EmptyRules {
                tool_name: self.tool_name.clone(),
            });
        }
        for (k, rule) in self.rules.iter().enumerate() {
            let at = |f: &str| format!("rules[{k}].{f}");
            if rule.rule_index != k {
                return Err(Error::schema(at("rule_index"), format!("expected {k}")));
            }
            if rule.support == 0 {
                return Err(Error::schema(at("support"), "must be at least 1"));
            }
            if rule.textual.patterns.is_empty() {
                return Err(Error::schema(at("patterns"), "must be non-empty"));
            }
            let a = &rule.attribute;
            for (name, iv) in [
                ("max_input_tokens", a.input_tokens),
                ("max_output_tokens", a.output_tokens),
                ("max_idle_time", a.idle_ms),
                ("max_processing_time", a.processing_ms),
            ] {
                if iv.min > iv.max {
                    return Err(Error::schema(at(name), "min exceeds max"));
                }
            }
            let h = a.hours;
            let in_day = |x: f64| (0.0..24.0).contains(&x);
            if !in_day(h.min_hour) || !in_day(h.max_hour) || h.min_hour > h.max_hour {
                return Err(Error::schema(at("min_hour"), "hour window must satisfy 0 <= min <= max < 24"));
            }
        }
        for &f in &self.flagged_rules {
            if f >= self.rules.len() {
                return Err(Error::schema("metadata.flagged_rules", format!("index {f} out of range")));
            }
        }
        Ok(())
    }

    /// Union of all rule ranges.
    pub fn envelope(&self) -> AttributePredicate {
        self.rules[1..]
            .iter()
            .fold(self.rules[0].attribute.clone(), |acc, r| acc.union(&r.attribute))
    }

    pub fn compile(&self) -> Result<Vec<CompiledPredicate>> {
        self.rules.iter().map(|r| r.textual.compile()).collect()
    }

    /// Human-readable layout: rule id, one block per cluster rule with its
    /// patterns and ranges, then the flow spec with `--` path steps.
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "rule_id: {}", self.rule_id);
        let _ = writeln!(out, "agent_role: {}", self.agent_role);
        let _ = writeln!(out, "tool_name: {}", self.tool_name);
        let env = self.envelope();
        let _ = writeln!(
            out,
            "time window: {}-{}",
            format_hour(env.hours.min_hour),
            format_hour(env.hours.max_hour)
        );
        for rule in &self.rules {
            let flag = if self.flagged_rules.contains(&rule.rule_index) {
                " (flagged)"
            } else {
                ""
            };
            let _ = writeln!(out, "rule {} support {}{flag}:", rule.rule_index, rule.support);
            for p in &rule.textual.patterns {
                let _ = writeln!(out, "  input: {p}");
            }
            let a = &rule.attribute;
            let _ = writeln!(out, "  max_input_tokens: [{}, {}]", a.input_tokens.min, a.input_tokens.max);
            let _ = writeln!(out, "  max_output_tokens: [{}, {}]", a.output_tokens.min, a.output_tokens.max);
            let _ = writeln!(
                out,
                "  hours: {}-{}",
                format_hour(a.hours.min_hour),
                format_hour(a.hours.max_hour)
            );
            let _ = writeln!(out, "  max_idle_time: [{}, {}] ms", a.idle_ms.min, a.idle_ms.max);
            let _ = writeln!(
                out,
                "  max_processing_time: [{}, {}] ms",
                a.processing_ms.min, a.processing_ms.max
            );
        }
        out.push_str(&self.flow.render());
        out
    }
}

fn interval_json(iv: Interval) -> Value {
    json!({ "min": iv.min, "max": iv.max })
}

fn attribute_json(a: &AttributePredicate) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("max_input_tokens".into(), interval_json(a.input_tokens));
    m.insert("max_output_tokens".into(), interval_json(a.output_tokens));
    m.insert("min_hour".into(), json!(a.hours.min_hour));
    m.insert("max_hour".into(), json!(a.hours.max_hour));
    m.insert("max_idle_time".into(), interval_json(a.idle_ms));
    m.insert("max_processing_time".into(), interval_json(a.processing_ms));
    m
}

pub fn to_value(policy: &AccessControlPolicy) -> Value {
    let attribute_constraints: Vec<Value> = policy
        .rules
        .iter()
        .map(|r| {
            let mut m = attribute_json(&r.attribute);
            m.insert("rule_index".into(), json!(r.rule_index));
            m.insert("support".into(), json!(r.support));
            Value::Object(m)
        })
        .collect();
    let input_patterns: Vec<Value> = policy
        .rules
        .iter()
        .map(|r| json!({ "rule_index": r.rule_index, "patterns": r.textual.patterns }))
        .collect();
    let mut envelope = attribute_json(&policy.envelope());
    envelope.insert(
        "time_window".into(),
        json!(format!(
            "{}-{}",
            format_hour(policy.envelope().hours.min_hour),
            format_hour(policy.envelope().hours.max_hour)
        )),
    );
    json!({
        "rule_id": policy.rule_id,
        "agent_role": policy.agent_role,
        "tool_name": policy.tool_name,
        "attribute_constraints": attribute_constraints,
        "input_patterns": input_patterns,
        "flow": {
            "repeat": policy.flow.repeat,
            "required_leading_contexts": policy.flow.required_leading_contexts,
        },
        "embed_config": policy.embed_config,
        "metadata": {
            "created_at": policy.created_at,
            "source_trace_count": policy.source_trace_count,
            "flagged_rules": policy.flagged_rules,
            "policy_envelope": envelope,
        },
    })
}

/// Canonical bytes: sorted keys, two-space indentation, shortest round-trip
/// float formatting, trailing newline.
pub fn serialize(policy: &AccessControlPolicy) -> String {
    let mut s = serde_json::to_string_pretty(&to_value(policy)).expect("json values serialize");
    s.push('\n');
    s
}

pub fn deserialize(text: &str) -> Result<AccessControlPolicy> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::schema("$", e.to_string()))?;
    from_value(&value)
}

struct Reader<'a> {
    obj: &'a Map<String, Value>,
    path: String,
}

impl<'a> Reader<'a> {
    fn new(value: &'a Value, path: &str) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::schema(path, "expected an object"))?;
        Ok(Reader {
            obj,
            path: path.to_string(),
        })
    }

    fn field_path(&self, key: &str) -> String {
        if self.path == "$" {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&self, key: &str) -> Result<&'a Value> {
        self.obj
            .get(key)
            .ok_or_else(|| Error::schema(self.field_path(key), "missing"))
    }

    fn str(&self, key: &str) -> Result<String> {
        self.get(key)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::schema(self.field_path(key), "expected a string"))
    }

    fn u64(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .as_u64()
            .ok_or_else(|| Error::schema(self.field_path(key), "expected a non-negative integer"))
    }

    fn i64(&self, key: &str) -> Result<i64> {
        self.get(key)?
            .as_i64()
            .ok_or_else(|| Error::schema(self.field_path(key), "expected an integer"))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .as_f64()
            .ok_or_else(|| Error::schema(self.field_path(key), "expected a number"))
    }

    fn bool(&self, key: &str) -> Result<bool> {
        self.get(key)?
            .as_bool()
            .ok_or_else(|| Error::schema(self.field_path(key), "expected a boolean"))
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Value>> {
        self.get(key)?
            .as_array()
            .ok_or_else(|| Error::schema(self.field_path(key), "expected an array"))
    }

    fn child(&self, key: &str) -> Result<Reader<'a>> {
        Reader::new(self.get(key)?, &self.field_path(key))
    }

    fn interval(&self, key: &str) -> Result<Interval> {
        let r = self.child(key)?;
        let iv = Interval {
            min: r.u64("min")?,
            max: r.u64("max")?,
        };
        if iv.min > iv.max {
            return Err(Error::schema(self.field_path(key), "min exceeds max"));
        }
        Ok(iv)
    }
}

fn string_list(values: &[Value], path: &str) -> Result<Vec<String>> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::schema(format!("{path}[{i}]"), "expected a string"))
        })
        .collect()
}

pub fn from_value(value: &Value) -> Result<AccessControlPolicy> {
    let root = Reader::new(value, "$")?;
    let agent_role = root.str("agent_role")?;
    let tool_name = root.str("tool_name")?;
    let id = root.str("rule_id")?;

    let attrs = root.array("attribute_constraints")?;
    let inputs = root.array("input_patterns")?;
    if attrs.is_empty() {
        return Err(Error::schema("attribute_constraints", "must be non-empty"));
    }
    if attrs.len() != inputs.len() {
        return Err(Error::schema(
            "input_patterns",
            format!("{} entries for {} attribute constraints", inputs.len(), attrs.len()),
        ));
    }

    let mut rules = Vec::with_capacity(attrs.len());
    for (k, (a, p)) in attrs.iter().zip(inputs).enumerate() {
        let ar = Reader::new(a, &format!("attribute_constraints[{k}]"))?;
        let pr = Reader::new(p, &format!("input_patterns[{k}]"))?;
        for r in [&ar, &pr] {
            if r.u64("rule_index")? != k as u64 {
                return Err(Error::schema(r.field_path("rule_index"), format!("expected {k}")));
            }
        }
        let min_hour = ar.f64("min_hour")?;
        let max_hour = ar.f64("max_hour")?;
        for (key, h) in [("min_hour", min_hour), ("max_hour", max_hour)] {
            if !(0.0..24.0).contains(&h) {
                return Err(Error::schema(ar.field_path(key), "must be in [0, 24)"));
            }
        }
        if min_hour > max_hour {
            return Err(Error::schema(ar.field_path("min_hour"), "exceeds max_hour"));
        }
        let support = ar.u64("support")? as usize;
        if support == 0 {
            return Err(Error::schema(ar.field_path("support"), "must be at least 1"));
        }
        let patterns_path = pr.field_path("patterns");
        let patterns = string_list(pr.array("patterns")?, &patterns_path)?;
        if patterns.is_empty() {
            return Err(Error::schema(patterns_path, "must be non-empty"));
        }
        let textual = TextualPredicate { patterns };
        textual.compile()?;
        rules.push(ClusterRule {
            rule_index: k,
            textual,
            attribute: AttributePredicate {
                input_tokens: ar.interval("max_input_tokens")?,
                output_tokens: ar.interval("max_output_tokens")?,
                hours: HourWindow { min_hour, max_hour },
                idle_ms: ar.interval("max_idle_time")?,
                processing_ms: ar.interval("max_processing_time")?,
            },
            support,
        });
    }

    let flow = root.child("flow")?;
    let mut contexts = BTreeSet::new();
    for (i, path) in flow.array("required_leading_contexts")?.iter().enumerate() {
        let at = format!("flow.required_leading_contexts[{i}]");
        let steps = path
            .as_array()
            .ok_or_else(|| Error::schema(at.clone(), "expected an array"))?;
        contexts.insert(string_list(steps, &at)?);
    }

    let embed_config: EmbedConfig = serde_json::from_value(root.get("embed_config")?.clone())
        .map_err(|e| Error::schema("embed_config", e.to_string()))?;
    let meta = root.child("metadata")?;
    let flagged_rules = meta
        .array("flagged_rules")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| Error::schema(format!("metadata.flagged_rules[{i}]"), "expected an index"))
        })
        .collect::<Result<Vec<_>>>()?;

    let policy = AccessControlPolicy {
        rule_id: id,
        flow: ToolFlowSpec {
            tool_name: tool_name.clone(),
            repeat: flow.bool("repeat")?,
            required_leading_contexts: contexts,
        },
        agent_role,
        tool_name,
        rules,
        embed_config,
        created_at: meta.i64("created_at")?,
        source_trace_count: meta.u64("source_trace_count")? as usize,
        flagged_rules,
    };
    policy.validate()?;
    Ok(policy)
}

/// A policy with its patterns compiled.
#[derive(Debug, Clone)]
pub struct LoadedPolicy {
    pub policy: AccessControlPolicy,
    pub predicates: Vec<CompiledPredicate>,
}

impl LoadedPolicy {
    pub fn new(policy: AccessControlPolicy) -> Result<Self> {
        policy.validate()?;
        let predicates = policy.compile()?;
        Ok(LoadedPolicy { policy, predicates })
    }
}

/// Immutable view of the repository.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    policies: BTreeMap<String, Arc<LoadedPolicy>>,
    roles: BTreeSet<String>,
}

impl Snapshot {
    pub fn from_policies(policies: impl IntoIterator<Item = AccessControlPolicy>) -> Result<Self> {
        let mut snap = Snapshot::default();
        for p in policies {
            snap.insert(LoadedPolicy::new(p)?)?;
        }
        Ok(snap)
    }

    fn insert(&mut self, loaded: LoadedPolicy) -> Result<()> {
        let id = loaded.policy.rule_id.clone();
        if let Some(existing) = self.policies.get(&id) {
            let e = &existing.policy;
            let n = &loaded.policy;
            if e.agent_role != n.agent_role
                || canonical_tool_name(&e.tool_name) != canonical_tool_name(&n.tool_name)
            {
                return Err(Error::RuleIdCollision {
                    rule_id: id,
                    existing: format!("{}/{}", e.agent_role, e.tool_name),
                    incoming: format!("{}/{}", n.agent_role, n.tool_name),
                });
            }
        }
        self.roles.insert(role_slug(&loaded.policy.agent_role));
        self.policies.insert(id, Arc::new(loaded));
        Ok(())
    }

    pub fn get(&self, rule_id: &str) -> Option<&LoadedPolicy> {
        self.policies.get(rule_id).map(Arc::as_ref)
    }

    pub fn lookup(&self, agent_role: &str, tool_name: &str) -> Option<&LoadedPolicy> {
        self.get(&rule_id(agent_role, tool_name))
    }

    /// Whether any policy exists for this role.
    pub fn has_role(&self, agent_role: &str) -> bool {
        self.roles.contains(&role_slug(agent_role))
    }

    pub fn rule_ids(&self) -> impl Iterator<Item = &str> {
        self.policies.keys().map(String::as_str)
    }

    pub fn policies(&self) -> impl Iterator<Item = &AccessControlPolicy> {
        self.policies.values().map(|p| &p.policy)
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

/// Keyed policy store with whole-snapshot replacement. Readers clone an
/// `Arc` and never block writers for longer than a pointer swap.
#[derive(Debug, Default)]
pub struct PolicyRepository {
    current: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
}

impl PolicyRepository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_snapshot(snapshot: Snapshot) -> Self {
        PolicyRepository {
            current: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(()),
        }
    }

    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self::from_snapshot(load_dir(dir)?))
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().expect("snapshot lock").clone()
    }

    fn swap(&self, next: Snapshot) {
        *self.current.write().expect("snapshot lock") = Arc::new(next);
    }

    pub fn put(&self, policy: AccessControlPolicy) -> Result<()> {
        let _w = self.writer.lock().expect("writer lock");
        let mut next = (*self.snapshot()).clone();
        next.insert(LoadedPolicy::new(policy)?)?;
        self.swap(next);
        Ok(())
    }

    pub fn get(&self, rule_id: &str) -> Option<AccessControlPolicy> {
        self.snapshot().get(rule_id).map(|p| p.policy.clone())
    }

    pub fn list(&self) -> Vec<String> {
        self.snapshot().rule_ids().map(str::to_string).collect()
    }

    /// Loads every policy under `dir`. On any error the current snapshot is
    /// kept and the error returned.
    pub fn reload(&self, dir: &Path) -> Result<Arc<Snapshot>> {
        let _w = self.writer.lock().expect("writer lock");
        let next = load_dir(dir)?;
        self.swap(next);
        Ok(self.snapshot())
    }
}

pub fn policy_path(dir: &Path, policy: &AccessControlPolicy) -> PathBuf {
    dir.join(role_slug(&policy.agent_role))
        .join(format!("{}.json", canonical_tool_name(&policy.tool_name)))
}

pub fn write_policy(dir: &Path, policy: &AccessControlPolicy) -> Result<PathBuf> {
    let path = policy_path(dir, policy);
    let parent = path.parent().expect("policy path has a parent");
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    std::fs::write(&path, serialize(policy)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_policy(path: &Path) -> Result<AccessControlPolicy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    deserialize(&text).map_err(|e| Error::PolicyFile {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_json(&path, out)?;
        } else if path.extension().is_some_and(|x| x == "json") {
            out.push(path);
        }
    }
    Ok(())
}

pub fn load_dir(dir: &Path) -> Result<Snapshot> {
    let mut files = Vec::new();
    collect_json(dir, &mut files)?;
    files.sort();
    let mut snap = Snapshot::default();
    for f in files {
        let loaded = LoadedPolicy::new(read_policy(&f)?).map_err(|e| Error::PolicyFile {
            path: f.clone(),
            source: Box::new(e),
        })?;
        snap.insert(loaded)?;
    }
    Ok(snap)
}
