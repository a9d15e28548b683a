//! Cluster-to-rule induction.
//!
//! Each cluster of invocations becomes a [`ClusterRule`]: a textual
//! predicate (anchored regexes generalized from the raw tool inputs) and an
//! attribute predicate (closed ranges over tokens, wall-clock hour, idle time
//! and processing time).
//!
//! Regex generalization runs in two stages. [`draft_regexes`] groups similar
//! strings by normalized edit distance and abstracts each group into
//! `prefix + class{m,n} + suffix`. [`aggregate`] then hands the drafts to an
//! [`Aggregator`] whose output is accepted only if it still covers every
//! training sample; otherwise the drafts are minimized deterministically.

use std::fmt;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::cluster::{agglomerate, drafts_subsume, DistanceMatrix};
use crate::embed::EmbedConfig;
use crate::error::{Error, Result};
use crate::trace::TraceEvent;

/// Normalized edit distance at or below which two strings share a draft.
pub const DRAFT_GROUP_THRESHOLD: f64 = 0.4;

/// Non-fatal issue recorded during learning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub scope: String,
    pub message: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.scope, self.message)
    }
}

/// Anchored, full-match regular expressions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextualPredicate {
    pub patterns: Vec<String>,
}

impl TextualPredicate {
    pub fn new(patterns: Vec<String>) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::schema("patterns", "must be non-empty"));
        }
        Ok(TextualPredicate { patterns })
    }

    pub fn compile(&self) -> Result<CompiledPredicate> {
        let regexes = self
            .patterns
            .iter()
            .map(|p| compile_full_match(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(CompiledPredicate { regexes })
    }
}

#[derive(Debug, Clone)]
pub struct CompiledPredicate {
    regexes: Vec<Regex>,
}

impl CompiledPredicate {
    pub fn matches(&self, input: &str) -> bool {
        self.regexes.iter().any(|r| r.is_match(input))
    }

    pub fn matching(&self, input: &str) -> Vec<usize> {
        self.regexes
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_match(input))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Compiles `pattern` with full-match semantics. Patterns must stay inside a
/// portable core: no inline flags, lookaround, or backreferences.
pub fn compile_full_match(pattern: &str) -> Result<Regex> {
    let err = |reason: &str| Error::Pattern {
        pattern: pattern.to_string(),
        reason: reason.to_string(),
    };
    let bytes = pattern.as_bytes();
    for i in 0..bytes.len() {
        let escaped = i > 0 && bytes[..i].iter().rev().take_while(|&&b| b == b'\\').count() % 2 == 1;
        if escaped {
            continue;
        }
        if bytes[i] == b'(' && bytes.get(i + 1) == Some(&b'?') && bytes.get(i + 2) != Some(&b':') {
            return Err(err("group modifiers are outside the portable dialect"));
        }
    }
    RegexBuilder::new(&format!("^(?:{pattern})$"))
        .dot_matches_new_line(true)
        .size_limit(1 << 22)
        .build()
        .map_err(|e| err(&e.to_string()))
}

/// Closed integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub min: u64,
    pub max: u64,
}

impl Interval {
    pub fn point(v: u64) -> Self {
        Interval { min: v, max: v }
    }

    pub fn extend(&mut self, v: u64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    pub fn contains(&self, v: u64) -> bool {
        self.min <= v && v <= self.max
    }

    pub fn union(&self, other: &Interval) -> Interval {
        Interval {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }
}

/// Allowed daily window in fractional local hours, `0 <= min <= max < 24`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourWindow {
    pub min_hour: f64,
    pub max_hour: f64,
}

impl HourWindow {
    pub fn contains(&self, hour: f64) -> bool {
        self.min_hour <= hour && hour <= self.max_hour
    }

    pub fn union(&self, other: &HourWindow) -> HourWindow {
        HourWindow {
            min_hour: self.min_hour.min(other.min_hour),
            max_hour: self.max_hour.max(other.max_hour),
        }
    }
}

/// Renders fractional hours as `HH:MM` (minutes truncated).
pub fn format_hour(hour: f64) -> String {
    let total_minutes = (hour * 60.0 + 1e-9).floor() as i64;
    format!("{:02}:{:02}", total_minutes / 60, total_minutes % 60)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributePredicate {
    pub input_tokens: Interval,
    pub output_tokens: Interval,
    pub hours: HourWindow,
    pub idle_ms: Interval,
    pub processing_ms: Interval,
}

impl AttributePredicate {
    pub fn union(&self, other: &AttributePredicate) -> AttributePredicate {
        AttributePredicate {
            input_tokens: self.input_tokens.union(&other.input_tokens),
            output_tokens: self.output_tokens.union(&other.output_tokens),
            hours: self.hours.union(&other.hours),
            idle_ms: self.idle_ms.union(&other.idle_ms),
            processing_ms: self.processing_ms.union(&other.processing_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRule {
    pub rule_index: usize,
    pub textual: TextualPredicate,
    pub attribute: AttributePredicate,
    pub support: usize,
}

/// Drafts and samples of one cluster, as seen by an [`Aggregator`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterDraft {
    pub drafts: Vec<String>,
    pub samples: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum AggregatorError {
    #[error("aggregator transport: {0}")]
    Transport(String),
    #[error("aggregator timed out after {0} ms")]
    Timeout(u64),
    #[error("aggregator response: {0}")]
    Response(String),
}

/// Compacts draft regexes and proposes semantic cluster merges.
///
/// Output is never trusted as-is: [`aggregate`] rejects any proposal that
/// loses coverage of the samples, and [`crate::cluster::merge_semantic`]
/// rejects proposals that reference unknown clusters.
pub trait Aggregator: Send + Sync {
    fn name(&self) -> &str;

    fn aggregate(
        &self,
        drafts: &[String],
        samples: &[String],
    ) -> std::result::Result<Vec<String>, AggregatorError>;

    /// Groups of cluster indices that should be unioned.
    fn propose_merges(
        &self,
        clusters: &[ClusterDraft],
    ) -> std::result::Result<Vec<Vec<usize>>, AggregatorError>;
}

/// Local, dependency-free aggregator. Returns drafts unchanged and merges a
/// pair of clusters when one cluster's drafts accept all of the other's
/// samples.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeterministicAggregator;

impl Aggregator for DeterministicAggregator {
    fn name(&self) -> &str {
        "none"
    }

    fn aggregate(
        &self,
        drafts: &[String],
        _samples: &[String],
    ) -> std::result::Result<Vec<String>, AggregatorError> {
        Ok(drafts.to_vec())
    }

    fn propose_merges(
        &self,
        clusters: &[ClusterDraft],
    ) -> std::result::Result<Vec<Vec<usize>>, AggregatorError> {
        let mut groups = Vec::new();
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                if drafts_subsume(&clusters[a], &clusters[b])
                    || drafts_subsume(&clusters[b], &clusters[a])
                {
                    groups.push(vec![a, b]);
                }
            }
        }
        Ok(groups)
    }
}

/// Remote aggregator reached over HTTP with a JSON body.
///
/// Requests are `{"kind":"aggregate","drafts":[..],"samples":[..]}` answered
/// by `{"patterns":[..]}`, and `{"kind":"merge","clusters":[{drafts,samples}..]}`
/// answered by `{"merges":[[i,j,..],..]}`.
pub struct HttpAggregator {
    endpoint: String,
    timeout_ms: u64,
    client: reqwest::blocking::Client,
}

impl HttpAggregator {
    pub fn new(endpoint: impl Into<String>, timeout_ms: u64) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| Error::Config(format!("aggregator client: {e}")))?;
        Ok(HttpAggregator {
            endpoint: endpoint.into(),
            timeout_ms,
            client,
        })
    }

    fn post(&self, body: serde_json::Value) -> std::result::Result<serde_json::Value, AggregatorError> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    AggregatorError::Timeout(self.timeout_ms)
                } else {
                    AggregatorError::Transport(e.to_string())
                }
            })?;
        if !response.status().is_success() {
            return Err(AggregatorError::Response(format!("status {}", response.status())));
        }
        response
            .json()
            .map_err(|e| AggregatorError::Response(e.to_string()))
    }
}

impl Aggregator for HttpAggregator {
    fn name(&self) -> &str {
        "external"
    }

    fn aggregate(
        &self,
        drafts: &[String],
        samples: &[String],
    ) -> std::result::Result<Vec<String>, AggregatorError> {
        let reply = self.post(serde_json::json!({
            "kind": "aggregate",
            "drafts": drafts,
            "samples": samples,
        }))?;
        serde_json::from_value(reply["patterns"].clone())
            .map_err(|e| AggregatorError::Response(format!("patterns: {e}")))
    }

    fn propose_merges(
        &self,
        clusters: &[ClusterDraft],
    ) -> std::result::Result<Vec<Vec<usize>>, AggregatorError> {
        let reply = self.post(serde_json::json!({
            "kind": "merge",
            "clusters": clusters,
        }))?;
        serde_json::from_value(reply["merges"].clone())
            .map_err(|e| AggregatorError::Response(format!("merges: {e}")))
    }
}

/// Levenshtein distance over chars divided by the longer length.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()] as f64 / longest as f64
}

/// Groups `strings` by edit distance and emits one anchored pattern per
/// group: identical strings give an escaped literal; otherwise the longest
/// common prefix and suffix are kept and the varying middle becomes
/// `\d{m,n}`, `[A-Za-z]{m,n}` or `.{m,n}`.
pub fn draft_regexes(strings: &[String]) -> Vec<String> {
    let dist = DistanceMatrix::from_fn(strings.len(), |i, j| {
        normalized_edit_distance(&strings[i], &strings[j])
    });
    let mut out: Vec<String> = Vec::new();
    for group in agglomerate(&dist, DRAFT_GROUP_THRESHOLD) {
        let members: Vec<&str> = group.iter().map(|&i| strings[i].as_str()).collect();
        let pattern = draft_group(&members);
        if !out.contains(&pattern) {
            out.push(pattern);
        }
    }
    out
}

fn draft_group(members: &[&str]) -> String {
    let first = members[0];
    if members.iter().all(|m| *m == first) {
        return format!("^{}$", regex::escape(first));
    }
    let chars: Vec<Vec<char>> = members.iter().map(|m| m.chars().collect()).collect();
    let shortest = chars.iter().map(Vec::len).min().unwrap_or(0);

    let mut prefix = 0;
    while prefix < shortest && chars.iter().all(|c| c[prefix] == chars[0][prefix]) {
        prefix += 1;
    }
    let mut suffix = 0;
    while suffix < shortest - prefix
        && chars
            .iter()
            .all(|c| c[c.len() - 1 - suffix] == chars[0][chars[0].len() - 1 - suffix])
    {
        suffix += 1;
    }

    let middles: Vec<&[char]> = chars
        .iter()
        .map(|c| &c[prefix..c.len() - suffix])
        .collect();
    let m = middles.iter().map(|s| s.len()).min().unwrap_or(0);
    let n = middles.iter().map(|s| s.len()).max().unwrap_or(0);
    let all = || middles.iter().flat_map(|s| s.iter());
    let class = if all().all(|c| c.is_ascii_digit()) {
        r"\d"
    } else if all().all(|c| c.is_ascii_alphabetic()) {
        "[A-Za-z]"
    } else {
        "."
    };
    let quantifier = if m == n {
        format!("{{{m}}}")
    } else {
        format!("{{{m},{n}}}")
    };
    let head: String = chars[0][..prefix].iter().collect();
    let tail: String = chars[0][chars[0].len() - suffix..].iter().collect();
    format!(
        "^{}{class}{quantifier}{}$",
        regex::escape(&head),
        regex::escape(&tail)
    )
}

/// Drops patterns whose training matches are already covered by the others,
/// visiting the most specific patterns first. Patterns that fail to compile
/// or match nothing are dropped. Coverage of `samples` is preserved.
pub fn minimize_patterns(patterns: &[String], samples: &[String]) -> Result<Vec<String>> {
    let mut unique: Vec<String> = Vec::new();
    for p in patterns {
        if !unique.contains(p) {
            unique.push(p.clone());
        }
    }
    let compiled: Vec<Regex> = unique
        .iter()
        .map(|p| compile_full_match(p))
        .collect::<Result<_>>()?;
    let hits: Vec<Vec<usize>> = compiled
        .iter()
        .map(|r| {
            samples
                .iter()
                .enumerate()
                .filter(|(_, s)| r.is_match(s))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();

    let mut order: Vec<usize> = (0..unique.len()).collect();
    order.sort_by(|&a, &b| {
        hits[a]
            .len()
            .cmp(&hits[b].len())
            .then_with(|| is_literal(&unique[b]).cmp(&is_literal(&unique[a])))
            .then_with(|| unique[a].cmp(&unique[b]))
    });
    let mut keep = vec![true; unique.len()];
    for &p in &order {
        let covered_elsewhere = hits[p].iter().all(|&s| {
            (0..unique.len()).any(|q| q != p && keep[q] && hits[q].binary_search(&s).is_ok())
        });
        if covered_elsewhere {
            keep[p] = false;
        }
    }
    Ok(unique
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| p)
        .collect())
}

fn is_literal(pattern: &str) -> bool {
    match pattern.strip_prefix('^').and_then(|p| p.strip_suffix('$')) {
        Some(body) => {
            let mut chars = body.chars();
            let mut unescaped = String::new();
            while let Some(c) = chars.next() {
                if c == '\\' {
                    match chars.next() {
                        Some(n) if !n.is_alphanumeric() => unescaped.push(n),
                        _ => return false,
                    }
                } else if "[](){}.*+?|^$".contains(c) {
                    return false;
                } else {
                    unescaped.push(c);
                }
            }
            regex::escape(&unescaped) == body
        }
        None => false,
    }
}

fn covers(patterns: &[String], samples: &[String]) -> bool {
    let Ok(predicate) = TextualPredicate::new(patterns.to_vec()).and_then(|p| p.compile()) else {
        return false;
    };
    samples.iter().all(|s| predicate.matches(s))
}

/// Final textual predicate for a cluster. The aggregator's proposal is used
/// when it compiles and covers every sample; otherwise the drafts are kept.
/// Either way redundant patterns are removed.
pub fn aggregate(
    drafts: &[String],
    samples: &[String],
    aggregator: &dyn Aggregator,
) -> Result<(TextualPredicate, Vec<Warning>)> {
    let scope = format!("aggregate:{}", aggregator.name());
    let mut warnings = Vec::new();
    let chosen = match aggregator.aggregate(drafts, samples) {
        Ok(proposal) if !proposal.is_empty() && covers(&proposal, samples) => proposal,
        Ok(_) => {
            warnings.push(Warning {
                scope: scope.clone(),
                message: "proposal rejected: does not cover all samples".into(),
            });
            drafts.to_vec()
        }
        Err(e) => {
            warnings.push(Warning {
                scope: scope.clone(),
                message: format!("{e}; using deterministic minimization"),
            });
            drafts.to_vec()
        }
    };
    let patterns = minimize_patterns(&chosen, samples)?;
    Ok((TextualPredicate::new(patterns)?, warnings))
}

/// Per-attribute `[min, max]` over the members. Hours come from timestamps
/// shifted by the configured offset.
pub fn induce_attribute(members: &[&TraceEvent], config: &EmbedConfig) -> Result<AttributePredicate> {
    let first = members.first().ok_or(Error::EmptyClusterInput)?;
    let hour = config.hour_of_day(first.timestamp);
    let mut attr = AttributePredicate {
        input_tokens: Interval::point(first.input_tokens),
        output_tokens: Interval::point(first.output_tokens),
        hours: HourWindow {
            min_hour: hour,
            max_hour: hour,
        },
        idle_ms: Interval::point(first.idle_ms),
        processing_ms: Interval::point(first.processing_ms),
    };
    for e in &members[1..] {
        attr.input_tokens.extend(e.input_tokens);
        attr.output_tokens.extend(e.output_tokens);
        attr.idle_ms.extend(e.idle_ms);
        attr.processing_ms.extend(e.processing_ms);
        let h = config.hour_of_day(e.timestamp);
        attr.hours.min_hour = attr.hours.min_hour.min(h);
        attr.hours.max_hour = attr.hours.max_hour.max(h);
    }
    Ok(attr)
}

/// Builds the rule for one cluster from its member events.
pub fn induce_rule(
    rule_index: usize,
    members: &[&TraceEvent],
    aggregator: &dyn Aggregator,
    config: &EmbedConfig,
) -> Result<(ClusterRule, Vec<Warning>)> {
    if members.is_empty() {
        return Err(Error::EmptyClusterInput);
    }
    let samples: Vec<String> = members.iter().map(|e| e.tool_input.clone()).collect();
    let drafts = draft_regexes(&samples);
    let (textual, warnings) = aggregate(&drafts, &samples, aggregator)?;
    let attribute = induce_attribute(members, config)?;
    Ok((
        ClusterRule {
            rule_index,
            textual,
            attribute,
            support: members.len(),
        },
        warnings,
    ))
}
