//! Control-flow graph of tool orderings learned from benign sequences.
//!
//! Two views are kept. [`Cfg`] holds the directly-follows relation between
//! tools. [`ToolFlowSpec`] holds, per tool, the set of collapsed tool paths
//! that have been observed to lead up to an invocation of that tool; the
//! enforcer uses it by default ([`FlowMode::Path`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::ExecutionSequence;

/// Directed graph over tool names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cfg {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
    pub start_tools: BTreeSet<String>,
}

/// Per-tool flow constraint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolFlowSpec {
    pub tool_name: String,
    pub repeat: bool,
    /// Collapsed tool paths allowed before this tool; the empty path means
    /// the tool may start a trace.
    pub required_leading_contexts: BTreeSet<Vec<String>>,
}

/// How the enforcer checks flow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowMode {
    /// The whole collapsed prefix must be a learned leading context.
    #[default]
    Path,
    /// Only the immediate predecessor must be a learned edge.
    Edge,
}

pub fn build_cfg(sequences: &[ExecutionSequence]) -> Result<Cfg> {
    if sequences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut cfg = Cfg::default();
    for s in sequences {
        let tools = s.tool_names();
        if let Some(first) = tools.first() {
            cfg.start_tools.insert((*first).to_string());
        }
        for t in &tools {
            cfg.nodes.insert((*t).to_string());
        }
        for w in tools.windows(2) {
            cfg.edges.insert((w[0].to_string(), w[1].to_string()));
        }
    }
    Ok(cfg)
}

/// Collapses runs of the same tool into one occurrence.
pub fn collapse_path<S: AsRef<str>>(tools: &[S]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(tools.len());
    for t in tools {
        let t = t.as_ref();
        if out.last().map(String::as_str) != Some(t) {
            out.push(t.to_string());
        }
    }
    out
}

pub fn leading_contexts(sequences: &[ExecutionSequence], tool: &str) -> Result<ToolFlowSpec> {
    let mut spec = ToolFlowSpec {
        tool_name: tool.to_string(),
        ..Default::default()
    };
    let mut found = false;
    for s in sequences {
        let tools = s.tool_names();
        let mut occurrences = 0;
        for (i, t) in tools.iter().enumerate() {
            if *t == tool {
                found = true;
                occurrences += 1;
                spec.required_leading_contexts
                    .insert(collapse_path(&tools[..i]));
            }
        }
        if occurrences >= 2 {
            spec.repeat = true;
        }
    }
    if !found {
        return Err(Error::UnknownTool(tool.to_string()));
    }
    Ok(spec)
}

/// Flow specs for every tool in the corpus.
pub fn flow_specs(sequences: &[ExecutionSequence]) -> BTreeMap<String, ToolFlowSpec> {
    let mut specs: BTreeMap<String, ToolFlowSpec> = BTreeMap::new();
    for s in sequences {
        let tools = s.tool_names();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, t) in tools.iter().enumerate() {
            *counts.entry(t).or_default() += 1;
            specs
                .entry((*t).to_string())
                .or_insert_with(|| ToolFlowSpec {
                    tool_name: (*t).to_string(),
                    ..Default::default()
                })
                .required_leading_contexts
                .insert(collapse_path(&tools[..i]));
        }
        for (t, n) in counts {
            if n >= 2 {
                specs.get_mut(t).expect("inserted above").repeat = true;
            }
        }
    }
    specs
}

pub fn path_allowed<S: AsRef<str>>(spec: &ToolFlowSpec, prior_tools: &[S]) -> bool {
    spec.required_leading_contexts
        .contains(&collapse_path(prior_tools))
}

pub fn edge_allowed(cfg: &Cfg, from_tool: Option<&str>, to_tool: &str) -> bool {
    match from_tool {
        None => cfg.start_tools.contains(to_tool),
        Some(from) => cfg
            .edges
            .contains(&(from.to_string(), to_tool.to_string())),
    }
}

impl ToolFlowSpec {
    /// Edge-mode check derived from the context paths: the last step of a
    /// collapsed leading context is always the tool's immediate predecessor.
    pub fn predecessor_allowed<S: AsRef<str>>(&self, prior_tools: &[S]) -> bool {
        let last = prior_tools.last().map(AsRef::as_ref);
        self.required_leading_contexts
            .iter()
            .any(|p| p.last().map(String::as_str) == last)
    }

    pub fn allows<S: AsRef<str>>(&self, prior_tools: &[S], mode: FlowMode) -> bool {
        match mode {
            FlowMode::Path => path_allowed(self, prior_tools),
            FlowMode::Edge => self.predecessor_allowed(prior_tools),
        }
    }

    /// Human-readable dump, one branch per leading context with each step
    /// prefixed by `--`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}:", self.tool_name);
        let _ = writeln!(out, "  repeat: {}", self.repeat);
        let _ = writeln!(out, "  required_leading_contexts:");
        for (i, path) in self.required_leading_contexts.iter().enumerate() {
            let _ = writeln!(out, "    path {}:", i + 1);
            if path.is_empty() {
                let _ = writeln!(out, "      -- (trace start)");
            }
            for step in path {
                let _ = writeln!(out, "      -- {step}");
            }
        }
        out
    }
}

impl Cfg {
    pub fn render(&self) -> String {
        let mut out = String::from("start:\n");
        for t in &self.start_tools {
            let _ = writeln!(out, "  -- {t}");
        }
        out.push_str("edges:\n");
        for (a, b) in &self.edges {
            let _ = writeln!(out, "  {a} -> {b}");
        }
        out
    }
}
