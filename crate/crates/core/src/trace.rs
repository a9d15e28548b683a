//! Trace data model: events, per-trace sequences, and the trace-log format.
//!
//! A trace log is UTF-8 text with one JSON object per line:
//!
//! ```text
//! {"trace_id":"t1","seq_index":0,"timestamp_ms":1700000000000,"agent_role":"Senior Data Researcher",
//!  "thoughts":"...","tool_name":"list_files","tool_input":"./AI","task_result":"...",
//!  "input_tokens":812,"output_tokens":96}
//! ```
//!
//! Unknown keys are ignored. `idle_ms` and `processing_ms` are never read from
//! the file; they are recomputed from the timestamps of each trace.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::cfg::collapse_path;
use crate::error::{Error, Result};

/// One tool invocation with its LLM context and timing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub trace_id: String,
    pub seq_index: u64,
    /// UTC milliseconds since the epoch.
    pub timestamp: i64,
    pub agent_role: String,
    pub thoughts: String,
    pub tool_name: String,
    pub tool_input: String,
    pub task_result: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Milliseconds since the previous event of the same trace.
    pub idle_ms: u64,
    /// Milliseconds since the first event of the same trace.
    pub processing_ms: u64,
}

/// The ordered tool invocations of one trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionSequence {
    pub trace_id: String,
    pub agent_role: String,
    pub events: Vec<TraceEvent>,
}

impl ExecutionSequence {
    pub fn tool_names(&self) -> Vec<&str> {
        self.events.iter().map(|e| e.tool_name.as_str()).collect()
    }

    /// Tool names with consecutive repeats collapsed.
    pub fn collapsed_path(&self) -> Vec<String> {
        collapse_path(&self.tool_names())
    }

    /// Builds a sequence from events of a single trace, recomputing timing.
    /// Events are sorted by `seq_index` and must be contiguous from 0.
    pub fn from_events(mut events: Vec<TraceEvent>) -> Result<Self> {
        let first = events.first().ok_or(Error::EmptyCorpus)?;
        let trace_id = first.trace_id.clone();
        let agent_role = first.agent_role.clone();
        events.sort_by_key(|e| e.seq_index);
        if let Some(w) = events.windows(2).find(|w| w[0].seq_index == w[1].seq_index) {
            return Err(Error::DuplicateEvent {
                trace_id,
                seq_index: w[0].seq_index,
            });
        }
        for (expected, event) in events.iter().enumerate() {
            if event.trace_id != trace_id {
                return Err(Error::Config(format!(
                    "event of trace {} mixed into trace {trace_id}",
                    event.trace_id
                )));
            }
            if event.seq_index != expected as u64 {
                return Err(Error::SequenceGap {
                    trace_id,
                    expected: expected as u64,
                    found: event.seq_index,
                });
            }
            if event.agent_role != agent_role {
                return Err(Error::MixedAgentRole {
                    trace_id,
                    first: agent_role,
                    second: event.agent_role.clone(),
                });
            }
        }
        recompute_timing(&mut events)?;
        Ok(ExecutionSequence {
            trace_id,
            agent_role,
            events,
        })
    }
}

/// Set of tool names available to the agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCatalog {
    pub tools: BTreeSet<String>,
}

impl ToolCatalog {
    pub fn from_sequences(sequences: &[ExecutionSequence]) -> Self {
        let tools = sequences
            .iter()
            .flat_map(|s| s.events.iter().map(|e| e.tool_name.clone()))
            .collect();
        ToolCatalog { tools }
    }

    pub fn contains(&self, tool: &str) -> bool {
        self.tools.contains(tool)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

/// On-disk record. Timing fields are derived and therefore not stored.
#[derive(Serialize)]
struct TraceRecord<'a> {
    trace_id: &'a str,
    seq_index: u64,
    timestamp_ms: i64,
    agent_role: &'a str,
    thoughts: &'a str,
    tool_name: &'a str,
    tool_input: &'a str,
    task_result: &'a str,
    input_tokens: u64,
    output_tokens: u64,
}

/// Renders events in the trace-log format, one line each.
pub fn serialize_trace_log(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let record = TraceRecord {
            trace_id: &e.trace_id,
            seq_index: e.seq_index,
            timestamp_ms: e.timestamp,
            agent_role: &e.agent_role,
            thoughts: &e.thoughts,
            tool_name: &e.tool_name,
            tool_input: &e.tool_input,
            task_result: &e.task_result,
            input_tokens: e.input_tokens,
            output_tokens: e.output_tokens,
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses a trace log. Events are returned in file order with timing
/// recomputed per trace.
pub fn parse_trace_log<R: BufRead>(reader: R) -> Result<Vec<TraceEvent>> {
    let mut events = Vec::new();
    let mut seen: HashMap<(String, u64), usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::MalformedRecord {
            line: line_no,
            field: "<line>".into(),
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let event = parse_record(&line, line_no)?;
        if seen
            .insert((event.trace_id.clone(), event.seq_index), line_no)
            .is_some()
        {
            return Err(Error::DuplicateEvent {
                trace_id: event.trace_id,
                seq_index: event.seq_index,
            });
        }
        events.push(event);
    }
    recompute_timing(&mut events)?;
    Ok(events)
}

pub fn parse_trace_str(text: &str) -> Result<Vec<TraceEvent>> {
    parse_trace_log(text.as_bytes())
}

/// Reads a trace log file, or every `*.jsonl` file in a directory (sorted by
/// name, concatenated).
pub fn read_trace_path(path: &Path) -> Result<Vec<TraceEvent>> {
    let mut files = Vec::new();
    if path.is_dir() {
        let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            let p = entry.path();
            if p.extension().is_some_and(|ext| ext == "jsonl") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    let mut text = String::new();
    for file in &files {
        let chunk = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
        text.push_str(&chunk);
        if !chunk.ends_with('\n') {
            text.push('\n');
        }
    }
    parse_trace_str(&text)
}

fn parse_record(line: &str, line_no: usize) -> Result<TraceEvent> {
    let malformed = |field: &str, reason: String| Error::MalformedRecord {
        line: line_no,
        field: field.to_string(),
        reason,
    };
    let value: Value =
        serde_json::from_str(line).map_err(|e| malformed("<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("<record>", "expected a JSON object".into()))?;

    let trace_id = req_str(obj, "trace_id", line_no)?;
    if trace_id.is_empty() {
        return Err(malformed("trace_id", "must be non-empty".into()));
    }
    let tool_name = req_str(obj, "tool_name", line_no)?;
    if tool_name.is_empty() {
        return Err(malformed("tool_name", "must be non-empty".into()));
    }
    Ok(TraceEvent {
        trace_id,
        seq_index: req_u64(obj, "seq_index", line_no)?,
        timestamp: req_i64(obj, "timestamp_ms", line_no)?,
        agent_role: req_str(obj, "agent_role", line_no)?,
        thoughts: opt_str(obj, "thoughts", line_no)?,
        tool_name,
        tool_input: req_str(obj, "tool_input", line_no)?,
        task_result: opt_str(obj, "task_result", line_no)?,
        input_tokens: opt_u64(obj, "input_tokens", line_no)?,
        output_tokens: opt_u64(obj, "output_tokens", line_no)?,
        idle_ms: 0,
        processing_ms: 0,
    })
}

fn field_error(line: usize, field: &str, reason: &str) -> Error {
    Error::MalformedRecord {
        line,
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

fn req_str(obj: &Map<String, Value>, key: &str, line: usize) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(field_error(line, key, "expected a string")),
        None => Err(field_error(line, key, "missing")),
    }
}

fn opt_str(obj: &Map<String, Value>, key: &str, line: usize) -> Result<String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(_) => req_str(obj, key, line),
    }
}

fn req_u64(obj: &Map<String, Value>, key: &str, line: usize) -> Result<u64> {
    match obj.get(key) {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| field_error(line, key, "expected a non-negative integer")),
        None => Err(field_error(line, key, "missing")),
    }
}

fn opt_u64(obj: &Map<String, Value>, key: &str, line: usize) -> Result<u64> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(0),
        Some(_) => req_u64(obj, key, line),
    }
}

fn req_i64(obj: &Map<String, Value>, key: &str, line: usize) -> Result<i64> {
    match obj.get(key) {
        Some(v) => v
            .as_i64()
            .ok_or_else(|| field_error(line, key, "expected an integer")),
        None => Err(field_error(line, key, "missing")),
    }
}

/// Recomputes `idle_ms` / `processing_ms` in place, grouping by trace and
/// walking each trace in `seq_index` order.
fn recompute_timing(events: &mut [TraceEvent]) -> Result<()> {
    let mut by_trace: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        by_trace.entry(e.trace_id.as_str()).or_default().push(i);
    }
    let mut updates = Vec::with_capacity(events.len());
    for (_, mut idx) in by_trace {
        idx.sort_by_key(|&i| events[i].seq_index);
        let start = events[idx[0]].timestamp;
        let mut prev = start;
        for &i in &idx {
            let ts = events[i].timestamp;
            if ts < prev {
                return Err(Error::NonMonotonicTimestamp {
                    trace_id: events[i].trace_id.clone(),
                    seq_index: events[i].seq_index,
                });
            }
            updates.push((i, (ts - prev) as u64, (ts - start) as u64));
            prev = ts;
        }
    }
    for (i, idle, processing) in updates {
        events[i].idle_ms = idle;
        events[i].processing_ms = processing;
    }
    Ok(())
}

/// Groups events into one sequence per trace, sorted by trace id.
pub fn assemble_sequences(events: Vec<TraceEvent>) -> Result<Vec<ExecutionSequence>> {
    let mut groups: BTreeMap<String, Vec<TraceEvent>> = BTreeMap::new();
    for e in events {
        groups.entry(e.trace_id.clone()).or_default().push(e);
    }
    groups.into_values().map(ExecutionSequence::from_events).collect()
}

/// Result of [`filter_rare`].
#[derive(Debug, Clone, Default)]
pub struct RareFilter {
    pub kept: Vec<ExecutionSequence>,
    pub flagged: Vec<ExecutionSequence>,
}

/// Flags sequences whose collapsed tool path occurs fewer than `min_freq`
/// times in the corpus.
pub fn filter_rare(sequences: Vec<ExecutionSequence>, min_freq: usize) -> RareFilter {
    let mut counts: HashMap<Vec<String>, usize> = HashMap::new();
    for s in &sequences {
        *counts.entry(s.collapsed_path()).or_default() += 1;
    }
    let mut out = RareFilter::default();
    for s in sequences {
        if counts[&s.collapsed_path()] < min_freq {
            out.flagged.push(s);
        } else {
            out.kept.push(s);
        }
    }
    out
}
