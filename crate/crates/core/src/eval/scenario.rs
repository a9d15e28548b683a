//! Scripted benign / violation trace generation.
//!
//! A scenario is a JSON document describing one agent application: value
//! pools, the benign tool script, violation mutations and hallucination
//! mutations. Two scripts ship with the crate (see [`builtin`]); others can
//! be loaded with [`Scenario::from_json`].

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::trace::{ExecutionSequence, TraceEvent};

const KNOWLEDGE_ASSISTANT: &str = include_str!("../../scenarios/knowledge_assistant.json");
const IT_SUPPORT: &str = include_str!("../../scenarios/it_support.json");

pub const BUILTIN_APPS: [&str; 2] = ["knowledge_assistant", "it_support"];

pub fn builtin(app: &str) -> Result<Scenario> {
    match app {
        "knowledge_assistant" => Scenario::from_json(KNOWLEDGE_ASSISTANT),
        "it_support" => Scenario::from_json(IT_SUPPORT),
        other => Err(Error::Config(format!(
            "unknown app `{other}` (expected one of {})",
            BUILTIN_APPS.join(", ")
        ))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub app: String,
    pub display_name: String,
    pub agent_role: String,
    pub base_time_ms: i64,
    pub start_hour: [f64; 2],
    /// Hallucinated benign samples per 40 benign test samples.
    #[serde(default)]
    pub hallucinated_benign: usize,
    /// Each pool contributes one element per trace; object elements merge
    /// their fields into the trace variables.
    pub pools: BTreeMap<String, Vec<Value>>,
    /// Derived variables, e.g. `{"request": {"pick_from": "requests"}}`.
    #[serde(default)]
    pub vars: BTreeMap<String, DerivedVar>,
    pub steps: Vec<StepSpec>,
    pub violations: Vec<Mutation>,
    #[serde(default)]
    pub hallucinations: Vec<Mutation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivedVar {
    pub pick_from: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Template {
    One(String),
    /// Indexed by repetition, the last entry repeating.
    PerRepeat(Vec<String>),
}

impl Template {
    fn get(&self, rep: usize) -> &str {
        match self {
            Template::One(s) => s,
            Template::PerRepeat(v) => &v[rep.min(v.len() - 1)],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepSpec {
    pub tool: String,
    pub input: Template,
    #[serde(default)]
    pub thoughts: String,
    #[serde(default)]
    pub result: String,
    /// List variable whose elements are drawn without replacement into
    /// `{item}`, one per repetition.
    #[serde(default)]
    pub pick: Option<String>,
    #[serde(default = "one_one")]
    pub repeat: [usize; 2],
    #[serde(default = "default_input_tokens")]
    pub input_tokens: [u64; 2],
    #[serde(default = "default_output_tokens")]
    pub output_tokens: [u64; 2],
    #[serde(default = "default_gap")]
    pub gap_ms: [u64; 2],
}

fn one_one() -> [usize; 2] {
    [1, 1]
}
fn default_input_tokens() -> [u64; 2] {
    [800, 1200]
}
fn default_output_tokens() -> [u64; 2] {
    [60, 120]
}
fn default_gap() -> [u64; 2] {
    [2000, 5000]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    /// Tool-ordering mutation.
    Flow,
    /// Out-of-pool tool input.
    Input,
    /// Hard case that may evade textual predicates (e.g. payloads in
    /// free-text fields or in-format values).
    Stress,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MutationOp {
    /// Override trace variables before rendering.
    Set { vars: BTreeMap<String, String> },
    /// Replace the input of the first occurrence of `tool`.
    ReplaceInput { tool: String, input: String },
    /// Move the first occurrence of `tool` in front of the first `before`.
    MoveBefore { tool: String, before: String },
    /// Insert a new step after the first occurrence of `after`.
    InsertAfter { after: String, step: InsertedStep },
    /// Repeat the last occurrence of `tool` immediately.
    Duplicate { tool: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InsertedStep {
    pub tool: String,
    pub input: String,
    #[serde(default)]
    pub thoughts: String,
    #[serde(default)]
    pub result: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mutation {
    pub name: String,
    #[serde(default = "stress_default")]
    pub category: Category,
    #[serde(flatten)]
    pub op: MutationOp,
}

fn stress_default() -> Category {
    Category::Stress
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureNote {
    Hallucination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub trace: ExecutionSequence,
    pub label: Label,
    pub failure_note: Option<FailureNote>,
    pub app: String,
    /// Mutation that produced this sample, if any.
    pub mutation: Option<String>,
    pub category: Option<Category>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Config(format!("scenario {}: no steps", self.app)));
        }
        for (name, pool) in &self.pools {
            if pool.is_empty() {
                return Err(Error::Config(format!("scenario {}: pool `{name}` is empty", self.app)));
            }
        }
        let [lo, hi] = self.start_hour;
        if !(0.0 <= lo && lo <= hi && hi < 24.0) {
            return Err(Error::Config(format!("scenario {}: bad start_hour", self.app)));
        }
        Ok(())
    }

    fn step_for(&self, tool: &str) -> Option<&StepSpec> {
        self.steps.iter().find(|s| s.tool == tool)
    }

    fn draw_vars(&self, rng: &mut ChaCha8Rng) -> BTreeMap<String, Value> {
        let mut vars = BTreeMap::new();
        for (name, pool) in &self.pools {
            let v = pool.choose(rng).expect("validated non-empty").clone();
            match v {
                Value::Object(fields) => {
                    for (k, x) in fields {
                        vars.insert(k, x);
                    }
                }
                other => {
                    vars.insert(name.clone(), other);
                }
            }
        }
        for (name, d) in &self.vars {
            if let Some(Value::Array(items)) = vars.get(&d.pick_from) {
                if let Some(x) = items.choose(rng) {
                    let x = x.clone();
                    vars.insert(name.clone(), x);
                }
            }
        }
        vars
    }

    /// Benign samples without hallucinations, for staging.
    pub fn generate_staging(&self, n: usize, seed: u64) -> Vec<LabeledSample> {
        self.generate_inner(n, 0, 0, seed)
    }

    /// `n_benign` benign samples (a share of them hallucinated, per the
    /// scenario's rate) followed by `n_violation` violations cycling through
    /// the scenario's mutations.
    pub fn generate_scenarios(&self, n_benign: usize, n_violation: usize, seed: u64) -> Vec<LabeledSample> {
        let hallucinated = if self.hallucinations.is_empty() {
            0
        } else {
            ((self.hallucinated_benign * n_benign) as f64 / 40.0).round() as usize
        };
        self.generate_inner(n_benign, n_violation, hallucinated.min(n_benign), seed)
    }

    fn generate_inner(&self, n_benign: usize, n_violation: usize, n_halluc: usize, seed: u64) -> Vec<LabeledSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut halluc_slots: Vec<usize> = (0..n_benign).collect();
        halluc_slots.shuffle(&mut rng);
        halluc_slots.truncate(n_halluc);
        halluc_slots.sort_unstable();

        let mut out = Vec::with_capacity(n_benign + n_violation);
        for i in 0..n_benign + n_violation {
            let trace_id = format!("{}-{seed}-{i:03}", self.app);
            let (label, mutation, note) = if i < n_benign {
                if halluc_slots.binary_search(&i).is_ok() {
                    let m = &self.hallucinations[i % self.hallucinations.len()];
                    (Label::Benign, Some(m), Some(FailureNote::Hallucination))
                } else {
                    (Label::Benign, None, None)
                }
            } else {
                let m = &self.violations[(i - n_benign) % self.violations.len()];
                (Label::Violation, Some(m), None)
            };
            let trace = self.build_trace(&trace_id, i, mutation, &mut rng);
            out.push(LabeledSample {
                trace,
                label,
                failure_note: note,
                app: self.app.clone(),
                mutation: mutation.map(|m| m.name.clone()),
                category: if label == Label::Violation {
                    mutation.map(|m| m.category)
                } else {
                    None
                },
            });
        }
        out
    }

    fn build_trace(
        &self,
        trace_id: &str,
        day: usize,
        mutation: Option<&Mutation>,
        rng: &mut ChaCha8Rng,
    ) -> ExecutionSequence {
        let mut vars = self.draw_vars(rng);
        if let Some(Mutation {
            op: MutationOp::Set { vars: overrides },
            ..
        }) = mutation
        {
            for (k, v) in overrides {
                vars.insert(k.clone(), Value::String(v.clone()));
            }
        }

        // (tool, input, thoughts, result, item var snapshot)
        let mut steps: Vec<Rendered> = Vec::new();
        for spec in &self.steps {
            let reps = rng.random_range(spec.repeat[0]..=spec.repeat[1].max(spec.repeat[0]));
            let mut items: Vec<Value> = match spec.pick.as_ref().and_then(|p| vars.get(p)) {
                Some(Value::Array(a)) => a.clone(),
                _ => Vec::new(),
            };
            items.shuffle(rng);
            for rep in 0..reps {
                if !items.is_empty() {
                    vars.insert("item".into(), items[rep % items.len()].clone());
                }
                steps.push(Rendered {
                    tool: spec.tool.clone(),
                    input: render(spec.input.get(rep), &vars),
                    thoughts: render(&spec.thoughts, &vars),
                    result: render(&spec.result, &vars),
                    vars: vars.clone(),
                });
            }
        }

        if let Some(m) = mutation {
            apply_structural(&m.op, &mut steps);
        }

        let [lo, hi] = self.start_hour;
        let start_ms = (rng.random_range(lo..=hi) * 3_600_000.0) as i64;
        let mut ts = self.base_time_ms + day as i64 * 86_400_000 + start_ms;
        let mut events = Vec::with_capacity(steps.len());
        for (i, s) in steps.into_iter().enumerate() {
            let spec = self.step_for(&s.tool);
            let gap = spec.map_or(default_gap(), |x| x.gap_ms);
            let it = spec.map_or(default_input_tokens(), |x| x.input_tokens);
            let ot = spec.map_or(default_output_tokens(), |x| x.output_tokens);
            if i > 0 {
                ts += rng.random_range(gap[0]..=gap[1]) as i64;
            }
            events.push(TraceEvent {
                trace_id: trace_id.to_string(),
                seq_index: i as u64,
                timestamp: ts,
                agent_role: self.agent_role.clone(),
                thoughts: s.thoughts,
                tool_name: s.tool,
                tool_input: s.input,
                task_result: s.result,
                input_tokens: rng.random_range(it[0]..=it[1]),
                output_tokens: rng.random_range(ot[0]..=ot[1]),
                idle_ms: 0,
                processing_ms: 0,
            });
        }
        ExecutionSequence::from_events(events).expect("generated traces are well-formed")
    }
}

struct Rendered {
    tool: String,
    input: String,
    thoughts: String,
    result: String,
    vars: BTreeMap<String, Value>,
}

fn apply_structural(op: &MutationOp, steps: &mut Vec<Rendered>) {
    let first = |steps: &[Rendered], tool: &str| steps.iter().position(|s| s.tool == tool);
    match op {
        MutationOp::Set { .. } => {}
        MutationOp::ReplaceInput { tool, input } => {
            if let Some(i) = first(steps, tool) {
                steps[i].input = render(input, &steps[i].vars);
            }
        }
        MutationOp::MoveBefore { tool, before } => {
            if let (Some(from), Some(to)) = (first(steps, tool), first(steps, before)) {
                if from > to {
                    let s = steps.remove(from);
                    steps.insert(to, s);
                }
            }
        }
        MutationOp::InsertAfter { after, step } => {
            if let Some(i) = first(steps, after) {
                let vars = steps[i].vars.clone();
                steps.insert(
                    i + 1,
                    Rendered {
                        tool: step.tool.clone(),
                        input: render(&step.input, &vars),
                        thoughts: render(&step.thoughts, &vars),
                        result: render(&step.result, &vars),
                        vars,
                    },
                );
            }
        }
        MutationOp::Duplicate { tool } => {
            if let Some(i) = steps.iter().rposition(|s| s.tool == *tool) {
                let copy = Rendered {
                    tool: steps[i].tool.clone(),
                    input: steps[i].input.clone(),
                    thoughts: steps[i].thoughts.clone(),
                    result: steps[i].result.clone(),
                    vars: steps[i].vars.clone(),
                };
                steps.insert(i + 1, copy);
            }
        }
    }
}

/// Replaces `{name}` with string (or numeric) variables; unknown names are
/// left in place.
fn render(template: &str, vars: &BTreeMap<String, Value>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let key = &after[..close];
                match vars.get(key) {
                    Some(Value::String(s)) => out.push_str(s),
                    Some(Value::Number(n)) => out.push_str(&n.to_string()),
                    _ => {
                        out.push('{');
                        out.push_str(key);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_scenarios_parse() {
        for app in BUILTIN_APPS {
            let s = builtin(app).unwrap();
            assert_eq!(s.violations.len(), 10, "{app}");
        }
        assert!(builtin("nope").is_err());
    }

    #[test]
    fn generation_is_seeded() {
        let s = builtin("knowledge_assistant").unwrap();
        assert_eq!(s.generate_scenarios(5, 3, 9), s.generate_scenarios(5, 3, 9));
        assert_ne!(s.generate_scenarios(5, 3, 9), s.generate_scenarios(5, 3, 10));
    }

    #[test]
    fn labels_and_hallucination_share() {
        let s = builtin("knowledge_assistant").unwrap();
        let corpus = s.generate_scenarios(40, 10, 1);
        assert_eq!(corpus.iter().filter(|x| x.label == Label::Benign).count(), 40);
        assert_eq!(corpus.iter().filter(|x| x.failure_note.is_some()).count(), 4);
        assert!(corpus
            .iter()
            .all(|x| x.failure_note.is_none() || x.label == Label::Benign));
        assert!(s.generate_staging(60, 1).iter().all(|x| x.failure_note.is_none()));
    }

    #[test]
    fn benign_script_order() {
        let s = builtin("knowledge_assistant").unwrap();
        let t = &s.generate_staging(1, 3)[0].trace;
        let path = t.collapsed_path();
        assert_eq!(
            path,
            vec!["list_files", "read_file", "serper_search", "file_writer", "send_email"]
        );
        assert!(t.events[0].tool_input.starts_with("./"));
    }

    #[test]
    fn mutations_apply() {
        let s = builtin("knowledge_assistant").unwrap();
        let corpus = s.generate_scenarios(0, 10, 4);
        let by_name = |n: &str| corpus.iter().find(|x| x.mutation.as_deref() == Some(n)).unwrap();
        let emails: Vec<_> = by_name("malformed_email")
            .trace
            .events
            .iter()
            .filter(|e| e.tool_name == "send_email")
            .map(|e| e.tool_input.as_str())
            .collect();
        assert_eq!(emails, vec!["gracewilson@@mail"]);
        let reorder = by_name("summary_before_read").trace.tool_names();
        assert_eq!(&reorder[..2], &["list_files", "file_writer"]);
        let rep = by_name("repeated_email").trace.tool_names();
        assert_eq!(&rep[rep.len() - 2..], &["send_email", "send_email"]);
    }

    #[test]
    fn render_placeholders() {
        let mut vars = BTreeMap::new();
        vars.insert("a".to_string(), Value::String("x".into()));
        assert_eq!(render("{a}/{b}/{", &vars), "x/{b}/{");
    }
}
