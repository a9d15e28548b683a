use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: field `{field}`: {reason}")]
    MalformedRecord {
        line: usize,
        field: String,
        reason: String,
    },

    #[error("duplicate event ({trace_id}, seq_index {seq_index})")]
    DuplicateEvent { trace_id: String, seq_index: u64 },

    #[error("trace {trace_id}: expected seq_index {expected}, found {found}")]
    SequenceGap {
        trace_id: String,
        expected: u64,
        found: u64,
    },

    #[error("trace {trace_id}: mixed agent roles `{first}` and `{second}`")]
    MixedAgentRole {
        trace_id: String,
        first: String,
        second: String,
    },

    #[error("trace {trace_id}: timestamp of seq_index {seq_index} precedes its predecessor")]
    NonMonotonicTimestamp { trace_id: String, seq_index: u64 },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("tool `{0}` does not appear in the corpus")]
    UnknownTool(String),

    #[error("cannot cluster an empty set of vectors")]
    EmptyClusterInput,

    #[error("policy for {tool_name} has no rules")]
    EmptyRules { tool_name: String },

    #[error("policy schema violation at `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("pattern `{pattern}` does not compile: {reason}")]
    Pattern { pattern: String, reason: String },

    #[error("rule id collision on {rule_id}: `{existing}` vs `{incoming}`")]
    RuleIdCollision {
        rule_id: String,
        existing: String,
        incoming: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    PolicyFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
