//! Command-line front end.
//!
//! Effective settings merge four layers, highest first: command-line flags,
//! `GUARDIAN_*` environment variables, an optional TOML file given with
//! `--config`, and built-in defaults. `guardian inspect config` prints the
//! merged result.
//!
//! Exit codes: 0 success or allow, 1 usage/IO/learning error, 2 alert,
//! 3 terminate.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::enforce::service::{serve, FailMode, ServiceState};
use crate::enforce::{check_invocation, Decision, EnforceConfig, InvocationContext};
use crate::error::{Error, Result};
use crate::eval::{builtin, render_table, run_scenario, scenario::BUILTIN_APPS, EvalPlan, EvalReport, Scenario};
use crate::induce::{Aggregator, DeterministicAggregator, HttpAggregator};
use crate::learn::{learn_from_events, LearnConfig};
use crate::policy::{load_dir, write_policy, PolicyRepository};
use crate::trace::read_trace_path;

pub const ENV_POLICY_DIR: &str = "GUARDIAN_POLICY_DIR";
pub const ENV_BIND: &str = "GUARDIAN_BIND";
pub const ENV_FAIL_MODE: &str = "GUARDIAN_FAIL_MODE";
pub const ENV_AGGREGATOR_ENDPOINT: &str = "GUARDIAN_AGGREGATOR_ENDPOINT";
pub const ENV_AGGREGATOR_TIMEOUT_MS: &str = "GUARDIAN_AGGREGATOR_TIMEOUT_MS";

#[derive(Debug, Parser)]
#[command(name = "guardian", version, about = "Learn and enforce tool-invocation policies for LLM agents")]
pub struct Cli {
    /// TOML file with default settings (overridden by env and flags).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn policies from benign trace logs.
    Learn(LearnArgs),
    /// Check a single invocation against stored policies.
    Check(CheckArgs),
    /// Run the HTTP enforcement service.
    Serve(ServeArgs),
    /// Run a seeded learn-then-enforce evaluation.
    Eval(EvalArgs),
    /// Render stored policies, or the effective configuration.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    /// Deterministic draft minimizer.
    None,
    /// HTTP endpoint speaking the aggregator JSON protocol.
    External,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// Trace log file or directory of `*.jsonl` files.
    #[arg(long)]
    pub traces: PathBuf,
    /// Output directory for policy files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub min_freq: Option<usize>,
    #[arg(long)]
    pub merge_threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub aggregator: Option<AggregatorKind>,
    /// Aggregator URL [env: GUARDIAN_AGGREGATOR_ENDPOINT].
    #[arg(long)]
    pub aggregator_endpoint: Option<String>,
    /// [env: GUARDIAN_AGGREGATOR_TIMEOUT_MS]
    #[arg(long)]
    pub aggregator_timeout_ms: Option<u64>,
    /// Minutes east of UTC used for hour-of-day features.
    #[arg(long, allow_hyphen_values = true)]
    pub timezone_offset: Option<i32>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Policy directory [env: GUARDIAN_POLICY_DIR].
    #[arg(long)]
    pub policies: Option<PathBuf>,
    #[arg(long)]
    pub role: String,
    #[arg(long)]
    pub tool: String,
    #[arg(long, default_value = "")]
    pub input: String,
    /// Tools already invoked in this trace, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub prior: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub input_tokens: u64,
    #[arg(long, default_value_t = 0)]
    pub output_tokens: u64,
    /// UTC milliseconds; defaults to now.
    #[arg(long)]
    pub timestamp: Option<i64>,
    #[arg(long, default_value_t = 0)]
    pub idle_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub processing_ms: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Policy directory [env: GUARDIAN_POLICY_DIR].
    #[arg(long)]
    pub policies: Option<PathBuf>,
    /// host:port [env: GUARDIAN_BIND].
    #[arg(long)]
    pub bind: Option<String>,
    /// Verdict on internal errors [env: GUARDIAN_FAIL_MODE].
    #[arg(long = "fail")]
    pub fail: Option<FailMode>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Built-in app name, `all`, or a scenario JSON file.
    #[arg(long, default_value = "all")]
    pub app: String,
    #[arg(long, default_value_t = 60)]
    pub n_staging: usize,
    #[arg(long, default_value_t = 40)]
    pub n_benign: usize,
    #[arg(long, default_value_t = 10)]
    pub n_violation: usize,
    #[arg(long, default_value_t = EvalPlan::default().seed)]
    pub seed: u64,
    /// Directory for report.json, table.txt and the learned policies.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(subcommand)]
    pub what: Option<InspectWhat>,
    /// Policy directory [env: GUARDIAN_POLICY_DIR].
    #[arg(long)]
    pub policies: Option<PathBuf>,
    #[arg(long)]
    pub rule_id: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum InspectWhat {
    /// Print the effective configuration as TOML.
    Config,
}

/// Merged settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub policy_dir: Option<PathBuf>,
    pub bind: String,
    pub fail_mode: FailMode,
    pub aggregator: AggregatorKind,
    pub aggregator_endpoint: Option<String>,
    pub aggregator_timeout_ms: u64,
    pub learn: LearnConfig,
    pub enforce: EnforceConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            policy_dir: None,
            bind: "127.0.0.1:8700".into(),
            fail_mode: FailMode::Closed,
            aggregator: AggregatorKind::None,
            aggregator_endpoint: None,
            aggregator_timeout_ms: 10_000,
            learn: LearnConfig::default(),
            enforce: EnforceConfig::default(),
        }
    }
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies `GUARDIAN_*` variables from `env` on top of `self`.
    pub fn apply_env(mut self, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        if let Some(v) = env(ENV_POLICY_DIR) {
            self.policy_dir = Some(v.into());
        }
        if let Some(v) = env(ENV_BIND) {
            self.bind = v;
        }
        if let Some(v) = env(ENV_FAIL_MODE) {
            self.fail_mode = v.parse().map_err(|e| Error::Config(format!("{ENV_FAIL_MODE}: {e}")))?;
        }
        if let Some(v) = env(ENV_AGGREGATOR_ENDPOINT) {
            self.aggregator_endpoint = Some(v);
        }
        if let Some(v) = env(ENV_AGGREGATOR_TIMEOUT_MS) {
            self.aggregator_timeout_ms = v
                .parse()
                .map_err(|e| Error::Config(format!("{ENV_AGGREGATOR_TIMEOUT_MS}: {e}")))?;
        }
        Ok(self)
    }

    /// Applies the flags carried by `command`.
    pub fn apply_flags(mut self, command: &Command) -> Self {
        match command {
            Command::Learn(a) => {
                if let Some(v) = a.min_freq {
                    self.learn.min_freq = v;
                }
                if let Some(v) = a.merge_threshold {
                    self.learn.cluster.merge_threshold = v;
                }
                if let Some(v) = a.aggregator {
                    self.aggregator = v;
                }
                if let Some(v) = &a.aggregator_endpoint {
                    self.aggregator_endpoint = Some(v.clone());
                }
                if let Some(v) = a.aggregator_timeout_ms {
                    self.aggregator_timeout_ms = v;
                }
                if let Some(v) = a.timezone_offset {
                    self.learn.embed.timezone_offset_minutes = v;
                }
            }
            Command::Check(a) => {
                if let Some(v) = &a.policies {
                    self.policy_dir = Some(v.clone());
                }
            }
            Command::Serve(a) => {
                if let Some(v) = &a.policies {
                    self.policy_dir = Some(v.clone());
                }
                if let Some(v) = &a.bind {
                    self.bind = v.clone();
                }
                if let Some(v) = a.fail {
                    self.fail_mode = v;
                }
            }
            Command::Inspect(a) => {
                if let Some(v) = &a.policies {
                    self.policy_dir = Some(v.clone());
                }
            }
            Command::Eval(_) => {}
        }
        self
    }

    pub fn resolve(cli: &Cli, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let base = match &cli.config {
            Some(path) => Self::load_file(path)?,
            None => Self::default(),
        };
        Ok(base.apply_env(env)?.apply_flags(&cli.command))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is representable as TOML")
    }

    fn policy_dir(&self) -> Result<&Path> {
        self.policy_dir
            .as_deref()
            .ok_or_else(|| Error::Config(format!("no policy directory; pass --policies or set {ENV_POLICY_DIR}")))
    }

    fn aggregator(&self) -> Result<Box<dyn Aggregator>> {
        match self.aggregator {
            AggregatorKind::None => Ok(Box::new(DeterministicAggregator)),
            AggregatorKind::External => {
                let endpoint = self.aggregator_endpoint.as_deref().ok_or_else(|| {
                    Error::Config(format!("external aggregator needs --aggregator-endpoint or {ENV_AGGREGATOR_ENDPOINT}"))
                })?;
                Ok(Box::new(HttpAggregator::new(endpoint, self.aggregator_timeout_ms)?))
            }
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli, |k| std::env::var(k).ok(), &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs an already parsed command, writing human output to `out`.
pub fn execute(cli: &Cli, env: impl Fn(&str) -> Option<String>, out: &mut dyn std::io::Write) -> Result<u8> {
    let config = CliConfig::resolve(cli, env)?;
    match &cli.command {
        Command::Learn(a) => cmd_learn(a, &config, out),
        Command::Check(a) => cmd_check(a, &config, out),
        Command::Serve(_) => cmd_serve(&config),
        Command::Eval(a) => cmd_eval(a, &config, out),
        Command::Inspect(a) => cmd_inspect(a, &config, out),
    }
}

fn write_out(out: &mut dyn std::io::Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn cmd_learn(args: &LearnArgs, config: &CliConfig, out: &mut dyn std::io::Write) -> Result<u8> {
    let events = read_trace_path(&args.traces)?;
    let aggregator = config.aggregator()?;
    let learned = learn_from_events(events, &config.learn, aggregator.as_ref())?;
    let paths = learned.write(&args.out)?;
    let mut text = String::new();
    for s in &learned.summaries {
        text.push_str(&format!(
            "{} / {}: {} invocations, {} clusters, {} patterns",
            s.agent_role, s.tool_name, s.invocations, s.clusters, s.patterns
        ));
        if !s.flagged_rules.is_empty() {
            text.push_str(&format!(", flagged rare rules {:?}", s.flagged_rules));
        }
        text.push('\n');
    }
    if !learned.flagged_traces.is_empty() {
        text.push_str(&format!("flagged rare traces: {}\n", learned.flagged_traces.join(", ")));
    }
    for w in &learned.warnings {
        text.push_str(&format!("warning [{}]: {}\n", w.scope, w.message));
    }
    text.push_str(&format!("wrote {} policies to {}\n", paths.len(), args.out.display()));
    write_out(out, &text)?;
    Ok(0)
}

/// Exit code for a decision.
pub fn decision_exit_code(decision: Decision) -> u8 {
    match decision {
        Decision::Allow => 0,
        Decision::Alert => 2,
        Decision::Terminate => 3,
    }
}

fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

fn cmd_check(args: &CheckArgs, config: &CliConfig, out: &mut dyn std::io::Write) -> Result<u8> {
    let snapshot = load_dir(config.policy_dir()?)?;
    let ctx = InvocationContext {
        agent_role: args.role.clone(),
        tool_name: args.tool.clone(),
        tool_input: args.input.clone(),
        thoughts: String::new(),
        input_tokens: args.input_tokens,
        output_tokens: args.output_tokens,
        timestamp: args.timestamp.unwrap_or_else(now_ms),
        idle_ms: args.idle_ms,
        processing_ms: args.processing_ms,
        prior_tools: args.prior.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
    };
    let verdict = check_invocation(&ctx, &snapshot, &config.enforce);
    let json = serde_json::to_string_pretty(&verdict).expect("verdict serializes");
    write_out(out, &format!("{json}\n"))?;
    Ok(decision_exit_code(verdict.decision))
}

fn cmd_serve(config: &CliConfig) -> Result<u8> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .try_init();
    let dir = config.policy_dir()?.to_path_buf();
    let repo = Arc::new(PolicyRepository::open(&dir)?);
    let bind: SocketAddr = config
        .bind
        .parse()
        .map_err(|e| Error::Config(format!("bind address `{}`: {e}", config.bind)))?;
    let mut state = ServiceState::new(repo, Some(dir), config.enforce.clone());
    state.fail_mode = config.fail_mode;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Config(format!("runtime: {e}")))?;
    runtime.block_on(serve(bind, Arc::new(state)))?;
    Ok(0)
}

fn eval_scenarios(app: &str) -> Result<Vec<Scenario>> {
    if app == "all" {
        return BUILTIN_APPS.iter().map(|a| builtin(a)).collect();
    }
    if BUILTIN_APPS.contains(&app) {
        return Ok(vec![builtin(app)?]);
    }
    let path = Path::new(app);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(vec![Scenario::from_json(&text)?])
}

#[derive(Serialize)]
struct EvalDocument<'a> {
    seed: u64,
    n_staging: usize,
    n_benign: usize,
    n_violation: usize,
    reports: &'a [EvalReport],
    total: BTreeMap<&'static str, Option<f64>>,
}

fn cmd_eval(args: &EvalArgs, config: &CliConfig, out: &mut dyn std::io::Write) -> Result<u8> {
    let plan = EvalPlan {
        n_staging: args.n_staging,
        n_benign: args.n_benign,
        n_violation: args.n_violation,
        seed: args.seed,
    };
    let aggregator = config.aggregator()?;
    let mut reports = Vec::new();
    let mut policies = Vec::new();
    for scenario in eval_scenarios(&args.app)? {
        let exp = run_scenario(&scenario, &plan, &config.learn, &config.enforce, aggregator.as_ref())?;
        reports.push(exp.report);
        policies.extend(exp.policies);
    }
    let table = render_table(&reports);
    write_out(out, &format!("seed: {}\n{table}", plan.seed))?;

    if let Some(dir) = &args.out {
        let pooled = EvalReport::pooled("Total", &reports);
        let doc = EvalDocument {
            seed: plan.seed,
            n_staging: plan.n_staging,
            n_benign: plan.n_benign,
            n_violation: plan.n_violation,
            reports: &reports,
            total: BTreeMap::from([("far", pooled.far), ("frr", pooled.frr), ("befr", pooled.befr)]),
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report_path = dir.join("report.json");
        let json = serde_json::to_string_pretty(&doc).expect("report serializes");
        std::fs::write(&report_path, json + "\n").map_err(|e| Error::io(&report_path, e))?;
        let table_path = dir.join("table.txt");
        std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
        let policy_dir = dir.join("policies");
        for p in &policies {
            write_policy(&policy_dir, p)?;
        }
    }
    Ok(0)
}

fn cmd_inspect(args: &InspectArgs, config: &CliConfig, out: &mut dyn std::io::Write) -> Result<u8> {
    if let Some(InspectWhat::Config) = args.what {
        write_out(out, &config.to_toml())?;
        return Ok(0);
    }
    let snapshot = load_dir(config.policy_dir()?)?;
    let mut text = String::new();
    match &args.rule_id {
        Some(id) => {
            let p = snapshot
                .get(id)
                .ok_or_else(|| Error::Config(format!("no policy with rule id `{id}`")))?;
            text.push_str(&p.policy.render());
        }
        None => {
            for (i, p) in snapshot.policies().enumerate() {
                if i > 0 {
                    text.push('\n');
                }
                text.push_str(&p.render());
            }
        }
    }
    write_out(out, &text)?;
    Ok(0)
}
