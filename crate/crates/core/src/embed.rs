//! Fixed 150-dimensional feature vectors for tool invocations.
//!
//! | indices  | block               | dims |
//! |----------|---------------------|------|
//! | 0        | max_input_tokens    | 1    |
//! | 1        | max_output_tokens   | 1    |
//! | 2        | min_hour            | 1    |
//! | 3        | max_hour            | 1    |
//! | 4        | max_idle_time       | 1    |
//! | 5        | max_processing_time | 1    |
//! | 6..38    | thoughts            | 32   |
//! | 38..54   | tool type           | 16   |
//! | 54..118  | tool input          | 64   |
//! | 118..150 | task result         | 32   |
//!
//! Text blocks use signed feature hashing of word tokens and character
//! trigrams of `"PREFIX: content"`, then L2 normalization. Everything is
//! deterministic across runs and platforms.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::hash::fnv1a64;
use crate::trace::TraceEvent;

pub const FEATURE_DIMS: usize = 150;

const MS_PER_HOUR: f64 = 3_600_000.0;
const MS_PER_DAY: i64 = 86_400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    MaxInputTokens,
    MaxOutputTokens,
    MinHour,
    MaxHour,
    MaxIdleTime,
    MaxProcessingTime,
    Thoughts,
    ToolType,
    ToolInput,
    TaskResult,
}

impl Block {
    pub const ALL: [Block; 10] = [
        Block::MaxInputTokens,
        Block::MaxOutputTokens,
        Block::MinHour,
        Block::MaxHour,
        Block::MaxIdleTime,
        Block::MaxProcessingTime,
        Block::Thoughts,
        Block::ToolType,
        Block::ToolInput,
        Block::TaskResult,
    ];

    pub fn range(self) -> Range<usize> {
        match self {
            Block::MaxInputTokens => 0..1,
            Block::MaxOutputTokens => 1..2,
            Block::MinHour => 2..3,
            Block::MaxHour => 3..4,
            Block::MaxIdleTime => 4..5,
            Block::MaxProcessingTime => 5..6,
            Block::Thoughts => 6..38,
            Block::ToolType => 38..54,
            Block::ToolInput => 54..118,
            Block::TaskResult => 118..150,
        }
    }

    pub fn dims(self) -> usize {
        self.range().len()
    }

    /// Context prefix for text blocks.
    pub fn prefix(self) -> Option<&'static str> {
        match self {
            Block::Thoughts => Some("INTENT"),
            Block::ToolType => Some("ACTION"),
            Block::ToolInput => Some("PARAMETERS"),
            Block::TaskResult => Some("OUTCOME"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn zeros() -> Self {
        FeatureVector(vec![0.0; FEATURE_DIMS])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.0[block.range()]
    }

    pub fn set_block(&mut self, block: Block, values: &[f64]) {
        let range = block.range();
        assert_eq!(values.len(), range.len(), "block {block:?} dims");
        self.0[range].copy_from_slice(values);
    }
}

/// Scaling denominators and wall-clock offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub token_cap: u64,
    pub idle_cap_ms: u64,
    pub processing_cap_ms: u64,
    pub timezone_offset_minutes: i32,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            token_cap: 32_768,
            idle_cap_ms: 600_000,
            processing_cap_ms: 3_600_000,
            timezone_offset_minutes: 0,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.token_cap == 0 || self.idle_cap_ms == 0 || self.processing_cap_ms == 0 {
            return Err(crate::Error::Config("embedding caps must be positive".into()));
        }
        Ok(())
    }

    /// Milliseconds since local midnight.
    pub fn ms_of_day(&self, timestamp_ms: i64) -> i64 {
        let local = timestamp_ms + i64::from(self.timezone_offset_minutes) * 60_000;
        local.rem_euclid(MS_PER_DAY)
    }

    /// Local wall-clock time as fractional hours in `[0, 24)`.
    pub fn hour_of_day(&self, timestamp_ms: i64) -> f64 {
        self.ms_of_day(timestamp_ms) as f64 / MS_PER_HOUR
    }
}

pub fn scale_numeric(value: f64, cap: f64) -> f64 {
    debug_assert!(cap > 0.0);
    (value / cap).clamp(0.0, 1.0)
}

pub fn embed_event(event: &TraceEvent, config: &EmbedConfig) -> FeatureVector {
    let mut v = FeatureVector::zeros();
    let token_cap = config.token_cap as f64;
    let hour = (config.ms_of_day(event.timestamp) / MS_PER_HOUR as i64) as f64 / 24.0;
    v.0[0] = scale_numeric(event.input_tokens as f64, token_cap);
    v.0[1] = scale_numeric(event.output_tokens as f64, token_cap);
    v.0[2] = hour;
    v.0[3] = hour;
    v.0[4] = scale_numeric(event.idle_ms as f64, config.idle_cap_ms as f64);
    v.0[5] = scale_numeric(event.processing_ms as f64, config.processing_cap_ms as f64);

    for (block, text) in [
        (Block::Thoughts, &event.thoughts),
        (Block::ToolType, &event.tool_name),
        (Block::ToolInput, &event.tool_input),
        (Block::TaskResult, &event.task_result),
    ] {
        let prefix = block.prefix().expect("text block");
        v.set_block(block, &hash_text_block(prefix, text, block.dims()));
    }
    v
}

/// Signed feature hashing of `"PREFIX: text"`: lowercase, then word tokens
/// (maximal alphanumeric runs) and character trigrams, each hashed with
/// FNV-1a into `h mod dims` with the sign taken from bit 63. The result is
/// L2-normalized. Empty text yields the zero vector.
pub fn hash_text_block(prefix: &str, text: &str, dims: usize) -> Vec<f64> {
    assert!(dims >= 1, "dims must be positive");
    let mut out = vec![0.0; dims];
    if text.is_empty() {
        return out;
    }
    let formed = format!("{prefix}: {text}").to_lowercase();
    let mut add = |feature: &str| {
        let h = fnv1a64(feature.as_bytes());
        let bucket = (h % dims as u64) as usize;
        out[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    };
    for word in formed.split(|c: char| !c.is_alphanumeric()) {
        if !word.is_empty() {
            add(word);
        }
    }
    let chars: Vec<char> = formed.chars().collect();
    let mut buf = String::with_capacity(12);
    for w in chars.windows(3) {
        buf.clear();
        buf.extend(w);
        add(&buf);
    }
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut out {
            *x /= norm;
        }
    }
    out
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(ts: i64) -> TraceEvent {
        TraceEvent {
            trace_id: "t".into(),
            seq_index: 0,
            timestamp: ts,
            agent_role: "r".into(),
            thoughts: String::new(),
            tool_name: String::new(),
            tool_input: String::new(),
            task_result: String::new(),
            input_tokens: 0,
            output_tokens: 0,
            idle_ms: 0,
            processing_ms: 0,
        }
    }

    #[test]
    fn layout_sums_to_150() {
        let dims: Vec<usize> = Block::ALL.iter().map(|b| b.dims()).collect();
        assert_eq!(dims, vec![1, 1, 1, 1, 1, 1, 32, 16, 64, 32]);
        assert_eq!(dims.iter().sum::<usize>(), FEATURE_DIMS);
        let mut next = 0;
        for b in Block::ALL {
            assert_eq!(b.range().start, next);
            next = b.range().end;
        }
    }

    #[test]
    fn zero_event_embeds_to_zero() {
        let v = embed_event(&event(0), &EmbedConfig::default());
        assert!(v.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hour_slots() {
        // 14:37 UTC
        let ts = 14 * 3_600_000 + 37 * 60_000;
        let v = embed_event(&event(ts), &EmbedConfig::default());
        assert!((v.as_slice()[2] - 14.0 / 24.0).abs() < 1e-12);
        assert_eq!(v.as_slice()[2], v.as_slice()[3]);

        let shifted = EmbedConfig {
            timezone_offset_minutes: 120,
            ..Default::default()
        };
        let v = embed_event(&event(ts), &shifted);
        assert!((v.as_slice()[2] - 16.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn negative_offset_wraps_past_midnight() {
        let cfg = EmbedConfig {
            timezone_offset_minutes: -60,
            ..Default::default()
        };
        assert!((cfg.hour_of_day(30 * 60_000) - 23.5).abs() < 1e-12);
    }

    #[test]
    fn scale_numeric_clamps() {
        assert_eq!(scale_numeric(0.0, 7.0), 0.0);
        assert_eq!(scale_numeric(7.0, 7.0), 1.0);
        assert_eq!(scale_numeric(14.0, 7.0), 1.0);
    }

    #[test]
    fn text_blocks_unit_norm_and_deterministic() {
        let a = hash_text_block("PARAMETERS", "./AI/ai-intro-2025.txt", 64);
        let b = hash_text_block("PARAMETERS", "./AI/ai-intro-2025.txt", 64);
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(hash_text_block("PARAMETERS", "", 64).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn input_edit_only_touches_input_block() {
        let cfg = EmbedConfig::default();
        let mut a = event(9 * 3_600_000);
        a.thoughts = "list the folder".into();
        a.tool_name = "read_file".into();
        a.tool_input = "./Cars/specs.txt".into();
        a.task_result = "ok".into();
        let mut b = a.clone();
        b.tool_input = "./Cars/prices.txt".into();
        let (va, vb) = (embed_event(&a, &cfg), embed_event(&b, &cfg));
        let input = Block::ToolInput.range();
        for i in 0..FEATURE_DIMS {
            if !input.contains(&i) {
                assert_eq!(va.as_slice()[i], vb.as_slice()[i], "index {i}");
            }
        }
        assert_ne!(va.block(Block::ToolInput), vb.block(Block::ToolInput));
    }
}
