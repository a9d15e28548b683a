mod common;

use guardian::embed::{cosine_similarity, embed_event, hash_text_block, scale_numeric, Block, EmbedConfig, FEATURE_DIMS};
use guardian::hash::fnv1a64;
use proptest::prelude::*;

// Frozen from an independent script implementing the same hashing scheme.
const READ_FILE_VS_READ_FILES: f64 = 0.8703882797784892;
const READ_FILE_VS_SEND_EMAIL: f64 = 0.33113308926626095;
const AI_INTRO_VS_AI_TRENDS: f64 = 0.8050764858994135;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn fnv_reference_value() {
    assert_eq!(fnv1a64(b"send_email"), 0xf2fb20c9f89917b8);
    assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
}

#[test]
fn tool_name_similarity_matches_reference() {
    let a = hash_text_block("ACTION", "read_file", 16);
    let b = hash_text_block("ACTION", "read_files", 16);
    let c = hash_text_block("ACTION", "send_email", 16);
    let ab = cosine_similarity(&a, &b);
    assert!(close(ab, READ_FILE_VS_READ_FILES), "{ab}");
    assert!(ab > 0.5);
    assert!(close(cosine_similarity(&a, &c), READ_FILE_VS_SEND_EMAIL));
}

#[test]
fn path_similarity_matches_reference() {
    let a = hash_text_block("PARAMETERS", "./AI/ai-intro-2025.txt", 64);
    let b = hash_text_block("PARAMETERS", "./AI/ai-trends-2025.txt", 64);
    assert!(close(cosine_similarity(&a, &b), AI_INTRO_VS_AI_TRENDS));
}

#[test]
fn empty_text_is_zero_vector() {
    assert!(hash_text_block("INTENT", "", 32).iter().all(|&x| x == 0.0));
}

#[test]
fn blocks_tile_the_vector() {
    let mut next = 0;
    for b in Block::ALL {
        assert_eq!(b.range().start, next);
        next = b.range().end;
    }
    assert_eq!(next, FEATURE_DIMS);
}

proptest! {
    #[test]
    fn text_blocks_are_unit_or_zero(text in ".{0,40}", dims in 1usize..80) {
        let v = hash_text_block("OUTCOME", &text, dims);
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
        // Signed buckets may cancel, so only empty text is guaranteed zero.
        if text.is_empty() {
            prop_assert_eq!(n, 0.0);
        }
    }

    #[test]
    fn hashing_ignores_case(text in "[a-zA-Z ./_-]{1,30}") {
        prop_assert_eq!(
            hash_text_block("PARAMETERS", &text, 64),
            hash_text_block("PARAMETERS", &text.to_uppercase(), 64)
        );
    }

    #[test]
    fn embedding_is_deterministic_and_bounded(input in ".{0,30}", tokens in 0u64..1_000_000, ts in 0i64..4_000_000_000_000) {
        let mut e = common::event("t", 0, "read_file", &input, ts);
        e.input_tokens = tokens;
        let cfg = EmbedConfig::default();
        let v = embed_event(&e, &cfg);
        prop_assert_eq!(v.as_slice().len(), FEATURE_DIMS);
        prop_assert_eq!(&v, &embed_event(&e, &cfg));
        for b in [Block::MaxInputTokens, Block::MaxOutputTokens, Block::MinHour, Block::MaxHour, Block::MaxIdleTime, Block::MaxProcessingTime] {
            let x = v.block(b)[0];
            prop_assert!((0.0..=1.0).contains(&x), "{:?} {}", b, x);
        }
    }

    #[test]
    fn scale_is_monotone(a in 0.0f64..1e7, b in 0.0f64..1e7) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(scale_numeric(lo, 8192.0) <= scale_numeric(hi, 8192.0));
    }
}
