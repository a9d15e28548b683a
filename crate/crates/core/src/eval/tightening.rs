//! Probe-based permissiveness of learned input patterns.
//!
//! A predicate's acceptance rate over a fixed corpus of random strings is
//! a proxy for how much of the input space it admits. Comparing the rate
//! of policies learned from small and large staging corpora shows whether
//! more data tightens the learned rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::induce::TextualPredicate;

/// `n` random strings of printable ASCII (32..=126), each `len` chars.
pub fn probe_corpus(n: usize, len: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..len).map(|_| rng.random_range(32u8..=126) as char).collect())
        .collect()
}

/// Fraction of probes accepted by at least one predicate.
pub fn acceptance_rate(predicates: &[&TextualPredicate], probes: &[String]) -> Result<f64> {
    if probes.is_empty() {
        return Ok(0.0);
    }
    let compiled = predicates.iter().map(|p| p.compile()).collect::<Result<Vec<_>>>()?;
    let hits = probes
        .iter()
        .filter(|s| compiled.iter().any(|c| c.matches(s)))
        .count();
    Ok(hits as f64 / probes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probes_are_deterministic_printable() {
        let a = probe_corpus(50, 20, 3);
        assert_eq!(a, probe_corpus(50, 20, 3));
        assert_ne!(a, probe_corpus(50, 20, 4));
        assert!(a.iter().all(|s| s.len() == 20 && s.bytes().all(|b| (32..=126).contains(&b))));
    }

    #[test]
    fn wildcard_accepts_everything_literal_nothing() {
        let probes = probe_corpus(200, 20, 1);
        let any = TextualPredicate::new(vec!["^.{20}$".into()]).unwrap();
        let lit = TextualPredicate::new(vec!["^quantum_memo_2025\\.md$".into()]).unwrap();
        assert_eq!(acceptance_rate(&[&any], &probes).unwrap(), 1.0);
        assert_eq!(acceptance_rate(&[&lit], &probes).unwrap(), 0.0);
        assert_eq!(acceptance_rate(&[&lit, &any], &probes).unwrap(), 1.0);
    }
}
