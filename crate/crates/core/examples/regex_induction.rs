//! Drafts and minimizes full-match patterns from example inputs.

use guardian::induce::{aggregate, draft_regexes, DeterministicAggregator};

fn main() -> guardian::Result<()> {
    let samples: Vec<String> = std::env::args().skip(1).collect();
    let samples = if samples.is_empty() {
        ["./Cars/Sedan.txt", "./Cars/Coupe.txt", "./AI/ai-intro-2025.txt", "./AI/ai-trends-2025.txt", "./AI/ai-safety-2025.txt"]
            .map(String::from)
            .to_vec()
    } else {
        samples
    };
    let drafts = draft_regexes(&samples);
    println!("drafts:");
    drafts.iter().for_each(|d| println!("  {d}"));
    let (predicate, _) = aggregate(&drafts, &samples, &DeterministicAggregator)?;
    println!("kept:");
    predicate.patterns.iter().for_each(|p| println!("  {p}"));
    let compiled = predicate.compile()?;
    for probe in ["./Cars/Roadster.txt", "./AI/ai-x-2025.txt", "/etc/passwd"] {
        println!("{probe:<22} {}", compiled.matches(probe));
    }
    Ok(())
}
