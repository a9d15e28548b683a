//! Writes a learned bundle, loads it into a repository and hot-reloads
//! after a policy is removed.

use guardian::eval::builtin;
use guardian::induce::DeterministicAggregator;
use guardian::learn::{learn_from_events, LearnConfig};
use guardian::policy::{policy_path, PolicyRepository};

fn main() -> guardian::Result<()> {
    let dir = std::env::temp_dir().join(format!("guardian-repo-{}", std::process::id()));
    let events = builtin("it_support")?.generate_staging(40, 7).into_iter().flat_map(|s| s.trace.events).collect();
    let learned = learn_from_events(events, &LearnConfig::default(), &DeterministicAggregator)?;
    learned.write(&dir)?;

    let repo = PolicyRepository::open(&dir)?;
    let before = repo.snapshot();
    println!("loaded: {:?}", repo.list());

    let victim = &learned.policies[0];
    std::fs::remove_file(policy_path(&dir, victim)).expect("remove policy");
    repo.reload(&dir)?;
    println!("after removing {}: {:?}", victim.rule_id, repo.list());
    println!("an earlier snapshot still holds {} policies", before.len());

    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
