mod common;

use std::path::Path;

use guardian::policy::{deserialize, load_dir, policy_path, rule_id, serialize, write_policy, PolicyRepository};
use proptest::prelude::*;
use rand::SeedableRng;

fn fixture() -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/read_file_policy.json")).unwrap()
}

#[test]
fn fixture_reserializes_byte_identical() {
    let text = fixture();
    let p = deserialize(&text).unwrap();
    assert_eq!(serialize(&p), text);
    assert_eq!(p.rule_id, "senior_data_researcher/a216654b81c80068");
    assert_eq!(rule_id(&p.agent_role, &p.tool_name), p.rule_id);
    assert_eq!(p.rules.len(), 2);
    assert_eq!(p.rules[0].textual.patterns, vec![r"^\./Cars/[A-Za-z]{4,12}\.txt$".to_string()]);
}

#[test]
fn tampered_rule_id_is_rejected() {
    let text = fixture().replace("a216654b81c80068", "0000000000000000");
    assert!(deserialize(&text).is_err());
}

#[test]
fn unknown_fields_are_ignored_and_bad_regex_rejected() {
    let text = fixture();
    let extra = text.replacen('{', "{\"surprise\": 1,", 1);
    assert_eq!(serialize(&deserialize(&extra).unwrap()), text);
    let bad = text.replace(r"[A-Za-z]{4,12}", r"[A-Za-z{4,12}");
    assert!(deserialize(&bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn random_policies_round_trip(seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_policy(&mut rng, "Field Analyst", "read_file");
        let text = serialize(&p);
        let back = deserialize(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(serialize(&back), text);
    }
}

#[test]
fn repository_reload_swaps_and_keeps_on_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let a = common::random_policy(&mut rng, "Field Analyst", "read_file");
    let b = common::random_policy(&mut rng, "Field Analyst", "send_email");
    write_policy(dir.path(), &a).unwrap();
    let repo = PolicyRepository::open(dir.path()).unwrap();
    assert_eq!(repo.list(), vec![a.rule_id.clone()]);
    let held = repo.snapshot();

    let path = write_policy(dir.path(), &b).unwrap();
    assert_eq!(path, policy_path(dir.path(), &b));
    assert!(path.ends_with("field_analyst/send_email.json"));
    repo.reload(dir.path()).unwrap();
    assert_eq!(repo.list().len(), 2);
    assert_eq!(held.len(), 1);

    std::fs::write(dir.path().join("field_analyst/broken.json"), "{").unwrap();
    assert!(repo.reload(dir.path()).is_err());
    assert_eq!(repo.list().len(), 2);
    assert!(load_dir(dir.path()).is_err());
}

#[test]
fn put_and_get() {
    let repo = PolicyRepository::new();
    let p = deserialize(&fixture()).unwrap();
    repo.put(p.clone()).unwrap();
    assert_eq!(repo.get(&p.rule_id), Some(p));
    assert!(repo.get("nobody/0").is_none());
}
