mod common;

#[test]
fn queueing_identities_hold_on_generated_datasets() {
    common::suites::queueing_identities();
}
