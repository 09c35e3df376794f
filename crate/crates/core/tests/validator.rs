mod common;

use common::{criteria, inject, RULE_CLASSES};
use stackforge::validate::validate;

#[test]
fn each_rule_class_alone_yields_one_diagnostic() {
    let rules = criteria::rules();
    for (class, code) in RULE_CLASSES {
        let mut t = stackforge::Topology::new();
        inject(&mut t, class, 0);
        let d = validate(&t, &rules);
        assert_eq!(d.iter().map(|d| d.code.as_str()).collect::<Vec<_>>(), vec![code], "{class}: {d:?}");
    }
}

#[test]
fn k_seeded_violations_yield_exactly_k_diagnostics() {
    criteria::constraint_completeness(40).unwrap();
}

#[test]
fn every_class_twice_yields_eighteen() {
    let rules = criteria::rules();
    let mut t = criteria::load("lamp.camp");
    for (tag, (class, _)) in RULE_CLASSES.iter().chain(RULE_CLASSES.iter()).enumerate() {
        inject(&mut t, class, tag);
    }
    assert_eq!(validate(&t, &rules).len(), 18);
}
