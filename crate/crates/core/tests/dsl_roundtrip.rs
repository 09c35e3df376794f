mod common;

use common::criteria;

#[test]
fn fuzzed_topologies_round_trip() {
    criteria::parser_round_trip(200).unwrap();
}

#[test]
fn fixtures_round_trip() {
    for name in ["lamp.camp", "migration.camp", "migration_stateless.camp", "lamp_reports.camp", "missing_webengine.camp"] {
        let t = criteria::load(name);
        let text = stackforge::serialize(&t);
        assert_eq!(stackforge::parse(&text).unwrap(), t, "{name}");
    }
}

#[test]
fn larger_fuzzed_topologies_round_trip() {
    use rand::SeedableRng;
    for seed in 1000..1050 {
        let t = stackforge::fuzz::well_formed(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed), 20);
        assert_eq!(stackforge::parse(&stackforge::serialize(&t)).unwrap(), t, "seed {seed}");
    }
}
