//! Seeded generators of random topologies for property tests.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{
    ComponentKind, ComponentNode, MigrationType, OsType, PlatformNode, Provider, RelationKind, Relationship, Topology,
};

const ID_HEADS: &[&str] = &["web", "db", "api", "cache", "etl", "vm", "node", "Edge", "_tmp"];
const ID_TAILS: &[&str] = &["", "_1", "-a", "2", "_east", "-b-3"];
const ATTR_KEYS: &[&str] = &["port", "db_user", "language", "tier", "replicas", "note", "engine_x", "region"];
const VALUE_PIECES: &[&str] = &[
    "abc", "3306", "with space", "quote\"d", "back\\slash", "new\nline", "tab\there", "#hash", "{brace}", "semi;colon",
    "eq=ual", "é", "", "https://example.com/r.git", "-", "1.0",
];

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty pool")
}

fn fresh_id<R: Rng + ?Sized>(rng: &mut R, taken: &mut Vec<String>) -> String {
    loop {
        let id = format!("{}{}", pick(rng, ID_HEADS), pick(rng, ID_TAILS));
        let id = if taken.contains(&id) { format!("{id}_{}", taken.len()) } else { id };
        if !taken.contains(&id) && !matches!(id.as_str(), "component" | "platform" | "with") {
            taken.push(id.clone());
            return id;
        }
    }
}

/// Values are never empty: the grammar has no empty value.
fn value<R: Rng + ?Sized>(rng: &mut R) -> String {
    loop {
        let v: String = (0..rng.gen_range(1..=3)).map(|_| pick(rng, VALUE_PIECES)).collect();
        if !v.is_empty() {
            return v;
        }
    }
}

/// Any syntactically well-formed topology: every field, odd identifiers
/// and values that need quoting and escaping. Not necessarily valid.
pub fn well_formed<R: Rng + ?Sized>(rng: &mut R, max_nodes: usize) -> Topology {
    let mut t = Topology::new();
    let mut taken = Vec::new();
    let n_platforms = rng.gen_range(0..=max_nodes.max(1));
    let n_components = rng.gen_range(0..=max_nodes.max(1));
    let mut platforms = Vec::new();
    for _ in 0..n_platforms {
        let id = fresh_id(rng, &mut taken);
        let provider = *Provider::ALL.choose(rng).expect("providers");
        let os = *[OsType::Ubuntu, OsType::Redhat, OsType::Windows].choose(rng).expect("os types");
        let version = pick(rng, &["16.04", "14.04", "7", "10", "2019 R2"]);
        let mut p = PlatformNode::new(id.clone(), provider, os, version);
        let opt = |rng: &mut R| rng.gen_bool(0.5).then(|| value(rng));
        p.image_name = opt(rng);
        p.flavor = opt(rng);
        p.network = opt(rng);
        p.security_group = opt(rng);
        p.key_name = opt(rng);
        p.instance_count = rng.gen_range(1..=4);
        if provider == Provider::PreDeployed {
            p.address = Some(format!("10.0.{}.{}", rng.gen_range(0..255), rng.gen_range(1..255)));
        }
        for _ in 0..rng.gen_range(0..3) {
            p.attributes.insert(pick(rng, &["env_file", "key_file", "zone"]).to_string(), value(rng));
        }
        t.add_platform(p).expect("fresh id");
        platforms.push(id);
    }
    let mut components = Vec::new();
    for _ in 0..n_components {
        let id = fresh_id(rng, &mut taken);
        let kind = match rng.gen_range(0..4) {
            0 => ComponentKind::Web,
            1 => ComponentKind::Database,
            2 => ComponentKind::DataAnalytics,
            _ => ComponentKind::Other(pick(rng, &["cache", "queue", "stream_processor"]).to_string()),
        };
        let mut c = ComponentNode::new(id.clone(), kind);
        for _ in 0..rng.gen_range(0..5) {
            c.attributes.insert(pick(rng, ATTR_KEYS).to_string(), value(rng));
        }
        if rng.gen_bool(0.3) {
            c.source_ref = Some(value(rng));
        }
        t.add_component(c).expect("fresh id");
        components.push(id);
    }
    if components.is_empty() {
        return t;
    }
    for _ in 0..rng.gen_range(0..=2 * max_nodes) {
        let source = components.choose(rng).expect("components").clone();
        let kind = *[RelationKind::HostedOn, RelationKind::ConnectsTo, RelationKind::DeleteFrom, RelationKind::MigrateTo]
            .choose(rng)
            .expect("kinds");
        let pool = if kind == RelationKind::ConnectsTo { &components } else { &platforms };
        let Some(target) = pool.choose(rng) else { continue };
        let rel = if kind == RelationKind::MigrateTo {
            let m = if rng.gen_bool(0.5) { MigrationType::Stateful } else { MigrationType::Stateless };
            Relationship::migrate(&source, target, m)
        } else {
            Relationship::new(kind, &source, target)
        };
        let _ = t.add_relationship(rel);
    }
    t
}

/// A topology that passes validation and generates against the shipped
/// templates and knowledge base: `components` hosted components spread over
/// up to as many platforms, with random acyclic connectsTo edges.
pub fn deployable<R: Rng + ?Sized>(rng: &mut R, components: usize, edge_probability: f64) -> Topology {
    let mut t = Topology::new();
    let n_platforms = rng.gen_range(1..=components.max(1));
    for i in 0..n_platforms {
        let provider = *Provider::ALL.choose(rng).expect("providers");
        let version = pick(rng, &["14.04", "16.04"]);
        let mut p = PlatformNode::new(format!("p{i}"), provider, OsType::Ubuntu, version);
        if provider == Provider::PreDeployed {
            p.address = Some(format!("192.168.0.{}", i + 10));
        } else {
            p.image_name = Some(format!("ubuntu-{version}"));
            p.flavor = Some("m1.small".into());
        }
        t.add_platform(p).expect("fresh id");
    }
    let ids: Vec<String> = (0..components).map(|i| format!("c{i}")).collect();
    for id in &ids {
        let c = match rng.gen_range(0..3) {
            0 => ComponentNode::new(id.clone(), ComponentKind::Database)
                .with_attr("dbengine", "mysql")
                .with_attr("db_user", "app")
                .with_attr("db_root_pass", "pw"),
            1 => ComponentNode::new(id.clone(), ComponentKind::Web)
                .with_attr("webengine", "apache")
                .with_attr("language", "php"),
            _ => ComponentNode::new(id.clone(), ComponentKind::DataAnalytics)
                .with_attr("process_engine", "scikit-learn")
                .with_attr("language", "python"),
        };
        t.add_component(c).expect("fresh id");
        let host = format!("p{}", rng.gen_range(0..n_platforms));
        t.add_relationship(Relationship::new(RelationKind::HostedOn, id, &host)).expect("known nodes");
    }
    let mut order = ids.clone();
    order.shuffle(rng);
    for (i, later) in order.iter().enumerate() {
        for earlier in &order[..i] {
            if rng.gen_bool(edge_probability) {
                t.add_relationship(Relationship::new(RelationKind::ConnectsTo, later, earlier)).expect("known nodes");
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deployable_topologies_validate() {
        for seed in 0..50 {
            let t = deployable(&mut ChaCha8Rng::seed_from_u64(seed), 6, 0.3);
            let d = crate::validate::validate(&t, &crate::validate::RuleSet::builtin());
            assert!(d.is_empty(), "seed {seed}: {d:?}");
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let a = well_formed(&mut ChaCha8Rng::seed_from_u64(3), 5);
        let b = well_formed(&mut ChaCha8Rng::seed_from_u64(3), 5);
        assert_eq!(a, b);
    }
}
