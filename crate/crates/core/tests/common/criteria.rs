//! Library-level checks behind the acceptance criteria. Each returns a short
//! summary on success and the first counterexample on failure.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stackforge::iac::{generate_bundle, IacBundle, TemplateLibrary};
use stackforge::kb::{KnowledgeBase, ResolveError};
use stackforge::plan::{plan_deploy, plan_migrate, Plan};
use stackforge::sim::{check_trace, simulate, Phase, SimConfig};
use stackforge::validate::{rule_set_from_file, validate, RuleSet};
use stackforge::{fuzz, Topology};

use super::*;

pub type Outcome = Result<String, String>;

pub fn kb() -> KnowledgeBase {
    KnowledgeBase::load(&repo().join("kb")).expect("shipped knowledge base")
}

pub fn templates() -> TemplateLibrary {
    TemplateLibrary::load(&repo().join("templates")).expect("shipped templates")
}

pub fn rules() -> RuleSet {
    rule_set_from_file(&repo().join("rules/default.rules")).expect("shipped rules")
}

pub fn load(name: &str) -> Topology {
    stackforge::dsl::parse_file(&fixture(name)).expect("fixture parses")
}

pub fn bundle(t: &Topology) -> IacBundle {
    generate_bundle(t, &kb(), &templates()).expect("fixture generates")
}

/// Pairs `(a, b)` such that `b` is reachable from `a` over `edges`.
pub fn closure(edges: &[(String, String)]) -> BTreeSet<(String, String)> {
    let mut next: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in edges {
        next.entry(a).or_default().push(b);
    }
    let mut out = BTreeSet::new();
    for start in next.keys() {
        let mut stack = vec![*start];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            for m in next.get(n).into_iter().flatten() {
                if seen.insert(*m) {
                    out.insert((start.to_string(), m.to_string()));
                    stack.push(m);
                }
            }
        }
    }
    out
}

fn plan_edges(plan: &Plan) -> Vec<(String, String)> {
    plan.edges().iter().map(|e| (e.before.clone(), e.after.clone())).collect()
}

/// Constraints broken by the order in which a simulated trace began steps.
fn trace_breaks(trace: &stackforge::sim::EventTrace, constraints: &[(String, String)]) -> Vec<String> {
    let end: BTreeMap<&str, (u64, usize)> = trace
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.phase == Phase::End)
        .map(|(i, e)| (e.step.as_str(), (e.tick, i)))
        .collect();
    let begin: BTreeMap<&str, (u64, usize)> = trace
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.phase == Phase::Begin)
        .map(|(i, e)| (e.step.as_str(), (e.tick, i)))
        .collect();
    constraints
        .iter()
        .filter(|(a, b)| match (end.get(a.as_str()), begin.get(b.as_str())) {
            (Some(x), Some(y)) => x > y,
            _ => true,
        })
        .map(|(a, b)| format!("{a} -> {b}"))
        .collect()
}

// 2
pub fn kb_equivalence() -> Outcome {
    let kb = kb();
    let queries = kb_queries(&kb);
    let mut non_empty = 0;
    for (app, apptype, os_type, os_version) in &queries {
        let expected = naive_join(&kb, app, apptype, os_type, os_version);
        let got = match kb.resolve(app, apptype, os_type, os_version) {
            Ok(res) => res.steps.into_iter().map(|s| (s.pkg_mgr, s.pkg_name)).collect(),
            Err(ResolveError::EmptyResolution { .. }) => Vec::new(),
            Err(e) => return Err(format!("{app}/{apptype} on {os_type} {os_version}: {e}")),
        };
        if got != expected {
            return Err(format!("{app}/{apptype} on {os_type} {os_version}: resolve {got:?} != join {expected:?}"));
        }
        non_empty += usize::from(!expected.is_empty());
    }
    Ok(format!("{} queries ({non_empty} non-empty) match the naive join", queries.len()))
}

// 3
pub const EXHAUSTIVE_CAP: u128 = 50_000;

pub fn ordering_soundness(instances: u64) -> Outcome {
    let (kb, lib, rules) = (kb(), templates(), rules());
    let (mut exhaustive, mut simulated, mut orders) = (0, 0, 0u128);
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1 + (seed % 7) as usize;
        let t = fuzz::deployable(&mut rng, n, 0.35);
        let diags = validate(&t, &rules);
        if !diags.is_empty() {
            return Err(format!("seed {seed}: fuzzed topology invalid: {diags:?}"));
        }
        let bundle = generate_bundle(&t, &kb, &lib).map_err(|e| format!("seed {seed}: {e}"))?;
        let plan = plan_deploy(&t, &bundle);
        let steps: BTreeSet<String> = plan.steps().iter().map(|s| s.id.clone()).collect();
        if steps != expected_deploy_steps(&t) {
            return Err(format!("seed {seed}: step set {steps:?}"));
        }
        let constraints = deploy_constraints(&t);
        let implied = closure(&constraints);
        if let Some((a, b)) = plan_edges(&plan).into_iter().find(|e| !implied.contains(e)) {
            return Err(format!("seed {seed}: edge {a} -> {b} is not required by the topology"));
        }
        match count_linearizations(&plan, EXHAUSTIVE_CAP) {
            Some(count) => {
                let mut bad = None;
                for_each_linearization(&plan, &mut |order| {
                    if bad.is_none() {
                        let b = broken(order, &constraints);
                        if !b.is_empty() {
                            bad = Some(format!("{order:?} breaks {b:?}"));
                        }
                    }
                });
                if let Some(b) = bad {
                    return Err(format!("seed {seed}: {b}"));
                }
                exhaustive += 1;
                orders += count;
            }
            None => {
                for sim_seed in 0..10 {
                    let trace = simulate(&plan, &SimConfig { seed: sim_seed, ..SimConfig::default() })
                        .map_err(|e| format!("seed {seed}: {e}"))?;
                    let v = check_trace(&trace, &plan);
                    let b = trace_breaks(&trace, &constraints);
                    if !v.is_empty() || !b.is_empty() {
                        return Err(format!("seed {seed}/{sim_seed}: violations {v:?}, broken {b:?}"));
                    }
                }
                simulated += 1;
            }
        }
    }
    Ok(format!(
        "{instances} topologies: {exhaustive} checked over all {orders} linearizations, {simulated} over 10 simulated traces each"
    ))
}

// 4
pub fn constraint_completeness(per_k: u64) -> Outcome {
    let rules = rules();
    let mut covered = BTreeSet::new();
    let mut fixtures = 0;
    for k in 1..=5usize {
        for seed in 0..per_k {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 10 + k as u64);
            let mut t = fuzz::deployable(&mut rng, 3, 0.3);
            let mut classes: Vec<_> = RULE_CLASSES.to_vec();
            classes.shuffle(&mut rng);
            classes.truncate(k);
            for (tag, (class, _)) in classes.iter().enumerate() {
                inject(&mut t, class, tag);
                covered.insert(*class);
            }
            let mut expected: Vec<&str> = classes.iter().map(|(_, code)| *code).collect();
            expected.sort_unstable();
            let diags = validate(&t, &rules);
            let mut got: Vec<&str> = diags.iter().map(|d| d.code.as_str()).collect();
            got.sort_unstable();
            if got != expected {
                return Err(format!("k={k} seed {seed}: expected {expected:?}, got {diags:?}"));
            }
            fixtures += 1;
        }
    }
    if covered.len() != RULE_CLASSES.len() {
        return Err(format!("only {} rule classes exercised", covered.len()));
    }
    Ok(format!("{fixtures} fixtures with k in 1..=5 across all 9 rule classes"))
}

// 5
pub fn migration_shape() -> Outcome {
    let t = load("migration.camp");
    let plan = plan_migrate(&t, &bundle(&t)).map_err(|e| e.to_string())?;
    let reach = closure(&plan_edges(&plan));
    let before = |a: &str, b: &str| reach.contains(&(a.to_string(), b.to_string()));
    for id in ["attach_lb:lb_mysql_db", "checkpoint:mysql_db", "restore:mysql_db", "detach_lb:lb_mysql_db", "terminate:openstack_a"] {
        if plan.step(id).is_none() {
            return Err(format!("stateful plan lacks {id}"));
        }
    }
    if !before("checkpoint:mysql_db", "restore:mysql_db") || !before("checkpoint:mysql_db", "terminate:openstack_a") {
        return Err("checkpoint is not ordered before restore and terminate".into());
    }
    if count_linearizations(&plan, EXHAUSTIVE_CAP).is_some() {
        let must = [
            ("checkpoint:mysql_db".to_string(), "restore:mysql_db".to_string()),
            ("checkpoint:mysql_db".to_string(), "terminate:openstack_a".to_string()),
        ];
        let mut bad = false;
        for_each_linearization(&plan, &mut |order| bad |= !broken(order, &must).is_empty());
        if bad {
            return Err("a linearization runs restore or terminate before checkpoint".into());
        }
    }

    let t = load("migration_stateless.camp");
    let plan = plan_migrate(&t, &bundle(&t)).map_err(|e| e.to_string())?;
    let reach = closure(&plan_edges(&plan));
    let terminate = "terminate:openstack_vm";
    if plan.step(terminate).is_none() {
        return Err("stateless plan lacks terminate:openstack_vm".into());
    }
    let new_host: Vec<&str> = plan.steps().iter().map(|s| s.id.as_str()).filter(|id| *id != terminate).collect();
    if new_host.is_empty() {
        return Err("stateless plan has no new-host steps".into());
    }
    for id in &new_host {
        if reach.contains(&(id.to_string(), terminate.into())) || reach.contains(&(terminate.into(), id.to_string())) {
            return Err(format!("{terminate} is ordered against {id}"));
        }
        if ["checkpoint", "restore", "attach_lb", "detach_lb", "redirect"].iter().any(|a| id.starts_with(a)) {
            return Err(format!("stateless plan contains {id}"));
        }
    }
    Ok(format!("stateful: checkpoint precedes restore and terminate; stateless: terminate unordered against {} steps", new_host.len()))
}

// 7
pub fn simulator_determinism() -> Outcome {
    let t = load("lamp.camp");
    let plan = plan_deploy(&t, &bundle(&t));
    let mut failing = SimConfig::default();
    failing.failures.push(stackforge::sim::Failure::new("configure:*", stackforge::sim::FailureMode::TaskFail));
    let mut runs = 0;
    for base in [SimConfig::default(), failing] {
        for seed in [0, 1, 42, 7_000_001] {
            let config = SimConfig { seed, ..base.clone() };
            let first = simulate(&plan, &config).map_err(|e| e.to_string())?.serialize();
            for _ in 0..19 {
                let again = simulate(&plan, &config).map_err(|e| e.to_string())?.serialize();
                if again != first {
                    return Err(format!("seed {seed}: traces differ"));
                }
            }
            runs += 20;
        }
    }
    Ok(format!("{runs} runs over 8 (config, seed) pairs, 20 identical traces each"))
}

// 8
pub fn parser_round_trip(count: u64) -> Outcome {
    let mut nodes = 0;
    for seed in 0..count {
        let t = fuzz::well_formed(&mut ChaCha8Rng::seed_from_u64(seed), 6);
        let text = stackforge::serialize(&t);
        let back = stackforge::parse(&text).map_err(|e| format!("seed {seed}: {e}\n{text}"))?;
        if back != t {
            return Err(format!("seed {seed}: parse(serialize(t)) != t\n{text}"));
        }
        if stackforge::serialize(&back) != text {
            return Err(format!("seed {seed}: serialization is not stable"));
        }
        nodes += t.components().count() + t.platforms().count();
    }
    Ok(format!("{count} topologies ({nodes} nodes) survive parse(serialize(t))"))
}

fn inventory_sections(text: &str) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut current = String::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.to_string();
            out.entry(current.clone()).or_default();
        } else {
            out.entry(current.clone()).or_default().push(line.to_string());
        }
    }
    out
}

/// Checks that two generated trees differ only in what belongs to
/// `component` (and `platform`, when the component brought a new one).
pub fn delta_locality(
    old: &BTreeMap<String, Vec<u8>>,
    new: &BTreeMap<String, Vec<u8>>,
    component: &str,
    platform: Option<&str>,
) -> Outcome {
    let mut owned = vec![format!("playbooks/{component}.yml")];
    if let Some(p) = platform {
        owned.push(format!("provision/{p}.sh"));
        owned.push(format!("teardown/{p}.sh"));
    }
    let changed = changed_paths(old, new);
    for path in &changed {
        let local = owned.contains(path) || path.starts_with(&format!("files/{component}/"));
        if !local && path != "inventory" && path != "manifest.json" {
            return Err(format!("{path} changed"));
        }
    }
    let text = |tree: &BTreeMap<String, Vec<u8>>, p: &str| String::from_utf8(tree.get(p).cloned().unwrap_or_default()).unwrap();

    let strip_inventory = |tree| {
        let mut s = inventory_sections(&text(tree, "inventory"));
        s.remove(component);
        s.remove(&format!("{component}:vars"));
        s
    };
    if strip_inventory(old) != strip_inventory(new) {
        return Err(format!("inventory changed outside [{component}]"));
    }

    let strip_manifest = |tree| -> Result<serde_json::Value, String> {
        let mut v: serde_json::Value = serde_json::from_str(&text(tree, "manifest.json")).map_err(|e| e.to_string())?;
        if let Some(m) = v["playbooks"].as_object_mut() {
            m.remove(component);
        }
        if let Some(p) = platform {
            for section in ["provision", "teardown"] {
                if let Some(m) = v[section].as_object_mut() {
                    m.remove(p);
                }
            }
        }
        Ok(v)
    };
    if strip_manifest(old)? != strip_manifest(new)? {
        return Err(format!("manifest.json changed outside the entries for {component}"));
    }
    Ok(format!("{} paths changed, all owned by {component}", changed.len()))
}
