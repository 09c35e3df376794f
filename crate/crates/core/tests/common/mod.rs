//! Independent oracles and helpers shared by the integration tests and the
//! acceptance suite. Nothing here calls the code it is used to check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use stackforge::kb::KnowledgeBase;
use stackforge::model::{
    ComponentKind, ComponentNode, MigrationType, OsType, PlatformNode, Provider, RelationKind, Relationship, Topology,
};
use stackforge::plan::Plan;

pub fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().expect("repository root")
}

pub fn fixture(name: &str) -> PathBuf {
    repo().join("fixtures").join(name)
}

pub mod criteria;

// ---------------------------------------------------------------- KB oracle

/// Nested-loop join over the four raw tables:
///
/// ```sql
/// SELECT pkg.pkg_mgr, pkg.pkg_name FROM packages pkg, swdependency dep
/// WHERE pkg.app_id = dep.id AND dep.app_name = ? AND pkg.apptype = ?
///   AND pkg.sw_id IN (SELECT app_sw_id FROM os_dependency WHERE os_id IN
///       (SELECT id FROM os_pkg_mgr WHERE os_type = ? AND os_version = ?))
/// ORDER BY install_order, sw_id, id
/// ```
pub fn naive_join(kb: &KnowledgeBase, app: &str, apptype: &str, os_type: &str, os_version: &str) -> Vec<(String, String)> {
    let mut rows = Vec::new();
    for dep in kb.swdependency() {
        if dep.app_name != app {
            continue;
        }
        for pkg in kb.packages() {
            if pkg.app_id != dep.id || pkg.apptype != apptype {
                continue;
            }
            let mut compatible = false;
            for od in kb.os_dependency() {
                for os in kb.os_pkg_mgr() {
                    if od.os_id == os.id && os.os_type == os_type && os.os_version == os_version && od.app_sw_id == pkg.sw_id {
                        compatible = true;
                    }
                }
            }
            if compatible {
                rows.push(pkg.clone());
            }
        }
    }
    rows.sort_by_key(|r| (r.install_order, r.sw_id, r.id));
    rows.into_iter().map(|r| (r.pkg_mgr, r.pkg_name)).collect()
}

/// Every `(app, apptype, os_type, os_version)` the seed tables mention.
pub fn kb_queries(kb: &KnowledgeBase) -> Vec<(String, String, String, String)> {
    let mut out = BTreeSet::new();
    for dep in kb.swdependency() {
        let apptypes: BTreeSet<&str> =
            kb.packages().iter().filter(|p| p.app_id == dep.id).map(|p| p.apptype.as_str()).collect();
        for os in kb.os_pkg_mgr() {
            for t in &apptypes {
                out.insert((dep.app_name.clone(), t.to_string(), os.os_type.clone(), os.os_version.clone()));
            }
        }
    }
    out.into_iter().collect()
}

// ------------------------------------------------------- ordering oracles

/// Ordering constraints a deployment of `t` must honour, read straight from
/// the topology: each hosted component's chain and Start(b) < Start(a) for
/// every `a connectsTo b`.
pub fn deploy_constraints(t: &Topology) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for r in t.edges_of_kind(RelationKind::HostedOn) {
        let (c, p) = (&r.source, &r.target);
        let predeployed = t.platform(p).map(|p| p.provider == Provider::PreDeployed).unwrap_or(false);
        if !predeployed {
            out.push((format!("provision:{p}"), format!("wait_ssh:{p}")));
        }
        out.push((format!("wait_ssh:{p}"), format!("configure:{c}")));
        out.push((format!("configure:{c}"), format!("start:{c}")));
    }
    for r in t.edges_of_kind(RelationKind::ConnectsTo) {
        out.push((format!("start:{}", r.target), format!("start:{}", r.source)));
    }
    out
}

pub fn expected_deploy_steps(t: &Topology) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for r in t.edges_of_kind(RelationKind::HostedOn) {
        let p = t.platform(&r.target).expect("hosted on a platform");
        if p.provider != Provider::PreDeployed {
            out.insert(format!("provision:{}", p.id));
        }
        out.insert(format!("wait_ssh:{}", p.id));
        out.insert(format!("configure:{}", r.source));
        out.insert(format!("start:{}", r.source));
    }
    out
}

fn predecessor_masks(plan: &Plan) -> (Vec<String>, Vec<u64>) {
    let ids: Vec<String> = plan.steps().iter().map(|s| s.id.clone()).collect();
    assert!(ids.len() <= 64, "too many steps for the exhaustive oracle");
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut preds = vec![0u64; ids.len()];
    for e in plan.edges() {
        preds[index[e.after.as_str()]] |= 1 << index[e.before.as_str()];
    }
    (ids, preds)
}

/// Number of linearizations, or `None` when it exceeds `cap` or the plan is
/// too large to count.
pub fn count_linearizations(plan: &Plan, cap: u128) -> Option<u128> {
    let (ids, preds) = predecessor_masks(plan);
    let n = ids.len();
    if n > 22 {
        return None;
    }
    let mut ways = vec![0u128; 1 << n];
    ways[0] = 1;
    for mask in 0..(1usize << n) {
        let w = ways[mask];
        if w == 0 {
            continue;
        }
        for (i, p) in preds.iter().enumerate() {
            if mask & (1 << i) == 0 && (*p as usize) & !mask == 0 {
                ways[mask | (1 << i)] = ways[mask | (1 << i)].saturating_add(w);
            }
        }
    }
    let total = ways[(1 << n) - 1];
    (total <= cap).then_some(total)
}

/// Calls `visit` with every topological order of the plan.
pub fn for_each_linearization(plan: &Plan, visit: &mut dyn FnMut(&[&str])) {
    let (ids, preds) = predecessor_masks(plan);
    fn go<'a>(ids: &'a [String], preds: &[u64], done: u64, order: &mut Vec<&'a str>, visit: &mut dyn FnMut(&[&str])) {
        if order.len() == ids.len() {
            visit(order);
            return;
        }
        for i in 0..ids.len() {
            if done & (1 << i) == 0 && preds[i] & !done == 0 {
                order.push(&ids[i]);
                go(ids, preds, done | (1 << i), order, visit);
                order.pop();
            }
        }
    }
    go(&ids, &preds, 0, &mut Vec::new(), visit);
}

/// Constraints broken by one linearization.
pub fn broken<'a>(order: &[&str], constraints: &'a [(String, String)]) -> Vec<&'a (String, String)> {
    let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    constraints
        .iter()
        .filter(|(a, b)| match (pos.get(a.as_str()), pos.get(b.as_str())) {
            (Some(x), Some(y)) => x >= y,
            _ => true,
        })
        .collect()
}

// --------------------------------------------------- validator injections

/// The nine structural rule classes and the code each one must produce.
pub const RULE_CLASSES: [(&str, &str); 9] = [
    ("webengine", "E_UNIQUE_WEBENGINE"),
    ("dbengine", "E_UNIQUE_DBENGINE"),
    ("image_name", "E_UNIQUE_IMAGE_NAME"),
    ("process_engine", "E_PROCESS_ENGINE"),
    ("migrate_without_delete", "E_MIGRATE_NEEDS_DELETE"),
    ("endpoint_kind", "E_ENDPOINT_KIND"),
    ("hosting", "E_UNIQUE_HOSTING"),
    ("connects_cycle", "E_CONNECTS_CYCLE"),
    ("provider_binding", "E_PROVIDER_BINDING"),
];

fn vm(id: &str, provider: Provider) -> PlatformNode {
    let mut p = PlatformNode::new(id, provider, OsType::Ubuntu, "16.04");
    p.image_name = Some("ubuntu-16.04".into());
    p.flavor = Some("m1.small".into());
    p
}

fn db(id: &str) -> ComponentNode {
    ComponentNode::new(id, ComponentKind::Database).with_attr("dbengine", "mysql")
}

fn hosted(t: &mut Topology, c: ComponentNode, p: PlatformNode) {
    let (cid, pid) = (c.id.clone(), p.id.clone());
    t.add_component(c).unwrap();
    if t.platform(&pid).is_none() {
        t.add_platform(p).unwrap();
    }
    t.add_relationship(Relationship::new(RelationKind::HostedOn, &cid, &pid)).unwrap();
}

/// Adds fresh nodes to `t` that break exactly one rule of `class`; `tag`
/// keeps ids unique across injections.
pub fn inject(t: &mut Topology, class: &str, tag: usize) {
    let id = |what: &str| format!("v{tag}_{what}");
    match class {
        "webengine" => hosted(t, ComponentNode::new(id("web"), ComponentKind::Web), vm(&id("vm"), Provider::Amazon)),
        "dbengine" => hosted(t, ComponentNode::new(id("db"), ComponentKind::Database), vm(&id("vm"), Provider::Amazon)),
        "image_name" => {
            let mut p = vm(&id("vm"), Provider::OpenStack);
            p.image_name = None;
            t.add_platform(p).unwrap();
        }
        "process_engine" => hosted(
            t,
            ComponentNode::new(id("etl"), ComponentKind::DataAnalytics).with_attr("language", "python"),
            vm(&id("vm"), Provider::Amazon),
        ),
        "migrate_without_delete" => {
            hosted(t, db(&id("db")), vm(&id("old"), Provider::OpenStack));
            t.add_platform(vm(&id("new"), Provider::OpenStack)).unwrap();
            t.add_relationship(Relationship::migrate(&id("db"), &id("new"), MigrationType::Stateless)).unwrap();
        }
        "endpoint_kind" => {
            hosted(t, db(&id("db")), vm(&id("vm"), Provider::Amazon));
            t.add_relationship(Relationship::new(RelationKind::ConnectsTo, &id("db"), &id("vm"))).unwrap();
        }
        "hosting" => t.add_component(db(&id("db"))).unwrap(),
        "connects_cycle" => {
            hosted(t, db(&id("a")), vm(&id("vm"), Provider::Amazon));
            hosted(t, db(&id("b")), vm(&id("vm"), Provider::Amazon));
            t.add_relationship(Relationship::new(RelationKind::ConnectsTo, &id("a"), &id("b"))).unwrap();
            t.add_relationship(Relationship::new(RelationKind::ConnectsTo, &id("b"), &id("a"))).unwrap();
        }
        "provider_binding" => {
            let producer = ComponentNode::new(id("ingest"), ComponentKind::Web)
                .with_attr("webengine", "apache")
                .with_attr("stream", "kinesis_stream");
            hosted(t, producer, vm(&id("aws"), Provider::Amazon));
            hosted(t, db(&id("sink")), vm(&id("os"), Provider::OpenStack));
            t.add_relationship(Relationship::new(RelationKind::ConnectsTo, &id("ingest"), &id("sink"))).unwrap();
        }
        other => panic!("unknown rule class {other}"),
    }
}

// ----------------------------------------------------------- file trees

/// Relative path → bytes for every file under `dir`.
pub fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn tree_hash(tree: &BTreeMap<String, Vec<u8>>) -> String {
    let mut h = Sha256::new();
    for (path, bytes) in tree {
        h.update((path.len() as u64).to_le_bytes());
        h.update(path.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Paths whose contents differ, including files present on one side only.
pub fn changed_paths(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> BTreeSet<String> {
    a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}
