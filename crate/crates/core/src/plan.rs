//! Execution plans: DAGs of provisioning, configuration and migration steps.
//!
//! A step id is `<action>:<subject>`, e.g. `start:mysql_db`. Two steps with no
//! path between them may run concurrently.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iac::{playbook_path, provision_path, teardown_path, IacBundle};
use crate::model::{MigrationType, Provider, RelationKind, Topology, UnknownVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Provision,
    WaitSsh,
    Configure,
    Start,
    Terminate,
    Checkpoint,
    Restore,
    AttachLb,
    DetachLb,
    Redirect,
}

impl Action {
    pub const ALL: [Action; 10] = [
        Action::Provision,
        Action::WaitSsh,
        Action::Configure,
        Action::Start,
        Action::Terminate,
        Action::Checkpoint,
        Action::Restore,
        Action::AttachLb,
        Action::DetachLb,
        Action::Redirect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Provision => "provision",
            Action::WaitSsh => "wait_ssh",
            Action::Configure => "configure",
            Action::Start => "start",
            Action::Terminate => "terminate",
            Action::Checkpoint => "checkpoint",
            Action::Restore => "restore",
            Action::AttachLb => "attach_lb",
            Action::DetachLb => "detach_lb",
            Action::Redirect => "redirect",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| UnknownVariant { what: "action", value: s.to_string() })
    }
}

pub fn step_id(action: Action, subject: &str) -> String {
    format!("{action}:{subject}")
}

/// Name of the load-balancer pseudo-node fronting a stateful migration.
pub fn lb_node(component: &str) -> String {
    format!("lb_{component}")
}

pub const HOOK_ATTACH_LB: &str = "hooks/attach_lb.sh";
pub const HOOK_DETACH_LB: &str = "hooks/detach_lb.sh";
pub const HOOK_REDIRECT: &str = "hooks/redirect.sh";
pub const HOOK_CHECKPOINT: &str = "hooks/checkpoint.sh";
pub const HOOK_RESTORE: &str = "hooks/restore.sh";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub id: String,
    pub action: Action,
    pub subject: String,
    /// Bundle document the step executes, `path` or `path#tag`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    /// Marks a step that already ran in an earlier deployment; it only
    /// anchors ordering edges.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub existing: bool,
}

impl Step {
    pub fn new(action: Action, subject: &str, payload: Option<String>) -> Self {
        Step { id: step_id(action, subject), action, subject: subject.to_string(), payload, existing: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan has a cycle through {0}")]
    Cyclic(String),
    #[error("edge {before} -> {after} names an unknown step")]
    DanglingEdge { before: String, after: String },
    #[error("duplicate step {0}")]
    DuplicateStep(String),
    #[error("component `{0}` migrates without a deleteFrom edge")]
    NoMigrationPair(String),
    #[error("unsupported delta: {0}")]
    UnsupportedDelta(String),
    #[error("invalid plan document: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    steps: Vec<Step>,
    edges: BTreeSet<Edge>,
}

impl Plan {
    pub fn new() -> Self {
        Plan::default()
    }

    /// Builds a plan from parts, rejecting duplicates, dangling edges and cycles.
    pub fn from_parts(steps: Vec<Step>, edges: impl IntoIterator<Item = Edge>) -> Result<Self, PlanError> {
        let mut plan = Plan::new();
        for s in steps {
            if plan.step(&s.id).is_some() {
                return Err(PlanError::DuplicateStep(s.id));
            }
            plan.steps.push(s);
        }
        for e in edges {
            if plan.step(&e.before).is_none() || plan.step(&e.after).is_none() {
                return Err(PlanError::DanglingEdge { before: e.before, after: e.after });
            }
            plan.edges.insert(e);
        }
        plan.topological_order()?;
        Ok(plan)
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, id: &str) -> Option<&Step> {
        self.steps.iter().find(|s| s.id == id)
    }

    fn push(&mut self, step: Step) -> String {
        let id = step.id.clone();
        if self.step(&id).is_none() {
            self.steps.push(step);
        }
        id
    }

    fn link(&mut self, before: &str, after: &str) {
        self.edges.insert(Edge { before: before.to_string(), after: after.to_string() });
    }

    fn chain(&mut self, ids: &[String]) {
        for w in ids.windows(2) {
            self.link(&w[0], &w[1]);
        }
    }

    pub fn has_edge(&self, before: &str, after: &str) -> bool {
        self.edges.contains(&Edge { before: before.to_string(), after: after.to_string() })
    }

    pub fn predecessors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter(move |e| e.after == id).map(|e| e.before.as_str())
    }

    pub fn successors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter(move |e| e.before == id).map(|e| e.after.as_str())
    }

    /// Steps reachable from `id` along edges, excluding `id`.
    pub fn descendants(&self, id: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([id.to_string()]);
        while let Some(cur) = queue.pop_front() {
            for s in self.successors(&cur) {
                if seen.insert(s.to_string()) {
                    queue.push_back(s.to_string());
                }
            }
        }
        seen
    }

    /// True when some path leads from `a` to `b` or from `b` to `a`.
    pub fn ordered(&self, a: &str, b: &str) -> bool {
        self.descendants(a).contains(b) || self.descendants(b).contains(a)
    }

    /// Kahn's algorithm, lowest id first among ready steps.
    pub fn topological_order(&self) -> Result<Vec<&str>, PlanError> {
        let mut indegree: BTreeMap<&str, usize> = self.steps.iter().map(|s| (s.id.as_str(), 0)).collect();
        for e in &self.edges {
            *indegree.get_mut(e.after.as_str()).expect("edge endpoints exist") += 1;
        }
        let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
        let mut order = Vec::with_capacity(self.steps.len());
        while let Some(id) = ready.pop_first() {
            order.push(id);
            for e in self.edges.iter().filter(|e| e.before == id) {
                let d = indegree.get_mut(e.after.as_str()).expect("edge endpoints exist");
                *d -= 1;
                if *d == 0 {
                    ready.insert(e.after.as_str());
                }
            }
        }
        if order.len() < self.steps.len() {
            let stuck = indegree.keys().find(|id| !order.contains(id)).expect("some step is on a cycle");
            return Err(PlanError::Cyclic(stuck.to_string()));
        }
        Ok(order)
    }

    /// Nodes of the topology the plan acts on (platforms, components, LB pseudo-nodes).
    pub fn subjects(&self) -> BTreeSet<&str> {
        self.steps.iter().map(|s| s.subject.as_str()).collect()
    }

    /// Adds another plan's steps and edges. Steps with the same id are
    /// merged; a step is existing only if it is existing in both.
    pub fn merge(&mut self, other: &Plan) {
        for s in &other.steps {
            match self.steps.iter_mut().find(|x| x.id == s.id) {
                Some(x) => x.existing &= s.existing,
                None => self.steps.push(s.clone()),
            }
        }
        self.edges.extend(other.edges.iter().cloned());
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let raw: Plan = serde_json::from_str(text).map_err(|e| PlanError::Format(e.to_string()))?;
        Plan::from_parts(raw.steps, raw.edges)
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph plan {\n  rankdir=LR;\n  node [shape=box];\n");
        for step in &self.steps {
            let style = if step.existing { ", style=dashed" } else { "" };
            s += &format!("  \"{}\" [label=\"{}\\n{}\"{style}];\n", step.id, step.action, step.subject);
        }
        for e in &self.edges {
            s += &format!("  \"{}\" -> \"{}\";\n", e.before, e.after);
        }
        s += "}\n";
        s
    }
}

fn configure_payload(component: &str) -> Option<String> {
    Some(format!("{}#configure", playbook_path(component)))
}

fn start_payload(component: &str) -> Option<String> {
    Some(format!("{}#start", playbook_path(component)))
}

/// Adds Provision → WaitSsh for `platform` (no Provision for pre-deployed
/// hosts) and returns the id of the step after which the host is usable.
fn host_ready(plan: &mut Plan, topology: &Topology, platform: &str, bundle: Option<&IacBundle>) -> String {
    let predeployed = topology.platform(platform).is_some_and(|p| p.provider == Provider::PreDeployed);
    let prov = (!predeployed).then(|| {
        let payload = match bundle {
            Some(b) if !b.provision_scripts.contains_key(platform) => None,
            _ => Some(provision_path(platform)),
        };
        plan.push(Step::new(Action::Provision, platform, payload))
    });
    let wait = plan.push(Step::new(Action::WaitSsh, platform, None));
    if let Some(prov) = prov {
        plan.link(&prov, &wait);
    }
    wait
}

/// Adds Configure → Start for a component hosted on `platform` and returns
/// `(first, start)` step ids of its chain.
fn deploy_component(plan: &mut Plan, topology: &Topology, component: &str, platform: &str, bundle: Option<&IacBundle>) -> (String, String) {
    let wait = host_ready(plan, topology, platform, bundle);
    let configure = plan.push(Step::new(Action::Configure, component, configure_payload(component)));
    let start = plan.push(Step::new(Action::Start, component, start_payload(component)));
    plan.chain(&[wait.clone(), configure, start.clone()]);
    let first = step_id(Action::Provision, platform);
    let first = if plan.step(&first).is_some() { first } else { wait };
    (first, start)
}

/// The deployment plan of every component that has a playbook in `bundle`:
/// Provision → WaitSsh → Configure → Start per host chain, plus
/// Start(b) → Start(a) for every `a connectsTo b`.
pub fn plan_deploy(topology: &Topology, bundle: &IacBundle) -> Plan {
    let mut plan = Plan::new();
    let mut deployed = BTreeSet::new();
    for c in topology.components() {
        if !bundle.playbooks.contains_key(&c.id) {
            continue;
        }
        if let Ok(Some(p)) = topology.placement(&c.id) {
            deploy_component(&mut plan, topology, &c.id, &p.id, Some(bundle));
            deployed.insert(c.id.as_str());
        }
    }
    for r in topology.edges_of_kind(RelationKind::ConnectsTo) {
        if deployed.contains(r.source.as_str()) && deployed.contains(r.target.as_str()) {
            plan.link(&step_id(Action::Start, &r.target), &step_id(Action::Start, &r.source));
        }
    }
    debug_assert!(plan.topological_order().is_ok());
    plan
}

/// The migration plan for every component with a migrateTo edge.
///
/// Stateless: the new host chain and Terminate(old) are independent.
/// Stateful: AttachLb → new host chain → Redirect → Checkpoint → Restore →
/// (Terminate(old) ∥ DetachLb). Old platforms are only terminated when no
/// remaining component is hosted on them.
pub fn plan_migrate(topology: &Topology, bundle: &IacBundle) -> Result<Plan, PlanError> {
    let mut plan = Plan::new();
    let retired = topology.retired_platforms();
    let mut migrating = BTreeSet::new();
    for m in topology.edges_of_kind(RelationKind::MigrateTo) {
        let c = m.source.as_str();
        let old: Vec<&str> = topology.edges_from(c, RelationKind::DeleteFrom).map(|r| r.target.as_str()).collect();
        if old.is_empty() {
            return Err(PlanError::NoMigrationPair(c.to_string()));
        }
        migrating.insert(c);
        let (first, start) = deploy_component(&mut plan, topology, c, &m.target, Some(bundle));
        let terminates: Vec<String> = old
            .iter()
            .filter(|p| retired.contains(**p))
            .map(|p| plan.push(Step::new(Action::Terminate, p, Some(teardown_path(p)))))
            .collect();
        if m.migration_type == Some(MigrationType::Stateful) {
            let lb = lb_node(c);
            let attach = plan.push(Step::new(Action::AttachLb, &lb, Some(HOOK_ATTACH_LB.into())));
            let redirect = plan.push(Step::new(Action::Redirect, c, Some(HOOK_REDIRECT.into())));
            let checkpoint = plan.push(Step::new(Action::Checkpoint, c, Some(HOOK_CHECKPOINT.into())));
            let restore = plan.push(Step::new(Action::Restore, c, Some(HOOK_RESTORE.into())));
            let detach = plan.push(Step::new(Action::DetachLb, &lb, Some(HOOK_DETACH_LB.into())));
            plan.link(&attach, &first);
            plan.chain(&[start, redirect, checkpoint, restore.clone(), detach]);
            for t in &terminates {
                plan.link(&restore, t);
            }
        }
    }
    for r in topology.edges_of_kind(RelationKind::ConnectsTo) {
        if migrating.contains(r.source.as_str()) && migrating.contains(r.target.as_str()) {
            plan.link(&step_id(Action::Start, &r.target), &step_id(Action::Start, &r.source));
        }
    }
    plan.topological_order()?;
    Ok(plan)
}

fn check_delta(old: &Topology, new: &Topology) -> Result<(), PlanError> {
    let unsupported = |m: String| Err(PlanError::UnsupportedDelta(m));
    for c in old.components() {
        match new.component(&c.id) {
            None => return unsupported(format!("component `{}` was removed; use deleteFrom", c.id)),
            Some(n) if n != c => return unsupported(format!("component `{}` changed in place", c.id)),
            _ => {}
        }
    }
    for p in old.platforms() {
        match new.platform(&p.id) {
            None => return unsupported(format!("platform `{}` was removed; use deleteFrom", p.id)),
            Some(n) if n != p => return unsupported(format!("platform `{}` changed in place", p.id)),
            _ => {}
        }
    }
    for r in old.relationships() {
        if !new.relationships().contains(r) {
            return unsupported(format!("relationship `{}` was removed", r.label()));
        }
    }
    for r in new.relationships() {
        if matches!(r.kind, RelationKind::DeleteFrom | RelationKind::MigrateTo) && !old.relationships().contains(r) {
            return unsupported(format!("relationship `{}` is a migration; plan it with --migrate", r.label()));
        }
    }
    Ok(())
}

fn deploy_shape(topology: &Topology) -> Plan {
    let mut plan = Plan::new();
    let mut deployed = BTreeSet::new();
    for c in topology.components() {
        if topology.is_removed(&c.id) && topology.edges_from(&c.id, RelationKind::MigrateTo).next().is_none() {
            continue;
        }
        if let Ok(Some(p)) = topology.placement(&c.id) {
            deploy_component(&mut plan, topology, &c.id, &p.id, None);
            deployed.insert(c.id.as_str());
        }
    }
    for r in topology.edges_of_kind(RelationKind::ConnectsTo) {
        if deployed.contains(r.source.as_str()) && deployed.contains(r.target.as_str()) {
            plan.link(&step_id(Action::Start, &r.target), &step_id(Action::Start, &r.source));
        }
    }
    plan
}

/// The plan that takes a running `old` deployment to `new`, where `new` only
/// adds nodes and edges. Steps of `old` that new edges hang off appear as
/// existing markers with their original ids.
pub fn plan_delta(old: &Topology, new: &Topology) -> Result<Plan, PlanError> {
    check_delta(old, new)?;
    let before = deploy_shape(old);
    let after = deploy_shape(new);
    let edges: Vec<Edge> = after.edges.iter().filter(|e| !before.edges.contains(*e)).cloned().collect();
    let mut plan = Plan::new();
    for s in &after.steps {
        let is_old = before.step(&s.id).is_some();
        let touched = edges.iter().any(|e| e.before == s.id || e.after == s.id);
        if !is_old || touched {
            plan.steps.push(Step { existing: is_old, ..s.clone() });
        }
    }
    plan.edges.extend(edges);
    plan.topological_order()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;

    const LAMP: &str = "
        platform openstack_vm { provider = openstack; os = ubuntu 16.04; image_name = img; flavor = m1.small; }
        platform ec2_vm { provider = amazon; os = ubuntu 14.04; image_name = ami; flavor = t2.micro; }
        component php_frontend { kind = web; webengine = apache; language = php; }
        component mysql_db { kind = database; dbengine = mysql; db_user = app; db_root_pass = pw; }
        php_frontend hostedOn openstack_vm;
        mysql_db hostedOn ec2_vm;
        php_frontend connectsTo mysql_db;
    ";

    fn bundle_for(t: &Topology) -> IacBundle {
        let mut b = IacBundle::default();
        for c in t.components() {
            b.playbooks.insert(c.id.clone(), crate::iac::Playbook { plays: vec![] });
        }
        for p in t.platforms() {
            b.provision_scripts.insert(p.id.clone(), String::new());
        }
        b
    }

    #[test]
    fn lamp_start_order() {
        let t = parse(LAMP).unwrap();
        let plan = plan_deploy(&t, &bundle_for(&t));
        assert_eq!(plan.len(), 8);
        assert!(plan.has_edge("start:mysql_db", "start:php_frontend"));
        assert!(!plan.ordered("configure:mysql_db", "configure:php_frontend"));
        assert_eq!(plan.step("configure:mysql_db").unwrap().payload.as_deref(), Some("playbooks/mysql_db.yml#configure"));
    }

    #[test]
    fn single_component_is_a_four_step_chain() {
        let t = parse(
            "platform p { provider = openstack; os = ubuntu 16.04; image_name = i; flavor = f; }
             component db { kind = database; dbengine = mysql; }
             db hostedOn p;",
        )
        .unwrap();
        let plan = plan_deploy(&t, &bundle_for(&t));
        assert_eq!(plan.topological_order().unwrap(), vec!["provision:p", "wait_ssh:p", "configure:db", "start:db"]);
        assert_eq!(plan.edges().len(), 3);
    }

    #[test]
    fn shared_platform_is_provisioned_once() {
        let t = parse(
            "platform p { provider = openstack; os = ubuntu 16.04; image_name = i; flavor = f; }
             component a { kind = database; dbengine = mysql; }
             component b { kind = database; dbengine = mysql; }
             a hostedOn p; b hostedOn p;",
        )
        .unwrap();
        let plan = plan_deploy(&t, &bundle_for(&t));
        assert_eq!(plan.steps().iter().filter(|s| s.action == Action::Provision).count(), 1);
        assert!(!plan.ordered("start:a", "start:b"));
    }

    #[test]
    fn json_and_dot() {
        let t = parse(LAMP).unwrap();
        let plan = plan_deploy(&t, &bundle_for(&t));
        let json = plan.to_json();
        assert!(json.contains("\"before\": \"start:mysql_db\""));
        assert_eq!(Plan::from_json(&json).unwrap(), plan);
        assert!(plan.to_dot().contains("\"start:mysql_db\" -> \"start:php_frontend\";"));
    }

    #[test]
    fn cycles_and_dangling_edges_are_rejected() {
        let a = Step::new(Action::Start, "a", None);
        let b = Step::new(Action::Start, "b", None);
        let e = |x: &str, y: &str| Edge { before: x.into(), after: y.into() };
        let err = Plan::from_parts(vec![a.clone(), b.clone()], [e("start:a", "start:b"), e("start:b", "start:a")]);
        assert!(matches!(err, Err(PlanError::Cyclic(_))));
        let err = Plan::from_parts(vec![a], [e("start:a", "start:zz")]);
        assert!(matches!(err, Err(PlanError::DanglingEdge { .. })));
    }

    const MIGRATION: &str = "
        platform openstack_a { provider = openstack; os = ubuntu 16.04; image_name = i; flavor = f; }
        platform openstack_b { provider = openstack; os = ubuntu 16.04; image_name = i; flavor = f; }
        component mysql_db { kind = database; dbengine = mysql; }
        mysql_db deleteFrom openstack_a;
        mysql_db migrateTo openstack_b with migration = stateful;
    ";

    #[test]
    fn stateful_migration_shape() {
        let t = parse(MIGRATION).unwrap();
        let plan = plan_migrate(&t, &bundle_for(&t)).unwrap();
        let order = plan.topological_order().unwrap();
        let pos = |id: &str| order.iter().position(|x| *x == id).unwrap();
        assert!(pos("attach_lb:lb_mysql_db") < pos("provision:openstack_b"));
        assert!(pos("start:mysql_db") < pos("redirect:mysql_db"));
        assert!(pos("checkpoint:mysql_db") < pos("restore:mysql_db"));
        assert!(plan.descendants("checkpoint:mysql_db").contains("terminate:openstack_a"));
        assert!(!plan.ordered("terminate:openstack_a", "detach_lb:lb_mysql_db"));
        let subjects: Vec<&str> = plan.subjects().into_iter().collect();
        assert_eq!(subjects, vec!["lb_mysql_db", "mysql_db", "openstack_a", "openstack_b"]);
    }

    #[test]
    fn stateless_terminate_is_independent() {
        let t = parse(&MIGRATION.replace("stateful", "stateless")).unwrap();
        let plan = plan_migrate(&t, &bundle_for(&t)).unwrap();
        assert!(plan.edges().iter().all(|e| e.before != "terminate:openstack_a" && e.after != "terminate:openstack_a"));
        assert!(plan.step("attach_lb:lb_mysql_db").is_none());
    }

    #[test]
    fn shared_old_platform_is_not_terminated() {
        let text = format!(
            "{MIGRATION}
            component other {{ kind = database; dbengine = mysql; }}
            other hostedOn openstack_a;"
        );
        let t = parse(&text).unwrap();
        let plan = plan_migrate(&t, &bundle_for(&t)).unwrap();
        assert!(plan.step("terminate:openstack_a").is_none());
    }

    #[test]
    fn migrate_without_delete() {
        let mut t = parse(&MIGRATION.replace("mysql_db deleteFrom openstack_a;", "")).unwrap();
        let b = bundle_for(&t);
        assert_eq!(plan_migrate(&t, &b), Err(PlanError::NoMigrationPair("mysql_db".into())));
        t = Topology::new();
        assert!(plan_migrate(&t, &b).unwrap().is_empty());
    }

    #[test]
    fn delta_adds_only_the_new_database() {
        let old = parse(LAMP).unwrap();
        let new = parse(&format!(
            "{LAMP}
            platform ec2_b {{ provider = amazon; os = ubuntu 14.04; image_name = ami; flavor = t2.micro; }}
            component reports_db {{ kind = database; dbengine = mysql; }}
            reports_db hostedOn ec2_b;
            php_frontend connectsTo reports_db;"
        ))
        .unwrap();
        let delta = plan_delta(&old, &new).unwrap();
        let fresh: Vec<&str> = delta.steps().iter().filter(|s| !s.existing).map(|s| s.id.as_str()).collect();
        assert_eq!(fresh, vec!["provision:ec2_b", "wait_ssh:ec2_b", "configure:reports_db", "start:reports_db"]);
        let markers: Vec<&str> = delta.steps().iter().filter(|s| s.existing).map(|s| s.id.as_str()).collect();
        assert_eq!(markers, vec!["start:php_frontend"]);
        assert!(delta.has_edge("start:reports_db", "start:php_frontend"));
    }

    #[test]
    fn identical_delta_is_empty() {
        let t = parse(LAMP).unwrap();
        assert!(plan_delta(&t, &t).unwrap().is_empty());
    }

    #[test]
    fn in_place_change_is_unsupported() {
        let old = parse(LAMP).unwrap();
        let new = parse(&LAMP.replace("db_user = app", "db_user = other")).unwrap();
        assert!(matches!(plan_delta(&old, &new), Err(PlanError::UnsupportedDelta(m)) if m.contains("mysql_db")));
        assert!(matches!(plan_delta(&new, &Topology::new()), Err(PlanError::UnsupportedDelta(_))));
    }
}
