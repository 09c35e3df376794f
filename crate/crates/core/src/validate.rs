//! Constraint checking for topologies before anything is generated.
//!
//! `validate` never stops at the first problem; it returns every violation,
//! sorted by subject then code.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::model::{ComponentKind, ComponentNode, Provider, RelationKind, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

/// The closed set of diagnostic codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Code {
    /// Web component without a `webengine`.
    UniqueWebEngine,
    /// Database component without a `dbengine`.
    UniqueDbEngine,
    /// OpenStack platform without an `image_name`.
    UniqueImageName,
    /// Data-analytics component without a `process_engine`.
    ProcessEngine,
    /// `migrateTo` with no `deleteFrom` from the same component.
    MigrateNeedsDelete,
    /// Relationship endpoints of the wrong node kind.
    EndpointKind,
    /// Deployed component with zero or several `hostedOn` edges.
    UniqueHosting,
    /// Cycle in the `connectsTo` graph.
    ConnectsCycle,
    /// Provider-compatibility rule violated.
    ProviderBinding,
    /// Component kind with no built-in constraints.
    UnknownKind,
}

impl Code {
    pub const ALL: [Code; 10] = [
        Code::UniqueWebEngine,
        Code::UniqueDbEngine,
        Code::UniqueImageName,
        Code::ProcessEngine,
        Code::MigrateNeedsDelete,
        Code::EndpointKind,
        Code::UniqueHosting,
        Code::ConnectsCycle,
        Code::ProviderBinding,
        Code::UnknownKind,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Code::UniqueWebEngine => "E_UNIQUE_WEBENGINE",
            Code::UniqueDbEngine => "E_UNIQUE_DBENGINE",
            Code::UniqueImageName => "E_UNIQUE_IMAGE_NAME",
            Code::ProcessEngine => "E_PROCESS_ENGINE",
            Code::MigrateNeedsDelete => "E_MIGRATE_NEEDS_DELETE",
            Code::EndpointKind => "E_ENDPOINT_KIND",
            Code::UniqueHosting => "E_UNIQUE_HOSTING",
            Code::ConnectsCycle => "E_CONNECTS_CYCLE",
            Code::ProviderBinding => "E_PROVIDER_BINDING",
            Code::UnknownKind => "W_UNKNOWN_KIND",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            Code::UnknownKind => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Code {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: Code,
    pub severity: Severity,
    /// A node id, or a relationship label such as `web connectsTo db`.
    pub subject: String,
    pub message: String,
}

impl Diagnostic {
    fn new(code: Code, subject: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic { code, severity: code.severity(), subject: subject.into(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}: {}", self.severity, self.code, self.subject, self.message)
    }
}

/// `bind <attribute-value> to <provider>`: a component carrying that value
/// may only connect to components hosted on `provider`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderBinding {
    pub value: String,
    pub provider: Provider,
}

/// Built-in structural rules plus data-driven compatibility rules.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    pub bindings: Vec<ProviderBinding>,
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RuleSet {
    /// Only the built-in rules.
    pub fn builtin() -> Self {
        Self::default()
    }

    pub fn parse_named(file: &str, text: &str) -> Result<Self, RuleError> {
        let mut rules = RuleSet::builtin();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| RuleError::Parse { file: file.to_string(), line: idx + 1, message };
            match line.split_whitespace().collect::<Vec<_>>().as_slice() {
                ["bind", value, "to", provider] => {
                    let provider = Provider::from_str(provider).map_err(|e| err(e.to_string()))?;
                    rules.bindings.push(ProviderBinding { value: value.to_string(), provider });
                }
                _ => return Err(err(format!("expected `bind <value> to <provider>`, found `{line}`"))),
            }
        }
        Ok(rules)
    }

    /// The provider a component is bound to, either through an explicit
    /// `provider_bound` attribute or a `bind` rule matching one of its
    /// attribute values.
    fn binding_for(&self, c: &ComponentNode) -> Option<Result<Provider, String>> {
        if let Some(p) = c.attr("provider_bound") {
            return Some(Provider::from_str(p).map_err(|_| p.to_string()));
        }
        self.bindings
            .iter()
            .find(|b| c.attributes.values().any(|v| *v == b.value))
            .map(|b| Ok(b.provider))
    }
}

impl FromStr for RuleSet {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RuleSet::parse_named("<rules>", s)
    }
}

pub fn rule_set_from_file(path: &Path) -> Result<RuleSet, RuleError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| RuleError::Io { path: path.display().to_string(), source })?;
    RuleSet::parse_named(&path.display().to_string(), &text)
}

fn has_value(c: &ComponentNode, key: &str) -> bool {
    c.attr(key).is_some_and(|v| !v.trim().is_empty())
}

/// Checks every rule and returns all violations.
pub fn validate(topology: &Topology, rules: &RuleSet) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    check_attributes(topology, &mut out);
    check_endpoints(topology, &mut out);
    check_migrations(topology, &mut out);
    check_hosting(topology, &mut out);
    check_cycles(topology, &mut out);
    check_bindings(topology, rules, &mut out);
    out.sort_by(|a, b| (&a.subject, a.code.as_str(), &a.message).cmp(&(&b.subject, b.code.as_str(), &b.message)));
    out
}

/// True when no diagnostic is an error.
pub fn is_deployable(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().all(|d| d.severity != Severity::Error)
}

fn check_attributes(t: &Topology, out: &mut Vec<Diagnostic>) {
    for c in t.components() {
        match &c.kind {
            ComponentKind::Web if !has_value(c, "webengine") => {
                out.push(Diagnostic::new(Code::UniqueWebEngine, &c.id, "web component needs exactly one `webengine`"))
            }
            ComponentKind::Database if !has_value(c, "dbengine") => out.push(Diagnostic::new(
                Code::UniqueDbEngine,
                &c.id,
                "database component needs exactly one `dbengine`",
            )),
            ComponentKind::DataAnalytics if !has_value(c, "process_engine") => out.push(Diagnostic::new(
                Code::ProcessEngine,
                &c.id,
                "data-analytics component needs a `process_engine`",
            )),
            ComponentKind::Other(kind) => out.push(Diagnostic::new(
                Code::UnknownKind,
                &c.id,
                format!("component kind `{kind}` has no built-in constraints"),
            )),
            _ => {}
        }
    }
    for p in t.platforms() {
        if p.provider == Provider::OpenStack && p.image_name.as_deref().is_none_or(|v| v.trim().is_empty()) {
            out.push(Diagnostic::new(Code::UniqueImageName, &p.id, "openstack platform needs exactly one `image_name`"));
        }
    }
}

fn check_endpoints(t: &Topology, out: &mut Vec<Diagnostic>) {
    for r in t.relationships() {
        let source_ok = t.component(&r.source).is_some();
        let target_ok =
            if r.kind.targets_platform() { t.platform(&r.target).is_some() } else { t.component(&r.target).is_some() };
        if !source_ok || !target_ok {
            let want = if r.kind.targets_platform() { "component -> platform" } else { "component -> component" };
            out.push(Diagnostic::new(Code::EndpointKind, r.label(), format!("`{}` must connect {want}", r.kind.verb())));
        }
    }
}

fn check_migrations(t: &Topology, out: &mut Vec<Diagnostic>) {
    for r in t.edges_of_kind(RelationKind::MigrateTo) {
        if !t.is_removed(&r.source) {
            out.push(Diagnostic::new(
                Code::MigrateNeedsDelete,
                r.label(),
                format!("`{}` is migrated but has no `deleteFrom` relationship", r.source),
            ));
        }
    }
}

fn check_hosting(t: &Topology, out: &mut Vec<Diagnostic>) {
    for c in t.components() {
        let hosts: Vec<&str> = t
            .edges_from(&c.id, RelationKind::HostedOn)
            .filter(|r| t.platform(&r.target).is_some())
            .map(|r| r.target.as_str())
            .collect();
        match hosts.len() {
            // Components being removed or migrated are placed by their
            // deleteFrom/migrateTo edges instead.
            0 if t.is_removed(&c.id) => {}
            0 => out.push(Diagnostic::new(Code::UniqueHosting, &c.id, "component is not hosted on any platform")),
            1 => {}
            _ => out.push(Diagnostic::new(
                Code::UniqueHosting,
                &c.id,
                format!("component is hosted on several platforms: {}", hosts.join(", ")),
            )),
        }
    }
}

/// Component-to-component connectsTo adjacency, ignoring malformed edges.
pub(crate) fn connects_graph(t: &Topology) -> BTreeMap<&str, BTreeSet<&str>> {
    let mut g: BTreeMap<&str, BTreeSet<&str>> = t.components().map(|c| (c.id.as_str(), BTreeSet::new())).collect();
    for r in t.edges_of_kind(RelationKind::ConnectsTo) {
        if t.component(&r.source).is_some() && t.component(&r.target).is_some() {
            g.entry(r.source.as_str()).or_default().insert(r.target.as_str());
        }
    }
    g
}

/// Strongly connected components (Tarjan), each sorted, in discovery order.
fn strongly_connected<'a>(g: &BTreeMap<&'a str, BTreeSet<&'a str>>) -> Vec<Vec<&'a str>> {
    struct State<'a> {
        index: BTreeMap<&'a str, usize>,
        low: BTreeMap<&'a str, usize>,
        on_stack: BTreeSet<&'a str>,
        stack: Vec<&'a str>,
        next: usize,
        out: Vec<Vec<&'a str>>,
    }

    fn visit<'a>(v: &'a str, g: &BTreeMap<&'a str, BTreeSet<&'a str>>, s: &mut State<'a>) {
        s.index.insert(v, s.next);
        s.low.insert(v, s.next);
        s.next += 1;
        s.stack.push(v);
        s.on_stack.insert(v);
        for &w in g.get(v).into_iter().flatten() {
            if !s.index.contains_key(w) {
                visit(w, g, s);
                let lw = s.low[w];
                let lv = s.low.get_mut(v).expect("visited");
                *lv = (*lv).min(lw);
            } else if s.on_stack.contains(w) {
                let iw = s.index[w];
                let lv = s.low.get_mut(v).expect("visited");
                *lv = (*lv).min(iw);
            }
        }
        if s.low[v] == s.index[v] {
            let mut scc = Vec::new();
            while let Some(w) = s.stack.pop() {
                s.on_stack.remove(w);
                scc.push(w);
                if w == v {
                    break;
                }
            }
            scc.sort_unstable();
            s.out.push(scc);
        }
    }

    let mut s = State {
        index: BTreeMap::new(),
        low: BTreeMap::new(),
        on_stack: BTreeSet::new(),
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for &v in g.keys() {
        if !s.index.contains_key(v) {
            visit(v, g, &mut s);
        }
    }
    s.out
}

fn check_cycles(t: &Topology, out: &mut Vec<Diagnostic>) {
    let g = connects_graph(t);
    for scc in strongly_connected(&g) {
        let cyclic = scc.len() > 1 || g.get(scc[0]).is_some_and(|succ| succ.contains(scc[0]));
        if cyclic {
            out.push(Diagnostic::new(
                Code::ConnectsCycle,
                scc[0],
                format!("connectsTo cycle through {}", scc.join(", ")),
            ));
        }
    }
}

fn check_bindings(t: &Topology, rules: &RuleSet, out: &mut Vec<Diagnostic>) {
    for c in t.components() {
        let provider = match rules.binding_for(c) {
            None => continue,
            Some(Ok(p)) => p,
            Some(Err(bad)) => {
                out.push(Diagnostic::new(Code::ProviderBinding, &c.id, format!("unknown provider `{bad}` in `provider_bound`")));
                continue;
            }
        };
        for r in t.edges_from(&c.id, RelationKind::ConnectsTo) {
            let Ok(Some(host)) = t.hosting_platform(&r.target) else { continue };
            if host.provider != provider {
                out.push(Diagnostic::new(
                    Code::ProviderBinding,
                    r.label(),
                    format!(
                        "`{}` is bound to {provider} but `{}` is hosted on {} ({})",
                        c.id, r.target, host.id, host.provider
                    ),
                ));
            }
        }
    }
}
