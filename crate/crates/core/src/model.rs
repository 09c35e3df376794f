//! In-memory topology graph: component nodes, platform nodes and the typed
//! relationships between them.
//!
//! A [`Topology`] is immutable once built by the parser. Every stage after
//! parsing (validation, generation, planning) borrows it read-only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = String;
pub type Attributes = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Web,
    Database,
    DataAnalytics,
    /// Kinds the tool does not know about yet. Accepted by the parser so new
    /// component types only need a template and KB rows.
    Other(String),
}

impl ComponentKind {
    pub fn as_str(&self) -> &str {
        match self {
            ComponentKind::Web => "web",
            ComponentKind::Database => "database",
            ComponentKind::DataAnalytics => "data_analytics",
            ComponentKind::Other(s) => s,
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComponentKind {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "web" => ComponentKind::Web,
            "database" => ComponentKind::Database,
            "data_analytics" => ComponentKind::DataAnalytics,
            other => ComponentKind::Other(other.to_string()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    OpenStack,
    Amazon,
    Azure,
    /// An existing machine reachable at a known address ("hardware").
    PreDeployed,
}

impl Provider {
    pub const ALL: [Provider; 4] = [
        Provider::OpenStack,
        Provider::Amazon,
        Provider::Azure,
        Provider::PreDeployed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provider::OpenStack => "openstack",
            Provider::Amazon => "amazon",
            Provider::Azure => "azure",
            Provider::PreDeployed => "predeployed",
        }
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provider {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "openstack" => Ok(Provider::OpenStack),
            "amazon" | "aws" => Ok(Provider::Amazon),
            "azure" => Ok(Provider::Azure),
            "predeployed" | "hardware" => Ok(Provider::PreDeployed),
            _ => Err(UnknownVariant { what: "provider", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OsType {
    Ubuntu,
    Redhat,
    Windows,
}

impl OsType {
    pub fn as_str(self) -> &'static str {
        match self {
            OsType::Ubuntu => "ubuntu",
            OsType::Redhat => "redhat",
            OsType::Windows => "windows",
        }
    }
}

impl fmt::Display for OsType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OsType {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ubuntu" => Ok(OsType::Ubuntu),
            "redhat" => Ok(OsType::Redhat),
            "windows" => Ok(OsType::Windows),
            _ => Err(UnknownVariant { what: "os type", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {what} `{value}`")]
pub struct UnknownVariant {
    pub what: &'static str,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    HostedOn,
    ConnectsTo,
    DeleteFrom,
    MigrateTo,
}

impl RelationKind {
    pub const ALL: [RelationKind; 4] = [
        RelationKind::HostedOn,
        RelationKind::ConnectsTo,
        RelationKind::DeleteFrom,
        RelationKind::MigrateTo,
    ];

    /// The DSL verb.
    pub fn verb(self) -> &'static str {
        match self {
            RelationKind::HostedOn => "hostedOn",
            RelationKind::ConnectsTo => "connectsTo",
            RelationKind::DeleteFrom => "deleteFrom",
            RelationKind::MigrateTo => "migrateTo",
        }
    }

    pub fn from_verb(verb: &str) -> Option<Self> {
        RelationKind::ALL.into_iter().find(|k| k.verb() == verb)
    }

    /// Whether the target must be a platform (the source is always a component).
    pub fn targets_platform(self) -> bool {
        !matches!(self, RelationKind::ConnectsTo)
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.verb())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationType {
    Stateless,
    Stateful,
}

impl MigrationType {
    pub fn as_str(self) -> &'static str {
        match self {
            MigrationType::Stateless => "stateless",
            MigrationType::Stateful => "stateful",
        }
    }
}

impl FromStr for MigrationType {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stateless" => Ok(MigrationType::Stateless),
            "stateful" => Ok(MigrationType::Stateful),
            _ => Err(UnknownVariant { what: "migration type", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentNode {
    pub id: NodeId,
    pub kind: ComponentKind,
    pub attributes: Attributes,
    /// Where the application artifact lives, e.g. a git URL.
    pub source_ref: Option<String>,
}

impl ComponentNode {
    pub fn new(id: impl Into<String>, kind: ComponentKind) -> Self {
        ComponentNode { id: id.into(), kind, attributes: Attributes::new(), source_ref: None }
    }

    pub fn with_attr(mut self, key: &str, value: &str) -> Self {
        self.attributes.insert(key.to_string(), value.to_string());
        self
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformNode {
    pub id: NodeId,
    pub provider: Provider,
    pub os_type: OsType,
    pub os_version: String,
    pub image_name: Option<String>,
    pub flavor: Option<String>,
    pub network: Option<String>,
    pub security_group: Option<String>,
    pub key_name: Option<String>,
    pub instance_count: u32,
    /// Present iff `provider` is [`Provider::PreDeployed`].
    pub address: Option<String>,
    /// Keys the model has no field for (`env_file`, `key_file`, `services`, ...).
    pub attributes: Attributes,
}

impl PlatformNode {
    pub fn new(id: impl Into<String>, provider: Provider, os_type: OsType, os_version: &str) -> Self {
        PlatformNode {
            id: id.into(),
            provider,
            os_type,
            os_version: os_version.to_string(),
            image_name: None,
            flavor: None,
            network: None,
            security_group: None,
            key_name: None,
            instance_count: 1,
            address: None,
            attributes: Attributes::new(),
        }
    }

    pub fn os(&self) -> (OsType, &str) {
        (self.os_type, &self.os_version)
    }

    /// Inventory host names for this platform: the address of a pre-deployed
    /// machine, or one `<id>-<n>` name per provisioned instance.
    pub fn host_names(&self) -> Vec<String> {
        match (&self.address, self.provider) {
            (Some(addr), Provider::PreDeployed) => vec![addr.clone()],
            _ => (1..=self.instance_count).map(|n| format!("{}-{}", self.id, n)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relationship {
    pub kind: RelationKind,
    pub source: NodeId,
    pub target: NodeId,
    pub migration_type: Option<MigrationType>,
}

impl Relationship {
    pub fn new(kind: RelationKind, source: &str, target: &str) -> Self {
        Relationship { kind, source: source.to_string(), target: target.to_string(), migration_type: None }
    }

    pub fn migrate(source: &str, target: &str, migration: MigrationType) -> Self {
        Relationship {
            kind: RelationKind::MigrateTo,
            source: source.to_string(),
            target: target.to_string(),
            migration_type: Some(migration),
        }
    }

    /// Stable identifier used as a diagnostic subject.
    pub fn label(&self) -> String {
        format!("{} {} {}", self.source, self.kind.verb(), self.target)
    }

    fn key(&self) -> (RelationKind, &str, &str) {
        (self.kind, &self.source, &self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("relationship `{0}` names an unknown node `{1}`")]
    UnknownNodeRef(String, String),
    #[error("duplicate relationship `{0}`")]
    DuplicateRelationship(String),
    #[error("component `{component}` has more than one hostedOn edge")]
    AmbiguousHosting { component: String },
}

/// A declarative application topology.
///
/// Node ids are unique across components and platforms. Relationships keep
/// declaration order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    components: BTreeMap<NodeId, ComponentNode>,
    platforms: BTreeMap<NodeId, PlatformNode>,
    relationships: Vec<Relationship>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_component(&mut self, node: ComponentNode) -> Result<(), ModelError> {
        if self.contains(&node.id) {
            return Err(ModelError::DuplicateId(node.id));
        }
        self.components.insert(node.id.clone(), node);
        Ok(())
    }

    pub fn add_platform(&mut self, node: PlatformNode) -> Result<(), ModelError> {
        if self.contains(&node.id) {
            return Err(ModelError::DuplicateId(node.id));
        }
        self.platforms.insert(node.id.clone(), node);
        Ok(())
    }

    /// Appends a relationship. Endpoint ids must already exist; endpoint
    /// kinds are checked by the validator, not here.
    pub fn add_relationship(&mut self, rel: Relationship) -> Result<(), ModelError> {
        for end in [&rel.source, &rel.target] {
            if !self.contains(end) {
                return Err(ModelError::UnknownNodeRef(rel.label(), end.clone()));
            }
        }
        if self.relationships.iter().any(|r| r.key() == rel.key()) {
            return Err(ModelError::DuplicateRelationship(rel.label()));
        }
        self.relationships.push(rel);
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.components.contains_key(id) || self.platforms.contains_key(id)
    }

    pub fn component(&self, id: &str) -> Option<&ComponentNode> {
        self.components.get(id)
    }

    pub fn platform(&self, id: &str) -> Option<&PlatformNode> {
        self.platforms.get(id)
    }

    /// Components in id order.
    pub fn components(&self) -> impl Iterator<Item = &ComponentNode> {
        self.components.values()
    }

    /// Platforms in id order.
    pub fn platforms(&self) -> impl Iterator<Item = &PlatformNode> {
        self.platforms.values()
    }

    pub fn relationships(&self) -> &[Relationship] {
        &self.relationships
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty() && self.platforms.is_empty() && self.relationships.is_empty()
    }

    pub fn edges_from<'a>(&'a self, source: &'a str, kind: RelationKind) -> impl Iterator<Item = &'a Relationship> + 'a {
        self.relationships.iter().filter(move |r| r.kind == kind && r.source == source)
    }

    pub fn edges_of_kind(&self, kind: RelationKind) -> impl Iterator<Item = &Relationship> + '_ {
        self.relationships.iter().filter(move |r| r.kind == kind)
    }

    /// The platform a component is hosted on, if any.
    pub fn hosting_platform(&self, component_id: &str) -> Result<Option<&PlatformNode>, ModelError> {
        let mut targets = self.edges_from(component_id, RelationKind::HostedOn).map(|r| r.target.as_str());
        let first = targets.next();
        if targets.next().is_some() {
            return Err(ModelError::AmbiguousHosting { component: component_id.to_string() });
        }
        Ok(first.and_then(|id| self.platforms.get(id)))
    }

    /// Components that must be started before `component_id` (its connectsTo targets).
    pub fn start_dependencies(&self, component_id: &str) -> BTreeSet<NodeId> {
        self.edges_from(component_id, RelationKind::ConnectsTo)
            .map(|r| r.target.clone())
            .collect()
    }

    /// Where a component ends up: its migrateTo target when it is being
    /// moved, otherwise its hostedOn target.
    pub fn placement(&self, component_id: &str) -> Result<Option<&PlatformNode>, ModelError> {
        if let Some(rel) = self.edges_from(component_id, RelationKind::MigrateTo).next() {
            return Ok(self.platforms.get(&rel.target));
        }
        self.hosting_platform(component_id)
    }

    pub fn is_removed(&self, component_id: &str) -> bool {
        self.edges_from(component_id, RelationKind::DeleteFrom).next().is_some()
    }

    /// DeleteFrom targets left with nothing hosted on them once every
    /// removal has happened. These are the platforms that get terminated.
    pub fn retired_platforms(&self) -> BTreeSet<&str> {
        self.edges_of_kind(RelationKind::DeleteFrom)
            .map(|r| r.target.as_str())
            .filter(|p| {
                self.edges_of_kind(RelationKind::HostedOn)
                    .filter(|h| h.target == *p)
                    .all(|h| self.edges_from(&h.source, RelationKind::DeleteFrom).any(|d| d.target == *p))
            })
            .filter(|p| !self.edges_of_kind(RelationKind::MigrateTo).any(|m| m.target == *p))
            .collect()
    }
}
