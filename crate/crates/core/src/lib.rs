//! Compiles declarative cloud-application topologies into playbooks,
//! provisioning scripts and ordered execution plans.
//!
//! The pipeline is `dsl::parse` → `validate::validate` → `kb::KnowledgeBase::resolve`
//! → `iac::generate_bundle` → `plan::plan_deploy` → `sim::simulate`.

pub mod dsl;
pub mod fuzz;
pub mod iac;
pub mod kb;
pub mod model;
pub mod plan;
pub mod sim;
pub mod validate;

pub use dsl::{parse, serialize, ParseError, SourceSpan};
pub use model::{
    ComponentKind, ComponentNode, MigrationType, OsType, PlatformNode, Provider, RelationKind, Relationship, Topology,
};
