//! Template-based generation of infrastructure code from a validated topology.
//!
//! For every placed component the generator picks the `(kind, engine)`
//! template, asks the knowledge base for the package closure on the host's
//! OS and fills the template into a playbook. Every cloud platform gets a
//! provisioning script. The result is an [`IacBundle`], a pure function of
//! its inputs that can be written to disk as a directory tree.

mod playbook;
mod provision;
mod template;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_yaml::{Mapping, Value};
use thiserror::Error;

use crate::kb::{KnowledgeBase, PackageResolution, ResolveError};
use crate::model::{ComponentKind, ComponentNode, OsType, PlatformNode, RelationKind, Topology};

pub use playbook::{install_module, install_task, Play, Playbook, Task, TAG_CONFIGURE, TAG_INSTALL, TAG_START};
pub use provision::{generate_provision, generate_teardown};
pub use template::{
    placeholders_in, substitute, Asset, AssetSpec, Manifest, PlaceholderSource, Template, TemplateBody, TemplateError,
    TemplateLibrary,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeErrorKind {
    #[error("no template for {0}/{1}")]
    NoTemplate(String, String),
    #[error("component has no engine attribute (`{0}`)")]
    NoEngine(String),
    #[error("placeholder `{placeholder}` is unbound{}", attribute.as_ref().map(|a| format!(" (attribute `{a}` is not set)")).unwrap_or_default())]
    UnboundPlaceholder { placeholder: String, attribute: Option<String> },
    #[error("missing attribute `{0}`")]
    MissingAttribute(String),
    #[error("component has a `source` but template {0} has no `source_dest`")]
    SourceUnsupported(String),
    #[error("component is not placed on any platform")]
    NotPlaced,
    #[error("component has more than one hostedOn edge")]
    AmbiguousHosting,
    #[error(transparent)]
    Resolve(#[from] ResolveError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeError {
    pub node: String,
    pub kind: NodeErrorKind,
}

impl fmt::Display for NodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.node, self.kind)
    }
}

/// All per-node failures of one generation run, sorted by node id.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("generation failed:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
pub struct GenerateError(pub Vec<NodeError>);

/// Attribute naming the template engine for each component kind.
pub fn engine_attribute(kind: &ComponentKind) -> &'static str {
    match kind {
        ComponentKind::Web => "webengine",
        ComponentKind::Database => "dbengine",
        ComponentKind::DataAnalytics => "process_engine",
        ComponentKind::Other(_) => "engine",
    }
}

pub fn engine_of(component: &ComponentNode) -> Result<&str, NodeErrorKind> {
    let attr = engine_attribute(&component.kind);
    component.attr(attr).ok_or_else(|| NodeErrorKind::NoEngine(attr.to_string()))
}

pub fn find_template<'a>(component: &ComponentNode, templates: &'a TemplateLibrary) -> Result<&'a Template, NodeErrorKind> {
    let engine = engine_of(component)?;
    templates
        .get(component.kind.as_str(), engine)
        .ok_or_else(|| NodeErrorKind::NoTemplate(component.kind.to_string(), engine.to_string()))
}

struct Binder<'a> {
    template: &'a Template,
    component: &'a ComponentNode,
    os: (OsType, &'a str),
    resolution: Option<&'a PackageResolution>,
}

impl Binder<'_> {
    fn lookup(&self, name: &str) -> Result<String, NodeErrorKind> {
        let unbound = |attribute: Option<&str>| NodeErrorKind::UnboundPlaceholder {
            placeholder: name.to_string(),
            attribute: attribute.map(str::to_string),
        };
        let Some(source) = self.template.manifest.placeholders.get(name) else {
            return Err(unbound(None));
        };
        match source {
            PlaceholderSource::Attribute { attribute, default, .. } => self
                .component
                .attr(attribute)
                .map(str::to_string)
                .or_else(|| default.clone())
                .ok_or_else(|| unbound(Some(attribute))),
            PlaceholderSource::Component { field } => match field.as_str() {
                "id" => Ok(self.component.id.clone()),
                "kind" => Ok(self.component.kind.to_string()),
                _ => self.component.source_ref.clone().ok_or_else(|| unbound(Some("source"))),
            },
            PlaceholderSource::Platform { field } => Ok(match field.as_str() {
                "os_type" => self.os.0.to_string(),
                _ => self.os.1.to_string(),
            }),
            PlaceholderSource::Kb { field } => {
                let res = self.resolution.ok_or_else(|| unbound(None))?;
                Ok(match field.as_str() {
                    "packages" => res.steps.iter().map(|s| s.pkg_name.as_str()).collect::<Vec<_>>().join(" "),
                    _ => {
                        let mut seen = BTreeSet::new();
                        res.steps
                            .iter()
                            .map(|s| s.pkg_mgr.as_str())
                            .filter(|m| seen.insert(*m))
                            .collect::<Vec<_>>()
                            .join(" ")
                    }
                })
            }
        }
    }

    fn fill(&self, text: &str) -> Result<String, NodeErrorKind> {
        substitute(text, &mut |n| self.lookup(n))
    }
}

/// The knowledge-base `(app_name, apptype)` a component resolves to under `template`.
pub fn kb_query(
    template: &Template,
    component: &ComponentNode,
    os: (OsType, &str),
) -> Result<(String, String), NodeErrorKind> {
    let b = Binder { template, component, os, resolution: None };
    Ok((b.fill(&template.manifest.app)?, b.fill(&template.manifest.apptype)?))
}

/// A component's generated playbook plus the config files it copies.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentConfig {
    pub playbook: Playbook,
    /// Bundle-relative path → contents.
    pub files: BTreeMap<String, Vec<u8>>,
    pub template: String,
    pub reconstructed: bool,
    /// Placeholders holding secrets, substituted verbatim.
    pub secrets: Vec<String>,
}

/// Fills the component's template into a playbook: package installs in
/// resolution order, config-file copies, source checkout, template
/// configure tasks, then start tasks.
pub fn generate_config(
    component: &ComponentNode,
    os: (OsType, &str),
    resolution: &PackageResolution,
    templates: &TemplateLibrary,
) -> Result<ComponentConfig, NodeErrorKind> {
    let template = find_template(component, templates)?;
    let binder = Binder { template, component, os, resolution: Some(resolution) };
    let body = template.instantiate(&mut |n| binder.lookup(n))?;

    let mut tasks: Vec<Task> = resolution.steps.iter().map(install_task).collect();
    let mut files = BTreeMap::new();
    for asset in &template.assets {
        let rel = format!("files/{}/{}", component.id, asset.spec.src);
        let contents = match std::str::from_utf8(&asset.contents) {
            Ok(text) => binder.fill(text)?.into_bytes(),
            Err(_) => asset.contents.clone(),
        };
        files.insert(rel.clone(), contents);
        let mut args = Mapping::new();
        args.insert("src".into(), format!("{{{{ playbook_dir }}}}/../{rel}").into());
        args.insert("dest".into(), binder.fill(&asset.spec.dest)?.into());
        if let Some(mode) = &asset.spec.mode {
            args.insert("mode".into(), mode.clone().into());
        }
        let mut task = Task::new(format!("copy {}", asset.spec.src), "copy", Value::Mapping(args)).tagged(&[TAG_CONFIGURE]);
        if let Some(n) = &asset.spec.notify {
            task.notify.push(n.clone());
        }
        tasks.push(task);
    }
    if let Some(repo) = &component.source_ref {
        let dest = template
            .manifest
            .source_dest
            .as_deref()
            .ok_or_else(|| NodeErrorKind::SourceUnsupported(template.key()))?;
        let mut args = Mapping::new();
        args.insert("repo".into(), repo.clone().into());
        args.insert("dest".into(), binder.fill(dest)?.into());
        args.insert("force".into(), true.into());
        tasks.push(Task::new("check out application source", "git", Value::Mapping(args)).tagged(&[TAG_CONFIGURE]));
    }
    tasks.extend(body.configure.into_iter().map(|t| t.tagged(&[TAG_CONFIGURE])));
    tasks.extend(body.start.into_iter().map(|t| t.tagged(&[TAG_START])));

    let play = Play {
        name: body.name,
        hosts: component.id.clone(),
        become_root: body.become_root,
        vars: body.vars,
        tasks,
        handlers: body.handlers,
    };
    let secrets = template
        .manifest
        .placeholders
        .iter()
        .filter(|(_, s)| s.is_secret())
        .map(|(n, _)| n.clone())
        .collect();
    Ok(ComponentConfig {
        playbook: Playbook { plays: vec![play] },
        files,
        template: template.key(),
        reconstructed: template.manifest.reconstructed,
        secrets,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlaybookEntry {
    pub path: String,
    pub template: String,
    pub reconstructed: bool,
    pub platform: String,
    pub os: String,
    pub packages: Vec<(String, String)>,
    pub files: Vec<String>,
    pub secrets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScriptEntry {
    pub path: String,
    pub provider: String,
    pub secrets: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BundleManifest {
    pub playbooks: BTreeMap<String, PlaybookEntry>,
    pub provision: BTreeMap<String, ScriptEntry>,
    pub teardown: BTreeMap<String, ScriptEntry>,
    /// Inventory variables holding secrets.
    pub inventory_secrets: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IacBundle {
    pub playbooks: BTreeMap<String, Playbook>,
    pub provision_scripts: BTreeMap<String, String>,
    pub teardown_scripts: BTreeMap<String, String>,
    /// Group (component id) → host names.
    pub inventory: BTreeMap<String, Vec<String>>,
    /// Group → connection variables.
    pub inventory_vars: BTreeMap<String, BTreeMap<String, String>>,
    /// Config assets, bundle-relative path → bytes.
    pub files: BTreeMap<String, Vec<u8>>,
    pub manifest: BundleManifest,
}

pub fn playbook_path(component: &str) -> String {
    format!("playbooks/{component}.yml")
}

pub fn provision_path(platform: &str) -> String {
    format!("provision/{platform}.sh")
}

pub fn teardown_path(platform: &str) -> String {
    format!("teardown/{platform}.sh")
}

pub const INVENTORY_PATH: &str = "inventory";
pub const MANIFEST_PATH: &str = "manifest.json";

const KEY_FILE_VAR: &str = "ansible_ssh_private_key_file";

fn inventory_vars(platform: &PlatformNode) -> BTreeMap<String, String> {
    let mut vars = BTreeMap::new();
    if let Some(k) = platform.attributes.get("key_file") {
        vars.insert(KEY_FILE_VAR.to_string(), k.clone());
    }
    if platform.os_type == OsType::Windows {
        vars.insert("ansible_connection".to_string(), "winrm".to_string());
    }
    vars
}

/// Where generation places a component, or `None` when it is only being removed.
fn deployment_target<'a>(t: &'a Topology, c: &ComponentNode) -> Result<Option<&'a PlatformNode>, NodeErrorKind> {
    let migrating = t.edges_from(&c.id, RelationKind::MigrateTo).next().is_some();
    if t.is_removed(&c.id) && !migrating {
        return Ok(None);
    }
    match t.placement(&c.id) {
        Ok(Some(p)) => Ok(Some(p)),
        Ok(None) => Err(NodeErrorKind::NotPlaced),
        Err(_) => Err(NodeErrorKind::AmbiguousHosting),
    }
}

/// Generates the full bundle. Expects a topology that passed validation;
/// anything that still goes wrong is reported per node.
pub fn generate_bundle(topology: &Topology, kb: &KnowledgeBase, templates: &TemplateLibrary) -> Result<IacBundle, GenerateError> {
    let mut bundle = IacBundle::default();
    let mut errors = Vec::new();

    for c in topology.components() {
        let result = (|| -> Result<Option<(&PlatformNode, PackageResolution, ComponentConfig)>, NodeErrorKind> {
            let Some(platform) = deployment_target(topology, c)? else { return Ok(None) };
            let os = platform.os();
            let template = find_template(c, templates)?;
            let (app, apptype) = kb_query(template, c, os)?;
            let resolution = kb.resolve(&app, &apptype, os.0.as_str(), os.1)?;
            let config = generate_config(c, os, &resolution, templates)?;
            Ok(Some((platform, resolution, config)))
        })();
        match result {
            Ok(None) => {}
            Ok(Some((platform, resolution, config))) => {
                bundle.inventory.insert(c.id.clone(), platform.host_names());
                let vars = inventory_vars(platform);
                if vars.contains_key(KEY_FILE_VAR) && !bundle.manifest.inventory_secrets.iter().any(|s| s == KEY_FILE_VAR) {
                    bundle.manifest.inventory_secrets.push(KEY_FILE_VAR.to_string());
                }
                if !vars.is_empty() {
                    bundle.inventory_vars.insert(c.id.clone(), vars);
                }
                bundle.manifest.playbooks.insert(
                    c.id.clone(),
                    PlaybookEntry {
                        path: playbook_path(&c.id),
                        template: config.template.clone(),
                        reconstructed: config.reconstructed,
                        platform: platform.id.clone(),
                        os: format!("{} {}", platform.os_type, platform.os_version),
                        packages: resolution.steps.iter().map(|s| (s.pkg_mgr.clone(), s.pkg_name.clone())).collect(),
                        files: config.files.keys().cloned().collect(),
                        secrets: config.secrets.clone(),
                    },
                );
                bundle.files.extend(config.files);
                bundle.playbooks.insert(c.id.clone(), config.playbook);
            }
            Err(kind) => errors.push(NodeError { node: c.id.clone(), kind }),
        }
    }

    let removed_from = topology.retired_platforms();
    for p in topology.platforms() {
        let secrets: Vec<String> = ["env_file", "key_file"]
            .into_iter()
            .filter(|k| p.attributes.contains_key(*k))
            .map(str::to_string)
            .collect();
        let provision = if removed_from.contains(p.id.as_str()) { Ok(None) } else { generate_provision(p) };
        match provision {
            Ok(Some(script)) => {
                bundle.provision_scripts.insert(p.id.clone(), script);
                bundle.manifest.provision.insert(
                    p.id.clone(),
                    ScriptEntry { path: provision_path(&p.id), provider: p.provider.to_string(), secrets: secrets.clone() },
                );
            }
            Ok(None) => {}
            Err(kind) => errors.push(NodeError { node: p.id.clone(), kind }),
        }
        if removed_from.contains(p.id.as_str()) {
            if let Some(script) = generate_teardown(p) {
                bundle.teardown_scripts.insert(p.id.clone(), script);
                bundle.manifest.teardown.insert(
                    p.id.clone(),
                    ScriptEntry { path: teardown_path(&p.id), provider: p.provider.to_string(), secrets },
                );
            }
        }
    }

    if errors.is_empty() {
        Ok(bundle)
    } else {
        errors.sort_by(|a, b| a.node.cmp(&b.node));
        Err(GenerateError(errors))
    }
}

#[derive(Debug, Error)]
#[error("cannot write bundle to {path}: {source}")]
pub struct WriteError {
    pub path: String,
    #[source]
    pub source: std::io::Error,
}

impl IacBundle {
    pub fn render_inventory(&self) -> String {
        let mut s = String::from("# host groups, one per component\n");
        for (group, hosts) in &self.inventory {
            s += &format!("\n[{group}]\n");
            for h in hosts {
                s += h;
                s += "\n";
            }
            if let Some(vars) = self.inventory_vars.get(group) {
                s += &format!("\n[{group}:vars]\n");
                for (k, v) in vars {
                    s += &format!("{k}={v}\n");
                }
            }
        }
        s
    }

    pub fn render_manifest(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Every output file, bundle-relative path → bytes.
    pub fn file_tree(&self) -> BTreeMap<String, Vec<u8>> {
        let mut tree = BTreeMap::new();
        tree.insert(INVENTORY_PATH.to_string(), self.render_inventory().into_bytes());
        tree.insert(MANIFEST_PATH.to_string(), self.render_manifest().into_bytes());
        for (id, pb) in &self.playbooks {
            tree.insert(playbook_path(id), pb.render().into_bytes());
        }
        for (id, s) in &self.provision_scripts {
            tree.insert(provision_path(id), s.clone().into_bytes());
        }
        for (id, s) in &self.teardown_scripts {
            tree.insert(teardown_path(id), s.clone().into_bytes());
        }
        for (path, bytes) in &self.files {
            tree.insert(path.clone(), bytes.clone());
        }
        tree
    }

    /// Writes the bundle to `out`, replacing any previous contents. Files are
    /// written to a sibling staging directory first and swapped in with a
    /// rename, so a failed write leaves `out` untouched.
    pub fn write_to(&self, out: &Path) -> Result<Vec<String>, WriteError> {
        let err = |path: &Path| {
            let path = path.display().to_string();
            move |source| WriteError { path, source }
        };
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).map_err(err(&parent))?;
        let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "bundle".into());
        let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
        let backup = parent.join(format!(".{name}.old-{}", std::process::id()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(err(&staging))?;
        }

        let tree = self.file_tree();
        let write_all = || -> Result<(), WriteError> {
            for (rel, bytes) in &tree {
                let path = staging.join(rel);
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(err(dir))?;
                }
                std::fs::write(&path, bytes).map_err(err(&path))?;
                #[cfg(unix)]
                if rel.ends_with(".sh") {
                    use std::os::unix::fs::PermissionsExt;
                    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).map_err(err(&path))?;
                }
            }
            Ok(())
        };
        if let Err(e) = write_all() {
            let _ = std::fs::remove_dir_all(&staging);
            return Err(e);
        }
        if out.exists() {
            std::fs::rename(out, &backup).map_err(err(out))?;
        }
        if let Err(e) = std::fs::rename(&staging, out) {
            if backup.exists() {
                let _ = std::fs::rename(&backup, out);
            }
            return Err(err(out)(e));
        }
        if backup.exists() {
            std::fs::remove_dir_all(&backup).map_err(err(&backup))?;
        }
        Ok(tree.into_keys().collect())
    }
}
