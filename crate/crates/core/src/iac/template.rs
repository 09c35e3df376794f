//! Template library: `templates/<kind>/<engine>/{template.yml, manifest.toml, files/}`.
//!
//! Placeholders are written `{{name}}` with no inner spaces. Ansible
//! expressions such as `{{ mysql_user }}` (with spaces) pass through
//! untouched. Every placeholder a template uses must be declared in its
//! manifest together with where its value comes from.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::Deserialize;
use serde_yaml::Value;
use thiserror::Error;

use super::playbook::{map_value_strings, Task};

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: placeholder `{{{{{name}}}}}` is not declared in manifest.toml")]
    UndocumentedPlaceholder { path: String, name: String },
}

/// Where a placeholder's value comes from.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlaceholderSource {
    /// A component attribute, optionally with a fallback.
    Attribute {
        attribute: String,
        default: Option<String>,
        #[serde(default)]
        secret: bool,
    },
    /// A field of the component node: `id`, `kind` or `source`.
    Component { field: String },
    /// The hosting OS: `os_type` or `os_version`.
    Platform { field: String },
    /// Derived from the knowledge-base resolution: `packages` (space separated
    /// package names) or `pkg_mgrs` (distinct package managers in order).
    Kb { field: String },
}

impl PlaceholderSource {
    pub fn is_secret(&self) -> bool {
        matches!(self, PlaceholderSource::Attribute { secret: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSpec {
    /// File name under the template's `files/` directory.
    pub src: String,
    /// Destination path on the target host.
    pub dest: String,
    pub mode: Option<String>,
    /// Handler to notify when the file changes.
    pub notify: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub description: Option<String>,
    /// Set for templates rebuilt from partial information.
    #[serde(default)]
    pub reconstructed: bool,
    /// Knowledge-base application name; may contain placeholders.
    pub app: String,
    /// Knowledge-base apptype qualifier; may contain placeholders.
    pub apptype: String,
    /// Checkout destination used when the component has a `source`.
    pub source_dest: Option<String>,
    #[serde(default)]
    pub placeholders: BTreeMap<String, PlaceholderSource>,
    #[serde(default)]
    pub files: Vec<AssetSpec>,
}

/// The parsed `template.yml`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBody {
    pub name: String,
    pub become_root: bool,
    pub vars: IndexMap<String, Value>,
    pub configure: Vec<Task>,
    pub start: Vec<Task>,
    pub handlers: Vec<Task>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Asset {
    pub spec: AssetSpec,
    pub contents: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub kind: String,
    pub engine: String,
    pub manifest: Manifest,
    pub body: TemplateBody,
    pub assets: Vec<Asset>,
}

impl Template {
    pub fn key(&self) -> String {
        format!("{}/{}", self.kind, self.engine)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemplateLibrary {
    templates: BTreeMap<(String, String), Template>,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([a-z_][a-z0-9_]*)\}\}").expect("valid regex"))
}

/// Placeholder names used in `text`, in order of first use.
pub fn placeholders_in(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    placeholder_re()
        .captures_iter(text)
        .map(|c| c[1].to_string())
        .filter(|n| seen.insert(n.clone()))
        .collect()
}

/// Replaces every `{{name}}` using `lookup`; the first name it cannot bind is the error.
pub fn substitute<E>(text: &str, lookup: &mut impl FnMut(&str) -> Result<String, E>) -> Result<String, E> {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for c in placeholder_re().captures_iter(text) {
        let m = c.get(0).expect("whole match");
        out.push_str(&text[last..m.start()]);
        out.push_str(&lookup(&c[1])?);
        last = m.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>, TemplateError> {
    std::fs::read(path).map_err(|source| TemplateError::Io { path: path.display().to_string(), source })
}

fn invalid(path: &Path, message: impl Into<String>) -> TemplateError {
    TemplateError::Invalid { path: path.display().to_string(), message: message.into() }
}

fn parse_body(path: &Path, text: &str) -> Result<TemplateBody, TemplateError> {
    let doc: Value = serde_yaml::from_str(text).map_err(|e| invalid(path, e.to_string()))?;
    let map = doc.as_mapping().ok_or_else(|| invalid(path, "template must be a mapping"))?;
    let allowed = ["name", "become", "vars", "configure", "start", "handlers"];
    for k in map.keys() {
        let key = k.as_str().unwrap_or_default();
        if !allowed.contains(&key) {
            return Err(invalid(path, format!("unknown template key `{key}`")));
        }
    }
    let get = |k: &str| map.get(Value::from(k));
    let tasks = |k: &str| -> Result<Vec<Task>, TemplateError> {
        match get(k) {
            None => Ok(Vec::new()),
            Some(Value::Sequence(items)) => items
                .iter()
                .map(|t| Task::from_yaml(t).map_err(|m| invalid(path, format!("{k}: {m}"))))
                .collect(),
            Some(_) => Err(invalid(path, format!("`{k}` must be a list of tasks"))),
        }
    };
    let vars = match get("vars") {
        None => IndexMap::new(),
        Some(Value::Mapping(m)) => m
            .iter()
            .map(|(k, v)| {
                k.as_str()
                    .map(|k| (k.to_string(), v.clone()))
                    .ok_or_else(|| invalid(path, "variable names must be strings"))
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(invalid(path, "`vars` must be a mapping")),
    };
    Ok(TemplateBody {
        name: get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| invalid(path, "template needs a `name`"))?
            .to_string(),
        become_root: get("become").and_then(Value::as_bool).unwrap_or(false),
        vars,
        configure: tasks("configure")?,
        start: tasks("start")?,
        handlers: tasks("handlers")?,
    })
}

fn check_source(path: &Path, name: &str, src: &PlaceholderSource) -> Result<(), TemplateError> {
    let ok = match src {
        PlaceholderSource::Attribute { .. } => true,
        PlaceholderSource::Component { field } => matches!(field.as_str(), "id" | "kind" | "source"),
        PlaceholderSource::Platform { field } => matches!(field.as_str(), "os_type" | "os_version"),
        PlaceholderSource::Kb { field } => matches!(field.as_str(), "packages" | "pkg_mgrs"),
    };
    if ok {
        Ok(())
    } else {
        Err(invalid(path, format!("placeholder `{name}` has an unknown field")))
    }
}

impl Template {
    /// Loads one `<kind>/<engine>` template directory.
    pub fn load(dir: &Path, kind: &str, engine: &str) -> Result<Self, TemplateError> {
        let manifest_path = dir.join("manifest.toml");
        let body_path = dir.join("template.yml");
        let manifest_text = String::from_utf8(read(&manifest_path)?).map_err(|_| invalid(&manifest_path, "not UTF-8"))?;
        let manifest: Manifest = toml::from_str(&manifest_text).map_err(|e| invalid(&manifest_path, e.to_string()))?;
        for (name, src) in &manifest.placeholders {
            check_source(&manifest_path, name, src)?;
        }
        let body_text = String::from_utf8(read(&body_path)?).map_err(|_| invalid(&body_path, "not UTF-8"))?;
        let body = parse_body(&body_path, &body_text)?;

        let declared = |path: &Path, text: &str| -> Result<(), TemplateError> {
            for name in placeholders_in(text) {
                if !manifest.placeholders.contains_key(&name) {
                    return Err(TemplateError::UndocumentedPlaceholder { path: path.display().to_string(), name });
                }
            }
            Ok(())
        };
        declared(&body_path, &body_text)?;
        declared(&manifest_path, &manifest.app)?;
        declared(&manifest_path, &manifest.apptype)?;
        if let Some(dest) = &manifest.source_dest {
            declared(&manifest_path, dest)?;
        }

        let files_dir = dir.join("files");
        let mut on_disk = BTreeSet::new();
        if files_dir.is_dir() {
            let entries = std::fs::read_dir(&files_dir)
                .map_err(|source| TemplateError::Io { path: files_dir.display().to_string(), source })?;
            for e in entries {
                let e = e.map_err(|source| TemplateError::Io { path: files_dir.display().to_string(), source })?;
                on_disk.insert(e.file_name().to_string_lossy().into_owned());
            }
        }
        let mut assets = Vec::new();
        for spec in &manifest.files {
            if !on_disk.remove(&spec.src) {
                return Err(invalid(&manifest_path, format!("asset `{}` is not in files/", spec.src)));
            }
            let path = files_dir.join(&spec.src);
            let contents = read(&path)?;
            if let Ok(text) = std::str::from_utf8(&contents) {
                declared(&path, text)?;
            }
            declared(&manifest_path, &spec.dest)?;
            assets.push(Asset { spec: spec.clone(), contents });
        }
        if let Some(orphan) = on_disk.into_iter().next() {
            return Err(invalid(&files_dir, format!("`{orphan}` is not listed in manifest.toml")));
        }

        Ok(Template { kind: kind.to_string(), engine: engine.to_string(), manifest, body, assets })
    }

    /// Every string of the body with placeholders substituted.
    pub fn instantiate<E>(&self, lookup: &mut impl FnMut(&str) -> Result<String, E>) -> Result<TemplateBody, E> {
        let mut body = self.body.clone();
        let mut f = |s: &str| substitute(s, lookup);
        body.name = f(&body.name)?;
        for v in body.vars.values_mut() {
            map_value_strings(v, &mut f)?;
        }
        for t in body.configure.iter_mut().chain(body.start.iter_mut()).chain(body.handlers.iter_mut()) {
            t.try_map_strings(&mut f)?;
        }
        Ok(body)
    }
}

impl TemplateLibrary {
    /// Loads every `<kind>/<engine>` directory under `dir`.
    pub fn load(dir: &Path) -> Result<Self, TemplateError> {
        let mut lib = TemplateLibrary::default();
        let io = |source| TemplateError::Io { path: dir.display().to_string(), source };
        let mut kinds: Vec<_> = std::fs::read_dir(dir).map_err(io)?.collect::<Result<_, _>>().map_err(io)?;
        kinds.sort_by_key(|e| e.file_name());
        for kind in kinds {
            if !kind.path().is_dir() {
                continue;
            }
            let kind_name = kind.file_name().to_string_lossy().into_owned();
            let io = |source| TemplateError::Io { path: kind.path().display().to_string(), source };
            let mut engines: Vec<_> = std::fs::read_dir(kind.path()).map_err(io)?.collect::<Result<_, _>>().map_err(io)?;
            engines.sort_by_key(|e| e.file_name());
            for engine in engines {
                if !engine.path().is_dir() {
                    continue;
                }
                let engine_name = engine.file_name().to_string_lossy().into_owned();
                let t = Template::load(&engine.path(), &kind_name, &engine_name)?;
                lib.templates.insert((kind_name.clone(), engine_name), t);
            }
        }
        Ok(lib)
    }

    pub fn insert(&mut self, template: Template) {
        self.templates.insert((template.kind.clone(), template.engine.clone()), template);
    }

    pub fn get(&self, kind: &str, engine: &str) -> Option<&Template> {
        self.templates.get(&(kind.to_string(), engine.to_string()))
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.templates.keys().map(|(k, e)| (k.as_str(), e.as_str()))
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholder_syntax() {
        assert_eq!(placeholders_in("{{a}} {{ b }} {{c_1}} {{a}} {{Bad}}"), vec!["a", "c_1"]);
        let out: Result<String, ()> =
            substitute("user={{mysql_user}} pass={{ mysql_root_pass }}", &mut |n| Ok(n.to_uppercase()));
        assert_eq!(out.unwrap(), "user=MYSQL_USER pass={{ mysql_root_pass }}");
        let err: Result<String, String> = substitute("{{x}}", &mut |n| Err(n.to_string()));
        assert_eq!(err.unwrap_err(), "x");
    }

    fn write(dir: &Path, rel: &str, text: &str) {
        let p = dir.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, text).unwrap();
    }

    const MANIFEST: &str = r#"
app = "redis"
apptype = "redis"
[placeholders.port]
source = "attribute"
attribute = "port"
"#;

    #[test]
    fn undeclared_placeholder_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "database/redis/manifest.toml", MANIFEST);
        write(
            dir.path(),
            "database/redis/template.yml",
            "name: redis\nstart:\n  - name: start\n    service: {name: redis, port: '{{port}}', bind: '{{bind}}'}\n",
        );
        match TemplateLibrary::load(dir.path()) {
            Err(TemplateError::UndocumentedPlaceholder { name, .. }) => assert_eq!(name, "bind"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn orphan_and_missing_assets() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "database/redis/manifest.toml", MANIFEST);
        write(dir.path(), "database/redis/template.yml", "name: redis\n");
        write(dir.path(), "database/redis/files/redis.conf", "port {{port}}\n");
        assert!(TemplateLibrary::load(dir.path()).unwrap_err().to_string().contains("not listed"));

        let with_files = format!("{MANIFEST}\n[[files]]\nsrc = \"redis.conf\"\ndest = \"/etc/redis/redis.conf\"\n");
        write(dir.path(), "database/redis/manifest.toml", &with_files);
        let lib = TemplateLibrary::load(dir.path()).unwrap();
        let t = lib.get("database", "redis").unwrap();
        assert_eq!(t.assets.len(), 1);

        std::fs::remove_file(dir.path().join("database/redis/files/redis.conf")).unwrap();
        assert!(TemplateLibrary::load(dir.path()).unwrap_err().to_string().contains("not in files/"));
    }

    #[test]
    fn shipped_library_loads() {
        let lib = TemplateLibrary::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../templates")).unwrap();
        assert!(lib.get("database", "mysql").is_some());
        assert!(lib.get("web", "apache").is_some());
        assert!(lib.get("data_analytics", "scikit-learn").is_some());
        assert!(lib.get("database", "mysql").unwrap().manifest.reconstructed);
    }
}
