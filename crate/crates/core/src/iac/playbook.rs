//! Neutral playbook tree, rendered to Ansible YAML only at the very end.

use indexmap::IndexMap;
use serde_yaml::{Mapping, Value};

use crate::kb::InstallStep;

/// Task keywords that are not module names.
const TASK_KEYWORDS: &[&str] = &[
    "name",
    "notify",
    "tags",
    "when",
    "register",
    "become",
    "become_user",
    "changed_when",
    "failed_when",
    "ignore_errors",
    "loop",
    "with_items",
    "args",
    "environment",
];

pub const TAG_CONFIGURE: &str = "configure";
pub const TAG_START: &str = "start";
pub const TAG_INSTALL: &str = "install";

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub name: String,
    pub module: String,
    pub args: Value,
    pub notify: Vec<String>,
    pub tags: Vec<String>,
    /// Other task keywords (`when`, `register`, ...), in template order.
    pub options: IndexMap<String, Value>,
}

impl Task {
    pub fn new(name: impl Into<String>, module: &str, args: Value) -> Self {
        Task {
            name: name.into(),
            module: module.to_string(),
            args,
            notify: Vec::new(),
            tags: Vec::new(),
            options: IndexMap::new(),
        }
    }

    pub fn tagged(mut self, tags: &[&str]) -> Self {
        for t in tags {
            if !self.tags.iter().any(|x| x == t) {
                self.tags.push(t.to_string());
            }
        }
        self
    }

    /// Reads a task from its YAML mapping form. Exactly one key must name a
    /// module; the rest must be task keywords.
    pub fn from_yaml(value: &Value) -> Result<Self, String> {
        let map = value.as_mapping().ok_or("task must be a mapping")?;
        let mut name = None;
        let mut module: Option<(String, Value)> = None;
        let mut notify = Vec::new();
        let mut tags = Vec::new();
        let mut options = IndexMap::new();
        for (k, v) in map {
            let key = k.as_str().ok_or("task keys must be strings")?;
            match key {
                "name" => name = Some(v.as_str().ok_or("task `name` must be a string")?.to_string()),
                "notify" => notify = string_list(v).ok_or("`notify` must be a string or list of strings")?,
                "tags" => tags = string_list(v).ok_or("`tags` must be a string or list of strings")?,
                k if TASK_KEYWORDS.contains(&k) => {
                    options.insert(k.to_string(), v.clone());
                }
                module_name => {
                    if let Some((first, _)) = &module {
                        return Err(format!("task has two modules: `{first}` and `{module_name}`"));
                    }
                    module = Some((module_name.to_string(), v.clone()));
                }
            }
        }
        let (module, args) = module.ok_or("task has no module")?;
        let name = name.ok_or_else(|| format!("`{module}` task has no name"))?;
        Ok(Task { name, module, args, notify, tags, options })
    }

    fn to_yaml(&self) -> Value {
        let mut m = Mapping::new();
        m.insert("name".into(), self.name.clone().into());
        m.insert(self.module.clone().into(), self.args.clone());
        for (k, v) in &self.options {
            m.insert(k.clone().into(), v.clone());
        }
        if !self.notify.is_empty() {
            m.insert("notify".into(), strings(&self.notify));
        }
        if !self.tags.is_empty() {
            m.insert("tags".into(), strings(&self.tags));
        }
        Value::Mapping(m)
    }

    /// Visits every string in the task (name, args, options, notify).
    pub(crate) fn try_map_strings<E>(&mut self, f: &mut impl FnMut(&str) -> Result<String, E>) -> Result<(), E> {
        self.name = f(&self.name)?;
        map_value_strings(&mut self.args, f)?;
        for v in self.options.values_mut() {
            map_value_strings(v, f)?;
        }
        for n in &mut self.notify {
            *n = f(n)?;
        }
        Ok(())
    }
}

fn string_list(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(vec![s.clone()]),
        Value::Sequence(items) => items.iter().map(|i| i.as_str().map(str::to_string)).collect(),
        _ => None,
    }
}

fn strings(items: &[String]) -> Value {
    Value::Sequence(items.iter().cloned().map(Value::String).collect())
}

pub(crate) fn map_value_strings<E>(v: &mut Value, f: &mut impl FnMut(&str) -> Result<String, E>) -> Result<(), E> {
    match v {
        Value::String(s) => *s = f(s)?,
        Value::Sequence(items) => {
            for i in items {
                map_value_strings(i, f)?;
            }
        }
        Value::Mapping(m) => {
            let old = std::mem::take(m);
            for (mut k, mut val) in old {
                map_value_strings(&mut k, f)?;
                map_value_strings(&mut val, f)?;
                m.insert(k, val);
            }
        }
        Value::Tagged(t) => map_value_strings(&mut t.value, f)?,
        _ => {}
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Play {
    pub name: String,
    /// Inventory group the play targets.
    pub hosts: String,
    pub become_root: bool,
    pub vars: IndexMap<String, Value>,
    pub tasks: Vec<Task>,
    pub handlers: Vec<Task>,
}

impl Play {
    fn to_yaml(&self) -> Value {
        let mut m = Mapping::new();
        m.insert("name".into(), self.name.clone().into());
        m.insert("hosts".into(), self.hosts.clone().into());
        if self.become_root {
            m.insert("become".into(), true.into());
        }
        if !self.vars.is_empty() {
            let vars: Mapping = self.vars.iter().map(|(k, v)| (Value::from(k.clone()), v.clone())).collect();
            m.insert("vars".into(), Value::Mapping(vars));
        }
        m.insert("tasks".into(), Value::Sequence(self.tasks.iter().map(Task::to_yaml).collect()));
        if !self.handlers.is_empty() {
            m.insert("handlers".into(), Value::Sequence(self.handlers.iter().map(Task::to_yaml).collect()));
        }
        Value::Mapping(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Playbook {
    pub plays: Vec<Play>,
}

impl Playbook {
    pub fn render(&self) -> String {
        let doc = Value::Sequence(self.plays.iter().map(Play::to_yaml).collect());
        let body = serde_yaml::to_string(&doc).expect("playbook values are plain YAML");
        format!("---\n{body}")
    }

    /// Package installs in task order, read back from the tree.
    pub fn install_steps(&self) -> Vec<InstallStep> {
        self.plays
            .iter()
            .flat_map(|p| &p.tasks)
            .filter(|t| t.tags.iter().any(|tag| tag == TAG_INSTALL))
            .filter_map(install_step_of)
            .collect()
    }

    /// Parses a rendered playbook back into the tree.
    pub fn from_yaml_str(text: &str) -> Result<Self, String> {
        let doc: Value = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
        let plays = doc.as_sequence().ok_or("playbook must be a list of plays")?;
        let mut out = Vec::new();
        for p in plays {
            let m = p.as_mapping().ok_or("play must be a mapping")?;
            let get = |k: &str| m.get(Value::from(k));
            let tasks = |k: &str| -> Result<Vec<Task>, String> {
                match get(k) {
                    None => Ok(Vec::new()),
                    Some(Value::Sequence(items)) => items.iter().map(Task::from_yaml).collect(),
                    Some(_) => Err(format!("`{k}` must be a list")),
                }
            };
            let vars = match get("vars") {
                Some(Value::Mapping(v)) => {
                    v.iter().map(|(k, v)| (k.as_str().unwrap_or_default().to_string(), v.clone())).collect()
                }
                _ => IndexMap::new(),
            };
            out.push(Play {
                name: get("name").and_then(Value::as_str).unwrap_or_default().to_string(),
                hosts: get("hosts").and_then(Value::as_str).ok_or("play has no hosts")?.to_string(),
                become_root: get("become").and_then(Value::as_bool).unwrap_or(false),
                vars,
                tasks: tasks("tasks")?,
                handlers: tasks("handlers")?,
            });
        }
        Ok(Playbook { plays: out })
    }
}

/// Ansible module used to install a package with `pkg_mgr`.
pub fn install_module(pkg_mgr: &str) -> &'static str {
    match pkg_mgr {
        "apt" => "apt",
        "yum" => "yum",
        "dnf" => "dnf",
        "pip" => "pip",
        "choco" => "win_chocolatey",
        _ => "package",
    }
}

pub fn install_task(step: &InstallStep) -> Task {
    let module = install_module(&step.pkg_mgr);
    let mut args = Mapping::new();
    args.insert("name".into(), step.pkg_name.clone().into());
    if module != "pip" {
        args.insert("state".into(), "present".into());
    }
    if module == "apt" {
        args.insert("update_cache".into(), true.into());
    }
    if module == "package" {
        args.insert("use".into(), step.pkg_mgr.clone().into());
    }
    Task::new(format!("install {} ({})", step.pkg_name, step.pkg_mgr), module, Value::Mapping(args))
        .tagged(&[TAG_CONFIGURE, TAG_INSTALL])
}

fn install_step_of(task: &Task) -> Option<InstallStep> {
    let name = task.args.get("name")?.as_str()?;
    let mgr = match task.module.as_str() {
        "win_chocolatey" => "choco".to_string(),
        "package" => task.args.get("use")?.as_str()?.to_string(),
        other => other.to_string(),
    };
    Some(InstallStep::new(&mgr, name))
}
