//! Software-dependency knowledge base.
//!
//! Four tab-separated tables map application types to the packages they
//! need on each operating system:
//!
//! | file                | columns                                                        |
//! |---------------------|----------------------------------------------------------------|
//! | `os_pkg_mgr.tsv`    | `id os_type os_version pkg_mgr`                                |
//! | `swdependency.tsv`  | `id app_name`                                                  |
//! | `packages.tsv`      | `id app_id sw_id apptype pkg_name pkg_mgr install_order`       |
//! | `os_dependency.tsv` | `os_id app_sw_id`                                              |
//!
//! A resolution selects the packages of an application whose `apptype`
//! matches and whose `sw_id` group is mapped (through `os_dependency`) to
//! any `os_pkg_mgr` row of the requested OS.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OsPkgMgrRow {
    pub id: u32,
    pub os_type: String,
    pub os_version: String,
    pub pkg_mgr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwDependencyRow {
    pub id: u32,
    pub app_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageRow {
    pub id: u32,
    pub app_id: u32,
    pub sw_id: u32,
    pub apptype: String,
    pub pkg_name: String,
    pub pkg_mgr: String,
    pub install_order: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OsDependencyRow {
    pub os_id: u32,
    pub app_sw_id: u32,
}

pub const OS_PKG_MGR: &str = "os_pkg_mgr";
pub const SWDEPENDENCY: &str = "swdependency";
pub const PACKAGES: &str = "packages";
pub const OS_DEPENDENCY: &str = "os_dependency";

const OS_PKG_MGR_COLUMNS: &[&str] = &["id", "os_type", "os_version", "pkg_mgr"];
const SWDEPENDENCY_COLUMNS: &[&str] = &["id", "app_name"];
const PACKAGES_COLUMNS: &[&str] = &["id", "app_id", "sw_id", "apptype", "pkg_name", "pkg_mgr", "install_order"];
const OS_DEPENDENCY_COLUMNS: &[&str] = &["os_id", "app_sw_id"];

/// One install step: which package manager installs which package.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstallStep {
    pub pkg_mgr: String,
    pub pkg_name: String,
}

impl InstallStep {
    pub fn new(pkg_mgr: &str, pkg_name: &str) -> Self {
        InstallStep { pkg_mgr: pkg_mgr.to_string(), pkg_name: pkg_name.to_string() }
    }
}

/// Ordered package closure for one application on one OS.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageResolution {
    pub steps: Vec<InstallStep>,
}

impl PackageResolution {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Consecutive runs of steps sharing a package manager.
    pub fn groups(&self) -> Vec<(&str, Vec<&str>)> {
        let mut out: Vec<(&str, Vec<&str>)> = Vec::new();
        for s in &self.steps {
            match out.last_mut() {
                Some((mgr, names)) if *mgr == s.pkg_mgr => names.push(&s.pkg_name),
                _ => out.push((&s.pkg_mgr, vec![&s.pkg_name])),
            }
        }
        out
    }

    pub fn as_pairs(&self) -> Vec<(&str, &str)> {
        self.steps.iter().map(|s| (s.pkg_mgr.as_str(), s.pkg_name.as_str())).collect()
    }
}

#[derive(Debug, Error)]
pub enum KbLoadError {
    #[error("knowledge base table `{0}` is missing")]
    MissingTable(String),
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: u64, message: String },
    #[error("knowledge base integrity: {0}")]
    Integrity(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("unknown application type `{0}`")]
    UnknownApplicationType(String),
    #[error("unsupported operating system {0} {1}")]
    UnsupportedOs(String, String),
    #[error("knowledge base has no packages for `{app_name}` ({apptype}) on {os_type} {os_version}")]
    EmptyResolution { app_name: String, apptype: String, os_type: String, os_version: String },
}

/// The four tables, checked for referential integrity, plus lookup indexes.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    os_pkg_mgr: Vec<OsPkgMgrRow>,
    swdependency: Vec<SwDependencyRow>,
    packages: Vec<PackageRow>,
    os_dependency: Vec<OsDependencyRow>,
    app_ids: HashMap<String, u32>,
    os_ids: BTreeMap<(String, String), BTreeSet<u32>>,
    sw_ids_by_os_id: HashMap<u32, BTreeSet<u32>>,
    packages_by_app: HashMap<u32, Vec<usize>>,
}

fn read_table<T: DeserializeOwned>(dir: &Path, table: &str, columns: &[&str]) -> Result<Vec<T>, KbLoadError> {
    let path = dir.join(format!("{table}.tsv"));
    if !path.is_file() {
        return Err(KbLoadError::MissingTable(table.to_string()));
    }
    let file = path.display().to_string();
    let bytes = std::fs::read(&path).map_err(|source| KbLoadError::Io { path: file.clone(), source })?;
    parse_table(&file, &bytes, columns)
}

fn parse_table<T: DeserializeOwned>(file: &str, bytes: &[u8], columns: &[&str]) -> Result<Vec<T>, KbLoadError> {
    let mut reader = csv::ReaderBuilder::new().delimiter(b'\t').quoting(false).from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| KbLoadError::Parse { file: file.to_string(), line: 1, message: e.to_string() })?;
    let found: Vec<&str> = header.iter().collect();
    if found != columns {
        return Err(KbLoadError::Parse {
            file: file.to_string(),
            line: 1,
            message: format!("expected columns {columns:?}, found {found:?}"),
        });
    }
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        let row: T = record.map_err(|e| KbLoadError::Parse {
            file: file.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn unique<K: Ord + std::fmt::Debug>(
    table: &str,
    what: &str,
    keys: impl IntoIterator<Item = K>,
) -> Result<(), KbLoadError> {
    let mut seen = BTreeSet::new();
    for k in keys {
        if let Some(dup) = seen.replace(k) {
            return Err(KbLoadError::Integrity(format!("{table}: duplicate {what} {dup:?}")));
        }
    }
    Ok(())
}

impl KnowledgeBase {
    /// Loads the four `.tsv` tables from `dir`.
    pub fn load(dir: &Path) -> Result<Self, KbLoadError> {
        if !dir.is_dir() {
            return Err(KbLoadError::Io {
                path: dir.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            });
        }
        let os_pkg_mgr = read_table(dir, OS_PKG_MGR, OS_PKG_MGR_COLUMNS)?;
        let swdependency = read_table(dir, SWDEPENDENCY, SWDEPENDENCY_COLUMNS)?;
        let packages = read_table(dir, PACKAGES, PACKAGES_COLUMNS)?;
        let os_dependency = read_table(dir, OS_DEPENDENCY, OS_DEPENDENCY_COLUMNS)?;
        Self::from_tables(os_pkg_mgr, swdependency, packages, os_dependency)
    }

    /// Builds a knowledge base from rows, verifying keys and foreign keys.
    pub fn from_tables(
        os_pkg_mgr: Vec<OsPkgMgrRow>,
        swdependency: Vec<SwDependencyRow>,
        packages: Vec<PackageRow>,
        os_dependency: Vec<OsDependencyRow>,
    ) -> Result<Self, KbLoadError> {
        unique(OS_PKG_MGR, "id", os_pkg_mgr.iter().map(|r| r.id))?;
        unique(OS_PKG_MGR, "(os_type, os_version, pkg_mgr)", os_pkg_mgr.iter().map(|r| (&r.os_type, &r.os_version, &r.pkg_mgr)))?;
        unique(SWDEPENDENCY, "id", swdependency.iter().map(|r| r.id))?;
        unique(SWDEPENDENCY, "app_name", swdependency.iter().map(|r| &r.app_name))?;
        unique(PACKAGES, "id", packages.iter().map(|r| r.id))?;
        unique(PACKAGES, "install_order within (app_id, sw_id)", packages.iter().map(|r| (r.app_id, r.sw_id, r.install_order)))?;
        unique(OS_DEPENDENCY, "(os_id, app_sw_id)", os_dependency.iter().map(|r| (r.os_id, r.app_sw_id)))?;

        let app_ids: HashMap<String, u32> = swdependency.iter().map(|r| (r.app_name.clone(), r.id)).collect();
        let known_apps: BTreeSet<u32> = swdependency.iter().map(|r| r.id).collect();
        let known_os: BTreeSet<u32> = os_pkg_mgr.iter().map(|r| r.id).collect();
        let known_sw: BTreeSet<u32> = packages.iter().map(|r| r.sw_id).collect();

        for p in &packages {
            if p.pkg_name.trim().is_empty() {
                return Err(KbLoadError::Integrity(format!("packages: row {} has an empty pkg_name", p.id)));
            }
            if !known_apps.contains(&p.app_id) {
                return Err(KbLoadError::Integrity(format!(
                    "packages: row {} references app_id {} which is not in swdependency",
                    p.id, p.app_id
                )));
            }
        }
        for d in &os_dependency {
            if !known_os.contains(&d.os_id) {
                return Err(KbLoadError::Integrity(format!(
                    "os_dependency: os_id {} is not in os_pkg_mgr",
                    d.os_id
                )));
            }
            if !known_sw.contains(&d.app_sw_id) {
                return Err(KbLoadError::Integrity(format!(
                    "os_dependency: app_sw_id {} matches no packages.sw_id",
                    d.app_sw_id
                )));
            }
        }

        let mut os_ids: BTreeMap<(String, String), BTreeSet<u32>> = BTreeMap::new();
        for r in &os_pkg_mgr {
            os_ids.entry((r.os_type.clone(), r.os_version.clone())).or_default().insert(r.id);
        }
        let mut sw_ids_by_os_id: HashMap<u32, BTreeSet<u32>> = HashMap::new();
        for d in &os_dependency {
            sw_ids_by_os_id.entry(d.os_id).or_default().insert(d.app_sw_id);
        }
        let mut packages_by_app: HashMap<u32, Vec<usize>> = HashMap::new();
        for (idx, p) in packages.iter().enumerate() {
            packages_by_app.entry(p.app_id).or_default().push(idx);
        }

        Ok(KnowledgeBase {
            os_pkg_mgr,
            swdependency,
            packages,
            os_dependency,
            app_ids,
            os_ids,
            sw_ids_by_os_id,
            packages_by_app,
        })
    }

    pub fn os_pkg_mgr(&self) -> &[OsPkgMgrRow] {
        &self.os_pkg_mgr
    }

    pub fn swdependency(&self) -> &[SwDependencyRow] {
        &self.swdependency
    }

    pub fn packages(&self) -> &[PackageRow] {
        &self.packages
    }

    pub fn os_dependency(&self) -> &[OsDependencyRow] {
        &self.os_dependency
    }

    /// Every `(os_type, os_version)` pair the KB knows, sorted.
    pub fn operating_systems(&self) -> Vec<(String, String)> {
        self.os_ids.keys().cloned().collect()
    }

    pub fn app_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.swdependency.iter().map(|r| r.app_name.as_str()).collect();
        names.sort_unstable();
        names
    }

    fn select(&self, app_id: u32, apptype: Option<&str>, os_type: &str, os_version: &str) -> Result<PackageResolution, ResolveError> {
        let os_ids = self
            .os_ids
            .get(&(os_type.to_string(), os_version.to_string()))
            .ok_or_else(|| ResolveError::UnsupportedOs(os_type.to_string(), os_version.to_string()))?;
        let sw_ids: BTreeSet<u32> = os_ids
            .iter()
            .filter_map(|id| self.sw_ids_by_os_id.get(id))
            .flatten()
            .copied()
            .collect();
        let mut rows: Vec<&PackageRow> = self
            .packages_by_app
            .get(&app_id)
            .into_iter()
            .flatten()
            .map(|&idx| &self.packages[idx])
            .filter(|p| apptype.is_none_or(|a| p.apptype == a) && sw_ids.contains(&p.sw_id))
            .collect();
        rows.sort_by_key(|p| (p.install_order, p.sw_id, p.id));
        Ok(PackageResolution { steps: rows.iter().map(|p| InstallStep::new(&p.pkg_mgr, &p.pkg_name)).collect() })
    }

    fn app_id(&self, app_name: &str) -> Result<u32, ResolveError> {
        self.app_ids
            .get(app_name)
            .copied()
            .ok_or_else(|| ResolveError::UnknownApplicationType(app_name.to_string()))
    }

    /// Packages needed to install `app_name` (flavoured by `apptype`) on the given OS.
    pub fn resolve(&self, app_name: &str, apptype: &str, os_type: &str, os_version: &str) -> Result<PackageResolution, ResolveError> {
        let app_id = self.app_id(app_name)?;
        let res = self.select(app_id, Some(apptype), os_type, os_version)?;
        if res.is_empty() {
            return Err(ResolveError::EmptyResolution {
                app_name: app_name.to_string(),
                apptype: apptype.to_string(),
                os_type: os_type.to_string(),
                os_version: os_version.to_string(),
            });
        }
        Ok(res)
    }

    /// One resolution per OS on which `app_name` has any packages, across all
    /// of its apptypes.
    pub fn os_variants(&self, app_name: &str) -> Result<BTreeMap<(String, String), PackageResolution>, ResolveError> {
        let app_id = self.app_id(app_name)?;
        let mut out = BTreeMap::new();
        for (os_type, os_version) in self.os_ids.keys() {
            let res = self.select(app_id, None, os_type, os_version)?;
            if !res.is_empty() {
                out.insert((os_type.clone(), os_version.clone()), res);
            }
        }
        Ok(out)
    }
}
