//! Python bindings: parse, validate, generate, plan and simulate from Python.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use stackforge::iac::{self, TemplateLibrary};
use stackforge::kb;
use stackforge::plan;
use stackforge::sim;
use stackforge::validate::{self as rules, RuleSet};

create_exception!(stackforge, StackforgeError, PyException);
create_exception!(stackforge, ParseError, StackforgeError);
create_exception!(stackforge, GenerateError, StackforgeError);
create_exception!(stackforge, PlanError, StackforgeError);

fn err<E: ToString>(kind: fn(String) -> PyErr) -> impl Fn(E) -> PyErr {
    move |e| kind(e.to_string())
}

#[pyclass(module = "stackforge", frozen)]
struct Topology(stackforge::Topology);

#[pymethods]
impl Topology {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        stackforge::parse(text).map(Topology).map_err(err(ParseError::new_err))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        stackforge::dsl::parse_file(&path).map(Topology).map_err(err(ParseError::new_err))
    }

    fn serialize(&self) -> String {
        stackforge::serialize(&self.0)
    }

    #[getter]
    fn components(&self) -> Vec<String> {
        self.0.components().map(|c| c.id.clone()).collect()
    }

    #[getter]
    fn platforms(&self) -> Vec<String> {
        self.0.platforms().map(|p| p.id.clone()).collect()
    }

    /// `(source, verb, target)` triples in declaration order.
    #[getter]
    fn relationships(&self) -> Vec<(String, String, String)> {
        self.0
            .relationships()
            .iter()
            .map(|r| (r.source.clone(), r.kind.verb().to_string(), r.target.clone()))
            .collect()
    }

    fn __eq__(&self, other: &Topology) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!(
            "Topology(components={}, platforms={}, relationships={})",
            self.0.components().count(),
            self.0.platforms().count(),
            self.0.relationships().len()
        )
    }
}

#[pyclass(module = "stackforge", frozen, get_all)]
struct Diagnostic {
    severity: String,
    code: String,
    subject: String,
    message: String,
}

#[pymethods]
impl Diagnostic {
    fn __str__(&self) -> String {
        format!("{} {} {}: {}", self.severity, self.code, self.subject, self.message)
    }

    fn __repr__(&self) -> String {
        format!("Diagnostic({:?}, {:?})", self.code, self.subject)
    }
}

/// Checks a topology; `rules` is the text of a provider-binding rules file.
#[pyfunction]
#[pyo3(signature = (topology, rules=None))]
fn validate(topology: &Topology, rules: Option<&str>) -> PyResult<Vec<Diagnostic>> {
    let set = match rules {
        Some(text) => RuleSet::parse_named("<rules>", text).map_err(err(ParseError::new_err))?,
        None => RuleSet::builtin(),
    };
    Ok(rules::validate(&topology.0, &set)
        .into_iter()
        .map(|d| Diagnostic {
            severity: d.severity.to_string(),
            code: d.code.as_str().to_string(),
            subject: d.subject,
            message: d.message,
        })
        .collect())
}

#[pyclass(module = "stackforge", frozen)]
struct KnowledgeBase(kb::KnowledgeBase);

#[pymethods]
impl KnowledgeBase {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        kb::KnowledgeBase::load(&path).map(KnowledgeBase).map_err(err(GenerateError::new_err))
    }

    /// Ordered `(pkg_mgr, pkg_name)` install steps.
    fn resolve(&self, app: &str, apptype: &str, os_type: &str, os_version: &str) -> PyResult<Vec<(String, String)>> {
        let res = self.0.resolve(app, apptype, os_type, os_version).map_err(err(GenerateError::new_err))?;
        Ok(res.steps.into_iter().map(|s| (s.pkg_mgr, s.pkg_name)).collect())
    }

    fn operating_systems(&self) -> Vec<(String, String)> {
        self.0.operating_systems()
    }
}

#[pyclass(module = "stackforge", frozen)]
struct Bundle(iac::IacBundle);

#[pymethods]
impl Bundle {
    /// Bundle-relative path → file contents.
    fn files<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let dict = PyDict::new(py);
        for (path, bytes) in self.0.file_tree() {
            dict.set_item(path, PyBytes::new(py, &bytes))?;
        }
        Ok(dict)
    }

    /// Writes the bundle to `out`, replacing it, and returns the written paths.
    fn write(&self, out: PathBuf) -> PyResult<Vec<String>> {
        self.0.write_to(&out).map_err(err(GenerateError::new_err))
    }

    /// Install steps per component, as resolved from the knowledge base.
    fn packages(&self) -> Vec<(String, Vec<(String, String)>)> {
        self.0
            .playbooks
            .iter()
            .map(|(id, pb)| (id.clone(), pb.install_steps().into_iter().map(|s| (s.pkg_mgr, s.pkg_name)).collect()))
            .collect()
    }
}

#[pyfunction]
fn generate(topology: &Topology, kb: &KnowledgeBase, templates: PathBuf) -> PyResult<Bundle> {
    let lib = TemplateLibrary::load(&templates).map_err(err(GenerateError::new_err))?;
    iac::generate_bundle(&topology.0, &kb.0, &lib).map(Bundle).map_err(err(GenerateError::new_err))
}

#[pyclass(module = "stackforge", frozen)]
struct Plan(plan::Plan);

#[pymethods]
impl Plan {
    #[getter]
    fn steps(&self) -> Vec<String> {
        self.0.steps().iter().map(|s| s.id.clone()).collect()
    }

    #[getter]
    fn edges(&self) -> Vec<(String, String)> {
        self.0.edges().iter().map(|e| (e.before.clone(), e.after.clone())).collect()
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn to_dot(&self) -> String {
        self.0.to_dot()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        plan::Plan::from_json(text).map(Plan).map_err(err(PlanError::new_err))
    }

    fn topological_order(&self) -> PyResult<Vec<String>> {
        let order = self.0.topological_order().map_err(err(PlanError::new_err))?;
        Ok(order.into_iter().map(str::to_string).collect())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyfunction]
fn plan_deploy(topology: &Topology, bundle: &Bundle) -> Plan {
    Plan(plan::plan_deploy(&topology.0, &bundle.0))
}

#[pyfunction]
fn plan_migrate(topology: &Topology, bundle: &Bundle) -> PyResult<Plan> {
    plan::plan_migrate(&topology.0, &bundle.0).map(Plan).map_err(err(PlanError::new_err))
}

#[pyfunction]
fn plan_delta(old: &Topology, new: &Topology) -> PyResult<Plan> {
    plan::plan_delta(&old.0, &new.0).map(Plan).map_err(err(PlanError::new_err))
}

#[pyclass(module = "stackforge", frozen)]
struct Trace(sim::EventTrace);

#[pymethods]
impl Trace {
    #[getter]
    fn status(&self) -> String {
        self.0.status.to_string()
    }

    /// `(tick, step, phase)` records.
    #[getter]
    fn events(&self) -> Vec<(u64, String, String)> {
        self.0.events.iter().map(|e| (e.tick, e.step.clone(), e.phase.to_string())).collect()
    }

    fn serialize(&self) -> String {
        self.0.serialize()
    }
}

/// Runs the plan on simulated hosts. `config` is the text of a simulator
/// settings file; `seed` overrides its seed.
#[pyfunction]
#[pyo3(signature = (plan, config=None, seed=None))]
fn simulate(plan: &Plan, config: Option<&str>, seed: Option<u64>) -> PyResult<Trace> {
    let mut cfg = match config {
        Some(text) => sim::SimConfig::parse_named("<config>", text).map_err(err(ParseError::new_err))?,
        None => sim::SimConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    sim::simulate(&plan.0, &cfg).map(Trace).map_err(err(PlanError::new_err))
}

#[pyfunction]
fn check_trace(trace: &Trace, plan: &Plan) -> Vec<String> {
    sim::check_trace(&trace.0, &plan.0).iter().map(ToString::to_string).collect()
}

#[pymodule]
#[pyo3(name = "stackforge")]
fn stackforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("StackforgeError", py.get_type::<StackforgeError>())?;
    m.add("ParseError", py.get_type::<ParseError>())?;
    m.add("GenerateError", py.get_type::<GenerateError>())?;
    m.add("PlanError", py.get_type::<PlanError>())?;
    m.add_class::<Topology>()?;
    m.add_class::<Diagnostic>()?;
    m.add_class::<KnowledgeBase>()?;
    m.add_class::<Bundle>()?;
    m.add_class::<Plan>()?;
    m.add_class::<Trace>()?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(plan_deploy, m)?)?;
    m.add_function(wrap_pyfunction!(plan_migrate, m)?)?;
    m.add_function(wrap_pyfunction!(plan_delta, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(check_trace, m)?)?;
    Ok(())
}
