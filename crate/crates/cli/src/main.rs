use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stackforge::dsl::{self, LoadError};
use stackforge::iac::{generate_bundle, IacBundle, TemplateLibrary};
use stackforge::kb::KnowledgeBase;
use stackforge::plan::{plan_delta, plan_deploy, plan_migrate, Plan};
use stackforge::sim::{check_trace, simulate, SimConfig, Status};
use stackforge::validate::{is_deployable, rule_set_from_file, validate, RuleSet, Severity};
use stackforge::Topology;

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  1   the model failed to parse or validate
  2   generation or planning failed (templates, knowledge base, output)
  3   the simulated run failed
  64  usage error (bad flags, unreadable input)";

#[derive(Parser)]
#[command(name = "stackforge", version, about = "Compile cloud topologies into playbooks, provisioning scripts and execution plans")]
#[command(after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model against the structural rules.
    Validate {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Write playbooks, inventory and provisioning scripts for a model.
    Generate {
        #[command(flatten)]
        inputs: Inputs,
        /// Output directory; replaced as a whole.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the execution plan as JSON.
    Plan {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        kind: PlanKind,
        /// Print a Graphviz digraph instead of JSON.
        #[arg(long)]
        dot: bool,
    },
    /// Rehearse the plan on simulated hosts and print the event trace.
    Simulate {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        kind: PlanKind,
        /// Simulator settings (latency ranges, failure injections).
        #[arg(long, value_name = "PATH")]
        sim_config: Option<PathBuf>,
        /// Overrides the seed from the settings file.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Topology model (.camp).
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Provider-binding rules added to the built-in set.
    #[arg(long, value_name = "PATH")]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct Inputs {
    #[command(flatten)]
    model: ModelArgs,
    /// Knowledge-base directory.
    #[arg(long, value_name = "DIR", default_value = "kb")]
    kb: PathBuf,
    /// Template library directory.
    #[arg(long, value_name = "DIR", default_value = "templates")]
    templates: PathBuf,
}

#[derive(Args)]
#[group(multiple = false)]
struct PlanKind {
    /// Plan the model's migrateTo/deleteFrom moves.
    #[arg(long)]
    migrate: bool,
    /// Plan only what was added relative to an already deployed model.
    #[arg(long, value_name = "OLD_MODEL")]
    delta: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: Option<String>,
}

impl Failure {
    fn usage(message: impl ToString) -> Self {
        Failure { code: 64, message: Some(message.to_string()) }
    }

    fn validation(message: impl ToString) -> Self {
        Failure { code: 1, message: Some(message.to_string()) }
    }

    fn generation(message: impl ToString) -> Self {
        Failure { code: 2, message: Some(message.to_string()) }
    }

    fn silent(code: u8) -> Self {
        Failure { code, message: None }
    }
}

type Outcome = Result<(), Failure>;

fn color() -> bool {
    std::env::var_os("NO_COLOR").is_none() && std::io::stderr().is_terminal()
}

fn load_model(args: &ModelArgs) -> Result<Topology, Failure> {
    let topology = match dsl::parse_file(&args.model) {
        Ok(t) => t,
        Err(e @ LoadError::Io { .. }) => return Err(Failure::usage(e)),
        Err(LoadError::Parse(e)) => return Err(Failure::validation(e)),
    };
    let rules = match &args.rules {
        Some(path) => rule_set_from_file(path).map_err(Failure::usage)?,
        None => RuleSet::builtin(),
    };
    let diagnostics = validate(&topology, &rules);
    let paint = color();
    let mut err = std::io::stderr().lock();
    for d in &diagnostics {
        let line = d.to_string();
        let _ = match (paint, d.severity) {
            (true, Severity::Error) => writeln!(err, "\x1b[31m{line}\x1b[0m"),
            (true, Severity::Warning) => writeln!(err, "\x1b[33m{line}\x1b[0m"),
            _ => writeln!(err, "{line}"),
        };
    }
    if is_deployable(&diagnostics) {
        Ok(topology)
    } else {
        Err(Failure::silent(1))
    }
}

fn existing_dir(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} directory {} does not exist", path.display())))
    }
}

fn build(inputs: &Inputs) -> Result<(Topology, IacBundle), Failure> {
    let topology = load_model(&inputs.model)?;
    existing_dir(&inputs.kb, "knowledge base")?;
    existing_dir(&inputs.templates, "template")?;
    let kb = KnowledgeBase::load(&inputs.kb).map_err(Failure::generation)?;
    let templates = TemplateLibrary::load(&inputs.templates).map_err(Failure::generation)?;
    let bundle = generate_bundle(&topology, &kb, &templates).map_err(Failure::generation)?;
    Ok((topology, bundle))
}

fn make_plan(inputs: &Inputs, kind: &PlanKind) -> Result<Plan, Failure> {
    let (topology, bundle) = build(inputs)?;
    if kind.migrate {
        return plan_migrate(&topology, &bundle).map_err(Failure::generation);
    }
    if let Some(old_path) = &kind.delta {
        let old = load_model(&ModelArgs { model: old_path.clone(), rules: inputs.model.rules.clone() })?;
        return plan_delta(&old, &topology).map_err(Failure::generation);
    }
    Ok(plan_deploy(&topology, &bundle))
}

fn print(text: &str) -> Outcome {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(Failure::generation)
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Validate { model } => load_model(&model).map(|_| ()),
        Command::Generate { inputs, out } => {
            let (_, bundle) = build(&inputs)?;
            let written = bundle.write_to(&out).map_err(Failure::generation)?;
            let mut lines = String::new();
            for rel in written {
                lines += &format!("wrote {}\n", out.join(rel).display());
            }
            print(&lines)
        }
        Command::Plan { inputs, kind, dot } => {
            let plan = make_plan(&inputs, &kind)?;
            print(&if dot { plan.to_dot() } else { plan.to_json() })
        }
        Command::Simulate { inputs, kind, sim_config, seed } => {
            let mut config = match &sim_config {
                Some(path) => SimConfig::from_file(path).map_err(Failure::usage)?,
                None => SimConfig::default(),
            };
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let plan = make_plan(&inputs, &kind)?;
            let trace = simulate(&plan, &config).map_err(Failure::generation)?;
            print(&trace.serialize())?;
            let violations = check_trace(&trace, &plan);
            for v in &violations {
                eprintln!("trace violation: {v}");
            }
            if trace.status == Status::Succeeded && violations.is_empty() {
                Ok(())
            } else {
                Err(Failure::silent(3))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Some(m) = f.message {
                eprintln!("stackforge: {m}");
            }
            ExitCode::from(f.code)
        }
    }
}
