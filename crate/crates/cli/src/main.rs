use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use nlstop::runner::spec::{EngineSection, Number, RewardSection, TreeSection};
use nlstop::runner::{
    generate_instance, run_enumerate, run_solve_multi, run_solve_single, run_verify, GenerateParams, InstanceKind,
    ModeName, ProblemSpec, RunOptions, RunReport,
};

/// Optimal single and multiple stopping under nonlinear expectations.
///
/// Exit codes: 0 when every check passes, 1 when a check fails, 2 on spec or
/// budget errors.
#[derive(Parser)]
#[command(name = "nlstop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Snell envelope, minimal optimal time, lambda table and certificates.
    SolveSingle(Common),
    /// d-fold stopping by reduction to single stopping.
    SolveMulti(Common),
    /// Engine axioms, domination, and solver-versus-oracle comparisons.
    Verify(Common),
    /// List or count every stopping rule after the starting rule.
    Enumerate {
        #[command(flatten)]
        common: Common,
        /// Print only the number of rules.
        #[arg(long)]
        count_only: bool,
    },
    /// Write a seeded random problem file.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Float,
}

#[derive(Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    /// Problem file with tree, engine and reward sections.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Tree file, replacing the spec's tree section.
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Engine file, replacing the spec's engine section.
    #[arg(long)]
    engine: Option<PathBuf>,
    /// Reward file, replacing the spec's reward section.
    #[arg(long)]
    reward: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Relative tolerance for float mode; must be positive.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Comma separated lambdas, e.g. `0.5,0.9,99/100`.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<String>>,
    /// Starting rule: `root`, comma separated node ids, or a JSON file
    /// holding a list of node ids.
    #[arg(long)]
    from: Option<String>,
    /// Arity for d-fold stopping.
    #[arg(long)]
    d: Option<usize>,
    /// Work budget for the command: enumerated rules for `enumerate`,
    /// `nodes^d` for `solve-multi`, oracle size for `verify`.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Single,
    Multi,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "single")]
    kind: Kind,
    /// Arity for multi instances.
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Fixed branching factor; random in 2..=3 per node when absent.
    #[arg(long)]
    branching: Option<usize>,
    /// `linear`, `upper_prior` or `g_driver`.
    #[arg(long, default_value = "upper_prior")]
    engine: String,
    /// `additive`, `refraction_swing` or `table` for multi instances.
    #[arg(long)]
    reward: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn parse_from(arg: &str) -> Result<Option<Vec<usize>>> {
    if arg == "root" {
        return Ok(None);
    }
    let path = Path::new(arg);
    if path.exists() {
        return Ok(Some(serde_json::from_value(read_json(path)?)?));
    }
    arg.split(',')
        .map(|s| s.trim().parse().with_context(|| format!("bad node id {s:?} in --from")))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn load_spec(c: &Common) -> Result<ProblemSpec> {
    let mut spec = match &c.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ProblemSpec::from_json(&text)?
        }
        None => ProblemSpec::default(),
    };
    if let Some(p) = &c.tree {
        spec.tree = Some(serde_json::from_value::<TreeSection>(read_json(p)?).with_context(|| format!("parsing {}", p.display()))?);
    }
    if let Some(p) = &c.engine {
        spec.engine = Some(serde_json::from_value::<EngineSection>(read_json(p)?).with_context(|| format!("parsing {}", p.display()))?);
    }
    if let Some(p) = &c.reward {
        spec.reward = Some(serde_json::from_value::<RewardSection>(read_json(p)?).with_context(|| format!("parsing {}", p.display()))?);
    }
    if let Some(m) = c.mode {
        spec.mode = match m {
            Mode::Exact => ModeName::Exact,
            Mode::Float => ModeName::Float,
        };
    }
    if c.tolerance.is_some() {
        spec.tolerance = c.tolerance;
    }
    if let Some(grid) = &c.lambda_grid {
        spec.lambda_grid = Some(grid.iter().map(|s| Number::from(s.trim())).collect());
    }
    if let Some(from) = &c.from {
        spec.from = parse_from(from)?;
    }
    if c.seed.is_some() {
        spec.seed = c.seed;
    }
    Ok(spec)
}

fn csv_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn render(report: &RunReport, format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(report.to_json() + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["kind", "name", "passed", "value", "detail"])?;
            let meta = [
                ("schema_version", report.schema_version.to_string()),
                ("command", report.command.clone()),
                ("instance_digest", report.instance_digest.clone()),
                ("seed", report.seed.map(|s| s.to_string()).unwrap_or_default()),
            ];
            for (k, v) in meta {
                w.write_record(["meta", k, "", &v, ""])?;
            }
            for c in &report.checks {
                let passed = if c.skipped { "skipped" } else if c.passed { "true" } else { "false" };
                w.write_record(["check", &c.name, passed, &c.anchor, c.witness.as_deref().unwrap_or("")])?;
            }
            if let Value::Object(map) = &report.results {
                for (k, v) in map {
                    w.write_record(["result", k, "", &csv_value(v), ""])?;
                }
            }
            Ok(String::from_utf8(w.into_inner()?)?)
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn finish(report: RunReport, c: &Common) -> Result<ExitCode> {
    emit(&render(&report, c.format)?, c.out.as_deref())?;
    if report.passed {
        return Ok(ExitCode::SUCCESS);
    }
    for check in report.failed_checks() {
        eprintln!(
            "FAILED {} ({}): {}",
            check.name,
            check.anchor,
            check.witness.as_deref().unwrap_or("")
        );
    }
    Ok(ExitCode::from(1))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::SolveSingle(c) => {
            let mut spec = load_spec(&c)?;
            if let Some(b) = c.budget {
                spec.budgets.single = b;
            }
            finish(run_solve_single(&spec)?, &c)
        }
        Command::SolveMulti(c) => {
            let mut spec = load_spec(&c)?;
            if let Some(b) = c.budget {
                spec.budgets.solve = b;
            }
            finish(run_solve_multi(&spec, &RunOptions { d: c.d })?, &c)
        }
        Command::Verify(c) => {
            let mut spec = load_spec(&c)?;
            if let Some(b) = c.budget {
                spec.budgets.single = b;
                spec.budgets.multi = b;
            }
            finish(run_verify(&spec, &RunOptions { d: c.d })?, &c)
        }
        Command::Enumerate { common: c, count_only } => {
            let mut spec = load_spec(&c)?;
            if let Some(b) = c.budget {
                spec.budgets.single = b;
            }
            let report = run_enumerate(&spec, count_only)?;
            if count_only {
                let count = csv_value(&report.results["count"]);
                if let Some(out) = &c.out {
                    emit(&render(&report, c.format)?, Some(out))?;
                }
                println!("{count}");
                return Ok(ExitCode::SUCCESS);
            }
            finish(report, &c)
        }
        Command::Generate(g) => {
            let kind = match g.kind {
                Kind::Single => InstanceKind::Single,
                Kind::Multi => InstanceKind::Multi { d: g.d },
            };
            if g.depth == 0 {
                bail!("depth must be at least 1");
            }
            let spec = generate_instance(&GenerateParams {
                kind,
                depth: g.depth,
                branching: g.branching,
                engine: g.engine,
                reward: g.reward,
                seed: g.seed,
            })?;
            emit(&(spec.to_json() + "\n"), g.out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
