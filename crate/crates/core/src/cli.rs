//! Command-line front end: load CSV tables, run or check a query, generate
//! benchmark queries.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, Value};
use crate::engine::{execute, EngineConfig, EngineError, QueryResult};
use crate::learner::DEFAULT_EXPLORATION;
use crate::oracle::{evaluate, OracleError, OracleResult};
use crate::query::{parse_query, Aggregate, Query, QueryError};

#[derive(Debug, Parser)]
#[command(
    name = "cubejoin",
    version,
    about = "Anytime multiway join over CSV tables"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a query with the learning join engine.
    Run(RunArgs),
    /// Print a benchmark query over a binary `edge` table.
    Genquery(GenArgs),
    /// Evaluate a query by brute force (small inputs only).
    Oracle(InputArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Table to load, as NAME=PATH. Repeatable.
    #[arg(long = "table", value_name = "NAME=PATH", required = true)]
    pub tables: Vec<String>,
    /// The CSV files start with a header row naming the columns.
    #[arg(long)]
    pub header: bool,
    /// File holding the query.
    #[arg(
        long,
        value_name = "PATH",
        conflicts_with = "query_text",
        required_unless_present = "query_text"
    )]
    pub query: Option<PathBuf>,
    /// Query given inline.
    #[arg(long, value_name = "QUERY")]
    pub query_text: Option<String>,
    /// Override the aggregate in the query head.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Cursor steps per thread and episode.
    #[arg(long, default_value_t = 10_000)]
    pub budget: u64,
    /// UCT exploration weight.
    #[arg(long, default_value_t = DEFAULT_EXPLORATION)]
    pub exploration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write per-order statistics (order, episodes, mean reward) here.
    #[arg(long, value_name = "PATH")]
    pub stats: Option<PathBuf>,
    /// Write result tuples as CSV here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub kind: QueryKind,
    /// Number of nodes (clique, cycle) or degree (loomis-whitney).
    pub n: usize,
    #[arg(long, value_enum, default_value_t = Mode::Count)]
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Tuples,
    Count,
}

impl From<Mode> for Aggregate {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Tuples => Aggregate::Tuples,
            Mode::Count => Aggregate::Count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QueryKind {
    Clique,
    Cycle,
    LoomisWhitney,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Output(#[from] io::Error),
    #[error(transparent)]
    Catalog(CatalogError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Engine(EngineError),
    #[error(transparent)]
    Oracle(OracleError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 1 for query problems, 2 for reading or writing files.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Output(_) => 2,
            CliError::Catalog(e) => catalog_code(e),
            CliError::Engine(EngineError::Catalog(e)) => catalog_code(e),
            CliError::Oracle(OracleError::Catalog(e)) => catalog_code(e),
            _ => 1,
        }
    }
}

fn catalog_code(e: &CatalogError) -> i32 {
    match e {
        CatalogError::Io { .. } | CatalogError::Parse { .. } => 2,
        _ => 1,
    }
}

/// Runs a parsed command line, writing the report to `out`.
pub fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(&args, out),
        Command::Genquery(args) => {
            writeln!(
                out,
                "{}",
                cmd_genquery(args.kind, args.n, args.mode.into())?
            )?;
            Ok(())
        }
        Command::Oracle(args) => cmd_oracle(&args, out),
    }
}

/// Parses `args` (including the program name) and runs them. Returns the
/// process exit code; errors are reported on `err`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn load(args: &InputArgs) -> Result<(Catalog, Query), CliError> {
    let mut catalog = Catalog::new();
    for spec in &args.tables {
        let (name, path) = spec
            .split_once('=')
            .filter(|(n, p)| !n.is_empty() && !p.is_empty())
            .ok_or_else(|| CliError::Usage(format!("--table expects NAME=PATH, got `{spec}`")))?;
        catalog
            .load_csv(path, name, None, args.header)
            .map_err(CliError::Catalog)?;
    }
    let text = match (&args.query, &args.query_text) {
        (Some(path), _) => fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?,
        (None, Some(t)) => t.clone(),
        (None, None) => return Err(CliError::Usage("no query given".into())),
    };
    let mut q = parse_query(&text, &catalog)?;
    if let Some(m) = args.mode {
        q.aggregate = m.into();
    }
    Ok((catalog, q))
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (catalog, q) = load(&args.input)?;
    let cfg = EngineConfig {
        threads: args.threads,
        budget: args.budget,
        exploration: args.exploration,
        seed: args.seed,
        ..EngineConfig::default()
    };
    let res = execute(&catalog, &q, &cfg).map_err(CliError::Engine)?;

    if let Some(path) = &args.stats {
        fs::write(path, &res.stats.order_table).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
    }
    if res.mode == Aggregate::Tuples {
        match &args.output {
            Some(path) => {
                let mut buf = Vec::new();
                write_tuples(&q, &res.tuples, &mut buf)?;
                fs::write(path, buf).map_err(|source| CliError::Io {
                    path: path.clone(),
                    source,
                })?;
            }
            None => write_tuples(&q, &res.tuples, out)?,
        }
    }
    write_report(&res, args.stats.as_ref(), out)?;
    Ok(())
}

fn write_tuples(q: &Query, tuples: &[Vec<Value>], out: &mut dyn Write) -> io::Result<()> {
    let names: Vec<&str> = q.attributes.iter().map(|a| a.name.as_str()).collect();
    writeln!(out, "{}", names.join(","))?;
    for t in tuples {
        let fields: Vec<String> = t.iter().map(Value::to_string).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

fn write_report(
    res: &QueryResult,
    stats_path: Option<&PathBuf>,
    out: &mut dyn Write,
) -> io::Result<()> {
    match res.mode {
        Aggregate::Count => writeln!(out, "count={}", res.count)?,
        Aggregate::Tuples => writeln!(out, "tuples={}", res.tuples.len())?,
    }
    writeln!(out, "episodes={}", res.stats.episodes)?;
    writeln!(out, "steps={}", res.stats.steps)?;
    writeln!(out, "orders={}", res.stats.orders.len())?;
    writeln!(out, "seconds={:.6}", res.stats.wall_time.as_secs_f64())?;
    if let Some(p) = stats_path {
        writeln!(out, "stats={}", p.display())?;
    }
    Ok(())
}

fn cmd_oracle(args: &InputArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (catalog, q) = load(args)?;
    match evaluate(&catalog, &q).map_err(CliError::Oracle)? {
        OracleResult::Count(n) => writeln!(out, "count={n}")?,
        OracleResult::Tuples(t) => {
            write_tuples(&q, &t, out)?;
            writeln!(out, "tuples={}", t.len())?;
        }
    }
    Ok(())
}

fn node_names(n: usize) -> Vec<String> {
    if n <= 26 {
        (b'a'..).take(n).map(|c| (c as char).to_string()).collect()
    } else {
        (1..=n).map(|i| format!("v{i}")).collect()
    }
}

fn chain(names: &[String]) -> Vec<String> {
    names
        .windows(2)
        .map(|w| format!("{}<{}", w[0], w[1]))
        .collect()
}

fn render(mode: Aggregate, atoms: &[String], preds: &[String]) -> String {
    let body: Vec<&str> = atoms.iter().chain(preds).map(String::as_str).collect();
    format!("Q({mode}) :- {}", body.join(", "))
}

/// Query text for an n-clique, n-cycle or Loomis-Whitney query of degree n
/// over a table `edge`.
pub fn cmd_genquery(kind: QueryKind, n: usize, mode: Aggregate) -> Result<String, CliError> {
    if n < 3 {
        return Err(CliError::Usage(format!("size must be at least 3, got {n}")));
    }
    let text = match kind {
        QueryKind::Clique => {
            let v = node_names(n);
            let mut pairs: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
            for i in 0..n {
                for j in i + 2..n {
                    pairs.push((i, j));
                }
            }
            let atoms: Vec<String> = pairs
                .iter()
                .map(|&(i, j)| format!("edge({},{})", v[i], v[j]))
                .collect();
            render(mode, &atoms, &chain(&v))
        }
        QueryKind::Cycle => {
            let v = node_names(n);
            let mut atoms: Vec<String> = (0..n - 1)
                .map(|i| format!("edge({},{})", v[i], v[i + 1]))
                .collect();
            atoms.push(format!("edge({},{})", v[0], v[n - 1]));
            render(mode, &atoms, &chain(&v))
        }
        QueryKind::LoomisWhitney => {
            let v: Vec<String> = (1..=n).map(|i| format!("a{i}")).collect();
            // first atom drops the last attribute, then a1, a2, ...
            let dropped = std::iter::once(n - 1).chain(0..n - 1);
            let atoms: Vec<String> = dropped
                .map(|skip| {
                    let cols: Vec<&str> = v
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != skip)
                        .map(|(_, s)| s.as_str())
                        .collect();
                    format!("edge({})", cols.join(","))
                })
                .collect();
            render(mode, &atoms, &[])
        }
    };
    Ok(text)
}
