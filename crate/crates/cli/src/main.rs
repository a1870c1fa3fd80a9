//! `infomenu`: solvers, oracles, generators and audits with JSON output.
//!
//! Exit codes: 0 ok, 2 invalid input, 3 numerical failure, 4 too large.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use infomenu_core::audit::{brute_force_menu_search, sat_reduction_optimum};
use infomenu_core::implicit::{ImplicitOptions, DEFAULT_GRID_CAP};
use infomenu_core::io::{self, BlueprintDoc, InstanceDoc, MenuDoc, MultiInstanceDoc};
use infomenu_core::multi::audit_reduced_form;
use infomenu_core::oracle::{build_sat_reduction, Cnf};
use infomenu_core::{
    audit_menu, solve_explicit, solve_implicit, solve_reduced_lp, BrOracle, BuyerType, Error, MatrixOracle, SatOracle,
    TrafficOracle,
};

#[derive(Parser)]
#[command(name = "infomenu", version, about = "Revenue-optimal menus and mechanisms for selling information")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for oracle probing.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// More logging on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal menu for an instance with explicit utilities.
    SolveExplicit {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Near-optimal menu using only a best-response oracle.
    SolveImplicit(ImplicitArgs),
    /// Optimal mechanism for several competing buyers.
    SolveMulti {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Audit a menu or blueprint, or bracket the optimum by grid search.
    Audit(AuditArgs),
    /// Random CNF formula in DIMACS format.
    GenSatInstance {
        #[arg(long, default_value_t = 5)]
        vars: usize,
        #[arg(long, default_value_t = 6)]
        clauses: usize,
        #[arg(long, default_value_t = 3)]
        width: usize,
    },
    /// Random layered two-state road network.
    GenTraffic {
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 2)]
        width: usize,
    },
    /// Query an oracle directly.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Matrix,
    Sat,
    Traffic,
}

#[derive(Args)]
struct OracleSource {
    #[arg(long, value_enum)]
    oracle: OracleKind,
    /// Types (and, for the matrix oracle, utilities).
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    cnf: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Args)]
struct ImplicitArgs {
    #[command(flatten)]
    source: OracleSource,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Signal grid spacing; 1/delta must be an integer.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_GRID_CAP)]
    grid_cap: u128,
    #[arg(long, default_value_t = 1000)]
    max_iterations: usize,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, conflicts_with_all = ["blueprint", "grid_step"])]
    menu: Option<PathBuf>,
    /// Multi-buyer blueprint; `--instance` is then a multi-buyer instance.
    #[arg(long, conflicts_with = "grid_step")]
    blueprint: Option<PathBuf>,
    /// Bracket the optimal revenue with a grid search of this step.
    #[arg(long)]
    grid_step: Option<f64>,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Closed-form optimal revenue of the instance built from a CNF.
    SatOpt {
        #[arg(long)]
        cnf: PathBuf,
    },
    /// Best response to a belief.
    Respond {
        #[command(flatten)]
        source: OracleSource,
        /// Comma-separated probabilities, one per state.
        #[arg(long, value_delimiter = ',', required = true)]
        belief: Vec<f64>,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NumericalFailure(_) | Error::NonConvergence { .. } | Error::BackendUnavailable(_) => 3,
            Error::TooLarge(_) | Error::GridTooLarge { .. } => 4,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure { code: 2, message: format!("cannot read {}: {e}", path.display()) })
}

/// The oracle plus the buyer types it is queried for.
fn load_oracle(src: &OracleSource) -> Result<(Box<dyn BrOracle>, Vec<BuyerType>, Vec<f64>), Failure> {
    let doc = src.instance.as_deref().map(read).transpose()?.map(|t| InstanceDoc::parse(&t)).transpose()?;
    let need = |p: &Option<PathBuf>, flag: &str| -> Result<String, Failure> {
        match p {
            Some(p) => read(p),
            None => Err(Failure { code: 2, message: format!("--oracle needs {flag}") }),
        }
    };
    let uniform = |n: usize| (vec![BuyerType { id: "uniform".into(), prior: vec![1.0 / n as f64; n] }], vec![1.0]);
    let (oracle, default_types): (Box<dyn BrOracle>, _) = match src.oracle {
        OracleKind::Matrix => {
            let doc = doc.as_ref().ok_or(Failure { code: 2, message: "--oracle matrix needs --instance".into() })?;
            let env = doc.environment()?;
            (Box::new(MatrixOracle::from_environment(&env)?), None)
        }
        OracleKind::Sat => {
            let cnf = Cnf::parse_dimacs(&need(&src.cnf, "--cnf")?)?;
            let (instance, ty) = build_sat_reduction(&cnf)?;
            (Box::new(SatOracle::new(instance)?), Some((vec![ty], vec![1.0])))
        }
        OracleKind::Traffic => {
            let oracle = TrafficOracle::parse(&need(&src.graph, "--graph")?)?;
            let n = oracle.num_states();
            (Box::new(oracle), Some(uniform(n)))
        }
    };
    let (types, probs) = match (&doc, default_types) {
        (Some(d), _) => d.buyer_types(),
        (None, Some(t)) => t,
        (None, None) => unreachable!("matrix oracle always has an instance"),
    };
    Ok((oracle, types, probs))
}

fn run(cli: &Cli) -> Result<String, Failure> {
    let out = match &cli.command {
        Command::SolveExplicit { instance } => {
            let env = io::parse_instance(&read(instance)?)?;
            let sol = solve_explicit(&env)?;
            io::to_json(&MenuDoc::new(&sol.menu, Some(&sol.audit)))?
        }
        Command::SolveImplicit(args) => {
            let (oracle, types, probs) = load_oracle(&args.source)?;
            let opts = ImplicitOptions {
                delta: args.delta,
                grid_cap: args.grid_cap,
                max_iterations: args.max_iterations,
                threads: cli.threads,
            };
            let sol = solve_implicit(oracle.as_ref(), &types, &probs, args.epsilon, &opts)?;
            let mut doc = serde_json::to_value(MenuDoc::new(&sol.menu, Some(&sol.audit))).map_err(Error::from_json)?;
            let actions: Vec<Value> =
                sol.actions.per_type.iter().map(|a| serde_json::to_value(a).unwrap_or(Value::Null)).collect();
            doc["stats"] = json!({
                "lp_objective": sol.lp_objective,
                "grid_units": sol.grid.units,
                "grid_columns": sol.grid.num_columns().to_string(),
                "cutting_plane_rounds": sol.iterations,
                "cuts": sol.cuts,
                "oracle_queries": sol.queries,
            });
            doc["actions"] = Value::Array(actions);
            io::to_json(&doc)?
        }
        Command::SolveMulti { instance } => {
            let env = io::parse_multi_instance(&read(instance)?)?;
            let sol = solve_reduced_lp(&env)?;
            io::to_json(&BlueprintDoc::new(&sol.blueprint, Some(&sol.reduced_form), Some(&sol.audit)))?
        }
        Command::Audit(args) => {
            let text = read(&args.instance)?;
            if let Some(bp) = &args.blueprint {
                let env = MultiInstanceDoc::parse(&text)?.environment()?;
                let blueprint = BlueprintDoc::parse(&read(bp)?)?.blueprint(&env)?;
                let rf = blueprint.reduced_form(&env)?;
                io::to_json(&io::report(
                    serde_json::to_value(audit_reduced_form(&env, &rf)).map_err(Error::from_json)?,
                ))?
            } else if let Some(menu) = &args.menu {
                let env = io::parse_instance(&text)?;
                let menu = MenuDoc::parse(&read(menu)?)?.menu()?;
                let report = audit_menu(&env, &menu)?;
                io::to_json(&io::report(serde_json::to_value(report).map_err(Error::from_json)?))?
            } else if let Some(step) = args.grid_step {
                let env = io::parse_instance(&text)?;
                let b = brute_force_menu_search(&env, step)?;
                io::to_json(&io::report(json!({"lower": b.lower, "upper": b.upper})))?
            } else {
                return Err(Failure { code: 2, message: "audit needs --menu, --blueprint or --grid-step".into() });
            }
        }
        Command::GenSatInstance { vars, clauses, width } => Cnf::random(*vars, *clauses, *width, cli.seed)?.to_dimacs(),
        Command::GenTraffic { layers, width } => TrafficOracle::random_layered(*layers, *width, 2, cli.seed)?.to_text(),
        Command::Oracle(OracleCommand::SatOpt { cnf }) => {
            let cnf = Cnf::parse_dimacs(&read(cnf)?)?;
            io::to_json(&io::report(json!({"optimum": sat_reduction_optimum(&cnf)?})))?
        }
        Command::Oracle(OracleCommand::Respond { source, belief }) => {
            let (oracle, _, _) = load_oracle(source)?;
            if belief.len() != oracle.num_states() {
                return Err(Failure { code: 2, message: format!("belief needs {} entries", oracle.num_states()) });
            }
            infomenu_core::market::check_distribution(belief, "belief")?;
            let (action, value) = oracle.respond(belief);
            io::to_json(&io::report(json!({"action": action, "value": value})))?
        }
    };
    Ok(out)
}

trait FromJson {
    fn from_json(e: serde_json::Error) -> Self;
}

impl FromJson for Error {
    fn from_json(e: serde_json::Error) -> Self {
        Error::InvalidInput(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    let result = run(&cli).and_then(|text| match &cli.out {
        Some(path) => fs::write(path, &text)
            .map_err(|e| Failure { code: 2, message: format!("cannot write {}: {e}", path.display()) }),
        None => {
            print!("{text}");
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
