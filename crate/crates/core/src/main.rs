use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use odos::cli::{execute, finalize_report, write_outputs, Command, OptimizeOverrides};
use odos::config::{load_config, SearchStrategy};
use odos::error::{OdosError, Result};

#[derive(Parser)]
#[command(name = "odos", version, about = "Bayesian optimal design of observational studies")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path prefix; defaults to the configuration's `output`.
    #[arg(long)]
    output: Option<String>,
    /// Leave the wall-clock timestamp out of the report.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Exhaustive,
    Greedy,
    #[value(name = "greedy+exchange")]
    GreedyExchange,
    DesignSearch,
}

impl From<StrategyArg> for SearchStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Exhaustive => SearchStrategy::Exhaustive,
            StrategyArg::Greedy => SearchStrategy::Greedy,
            StrategyArg::GreedyExchange => SearchStrategy::GreedyExchange,
            StrategyArg::DesignSearch => SearchStrategy::DesignSearch,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    SampleSize,
    HierarchicalSizing,
    SubsampleSelection,
    MarkovTiming,
    Remeasurement,
}

impl ScenarioArg {
    fn name(self) -> &'static str {
        match self {
            ScenarioArg::SampleSize => "sample-size",
            ScenarioArg::HierarchicalSizing => "hierarchical-sizing",
            ScenarioArg::SubsampleSelection => "subsample-selection",
            ScenarioArg::MarkovTiming => "markov-timing",
            ScenarioArg::Remeasurement => "remeasurement",
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Expected utility and cost of the configured design.
    Evaluate(Common),
    /// Search for the best plan under a budget.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Search strategy; overrides the search block.
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// Select at most this many units.
        #[arg(long, conflicts_with = "budget_cost")]
        budget_n: Option<usize>,
        /// Maximum plan cost under the configured cost model.
        #[arg(long)]
        budget_cost: Option<f64>,
    },
    /// Value of information of the configured design.
    Voi(Common),
    /// Run one of the built-in scenarios.
    Scenario {
        #[arg(value_enum)]
        name: ScenarioArg,
        #[command(flatten)]
        common: Common,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ODOS_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| OdosError::InvalidArgument(format!("ODOS_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| OdosError::InvalidArgument(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let (common, command) = match cli.command {
        Cmd::Evaluate(c) => (c, Command::Evaluate),
        Cmd::Voi(c) => (c, Command::Voi),
        Cmd::Optimize {
            common,
            strategy,
            budget_n,
            budget_cost,
        } => (
            common,
            Command::Optimize(OptimizeOverrides {
                strategy: strategy.map(Into::into),
                budget_n,
                budget_cost,
            }),
        ),
        Cmd::Scenario { name, common } => (common, Command::Scenario(name.name().into())),
    };
    let (mut cfg, base) = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let output = execute(&cfg, &command, &base)?;
    let timestamp = if common.no_timestamp {
        None
    } else {
        Some(SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
    };
    let report = finalize_report(&cfg, &command, &output, timestamp);
    let prefix = common.output.unwrap_or_else(|| cfg.output.clone());
    write_outputs(&prefix, &report, &output.rows)?;
    eprintln!("odos {}: seed {}, wrote {prefix}.report.json and {prefix}.table.csv", odos::cli::VERSION, cfg.seed);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
