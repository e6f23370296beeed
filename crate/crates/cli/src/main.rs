mod commands;

use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, LevelFilter};
use simplelog::{ColorChoice, CombinedLogger, Config, TermLogger, TerminalMode, WriteLogger};

use rpsaft::domain::DateStamp;
use rpsaft::simulation::{Method, Scenario};

#[derive(Debug, Parser)]
#[command(
    name = "rpsaft",
    version,
    about = "Structural AFT g-estimation and survivor-bias studies"
)]
pub struct Cli {
    /// Directory receiving report files.
    #[arg(
        long,
        global = true,
        env = "RPSAFT_REPORT_DIR",
        default_value = "report"
    )]
    pub out: PathBuf,

    /// Log file; defaults to `<out>/rpsaft.log`.
    #[arg(long, global = true)]
    pub log_file: Option<PathBuf>,

    /// Repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Dataset file (two-section tab-separated format).
    #[arg(long)]
    pub data: PathBuf,

    /// Censoring date for performers without a recorded death.
    #[arg(long, default_value = "2007-07-25", value_parser = parse_date)]
    pub censor_date: DateStamp,
}

#[derive(Debug, Args, Clone)]
pub struct SearchArgs {
    /// Search range for psi as `lo,hi`; defaults to -0.5,0.5 (-1,1 for sensitivity).
    #[arg(long, value_parser = parse_pair_f64, allow_hyphen_values = true)]
    pub range: Option<(f64, f64)>,

    #[arg(long, default_value_t = 0.001)]
    pub step: f64,

    #[arg(long, default_value_t = 0.95)]
    pub level: f64,

    /// Nomination-age basis: `poly3` or `spline:K`.
    #[arg(long, default_value = "poly3", value_parser = commands::parse_basis)]
    pub basis: rpsaft::clogit::NomageBasis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StatusArg {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TimeZeroArg {
    Birthday,
    NominationDay,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// g-estimate psi with its confidence interval and survival advantage.
    Gestimate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Repeat the g-estimation under non-zero theta* values.
    Sensitivity {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        search: SearchArgs,
        /// Odds ratios exp(10 theta*).
        #[arg(
            long = "theta-star-or",
            value_delimiter = ',',
            default_value = "0.5,0.6,0.7,0.8,0.9,1,1.1,1.2,1.3,1.4,1.5"
        )]
        odds_ratios: Vec<f64>,
    },
    /// Cox and person-years comparison of winners with nominees.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Fit a single Cox model with this winner status instead of the table.
        #[arg(long, value_enum, requires = "time_zero")]
        status: Option<StatusArg>,
        #[arg(long, value_enum, requires = "status")]
        time_zero: Option<TimeZeroArg>,
    },
    /// Monte Carlo study of p-values under a no-effect scenario.
    Simulate {
        #[arg(long, default_value = "table3", value_parser = parse_scenario)]
        scenario: Scenario,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 20100101)]
        seed: u64,
        /// Comma-separated methods; defaults to the five-row comparison.
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        methods: Vec<Method>,
        /// Nomination and win caps as `n,w`.
        #[arg(long, value_parser = parse_pair_u32)]
        caps: Option<(u32, u32)>,
    },
    /// Pooled death rates by nomination and win history.
    Simtables {
        #[arg(long, default_value = "table3", value_parser = parse_scenario)]
        scenario: Scenario,
        #[arg(long, default_value = "2,2", value_parser = parse_pair_u32)]
        caps: (u32, u32),
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 20100101)]
        seed: u64,
    },
    /// Latent-time summaries by nomination-age group.
    Diagnose {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, default_value_t = 5)]
        groups: usize,
        /// Use this psi instead of estimating it.
        #[arg(long, allow_hyphen_values = true)]
        psi: Option<f64>,
    },
    /// Write one simulated cohort as a dataset file.
    Synth {
        #[arg(long, default_value = "table3", value_parser = parse_scenario)]
        scenario: Scenario,
        #[arg(long, default_value_t = 20100101)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        rep: u64,
        #[arg(long, default_value = "2007-07-25", value_parser = parse_date)]
        censor_date: DateStamp,
        /// Output dataset path.
        #[arg(long)]
        output: PathBuf,
    },
}

fn parse_date(s: &str) -> Result<DateStamp, String> {
    s.parse()
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: rpsaft::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: rpsaft::Error| e.to_string())
}

fn split_pair(s: &str) -> Result<(&str, &str), String> {
    s.split_once(',')
        .ok_or_else(|| format!("expected two comma-separated values, got `{s}`"))
}

fn parse_pair_f64(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = split_pair(s)?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_pair_u32(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = split_pair(s)?;
    let p = |x: &str| x.trim().parse::<u32>().map_err(|e| format!("`{x}`: {e}"));
    Ok((p(a)?, p(b)?))
}

fn init_logging(cli: &Cli) -> std::io::Result<()> {
    let level = match cli.verbose {
        0 => LevelFilter::Info,
        1 => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    let path = cli
        .log_file
        .clone()
        .unwrap_or_else(|| cli.out.join("rpsaft.log"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let file = File::create(&path)?;
    CombinedLogger::init(vec![
        TermLogger::new(
            level,
            Config::default(),
            TerminalMode::Stderr,
            ColorChoice::Never,
        ),
        WriteLogger::new(level, Config::default(), file),
    ])
    .map_err(std::io::Error::other)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_logging(&cli) {
        eprintln!("error: cannot open log file: {e}");
        return ExitCode::from(1);
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            error!("{msg}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Run(e)) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn pairs_parse_with_negative_values() {
        assert_eq!(parse_pair_f64("-1, 0.5"), Ok((-1.0, 0.5)));
        assert_eq!(parse_pair_u32("2,3"), Ok((2, 3)));
        assert!(parse_pair_f64("0.5").is_err());
        assert!(parse_pair_u32("2,-1").is_err());
    }

    #[test]
    fn range_flag_accepts_a_leading_minus() {
        let cli = Cli::try_parse_from([
            "rpsaft",
            "gestimate",
            "--data",
            "d.tsv",
            "--range",
            "-0.3,0.2",
        ])
        .unwrap();
        let Command::Gestimate { search, .. } = cli.command else {
            panic!("wrong subcommand");
        };
        assert_eq!(search.range, Some((-0.3, 0.2)));
    }
}
