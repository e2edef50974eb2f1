//! `cofam`: fit generalized functional additive mixed models for count
//! curves over areal units, generate synthetic datasets, and run the
//! standalone compositional/density/graph transforms.

mod commands;
mod config;
mod error;
mod ingest;
mod outputs;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cofam", version, about = "Count-curve functional additive mixed models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the configured model and write the model document, effect
    /// tables, Wald table, residuals and run report.
    Fit {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Replace non-positive composition/density values by this fraction
        /// before closure; without it such values are errors.
        #[arg(long, value_name = "EPS")]
        zero_replace: Option<f64>,
        /// Worker threads (>= 1). The fit is deterministic for any value.
        #[arg(long, value_name = "N")]
        threads: Option<usize>,
    },
    /// Generate a seeded synthetic dataset in the exact ingestion formats,
    /// plus the ground truth and a ready-to-run fit configuration.
    Simulate {
        /// TOML configuration with a [simulate] section.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Override the seed in the configuration.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
    /// Standalone file transforms.
    Transform {
        #[command(subcommand)]
        which: Transform,
    },
}

#[derive(Subcommand)]
enum Transform {
    /// Centered log-ratio coordinates of a composition table.
    Clr {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_name = "EPS")]
        zero_replace: Option<f64>,
    },
    /// Pivot isometric log-ratio coordinates of a composition table.
    Ilr {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_name = "EPS")]
        zero_replace: Option<f64>,
    },
    /// Functional clr of a wide density table (grid in the headers).
    ClrDensity {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_name = "EPS")]
        zero_replace: Option<f64>,
    },
    /// Gabriel-graph edge list from a region,x,y coordinate table.
    Graph {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Expand a YYYY-MM-DD `date` column into weekday indicators.
    Weekdays {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Reference day left without an indicator column.
        #[arg(long, value_enum, default_value = "sunday")]
        reference: Weekday,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Weekday {
    Sunday,
    Monday,
    Tuesday,
    Wednesday,
    Thursday,
    Friday,
    Saturday,
}

impl Weekday {
    fn name(self) -> &'static str {
        match self {
            Weekday::Sunday => "sunday",
            Weekday::Monday => "monday",
            Weekday::Tuesday => "tuesday",
            Weekday::Wednesday => "wednesday",
            Weekday::Thursday => "thursday",
            Weekday::Friday => "friday",
            Weekday::Saturday => "saturday",
        }
    }
}

fn run(cli: Cli) -> error::Result<()> {
    match cli.command {
        Command::Fit {
            config,
            out,
            zero_replace,
            threads,
        } => commands::cmd_fit(&config, &out, zero_replace, threads),
        Command::Simulate { config, out, seed } => commands::cmd_simulate(&config, &out, seed),
        Command::Transform { which } => match which {
            Transform::Clr {
                input,
                output,
                zero_replace,
            } => commands::cmd_transform_clr(&input, &output, zero_replace),
            Transform::Ilr {
                input,
                output,
                zero_replace,
            } => commands::cmd_transform_ilr(&input, &output, zero_replace),
            Transform::ClrDensity {
                input,
                output,
                zero_replace,
            } => commands::cmd_transform_clr_density(&input, &output, zero_replace),
            Transform::Graph { input, output } => commands::cmd_transform_graph(&input, &output),
            Transform::Weekdays {
                input,
                output,
                reference,
            } => commands::cmd_weekdays(&input, &output, reference.name()),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
