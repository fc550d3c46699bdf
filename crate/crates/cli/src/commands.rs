use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use espeni_core::calendar::{format_utc, CalendarTable};
use espeni_core::config::{ConfigError, PipelineConfig};
use espeni_core::io::write_atomic;
use espeni_core::merge::{read_espeni_csv, MergedTable, Variant, ESPENI_HEADER};
use espeni_core::ng::default_aliases;
use espeni_core::pipeline::{
    ingest_elexon_dir, ingest_ng_dir, read_flag_file, run_pipeline, Classify, PipelineError,
};
use espeni_core::quality::{default_categories, detect_zero_drops, merge_flags};
use espeni_core::reporting::{
    aggregate_energy, compare_beis, comparison_csv, comparison_text, error_summary, error_summary_csv,
    error_summary_text, flags_from_merged, range_csv, range_summary, read_beis_csv, Clock, Granularity,
};
use espeni_core::table::SourceTable;

use crate::fetch::{fetch_source, FetchError, FetchStatus};
use crate::review::{serve, ReviewState};

#[derive(Debug, Parser)]
#[command(name = "espeni", version, about = "Build the half-hourly ESPENI demand dataset")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IngestSource {
    Elexon,
    Ng,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FetchSource {
    Ng,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GranularityArg {
    Year,
    Quarter,
    Month,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClockArg {
    Utc,
    Local,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the settlement calendar for a date range.
    Calendar {
        #[arg(long)]
        start: NaiveDate,
        #[arg(long)]
        end: NaiveDate,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and combine one source's files into its intermediate table.
    Ingest {
        source: IngestSource,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        calendar: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config supplying the National Grid column aliases.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Flag zero-drop rows of a parsed Elexon table into a flag file.
    Detect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        flags: PathBuf,
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<String>>,
    },
    /// Run the full pipeline.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Error statistics and column ranges of a raw ESPENI file.
    Stats {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Compare ESPENI energy totals with a BEIS monthly series.
    Compare {
        #[arg(long)]
        espeni: PathBuf,
        #[arg(long)]
        beis: PathBuf,
        #[arg(long, value_enum, default_value = "quarter")]
        granularity: GranularityArg,
        #[arg(long, value_enum, default_value = "local")]
        clock: ClockArg,
        /// Which BEIS series the file holds, echoed in the report header.
        #[arg(long, default_value = "user supplied ET 5.5 series")]
        series_note: String,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Serve the review API.
    Review {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
    },
    /// Download configured source files.
    Fetch {
        source: FetchSource,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replace existing files whose content changed.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn classified<E: Classify + std::fmt::Display>(context: &str, e: E) -> Self {
        Self {
            code: e.class().exit_code(),
            message: format!("{context}: {e}"),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::classified("config", e)
    }
}

impl From<FetchError> for CliError {
    fn from(e: FetchError) -> Self {
        Self {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::input(format!("{}: {e}", parent.display())))?;
    }
    write_atomic(path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<fs::File>, CliError> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn read_calendar(path: &Path) -> Result<CalendarTable, CliError> {
    CalendarTable::read_csv(open(path)?).map_err(|e| CliError::classified(&path.display().to_string(), e))
}

fn read_merged(path: &Path, variant: Variant) -> Result<MergedTable, CliError> {
    read_espeni_csv(open(path)?, variant).map_err(|e| CliError::classified(&path.display().to_string(), e))
}

/// Runs one command; the caller maps the error onto the exit code.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calendar { start, end, out } => {
            let table = CalendarTable::generate(start, end).map_err(|e| CliError::classified("calendar", e))?;
            let mut bytes = Vec::new();
            table.write_csv(&mut bytes).map_err(|e| CliError::classified("calendar", e))?;
            write_out(&out, &bytes)?;
            println!("{} entries written to {}", table.len(), out.display());
        }
        Command::Ingest {
            source,
            dir,
            calendar,
            out,
            config,
        } => {
            let calendar = read_calendar(&calendar)?;
            let table = match source {
                IngestSource::Elexon => ingest_elexon_dir(&dir, &calendar)?,
                IngestSource::Ng => {
                    let aliases = match config {
                        Some(path) => PipelineConfig::load(&path)?.ng_aliases,
                        None => default_aliases(),
                    };
                    ingest_ng_dir(&dir, &calendar, &aliases)?
                }
            };
            let mut bytes = Vec::new();
            table.write_csv(&mut bytes).map_err(|e| CliError::classified("ingest", e))?;
            write_out(&out, &bytes)?;
            println!("{} rows written to {}", table.len(), out.display());
            if !table.recreated_keys().is_empty() {
                let keys: Vec<String> = table.recreated_keys().iter().map(|k| k.to_string()).collect();
                println!("re-created single missing rows: {}", keys.join(", "));
            }
        }
        Command::Detect {
            input,
            flags,
            categories,
        } => {
            let table = SourceTable::read_csv(open(&input)?, &input.display().to_string())
                .map_err(|e| CliError::classified("detect", e))?;
            let categories = categories.unwrap_or_else(default_categories);
            let auto = detect_zero_drops(&table, &categories, &format_utc(Utc::now()))
                .map_err(|e| CliError::classified("detect", e))?;
            let existing = read_flag_file(&flags)?;
            let merged = merge_flags(&auto, &existing);
            let mut bytes = Vec::new();
            merged.write_csv(&mut bytes).map_err(|e| CliError::classified("detect", e))?;
            write_out(&flags, &bytes)?;
            println!(
                "{} rows detected; {} entries in {}",
                auto.len(),
                merged.len(),
                flags.display()
            );
        }
        Command::Run { config } => {
            let config = PipelineConfig::load_default(config.as_deref())?;
            let summary = run_pipeline(&config)?;
            println!(
                "{} rows; flags ELEXM {} NGEM {}; {} flag(s) for unknown keys skipped; biomass fraction {} ({:?})",
                summary.rows,
                summary.elexon_flags,
                summary.ng_flags,
                summary.skipped_flags,
                summary.biomass_fraction,
                summary.ratio_mode
            );
            for path in &summary.outputs {
                println!("wrote {}", path.display());
            }
        }
        Command::Stats { raw, format } => {
            let table = read_merged(&raw, Variant::Raw)?;
            let (Some(first), Some(last)) = (table.records.first(), table.records.last()) else {
                println!("empty table");
                return Ok(());
            };
            let calendar = CalendarTable::generate(first.key.settlement_date(), last.key.settlement_date())
                .map_err(|e| CliError::classified("stats", e))?;
            let summary = error_summary(&flags_from_merged(&table), &calendar, table.len())
                .map_err(|e| CliError::classified("stats", e))?;
            let columns: Vec<(&str, Vec<Option<i64>>)> = ESPENI_HEADER[6..]
                .iter()
                .map(|c| (*c, table.column_values(c).unwrap_or_default()))
                .collect();
            let ranges = range_summary(columns.iter().map(|(c, v)| (*c, v.as_slice())));
            match format {
                Format::Csv => print!("{}\n{}", error_summary_csv(&summary), range_csv(&ranges)),
                Format::Text => {
                    println!("{}", error_summary_text(&summary));
                    for r in &ranges {
                        let show = |v: Option<i64>| v.map_or_else(|| "NaN".to_string(), |v| v.to_string());
                        println!("{:<42} min {:>8} max {:>8} missing {}", r.column, show(r.min), show(r.max), r.missing);
                    }
                }
            }
        }
        Command::Compare {
            espeni,
            beis,
            granularity,
            clock,
            series_note,
            format,
        } => {
            let table = read_merged(&espeni, Variant::Clean)?;
            let beis = read_beis_csv(open(&beis)?).map_err(|e| CliError::classified("compare", e))?;
            let granularity = match granularity {
                GranularityArg::Year => Granularity::Year,
                GranularityArg::Quarter => Granularity::Quarter,
                GranularityArg::Month => Granularity::Month,
            };
            let clock = match clock {
                ClockArg::Utc => Clock::Utc,
                ClockArg::Local => Clock::Local,
            };
            let aggregates = aggregate_energy(&table, "POWER_ESPENI_MW", granularity, clock)
                .map_err(|e| CliError::classified("compare", e))?;
            let cmp = compare_beis(&aggregates, &beis, granularity);
            if cmp.rows.is_empty() {
                eprintln!("warning: no complete bucket overlaps the BEIS series");
            }
            match format {
                Format::Csv => print!("{}", comparison_csv(&cmp, &series_note)),
                Format::Text => print!("{}", comparison_text(&cmp, &series_note)),
            }
        }
        Command::Review { config, listen } => {
            let config = PipelineConfig::load_default(config.as_deref())?;
            let listen = listen.unwrap_or_else(|| config.listen_address.clone());
            let state = ReviewState::load(&config)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::input(e.to_string()))?;
            runtime
                .block_on(serve(state, &listen))
                .map_err(|e| CliError::input(format!("review service on {listen}: {e}")))?;
        }
        Command::Fetch { source, config, force } => {
            let config = PipelineConfig::load_default(config.as_deref())?;
            let name = match source {
                FetchSource::Ng => "ng",
            };
            for f in fetch_source(&config, name, force)? {
                let status = match f.status {
                    FetchStatus::Saved => "saved",
                    FetchStatus::Unchanged => "unchanged",
                    FetchStatus::Replaced => "replaced",
                };
                println!("{status} {} sha256 {}", f.path.display(), f.sha256);
            }
        }
    }
    Ok(())
}
