//! End-to-end run: calendar, ingest, flags, imputation, split, merge and
//! outputs. Outputs are staged under temporary names and renamed only when
//! every stage has succeeded.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, Utc};
use serde::Serialize;

use crate::calendar::{default_range, CalendarError, CalendarTable};
use crate::config::{ConfigError, PipelineConfig};
use crate::elexon::{self, IngestError};
use crate::io::{checksum_line, md5_hex, sha256_hex, StagedOutputs};
use crate::merge::{
    compute_espeni, compute_split_ratio, merge_tables, split_other_biomass, write_espeni_csv, MergeError,
    MergedTable, RatioMode, SplitRatio, Variant,
};
use crate::ng;
use crate::quality::{apply_flags, detect_zero_drops, impute, merge_flags, FlagSet, QualityError};
use crate::reporting::{
    aggregate_energy, energy_csv, error_summary, error_summary_csv, flags_from_merged, Clock, Granularity,
    ReportError,
};
use crate::table::{SourceTable, TableError};

pub const ELEXON_GLOB_PREFIX: &str = "fuelhh";
pub const ELEXON_PARSED: &str = "elexon_parsed.csv";
pub const NG_PARSED: &str = "ng_parsed.csv";
pub const ERROR_SUMMARY: &str = "error_summary.csv";
pub const ANNUAL_ENERGY: &str = "annual_energy.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Calendar,
    IngestElexon,
    IngestNg,
    Detect,
    Flags,
    Impute,
    Split,
    Merge,
    Report,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Calendar => "calendar",
            Stage::IngestElexon => "ingest elexon",
            Stage::IngestNg => "ingest ng",
            Stage::Detect => "detect",
            Stage::Flags => "flags",
            Stage::Impute => "impute",
            Stage::Split => "split",
            Stage::Merge => "merge",
            Stage::Report => "report",
            Stage::Write => "write",
        };
        f.write_str(name)
    }
}

/// Broad failure class, mapped onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Inputs parse but violate a rule (gaps, flag conflicts, bad ranges).
    Validation,
    /// Missing, unreadable or malformed inputs.
    Input,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Validation => 1,
            ErrorClass::Input => 2,
        }
    }
}

pub trait Classify {
    fn class(&self) -> ErrorClass;
}

impl Classify for CalendarError {
    fn class(&self) -> ErrorClass {
        match self {
            CalendarError::UnsupportedRange { .. }
            | CalendarError::InvertedRange { .. }
            | CalendarError::PeriodOutOfRange { .. }
            | CalendarError::MissingKey(_)
            | CalendarError::DateOutOfRange(_) => ErrorClass::Validation,
            _ => ErrorClass::Input,
        }
    }
}

impl Classify for TableError {
    fn class(&self) -> ErrorClass {
        match self {
            TableError::LengthMismatch { .. } | TableError::Unordered(_) | TableError::DuplicateColumn(_) => {
                ErrorClass::Validation
            }
            TableError::Calendar(e) => e.class(),
            _ => ErrorClass::Input,
        }
    }
}

impl Classify for IngestError {
    fn class(&self) -> ErrorClass {
        match self {
            IngestError::Gap { .. } | IngestError::MissingCalendarCoverage { .. } => ErrorClass::Validation,
            IngestError::Table(e) => e.class(),
            _ => ErrorClass::Input,
        }
    }
}

impl Classify for QualityError {
    fn class(&self) -> ErrorClass {
        match self {
            QualityError::Csv(_) | QualityError::Io(_) | QualityError::FlagFile { .. } => ErrorClass::Input,
            QualityError::Calendar(e) => e.class(),
            _ => ErrorClass::Validation,
        }
    }
}

impl Classify for MergeError {
    fn class(&self) -> ErrorClass {
        match self {
            MergeError::InvalidFraction(_) | MergeError::MissingColumn(_) | MergeError::WrongSource { .. } => {
                ErrorClass::Validation
            }
            MergeError::Calendar(e) => e.class(),
            _ => ErrorClass::Input,
        }
    }
}

impl Classify for ReportError {
    fn class(&self) -> ErrorClass {
        match self {
            ReportError::Csv(_) | ReportError::Beis { .. } => ErrorClass::Input,
            ReportError::Quality(e) => e.class(),
            _ => ErrorClass::Validation,
        }
    }
}

impl Classify for ConfigError {
    fn class(&self) -> ErrorClass {
        match self {
            ConfigError::Invalid(_) => ErrorClass::Validation,
            _ => ErrorClass::Input,
        }
    }
}

impl Classify for std::io::Error {
    fn class(&self) -> ErrorClass {
        ErrorClass::Input
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub class: ErrorClass,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            stage,
            class,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class.exit_code()
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

/// Maps any classified error onto a stage-named pipeline error.
pub fn at<E: Classify + fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::new(stage, e.class(), e.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub rows: usize,
    pub ng_rows: usize,
    pub elexon_flags: usize,
    pub ng_flags: usize,
    pub skipped_flags: usize,
    pub recreated_rows: usize,
    pub biomass_fraction: f64,
    pub ratio_mode: RatioMode,
    pub outputs: Vec<PathBuf>,
}

/// Files in `dir` whose lower-cased name starts with `prefix` and ends in
/// `.csv`, ascending by filename.
pub fn discover_files(dir: &Path, prefix: &str) -> std::io::Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().to_lowercase();
        if name.starts_with(prefix) && name.ends_with(".csv") {
            found.push(entry.path());
        }
    }
    found.sort_by_key(|p| p.file_name().map(|n| n.to_os_string()));
    Ok(found)
}

pub fn read_files(paths: &[PathBuf]) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, fs::read(p)?))
        })
        .collect()
}

/// Reads the calendar file when it exists, otherwise generates it. The flag
/// tells whether it was generated (and so should be written).
pub fn load_or_generate_calendar(config: &PipelineConfig, today: NaiveDate) -> Result<(CalendarTable, bool), PipelineError> {
    let err = at::<CalendarError>(Stage::Calendar);
    if config.calendar_path.exists() {
        let file = fs::File::open(&config.calendar_path).map_err(|e| err(e.into()))?;
        return Ok((CalendarTable::read_csv(std::io::BufReader::new(file)).map_err(&err)?, false));
    }
    let (default_start, default_end) = default_range(today);
    let start = config.calendar_start.unwrap_or(default_start);
    let end = config.calendar_end.unwrap_or(default_end);
    Ok((CalendarTable::generate(start, end).map_err(&err)?, true))
}

pub fn ingest_elexon_dir(dir: &Path, calendar: &CalendarTable) -> Result<SourceTable, PipelineError> {
    let files = discover_files(dir, ELEXON_GLOB_PREFIX)
        .and_then(|paths| read_files(&paths))
        .map_err(|e| PipelineError::new(Stage::IngestElexon, ErrorClass::Input, format!("{}: {e}", dir.display())))?;
    if files.is_empty() {
        return Err(PipelineError::new(
            Stage::IngestElexon,
            ErrorClass::Input,
            format!("no {ELEXON_GLOB_PREFIX}*.csv files in {}", dir.display()),
        ));
    }
    elexon::ingest_files(&files, calendar).map_err(at(Stage::IngestElexon))
}

pub fn ingest_ng_dir(
    dir: &Path,
    calendar: &CalendarTable,
    aliases: &std::collections::BTreeMap<String, String>,
) -> Result<SourceTable, PipelineError> {
    let files = discover_files(dir, "")
        .and_then(|paths| read_files(&paths))
        .map_err(|e| PipelineError::new(Stage::IngestNg, ErrorClass::Input, format!("{}: {e}", dir.display())))?;
    if files.is_empty() {
        return Err(PipelineError::new(
            Stage::IngestNg,
            ErrorClass::Input,
            format!("no *.csv files in {}", dir.display()),
        ));
    }
    ng::ingest_files(&files, calendar, aliases).map_err(at(Stage::IngestNg))
}

/// Manual flag file; a missing file is an empty set.
pub fn read_flag_file(path: &Path) -> Result<FlagSet, PipelineError> {
    if !path.exists() {
        tracing::info!(path = %path.display(), "no manual flag file; using detected flags only");
        return Ok(FlagSet::new());
    }
    let file = fs::File::open(path).map_err(|e| at::<QualityError>(Stage::Flags)(e.into()))?;
    FlagSet::read_csv(std::io::BufReader::new(file)).map_err(|e| {
        PipelineError::new(Stage::Flags, e.class(), format!("{}: {e}", path.display()))
    })
}

/// Both variants of the merged dataset for already-ingested tables.
pub struct Built {
    pub raw: MergedTable,
    pub clean: MergedTable,
    pub flags: FlagSet,
    pub ratio: SplitRatio,
    pub skipped_flags: usize,
}

pub fn build_datasets(
    config: &PipelineConfig,
    elexon: &SourceTable,
    ng: &SourceTable,
    manual: &FlagSet,
) -> Result<Built, PipelineError> {
    let auto = detect_zero_drops(elexon, &config.detector_categories, "").map_err(at(Stage::Detect))?;
    let flags = merge_flags(&auto, manual);

    let elexon_applied = apply_flags(elexon, &flags);
    let ng_applied = apply_flags(ng, &flags);
    let skipped_flags = elexon_applied.skipped.len() + ng_applied.skipped.len();
    let elexon_clean = impute(&elexon_applied.erased).map_err(at(Stage::Impute))?;
    let ng_clean = impute(&ng_applied.erased).map_err(at(Stage::Impute))?;

    let ratio = match config.biomass_ratio_mode {
        RatioMode::Pinned => SplitRatio::pinned(config.pinned_biomass_fraction).map_err(at(Stage::Split))?,
        RatioMode::Computed => compute_split_ratio(&elexon_clean),
    };
    tracing::info!(fraction = ratio.biomass_fraction, mode = ?ratio.mode, "biomass split ratio");
    let elexon_raw_split = split_other_biomass(&elexon_applied.raw, &ratio);
    let elexon_clean_split = split_other_biomass(&elexon_clean, &ratio);

    let raw = compute_espeni(merge_tables(&elexon_raw_split, &ng_applied.raw, Variant::Raw).map_err(at(Stage::Merge))?);
    let clean = compute_espeni(merge_tables(&elexon_clean_split, &ng_clean, Variant::Clean).map_err(at(Stage::Merge))?);
    Ok(Built {
        raw,
        clean,
        flags,
        ratio,
        skipped_flags,
    })
}

fn stage_with_checksums(
    staged: &mut StagedOutputs,
    path: &Path,
    bytes: &[u8],
    legacy_md5: bool,
) -> std::io::Result<Vec<PathBuf>> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let sha_path = path.with_file_name(format!("{name}.sha256"));
    staged.stage(path, bytes)?;
    staged.stage(&sha_path, checksum_line(&sha256_hex(bytes), &name).as_bytes())?;
    let mut written = vec![path.to_path_buf(), sha_path];
    if legacy_md5 {
        let md5_path = path.with_file_name(format!("{name}.md5"));
        staged.stage(&md5_path, checksum_line(&md5_hex(bytes), &name).as_bytes())?;
        written.push(md5_path);
    }
    Ok(written)
}

/// Runs every stage with today's date as the default calendar anchor.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineSummary, PipelineError> {
    run_pipeline_on(config, Utc::now().date_naive())
}

pub fn run_pipeline_on(config: &PipelineConfig, today: NaiveDate) -> Result<PipelineSummary, PipelineError> {
    config.validate().map_err(at(Stage::Config))?;
    let (calendar, generated) = load_or_generate_calendar(config, today)?;
    let elexon = ingest_elexon_dir(&config.elexon_dir, &calendar)?;
    let ng = ingest_ng_dir(&config.ng_dir, &calendar, &config.ng_aliases)?;
    tracing::info!(elexon_rows = elexon.len(), ng_rows = ng.len(), "ingested");
    let manual = read_flag_file(&config.flag_path)?;
    let built = build_datasets(config, &elexon, &ng, &manual)?;

    let summary_report = error_summary(&flags_from_merged(&built.raw), &calendar, built.raw.len())
        .map_err(at(Stage::Report))?;
    let annual = aggregate_energy(&built.clean, "POWER_ESPENI_MW", Granularity::Year, Clock::Local)
        .map_err(at(Stage::Report))?;

    let write_err = at::<std::io::Error>(Stage::Write);
    let mut staged = StagedOutputs::new();
    let mut outputs = Vec::new();
    if generated {
        let mut bytes = Vec::new();
        calendar.write_csv(&mut bytes).map_err(at(Stage::Calendar))?;
        staged.stage(&config.calendar_path, &bytes).map_err(&write_err)?;
        outputs.push(config.calendar_path.clone());
    }
    for table in [&built.raw, &built.clean] {
        let mut bytes = Vec::new();
        write_espeni_csv(table, &mut bytes).map_err(at(Stage::Write))?;
        let path = config.out_dir.join(table.variant.file_name());
        outputs.extend(stage_with_checksums(&mut staged, &path, &bytes, config.legacy_md5).map_err(&write_err)?);
    }
    if config.write_intermediate {
        for (table, name) in [(&elexon, ELEXON_PARSED), (&ng, NG_PARSED)] {
            let mut bytes = Vec::new();
            table.write_csv(&mut bytes).map_err(at(Stage::Write))?;
            let path = config.out_dir.join(name);
            staged.stage(&path, &bytes).map_err(&write_err)?;
            outputs.push(path);
        }
    }
    for (name, text) in [
        (ERROR_SUMMARY, error_summary_csv(&summary_report)),
        (ANNUAL_ENERGY, energy_csv(&annual)),
    ] {
        let path = config.out_dir.join(name);
        staged.stage(&path, text.as_bytes()).map_err(&write_err)?;
        outputs.push(path);
    }
    staged.commit().map_err(&write_err)?;

    Ok(PipelineSummary {
        rows: built.raw.len(),
        ng_rows: ng.len(),
        elexon_flags: summary_report.elexm.total,
        ng_flags: summary_report.ngem.total,
        skipped_flags: built.skipped_flags,
        recreated_rows: elexon.recreated_keys().len(),
        biomass_fraction: built.ratio.biomass_fraction,
        ratio_mode: built.ratio.mode,
        outputs,
    })
}
