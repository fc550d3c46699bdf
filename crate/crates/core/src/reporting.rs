//! Validation reports: energy totals, comparison against BEIS monthly
//! supply, error statistics and column ranges.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{periods_in_day, CalendarTable};
use crate::elexon::ColumnRange;
use crate::merge::MergedTable;
use crate::quality::{enumerate_blocks, FlagEntry, FlagSet, QualityError};
use crate::table::{Source, SourceTable};

/// Share of buckets expected within this many percent of BEIS.
pub const BEIS_TOLERANCE_PCT: f64 = 4.0;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("unknown granularity {0:?} (expected year, quarter or month)")]
    UnknownGranularity(String),
    #[error("unknown clock {0:?} (expected utc or local)")]
    UnknownClock(String),
    #[error("BEIS file row {row}: {message}")]
    Beis { row: usize, message: String },
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Year,
    Quarter,
    Month,
}

impl FromStr for Granularity {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "year" => Ok(Granularity::Year),
            "quarter" => Ok(Granularity::Quarter),
            "month" => Ok(Granularity::Month),
            other => Err(ReportError::UnknownGranularity(other.to_string())),
        }
    }
}

impl Granularity {
    /// Bucket label for a `YYYY-MM...` date text.
    pub fn bucket(self, date_text: &str) -> String {
        let year = &date_text[..4];
        match self {
            Granularity::Year => year.to_string(),
            Granularity::Month => date_text[..7].to_string(),
            Granularity::Quarter => {
                let month: u32 = date_text[5..7].parse().unwrap_or(1);
                format!("{year}-Q{}", (month - 1) / 3 + 1)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    Utc,
    Local,
}

impl FromStr for Clock {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "utc" => Ok(Clock::Utc),
            "local" => Ok(Clock::Local),
            other => Err(ReportError::UnknownClock(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyAggregate {
    pub bucket: String,
    pub energy_twh: f64,
    pub source_column: String,
    /// Σ MW over the bucket's half-hours; MWh = mw_sum / 2.
    pub mw_sum: i64,
    pub rows: usize,
    pub missing: usize,
    /// Half-hours the bucket holds on its clock.
    pub expected_rows: usize,
}

impl EnergyAggregate {
    pub fn energy_mwh(&self) -> f64 {
        self.mw_sum as f64 * 0.5
    }

    pub fn is_complete(&self) -> bool {
        self.rows == self.expected_rows && self.missing == 0
    }
}

fn mw_sum_to_twh(mw_sum: i64) -> f64 {
    mw_sum as f64 * 0.5 / 1e6
}

fn expected_rows(bucket_dates: (NaiveDate, NaiveDate), clock: Clock) -> usize {
    let (first, last) = bucket_dates;
    first
        .iter_days()
        .take_while(|d| *d <= last)
        .map(|d| match clock {
            Clock::Local => usize::from(periods_in_day(d)),
            Clock::Utc => 48,
        })
        .sum()
}

fn bucket_span(bucket: &str, granularity: Granularity) -> (NaiveDate, NaiveDate) {
    let year: i32 = bucket[..4].parse().expect("bucket starts with a year");
    let (first_month, months) = match granularity {
        Granularity::Year => (1, 12),
        Granularity::Quarter => {
            let q: u32 = bucket[6..].parse().expect("quarter label");
            ((q - 1) * 3 + 1, 3)
        }
        Granularity::Month => (bucket[5..7].parse().expect("month label"), 1),
    };
    let first = NaiveDate::from_ymd_opt(year, first_month, 1).expect("valid bucket start");
    let next = first
        .checked_add_months(chrono::Months::new(months))
        .expect("representable bucket end");
    (first, next.pred_opt().unwrap())
}

/// Energy per bucket: Σ MW · 0.5 h, reported in TWh. Buckets follow the
/// calendar of the chosen clock.
pub fn aggregate_energy(
    table: &MergedTable,
    column: &str,
    granularity: Granularity,
    clock: Clock,
) -> Result<Vec<EnergyAggregate>, ReportError> {
    let values = table
        .column_values(column)
        .ok_or_else(|| ReportError::UnknownColumn(column.to_string()))?;
    let mut buckets: BTreeMap<String, (i64, usize, usize)> = BTreeMap::new();
    for (record, value) in table.records.iter().zip(values) {
        let stamp = match clock {
            Clock::Utc => &record.utc,
            Clock::Local => &record.localtime,
        };
        let entry = buckets.entry(granularity.bucket(stamp)).or_default();
        entry.0 += value.unwrap_or(0);
        entry.1 += 1;
        entry.2 += usize::from(value.is_none());
    }
    Ok(buckets
        .into_iter()
        .map(|(bucket, (mw_sum, rows, missing))| {
            let expected_rows = expected_rows(bucket_span(&bucket, granularity), clock);
            EnergyAggregate {
                energy_twh: mw_sum_to_twh(mw_sum),
                source_column: column.to_string(),
                bucket,
                mw_sum,
                rows,
                missing,
                expected_rows,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeisMonthly {
    pub month: String,
    pub supply_gwh: f64,
}

/// Reads the two column `month,supply_gwh` file.
pub fn read_beis_csv<R: Read>(reader: R) -> Result<Vec<BeisMonthly>, ReportError> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers: Vec<String> = csv.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers != ["month", "supply_gwh"] {
        return Err(ReportError::Beis {
            row: 1,
            message: "expected header month,supply_gwh".to_string(),
        });
    }
    let mut out: Vec<BeisMonthly> = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let bad = |message: String| ReportError::Beis { row, message };
        let month = record[0].trim().to_string();
        if NaiveDate::parse_from_str(&format!("{month}-01"), "%Y-%m-%d").is_err() || month.len() != 7 {
            return Err(bad(format!("month {month:?} is not YYYY-MM")));
        }
        let supply_gwh: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("supply {:?} is not a number", &record[1])))?;
        if !supply_gwh.is_finite() || supply_gwh < 0.0 {
            return Err(bad(format!("supply {supply_gwh} must be a non-negative number")));
        }
        if out.iter().any(|m| m.month == month) {
            return Err(bad(format!("duplicate month {month}")));
        }
        out.push(BeisMonthly { month, supply_gwh });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub bucket: String,
    pub espeni_gwh: f64,
    pub beis_gwh: f64,
    pub pct_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeisComparison {
    pub granularity: Granularity,
    pub rows: Vec<ComparisonRow>,
    pub tolerance_pct: f64,
    pub within_tolerance: usize,
}

impl BeisComparison {
    pub fn share_within(&self, tolerance_pct: f64) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.pct_diff.abs() <= tolerance_pct).count() as f64 / self.rows.len() as f64
    }
}

/// pct_diff = 100 · (ESPENI − BEIS) / BEIS per bucket present in both series.
/// Only complete ESPENI buckets and BEIS buckets with every month present
/// are compared.
pub fn compare_beis(espeni: &[EnergyAggregate], beis: &[BeisMonthly], granularity: Granularity) -> BeisComparison {
    let mut beis_buckets: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for m in beis {
        let entry = beis_buckets.entry(granularity.bucket(&format!("{}-01", m.month))).or_default();
        entry.0 += m.supply_gwh;
        entry.1 += 1;
    }
    let months_needed = match granularity {
        Granularity::Year => 12,
        Granularity::Quarter => 3,
        Granularity::Month => 1,
    };
    let rows: Vec<ComparisonRow> = espeni
        .iter()
        .filter(|a| a.is_complete())
        .filter_map(|a| {
            let (beis_gwh, months) = *beis_buckets.get(&a.bucket)?;
            if months != months_needed || beis_gwh <= 0.0 {
                return None;
            }
            let espeni_gwh = a.energy_twh * 1000.0;
            Some(ComparisonRow {
                bucket: a.bucket.clone(),
                espeni_gwh,
                beis_gwh,
                pct_diff: 100.0 * (espeni_gwh - beis_gwh) / beis_gwh,
            })
        })
        .collect();
    if rows.is_empty() {
        tracing::warn!("no overlapping complete buckets between ESPENI and BEIS");
    }
    let within_tolerance = rows.iter().filter(|r| r.pct_diff.abs() <= BEIS_TOLERANCE_PCT).count();
    BeisComparison {
        granularity,
        rows,
        tolerance_pct: BEIS_TOLERANCE_PCT,
        within_tolerance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct SourceErrorStats {
    pub total: usize,
    pub percentage: f64,
    /// block length -> occurrences
    pub histogram: BTreeMap<usize, usize>,
    pub block_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub total_rows: usize,
    /// year -> (ELEXM, NGEM) counts
    pub per_year: BTreeMap<i32, (usize, usize)>,
    pub elexm: SourceErrorStats,
    pub ngem: SourceErrorStats,
}

impl ErrorSummary {
    pub fn for_source(&self, source: Source) -> &SourceErrorStats {
        match source {
            Source::Elexm => &self.elexm,
            Source::Ngem => &self.ngem,
        }
    }
}

/// Flag-0 rows of a merged table as a flag set.
pub fn flags_from_merged(table: &MergedTable) -> FlagSet {
    let mut flags = FlagSet::new();
    for r in &table.records {
        let mut add = |source| {
            flags.insert(FlagEntry::new(source, r.key, 0, None, "").expect("zero is a valid flag"));
        };
        if r.elexm_rowflag == 0 {
            add(Source::Elexm);
        }
        if r.ngem_rowflag == Some(0) {
            add(Source::Ngem);
        }
    }
    flags
}

/// Per-year counts, totals, percentage of rows and block-length histogram.
pub fn error_summary(flags: &FlagSet, calendar: &CalendarTable, total_rows: usize) -> Result<ErrorSummary, ReportError> {
    let mut per_year: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for e in flags.errors() {
        let counts = per_year.entry(e.key.settlement_date().year()).or_default();
        match e.source {
            Source::Elexm => counts.0 += 1,
            Source::Ngem => counts.1 += 1,
        }
    }
    let blocks = enumerate_blocks(flags, calendar)?;
    let stats = |source: Source| {
        let mut histogram = BTreeMap::new();
        let mut total = 0;
        let mut block_count = 0;
        for b in blocks.iter().filter(|b| b.source == source) {
            *histogram.entry(b.length).or_insert(0) += 1;
            total += b.length;
            block_count += 1;
        }
        SourceErrorStats {
            total,
            percentage: if total_rows == 0 { 0.0 } else { 100.0 * total as f64 / total_rows as f64 },
            histogram,
            block_count,
        }
    };
    Ok(ErrorSummary {
        total_rows,
        per_year,
        elexm: stats(Source::Elexm),
        ngem: stats(Source::Ngem),
    })
}

/// Min, max and missing count for each named column.
pub fn range_summary<'a>(columns: impl IntoIterator<Item = (&'a str, &'a [Option<i64>])>) -> Vec<ColumnRange> {
    columns
        .into_iter()
        .map(|(name, values)| ColumnRange {
            column: name.to_string(),
            min: values.iter().flatten().min().copied(),
            max: values.iter().flatten().max().copied(),
            missing: values.iter().filter(|v| v.is_none()).count(),
        })
        .collect()
}

/// [`range_summary`] over named columns of a source table (bare or prefixed names).
pub fn range_summary_table(table: &SourceTable, columns: &[&str]) -> Result<Vec<ColumnRange>, ReportError> {
    let selected = columns
        .iter()
        .map(|name| {
            let bare = crate::table::strip_power_column_name(table.source(), name).unwrap_or(name);
            table
                .column(bare)
                .map(|c| (*name, c.values.as_slice()))
                .ok_or_else(|| ReportError::UnknownColumn(name.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(range_summary(selected))
}

/// Six significant figures.
pub fn sig6(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{value}");
    }
    let magnitude = value.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{value:.decimals$}")
}

pub fn energy_csv(aggregates: &[EnergyAggregate]) -> String {
    let mut out = String::from("bucket,source_column,energy_twh,rows,expected_rows,missing\n");
    for a in aggregates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            a.bucket,
            a.source_column,
            sig6(a.energy_twh),
            a.rows,
            a.expected_rows,
            a.missing
        );
    }
    out
}

pub fn energy_text(aggregates: &[EnergyAggregate]) -> String {
    let mut out = String::new();
    for a in aggregates {
        let flag = if a.is_complete() { "" } else { "  (partial)" };
        let _ = writeln!(out, "{:<8} {:>12} TWh  {}{}", a.bucket, sig6(a.energy_twh), a.source_column, flag);
    }
    out
}

pub fn comparison_csv(cmp: &BeisComparison, series_note: &str) -> String {
    let mut out = format!("# BEIS series: {series_note}\nbucket,espeni_gwh,beis_gwh,pct_diff\n");
    for r in &cmp.rows {
        let _ = writeln!(out, "{},{},{},{:.3}", r.bucket, sig6(r.espeni_gwh), sig6(r.beis_gwh), r.pct_diff);
    }
    out
}

pub fn comparison_text(cmp: &BeisComparison, series_note: &str) -> String {
    let mut out = format!("BEIS series: {series_note}\n");
    for r in &cmp.rows {
        let _ = writeln!(
            out,
            "{:<8} ESPENI {:>10} GWh  BEIS {:>10} GWh  {:+.2}%",
            r.bucket,
            sig6(r.espeni_gwh),
            sig6(r.beis_gwh),
            r.pct_diff
        );
    }
    let _ = writeln!(
        out,
        "{} of {} buckets within ±{}% ({:.1}%)",
        cmp.within_tolerance,
        cmp.rows.len(),
        cmp.tolerance_pct,
        100.0 * cmp.share_within(cmp.tolerance_pct)
    );
    out
}

pub fn error_summary_csv(summary: &ErrorSummary) -> String {
    let mut out = String::from("section,item,elexm,ngem\n");
    for (year, (e, n)) in &summary.per_year {
        let _ = writeln!(out, "year,{year},{e},{n}");
    }
    let _ = writeln!(out, "total,flags,{},{}", summary.elexm.total, summary.ngem.total);
    let _ = writeln!(out, "total,rows,{},{}", summary.total_rows, summary.total_rows);
    let _ = writeln!(out, "total,percent,{:.2},{:.2}", summary.elexm.percentage, summary.ngem.percentage);
    let _ = writeln!(out, "total,blocks,{},{}", summary.elexm.block_count, summary.ngem.block_count);
    let longest = summary
        .elexm
        .histogram
        .keys()
        .chain(summary.ngem.histogram.keys())
        .max()
        .copied()
        .unwrap_or(0);
    for len in 1..=longest {
        let e = summary.elexm.histogram.get(&len).copied().unwrap_or(0);
        let n = summary.ngem.histogram.get(&len).copied().unwrap_or(0);
        let _ = writeln!(out, "block_length,{len},{e},{n}");
    }
    out
}

pub fn error_summary_text(summary: &ErrorSummary) -> String {
    let mut out = format!("{:<6} {:>8} {:>8}\n", "Year", "ELEXM", "NGEM");
    for (year, (e, n)) in &summary.per_year {
        let _ = writeln!(out, "{year:<6} {e:>8} {n:>8}");
    }
    let _ = writeln!(out, "{:<6} {:>8} {:>8}", "Total", summary.elexm.total, summary.ngem.total);
    let _ = writeln!(out, "{:<6} {:>8} {:>8}", "Rows", summary.total_rows, summary.total_rows);
    let pct = |p: f64| format!("{p:.2}%");
    let _ = writeln!(out, "{:<6} {:>8} {:>8}", "%", pct(summary.elexm.percentage), pct(summary.ngem.percentage));
    let _ = writeln!(out, "\nBlock length  ELEXM  NGEM");
    let longest = summary.elexm.histogram.keys().chain(summary.ngem.histogram.keys()).max().copied().unwrap_or(0);
    for len in 1..=longest {
        let e = summary.elexm.histogram.get(&len).copied().unwrap_or(0);
        let n = summary.ngem.histogram.get(&len).copied().unwrap_or(0);
        let _ = writeln!(out, "{len:>12}  {e:>5} {n:>5}");
    }
    let _ = writeln!(out, "Blocks        {:>5} {:>5}", summary.elexm.block_count, summary.ngem.block_count);
    out
}

pub fn range_csv(ranges: &[ColumnRange]) -> String {
    let mut out = String::from("column,min,max,missing\n");
    for r in ranges {
        let show = |v: Option<i64>| v.map(|v| v.to_string()).unwrap_or_else(|| "NaN".to_string());
        let _ = writeln!(out, "{},{},{},{}", r.column, show(r.min), show(r.max), r.missing);
    }
    out
}
