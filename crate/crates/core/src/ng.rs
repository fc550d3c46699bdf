//! National Grid ESO historic demand files: embedded solar/wind estimates and
//! signed interconnector flows.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::calendar::{CalendarEntry, CalendarTable};
use crate::elexon::{normalize_periods, union_keep_last, IngestError};
use crate::table::{parse_optional_int, NgTable, PowerColumn, RawRow, RawTable, Source, SourceTable};

/// The columns retained from National Grid files, in merged output order.
pub const NG_POWER_COLUMNS: [&str; 8] = [
    "EMBEDDED_SOLAR_GENERATION",
    "EMBEDDED_WIND_GENERATION",
    "BRITNED_FLOW",
    "EAST_WEST_FLOW",
    "MOYLE_FLOW",
    "NEMO_FLOW",
    "IFA_FLOW",
    "IFA2_FLOW",
];

pub const EMBEDDED_COLUMNS: [&str; 2] = ["EMBEDDED_SOLAR_GENERATION", "EMBEDDED_WIND_GENERATION"];

/// Historical header -> canonical header.
pub fn default_aliases() -> BTreeMap<String, String> {
    [("FRENCH_FLOW", "IFA_FLOW"), ("INTNED_FLOW", "BRITNED_FLOW")]
        .into_iter()
        .map(|(a, c)| (a.to_string(), c.to_string()))
        .collect()
}

/// Accepts `01-Apr-2005`, `01-APR-2015` or `2015-04-01`.
pub fn parse_ng_date(text: &str) -> Option<NaiveDate> {
    let text = text.trim();
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(&text.to_uppercase(), "%d-%b-%Y"))
        .ok()
}

/// Parses one file: drops forecast rows, keeps the eight retained columns,
/// normalizes dates and periods and keeps the first of within-file duplicates.
pub fn parse_historic_demand_file<R: Read>(
    content: R,
    filename: &str,
    aliases: &BTreeMap<String, String>,
) -> Result<RawTable, IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(content);
    let raw_headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_uppercase()).collect();
    let position = |column: &'static str| {
        raw_headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| IngestError::MissingColumn {
                file: filename.to_string(),
                column,
            })
    };
    let date_at = position("SETTLEMENT_DATE")?;
    let period_at = position("SETTLEMENT_PERIOD")?;
    let indicator_at = raw_headers.iter().position(|h| h == "FORECAST_ACTUAL_INDICATOR");

    // Canonical headers win over aliases when a file carries both.
    let mut retained: Vec<(String, usize)> = Vec::new();
    for canonical in NG_POWER_COLUMNS {
        let direct = raw_headers.iter().position(|h| h == canonical);
        let aliased = || {
            raw_headers
                .iter()
                .position(|h| aliases.get(h).map(String::as_str) == Some(canonical))
        };
        if let Some(i) = direct.or_else(aliased) {
            retained.push((canonical.to_string(), i));
        }
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.iter().all(|cell| cell.trim().is_empty()) {
            continue;
        }
        if let Some(at) = indicator_at {
            if record.get(at).map(str::trim) == Some("F") {
                continue;
            }
        }
        let parse_error = |message: String| IngestError::Parse {
            file: filename.to_string(),
            row: line,
            message,
        };
        let raw_date = record.get(date_at).unwrap_or("");
        let date = parse_ng_date(raw_date).ok_or_else(|| parse_error(format!("bad settlement date {raw_date:?}")))?;
        let values = retained
            .iter()
            .map(|(name, at)| {
                let value = parse_optional_int(record.get(*at).unwrap_or("")).map_err(|m| parse_error(format!("{name}: {m}")))?;
                match value {
                    Some(v) if v < 0 && EMBEDDED_COLUMNS.contains(&name.as_str()) => {
                        Err(parse_error(format!("{name}: negative embedded generation {v}")))
                    }
                    v => Ok(v),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(RawRow {
            line,
            settlement_date: date.format("%Y-%m-%d").to_string(),
            settlement_period: record.get(period_at).unwrap_or("").trim().to_string(),
            key: None,
            values,
        });
    }
    let mut raw = normalize_periods(RawTable {
        filename: filename.to_string(),
        columns: retained.into_iter().map(|(name, _)| name).collect(),
        rows,
    })?;
    let mut seen = HashSet::new();
    raw.rows.retain(|r| seen.insert(r.key.clone()));
    raw.rows.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(raw)
}

/// Union of all files; later filenames win on shared keys. Gaps are allowed.
pub fn combine_ng(raws: &[RawTable], calendar: &CalendarTable) -> Result<NgTable, IngestError> {
    if raws.is_empty() {
        return Err(IngestError::NoInput);
    }
    let rows = union_keep_last(raws, calendar)?;
    let entries: Vec<CalendarEntry> = rows.iter().map(|(i, _, _)| calendar.entries()[*i].clone()).collect();
    let mut columns: Vec<PowerColumn> = NG_POWER_COLUMNS
        .iter()
        .map(|n| PowerColumn::new(*n, vec![None; rows.len()]))
        .collect();
    for (offset, (_, table, row)) in rows.iter().enumerate() {
        for (name, value) in table.columns.iter().zip(&row.values) {
            let c = NG_POWER_COLUMNS.iter().position(|n| n == name).expect("retained column");
            columns[c].values[offset] = *value;
        }
    }
    let mut table = SourceTable::from_columns(Source::Ngem, &entries, columns)?;
    let mut provenance: Vec<String> = raws.iter().map(|t| t.filename.clone()).collect();
    provenance.sort();
    table.set_provenance(provenance);
    Ok(table)
}

pub fn ingest_files(
    files: &[(String, Vec<u8>)],
    calendar: &CalendarTable,
    aliases: &BTreeMap<String, String>,
) -> Result<NgTable, IngestError> {
    let raws = files
        .par_iter()
        .map(|(name, bytes)| parse_historic_demand_file(bytes.as_slice(), name, aliases))
        .collect::<Result<Vec<_>, _>>()?;
    combine_ng(&raws, calendar)
}
