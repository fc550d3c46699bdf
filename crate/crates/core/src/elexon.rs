//! Elexon `fuelhh` generation-by-fuel-type files.

use std::collections::BTreeSet;
use std::io::Read;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::calendar::{CalendarEntry, CalendarTable};
use crate::table::{
    parse_optional_int, round_half_even, ElexonTable, PowerColumn, RawRow, RawTable, Source, SourceTable,
    TableError,
};

/// Every fuel or interconnector column any fuelhh vintage has declared.
pub const ELEXON_FUEL_COLUMNS: [&str; 18] = [
    "CCGT", "OIL", "COAL", "NUCLEAR", "WIND", "PS", "NPSHYD", "OCGT", "OTHER", "BIOMASS", "INTFR", "INTIRL",
    "INTNED", "INTEW", "INTELEC", "INTIFA2", "INTNSL", "INTNEM",
];

/// Interconnector columns; dropped before merging with National Grid flows.
pub const ELEXON_INTERCONNECTOR_COLUMNS: [&str; 8] =
    ["INTFR", "INTIRL", "INTNED", "INTEW", "INTELEC", "INTIFA2", "INTNSL", "INTNEM"];

/// Categories that never legitimately sit at zero nationally.
pub const ALWAYS_ON_CATEGORIES: [&str; 2] = ["CCGT", "NUCLEAR"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: missing required column {column}")]
    MissingColumn { file: String, column: &'static str },
    #[error("{file}: row {row}: {message}")]
    Parse { file: String, row: usize, message: String },
    #[error("{file}: row {row}: settlement period {value:?} outside 1..50")]
    PeriodOutOfRange { file: String, row: usize, value: String },
    #[error("no input files")]
    NoInput,
    #[error("calendar does not cover {} key(s): {}", .keys.len(), preview(.keys))]
    MissingCalendarCoverage { keys: Vec<String> },
    #[error("{} consecutive key(s) missing after {after}; only single-row gaps are repaired", .missing.len())]
    Gap { after: String, missing: Vec<String> },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn preview(keys: &[String]) -> String {
    let mut s = keys.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
    if keys.len() > 10 {
        s.push_str(", ...");
    }
    s
}

/// `#Settlement Date` -> `SETTLEMENT_DATE`.
pub fn normalize_header(header: &str) -> String {
    header.to_uppercase().trim().replace('#', "").replace(' ', "_")
}

pub(crate) fn parse_date(text: &str) -> Option<NaiveDate> {
    let text = text.trim();
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(text, "%d/%m/%Y"))
        .ok()
}

/// Parses one fuelhh file. Rows keep whichever fuel columns the file declares.
pub fn parse_fuelhh_file<R: Read>(content: R, filename: &str) -> Result<RawTable, IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(content);
    let headers: Vec<String> = reader.headers()?.iter().map(normalize_header).collect();
    let position = |column: &'static str| {
        headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| IngestError::MissingColumn {
                file: filename.to_string(),
                column,
            })
    };
    let date_at = position("SETTLEMENT_DATE")?;
    let period_at = position("SETTLEMENT_PERIOD")?;
    let power_at: Vec<usize> = (0..headers.len())
        .filter(|&i| i != date_at && i != period_at && !headers[i].is_empty())
        .collect();

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.iter().all(|cell| cell.trim().is_empty()) {
            continue;
        }
        let parse_error = |message: String| IngestError::Parse {
            file: filename.to_string(),
            row: line,
            message,
        };
        let raw_date = record.get(date_at).unwrap_or("");
        let date = parse_date(raw_date).ok_or_else(|| parse_error(format!("bad settlement date {raw_date:?}")))?;
        let values = power_at
            .iter()
            .map(|&c| {
                let value = parse_optional_int(record.get(c).unwrap_or("")).map_err(|m| parse_error(format!("{}: {m}", headers[c])))?;
                match value {
                    Some(v) if v < 0 => Err(parse_error(format!("{}: negative value {v}", headers[c]))),
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
    Ok(RawTable {
        filename: filename.to_string(),
        columns: power_at.iter().map(|&i| headers[i].clone()).collect(),
        rows,
    })
}

/// Zero-pads periods to two characters and builds the canonical key text.
pub fn normalize_periods(mut raw: RawTable) -> Result<RawTable, IngestError> {
    for row in &mut raw.rows {
        let period = row
            .settlement_period
            .parse::<u8>()
            .ok()
            .filter(|p| (1..=50).contains(p))
            .ok_or_else(|| IngestError::PeriodOutOfRange {
                file: raw.filename.clone(),
                row: row.line,
                value: row.settlement_period.clone(),
            })?;
        row.settlement_period = format!("{period:02}");
        row.key = Some(format!("{}_{}", row.settlement_date, row.settlement_period));
    }
    Ok(raw)
}

/// Concatenates normalized raw tables in ascending filename order, sorts by
/// key, keeps the last duplicate and maps each key to its calendar index.
pub(crate) fn union_keep_last<'a>(
    raws: &'a [RawTable],
    calendar: &CalendarTable,
) -> Result<Vec<(usize, &'a RawTable, &'a RawRow)>, IngestError> {
    let mut ordered: Vec<&RawTable> = raws.iter().collect();
    ordered.sort_by(|a, b| a.filename.cmp(&b.filename));
    let mut rows: Vec<(&str, &RawTable, &RawRow)> = ordered
        .iter()
        .flat_map(|t| {
            t.rows
                .iter()
                .map(move |r| (r.key.as_deref().expect("periods normalized before combining"), *t, r))
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    let mut deduped: Vec<(&str, &RawTable, &RawRow)> = Vec::with_capacity(rows.len());
    for row in rows {
        match deduped.last_mut() {
            Some(last) if last.0 == row.0 => *last = row,
            _ => deduped.push(row),
        }
    }
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(deduped.len());
    for (key, table, row) in deduped {
        match calendar.index_of(key) {
            Some(i) => out.push((i, table, row)),
            None => missing.push(key.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(IngestError::MissingCalendarCoverage { keys: missing });
    }
    Ok(out)
}

/// Union of all years on the calendar spine, with single missing rows re-created.
pub fn combine_years(raws: &[RawTable], calendar: &CalendarTable) -> Result<ElexonTable, IngestError> {
    if raws.is_empty() {
        return Err(IngestError::NoInput);
    }
    let rows = union_keep_last(raws, calendar)?;
    if rows.is_empty() {
        return Err(IngestError::NoInput);
    }

    let declared: BTreeSet<&str> = raws.iter().flat_map(|t| t.columns.iter().map(String::as_str)).collect();
    let mut names: Vec<String> = ELEXON_FUEL_COLUMNS.iter().map(|s| s.to_string()).collect();
    names.extend(
        declared
            .iter()
            .filter(|c| !ELEXON_FUEL_COLUMNS.contains(c))
            .map(|c| c.to_string()),
    );

    let first = rows[0].0;
    let last = rows[rows.len() - 1].0;
    let entries: Vec<CalendarEntry> = calendar.entries()[first..=last].to_vec();
    let mut columns: Vec<PowerColumn> = names
        .iter()
        .map(|n| PowerColumn::new(n.clone(), vec![None; entries.len()]))
        .collect();
    let mut present = vec![false; entries.len()];
    for (index, table, row) in &rows {
        let offset = index - first;
        present[offset] = true;
        for (name, value) in table.columns.iter().zip(&row.values) {
            let c = names.iter().position(|n| n == name).expect("declared column");
            columns[c].values[offset] = *value;
        }
    }

    let mut recreated = Vec::new();
    let mut offset = 0;
    while offset < present.len() {
        if present[offset] {
            offset += 1;
            continue;
        }
        let run_end = (offset..present.len()).find(|&i| present[i]).unwrap_or(present.len());
        if run_end - offset > 1 {
            return Err(IngestError::Gap {
                after: entries[offset - 1].key.to_string(),
                missing: entries[offset..run_end].iter().map(|e| e.key.to_string()).collect(),
            });
        }
        for column in &mut columns {
            column.values[offset] = match (column.values[offset - 1], column.values[offset + 1]) {
                (Some(a), Some(b)) => Some(round_half_even(i128::from(a) + i128::from(b), 2)),
                _ => None,
            };
        }
        recreated.push(entries[offset].key);
        tracing::info!(key = %entries[offset].key, "re-created missing fuelhh row");
        offset = run_end;
    }

    let mut table = SourceTable::from_columns(Source::Elexm, &entries, columns)?;
    let mut provenance: Vec<String> = raws.iter().map(|t| t.filename.clone()).collect();
    provenance.sort();
    table.set_provenance(provenance);
    table.set_recreated(recreated);
    Ok(table)
}

/// Parses every file (in parallel) and combines them.
pub fn ingest_files(files: &[(String, Vec<u8>)], calendar: &CalendarTable) -> Result<ElexonTable, IngestError> {
    let raws = files
        .par_iter()
        .map(|(name, bytes)| parse_fuelhh_file(bytes.as_slice(), name).and_then(normalize_periods))
        .collect::<Result<Vec<_>, _>>()?;
    combine_years(&raws, calendar)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnRange {
    pub column: String,
    pub min: Option<i64>,
    pub max: Option<i64>,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ValidationReport {
    pub rows: usize,
    pub first_key: Option<String>,
    pub last_key: Option<String>,
    pub max_settlement_period: Option<u8>,
    pub columns: Vec<ColumnRange>,
    /// (category, rows where it reads exactly zero)
    pub suspicious_zeros: Vec<(String, usize)>,
    /// Rows where every always-on category is zero at once.
    pub all_always_on_zero: usize,
}

/// Per-column ranges and zero counts for the always-on categories. Never fails.
pub fn validate_ranges(table: &ElexonTable) -> ValidationReport {
    if table.is_empty() {
        return ValidationReport::default();
    }
    let columns = table
        .columns()
        .iter()
        .map(|c| {
            let present = c.values.iter().flatten();
            ColumnRange {
                column: c.name.clone(),
                min: present.clone().min().copied(),
                max: present.max().copied(),
                missing: c.values.iter().filter(|v| v.is_none()).count(),
            }
        })
        .collect();
    let always_on: Vec<&PowerColumn> = ALWAYS_ON_CATEGORIES.iter().filter_map(|n| table.column(n)).collect();
    let suspicious_zeros = always_on
        .iter()
        .map(|c| (c.name.clone(), c.values.iter().filter(|v| **v == Some(0)).count()))
        .collect();
    let all_always_on_zero = (0..table.len())
        .filter(|&row| !always_on.is_empty() && always_on.iter().all(|c| c.values[row] == Some(0)))
        .count();
    ValidationReport {
        rows: table.len(),
        first_key: table.keys().first().map(|k| k.to_string()),
        last_key: table.keys().last().map(|k| k.to_string()),
        max_settlement_period: table.keys().iter().map(|k| k.settlement_period()).max(),
        columns,
        suspicious_zeros,
        all_always_on_zero,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER_2008: &str = "#Settlement Date, Settlement Period, CCGT, OIL, COAL, NUCLEAR, WIND, PS, NPSHYD, OCGT, OTHER, INTFR, INTIRL, INTNED, INTEW";
    const HEADER_2021: &str = "#Settlement Date,Settlement Period,CCGT,OIL,COAL,NUCLEAR,WIND,PS,NPSHYD,OCGT,OTHER,INTFR,INTIRL,INTNED,INTEW,BIOMASS,INTNEM,INTELEC,INTIFA2,INTNSL";

    fn calendar(start: (i32, u32, u32), end: (i32, u32, u32)) -> CalendarTable {
        CalendarTable::generate(
            NaiveDate::from_ymd_opt(start.0, start.1, start.2).unwrap(),
            NaiveDate::from_ymd_opt(end.0, end.1, end.2).unwrap(),
        )
        .unwrap()
    }

    fn file(header: &str, rows: &[String]) -> Vec<u8> {
        let mut s = String::from(header);
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s.into_bytes()
    }

    fn parsed(name: &str, bytes: &[u8]) -> RawTable {
        normalize_periods(parse_fuelhh_file(bytes, name).unwrap()).unwrap()
    }

    #[test]
    fn header_normalization() {
        assert_eq!(normalize_header("#Settlement Date"), "SETTLEMENT_DATE");
        assert_eq!(normalize_header(" Settlement Period"), "SETTLEMENT_PERIOD");
        assert_eq!(normalize_header(" ccgt "), "CCGT");
    }

    #[test]
    fn vintage_column_sets() {
        let old = parse_fuelhh_file(
            file(HEADER_2008, &["2008-11-05,43,1,2,3,4,5,6,7,8,9,10,11,12,13".to_string()]).as_slice(),
            "fuelhh_2008.csv",
        )
        .unwrap();
        assert_eq!(old.columns.len(), 13);
        assert!(!old.columns.iter().any(|c| c == "BIOMASS" || c == "INTNEM" || c == "INTELEC"));

        let new = parse_fuelhh_file(
            file(HEADER_2021, &["2021-01-01,1,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,,17,18".to_string()]).as_slice(),
            "fuelhh_2021.csv",
        )
        .unwrap();
        assert_eq!(new.columns.len(), 18);
        let elec = new.columns.iter().position(|c| c == "INTELEC").unwrap();
        assert_eq!(new.rows[0].values[elec], None);
        assert_eq!(new.rows[0].settlement_period, "1");
    }

    #[test]
    fn parse_errors() {
        let missing = parse_fuelhh_file("#Settlement Date,CCGT\n2020-01-01,5\n".as_bytes(), "bad.csv");
        assert!(matches!(missing, Err(IngestError::MissingColumn { column: "SETTLEMENT_PERIOD", .. })));
        let bad = parse_fuelhh_file(
            "#Settlement Date,Settlement Period,CCGT\n2020-01-01,1,5\n2020-01-01,2,n/a\n".as_bytes(),
            "bad.csv",
        );
        match bad {
            Err(IngestError::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let padded = parse_fuelhh_file("#Settlement Date,Settlement Period,CCGT\n2020-01-01, 1 , 42 \n".as_bytes(), "ok.csv")
            .unwrap();
        assert_eq!(padded.rows[0].values, vec![Some(42)]);
    }

    #[test]
    fn period_padding() {
        let raw = parsed(
            "f.csv",
            "#Settlement Date,Settlement Period,CCGT\n2020-01-19,9,1\n2020-01-19,48,1\n".as_bytes(),
        );
        assert_eq!(raw.rows[0].settlement_period, "09");
        assert_eq!(raw.rows[0].key.as_deref(), Some("2020-01-19_09"));
        assert_eq!(raw.rows[1].settlement_period, "48");
        let bad = normalize_periods(
            parse_fuelhh_file("#Settlement Date,Settlement Period,CCGT\n2020-01-19,51,1\n".as_bytes(), "f.csv").unwrap(),
        );
        assert!(matches!(bad, Err(IngestError::PeriodOutOfRange { row: 2, .. })));
    }

    #[test]
    fn duplicates_keep_last_file() {
        let cal = calendar((2020, 1, 1), (2020, 1, 1));
        let a = parsed("fuelhh_2020.csv", "#Settlement Date,Settlement Period,CCGT\n2020-01-01,1,100\n2020-01-01,2,5\n".as_bytes());
        let b = parsed("fuelhh_update.csv", "#Settlement Date,Settlement Period,CCGT\n2020-01-01,1,200\n".as_bytes());
        let t = combine_years(&[b.clone(), a.clone()], &cal).unwrap();
        assert_eq!(t.value("CCGT", 0), Some(200));
        assert_eq!(t.len(), 2);
        assert_eq!(t.power_column_names()[0], "POWER_ELEXM_CCGT_MW");
        assert_eq!(t.row_flags(), &[1, 1]);
        assert_eq!(t, combine_years(&[a, b], &cal).unwrap());
    }

    #[test]
    fn recreates_single_missing_row() {
        let cal = calendar((2019, 12, 31), (2019, 12, 31));
        let mut rows = Vec::new();
        for p in 1..=48 {
            if p != 47 {
                rows.push(format!("2019-12-31,{p},{},{}", 100 + p, p * 2));
            }
        }
        let raw = parsed("fuelhh_2019.csv", &file("#Settlement Date,Settlement Period,CCGT,WIND", &rows));
        let t = combine_years(&[raw], &cal).unwrap();
        assert_eq!(t.len(), 48);
        // (146 + 148) / 2 = 147; (92 + 96) / 2 = 94
        assert_eq!(t.value("CCGT", 46), Some(147));
        assert_eq!(t.value("WIND", 46), Some(94));
        assert_eq!(t.value("COAL", 46), None);
        assert_eq!(t.recreated_keys()[0].to_string(), "2019-12-31_47");
    }

    #[test]
    fn recreated_row_rounds_half_to_even() {
        let cal = calendar((2020, 1, 1), (2020, 1, 1));
        let raw = parsed(
            "f.csv",
            "#Settlement Date,Settlement Period,CCGT,WIND\n2020-01-01,1,101,5\n2020-01-01,3,104,6\n".as_bytes(),
        );
        let t = combine_years(&[raw], &cal).unwrap();
        assert_eq!(t.value("CCGT", 1), Some(102));
        assert_eq!(t.value("WIND", 1), Some(6));
    }

    #[test]
    fn longer_gaps_are_errors() {
        let cal = calendar((2020, 1, 1), (2020, 1, 1));
        let raw = parsed(
            "f.csv",
            "#Settlement Date,Settlement Period,CCGT\n2020-01-01,1,1\n2020-01-01,4,1\n".as_bytes(),
        );
        match combine_years(&[raw], &cal) {
            Err(IngestError::Gap { after, missing }) => {
                assert_eq!(after, "2020-01-01_01");
                assert_eq!(missing, ["2020-01-01_02", "2020-01-01_03"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn calendar_coverage_errors_list_keys() {
        let cal = calendar((2020, 3, 29), (2020, 3, 29));
        let raw = parsed(
            "f.csv",
            "#Settlement Date,Settlement Period,CCGT\n2020-03-29,47,1\n2020-03-30,1,1\n".as_bytes(),
        );
        match combine_years(&[raw], &cal) {
            Err(IngestError::MissingCalendarCoverage { keys }) => {
                assert_eq!(keys, ["2020-03-29_47", "2020-03-30_01"])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_report() {
        let cal = calendar((2020, 10, 25), (2020, 10, 25));
        let rows: Vec<String> = (1..=50)
            .map(|p| if p == 7 { format!("2020-10-25,{p},0,0") } else { format!("2020-10-25,{p},{},5000", p * 10) })
            .collect();
        let raw = parsed("f.csv", &file("#Settlement Date,Settlement Period,CCGT,NUCLEAR", &rows));
        let report = validate_ranges(&combine_years(&[raw], &cal).unwrap());
        assert_eq!(report.max_settlement_period, Some(50));
        assert_eq!(report.suspicious_zeros, vec![("CCGT".to_string(), 1), ("NUCLEAR".to_string(), 1)]);
        assert_eq!(report.all_always_on_zero, 1);
        let ccgt = report.columns.iter().find(|c| c.column == "CCGT").unwrap();
        assert_eq!((ccgt.min, ccgt.max), (Some(0), Some(500)));
        let intelec = report.columns.iter().find(|c| c.column == "INTELEC").unwrap();
        assert_eq!((intelec.min, intelec.max, intelec.missing), (None, None, 50));
    }
}
