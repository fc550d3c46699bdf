//! Normalized per-source half-hourly power tables.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{CalendarEntry, CalendarError, SettlementKey};
use crate::io::CountingWriter;

/// Data source tag used as a column prefix and in flag files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "ELEXM")]
    Elexm,
    #[serde(rename = "NGEM")]
    Ngem,
}

impl Source {
    pub const ALL: [Source; 2] = [Source::Elexm, Source::Ngem];

    pub fn prefix(self) -> &'static str {
        match self {
            Source::Elexm => "ELEXM",
            Source::Ngem => "NGEM",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

impl FromStr for Source {
    type Err = TableError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "ELEXM" => Ok(Source::Elexm),
            "NGEM" => Ok(Source::Ngem),
            other => Err(TableError::UnknownSource(other.to_string())),
        }
    }
}

/// `CCGT` -> `POWER_ELEXM_CCGT_MW`.
pub fn power_column_name(source: Source, name: &str) -> String {
    format!("POWER_{}_{}_MW", source.prefix(), name)
}

/// Inverse of [`power_column_name`].
pub fn strip_power_column_name(source: Source, column: &str) -> Option<&str> {
    let prefix = format!("POWER_{}_", source.prefix());
    column
        .strip_prefix(prefix.as_str())
        .and_then(|rest| rest.strip_suffix("_MW"))
        .filter(|name| !name.is_empty())
}

/// `ROWFLAG` -> `ELEXM_ROWFLAG`.
pub fn meta_column_name(source: Source, name: &str) -> String {
    format!("{}_{}", source.prefix(), name)
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("unknown source {0:?}")]
    UnknownSource(String),
    #[error("column {column} has {actual} values, expected {expected}")]
    LengthMismatch { column: String, expected: usize, actual: usize },
    #[error("keys are not strictly increasing at {0}")]
    Unordered(String),
    #[error("duplicate column {0}")]
    DuplicateColumn(String),
    #[error("{file}: row {row}: {message}")]
    Parse { file: String, row: usize, message: String },
    #[error("{file}: {message}")]
    Schema { file: String, message: String },
    #[error(transparent)]
    Calendar(#[from] CalendarError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PowerColumn {
    /// Source column name without prefix or unit suffix, e.g. `CCGT`.
    pub name: String,
    pub values: Vec<Option<i64>>,
}

impl PowerColumn {
    pub fn new(name: impl Into<String>, values: Vec<Option<i64>>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

/// Sorted, de-duplicated half-hourly table for one source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceTable {
    source: Source,
    keys: Vec<SettlementKey>,
    utc: Vec<String>,
    localtime: Vec<String>,
    row_flags: Vec<u8>,
    columns: Vec<PowerColumn>,
    provenance: Vec<String>,
    recreated: Vec<SettlementKey>,
}

pub type ElexonTable = SourceTable;
pub type NgTable = SourceTable;

impl SourceTable {
    /// Builds a table from calendar rows and power columns; all row flags start at 1.
    pub fn from_columns(
        source: Source,
        entries: &[CalendarEntry],
        columns: Vec<PowerColumn>,
    ) -> Result<Self, TableError> {
        let n = entries.len();
        for pair in entries.windows(2) {
            if pair[0].key >= pair[1].key {
                return Err(TableError::Unordered(pair[1].key.to_string()));
            }
        }
        for (i, c) in columns.iter().enumerate() {
            if c.values.len() != n {
                return Err(TableError::LengthMismatch {
                    column: c.name.clone(),
                    expected: n,
                    actual: c.values.len(),
                });
            }
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(TableError::DuplicateColumn(c.name.clone()));
            }
        }
        Ok(Self {
            source,
            keys: entries.iter().map(|e| e.key).collect(),
            utc: entries.iter().map(|e| e.utc.clone()).collect(),
            localtime: entries.iter().map(|e| e.localtime.clone()).collect(),
            row_flags: vec![1; n],
            columns,
            provenance: Vec::new(),
            recreated: Vec::new(),
        })
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[SettlementKey] {
        &self.keys
    }

    pub fn utc(&self) -> &[String] {
        &self.utc
    }

    pub fn localtime(&self) -> &[String] {
        &self.localtime
    }

    pub fn row_flags(&self) -> &[u8] {
        &self.row_flags
    }

    pub fn columns(&self) -> &[PowerColumn] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&PowerColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn value(&self, column: &str, row: usize) -> Option<i64> {
        self.column(column).and_then(|c| c.values[row])
    }

    /// Column names as written to files (`POWER_<SOURCE>_<NAME>_MW`).
    pub fn power_column_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .map(|c| power_column_name(self.source, &c.name))
            .collect()
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    /// Keys that were missing from the source files and re-created at ingest.
    pub fn recreated_keys(&self) -> &[SettlementKey] {
        &self.recreated
    }

    /// Binary search for a key.
    pub fn position(&self, key: &SettlementKey) -> Option<usize> {
        self.keys.binary_search(key).ok()
    }

    pub(crate) fn set_provenance(&mut self, provenance: Vec<String>) {
        self.provenance = provenance;
    }

    pub(crate) fn set_recreated(&mut self, recreated: Vec<SettlementKey>) {
        self.recreated = recreated;
    }

    pub(crate) fn row_flags_mut(&mut self) -> &mut [u8] {
        &mut self.row_flags
    }

    pub(crate) fn columns_mut(&mut self) -> &mut Vec<PowerColumn> {
        &mut self.columns
    }

    /// Writes the intermediate `elexon_parsed.csv` / `ng_parsed.csv` layout.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<u64, TableError> {
        let mut counter = CountingWriter::new(writer);
        {
            let mut csv = csv::Writer::from_writer(&mut counter);
            let mut header: Vec<String> = ["SETTLEMENT_DATE", "SETTLEMENT_PERIOD", "utc", "localtime", "ROWFLAG"]
                .iter()
                .map(|n| meta_column_name(self.source, n))
                .collect();
            header.extend(self.power_column_names());
            csv.write_record(&header)?;
            let mut record: Vec<String> = Vec::with_capacity(header.len());
            for row in 0..self.len() {
                record.clear();
                record.push(self.keys[row].date_text());
                record.push(self.keys[row].period_text());
                record.push(self.utc[row].clone());
                record.push(self.localtime[row].clone());
                record.push(self.row_flags[row].to_string());
                for c in &self.columns {
                    record.push(c.values[row].map(|v| v.to_string()).unwrap_or_default());
                }
                csv.write_record(&record)?;
            }
            csv.flush()?;
        }
        Ok(counter.bytes_written())
    }

    /// Reads a file produced by [`SourceTable::write_csv`].
    pub fn read_csv<R: Read>(reader: R, file: &str) -> Result<Self, TableError> {
        let mut csv = csv::Reader::from_reader(reader);
        let headers: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
        let schema = |message: String| TableError::Schema {
            file: file.to_string(),
            message,
        };
        let source = Source::ALL
            .into_iter()
            .find(|s| headers.first() == Some(&meta_column_name(*s, "SETTLEMENT_DATE")))
            .ok_or_else(|| schema("first column must be <SOURCE>_SETTLEMENT_DATE".to_string()))?;
        let expected: Vec<String> = ["SETTLEMENT_DATE", "SETTLEMENT_PERIOD", "utc", "localtime", "ROWFLAG"]
            .iter()
            .map(|n| meta_column_name(source, n))
            .collect();
        if headers.len() < expected.len() || headers[..expected.len()] != expected[..] {
            return Err(schema(format!("expected leading columns {expected:?}")));
        }
        let mut columns: Vec<PowerColumn> = headers[expected.len()..]
            .iter()
            .map(|h| {
                strip_power_column_name(source, h)
                    .map(|n| PowerColumn::new(n, Vec::new()))
                    .ok_or_else(|| schema(format!("unexpected column {h}")))
            })
            .collect::<Result<_, _>>()?;
        let mut table = SourceTable {
            source,
            keys: Vec::new(),
            utc: Vec::new(),
            localtime: Vec::new(),
            row_flags: Vec::new(),
            columns: Vec::new(),
            provenance: vec![file.to_string()],
            recreated: Vec::new(),
        };
        for (i, record) in csv.records().enumerate() {
            let row = i + 2;
            let record = record?;
            let parse = |message: String| TableError::Parse {
                file: file.to_string(),
                row,
                message,
            };
            let key: SettlementKey = format!("{}_{}", &record[0], &record[1])
                .parse()
                .map_err(|e: CalendarError| parse(e.to_string()))?;
            if let Some(prev) = table.keys.last() {
                if *prev >= key {
                    return Err(TableError::Unordered(key.to_string()));
                }
            }
            let flag = match &record[4] {
                "0" => 0,
                "1" => 1,
                other => return Err(parse(format!("row flag {other:?} is not 0 or 1"))),
            };
            table.keys.push(key);
            table.utc.push(record[2].to_string());
            table.localtime.push(record[3].to_string());
            table.row_flags.push(flag);
            for (c, cell) in columns.iter_mut().zip(record.iter().skip(expected.len())) {
                c.values.push(parse_optional_int(cell).map_err(parse)?);
            }
        }
        table.columns = columns;
        Ok(table)
    }
}

/// Parses an integer cell; blank means missing. Surrounding whitespace is tolerated.
pub fn parse_optional_int(cell: &str) -> Result<Option<i64>, String> {
    let trimmed = cell.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    trimmed
        .parse::<i64>()
        .map(Some)
        .map_err(|_| format!("{trimmed:?} is not an integer"))
}

/// Rounds `numerator / denominator` to the nearest integer, ties to even.
pub fn round_half_even(numerator: i128, denominator: i128) -> i64 {
    assert!(denominator > 0, "denominator must be positive");
    let q = numerator.div_euclid(denominator);
    let r = numerator.rem_euclid(denominator);
    let rounded = match (2 * r).cmp(&denominator) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    };
    rounded as i64
}

/// One file's rows before calendar attachment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub filename: String,
    /// Canonical source column names, in file order.
    pub columns: Vec<String>,
    pub rows: Vec<RawRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRow {
    /// 1-based line number in the source file (header is line 1).
    pub line: usize,
    /// `YYYY-MM-DD`.
    pub settlement_date: String,
    /// As found in the file until normalized, then two digits.
    pub settlement_period: String,
    /// Canonical key text, set by period normalization.
    pub key: Option<String>,
    pub values: Vec<Option<i64>>,
}
