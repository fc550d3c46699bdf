//! Row-level error flags: machine proposals, human review, erasure and
//! linear re-imputation of flagged rows.
//!
//! A flag of `0` marks the whole row as erroneous. In the clean variant every
//! power cell of such a row is replaced by interpolating, column by column,
//! between the nearest unflagged rows before and after the block.

use std::collections::btree_map::{self, BTreeMap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{CalendarError, CalendarTable, SettlementKey};
use crate::elexon::ALWAYS_ON_CATEGORIES;
use crate::io::CountingWriter;
use crate::table::{round_half_even, Source, SourceTable};

pub const ZERO_DROP_NOTE: &str = "auto:zero-drop";
pub const FLAG_FILE_HEADER: [&str; 5] = ["source", "datesp", "flag", "note", "updated_utc"];

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("unknown detector category {0:?}")]
    UnknownCategory(String),
    #[error("no detector categories configured")]
    NoCategories,
    #[error("flag value {0} is not 0 or 1")]
    InvalidFlag(i64),
    #[error("column {0} has flagged rows but no unflagged anchor rows")]
    NoAnchors(String),
    #[error("flag file row {row}: {message}")]
    FlagFile { row: usize, message: String },
    #[error(transparent)]
    Calendar(#[from] CalendarError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One row flag. `flag == 0` means the row is erroneous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlagEntry {
    pub source: Source,
    pub key: SettlementKey,
    flag: u8,
    pub note: Option<String>,
    pub updated_utc: String,
}

impl FlagEntry {
    pub fn new(
        source: Source,
        key: SettlementKey,
        flag: i64,
        note: Option<String>,
        updated_utc: impl Into<String>,
    ) -> Result<Self, QualityError> {
        if flag != 0 && flag != 1 {
            return Err(QualityError::InvalidFlag(flag));
        }
        Ok(Self {
            source,
            key,
            flag: flag as u8,
            note: note.filter(|n| !n.is_empty()),
            updated_utc: updated_utc.into(),
        })
    }

    pub fn flag(&self) -> u8 {
        self.flag
    }

    pub fn is_error(&self) -> bool {
        self.flag == 0
    }
}

/// At most one entry per (source, key), iterated in (source, key) order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlagSet {
    entries: BTreeMap<(Source, SettlementKey), FlagEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FlagRecord {
    source: String,
    datesp: String,
    flag: String,
    note: String,
    updated_utc: String,
}

impl FlagSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the entry for the same (source, key).
    pub fn insert(&mut self, entry: FlagEntry) -> Option<FlagEntry> {
        self.entries.insert((entry.source, entry.key), entry)
    }

    pub fn get(&self, source: Source, key: &SettlementKey) -> Option<&FlagEntry> {
        self.entries.get(&(source, *key))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> btree_map::Values<'_, (Source, SettlementKey), FlagEntry> {
        self.entries.values()
    }

    pub fn for_source(&self, source: Source) -> impl Iterator<Item = &FlagEntry> {
        self.entries.values().filter(move |e| e.source == source)
    }

    /// Entries with `flag == 0`.
    pub fn errors(&self) -> impl Iterator<Item = &FlagEntry> {
        self.entries.values().filter(|e| e.is_error())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, QualityError> {
        let mut csv = csv::Reader::from_reader(reader);
        let headers = csv.headers()?.clone();
        if headers.iter().ne(FLAG_FILE_HEADER) {
            return Err(QualityError::FlagFile {
                row: 1,
                message: format!("expected header {}", FLAG_FILE_HEADER.join(",")),
            });
        }
        let mut set = FlagSet::new();
        for (i, record) in csv.deserialize::<FlagRecord>().enumerate() {
            let row = i + 2;
            let bad = |message: String| QualityError::FlagFile { row, message };
            let record = record?;
            let source: Source = record.source.parse().map_err(|e| bad(format!("{e}")))?;
            let key: SettlementKey = record.datesp.parse().map_err(|e| bad(format!("{e}")))?;
            let flag: i64 = record
                .flag
                .trim()
                .parse()
                .map_err(|_| bad(format!("flag {:?} is not an integer", record.flag)))?;
            let entry = FlagEntry::new(source, key, flag, Some(record.note), record.updated_utc)
                .map_err(|e| bad(e.to_string()))?;
            if set.insert(entry).is_some() {
                return Err(bad(format!("duplicate entry for {source} {key}")));
            }
        }
        Ok(set)
    }

    /// Writes the flag file sorted by (source, datesp); returns the byte count.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<u64, QualityError> {
        let mut counter = CountingWriter::new(writer);
        {
            let mut csv = csv::Writer::from_writer(&mut counter);
            csv.write_record(FLAG_FILE_HEADER)?;
            for e in self.entries.values() {
                csv.write_record([
                    e.source.prefix(),
                    &e.key.to_string(),
                    &e.flag.to_string(),
                    e.note.as_deref().unwrap_or(""),
                    &e.updated_utc,
                ])?;
            }
            csv.flush()?;
        }
        Ok(counter.bytes_written())
    }
}

impl FromIterator<FlagEntry> for FlagSet {
    fn from_iter<T: IntoIterator<Item = FlagEntry>>(iter: T) -> Self {
        let mut set = FlagSet::new();
        for e in iter {
            set.insert(e);
        }
        set
    }
}

/// Default detector categories.
pub fn default_categories() -> Vec<String> {
    ALWAYS_ON_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

/// Flags every row where all `categories` read exactly zero at once.
pub fn detect_zero_drops(
    table: &SourceTable,
    categories: &[String],
    updated_utc: &str,
) -> Result<FlagSet, QualityError> {
    if categories.is_empty() {
        return Err(QualityError::NoCategories);
    }
    let columns = categories
        .iter()
        .map(|name| {
            let bare = crate::table::strip_power_column_name(table.source(), name).unwrap_or(name);
            table
                .column(&bare.to_uppercase())
                .ok_or_else(|| QualityError::UnknownCategory(name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut flags = FlagSet::new();
    for (row, key) in table.keys().iter().enumerate() {
        if columns.iter().all(|c| c.values[row] == Some(0)) {
            flags.insert(FlagEntry {
                source: table.source(),
                key: *key,
                flag: 0,
                note: Some(ZERO_DROP_NOTE.to_string()),
                updated_utc: updated_utc.to_string(),
            });
        }
    }
    Ok(flags)
}

/// Union of both sets; manual entries replace automatic ones on the same row.
pub fn merge_flags(auto: &FlagSet, manual: &FlagSet) -> FlagSet {
    let mut merged = auto.clone();
    for entry in manual.iter() {
        merged.insert(entry.clone());
    }
    merged
}

#[derive(Debug, Clone)]
pub struct AppliedFlags {
    /// Flags set, original values kept.
    pub raw: SourceTable,
    /// Flags set, every power cell of a flag-0 row erased.
    pub erased: SourceTable,
    /// Keys of this table's source that the table does not contain.
    pub skipped: Vec<SettlementKey>,
}

/// Sets row flags from `flags` (entries for other sources are ignored) and
/// erases all power values of rows flagged 0.
pub fn apply_flags(table: &SourceTable, flags: &FlagSet) -> AppliedFlags {
    let mut raw = table.clone();
    let mut skipped = Vec::new();
    for entry in flags.for_source(table.source()) {
        match table.position(&entry.key) {
            Some(row) => raw.row_flags_mut()[row] = entry.flag,
            None => {
                tracing::warn!(source = %entry.source, key = %entry.key, "flag for a key not in the table; skipped");
                skipped.push(entry.key);
            }
        }
    }
    let mut erased = raw.clone();
    let row_flags = raw.row_flags().to_vec();
    for column in erased.columns_mut() {
        for (value, flag) in column.values.iter_mut().zip(&row_flags) {
            if *flag == 0 {
                *value = None;
            }
        }
    }
    AppliedFlags { raw, erased, skipped }
}

/// Fills every power cell of flag-0 rows by linear interpolation on row
/// index between the nearest flag-1 rows, rounding half to even. Blocks at
/// either end of the table copy their single anchor. If an anchor row holds
/// no value for a column, the block stays missing in that column.
pub fn impute(table: &SourceTable) -> Result<SourceTable, QualityError> {
    let flags = table.row_flags().to_vec();
    let mut out = table.clone();
    if !flags.contains(&0) {
        return Ok(out);
    }
    if !flags.contains(&1) {
        let name = table.columns().first().map(|c| c.name.clone()).unwrap_or_default();
        return Err(QualityError::NoAnchors(name));
    }
    let blocks = flagged_runs(&flags);
    out.columns_mut().par_iter_mut().for_each(|column| {
        for &(start, len) in &blocks {
            let before = start.checked_sub(1).map(|i| column.values[i]);
            let after = (start + len < flags.len()).then(|| column.values[start + len]);
            let fill: Vec<Option<i64>> = match (before, after) {
                (Some(Some(a)), Some(Some(b))) => (1..=len).map(|i| Some(interpolate(a, b, i, len))).collect(),
                (Some(_), Some(_)) => vec![None; len],
                (Some(a), None) => vec![a; len],
                (None, Some(b)) => vec![b; len],
                (None, None) => unreachable!("at least one anchor row exists"),
            };
            column.values[start..start + len].copy_from_slice(&fill);
        }
    });
    Ok(out)
}

/// `round(a + (b - a) * i / (len + 1))`, ties to even, computed exactly.
pub fn interpolate(a: i64, b: i64, i: usize, len: usize) -> i64 {
    let steps = len as i128 + 1;
    round_half_even(i128::from(a) * steps + (i128::from(b) - i128::from(a)) * i as i128, steps)
}

/// (start, length) of each maximal run of zeros.
fn flagged_runs(flags: &[u8]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if flags[i] == 0 {
            let start = i;
            while i < flags.len() && flags[i] == 0 {
                i += 1;
            }
            runs.push((start, i - start));
        } else {
            i += 1;
        }
    }
    runs
}

/// Maximal run of consecutive flag-0 calendar keys for one source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorBlock {
    pub source: Source,
    pub start_key: SettlementKey,
    pub length: usize,
}

/// Groups flag-0 entries into runs of consecutive calendar keys, per source.
pub fn enumerate_blocks(flags: &FlagSet, calendar: &CalendarTable) -> Result<Vec<ErrorBlock>, QualityError> {
    let mut blocks: Vec<ErrorBlock> = Vec::new();
    let mut previous: Option<(Source, usize)> = None;
    for entry in flags.errors() {
        let index = calendar
            .index_of(&entry.key.to_string())
            .ok_or_else(|| CalendarError::MissingKey(entry.key.to_string()))?;
        match (previous, blocks.last_mut()) {
            (Some((source, last)), Some(block)) if source == entry.source && index == last + 1 => {
                block.length += 1;
            }
            _ => blocks.push(ErrorBlock {
                source: entry.source,
                start_key: entry.key,
                length: 1,
            }),
        }
        previous = Some((entry.source, index));
    }
    Ok(blocks)
}
