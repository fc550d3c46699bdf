//! Merges Elexon and National Grid tables into the 25 column ESPENI record.

use std::io::{Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::calendar::{CalendarError, SettlementKey};
use crate::elexon::ELEXON_INTERCONNECTOR_COLUMNS;
use crate::io::CountingWriter;
use crate::ng::NG_POWER_COLUMNS;
use crate::table::{parse_optional_int, power_column_name, ElexonTable, NgTable, PowerColumn, Source};

pub const BIOMASS_START_UTC: &str = "2017-11-01T20:00:00+00:00";
pub const OTHER_CLEAN_UTC: &str = "2017-11-01T20:30:00+00:00";
pub const PINNED_BIOMASS_FRACTION: f64 = 0.95;

pub const OTHER_POSTCALC: &str = "OTHER_POSTCALC";
pub const BIOMASS_POSTCALC: &str = "BIOMASS_POSTCALC";

/// Elexon generation columns carried into the merged record, in output order.
pub const MERGED_ELEXON_COLUMNS: [&str; 10] = [
    "CCGT", "OIL", "COAL", "NUCLEAR", "WIND", "PS", "NPSHYD", "OCGT", OTHER_POSTCALC, BIOMASS_POSTCALC,
];

pub const ESPENI_HEADER: [&str; 25] = [
    "ELEXM_SETTLEMENT_DATE",
    "ELEXM_SETTLEMENT_PERIOD",
    "ELEXM_utc",
    "ELEXM_localtime",
    "ELEXM_ROWFLAG",
    "NGEM_ROWFLAG",
    "POWER_ESPENI_MW",
    "POWER_ELEXM_CCGT_MW",
    "POWER_ELEXM_OIL_MW",
    "POWER_ELEXM_COAL_MW",
    "POWER_ELEXM_NUCLEAR_MW",
    "POWER_ELEXM_WIND_MW",
    "POWER_ELEXM_PS_MW",
    "POWER_ELEXM_NPSHYD_MW",
    "POWER_ELEXM_OCGT_MW",
    "POWER_ELEXM_OTHER_POSTCALC_MW",
    "POWER_ELEXM_BIOMASS_POSTCALC_MW",
    "POWER_NGEM_EMBEDDED_SOLAR_GENERATION_MW",
    "POWER_NGEM_EMBEDDED_WIND_GENERATION_MW",
    "POWER_NGEM_BRITNED_FLOW_MW",
    "POWER_NGEM_EAST_WEST_FLOW_MW",
    "POWER_NGEM_MOYLE_FLOW_MW",
    "POWER_NGEM_NEMO_FLOW_MW",
    "POWER_NGEM_IFA_FLOW_MW",
    "POWER_NGEM_IFA2_FLOW_MW",
];

/// Number of power cells per merged record (everything after POWER_ESPENI_MW).
pub const MERGED_POWER_COUNT: usize = 18;
const POWER_OFFSET: usize = 7;

/// Header names of the 18 power cells, in record order.
pub fn merged_power_columns() -> &'static [&'static str] {
    &ESPENI_HEADER[POWER_OFFSET..]
}

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("biomass fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),
    #[error("Elexon table lacks column {0}; split OTHER/BIOMASS before merging")]
    MissingColumn(String),
    #[error("expected the {source_name} table, got {actual}")]
    WrongSource { source_name: Source, actual: Source },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("unexpected header; expected the 25 ESPENI columns")]
    Header,
    #[error(transparent)]
    Calendar(#[from] CalendarError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioMode {
    Pinned,
    Computed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitRatio {
    pub biomass_fraction: f64,
    pub mode: RatioMode,
    pub biomass_start_utc: String,
    pub other_clean_utc: String,
}

impl SplitRatio {
    pub fn pinned(biomass_fraction: f64) -> Result<Self, MergeError> {
        Self::with_mode(biomass_fraction, RatioMode::Pinned)
    }

    fn with_mode(biomass_fraction: f64, mode: RatioMode) -> Result<Self, MergeError> {
        if !(biomass_fraction > 0.0 && biomass_fraction < 1.0) {
            return Err(MergeError::InvalidFraction(biomass_fraction));
        }
        Ok(Self {
            biomass_fraction,
            mode,
            biomass_start_utc: BIOMASS_START_UTC.to_string(),
            other_clean_utc: OTHER_CLEAN_UTC.to_string(),
        })
    }
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self::pinned(PINNED_BIOMASS_FRACTION).expect("pinned fraction is valid")
    }
}

fn mean(values: impl Iterator<Item = i64>) -> Option<f64> {
    let (sum, n) = values.fold((0i128, 0u64), |(s, n), v| (s + i128::from(v), n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

/// mean(BIOMASS) / (mean(BIOMASS) + mean(OTHER)) over rows at or after
/// `OTHER_CLEAN_UTC`. Falls back to the pinned 0.95 when there is nothing to
/// average or the result is degenerate.
pub fn compute_split_ratio(table: &ElexonTable) -> SplitRatio {
    let post: Vec<usize> = (0..table.len())
        .filter(|&i| table.utc()[i].as_str() >= OTHER_CLEAN_UTC)
        .collect();
    let column_mean = |name: &str| {
        table
            .column(name)
            .and_then(|c| mean(post.iter().filter_map(|&i| c.values[i])))
    };
    match (column_mean("BIOMASS"), column_mean("OTHER")) {
        (Some(b), Some(o)) if b + o > 0.0 => match SplitRatio::with_mode(b / (b + o), RatioMode::Computed) {
            Ok(ratio) => ratio,
            Err(_) => {
                tracing::warn!(biomass = b, other = o, "degenerate biomass fraction; using pinned value");
                SplitRatio::default()
            }
        },
        _ => {
            tracing::warn!("no reported BIOMASS/OTHER values after the split; using pinned fraction");
            SplitRatio::default()
        }
    }
}

/// (OTHER_POSTCALC, BIOMASS_POSTCALC) for one row.
pub fn split_row(utc: &str, other: Option<i64>, biomass: Option<i64>, ratio: &SplitRatio) -> (Option<i64>, Option<i64>) {
    if utc < ratio.biomass_start_utc.as_str() {
        let Some(other) = other else {
            return (None, biomass);
        };
        let total = (other + biomass.unwrap_or(0)) as f64;
        let f = ratio.biomass_fraction;
        let other_post = ((1.0 - f) * total).round_ties_even() as i64;
        let biomass_post = (f * total).round_ties_even() as i64;
        (Some(other_post), Some(biomass_post))
    } else {
        (other, biomass)
    }
}

/// Adds `OTHER_POSTCALC` and `BIOMASS_POSTCALC` columns.
pub fn split_other_biomass(table: &ElexonTable, ratio: &SplitRatio) -> ElexonTable {
    let mut out = table.clone();
    let other = table.column("OTHER").map(|c| c.values.clone()).unwrap_or_else(|| vec![None; table.len()]);
    let biomass = table.column("BIOMASS").map(|c| c.values.clone()).unwrap_or_else(|| vec![None; table.len()]);
    let (other_post, biomass_post): (Vec<_>, Vec<_>) = (0..table.len())
        .map(|i| split_row(&table.utc()[i], other[i], biomass[i], ratio))
        .unzip();
    let columns = out.columns_mut();
    columns.retain(|c| c.name != OTHER_POSTCALC && c.name != BIOMASS_POSTCALC);
    columns.push(PowerColumn::new(OTHER_POSTCALC, other_post));
    columns.push(PowerColumn::new(BIOMASS_POSTCALC, biomass_post));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Raw,
    Clean,
}

impl Variant {
    pub fn file_name(self) -> &'static str {
        match self {
            Variant::Raw => "espeni_raw.csv",
            Variant::Clean => "espeni.csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedRecord {
    pub key: SettlementKey,
    pub utc: String,
    pub localtime: String,
    pub elexm_rowflag: u8,
    /// Missing when National Grid has no row for this key.
    pub ngem_rowflag: Option<u8>,
    /// Set by [`compute_espeni`].
    pub espeni_mw: Option<i64>,
    /// Cells in [`merged_power_columns`] order.
    pub power: [Option<i64>; MERGED_POWER_COUNT],
}

impl MergedRecord {
    /// Sum of all power cells, missing cells counting as zero.
    pub fn power_sum(&self) -> i64 {
        self.power.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedTable {
    pub variant: Variant,
    pub records: Vec<MergedRecord>,
}

impl MergedTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Values of a named column (any of the 25 except text columns).
    pub fn column_values(&self, column: &str) -> Option<Vec<Option<i64>>> {
        let at = ESPENI_HEADER.iter().position(|h| *h == column)?;
        let values = match at {
            4 => self.records.iter().map(|r| Some(i64::from(r.elexm_rowflag))).collect(),
            5 => self.records.iter().map(|r| r.ngem_rowflag.map(i64::from)).collect(),
            6 => self.records.iter().map(|r| r.espeni_mw).collect(),
            i if i >= POWER_OFFSET => self.records.iter().map(|r| r.power[i - POWER_OFFSET]).collect(),
            _ => return None,
        };
        Some(values)
    }
}

/// Left join of National Grid columns onto the Elexon key spine. Elexon
/// interconnector columns are dropped.
pub fn merge_tables(elexon: &ElexonTable, ng: &NgTable, variant: Variant) -> Result<MergedTable, MergeError> {
    if elexon.source() != Source::Elexm {
        return Err(MergeError::WrongSource { source_name: Source::Elexm, actual: elexon.source() });
    }
    if ng.source() != Source::Ngem {
        return Err(MergeError::WrongSource { source_name: Source::Ngem, actual: ng.source() });
    }
    debug_assert!(MERGED_ELEXON_COLUMNS.iter().all(|c| !ELEXON_INTERCONNECTOR_COLUMNS.contains(c)));
    let elexon_columns = MERGED_ELEXON_COLUMNS
        .iter()
        .map(|name| match elexon.column(name) {
            Some(c) => Ok(Some(c)),
            None if *name == OTHER_POSTCALC || *name == BIOMASS_POSTCALC => {
                Err(MergeError::MissingColumn(power_column_name(Source::Elexm, name)))
            }
            None => Ok(None),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ng_columns: Vec<Option<&PowerColumn>> = NG_POWER_COLUMNS.iter().map(|n| ng.column(n)).collect();

    let mut records = Vec::with_capacity(elexon.len());
    let mut ng_row = 0;
    for row in 0..elexon.len() {
        let key = elexon.keys()[row];
        while ng_row < ng.len() && ng.keys()[ng_row] < key {
            ng_row += 1;
        }
        let matched = (ng_row < ng.len() && ng.keys()[ng_row] == key).then_some(ng_row);
        let mut power = [None; MERGED_POWER_COUNT];
        for (cell, column) in power.iter_mut().zip(&elexon_columns) {
            *cell = column.and_then(|c| c.values[row]);
        }
        if let Some(n) = matched {
            for (cell, column) in power[MERGED_ELEXON_COLUMNS.len()..].iter_mut().zip(&ng_columns) {
                *cell = column.and_then(|c| c.values[n]);
            }
        }
        records.push(MergedRecord {
            key,
            utc: elexon.utc()[row].clone(),
            localtime: elexon.localtime()[row].clone(),
            elexm_rowflag: elexon.row_flags()[row],
            ngem_rowflag: matched.map(|n| ng.row_flags()[n]),
            espeni_mw: None,
            power,
        });
    }
    Ok(MergedTable { variant, records })
}

/// POWER_ESPENI_MW = sum of the 18 power cells, missing cells as zero.
pub fn compute_espeni(mut table: MergedTable) -> MergedTable {
    for record in &mut table.records {
        record.espeni_mw = Some(record.power_sum());
    }
    table
}

fn cell(value: Option<i64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the 25 column CSV; returns the byte count.
pub fn write_espeni_csv<W: Write>(table: &MergedTable, writer: W) -> Result<u64, MergeError> {
    let mut counter = CountingWriter::new(writer);
    {
        let mut csv = csv::Writer::from_writer(&mut counter);
        csv.write_record(ESPENI_HEADER)?;
        let mut fields: Vec<String> = Vec::with_capacity(ESPENI_HEADER.len());
        for r in &table.records {
            fields.clear();
            fields.push(r.key.date_text());
            fields.push(r.key.period_text());
            fields.push(r.utc.clone());
            fields.push(r.localtime.clone());
            fields.push(r.elexm_rowflag.to_string());
            fields.push(cell(r.ngem_rowflag.map(i64::from)));
            fields.push(cell(r.espeni_mw));
            fields.extend(r.power.iter().map(|v| cell(*v)));
            csv.write_record(&fields)?;
        }
        csv.flush()?;
    }
    Ok(counter.bytes_written())
}

fn parse_flag(text: &str) -> Result<u8, String> {
    match text.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(format!("row flag {other:?} is not 0 or 1")),
    }
}

/// Reads a file written by [`write_espeni_csv`].
pub fn read_espeni_csv<R: Read>(reader: R, variant: Variant) -> Result<MergedTable, MergeError> {
    let mut csv = csv::Reader::from_reader(reader);
    if csv.headers()?.iter().ne(ESPENI_HEADER) {
        return Err(MergeError::Header);
    }
    let mut records = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let parse = |message: String| MergeError::Parse { row, message };
        if record.len() != ESPENI_HEADER.len() {
            return Err(parse(format!("expected {} fields, found {}", ESPENI_HEADER.len(), record.len())));
        }
        let key: SettlementKey = format!("{}_{}", &record[0], &record[1])
            .parse()
            .map_err(|e: CalendarError| parse(e.to_string()))?;
        let ngem_rowflag = match record[5].trim() {
            "" => None,
            text => Some(parse_flag(text).map_err(parse)?),
        };
        let mut power = [None; MERGED_POWER_COUNT];
        for (cell, text) in power.iter_mut().zip(record.iter().skip(POWER_OFFSET)) {
            *cell = parse_optional_int(text).map_err(parse)?;
        }
        records.push(MergedRecord {
            key,
            utc: record[2].to_string(),
            localtime: record[3].to_string(),
            elexm_rowflag: parse_flag(&record[4]).map_err(parse)?,
            ngem_rowflag,
            espeni_mw: parse_optional_int(&record[6]).map_err(parse)?,
            power,
        });
    }
    Ok(MergedTable { variant, records })
}
