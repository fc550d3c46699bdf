//! Settlement calendar: the bridge between GB settlement keys
//! (`YYYY-MM-DD_PP`) and ISO 8601 UTC / Europe/London timestamps.
//!
//! Period 1 starts at local midnight and periods advance in 30 minute UTC
//! steps, so the March clock change day has 46 periods and the October one
//! has 50.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveTime, TimeZone, Timelike, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::io::CountingWriter;

/// First year for which the encoded Europe/London rules are trusted.
pub const MIN_SUPPORTED_YEAR: i32 = 1996;
/// Last year accepted for generation.
pub const MAX_SUPPORTED_YEAR: i32 = 2099;

pub const PERIOD_SECONDS: i64 = 1800;

pub const CALENDAR_HEADER: [&str; 9] = [
    "datesp",
    "settlementdate",
    "settlementperiod",
    "utc",
    "localtime",
    "localtimeisdst",
    "short_day_flag",
    "long_day_flag",
    "normal_day_flag",
];

#[derive(Debug, Error)]
pub enum CalendarError {
    #[error("date range {start}..{end} is outside the supported rule era {MIN_SUPPORTED_YEAR}..={MAX_SUPPORTED_YEAR}")]
    UnsupportedRange { start: NaiveDate, end: NaiveDate },
    #[error("start date {start} is after end date {end}")]
    InvertedRange { start: NaiveDate, end: NaiveDate },
    #[error("malformed settlement key {0:?}")]
    MalformedKey(String),
    #[error("settlement period {period} is not valid for {date} (day length {day_length})")]
    PeriodOutOfRange { date: NaiveDate, period: u8, day_length: u8 },
    #[error("settlement key {0} is not covered by the calendar")]
    MissingKey(String),
    #[error("date {0} is outside the generated calendar range")]
    DateOutOfRange(NaiveDate),
    #[error("calendar file row {row}: {message}")]
    InvalidFile { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Kind of settlement day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DayType {
    Short,
    Long,
    Normal,
}

impl DayType {
    pub fn period_count(self) -> u8 {
        match self {
            DayType::Short => 46,
            DayType::Long => 50,
            DayType::Normal => 48,
        }
    }
}

fn last_sunday(year: i32, month: u32) -> NaiveDate {
    let first_of_next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    }
    .expect("valid month start");
    let last = first_of_next.pred_opt().expect("valid date");
    let back = last.weekday().num_days_from_sunday();
    last - Duration::days(i64::from(back))
}

/// Local civil date of the spring-forward (46 period) day.
pub fn short_day(year: i32) -> NaiveDate {
    last_sunday(year, 3)
}

/// Local civil date of the fall-back (50 period) day.
pub fn long_day(year: i32) -> NaiveDate {
    last_sunday(year, 10)
}

fn transition_instant(date: NaiveDate) -> DateTime<Utc> {
    Utc.from_utc_datetime(&date.and_time(NaiveTime::from_hms_opt(1, 0, 0).unwrap()))
}

/// UTC offset of Europe/London in seconds (0 or 3600) at an instant.
pub fn london_offset_seconds(instant: DateTime<Utc>) -> i32 {
    let year = instant.year();
    let start = transition_instant(short_day(year));
    let end = transition_instant(long_day(year));
    if instant >= start && instant < end {
        3600
    } else {
        0
    }
}

pub fn day_type(date: NaiveDate) -> DayType {
    if date == short_day(date.year()) {
        DayType::Short
    } else if date == long_day(date.year()) {
        DayType::Long
    } else {
        DayType::Normal
    }
}

/// Number of settlement periods on a local civil date, from the rules alone.
pub fn periods_in_day(date: NaiveDate) -> u8 {
    day_type(date).period_count()
}

/// UTC instant at which local civil `date` begins.
pub fn local_midnight_utc(date: NaiveDate) -> DateTime<Utc> {
    let midnight = Utc.from_utc_datetime(&date.and_time(NaiveTime::MIN));
    let candidate = midnight - Duration::hours(1);
    if london_offset_seconds(candidate) == 3600 {
        candidate
    } else {
        midnight
    }
}

fn format_with_offset(instant: DateTime<Utc>, offset_seconds: i32) -> String {
    let t = instant.naive_utc() + Duration::seconds(i64::from(offset_seconds));
    let suffix = if offset_seconds == 0 { "+00:00" } else { "+01:00" };
    format!(
        "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}{suffix}",
        t.year(),
        t.month(),
        t.day(),
        t.hour(),
        t.minute(),
        t.second()
    )
}

pub fn format_utc(instant: DateTime<Utc>) -> String {
    format_with_offset(instant, 0)
}

pub fn format_local(instant: DateTime<Utc>) -> String {
    format_with_offset(instant, london_offset_seconds(instant))
}

/// Parses `YYYY-MM-DDTHH:MM:SS±HH:MM` (or RFC 3339 with `Z`) into a UTC instant.
pub fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(text.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

/// A (settlement date, settlement period) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SettlementKey {
    date: NaiveDate,
    period: u8,
}

impl SettlementKey {
    pub fn new(date: NaiveDate, period: u8) -> Result<Self, CalendarError> {
        let day_length = periods_in_day(date);
        if period == 0 || period > day_length {
            return Err(CalendarError::PeriodOutOfRange {
                date,
                period,
                day_length,
            });
        }
        Ok(Self { date, period })
    }

    pub fn settlement_date(&self) -> NaiveDate {
        self.date
    }

    pub fn settlement_period(&self) -> u8 {
        self.period
    }

    /// The 13 character `YYYY-MM-DD_PP` form.
    pub fn canonical_text(&self) -> String {
        self.to_string()
    }

    pub fn date_text(&self) -> String {
        self.date.format("%Y-%m-%d").to_string()
    }

    pub fn period_text(&self) -> String {
        format!("{:02}", self.period)
    }

    /// Key of the half-hour that starts at (or contains) `instant`.
    pub fn from_utc(instant: DateTime<Utc>) -> Self {
        let local = instant.naive_utc() + Duration::seconds(i64::from(london_offset_seconds(instant)));
        let date = local.date();
        let elapsed = (instant - local_midnight_utc(date)).num_seconds();
        let period = (elapsed.div_euclid(PERIOD_SECONDS) + 1) as u8;
        Self { date, period }
    }

    /// UTC start instant of this period.
    pub fn start_utc(&self) -> DateTime<Utc> {
        local_midnight_utc(self.date) + Duration::seconds(i64::from(self.period - 1) * PERIOD_SECONDS)
    }
}

impl fmt::Display for SettlementKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{:02}", self.date.format("%Y-%m-%d"), self.period)
    }
}

impl FromStr for SettlementKey {
    type Err = CalendarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || CalendarError::MalformedKey(s.to_string());
        if s.len() != 13 || !s.is_ascii() || s.as_bytes()[10] != b'_' {
            return Err(malformed());
        }
        let date = NaiveDate::parse_from_str(&s[..10], "%Y-%m-%d").map_err(|_| malformed())?;
        if date.format("%Y-%m-%d").to_string() != s[..10] {
            return Err(malformed());
        }
        let digits = &s[11..];
        if !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed());
        }
        let period: u8 = digits.parse().map_err(|_| malformed())?;
        Self::new(date, period)
    }
}

impl Serialize for SettlementKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SettlementKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// One half-hour of the master calendar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalendarEntry {
    pub key: SettlementKey,
    pub utc: String,
    pub localtime: String,
    pub localtime_is_dst: bool,
    pub short_day: bool,
    pub long_day: bool,
    pub normal_day: bool,
    instant: i64,
}

impl CalendarEntry {
    fn at(instant: DateTime<Utc>) -> Self {
        let key = SettlementKey::from_utc(instant);
        Self::build(key, instant, london_offset_seconds(instant), day_type(key.date))
    }

    fn build(key: SettlementKey, instant: DateTime<Utc>, offset_seconds: i32, day: DayType) -> Self {
        Self {
            key,
            utc: format_utc(instant),
            localtime: format_with_offset(instant, offset_seconds),
            localtime_is_dst: offset_seconds == 3600,
            short_day: day == DayType::Short,
            long_day: day == DayType::Long,
            normal_day: day == DayType::Normal,
            instant: instant.timestamp(),
        }
    }

    pub fn utc_instant(&self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.instant, 0).expect("calendar instants are in range")
    }

    pub fn unix_seconds(&self) -> i64 {
        self.instant
    }
}

/// Immutable, gapless half-hourly calendar with a key index.
#[derive(Debug, Clone)]
pub struct CalendarTable {
    entries: Vec<CalendarEntry>,
    index: HashMap<SettlementKey, usize>,
}

fn check_supported(start: NaiveDate, end: NaiveDate) -> Result<(), CalendarError> {
    if start > end {
        return Err(CalendarError::InvertedRange { start, end });
    }
    if start.year() < MIN_SUPPORTED_YEAR || end.year() > MAX_SUPPORTED_YEAR {
        return Err(CalendarError::UnsupportedRange { start, end });
    }
    Ok(())
}

impl CalendarTable {
    /// Every half-hour whose local civil date falls in `start..=end`.
    pub fn generate(start: NaiveDate, end: NaiveDate) -> Result<Self, CalendarError> {
        check_supported(start, end)?;
        let stop = local_midnight_utc(end.succ_opt().expect("supported dates have successors"));
        let mut entries = Vec::with_capacity(((stop - local_midnight_utc(start)).num_seconds() / PERIOD_SECONDS) as usize);
        let mut bst = (start.year(), transition_instant(short_day(start.year())), transition_instant(long_day(start.year())));
        for date in start.iter_days().take_while(|d| *d <= end) {
            if date.year() != bst.0 {
                bst = (date.year(), transition_instant(short_day(date.year())), transition_instant(long_day(date.year())));
            }
            let day = day_type(date);
            let midnight = local_midnight_utc(date);
            for period in 1..=day.period_count() {
                let instant = midnight + Duration::seconds(i64::from(period - 1) * PERIOD_SECONDS);
                let offset = if instant >= bst.1 && instant < bst.2 { 3600 } else { 0 };
                entries.push(CalendarEntry::build(SettlementKey { date, period }, instant, offset, day));
            }
        }
        Ok(Self::from_entries_unchecked(entries))
    }

    /// 2008-01-01 through the end of the year after `today`'s year.
    pub fn generate_default(today: NaiveDate) -> Result<Self, CalendarError> {
        let (start, end) = default_range(today);
        Self::generate(start, end)
    }

    fn from_entries_unchecked(entries: Vec<CalendarEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.key, i))
            .collect();
        Self { entries, index }
    }

    pub fn entries(&self) -> &[CalendarEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.entries.first().map(|e| e.key.date)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.entries.last().map(|e| e.key.date)
    }

    pub fn lookup(&self, key_text: &str) -> Result<&CalendarEntry, CalendarError> {
        self.index_of(key_text)
            .map(|i| &self.entries[i])
            .ok_or_else(|| CalendarError::MissingKey(key_text.to_string()))
    }

    pub fn index_of(&self, key_text: &str) -> Option<usize> {
        self.index_of_key(&key_text.parse().ok()?)
    }

    pub fn index_of_key(&self, key: &SettlementKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn get(&self, index: usize) -> Option<&CalendarEntry> {
        self.entries.get(index)
    }

    /// Index of the first entry whose UTC instant is at or after `instant`.
    pub fn position_at_or_after(&self, instant: DateTime<Utc>) -> usize {
        let t = instant.timestamp();
        self.entries.partition_point(|e| e.instant < t)
    }

    pub fn day_length(&self, date: NaiveDate) -> Result<u8, CalendarError> {
        match (self.first_date(), self.last_date()) {
            (Some(first), Some(last)) if date >= first && date <= last => Ok(periods_in_day(date)),
            _ => Err(CalendarError::DateOutOfRange(date)),
        }
    }

    /// Writes `masterdatetime_iso8601.csv`; returns the byte count.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<u64, CalendarError> {
        let mut counter = CountingWriter::new(writer);
        {
            let mut csv = csv::Writer::from_writer(&mut counter);
            csv.write_record(CALENDAR_HEADER)?;
            for e in &self.entries {
                csv.write_record([
                    e.key.to_string().as_str(),
                    &e.key.date_text(),
                    &e.key.period_text(),
                    &e.utc,
                    &e.localtime,
                    bool_text(e.localtime_is_dst),
                    bool_text(e.short_day),
                    bool_text(e.long_day),
                    bool_text(e.normal_day),
                ])?;
            }
            csv.flush()?;
        }
        Ok(counter.bytes_written())
    }

    /// Reads a calendar file and re-derives every row from its UTC column,
    /// rejecting files whose rows disagree with the rules.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, CalendarError> {
        let mut csv = csv::Reader::from_reader(reader);
        let headers = csv.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != CALENDAR_HEADER {
            return Err(CalendarError::InvalidFile {
                row: 1,
                message: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
            });
        }
        let mut entries: Vec<CalendarEntry> = Vec::new();
        for (i, record) in csv.records().enumerate() {
            let row = i + 2;
            let record = record?;
            let invalid = |message: String| CalendarError::InvalidFile { row, message };
            let instant = parse_timestamp(&record[3])
                .ok_or_else(|| invalid(format!("bad utc timestamp {:?}", &record[3])))?;
            let entry = CalendarEntry::at(instant);
            let rendered = [
                entry.key.to_string(),
                entry.key.date_text(),
                entry.key.period_text(),
                entry.utc.clone(),
                entry.localtime.clone(),
                bool_text(entry.localtime_is_dst).to_string(),
                bool_text(entry.short_day).to_string(),
                bool_text(entry.long_day).to_string(),
                bool_text(entry.normal_day).to_string(),
            ];
            if record.iter().ne(rendered.iter().map(String::as_str)) {
                return Err(invalid(format!("row does not match derived values for {}", entry.utc)));
            }
            if let Some(prev) = entries.last() {
                if entry.instant - prev.instant != PERIOD_SECONDS {
                    return Err(invalid(format!("gap or disorder before {}", entry.utc)));
                }
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(CalendarError::InvalidFile {
                row: 1,
                message: "calendar file has no rows".to_string(),
            });
        }
        Ok(Self::from_entries_unchecked(entries))
    }
}

pub fn default_range(today: NaiveDate) -> (NaiveDate, NaiveDate) {
    (
        NaiveDate::from_ymd_opt(2008, 1, 1).unwrap(),
        NaiveDate::from_ymd_opt(today.year() + 1, 12, 31).unwrap(),
    )
}

fn bool_text(value: bool) -> &'static str {
    if value {
        "TRUE"
    } else {
        "FALSE"
    }
}
