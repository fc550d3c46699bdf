//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls the library's own rule code.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDate, Offset, TimeZone, Utc};
use chrono_tz::Europe::London;
use espeni_core::calendar::{CalendarTable, SettlementKey};
use espeni_core::quality::{apply_flags, impute, FlagEntry, FlagSet};
use espeni_core::table::{PowerColumn, Source, SourceTable};
use espeni_core::PipelineConfig;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// UTC instant of local midnight starting `date`, from the tz database.
pub fn oracle_midnight(date: NaiveDate) -> DateTime<Utc> {
    London
        .from_local_datetime(&date.and_hms_opt(0, 0, 0).unwrap())
        .single()
        .expect("London midnight is never ambiguous")
        .with_timezone(&Utc)
}

pub fn oracle_periods(date: NaiveDate) -> i64 {
    (oracle_midnight(date.succ_opt().unwrap()) - oracle_midnight(date)).num_seconds() / 1800
}

pub fn oracle_local_text(instant: DateTime<Utc>) -> (String, bool) {
    let local = instant.with_timezone(&London);
    let offset = local.offset().fix().local_minus_utc();
    (local.format("%Y-%m-%dT%H:%M:%S%:z").to_string(), offset != 0)
}

/// Samples `n` keys across the supported era and compares every field.
pub fn check_random_keys(n: usize, seed: u64) -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(1996, 1, 1).unwrap();
    let span = (NaiveDate::from_ymd_opt(2099, 12, 31).unwrap() - start).num_days();
    for _ in 0..n {
        let date = start + Duration::days(rng.gen_range(0..=span));
        let periods = oracle_periods(date);
        let period = rng.gen_range(1..=periods) as u8;
        let key = SettlementKey::new(date, period).map_err(|e| e.to_string())?;
        let utc = oracle_midnight(date) + Duration::minutes(30 * (i64::from(period) - 1));
        let table = CalendarTable::generate(date, date).map_err(|e| e.to_string())?;
        if table.len() as i64 != periods {
            return Err(format!("{date}: {} periods, oracle {periods}", table.len()));
        }
        let entry = table.lookup(&key.to_string()).map_err(|e| e.to_string())?;
        let (local_text, dst) = oracle_local_text(utc);
        let utc_text = utc.format("%Y-%m-%dT%H:%M:%S+00:00").to_string();
        if key.start_utc() != utc || SettlementKey::from_utc(utc) != key {
            return Err(format!("{key}: start instant differs from oracle {utc_text}"));
        }
        if entry.utc != utc_text || entry.localtime != local_text || entry.localtime_is_dst != dst {
            return Err(format!(
                "{key}: got ({}, {}, {}), oracle ({utc_text}, {local_text}, {dst})",
                entry.utc, entry.localtime, entry.localtime_is_dst
            ));
        }
    }
    Ok(())
}

/// Nearest-even rounding of n / d for d > 0, by floor division.
pub fn oracle_round(n: i128, d: i128) -> i64 {
    let q = n.div_euclid(d);
    let r = n.rem_euclid(d);
    let q = match (2 * r).cmp(&d) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    };
    q as i64
}

/// Scans outwards for the unflagged neighbours of each flagged row and
/// interpolates on row position.
pub fn interpolation_oracle(values: &[Option<i64>], flags: &[bool]) -> Vec<Option<i64>> {
    (0..values.len())
        .map(|i| {
            if !flags[i] {
                return values[i];
            }
            let left = (0..i).rev().find(|&j| !flags[j]);
            let right = (i + 1..values.len()).find(|&j| !flags[j]);
            match (left, right) {
                (Some(l), Some(r)) => {
                    let (a, b) = (values[l]?, values[r]?);
                    let n = i128::from(a) * (r - i) as i128 + i128::from(b) * (i - l) as i128;
                    Some(oracle_round(n, (r - l) as i128))
                }
                (Some(l), None) => values[l],
                (None, Some(r)) => values[r],
                (None, None) => unreachable!("cases keep at least one unflagged row"),
            }
        })
        .collect()
}

pub struct ImputationCase {
    pub table: SourceTable,
    pub flags: FlagSet,
    pub flagged: Vec<bool>,
}

pub fn random_imputation_case(rng: &mut StdRng, cal: &CalendarTable, force_nine: bool) -> ImputationCase {
    let rows = rng.gen_range(30..cal.len());
    let entries = &cal.entries()[..rows];
    let mut flagged = vec![false; rows];
    let mut i = rng.gen_range(0..4);
    let mut first = true;
    while i < rows {
        let len = if first && force_nine { 9 } else { rng.gen_range(1..=9) };
        first = false;
        for f in flagged.iter_mut().skip(i).take(len) {
            *f = true;
        }
        i += len + rng.gen_range(1..15);
    }
    if flagged.iter().all(|f| *f) {
        flagged[rows - 1] = false;
    }
    let columns = (0..3)
        .map(|c| {
            let values = (0..rows)
                .map(|_| if c == 2 && rng.gen_bool(0.05) { None } else { Some(rng.gen_range(-3000..40000)) })
                .collect();
            PowerColumn::new(format!("C{c}"), values)
        })
        .collect();
    let table = SourceTable::from_columns(Source::Elexm, entries, columns).unwrap();
    let flags = entries
        .iter()
        .zip(&flagged)
        .filter(|(_, f)| **f)
        .map(|(e, _)| FlagEntry::new(Source::Elexm, e.key, 0, None, "").unwrap())
        .collect();
    ImputationCase { table, flags, flagged }
}

/// Runs `cases` random tables through apply_flags + impute; returns the
/// longest flagged block seen.
pub fn check_imputation(cases: usize, seed: u64) -> Result<usize, String> {
    let cal = CalendarTable::generate(
        NaiveDate::from_ymd_opt(2020, 3, 28).unwrap(),
        NaiveDate::from_ymd_opt(2020, 4, 1).unwrap(),
    )
    .unwrap();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut longest = 0;
    for case in 0..cases {
        let c = random_imputation_case(&mut rng, &cal, case == 0);
        let erased = apply_flags(&c.table, &c.flags).erased;
        let imputed = impute(&erased).map_err(|e| e.to_string())?;
        for (original, filled) in c.table.columns().iter().zip(imputed.columns()) {
            if filled.values != interpolation_oracle(&original.values, &c.flagged) {
                return Err(format!("case {case} column {} differs from oracle", original.name));
            }
        }
        if impute(&imputed).map_err(|e| e.to_string())? != imputed {
            return Err(format!("case {case}: imputing twice changed values"));
        }
        let mut run = 0;
        for f in &c.flagged {
            run = if *f { run + 1 } else { 0 };
            longest = longest.max(run);
        }
    }
    Ok(longest)
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pipeline")
}

/// The fixture config with outputs redirected to `out`.
pub fn fixture_config(out: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::load(&fixture_dir().join("espeni.toml")).unwrap();
    config.out_dir = out.to_path_buf();
    config.calendar_path = out.join("masterdatetime_iso8601.csv");
    config
}

pub fn fixture_today() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 5, 4).unwrap()
}
