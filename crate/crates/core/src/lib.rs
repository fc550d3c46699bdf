//! Reconstruction of half-hourly GB electricity demand from Elexon
//! generation outturn and National Grid ESO historic demand files.
//!
//! Stages run calendar → ingest → quality → merge → reporting, and
//! [`pipeline::run_pipeline`] strings them together.

pub mod calendar;
pub mod config;
pub mod elexon;
pub mod io;
pub mod merge;
pub mod ng;
pub mod pipeline;
pub mod quality;
pub mod reporting;
pub mod table;

pub use calendar::{CalendarEntry, CalendarTable, SettlementKey};
pub use config::PipelineConfig;

pub use merge::{MergedTable, Variant};
pub use quality::{FlagEntry, FlagSet};
pub use table::{Source, SourceTable};
