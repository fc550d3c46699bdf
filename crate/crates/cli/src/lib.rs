//! Command line front end, review API and source fetcher.

pub mod commands;
pub mod fetch;
pub mod review;
