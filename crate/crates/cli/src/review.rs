//! Local JSON API behind the weekly review UI.
//!
//! Source tables are loaded once and never modified. Flag updates go to the
//! manual flag set, which is written back to the flag file (whole file,
//! atomically) before the in-memory view is swapped.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::Utc;
use espeni_core::calendar::{format_utc, parse_timestamp, SettlementKey};
use espeni_core::io::write_atomic;
use espeni_core::pipeline::{
    ingest_elexon_dir, ingest_ng_dir, load_or_generate_calendar, read_flag_file, PipelineError, Stage,
};
use espeni_core::quality::{detect_zero_drops, merge_flags, FlagEntry, FlagSet};
use espeni_core::{PipelineConfig, Source, SourceTable};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WindowPayload {
    pub start_utc: String,
    pub end_utc: String,
    pub keys: Vec<String>,
    pub series: BTreeMap<String, Vec<Option<i64>>>,
    pub flags: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Meta {
    pub start_utc: String,
    pub end_utc: String,
    pub sources: Vec<Source>,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FlagView {
    pub datesp: String,
    pub flag: u8,
    pub note: Option<String>,
    pub updated_utc: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlagUpdate {
    datesp: String,
    flag: i64,
    #[serde(default)]
    note: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlagPost {
    source: String,
    updates: Vec<FlagUpdate>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Applied {
    pub applied: usize,
}

struct Flags {
    manual: FlagSet,
    effective: FlagSet,
}

pub struct ReviewState {
    tables: BTreeMap<Source, SourceTable>,
    auto: FlagSet,
    flags: RwLock<Flags>,
    writer: Mutex<()>,
    flag_path: PathBuf,
}

impl ReviewState {
    pub fn new(tables: Vec<SourceTable>, auto: FlagSet, manual: FlagSet, flag_path: PathBuf) -> Self {
        let effective = merge_flags(&auto, &manual);
        Self {
            tables: tables.into_iter().map(|t| (t.source(), t)).collect(),
            auto,
            flags: RwLock::new(Flags { manual, effective }),
            writer: Mutex::new(()),
            flag_path,
        }
    }

    /// Ingests both sources and reads the flag file named by `config`.
    pub fn load(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let (calendar, _) = load_or_generate_calendar(config, Utc::now().date_naive())?;
        let elexon = ingest_elexon_dir(&config.elexon_dir, &calendar)?;
        let ng = ingest_ng_dir(&config.ng_dir, &calendar, &config.ng_aliases)?;
        let auto = detect_zero_drops(&elexon, &config.detector_categories, "")
            .map_err(espeni_core::pipeline::at(Stage::Detect))?;
        let manual = read_flag_file(&config.flag_path)?;
        Ok(Self::new(vec![elexon, ng], auto, manual, config.flag_path.clone()))
    }

    pub fn table(&self, source: Source) -> Option<&SourceTable> {
        self.tables.get(&source)
    }

    pub fn effective_flags(&self) -> FlagSet {
        self.flags.read().expect("flag lock").effective.clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type Shared = Arc<ReviewState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/window", get(window))
        .route("/api/flags", get(list_flags).post(post_flags))
        .with_state(state)
}

fn parse_source(text: Option<&str>) -> Result<Source, ApiError> {
    let text = text.ok_or_else(|| ApiError::bad_request("missing source parameter"))?;
    text.parse()
        .map_err(|_| ApiError::bad_request(format!("unknown source {text:?}; expected ELEXM or NGEM")))
}

fn source_table(state: &ReviewState, source: Source) -> Result<&SourceTable, ApiError> {
    state
        .table(source)
        .ok_or_else(|| ApiError::not_found(format!("no {source} table loaded")))
}

async fn meta(State(state): State<Shared>) -> Json<Meta> {
    let tables: Vec<&SourceTable> = state.tables.values().filter(|t| !t.is_empty()).collect();
    let start_utc = tables.iter().filter_map(|t| t.utc().first()).min().cloned().unwrap_or_default();
    let end_utc = tables.iter().filter_map(|t| t.utc().last()).max().cloned().unwrap_or_default();
    Json(Meta {
        start_utc,
        end_utc,
        sources: state.tables.keys().copied().collect(),
        columns: state.tables.values().flat_map(|t| t.power_column_names()).collect(),
    })
}

#[derive(Debug, Deserialize)]
struct WindowQuery {
    start: Option<String>,
    end: Option<String>,
    source: Option<String>,
}

async fn window(State(state): State<Shared>, Query(q): Query<WindowQuery>) -> Result<Json<WindowPayload>, ApiError> {
    let source = parse_source(q.source.as_deref())?;
    let bound = |name: &str, text: Option<&String>| {
        let text = text.ok_or_else(|| ApiError::bad_request(format!("missing {name} parameter")))?;
        parse_timestamp(text).ok_or_else(|| ApiError::bad_request(format!("{name} {text:?} is not an ISO 8601 timestamp")))
    };
    let start = bound("start", q.start.as_ref())?;
    let end = bound("end", q.end.as_ref())?;
    if end < start {
        return Err(ApiError::bad_request("end is before start"));
    }
    let table = source_table(&state, source)?;
    let (start_utc, end_utc) = (format_utc(start), format_utc(end));
    // Canonical UTC text sorts chronologically.
    let first = table.utc().partition_point(|u| *u < start_utc);
    let last = table.utc().partition_point(|u| *u < end_utc);
    let flags = state.flags.read().expect("flag lock");
    let keys = &table.keys()[first..last];
    Ok(Json(WindowPayload {
        keys: keys.iter().map(|k| k.to_string()).collect(),
        series: table
            .columns()
            .iter()
            .zip(table.power_column_names())
            .map(|(c, name)| (name, c.values[first..last].to_vec()))
            .collect(),
        flags: keys
            .iter()
            .map(|k| flags.effective.get(source, k).map_or(1, FlagEntry::flag))
            .collect(),
        start_utc,
        end_utc,
    }))
}

#[derive(Debug, Deserialize)]
struct FlagsQuery {
    source: Option<String>,
}

async fn list_flags(State(state): State<Shared>, Query(q): Query<FlagsQuery>) -> Result<Json<Vec<FlagView>>, ApiError> {
    let source = parse_source(q.source.as_deref())?;
    let flags = state.flags.read().expect("flag lock");
    Ok(Json(
        flags
            .effective
            .for_source(source)
            .map(|e| FlagView {
                datesp: e.key.to_string(),
                flag: e.flag(),
                note: e.note.clone(),
                updated_utc: e.updated_utc.clone(),
            })
            .collect(),
    ))
}

async fn post_flags(State(state): State<Shared>, body: Bytes) -> Result<Json<Applied>, ApiError> {
    let post: FlagPost =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))?;
    let source = parse_source(Some(&post.source))?;
    let table = source_table(&state, source)?;
    let now = format_utc(Utc::now());
    let mut entries = Vec::with_capacity(post.updates.len());
    for u in &post.updates {
        let key: SettlementKey = u
            .datesp
            .parse()
            .map_err(|e| ApiError::bad_request(format!("datesp {:?}: {e}", u.datesp)))?;
        let entry = FlagEntry::new(source, key, u.flag, u.note.clone(), now.clone())
            .map_err(|e| ApiError::bad_request(format!("{}: {e}", u.datesp)))?;
        if table.position(&key).is_none() {
            return Err(ApiError::not_found(format!("{source} has no row {key}")));
        }
        entries.push(entry);
    }

    let state = Arc::clone(&state);
    let applied = entries.len();
    tokio::task::spawn_blocking(move || {
        let _writer = state.writer.lock().expect("writer lock");
        let mut manual = state.flags.read().expect("flag lock").manual.clone();
        for entry in entries {
            manual.insert(entry);
        }
        let mut bytes = Vec::new();
        manual.write_csv(&mut bytes).map_err(|e| ApiError::internal(e.to_string()))?;
        write_atomic(&state.flag_path, &bytes)
            .map_err(|e| ApiError::internal(format!("writing {}: {e}", state.flag_path.display())))?;
        let effective = merge_flags(&state.auto, &manual);
        *state.flags.write().expect("flag lock") = Flags { manual, effective };
        Ok::<_, ApiError>(())
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(Applied { applied }))
}

/// Serves until interrupted.
pub async fn serve(state: ReviewState, listen: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!(address = %listener.local_addr()?, "review service listening");
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
