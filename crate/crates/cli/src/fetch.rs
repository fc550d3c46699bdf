//! Download of National Grid historic demand files into `ng_dir`, with a
//! `SHA256SUMS` ledger beside them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use espeni_core::io::{checksum_line, sha256_hex, write_atomic};
use espeni_core::PipelineConfig;
use thiserror::Error;

pub const DIGEST_FILE: &str = "SHA256SUMS";

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("{0}")]
    Config(String),
    #[error("GET {url} failed with HTTP {status}")]
    Http { url: String, status: u16 },
    #[error("GET {url} failed after {attempts} attempt(s): {message}")]
    Transport { url: String, attempts: u32, message: String },
    #[error("{path} already exists with different content (existing {existing}, downloaded {downloaded}); use --force to replace it")]
    Conflict {
        path: PathBuf,
        existing: String,
        downloaded: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FetchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            FetchError::Conflict { .. } | FetchError::Config(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchStatus {
    Saved,
    Unchanged,
    Replaced,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub url: String,
    pub path: PathBuf,
    pub sha256: String,
    pub status: FetchStatus,
}

fn file_name_of(url: &str) -> Result<String, FetchError> {
    let path = url.split(['?', '#']).next().unwrap_or(url);
    path.rsplit('/')
        .next()
        .filter(|n| !n.is_empty())
        .map(str::to_string)
        .ok_or_else(|| FetchError::Config(format!("cannot take a file name from {url}")))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> FetchError + '_ {
    move |source| FetchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// GET with retries on transport errors and 5xx responses. 4xx fails at once.
pub fn download(client: &reqwest::blocking::Client, url: &str, retries: u32) -> Result<Vec<u8>, FetchError> {
    let attempts = retries + 1;
    let mut last = String::new();
    for attempt in 1..=attempts {
        if attempt > 1 {
            thread::sleep(Duration::from_millis(200 * u64::from(attempt - 1)));
        }
        match client.get(url).send() {
            Ok(response) if response.status().is_success() => match response.bytes() {
                Ok(bytes) => return Ok(bytes.to_vec()),
                Err(e) => last = e.to_string(),
            },
            Ok(response) if response.status().is_server_error() => {
                last = format!("HTTP {}", response.status().as_u16());
            }
            Ok(response) => {
                return Err(FetchError::Http {
                    url: url.to_string(),
                    status: response.status().as_u16(),
                })
            }
            Err(e) => last = e.to_string(),
        }
        tracing::warn!(url, attempt, error = %last, "download attempt failed");
    }
    Err(FetchError::Transport {
        url: url.to_string(),
        attempts,
        message: last,
    })
}

fn read_digests(path: &Path) -> Result<BTreeMap<String, String>, FetchError> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .filter_map(|line| line.split_once("  "))
        .map(|(digest, name)| (name.to_string(), digest.to_string()))
        .collect())
}

/// Fetches every configured URL for `source` into `config.ng_dir`.
pub fn fetch_source(config: &PipelineConfig, source: &str, force: bool) -> Result<Vec<Fetched>, FetchError> {
    if source != "ng" {
        return Err(FetchError::Config(
            "only ng can be fetched; Elexon files need a per-user key and are downloaded by hand".to_string(),
        ));
    }
    let urls = config.fetch_targets(source).map_err(|e| FetchError::Config(e.to_string()))?;
    let dir = &config.ng_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .map_err(|e| FetchError::Config(e.to_string()))?;
    let digest_path = dir.join(DIGEST_FILE);
    let mut digests = read_digests(&digest_path)?;
    let mut fetched = Vec::new();
    for url in urls {
        let name = file_name_of(&url)?;
        let path = dir.join(&name);
        let bytes = download(&client, &url, config.fetch_retries)?;
        let sha256 = sha256_hex(&bytes);
        let status = if path.exists() {
            let existing = sha256_hex(&fs::read(&path).map_err(io_err(&path))?);
            if existing == sha256 {
                FetchStatus::Unchanged
            } else if force {
                FetchStatus::Replaced
            } else {
                return Err(FetchError::Conflict {
                    path,
                    existing,
                    downloaded: sha256,
                });
            }
        } else {
            FetchStatus::Saved
        };
        if status != FetchStatus::Unchanged {
            write_atomic(&path, &bytes).map_err(io_err(&path))?;
        }
        digests.insert(name, sha256.clone());
        let ledger: String = digests.iter().map(|(n, d)| checksum_line(d, n)).collect();
        write_atomic(&digest_path, ledger.as_bytes()).map_err(io_err(&digest_path))?;
        tracing::info!(url = %url, path = %path.display(), ?status, "fetched");
        fetched.push(Fetched {
            url,
            path,
            sha256,
            status,
        });
    }
    Ok(fetched)
}
