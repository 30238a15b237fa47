//! Archive download into a local cache that mirrors the archive layout.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use sha2::{Digest, Sha256};

use crate::edf::{record_path, validate_record_ids};
use crate::error::{Error, Result};

pub const DEFAULT_BASE_URL: &str = "https://physionet.org/files/eegmmidb/1.0.0";
/// Overrides [`DEFAULT_BASE_URL`].
pub const BASE_URL_ENV: &str = "EEGMMI_BASE_URL";
const CHECKSUM_FILE: &str = "SHA256SUMS.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FetchStatus {
    Fetched,
    Cached,
}

pub struct Fetcher {
    base_url: String,
    client: Client,
    retries: u32,
    checksums: OnceLock<Option<HashMap<String, String>>>,
}

impl Fetcher {
    pub fn new(base_url: impl Into<String>) -> Result<Self> {
        let client = Client::builder()
            .connect_timeout(Duration::from_secs(15))
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::Fetch {
                url: String::new(),
                reason: e.to_string(),
            })?;
        Ok(Fetcher {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client,
            retries: 2,
            checksums: OnceLock::new(),
        })
    }

    /// Base URL from `EEGMMI_BASE_URL`, falling back to the public archive.
    pub fn from_env() -> Result<Self> {
        Self::new(std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string()))
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn fetch_record(&self, subject: u32, run: u32, cache_dir: &Path) -> Result<PathBuf> {
        self.fetch_record_status(subject, run, cache_dir).map(|(p, _)| p)
    }

    /// Returns the cached path, downloading only if the file is absent.
    pub fn fetch_record_status(
        &self,
        subject: u32,
        run: u32,
        cache_dir: &Path,
    ) -> Result<(PathBuf, FetchStatus)> {
        validate_record_ids(subject, run)?;
        let rel = record_path(subject, run);
        let dest = cache_dir.join(&rel);
        if dest.is_file() {
            return Ok((dest, FetchStatus::Cached));
        }
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let part = dest.with_extension("edf.part");
        let url = format!("{}/{rel}", self.base_url);
        let mut attempt = 0;
        loop {
            match self.download(&url, &part) {
                Ok(()) => break,
                Err(DownloadError::NotFound) => {
                    let _ = fs::remove_file(&part);
                    return Err(Error::InvalidRecord {
                        subject,
                        run,
                        reason: format!("{url} returned 404"),
                    });
                }
                Err(DownloadError::Other(e)) => return Err(e),
                Err(DownloadError::Transient(reason)) if attempt >= self.retries => {
                    return Err(Error::Fetch { url, reason });
                }
                Err(DownloadError::Transient(reason)) => {
                    attempt += 1;
                    log::warn!("{url}: {reason}; retry {attempt}/{}", self.retries);
                    std::thread::sleep(Duration::from_millis(200 * attempt as u64));
                }
            }
        }
        if let Some(expected) = self.checksum_for(&rel, cache_dir) {
            let actual = sha256_file(&part)?;
            if !actual.eq_ignore_ascii_case(&expected) {
                let _ = fs::remove_file(&part);
                return Err(Error::CorruptDownload {
                    path: dest,
                    expected,
                    actual,
                });
            }
        }
        fs::rename(&part, &dest).map_err(|e| Error::io(&dest, e))?;
        Ok((dest, FetchStatus::Fetched))
    }

    /// Streams `url` into `part`, resuming from its current length.
    fn download(&self, url: &str, part: &Path) -> std::result::Result<(), DownloadError> {
        let have = fs::metadata(part).map(|m| m.len()).unwrap_or(0);
        let mut req = self.client.get(url);
        if have > 0 {
            req = req.header(reqwest::header::RANGE, format!("bytes={have}-"));
        }
        let mut resp = req
            .send()
            .map_err(|e| DownloadError::Transient(e.to_string()))?;
        let append = match resp.status() {
            StatusCode::NOT_FOUND => return Err(DownloadError::NotFound),
            StatusCode::PARTIAL_CONTENT => true,
            StatusCode::RANGE_NOT_SATISFIABLE if have > 0 => return Ok(()),
            s if s.is_success() => false,
            s if s.is_server_error() => return Err(DownloadError::Transient(format!("HTTP {s}"))),
            s => {
                return Err(DownloadError::Other(Error::Fetch {
                    url: url.to_string(),
                    reason: format!("HTTP {s}"),
                }))
            }
        };
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(part)
            .map_err(|e| DownloadError::Other(Error::io(part, e)))?;
        let mut buf = vec![0u8; 64 * 1024];
        loop {
            let n = resp
                .read(&mut buf)
                .map_err(|e| DownloadError::Transient(e.to_string()))?;
            if n == 0 {
                break;
            }
            file.write_all(&buf[..n])
                .map_err(|e| DownloadError::Other(Error::io(part, e)))?;
        }
        Ok(())
    }

    fn checksum_for(&self, rel: &str, cache_dir: &Path) -> Option<String> {
        self.checksums
            .get_or_init(|| self.load_checksums(cache_dir))
            .as_ref()
            .and_then(|m| m.get(rel).cloned())
    }

    fn load_checksums(&self, cache_dir: &Path) -> Option<HashMap<String, String>> {
        let local = cache_dir.join(CHECKSUM_FILE);
        let text = match fs::read_to_string(&local) {
            Ok(t) => t,
            Err(_) => {
                let url = format!("{}/{CHECKSUM_FILE}", self.base_url);
                let resp = self.client.get(&url).send().ok()?;
                if !resp.status().is_success() {
                    log::info!("no checksum list at {url}; downloads are not verified");
                    return None;
                }
                let t = resp.text().ok()?;
                let _ = fs::create_dir_all(cache_dir).and_then(|_| fs::write(&local, &t));
                t
            }
        };
        Some(parse_checksums(&text))
    }
}

enum DownloadError {
    NotFound,
    Transient(String),
    Other(Error),
}

/// `<hex digest> <relative path>` per line.
pub fn parse_checksums(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| {
            let mut it = l.split_whitespace();
            let digest = it.next()?;
            let path = it.next()?.trim_start_matches('*').trim_start_matches("./");
            Some((path.to_string(), digest.to_lowercase()))
        })
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}
