use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest and highest category on the absolute category rating scale.
pub const ACR_MIN: u8 = 1;
pub const ACR_MAX: u8 = 5;

/// Arithmetic mean of ACR votes.
pub fn compute_mos(votes: &[u8]) -> Result<f64> {
    if votes.is_empty() {
        return Err(Error::Empty("vote list"));
    }
    if let Some(&bad) = votes.iter().find(|v| !(ACR_MIN..=ACR_MAX).contains(*v)) {
        return Err(Error::InvalidVote {
            video_id: String::new(),
            vote: bad as i64,
        });
    }
    let sum: u64 = votes.iter().map(|&v| v as u64).sum();
    Ok(sum as f64 / votes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub media_path: Option<PathBuf>,
    pub votes: Vec<u8>,
    pub mos: f64,
    pub groups: BTreeMap<String, String>,
}

impl VideoRecord {
    /// Record whose MOS is derived from its votes.
    pub fn from_votes(video_id: impl Into<String>, votes: Vec<u8>) -> Result<Self> {
        let video_id = video_id.into();
        let mos = compute_mos(&votes).map_err(|e| tag_vote_error(e, &video_id))?;
        Ok(VideoRecord {
            video_id,
            media_path: None,
            votes,
            mos,
            groups: BTreeMap::new(),
        })
    }

    /// Record carrying only a published MOS.
    pub fn from_mos(video_id: impl Into<String>, mos: f64) -> Self {
        VideoRecord {
            video_id: video_id.into(),
            media_path: None,
            votes: Vec::new(),
            mos,
            groups: BTreeMap::new(),
        }
    }

    pub fn with_group(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.groups.insert(key.into(), value.into());
        self
    }

    pub fn with_media_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.media_path = Some(path.into());
        self
    }
}

fn tag_vote_error(err: Error, video_id: &str) -> Error {
    match err {
        Error::InvalidVote { vote, .. } => Error::InvalidVote {
            video_id: video_id.to_owned(),
            vote,
        },
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub lo: f64,
    pub hi: f64,
}

impl RatingScale {
    pub const ACR: RatingScale = RatingScale { lo: 1.0, hi: 5.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Validation(format!(
                "rating scale needs lo < hi, got ({lo}, {hi})"
            )));
        }
        Ok(RatingScale { lo, hi })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.lo) / (self.hi - self.lo)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.lo + y * (self.hi - self.lo)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

impl Default for RatingScale {
    fn default() -> Self {
        RatingScale::ACR
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    records: Vec<VideoRecord>,
    pub scale: RatingScale,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, records: Vec<VideoRecord>, scale: RatingScale) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("manifest has no records"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.video_id.as_str()) {
                return Err(Error::DuplicateId(r.video_id.clone()));
            }
            if let Some(&bad) = r.votes.iter().find(|v| !(ACR_MIN..=ACR_MAX).contains(*v)) {
                return Err(Error::InvalidVote {
                    video_id: r.video_id.clone(),
                    vote: bad as i64,
                });
            }
            if !r.mos.is_finite() || !scale.contains(r.mos) {
                return Err(Error::Validation(format!(
                    "video {:?}: MOS {} outside scale [{}, {}]",
                    r.video_id, r.mos, scale.lo, scale.hi
                )));
            }
        }
        Ok(DatasetManifest {
            name: name.into(),
            records,
            scale,
        })
    }

    pub fn records(&self) -> &[VideoRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    pub fn mos(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mos).collect()
    }

    /// Sub-manifest holding the records at `indices`, in the given order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        DatasetManifest::new(name, records, self.scale)
    }
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    video_id: String,
    #[serde(default)]
    media_path: String,
    #[serde(default)]
    mos: String,
    #[serde(default)]
    votes: String,
    #[serde(default)]
    groups: String,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    load_manifest_with_scale(path, RatingScale::ACR)
}

/// Reads a manifest CSV (`video_id,media_path,mos,votes,groups`).
///
/// MOS is recomputed from the votes column when it is nonempty; otherwise the
/// `mos` column is taken as published.
pub fn load_manifest_with_scale(path: impl AsRef<Path>, scale: RatingScale) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut records = Vec::new();
    for raw in reader.records() {
        let raw = raw.map_err(|e| csv_error(path, e))?;
        let line = raw.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: ManifestRow = raw
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        records.push(parse_row(path, line, row)?);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    DatasetManifest::new(name, records, scale)
}

fn parse_row(path: &Path, line: usize, row: ManifestRow) -> Result<VideoRecord> {
    if row.video_id.is_empty() {
        return Err(Error::parse(path, line, "empty video_id"));
    }
    let votes = parse_votes(&row.votes).map_err(|m| Error::parse(path, line, m))?;
    if let Some(&bad) = votes.iter().find(|&&v| !(1..=5).contains(&v)) {
        return Err(Error::InvalidVote {
            video_id: row.video_id,
            vote: bad,
        });
    }
    let votes: Vec<u8> = votes.into_iter().map(|v| v as u8).collect();

    let mos = if !votes.is_empty() {
        compute_mos(&votes)?
    } else if !row.mos.is_empty() {
        row.mos
            .parse::<f64>()
            .map_err(|e| Error::parse(path, line, format!("mos {:?}: {e}", row.mos)))?
    } else {
        return Err(Error::parse(path, line, "neither votes nor mos given"));
    };

    let mut groups = BTreeMap::new();
    for pair in row.groups.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line, format!("group {pair:?} is not key=value")))?;
        groups.insert(k.trim().to_owned(), v.trim().to_owned());
    }

    Ok(VideoRecord {
        video_id: row.video_id,
        media_path: (!row.media_path.is_empty()).then(|| PathBuf::from(row.media_path)),
        votes,
        mos,
        groups,
    })
}

fn parse_votes(field: &str) -> std::result::Result<Vec<i64>, String> {
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<i64>().map_err(|e| format!("vote {s:?}: {e}")))
        .collect()
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::parse(path, line, format!("{kind:?}")),
    }
}

/// Writes the manifest in the same CSV grammar `load_manifest` reads.
pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(["video_id", "media_path", "mos", "votes", "groups"])
        .map_err(|e| csv_error(path, e))?;
    for r in manifest.records() {
        let media = r
            .media_path
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default();
        let votes = r.votes.iter().map(u8::to_string).collect::<Vec<_>>().join(";");
        let groups = r
            .groups
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        writer
            .write_record([r.video_id.as_str(), &media, &r.mos.to_string(), &votes, &groups])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
