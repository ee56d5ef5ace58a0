use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::record::{DatasetManifest, VideoRecord, ACR_MAX, ACR_MIN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub video_id: String,
    pub rater_id: String,
    pub vote: u8,
}

/// Individual ratings, at most one per (video, rater) pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VoteTable {
    rows: Vec<Vote>,
    by_video: HashMap<String, Vec<usize>>,
    order: Vec<String>,
    seen: HashSet<(String, String)>,
}

impl VoteTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, video_id: &str, rater_id: &str, vote: u8) -> Result<()> {
        if !(ACR_MIN..=ACR_MAX).contains(&vote) {
            return Err(Error::InvalidVote {
                video_id: video_id.to_owned(),
                vote: vote as i64,
            });
        }
        if !self.seen.insert((video_id.to_owned(), rater_id.to_owned())) {
            return Err(Error::Validation(format!(
                "rater {rater_id:?} voted twice on video {video_id:?}"
            )));
        }
        let idx = self.rows.len();
        self.rows.push(Vote {
            video_id: video_id.to_owned(),
            rater_id: rater_id.to_owned(),
            vote,
        });
        match self.by_video.get_mut(video_id) {
            Some(list) => list.push(idx),
            None => {
                self.order.push(video_id.to_owned());
                self.by_video.insert(video_id.to_owned(), vec![idx]);
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> &[Vote] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Video ids in order of first appearance.
    pub fn video_ids(&self) -> &[String] {
        &self.order
    }

    pub fn votes_for(&self, video_id: &str) -> Vec<u8> {
        self.by_video
            .get(video_id)
            .map(|idx| idx.iter().map(|&i| self.rows[i].vote).collect())
            .unwrap_or_default()
    }

    /// Checks that every referenced video exists in `manifest`.
    pub fn validate_against(&self, manifest: &DatasetManifest) -> Result<()> {
        let ids: HashSet<&str> = manifest.records().iter().map(|r| r.video_id.as_str()).collect();
        match self.order.iter().find(|id| !ids.contains(id.as_str())) {
            Some(missing) => Err(Error::Validation(format!(
                "vote table references video {missing:?} absent from manifest {:?}",
                manifest.name
            ))),
            None => Ok(()),
        }
    }

    /// Replaces the votes (and so the MOS) of every manifest record that has
    /// rows in this table.
    pub fn attach_to(&self, manifest: &DatasetManifest) -> Result<DatasetManifest> {
        self.validate_against(manifest)?;
        let records = manifest
            .records()
            .iter()
            .map(|r| {
                let votes = self.votes_for(&r.video_id);
                if votes.is_empty() {
                    return Ok(r.clone());
                }
                let mut fresh = VideoRecord::from_votes(r.video_id.clone(), votes)?;
                fresh.media_path = r.media_path.clone();
                fresh.groups = r.groups.clone();
                Ok(fresh)
            })
            .collect::<Result<Vec<_>>>()?;
        DatasetManifest::new(manifest.name.clone(), records, manifest.scale)
    }
}

pub fn load_votes(path: impl AsRef<Path>) -> Result<VoteTable> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let mut table = VoteTable::new();
    for raw in reader.records() {
        let raw = raw.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = raw.position().map(|p| p.line() as usize).unwrap_or(0);
        #[derive(Deserialize)]
        struct Row {
            video_id: String,
            rater_id: String,
            vote: i64,
        }
        let row: Row = raw
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        if !(1..=5).contains(&row.vote) {
            return Err(Error::InvalidVote {
                video_id: row.video_id,
                vote: row.vote,
            });
        }
        table.push(&row.video_id, &row.rater_id, row.vote as u8)?;
    }
    Ok(table)
}

pub fn write_votes(table: &VoteTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    writer
        .write_record(["video_id", "rater_id", "vote"])
        .and_then(|_| {
            table.rows().iter().try_for_each(|v| {
                writer.write_record([v.video_id.as_str(), v.rater_id.as_str(), &v.vote.to_string()])
            })
        })
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::RatingScale;

    #[test]
    fn one_vote_per_rater_and_video() {
        let mut t = VoteTable::new();
        t.push("a", "r1", 3).unwrap();
        t.push("a", "r2", 4).unwrap();
        t.push("b", "r1", 5).unwrap();
        assert!(t.push("a", "r1", 2).is_err());
        assert!(t.push("a", "r3", 9).is_err());
        assert_eq!(t.votes_for("a"), vec![3, 4]);
        assert_eq!(t.video_ids(), ["a", "b"]);
    }

    #[test]
    fn unknown_video_fails_validation() {
        let m = DatasetManifest::new("m", vec![VideoRecord::from_mos("a", 3.0)], RatingScale::ACR).unwrap();
        let mut t = VoteTable::new();
        t.push("a", "r1", 3).unwrap();
        assert!(t.validate_against(&m).is_ok());
        t.push("zz", "r1", 3).unwrap();
        assert!(t.validate_against(&m).is_err());
    }

    #[test]
    fn csv_round_trip_and_attach() {
        let mut t = VoteTable::new();
        for (i, v) in [1u8, 2, 3, 5].iter().enumerate() {
            t.push("a", &format!("r{i}"), *v).unwrap();
        }
        let f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        write_votes(&t, f.path()).unwrap();
        let back = load_votes(f.path()).unwrap();
        assert_eq!(back.rows(), t.rows());

        let m = DatasetManifest::new("m", vec![VideoRecord::from_mos("a", 1.0)], RatingScale::ACR).unwrap();
        let attached = back.attach_to(&m).unwrap();
        assert_eq!(attached.records()[0].mos, 2.75);
    }
}
