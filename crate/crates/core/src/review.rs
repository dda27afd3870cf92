//! Human sign-off of synthetic pairs.
//!
//! Verdicts are appended to a JSONL log and never rewritten. The effective
//! status of a pair is the decision of its latest log entry; a `pending`
//! entry withdraws an earlier decision.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::synth::{ReviewStatus, SyntheticPairRecord};

pub const VERDICT_LOG_FILE: &str = "verdicts.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub synth_id: String,
    pub decision: ReviewStatus,
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
}

/// Effective status per synth id after applying `entries` in order.
pub fn replay<'a, I>(entries: I) -> BTreeMap<String, ReviewStatus>
where
    I: IntoIterator<Item = &'a Verdict>,
{
    let mut out = BTreeMap::new();
    for v in entries {
        out.insert(v.synth_id.clone(), v.decision);
    }
    out
}

/// Append-only verdict log backed by a file.
#[derive(Debug)]
pub struct VerdictLog {
    path: PathBuf,
    file: File,
    entries: Vec<Verdict>,
    status: BTreeMap<String, ReviewStatus>,
}

impl VerdictLog {
    /// Opens the log, creating an empty one if needed, and replays it.
    pub fn open(path: &Path) -> Result<Self> {
        let entries: Vec<Verdict> = if path.exists() {
            jsonl::read(path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let status = replay(&entries);
        Ok(VerdictLog {
            path: path.to_owned(),
            file,
            entries,
            status,
        })
    }

    /// Reads a log without opening it for writing; a missing file is empty.
    pub fn read_statuses(path: &Path) -> Result<BTreeMap<String, ReviewStatus>> {
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        Ok(replay(&jsonl::read::<Verdict>(path)?))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Persists `verdict` (flushed and synced) before updating the state.
    pub fn append(&mut self, verdict: Verdict) -> Result<()> {
        let mut line = serde_json::to_string(&verdict).expect("verdict serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|()| self.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))?;
        self.status.insert(verdict.synth_id.clone(), verdict.decision);
        self.entries.push(verdict);
        Ok(())
    }

    pub fn status(&self, synth_id: &str) -> ReviewStatus {
        self.status.get(synth_id).copied().unwrap_or_default()
    }

    pub fn statuses(&self) -> &BTreeMap<String, ReviewStatus> {
        &self.status
    }

    pub fn entries(&self) -> &[Verdict] {
        &self.entries
    }
}

/// Sets each record's `verdict` from `statuses`; unlisted ids stay as they are.
pub fn apply_statuses(records: &mut [SyntheticPairRecord], statuses: &BTreeMap<String, ReviewStatus>) {
    for r in records {
        if let Some(&s) = statuses.get(&r.synth_id) {
            r.verdict = s;
        }
    }
}

/// Records eligible for warm-up: everything not rejected.
pub fn warmup_records(records: &[SyntheticPairRecord]) -> Vec<&SyntheticPairRecord> {
    records
        .iter()
        .filter(|r| r.verdict != ReviewStatus::Rejected)
        .collect()
}

/// Loads a synthetic manifest and applies the verdict log next to it, if any.
pub fn load_reviewed_manifest(manifest: &Path) -> Result<Vec<SyntheticPairRecord>> {
    let mut records: Vec<SyntheticPairRecord> = jsonl::read(manifest)?;
    let log = manifest.with_file_name(VERDICT_LOG_FILE);
    apply_statuses(&mut records, &VerdictLog::read_statuses(&log)?);
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn verdict(id: &str, decision: ReviewStatus, second: u32) -> Verdict {
        Verdict {
            synth_id: id.to_owned(),
            decision,
            reviewer: "rev".to_owned(),
            timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, second).unwrap(),
        }
    }

    #[test]
    fn latest_wins_and_history_kept() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(VERDICT_LOG_FILE);
        let mut log = VerdictLog::open(&path).unwrap();
        log.append(verdict("a", ReviewStatus::Accepted, 1)).unwrap();
        log.append(verdict("a", ReviewStatus::Rejected, 2)).unwrap();
        assert_eq!(log.status("a"), ReviewStatus::Rejected);
        assert_eq!(log.status("b"), ReviewStatus::Pending);
        assert_eq!(log.entries().len(), 2);
        drop(log);
        let reopened = VerdictLog::open(&path).unwrap();
        assert_eq!(reopened.entries().len(), 2);
        assert_eq!(reopened.status("a"), ReviewStatus::Rejected);
    }

    #[test]
    fn replay_of_random_log_matches_direct_computation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(VERDICT_LOG_FILE);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut expected: BTreeMap<String, ReviewStatus> = BTreeMap::new();
        let mut log = VerdictLog::open(&path).unwrap();
        for i in 0..100 {
            let id = format!("s{}", rng.random_range(0..20));
            let decision = [ReviewStatus::Accepted, ReviewStatus::Rejected, ReviewStatus::Pending]
                [rng.random_range(0..3)];
            log.append(verdict(&id, decision, i % 60)).unwrap();
            expected.insert(id, decision);
        }
        assert_eq!(log.statuses(), &expected);
        assert_eq!(VerdictLog::read_statuses(&path).unwrap(), expected);
    }

    #[test]
    fn missing_log_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(VerdictLog::read_statuses(&dir.path().join("none.jsonl"))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn corrupt_log_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(VERDICT_LOG_FILE);
        std::fs::write(&path, "{\"synth_id\": 1}\n").unwrap();
        assert!(VerdictLog::open(&path).is_err());
    }
}
