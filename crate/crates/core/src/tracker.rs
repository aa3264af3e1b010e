//! Issue tracker access: pull requests, issues, and commit cross-references.
//!
//! [`IssueTrackerClient`] is the narrow contract the pipeline needs. The
//! primary implementation is [`MockTracker`], which reads a directory of
//! JSON records (`pr_<id>.json`, `issue_<id>.json`, `xref.json`) and backs
//! every offline fixture. [`HttpTracker`] serves the same record schema
//! over HTTP for deployments that put a translating gateway in front of a
//! real tracker; it is deliberately not a GitHub or Bugzilla API client.
//!
//! Transient failures are surfaced as [`TrackerError::Transient`] so the
//! caller can retry and report how many attempts were made.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU32, Ordering};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TrackerError {
    #[error("{kind} {id} not found")]
    NotFound { kind: RefKind, id: String },
    #[error("transient tracker failure: {0}")]
    Transient(String),
    #[error("malformed tracker record {path}: {reason}")]
    Malformed { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefKind {
    Pr,
    Issue,
}

impl std::fmt::Display for RefKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RefKind::Pr => "pr",
            RefKind::Issue => "issue",
        })
    }
}

/// A typed cross-reference from a commit to a tracker record, serialized
/// as `"pr:<id>"` or `"issue:<id>"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Xref {
    Pr(String),
    Issue(String),
}

impl Xref {
    pub fn parse(s: &str) -> Option<Xref> {
        if let Some(id) = s.strip_prefix("pr:") {
            Some(Xref::Pr(id.to_string()))
        } else {
            s.strip_prefix("issue:").map(|id| Xref::Issue(id.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrRecord {
    pub id: String,
    pub title: String,
    pub description: String,
    pub created_at: DateTime<Utc>,
    /// Revision the PR branched from.
    pub base_revision: String,
    /// Mergeable head revision; absent for detached or abandoned PRs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_revision: Option<String>,
    #[serde(default)]
    pub resolved_issue_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueRecord {
    pub id: String,
    pub title: String,
    pub description: String,
    pub created_at: DateTime<Utc>,
}

pub trait IssueTrackerClient: Send + Sync {
    fn get_pr(&self, id: &str) -> Result<PrRecord, TrackerError>;
    fn get_issue(&self, id: &str) -> Result<IssueRecord, TrackerError>;
    /// Tracker records that reference the given commit.
    fn list_cross_references(&self, commit_id: &str) -> Result<Vec<Xref>, TrackerError>;
}

/// Retries `f` while it fails transiently, up to `max_attempts` total
/// attempts, then reports the attempt count with the last error.
pub fn with_retries<T>(
    max_attempts: u32,
    mut f: impl FnMut() -> Result<T, TrackerError>,
) -> Result<T, (u32, TrackerError)> {
    let mut last = None;
    for attempt in 1..=max_attempts.max(1) {
        match f() {
            Ok(v) => return Ok(v),
            Err(e @ TrackerError::Transient(_)) => last = Some((attempt, e)),
            Err(e) => return Err((attempt, e)),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Fixture-directory tracker. Optionally fails the first N calls with a
/// transient error so retry behavior can be exercised.
pub struct MockTracker {
    dir: PathBuf,
    fail_remaining: AtomicU32,
}

impl MockTracker {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            fail_remaining: AtomicU32::new(0),
        }
    }

    /// Makes the next `n` calls fail transiently before behaving normally.
    pub fn fail_next(&self, n: u32) {
        self.fail_remaining.store(n, Ordering::SeqCst);
    }

    fn gate(&self) -> Result<(), TrackerError> {
        let prev = self
            .fail_remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| v.checked_sub(1))
            .unwrap_or(0);
        if prev > 0 {
            Err(TrackerError::Transient("injected failure".into()))
        } else {
            Ok(())
        }
    }

    fn load<T: serde::de::DeserializeOwned>(
        &self,
        name: &str,
        kind: RefKind,
        id: &str,
    ) -> Result<T, TrackerError> {
        let path = self.dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                TrackerError::NotFound {
                    kind,
                    id: id.to_string(),
                }
            } else {
                TrackerError::Transient(e.to_string())
            }
        })?;
        serde_json::from_slice(&bytes).map_err(|e| TrackerError::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

impl IssueTrackerClient for MockTracker {
    fn get_pr(&self, id: &str) -> Result<PrRecord, TrackerError> {
        self.gate()?;
        self.load(&format!("pr_{id}.json"), RefKind::Pr, id)
    }

    fn get_issue(&self, id: &str) -> Result<IssueRecord, TrackerError> {
        self.gate()?;
        self.load(&format!("issue_{id}.json"), RefKind::Issue, id)
    }

    fn list_cross_references(&self, commit_id: &str) -> Result<Vec<Xref>, TrackerError> {
        self.gate()?;
        let path = self.dir.join("xref.json");
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(TrackerError::Transient(e.to_string())),
        };
        let table: std::collections::BTreeMap<String, Vec<String>> =
            serde_json::from_slice(&bytes).map_err(|e| TrackerError::Malformed {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        let Some(refs) = table.get(commit_id) else {
            return Ok(Vec::new());
        };
        refs.iter()
            .map(|s| {
                Xref::parse(s).ok_or_else(|| TrackerError::Malformed {
                    path: path.display().to_string(),
                    reason: format!("bad cross-reference {s:?}"),
                })
            })
            .collect()
    }
}

/// Tracker records fetched over HTTP using the same file layout and JSON
/// schema as [`MockTracker`], rooted at a base URL.
pub struct HttpTracker {
    base: String,
    client: reqwest::blocking::Client,
}

impl HttpTracker {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(30))
                .build()
                .expect("client construction"),
        }
    }

    fn get_json<T: serde::de::DeserializeOwned>(
        &self,
        name: &str,
        kind: RefKind,
        id: &str,
    ) -> Result<T, TrackerError> {
        let url = format!("{}/{name}", self.base.trim_end_matches('/'));
        let resp = self
            .client
            .get(&url)
            .send()
            .map_err(|e| TrackerError::Transient(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::NOT_FOUND {
            return Err(TrackerError::NotFound {
                kind,
                id: id.to_string(),
            });
        }
        if !status.is_success() {
            return Err(TrackerError::Transient(format!("{url} returned {status}")));
        }
        let bytes = resp
            .bytes()
            .map_err(|e| TrackerError::Transient(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| TrackerError::Malformed {
            path: url,
            reason: e.to_string(),
        })
    }
}

impl IssueTrackerClient for HttpTracker {
    fn get_pr(&self, id: &str) -> Result<PrRecord, TrackerError> {
        self.get_json(&format!("pr_{id}.json"), RefKind::Pr, id)
    }

    fn get_issue(&self, id: &str) -> Result<IssueRecord, TrackerError> {
        self.get_json(&format!("issue_{id}.json"), RefKind::Issue, id)
    }

    fn list_cross_references(&self, commit_id: &str) -> Result<Vec<Xref>, TrackerError> {
        let table: std::collections::BTreeMap<String, Vec<String>> =
            match self.get_json("xref.json", RefKind::Pr, commit_id) {
                Ok(t) => t,
                Err(TrackerError::NotFound { .. }) => return Ok(Vec::new()),
                Err(e) => return Err(e),
            };
        table
            .get(commit_id)
            .into_iter()
            .flatten()
            .map(|s| {
                Xref::parse(s).ok_or_else(|| TrackerError::Malformed {
                    path: "xref.json".into(),
                    reason: format!("bad cross-reference {s:?}"),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn write_fixture(dir: &Path) {
        std::fs::write(
            dir.join("pr_7.json"),
            serde_json::to_vec_pretty(&serde_json::json!({
                "id": "7",
                "title": "Normalize status casing",
                "description": "Make status labels title case.",
                "created_at": "2024-03-05T12:00:00Z",
                "base_revision": "aaa111",
                "head_revision": "bbb222",
                "resolved_issue_ids": ["3"]
            }))
            .unwrap(),
        )
        .unwrap();
        std::fs::write(
            dir.join("issue_3.json"),
            serde_json::to_vec_pretty(&serde_json::json!({
                "id": "3",
                "title": "Status text inconsistent",
                "description": "Sometimes lowercase.",
                "created_at": "2024-02-01T09:30:00Z"
            }))
            .unwrap(),
        )
        .unwrap();
        std::fs::write(
            dir.join("xref.json"),
            serde_json::to_vec_pretty(&serde_json::json!({
                "c0ffee": ["pr:5", "issue:2"]
            }))
            .unwrap(),
        )
        .unwrap();
    }

    #[test]
    fn mock_returns_records_from_fixture_files() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let t = MockTracker::new(dir.path());

        let pr = t.get_pr("7").unwrap();
        assert_eq!(pr.title, "Normalize status casing");
        assert_eq!(pr.resolved_issue_ids, vec!["3"]);
        assert_eq!(pr.head_revision.as_deref(), Some("bbb222"));

        let issue = t.get_issue("3").unwrap();
        assert_eq!(issue.id, "3");

        assert_eq!(
            t.list_cross_references("c0ffee").unwrap(),
            vec![Xref::Pr("5".into()), Xref::Issue("2".into())]
        );
        assert_eq!(t.list_cross_references("deadbf").unwrap(), vec![]);
    }

    #[test]
    fn unknown_ids_are_not_found() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let t = MockTracker::new(dir.path());
        assert!(matches!(
            t.get_pr("99"),
            Err(TrackerError::NotFound { kind: RefKind::Pr, ref id }) if id == "99"
        ));
        assert!(matches!(
            t.get_issue("99"),
            Err(TrackerError::NotFound { kind: RefKind::Issue, .. })
        ));
    }

    #[test]
    fn retries_count_attempts_and_recover() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let t = MockTracker::new(dir.path());

        t.fail_next(2);
        let pr = with_retries(3, || t.get_pr("7")).unwrap();
        assert_eq!(pr.id, "7");

        t.fail_next(5);
        let (attempts, err) = with_retries(3, || t.get_pr("7")).unwrap_err();
        assert_eq!(attempts, 3);
        assert!(matches!(err, TrackerError::Transient(_)));
    }

    #[test]
    fn not_found_is_not_retried() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let t = MockTracker::new(dir.path());
        let (attempts, err) = with_retries(3, || t.get_pr("99")).unwrap_err();
        assert_eq!(attempts, 1);
        assert!(matches!(err, TrackerError::NotFound { .. }));
    }

    #[test]
    fn malformed_records_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pr_1.json"), b"{not json").unwrap();
        let t = MockTracker::new(dir.path());
        match t.get_pr("1") {
            Err(TrackerError::Malformed { path, .. }) => assert!(path.ends_with("pr_1.json")),
            other => panic!("expected Malformed, got {other:?}"),
        }
    }

    #[test]
    fn xref_strings_parse_or_reject() {
        assert_eq!(Xref::parse("pr:12"), Some(Xref::Pr("12".into())));
        assert_eq!(Xref::parse("issue:9"), Some(Xref::Issue("9".into())));
        assert_eq!(Xref::parse("commit:abc"), None);
    }
}
