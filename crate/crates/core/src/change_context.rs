//! Assembles everything the generator needs to know about one pull request:
//! the stated intent (PR description plus resolved issues), the code change
//! itself, and earlier change intents that last touched the same lines.
//!
//! Preceding intents come from line-level blame at the pre-change revision.
//! Every modified or deleted line is attributed to the commit that last
//! touched it; commits map to their PR or issue first through tracker
//! cross-references and then through a configurable reference pattern in
//! the commit message. Intents are ranked by how many of the PR's lines
//! they account for, with more recent intents winning ties.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::tracker::{with_retries, IssueTrackerClient, IssueRecord, PrRecord, TrackerError, Xref};
use crate::vcs::{FileDiff, VcsClient, VcsError};

/// How many preceding intents are passed downstream after ranking.
pub const PRECEDING_INTENT_CAP: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum ChangeContextError {
    #[error("pull request {0} not found")]
    NotFound(String),
    #[error("tracker unavailable after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("pull request {0} has no mergeable head revision")]
    DetachedPr(String),
    #[error("pull request {0} contains no commits")]
    EmptyPr(String),
    #[error(transparent)]
    Vcs(#[from] VcsError),
    #[error("invalid commit reference pattern: {0}")]
    BadRefPattern(String),
    #[error("malformed tracker data: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeIntent {
    /// `pr:<id>` or `issue:<id>`.
    pub source_id: String,
    pub title: String,
    pub description: String,
    pub created_at: DateTime<Utc>,
}

impl ChangeIntent {
    fn from_pr(r: &PrRecord) -> Self {
        Self {
            source_id: format!("pr:{}", r.id),
            title: r.title.clone(),
            description: r.description.clone(),
            created_at: r.created_at,
        }
    }

    fn from_issue(r: &IssueRecord) -> Self {
        Self {
            source_id: format!("issue:{}", r.id),
            title: r.title.clone(),
            description: r.description.clone(),
            created_at: r.created_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeChange {
    pub commit_messages: Vec<String>,
    pub files: Vec<FileDiff>,
}

impl CodeChange {
    /// Total modified plus deleted line count, i.e. the blame universe.
    pub fn pre_side_line_count(&self) -> u64 {
        self.files
            .iter()
            .flat_map(|f| &f.pre_ranges)
            .map(|r| r.len() as u64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecedingChangeIntent {
    pub intent: ChangeIntent,
    pub overlap_lines: u64,
    pub rank: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeContext {
    pub pr_intent: ChangeIntent,
    pub resolved_issues: Vec<ChangeIntent>,
    pub code_change: CodeChange,
    pub preceding: Vec<PrecedingChangeIntent>,
    pub pre_revision: String,
    pub post_revision: String,
    /// Non-fatal notes, e.g. files skipped because blame was unavailable.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn tracker_call<T>(
    max_attempts: u32,
    f: impl FnMut() -> Result<T, TrackerError>,
) -> Result<Option<T>, ChangeContextError> {
    match with_retries(max_attempts, f) {
        Ok(v) => Ok(Some(v)),
        Err((_, TrackerError::NotFound { .. })) => Ok(None),
        Err((attempts, TrackerError::Transient(m))) => {
            Err(ChangeContextError::Network { attempts, message: m })
        }
        Err((_, TrackerError::Malformed { path, reason })) => {
            Err(ChangeContextError::Malformed(format!("{path}: {reason}")))
        }
    }
}

/// Builds the full context for one PR: intents, diff, and ranked preceding
/// intents. `ref_pattern` extracts tracker ids from commit messages when no
/// explicit cross-reference exists; its first capture group is the id.
pub fn fetch_change_context(
    pr_id: &str,
    tracker: &dyn IssueTrackerClient,
    repo: &dyn VcsClient,
    ref_pattern: &str,
    max_attempts: u32,
) -> Result<ChangeContext, ChangeContextError> {
    let pr = tracker_call(max_attempts, || tracker.get_pr(pr_id))?
        .ok_or_else(|| ChangeContextError::NotFound(pr_id.to_string()))?;
    let post_revision = pr
        .head_revision
        .clone()
        .ok_or_else(|| ChangeContextError::DetachedPr(pr_id.to_string()))?;

    let commits = repo.log_range(&pr.base_revision, &post_revision)?;
    let first = commits
        .first()
        .ok_or_else(|| ChangeContextError::EmptyPr(pr_id.to_string()))?;
    let pre_revision = repo.resolve_parent(&first.id)?;

    let files = repo.diff(&pre_revision, &post_revision)?;
    let code_change = CodeChange {
        commit_messages: commits.iter().map(|c| c.message.clone()).collect(),
        files,
    };

    let mut resolved_issues = Vec::new();
    for issue_id in &pr.resolved_issue_ids {
        if let Some(issue) = tracker_call(max_attempts, || tracker.get_issue(issue_id))? {
            resolved_issues.push(ChangeIntent::from_issue(&issue));
        }
    }

    let pr_intent = ChangeIntent::from_pr(&pr);
    let (preceding, warnings) = compute_preceding_intents(
        &code_change,
        &pre_revision,
        &pr_intent,
        repo,
        tracker,
        ref_pattern,
        max_attempts,
    )?;

    Ok(ChangeContext {
        pr_intent,
        resolved_issues,
        code_change,
        preceding,
        pre_revision,
        post_revision,
        warnings,
    })
}

/// Ranks earlier change intents by how many of this PR's modified or
/// deleted lines their commits last touched. Returns the ranked list plus
/// warnings for files whose blame was unavailable.
pub fn compute_preceding_intents(
    code_change: &CodeChange,
    pre_revision: &str,
    pr_intent: &ChangeIntent,
    repo: &dyn VcsClient,
    tracker: &dyn IssueTrackerClient,
    ref_pattern: &str,
    max_attempts: u32,
) -> Result<(Vec<PrecedingChangeIntent>, Vec<String>), ChangeContextError> {
    let pattern = regex::Regex::new(ref_pattern)
        .map_err(|e| ChangeContextError::BadRefPattern(e.to_string()))?;
    let mut warnings = Vec::new();
    let mut intent_cache: HashMap<String, Option<ChangeIntent>> = HashMap::new();
    // Keyed by source_id; value carries the intent and its line count.
    let mut tally: HashMap<String, (ChangeIntent, u64)> = HashMap::new();

    for file in &code_change.files {
        if file.binary || file.pre_ranges.is_empty() {
            continue;
        }
        let blame_path = file.pre_path.as_deref().unwrap_or(&file.path);
        let lines = match repo.blame(pre_revision, blame_path, &file.pre_ranges) {
            Ok(map) => map,
            Err(VcsError::BlameUnavailable { path, reason }) => {
                warnings.push(format!("blame unavailable for {path}: {reason}"));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        // Deterministic iteration: sort by line number.
        let mut entries: Vec<_> = lines.into_iter().collect();
        entries.sort_unstable_by_key(|(n, _)| *n);
        for (_line, commit_id) in entries {
            let intent = match intent_cache.get(&commit_id) {
                Some(cached) => cached.clone(),
                None => {
                    let resolved = resolve_commit_intent(
                        &commit_id, repo, tracker, &pattern, max_attempts,
                    )?;
                    intent_cache.insert(commit_id.clone(), resolved.clone());
                    resolved
                }
            };
            let Some(intent) = intent else { continue };
            // A preceding intent must be a different, strictly earlier
            // change than the PR under test.
            if intent.source_id == pr_intent.source_id
                || intent.created_at >= pr_intent.created_at
            {
                continue;
            }
            tally
                .entry(intent.source_id.clone())
                .and_modify(|(_, n)| *n += 1)
                .or_insert((intent, 1));
        }
    }

    let mut ranked: Vec<(ChangeIntent, u64)> = tally.into_values().collect();
    ranked.sort_by(|(ia, na), (ib, nb)| {
        nb.cmp(na)
            .then(ib.created_at.cmp(&ia.created_at))
            .then(ia.source_id.cmp(&ib.source_id))
    });
    ranked.truncate(PRECEDING_INTENT_CAP);
    let preceding = ranked
        .into_iter()
        .enumerate()
        .map(|(i, (intent, overlap_lines))| PrecedingChangeIntent {
            intent,
            overlap_lines,
            rank: i as u32 + 1,
        })
        .collect();
    Ok((preceding, warnings))
}

/// Maps a commit to the change intent it belongs to: explicit tracker
/// cross-references first, then the reference pattern over the commit
/// message. Returns `None` when nothing resolves.
fn resolve_commit_intent(
    commit_id: &str,
    repo: &dyn VcsClient,
    tracker: &dyn IssueTrackerClient,
    pattern: &regex::Regex,
    max_attempts: u32,
) -> Result<Option<ChangeIntent>, ChangeContextError> {
    let xrefs = tracker_call(max_attempts, || tracker.list_cross_references(commit_id))?
        .unwrap_or_default();
    for xref in xrefs {
        let intent = match xref {
            Xref::Pr(id) => tracker_call(max_attempts, || tracker.get_pr(&id))?
                .map(|r| ChangeIntent::from_pr(&r)),
            Xref::Issue(id) => tracker_call(max_attempts, || tracker.get_issue(&id))?
                .map(|r| ChangeIntent::from_issue(&r)),
        };
        if intent.is_some() {
            return Ok(intent);
        }
    }

    let message = repo.commit_info(commit_id)?.message;
    for caps in pattern.captures_iter(&message) {
        let Some(id) = caps.get(1).map(|m| m.as_str()) else {
            continue;
        };
        if let Some(pr) = tracker_call(max_attempts, || tracker.get_pr(id))? {
            return Ok(Some(ChangeIntent::from_pr(&pr)));
        }
        if let Some(issue) = tracker_call(max_attempts, || tracker.get_issue(id))? {
            return Ok(Some(ChangeIntent::from_issue(&issue)));
        }
    }
    Ok(None)
}
