//! Version-control access by shelling out to the `git` executable.
//!
//! The [`VcsClient`] trait carries exactly the queries the pipeline needs:
//! diffs between the two build revisions, line-level blame for attributing
//! changed lines to earlier commits, parent resolution, commit metadata,
//! and file content at a revision. [`GitCli`] implements it over a local
//! clone; tests build throwaway repositories with pinned author dates so
//! every derived value is reproducible.
//!
//! Changed-line ranges are parsed from unified diff text alone (hunk
//! headers plus `-`/`+` prefixes), which keeps them verifiable against the
//! stored patch without another VCS round trip.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::Command;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum VcsError {
    #[error("failed to launch {bin}: {source}")]
    Launch {
        bin: String,
        #[source]
        source: std::io::Error,
    },
    #[error("git {args} exited with {status}: {stderr}")]
    CommandFailed {
        args: String,
        status: i32,
        stderr: String,
    },
    #[error("unparseable git output: {0}")]
    Parse(String),
    #[error("blame unavailable for {path}: {reason}")]
    BlameUnavailable { path: String, reason: String },
}

/// Inclusive 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRange {
    pub start: u32,
    pub end: u32,
}

impl LineRange {
    pub fn len(&self) -> u32 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// One file's part of a diff between the two build revisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDiff {
    /// Path after the change (the pre-change path for deleted files).
    pub path: String,
    /// Pre-change path when it differs, i.e. the file was renamed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_path: Option<String>,
    /// Unified diff text for this file; empty for binary files.
    pub patch: String,
    /// Changed lines on the pre-change side (deleted or modified).
    pub pre_ranges: Vec<LineRange>,
    /// Changed lines on the post-change side (added or modified).
    pub post_ranges: Vec<LineRange>,
    pub binary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitInfo {
    pub id: String,
    pub committed_at: DateTime<Utc>,
    pub message: String,
}

pub trait VcsClient: Send + Sync {
    fn diff(&self, pre: &str, post: &str) -> Result<Vec<FileDiff>, VcsError>;

    /// Maps each requested line (1-based, at `revision`) to the id of the
    /// commit that last touched it.
    fn blame(
        &self,
        revision: &str,
        path: &str,
        ranges: &[LineRange],
    ) -> Result<HashMap<u32, String>, VcsError>;

    fn resolve_parent(&self, revision: &str) -> Result<String, VcsError>;

    fn commit_info(&self, revision: &str) -> Result<CommitInfo, VcsError>;

    /// Commits reachable from `post` but not `pre`, oldest first.
    fn log_range(&self, pre: &str, post: &str) -> Result<Vec<CommitInfo>, VcsError>;

    fn show_file(&self, revision: &str, path: &str) -> Result<Vec<u8>, VcsError>;
}

/// [`VcsClient`] over a local clone, invoking `git` as a subprocess.
pub struct GitCli {
    repo_dir: PathBuf,
}

impl GitCli {
    pub fn new(repo_dir: impl Into<PathBuf>) -> Self {
        Self {
            repo_dir: repo_dir.into(),
        }
    }

    fn run(&self, args: &[&str]) -> Result<Vec<u8>, VcsError> {
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.repo_dir)
            .args(args)
            .output()
            .map_err(|source| VcsError::Launch {
                bin: "git".into(),
                source,
            })?;
        if !out.status.success() {
            return Err(VcsError::CommandFailed {
                args: args.join(" "),
                status: out.status.code().unwrap_or(-1),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(out.stdout)
    }

    fn run_text(&self, args: &[&str]) -> Result<String, VcsError> {
        let bytes = self.run(args)?;
        String::from_utf8(bytes).map_err(|e| VcsError::Parse(e.to_string()))
    }
}

impl VcsClient for GitCli {
    fn diff(&self, pre: &str, post: &str) -> Result<Vec<FileDiff>, VcsError> {
        let text = self.run_text(&["diff", "-M", "--no-color", pre, post])?;
        parse_diff(&text)
    }

    fn blame(
        &self,
        revision: &str,
        path: &str,
        ranges: &[LineRange],
    ) -> Result<HashMap<u32, String>, VcsError> {
        if ranges.is_empty() {
            return Ok(HashMap::new());
        }
        let mut args: Vec<String> = vec!["blame".into(), "--line-porcelain".into()];
        for r in ranges {
            args.push("-L".into());
            args.push(format!("{},{}", r.start, r.end));
        }
        args.push(revision.into());
        args.push("--".into());
        args.push(path.into());
        let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let text = self
            .run_text(&arg_refs)
            .map_err(|e| VcsError::BlameUnavailable {
                path: path.to_string(),
                reason: e.to_string(),
            })?;
        parse_blame(&text)
    }

    fn resolve_parent(&self, revision: &str) -> Result<String, VcsError> {
        let parent = format!("{revision}^");
        Ok(self
            .run_text(&["rev-parse", "--verify", &parent])?
            .trim()
            .to_string())
    }

    fn commit_info(&self, revision: &str) -> Result<CommitInfo, VcsError> {
        let text = self.run_text(&["show", "-s", "--format=%H%x00%ct%x00%B", revision])?;
        parse_commit_record(text.trim_end_matches('\n'))
    }

    fn log_range(&self, pre: &str, post: &str) -> Result<Vec<CommitInfo>, VcsError> {
        let range = format!("{pre}..{post}");
        let text = self.run_text(&[
            "log",
            "--reverse",
            "--format=%H%x00%ct%x00%B%x01",
            &range,
        ])?;
        text.split('\x01')
            .map(str::trim)
            .filter(|rec| !rec.is_empty())
            .map(parse_commit_record)
            .collect()
    }

    fn show_file(&self, revision: &str, path: &str) -> Result<Vec<u8>, VcsError> {
        self.run(&["show", &format!("{revision}:{path}")])
    }
}

fn parse_commit_record(record: &str) -> Result<CommitInfo, VcsError> {
    let mut parts = record.splitn(3, '\0');
    let id = parts
        .next()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| VcsError::Parse("missing commit id".into()))?;
    let epoch: i64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| VcsError::Parse(format!("bad commit timestamp in {record:?}")))?;
    let message = parts.next().unwrap_or_default().trim_end().to_string();
    let committed_at = Utc
        .timestamp_opt(epoch, 0)
        .single()
        .ok_or_else(|| VcsError::Parse(format!("timestamp {epoch} out of range")))?;
    Ok(CommitInfo {
        id: id.to_string(),
        committed_at,
        message,
    })
}

/// Splits `git diff` output into per-file entries and derives changed-line
/// ranges for both sides from the hunks.
pub fn parse_diff(text: &str) -> Result<Vec<FileDiff>, VcsError> {
    let mut files = Vec::new();
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.next() {
        if !line.starts_with("diff --git ") {
            continue;
        }
        let mut section = vec![line];
        while let Some(&next) = lines.peek() {
            if next.starts_with("diff --git ") {
                break;
            }
            section.push(lines.next().unwrap());
        }
        files.push(parse_file_section(&section)?);
    }
    Ok(files)
}

fn parse_file_section(section: &[&str]) -> Result<FileDiff, VcsError> {
    let header = section[0];
    let binary = section
        .iter()
        .any(|l| l.starts_with("Binary files ") || l.starts_with("GIT binary patch"));

    let mut old_path: Option<String> = None;
    let mut new_path: Option<String> = None;
    for l in section {
        if let Some(p) = l.strip_prefix("rename from ") {
            old_path = Some(p.to_string());
        } else if let Some(p) = l.strip_prefix("rename to ") {
            new_path = Some(p.to_string());
        } else if let Some(p) = l.strip_prefix("--- a/") {
            old_path.get_or_insert_with(|| p.to_string());
        } else if let Some(p) = l.strip_prefix("+++ b/") {
            new_path.get_or_insert_with(|| p.to_string());
        }
    }
    // Binary entries and pure adds/deletes may lack ---/+++ markers with
    // paths; fall back to the "diff --git a/X b/Y" header.
    if old_path.is_none() || new_path.is_none() {
        let (a, b) = parse_git_header_paths(header)?;
        old_path.get_or_insert(a);
        new_path.get_or_insert(b);
    }
    let old_path = old_path.unwrap();
    let new_path = new_path.unwrap();
    let deleted = section.iter().any(|l| l.starts_with("deleted file mode "));
    let path = if deleted { old_path.clone() } else { new_path.clone() };
    let pre_path = (!deleted && old_path != new_path).then_some(old_path);

    let patch = if binary {
        String::new()
    } else {
        let mut p = section.join("\n");
        p.push('\n');
        p
    };
    let (pre_ranges, post_ranges) = if binary {
        (Vec::new(), Vec::new())
    } else {
        parse_patch_ranges(&patch)?
    };
    Ok(FileDiff {
        path,
        pre_path,
        patch,
        pre_ranges,
        post_ranges,
        binary,
    })
}

fn parse_git_header_paths(header: &str) -> Result<(String, String), VcsError> {
    // "diff --git a/old b/new"; paths with spaces are not handled beyond
    // the common case of splitting at " b/".
    let rest = header
        .strip_prefix("diff --git a/")
        .ok_or_else(|| VcsError::Parse(format!("bad diff header {header:?}")))?;
    let split = rest
        .rfind(" b/")
        .ok_or_else(|| VcsError::Parse(format!("bad diff header {header:?}")))?;
    Ok((rest[..split].to_string(), rest[split + 3..].to_string()))
}

/// Derives both sides' changed-line ranges from unified diff text. Lines
/// prefixed `-` count on the pre side, `+` on the post side; runs of
/// consecutive line numbers coalesce into one inclusive range.
pub fn parse_patch_ranges(patch: &str) -> Result<(Vec<LineRange>, Vec<LineRange>), VcsError> {
    let mut pre_lines = Vec::new();
    let mut post_lines = Vec::new();
    let mut pre_no = 0u32;
    let mut post_no = 0u32;
    let mut in_hunk = false;
    for line in patch.lines() {
        if line.starts_with("@@") {
            let (a, b) = parse_hunk_header(line)?;
            pre_no = a;
            post_no = b;
            in_hunk = true;
        } else if in_hunk {
            // Headers only precede the first hunk, so within a hunk body
            // every sign-prefixed line is content.
            if line.starts_with('-') {
                pre_lines.push(pre_no);
                pre_no += 1;
            } else if line.starts_with('+') {
                post_lines.push(post_no);
                post_no += 1;
            } else if line.starts_with(' ') || line.is_empty() {
                pre_no += 1;
                post_no += 1;
            } else if line.starts_with('\\') {
                // "\ No newline at end of file": not a content line.
            } else {
                // Next file header or trailing junk ends the hunk body.
                in_hunk = false;
            }
        }
    }
    Ok((coalesce(&pre_lines), coalesce(&post_lines)))
}

fn parse_hunk_header(line: &str) -> Result<(u32, u32), VcsError> {
    // "@@ -a[,b] +c[,d] @@ ..."
    let err = || VcsError::Parse(format!("bad hunk header {line:?}"));
    let mut fields = line.split_whitespace();
    fields.next(); // "@@"
    let pre = fields.next().ok_or_else(err)?;
    let post = fields.next().ok_or_else(err)?;
    let start_of = |field: &str, sign: char| -> Result<u32, VcsError> {
        let body = field.strip_prefix(sign).ok_or_else(err)?;
        let start = body.split(',').next().unwrap_or(body);
        start.parse().map_err(|_| err())
    };
    Ok((start_of(pre, '-')?, start_of(post, '+')?))
}

fn coalesce(lines: &[u32]) -> Vec<LineRange> {
    let mut ranges: Vec<LineRange> = Vec::new();
    for &n in lines {
        match ranges.last_mut() {
            Some(r) if r.end + 1 == n => r.end = n,
            _ => ranges.push(LineRange { start: n, end: n }),
        }
    }
    ranges
}

fn parse_blame(text: &str) -> Result<HashMap<u32, String>, VcsError> {
    // --line-porcelain repeats the full header per line: the entry opener
    // is "<40-hex sha> <orig_line> <final_line> [<group>]".
    let mut map = HashMap::new();
    for line in text.lines() {
        let mut parts = line.split(' ');
        let (Some(sha), Some(_orig), Some(final_no)) = (parts.next(), parts.next(), parts.next())
        else {
            continue;
        };
        if sha.len() == 40 && sha.bytes().all(|b| b.is_ascii_hexdigit()) {
            if let Ok(n) = final_no.parse::<u32>() {
                map.insert(n, sha.to_string());
            }
        }
    }
    if map.is_empty() {
        return Err(VcsError::Parse("blame output had no entries".into()));
    }
    Ok(map)
}
