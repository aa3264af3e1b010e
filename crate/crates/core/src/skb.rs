//! The scenario knowledge base: historical bug reports filtered down to
//! end-user GUI scenarios, chunked, embedded, and served through hybrid
//! keyword plus semantic retrieval with a creation-time cutoff.
//!
//! Filtering runs two rule checks (timestamp-heavy bodies, stop keywords)
//! before asking the classifier model; a classifier failure keeps the
//! report out of the index rather than in it. Chunking is span-based over
//! whitespace tokens with trailing whitespace attached to the preceding
//! token, so concatenating a source's chunks with the overlap removed
//! reproduces its text byte for byte.
//!
//! The index persists as one append-only file of length-prefixed chunk
//! records plus a sidecar keyword file, and loads fully into memory.
//! Retrieval ranks eligible chunks by cosine similarity and by distinct
//! query-term matches, then fuses the two rankings with reciprocal-rank
//! fusion (constant 60).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::SkbConfig;
use crate::llm::{ChatMessage, LlmGateway, Role};
use crate::prompts::PromptSet;

const MAGIC: &[u8; 4] = b"SKB1";

/// Denominator constant for reciprocal-rank fusion.
pub const RRF_CONSTANT: f64 = 60.0;

#[derive(Debug, thiserror::Error)]
pub enum SkbError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
}

fn io_err(path: &Path, source: std::io::Error) -> SkbError {
    SkbError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    RuleLogLike,
    RuleKeyword,
    LlmNotScenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalReport {
    pub source_id: String,
    pub title: String,
    pub body: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<RejectionReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkbChunk {
    pub chunk_id: String,
    pub source_id: String,
    pub offset_tokens: u32,
    pub text: String,
    pub embedding: Vec<f32>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub chunk: SkbChunk,
    pub semantic_score: f64,
    pub keyword_score: f64,
    pub fused_score: f64,
}

/// Byte spans over `text`, one per whitespace token, covering the whole
/// string: leading whitespace joins the first span and whitespace after a
/// token joins that token's span.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut starts = Vec::new();
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if prev_ws && !ws {
            starts.push(i);
        }
        prev_ws = ws;
    }
    let mut spans = Vec::with_capacity(starts.len());
    for (k, &s) in starts.iter().enumerate() {
        let begin = if k == 0 { 0 } else { s };
        let end = starts.get(k + 1).copied().unwrap_or(text.len());
        spans.push((begin, end));
    }
    spans
}

/// One chunk of a source document, in token units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkText {
    pub offset_tokens: u32,
    pub text: String,
}

/// Splits `text` into chunks of `chunk_tokens` whitespace tokens with
/// `overlap` tokens shared between neighbors. The final chunk may be
/// shorter. Requires `chunk_tokens > overlap`.
pub fn chunk_text(text: &str, chunk_tokens: usize, overlap: usize) -> Vec<ChunkText> {
    assert!(chunk_tokens > overlap, "chunk size must exceed overlap");
    let spans = token_spans(text);
    let n = spans.len();
    let stride = chunk_tokens - overlap;
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < n {
        let j = (i + chunk_tokens).min(n);
        chunks.push(ChunkText {
            offset_tokens: i as u32,
            text: text[spans[i].0..spans[j - 1].1].to_string(),
        });
        if j == n {
            break;
        }
        i += stride;
    }
    chunks
}

/// Inverse of [`chunk_text`]: drops the first `overlap` tokens of every
/// chunk after the first and concatenates.
pub fn reconstruct(chunks: &[ChunkText], overlap: usize) -> String {
    let mut out = String::new();
    for (k, c) in chunks.iter().enumerate() {
        if k == 0 {
            out.push_str(&c.text);
        } else {
            let spans = token_spans(&c.text);
            out.push_str(&c.text[spans[overlap].0..]);
        }
    }
    out
}

fn timestamp_pattern() -> &'static regex::Regex {
    static PAT: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    PAT.get_or_init(|| {
        regex::Regex::new(
            r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}(:\d{2})?|\b\d{2}:\d{2}:\d{2}([.,]\d+)?\b",
        )
        .expect("static pattern")
    })
}

/// Rule stage of report filtering. Returns the rejection reason, if any.
pub fn rule_reject(report: &HistoricalReport, cfg: &SkbConfig) -> Option<RejectionReason> {
    let lines: Vec<&str> = report
        .body
        .lines()
        .filter(|l| !l.trim().is_empty())
        .collect();
    if !lines.is_empty() {
        let stamped = lines
            .iter()
            .filter(|l| timestamp_pattern().is_match(l))
            .count();
        if stamped as f64 / lines.len() as f64 > cfg.timestamp_line_ratio {
            return Some(RejectionReason::RuleLogLike);
        }
    }
    let haystack = format!("{}\n{}", report.title, report.body).to_lowercase();
    if cfg
        .stop_keywords
        .iter()
        .any(|kw| haystack.contains(&kw.to_lowercase()))
    {
        return Some(RejectionReason::RuleKeyword);
    }
    None
}

/// Marks every report kept or rejected: rule checks first, then the
/// classifier model for survivors. A classifier error or malformed reply
/// rejects the report (fail closed) with a logged warning.
pub fn filter_reports(
    reports: Vec<HistoricalReport>,
    llm: &LlmGateway,
    prompts: &PromptSet,
    cfg: &SkbConfig,
) -> Vec<HistoricalReport> {
    reports
        .into_iter()
        .map(|mut r| {
            if let Some(reason) = rule_reject(&r, cfg) {
                r.kept = false;
                r.rejection_reason = Some(reason);
                return r;
            }
            match classify(&r, llm, prompts) {
                Ok(true) => {
                    r.kept = true;
                    r.rejection_reason = None;
                }
                Ok(false) => {
                    r.kept = false;
                    r.rejection_reason = Some(RejectionReason::LlmNotScenario);
                }
                Err(e) => {
                    log::warn!("classifier failed on {}: {e}", r.source_id);
                    r.kept = false;
                    r.rejection_reason = Some(RejectionReason::LlmNotScenario);
                }
            }
            r
        })
        .collect()
}

fn classify(
    report: &HistoricalReport,
    llm: &LlmGateway,
    prompts: &PromptSet,
) -> Result<bool, SkbError> {
    let mut session = llm.open_session(Role::Classifier)?;
    let prompt = prompts.report_classifier(&report.title, &report.body);
    let reply = llm.send(&mut session, ChatMessage::user(prompt))?;
    let text = reply.text().to_uppercase();
    let keep = text.contains("KEEP");
    let reject = text.contains("REJECT");
    if keep == reject {
        return Err(SkbError::Corrupt(format!(
            "classifier reply was not KEEP or REJECT: {:?}",
            reply.text()
        )));
    }
    Ok(keep)
}

/// Lowercased token with punctuation trimmed from both ends; used for the
/// keyword index and for query terms.
pub fn normalize_term(token: &str) -> Option<String> {
    let t = token.trim_matches(|c: char| !c.is_alphanumeric());
    if t.is_empty() {
        None
    } else {
        Some(t.to_lowercase())
    }
}

fn chunk_terms(text: &str) -> BTreeSet<String> {
    text.split_whitespace().filter_map(normalize_term).collect()
}

/// In-memory knowledge base index.
#[derive(Debug, Clone, PartialEq)]
pub struct SkbIndex {
    dim: usize,
    chunks: Vec<SkbChunk>,
    /// term -> sorted ordinals of chunks containing it.
    terms: BTreeMap<String, Vec<u32>>,
}

impl SkbIndex {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn chunks(&self) -> &[SkbChunk] {
        &self.chunks
    }

    /// Chunks, embeds, and indexes the kept reports. Reports that are not
    /// kept are skipped. Embedding failures retry inside the gateway; a
    /// chunk that still fails is dropped with a warning in the returned
    /// list.
    pub fn build(
        reports: &[HistoricalReport],
        llm: &LlmGateway,
        cfg: &SkbConfig,
        dim: usize,
    ) -> Result<(SkbIndex, Vec<String>), SkbError> {
        let mut warnings = Vec::new();
        let mut chunks = Vec::new();
        for report in reports.iter().filter(|r| r.kept) {
            let text = format!("{}\n{}", report.title, report.body);
            let pieces = chunk_text(&text, cfg.chunk_tokens as usize, cfg.chunk_overlap as usize);
            let texts: Vec<String> = pieces.iter().map(|p| p.text.clone()).collect();
            if texts.is_empty() {
                continue;
            }
            let embeddings = match llm.embed(&texts) {
                Ok(e) => e,
                Err(batch_err) => {
                    // Retry chunk by chunk so one bad chunk cannot sink the
                    // whole report.
                    log::warn!("batch embedding failed for {}: {batch_err}", report.source_id);
                    let mut singles = Vec::with_capacity(texts.len());
                    for t in &texts {
                        match llm.embed(std::slice::from_ref(t)) {
                            Ok(mut one) => singles.push(Some(one.remove(0))),
                            Err(e) => {
                                warnings.push(format!(
                                    "skipped a chunk of {}: embedding failed: {e}",
                                    report.source_id
                                ));
                                singles.push(None);
                            }
                        }
                    }
                    for (piece, emb) in pieces.iter().zip(singles) {
                        if let Some(embedding) = emb {
                            chunks.push(make_chunk(report, piece, embedding));
                        }
                    }
                    continue;
                }
            };
            for (piece, embedding) in pieces.iter().zip(embeddings) {
                chunks.push(make_chunk(report, piece, embedding));
            }
        }
        for c in &chunks {
            if c.embedding.len() != dim {
                return Err(SkbError::Corrupt(format!(
                    "chunk {} embedding has dimension {}, index expects {dim}",
                    c.chunk_id,
                    c.embedding.len()
                )));
            }
        }
        let terms = build_term_map(&chunks);
        Ok((SkbIndex { dim, chunks, terms }, warnings))
    }

    pub fn save(&self, path: &Path) -> Result<(), SkbError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for chunk in &self.chunks {
            let rec = serde_json::to_vec(chunk).expect("chunk serializes");
            buf.extend_from_slice(&(rec.len() as u32).to_le_bytes());
            buf.extend_from_slice(&rec);
        }
        let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
        f.write_all(&buf).map_err(|e| io_err(path, e))?;

        let sidecar = sidecar_path(path);
        let kw = serde_json::to_vec(&self.terms).expect("term map serializes");
        std::fs::write(&sidecar, kw).map_err(|e| io_err(&sidecar, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SkbIndex, SkbError> {
        let mut f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf).map_err(|e| io_err(path, e))?;
        if buf.len() < 8 || &buf[..4] != MAGIC {
            return Err(SkbError::Corrupt("bad magic".into()));
        }
        let dim = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let mut chunks = Vec::new();
        let mut pos = 8;
        while pos < buf.len() {
            if pos + 4 > buf.len() {
                return Err(SkbError::Corrupt("truncated record length".into()));
            }
            let len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            if pos + len > buf.len() {
                return Err(SkbError::Corrupt("truncated record body".into()));
            }
            let chunk: SkbChunk = serde_json::from_slice(&buf[pos..pos + len])
                .map_err(|e| SkbError::Corrupt(e.to_string()))?;
            if chunk.embedding.len() != dim {
                return Err(SkbError::Corrupt(format!(
                    "chunk {} has dimension {}, header says {dim}",
                    chunk.chunk_id,
                    chunk.embedding.len()
                )));
            }
            chunks.push(chunk);
            pos += len;
        }
        // The sidecar is a derived artifact: use it when intact, rebuild
        // otherwise.
        let sidecar = sidecar_path(path);
        let terms = std::fs::read(&sidecar)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_else(|| build_term_map(&chunks));
        Ok(SkbIndex { dim, chunks, terms })
    }

    /// Retrieves up to `k` chunks created strictly before `cutoff`, ranked
    /// by reciprocal-rank fusion of the semantic and keyword rankings.
    pub fn query(
        &self,
        llm: &LlmGateway,
        query_text: &str,
        cutoff: DateTime<Utc>,
        k: usize,
    ) -> Result<Vec<RetrievalResult>, SkbError> {
        let eligible: Vec<u32> = (0..self.chunks.len() as u32)
            .filter(|&i| self.chunks[i as usize].created_at < cutoff)
            .collect();
        if eligible.is_empty() || k == 0 {
            return Ok(Vec::new());
        }

        let query_vec = llm.embed(&[query_text.to_string()])?.remove(0);
        let semantic: Vec<(u32, f64)> = eligible
            .iter()
            .map(|&i| {
                let cos = cosine(&query_vec, &self.chunks[i as usize].embedding);
                (i, ((1.0 + cos) / 2.0).clamp(0.0, 1.0))
            })
            .collect();

        let query_terms: BTreeSet<String> = query_text
            .split_whitespace()
            .filter_map(normalize_term)
            .collect();
        let mut kw_counts: BTreeMap<u32, f64> = BTreeMap::new();
        for term in &query_terms {
            if let Some(ordinals) = self.terms.get(term) {
                for &i in ordinals {
                    if self.chunks[i as usize].created_at < cutoff {
                        *kw_counts.entry(i).or_insert(0.0) += 1.0;
                    }
                }
            }
        }

        let semantic_ranks = rank_desc(&semantic);
        let keyword_list: Vec<(u32, f64)> =
            kw_counts.iter().map(|(&i, &s)| (i, s)).collect();
        let keyword_ranks = rank_desc(&keyword_list);

        let mut results: Vec<RetrievalResult> = eligible
            .iter()
            .map(|&i| {
                let semantic_score = semantic
                    .iter()
                    .find(|(j, _)| *j == i)
                    .map(|(_, s)| *s)
                    .unwrap_or(0.0);
                let keyword_score = kw_counts.get(&i).copied().unwrap_or(0.0);
                let mut fused = 0.0;
                if let Some(r) = semantic_ranks.get(&i) {
                    fused += 1.0 / (RRF_CONSTANT + *r as f64);
                }
                if let Some(r) = keyword_ranks.get(&i) {
                    fused += 1.0 / (RRF_CONSTANT + *r as f64);
                }
                RetrievalResult {
                    chunk: self.chunks[i as usize].clone(),
                    semantic_score,
                    keyword_score,
                    fused_score: fused,
                }
            })
            .collect();
        results.sort_by(|a, b| {
            b.fused_score
                .partial_cmp(&a.fused_score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.chunk.chunk_id.cmp(&b.chunk.chunk_id))
        });
        results.truncate(k);
        Ok(results)
    }
}

fn make_chunk(report: &HistoricalReport, piece: &ChunkText, embedding: Vec<f32>) -> SkbChunk {
    SkbChunk {
        chunk_id: format!("{}:{}", report.source_id, piece.offset_tokens),
        source_id: report.source_id.clone(),
        offset_tokens: piece.offset_tokens,
        text: piece.text.clone(),
        embedding,
        created_at: report.created_at,
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".kw");
    std::path::PathBuf::from(s)
}

fn build_term_map(chunks: &[SkbChunk]) -> BTreeMap<String, Vec<u32>> {
    let mut map: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for (i, chunk) in chunks.iter().enumerate() {
        for term in chunk_terms(&chunk.text) {
            map.entry(term).or_default().push(i as u32);
        }
    }
    map
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// 1-based ranks for a scored list, higher scores first, ties broken by
/// ordinal so ranking is total and deterministic.
fn rank_desc(scored: &[(u32, f64)]) -> BTreeMap<u32, usize> {
    let mut order: Vec<&(u32, f64)> = scored.iter().collect();
    order.sort_by(|(ia, sa), (ib, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| ia.cmp(ib))
    });
    order
        .into_iter()
        .enumerate()
        .map(|(rank, (i, _))| (*i, rank + 1))
        .collect()
}

/// Reads a directory of report JSON files, sorted by file name so index
/// builds are reproducible.
pub fn read_report_dir(dir: &Path) -> Result<Vec<HistoricalReport>, SkbError> {
    let mut names: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    let mut reports = Vec::with_capacity(names.len());
    for path in names {
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        let report: HistoricalReport = serde_json::from_slice(&bytes)
            .map_err(|e| SkbError::Corrupt(format!("{}: {e}", path.display())))?;
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::fixed_clock;
    use crate::config::Config;
    use crate::llm::fake::hash_embedding;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn ts(y: i32, mo: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, mo, d, 0, 0, 0).unwrap()
    }

    fn report(id: &str, title: &str, body: &str, created: DateTime<Utc>) -> HistoricalReport {
        HistoricalReport {
            source_id: id.to_string(),
            title: title.to_string(),
            body: body.to_string(),
            created_at: created,
            kept: true,
            rejection_reason: None,
        }
    }

    /// A gateway whose classifier follows a script and whose embeddings
    /// are the deterministic hash family.
    fn gateway(dir: &Path, script: &str) -> LlmGateway {
        let script_path = dir.join("classifier.script");
        std::fs::write(&script_path, script).unwrap();
        let mut cfg = Config::default();
        let fake = format!("fake:{}", script_path.display());
        cfg.models.classifier.model = fake.clone();
        cfg.models.generator.model = fake.clone();
        cfg.models.executor.model = fake.clone();
        cfg.models.detector.model = fake.clone();
        cfg.models.filter.model = fake.clone();
        cfg.models.embedding.model = "fake:unused".into();
        LlmGateway::new(&cfg, fixed_clock())
    }

    #[test]
    fn log_like_reports_are_rejected_by_rule() {
        let cfg = SkbConfig::default();
        let body = "2024-01-01 10:00:00 start\n2024-01-01 10:00:01 tick\n\
                    2024-01-01 10:00:02 tick\n2024-01-01 10:00:03 tick\n\
                    2024-01-01 10:00:04 tick\n2024-01-01 10:00:05 tick\n\
                    2024-01-01 10:00:06 tick\n2024-01-01 10:00:07 tick\n\
                    2024-01-01 10:00:08 tick\nplain line\n";
        let r = report("r1", "daemon log dump", body, ts(2024, 1, 2));
        assert_eq!(rule_reject(&r, &cfg), Some(RejectionReason::RuleLogLike));
    }

    #[test]
    fn stop_keyword_in_title_rejects() {
        let cfg = SkbConfig::default();
        let r = report(
            "r2",
            "Intermittent test_foo failure",
            "sometimes green sometimes red",
            ts(2024, 1, 2),
        );
        assert_eq!(rule_reject(&r, &cfg), Some(RejectionReason::RuleKeyword));
    }

    #[test]
    fn scenario_reports_pass_rules() {
        let cfg = SkbConfig::default();
        let r = report(
            "r3",
            "Search misses recent notes",
            "Steps: open Settings, click Search, type a word, press Enter.",
            ts(2024, 1, 2),
        );
        assert_eq!(rule_reject(&r, &cfg), None);
    }

    #[test]
    fn filter_marks_kept_and_rejected_consistently() {
        let dir = tempfile::tempdir().unwrap();
        let llm = gateway(
            dir.path(),
            r#"
[[turn]]
match = "open Settings"
reply = "KEEP"

[[turn]]
reply = "REJECT"
"#,
        );
        let cfg = SkbConfig::default();
        let prompts = PromptSet::new(None);
        let reports = vec![
            report(
                "good",
                "Search misses notes",
                "Steps: open Settings, click Search.",
                ts(2024, 1, 2),
            ),
            report("vague", "something broke", "no idea when", ts(2024, 1, 3)),
            report(
                "flaked",
                "Intermittent CI failure",
                "random",
                ts(2024, 1, 4),
            ),
        ];
        let out = filter_reports(reports, &llm, &prompts, &cfg);
        assert!(out[0].kept && out[0].rejection_reason.is_none());
        assert!(!out[1].kept);
        assert_eq!(out[1].rejection_reason, Some(RejectionReason::LlmNotScenario));
        assert!(!out[2].kept);
        assert_eq!(out[2].rejection_reason, Some(RejectionReason::RuleKeyword));
        for r in &out {
            assert_eq!(r.kept, r.rejection_reason.is_none());
        }
    }

    #[test]
    fn classifier_failure_fails_closed() {
        let dir = tempfile::tempdir().unwrap();
        // Only the first report matches a scripted turn; the second gets
        // no reply at all, which must reject it rather than keep it.
        let llm = gateway(
            dir.path(),
            "[[turn]]\nmatch = \"first scenario\"\nreply = \"KEEP\"\n",
        );
        let cfg = SkbConfig::default();
        let prompts = PromptSet::new(None);
        let reports = vec![
            report("a", "first scenario", "click around", ts(2024, 1, 2)),
            report("b", "second scenario", "click more", ts(2024, 1, 3)),
        ];
        let out = filter_reports(reports, &llm, &prompts, &cfg);
        assert!(out[0].kept);
        assert!(!out[1].kept);
        assert_eq!(out[1].rejection_reason, Some(RejectionReason::LlmNotScenario));
    }

    #[test]
    fn exact_token_count_makes_one_chunk() {
        let text = (0..8).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let chunks = chunk_text(&text, 8, 2);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].offset_tokens, 0);
        assert_eq!(chunks[0].text, text);
    }

    #[test]
    fn one_extra_token_makes_two_chunks_at_stride_offset() {
        let words: Vec<String> = (0..513).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let chunks = chunk_text(&text, 512, 64);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].offset_tokens, 0);
        assert_eq!(chunks[1].offset_tokens, 448);
        assert!(chunks[1].text.starts_with("w448 "));
        assert!(chunks[1].text.ends_with("w512"));
    }

    proptest! {
        #[test]
        fn chunking_reconstructs_exactly(
            raw in proptest::collection::vec("[ \t\n]{0,2}[a-zA-Z0-9]{1,6}[ \t\n]{0,2}", 1..120),
            chunk_tokens in 2usize..20,
            overlap_frac in 0usize..100,
        ) {
            let text: String = raw.concat();
            let overlap = overlap_frac % chunk_tokens; // strictly less
            let chunks = chunk_text(&text, chunk_tokens, overlap);
            if token_spans(&text).is_empty() {
                prop_assert!(chunks.is_empty());
            } else {
                prop_assert_eq!(reconstruct(&chunks, overlap), text);
            }
        }

        #[test]
        fn fused_score_never_drops_when_a_rank_improves(
            sem_rank in 1usize..200,
            kw_rank in proptest::option::of(1usize..200),
        ) {
            let fused = |s: usize, k: Option<usize>| {
                1.0 / (RRF_CONSTANT + s as f64)
                    + k.map_or(0.0, |k| 1.0 / (RRF_CONSTANT + k as f64))
            };
            let base = fused(sem_rank, kw_rank);
            if sem_rank > 1 {
                prop_assert!(fused(sem_rank - 1, kw_rank) > base);
            }
            if let Some(k) = kw_rank {
                if k > 1 {
                    prop_assert!(fused(sem_rank, Some(k - 1)) > base);
                }
            }
        }
    }

    fn small_index(dir: &Path) -> (SkbIndex, LlmGateway) {
        let llm = gateway(dir, "[[turn]]\nreply = \"KEEP\"\n");
        let cfg = SkbConfig::default();
        let reports = vec![
            report(
                "old",
                "Search scenario",
                "open Settings click Search type word",
                ts(2023, 6, 1),
            ),
            report(
                "mid",
                "Save scenario",
                "edit note click Save observe toast",
                ts(2023, 9, 1),
            ),
            report(
                "new",
                "Zoom scenario",
                "drag zoom slider observe scale",
                ts(2024, 2, 1),
            ),
        ];
        let (index, warnings) = SkbIndex::build(&reports, &llm, &cfg, 64).unwrap();
        assert!(warnings.is_empty());
        (index, llm)
    }

    #[test]
    fn cutoff_excludes_everything_when_earlier_than_all() {
        let dir = tempfile::tempdir().unwrap();
        let (index, llm) = small_index(dir.path());
        let out = index.query(&llm, "anything", ts(2023, 1, 1), 8).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn exact_text_query_ranks_its_chunk_first() {
        let dir = tempfile::tempdir().unwrap();
        let (index, llm) = small_index(dir.path());
        let target = index
            .chunks()
            .iter()
            .find(|c| c.source_id == "mid")
            .unwrap()
            .clone();
        let out = index.query(&llm, &target.text, ts(2025, 1, 1), 8).unwrap();
        assert_eq!(out[0].chunk.chunk_id, target.chunk_id);

        // Brute-force oracle: cosine against hash embeddings plus distinct
        // term overlap must agree that the target dominates both rankings.
        let qv = hash_embedding(&target.text, 64);
        for c in index.chunks() {
            let cos_target = cosine(&qv, &target.embedding);
            let cos_other = cosine(&qv, &c.embedding);
            assert!(cos_target >= cos_other - 1e-9);
        }
        assert!((out[0].semantic_score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn k_larger_than_index_returns_all_eligible() {
        let dir = tempfile::tempdir().unwrap();
        let (index, llm) = small_index(dir.path());
        let out = index.query(&llm, "scenario", ts(2024, 1, 1), 50).unwrap();
        assert_eq!(out.len(), 2, "the 2024 chunk is past the cutoff");
        for r in &out {
            assert!(r.chunk.created_at < ts(2024, 1, 1));
        }
        let mut sorted = out.clone();
        sorted.sort_by(|a, b| b.fused_score.partial_cmp(&a.fused_score).unwrap());
        assert_eq!(
            out.iter().map(|r| &r.chunk.chunk_id).collect::<Vec<_>>(),
            sorted.iter().map(|r| &r.chunk.chunk_id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn save_load_round_trips_and_rebuild_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (index, _) = small_index(dir.path());
        let p1 = dir.path().join("a.index");
        let p2 = dir.path().join("b.index");
        index.save(&p1).unwrap();
        let loaded = SkbIndex::load(&p1).unwrap();
        assert_eq!(loaded, index);

        let dir2 = tempfile::tempdir().unwrap();
        let (again, _) = small_index(dir2.path());
        again.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(
            std::fs::read(sidecar_path(&p1)).unwrap(),
            std::fs::read(sidecar_path(&p2)).unwrap()
        );
    }

    #[test]
    fn missing_sidecar_is_rebuilt_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let (index, _) = small_index(dir.path());
        let p = dir.path().join("x.index");
        index.save(&p).unwrap();
        std::fs::remove_file(sidecar_path(&p)).unwrap();
        let loaded = SkbIndex::load(&p).unwrap();
        assert_eq!(loaded, index);
    }

    #[test]
    fn empty_input_builds_empty_valid_index() {
        let dir = tempfile::tempdir().unwrap();
        let llm = gateway(dir.path(), "[[turn]]\nreply = \"KEEP\"\n");
        let (index, warnings) =
            SkbIndex::build(&[], &llm, &SkbConfig::default(), 64).unwrap();
        assert!(warnings.is_empty());
        assert!(index.is_empty());
        let p = dir.path().join("empty.index");
        index.save(&p).unwrap();
        let loaded = SkbIndex::load(&p).unwrap();
        assert!(loaded.is_empty());
        assert_eq!(loaded.dim(), 64);
    }

    #[test]
    fn report_dir_reads_sorted_json() {
        let dir = tempfile::tempdir().unwrap();
        for (name, id) in [("b.json", "two"), ("a.json", "one"), ("c.txt", "skip")] {
            std::fs::write(
                dir.path().join(name),
                serde_json::to_vec(&report(id, "t", "b", ts(2024, 1, 1))).unwrap(),
            )
            .unwrap();
        }
        let reports = read_report_dir(dir.path()).unwrap();
        assert_eq!(
            reports.iter().map(|r| r.source_id.as_str()).collect::<Vec<_>>(),
            vec!["one", "two"]
        );
    }
}
