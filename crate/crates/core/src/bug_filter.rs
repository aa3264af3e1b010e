//! Post-processing of candidate bug reports: one joint LLM pass per run
//! weeds out duplicates, screenshot-timing artifacts, and reports caused
//! by unstable interface behavior.
//!
//! The model proposes a decision per candidate; the module then resolves
//! the duplicate graph deterministically (groups get exactly one kept
//! representative, the lowest report id) and falls open to keeping
//! everything when the reply is unusable, so the filter can only ever
//! trade precision for recall, never the reverse.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detection::{BugReport, ReportStatus, StepDiff};
use crate::llm::{
    ask_with_repair, extract_fenced_json, AskError, ChatMessage, LlmError, LlmGateway, Role,
};
use crate::prompts::PromptSet;

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("filter precondition: {0}")]
    Precondition(String),
    #[error("attaching evidence screenshot: {0}")]
    Io(#[from] std::io::Error),
}

/// What the filter decided for one candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Ruling {
    Keep,
    DuplicateOf { duplicate_of: String },
    RenderingArtifact,
    Nondeterministic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub report_id: String,
    #[serde(flatten)]
    pub outcome: Ruling,
    pub rationale: String,
}

/// The filtered report list plus the decisions that produced it. Reports
/// keep their input order; only statuses change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub reports: Vec<BugReport>,
    pub decisions: Vec<FilterDecision>,
    pub flags: Vec<String>,
}

#[derive(Deserialize)]
struct FilterReply {
    decisions: Vec<FilterDecision>,
}

/// Runs the joint filtering pass over all of a run's candidates. The
/// evidence map (scenario id to that scenario's step diffs) supplies the
/// annotated screenshots each candidate cites.
pub fn filter_reports(
    candidates: &[BugReport],
    evidence: &BTreeMap<String, Vec<StepDiff>>,
    llm: &LlmGateway,
    prompts: &PromptSet,
) -> Result<FilterOutcome, FilterError> {
    for report in candidates {
        if report.status != ReportStatus::Candidate {
            return Err(FilterError::Precondition(format!(
                "report {} is {:?}, not a candidate",
                report.report_id, report.status
            )));
        }
        if report.pr_id != candidates[0].pr_id {
            return Err(FilterError::Precondition(
                "candidates from different runs cannot be filtered together".into(),
            ));
        }
    }
    if candidates.is_empty() {
        return Ok(FilterOutcome {
            reports: Vec::new(),
            decisions: Vec::new(),
            flags: Vec::new(),
        });
    }

    let mut session =
        llm.open_named_session(Role::Filter, &format!("filter-{}", candidates[0].pr_id))?;
    let text = prompts.filter_candidates(
        &serde_json::to_string_pretty(candidates).expect("reports serialize"),
    );
    let message = ChatMessage::user_with_images(text, &evidence_images(candidates, evidence))?;

    let ids: Vec<&str> = candidates.iter().map(|c| c.report_id.as_str()).collect();
    let parse = |reply_text: &str| -> Result<Vec<FilterDecision>, String> {
        let value = extract_fenced_json(reply_text)?;
        let reply: FilterReply =
            serde_json::from_value(value).map_err(|e| format!("missing or bad field: {e}"))?;
        validate_decisions(&ids, &reply.decisions)?;
        Ok(reply.decisions)
    };

    let mut flags = Vec::new();
    let decisions = match ask_with_repair(llm, &mut session, message, parse) {
        Ok(decisions) => decisions,
        Err(AskError::Format(problem)) => {
            // Fail open: an unusable reply must not cost recall.
            flags.push(format!(
                "filter reply unusable after repair ({problem}); all candidates kept"
            ));
            candidates
                .iter()
                .map(|c| FilterDecision {
                    report_id: c.report_id.clone(),
                    outcome: Ruling::Keep,
                    rationale: "filter unavailable; defaulted to keep".into(),
                })
                .collect()
        }
        Err(AskError::Llm(e)) => return Err(e.into()),
    };

    let (reports, decisions) = apply_decisions(candidates, decisions, &mut flags);
    Ok(FilterOutcome {
        reports,
        decisions,
        flags,
    })
}

/// The annotated screenshot pairs cited by the candidates' evidence, in
/// citation order, each path attached once.
fn evidence_images(
    candidates: &[BugReport],
    evidence: &BTreeMap<String, Vec<StepDiff>>,
) -> Vec<std::path::PathBuf> {
    let mut images = Vec::new();
    for candidate in candidates {
        let Some(diffs) = evidence.get(&candidate.scenario_id) else {
            continue;
        };
        for ev in &candidate.evidence {
            let Some(diff) = diffs.iter().find(|d| d.info.step_index == ev.step_index) else {
                continue;
            };
            for path in [&diff.annotated_pre, &diff.annotated_post] {
                if !images.contains(path) {
                    images.push(path.clone());
                }
            }
        }
    }
    images
}

/// Rejects replies that miss or invent candidates, point duplicates at
/// unknown reports, or chain duplicates into a cycle.
fn validate_decisions(ids: &[&str], decisions: &[FilterDecision]) -> Result<(), String> {
    let mut seen: Vec<&str> = decisions.iter().map(|d| d.report_id.as_str()).collect();
    seen.sort_unstable();
    let mut expected: Vec<&str> = ids.to_vec();
    expected.sort_unstable();
    if seen != expected {
        return Err(format!(
            "decisions must cover every candidate exactly once; expected {expected:?}, got {seen:?}"
        ));
    }
    let targets: BTreeMap<&str, &str> = decisions
        .iter()
        .filter_map(|d| match &d.outcome {
            Ruling::DuplicateOf { duplicate_of } => Some((d.report_id.as_str(), duplicate_of.as_str())),
            _ => None,
        })
        .collect();
    for (id, target) in &targets {
        if !ids.contains(target) {
            return Err(format!("{id} is marked duplicate_of unknown report {target}"));
        }
        if id == target {
            return Err(format!("{id} cannot be a duplicate of itself"));
        }
    }
    for start in targets.keys() {
        let mut cur = *start;
        let mut hops = 0usize;
        while let Some(next) = targets.get(cur) {
            cur = next;
            hops += 1;
            if hops > targets.len() {
                return Err(format!("duplicate_of chain starting at {start} forms a cycle"));
            }
        }
    }
    Ok(())
}

/// Turns validated decisions into final statuses. Duplicate chains are
/// grouped; each group keeps exactly one member, the lowest report id,
/// and any decision the grouping overrides is rewritten and flagged.
fn apply_decisions(
    candidates: &[BugReport],
    decisions: Vec<FilterDecision>,
    flags: &mut Vec<String>,
) -> (Vec<BugReport>, Vec<FilterDecision>) {
    let mut by_id: BTreeMap<String, FilterDecision> = decisions
        .into_iter()
        .map(|d| (d.report_id.clone(), d))
        .collect();

    // Each duplicate chain ends at a non-duplicate root; the group is the
    // root plus everything that reaches it.
    let root_of = |id: &str, by_id: &BTreeMap<String, FilterDecision>| -> String {
        let mut cur = id.to_string();
        while let Ruling::DuplicateOf { duplicate_of } = &by_id[&cur].outcome {
            cur = duplicate_of.clone();
        }
        cur
    };
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for candidate in candidates {
        let id = &candidate.report_id;
        if matches!(by_id[id].outcome, Ruling::DuplicateOf { .. }) {
            let root = root_of(id, &by_id);
            let group = groups.entry(root.clone()).or_insert_with(|| vec![root]);
            group.push(id.clone());
        }
    }

    let mut status: BTreeMap<String, ReportStatus> = BTreeMap::new();
    let mut rep_of: BTreeMap<String, String> = BTreeMap::new();
    for (_, group) in groups {
        let representative = group.iter().min().expect("group is nonempty").clone();
        for member in group {
            if member == representative {
                status.insert(member.clone(), ReportStatus::Kept);
            } else {
                status.insert(member.clone(), ReportStatus::FilteredDuplicate);
            }
            rep_of.insert(member, representative.clone());
        }
        let decision = by_id.get_mut(&representative).expect("decision exists");
        if decision.outcome != Ruling::Keep {
            flags.push(format!(
                "{representative}: kept as the duplicate-group representative, overriding {:?}",
                decision.outcome
            ));
            decision.outcome = Ruling::Keep;
        }
    }
    for candidate in candidates {
        let id = &candidate.report_id;
        let from_ruling = match &by_id[id].outcome {
            Ruling::Keep => ReportStatus::Kept,
            Ruling::DuplicateOf { .. } => ReportStatus::FilteredDuplicate,
            Ruling::RenderingArtifact => ReportStatus::FilteredRendering,
            Ruling::Nondeterministic => ReportStatus::FilteredNondeterminism,
        };
        let assigned = *status.entry(id.clone()).or_insert(from_ruling);
        if assigned == ReportStatus::FilteredDuplicate
            && !matches!(by_id[id].outcome, Ruling::DuplicateOf { .. })
        {
            // A duplicate target that lost the representative election.
            let decision = by_id.get_mut(id).expect("decision exists");
            flags.push(format!(
                "{id}: filtered as a duplicate, overriding {:?}",
                decision.outcome
            ));
            decision.outcome = Ruling::DuplicateOf {
                duplicate_of: rep_of[id].clone(),
            };
        }
    }

    let reports = candidates
        .iter()
        .map(|c| {
            let mut report = c.clone();
            report.status = status[&c.report_id];
            report
        })
        .collect();
    let decisions = candidates
        .iter()
        .map(|c| by_id[&c.report_id].clone())
        .collect();
    (reports, decisions)
}
