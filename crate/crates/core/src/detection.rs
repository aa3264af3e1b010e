//! Differential bug detection: an LLM dialogue walks the detected
//! difference regions of one execution trace, step by step, and classifies
//! each region as expected under the change intent or as a bug, filing
//! candidate reports for unintended differences.
//!
//! The dialogue is deliberately bracketed by algorithmic guards: steps
//! without difference regions are never sent to the model, a trace whose
//! steps are all clean produces zero candidates no matter what a model
//! would say, and a step whose analysis fails after one repair reprompt
//! falls open to "expected" so noise cannot manufacture reports.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::change_context::ChangeContext;
use crate::executor::ExecutionTrace;
use crate::llm::{
    ask_with_repair, extract_fenced_json, AskError, ChatMessage, LlmError, LlmGateway, Role,
};
use crate::pixel_diff::ParsedInfo;
use crate::prompts::PromptSet;
use crate::scenario::{bare_pr_id, ImpactAnalysis};

/// Most difference regions shown to the model for one step; anything
/// beyond the largest ones is auto-classified expected and flagged.
pub const MAX_REGIONS_IN_PROMPT: usize = 40;

/// Evidence region index meaning "the step as a whole" rather than one
/// numbered region.
pub const WHOLE_STEP: i32 = -1;

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("detection precondition: {0}")]
    Precondition(String),
    #[error("attaching screenshot: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Expected,
    Bug,
}

/// The oracle's ruling on one difference region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceVerdict {
    pub step_index: u32,
    pub region_index: u32,
    pub classification: Classification,
    pub description: String,
    pub reasoning: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Candidate,
    Kept,
    FilteredDuplicate,
    FilteredRendering,
    FilteredNondeterminism,
}

/// A pointer from a report into the trace: which step, and which numbered
/// region ([`WHOLE_STEP`] for issues not tied to a single region).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub step_index: u32,
    pub region_index: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugReport {
    pub report_id: String,
    pub pr_id: String,
    pub scenario_id: String,
    pub title: String,
    pub description: String,
    pub evidence: Vec<Evidence>,
    pub status: ReportStatus,
}

/// One step's comparison artifacts as produced by the diff stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiff {
    pub info: ParsedInfo,
    pub annotated_pre: PathBuf,
    pub annotated_post: PathBuf,
}

/// Everything detection produced for one trace. `flags` lists analysis
/// gaps (failed steps, regions beyond the prompt budget) for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub candidates: Vec<BugReport>,
    pub verdicts: Vec<DifferenceVerdict>,
    pub flags: Vec<String>,
}

#[derive(Deserialize)]
struct VerdictReply {
    region_index: u32,
    classification: Classification,
    description: String,
    #[serde(default)]
    reasoning: String,
}

#[derive(Deserialize)]
struct ReportReply {
    title: String,
    description: String,
    evidence: Vec<Evidence>,
}

#[derive(Deserialize)]
struct StepReply {
    verdicts: Vec<VerdictReply>,
    #[serde(default)]
    reports: Vec<ReportReply>,
}

/// Classifies every difference region of `trace` and files candidate
/// reports for unintended ones. One dialogue session spans all steps so
/// the model can recognize an issue it already reported.
pub fn detect_bugs(
    trace: &ExecutionTrace,
    diffs: &[StepDiff],
    ctx: &ChangeContext,
    analysis: &ImpactAnalysis,
    llm: &LlmGateway,
    prompts: &PromptSet,
) -> Result<DetectionOutcome, DetectError> {
    // Region counts per analyzable step, for evidence validation.
    let mut region_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for diff in diffs {
        let step = trace
            .steps
            .iter()
            .find(|s| s.step_index == diff.info.step_index)
            .ok_or_else(|| {
                DetectError::Precondition(format!(
                    "diff for step {} has no matching trace step",
                    diff.info.step_index
                ))
            })?;
        if step.pre_screenshot.is_none() {
            return Err(DetectError::Precondition(format!(
                "step {} lacks a baseline screenshot",
                step.step_index
            )));
        }
        region_counts.insert(diff.info.step_index, diff.info.regions.len());
    }

    let mut outcome = DetectionOutcome {
        candidates: Vec::new(),
        verdicts: Vec::new(),
        flags: Vec::new(),
    };
    // The no-diff guard: nothing to look at means nothing to report, and
    // no model gets the chance to claim otherwise.
    if diffs.iter().all(|d| d.info.is_empty()) {
        return Ok(outcome);
    }

    let pr_id = bare_pr_id(ctx);
    let mut session = llm.open_named_session(
        Role::Detector,
        &format!("detect-{}", trace.scenario_id),
    )?;
    let opening = prompts.detector_opening(
        &ctx.pr_intent.title,
        &ctx.pr_intent.description,
        &analysis.intent_explanation,
    );
    let mut next_seq: u32 = 1;
    let mut first_message = true;

    for diff in diffs {
        if diff.info.is_empty() {
            continue;
        }
        let step_index = diff.info.step_index;
        let step = trace
            .steps
            .iter()
            .find(|s| s.step_index == step_index)
            .expect("validated above");

        // The regions shown to the model: all of them, or the largest
        // MAX_REGIONS_IN_PROMPT when a step explodes.
        let mut shown: Vec<&crate::pixel_diff::DiffRegion> = diff.info.regions.iter().collect();
        shown.sort_by(|a, b| b.pixel_count.cmp(&a.pixel_count).then(a.index.cmp(&b.index)));
        shown.truncate(MAX_REGIONS_IN_PROMPT);
        let shown_indices: Vec<u32> = {
            let mut v: Vec<u32> = shown.iter().map(|r| r.index).collect();
            v.sort_unstable();
            v
        };
        let hidden: Vec<u32> = diff
            .info
            .regions
            .iter()
            .map(|r| r.index)
            .filter(|i| !shown_indices.contains(i))
            .collect();

        let prompt_info = ParsedInfo {
            step_index,
            regions: shown.iter().map(|r| (*r).clone()).collect(),
            image_dims: diff.info.image_dims,
            dimension_mismatch: diff.info.dimension_mismatch,
        };
        let step_text = prompts.detector_step(
            &step_index.to_string(),
            &step.instruction.canonical_json(),
            &serde_json::to_string_pretty(&prompt_info).expect("parsed info serializes"),
        );
        let text = if first_message {
            format!("{opening}\n{step_text}")
        } else {
            step_text
        };
        first_message = false;
        let message =
            ChatMessage::user_with_images(text, &[&diff.annotated_pre, &diff.annotated_post])?;

        let expected_set = shown_indices.clone();
        let counts = &region_counts;
        let parse = |reply_text: &str| -> Result<StepReply, String> {
            let value = extract_fenced_json(reply_text)?;
            let parsed: StepReply =
                serde_json::from_value(value).map_err(|e| format!("missing or bad field: {e}"))?;
            let mut got: Vec<u32> = parsed.verdicts.iter().map(|v| v.region_index).collect();
            got.sort_unstable();
            if got != expected_set {
                return Err(format!(
                    "verdicts must cover exactly the region indices {expected_set:?}, got {got:?}"
                ));
            }
            for report in &parsed.reports {
                if report.evidence.is_empty() {
                    return Err(format!("report {:?} has no evidence", report.title));
                }
                for ev in &report.evidence {
                    let Some(&len) = counts.get(&ev.step_index) else {
                        return Err(format!(
                            "evidence cites step {} which was not analyzed",
                            ev.step_index
                        ));
                    };
                    if ev.step_index > step_index {
                        return Err(format!(
                            "evidence cites step {} which has not been analyzed yet",
                            ev.step_index
                        ));
                    }
                    if ev.region_index != WHOLE_STEP
                        && (ev.region_index < 0 || ev.region_index as usize >= len)
                    {
                        return Err(format!(
                            "evidence region {} does not exist in step {}",
                            ev.region_index, ev.step_index
                        ));
                    }
                }
            }
            Ok(parsed)
        };

        match ask_with_repair(llm, &mut session, message, parse) {
            Ok(reply) => {
                let mut verdicts: Vec<DifferenceVerdict> = reply
                    .verdicts
                    .into_iter()
                    .map(|v| DifferenceVerdict {
                        step_index,
                        region_index: v.region_index,
                        classification: v.classification,
                        description: v.description,
                        reasoning: v.reasoning,
                    })
                    .collect();
                for index in &hidden {
                    verdicts.push(auto_expected(
                        step_index,
                        *index,
                        "region beyond the prompt budget",
                    ));
                }
                verdicts.sort_by_key(|v| v.region_index);
                outcome.verdicts.extend(verdicts);
                if !hidden.is_empty() {
                    outcome.flags.push(format!(
                        "step {step_index}: {} regions exceeded the prompt budget of \
                         {MAX_REGIONS_IN_PROMPT} and were auto-classified expected",
                        hidden.len()
                    ));
                }
                for report in reply.reports {
                    let report_id = format!("{pr_id}-{}-{next_seq}", trace.scenario_id);
                    next_seq += 1;
                    outcome.candidates.push(BugReport {
                        report_id,
                        pr_id: pr_id.clone(),
                        scenario_id: trace.scenario_id.clone(),
                        title: report.title,
                        description: report.description,
                        evidence: report.evidence,
                        status: ReportStatus::Candidate,
                    });
                }
            }
            Err(AskError::Format(problem)) => {
                // Fail open: an unanalyzed region must not become a report.
                let mut indices: Vec<u32> = diff.info.regions.iter().map(|r| r.index).collect();
                indices.sort_unstable();
                for index in indices {
                    outcome.verdicts.push(auto_expected(
                        step_index,
                        index,
                        "analysis unavailable for this step",
                    ));
                }
                outcome.flags.push(format!(
                    "step {step_index}: model reply unusable after repair ({problem}); \
                     {} regions defaulted to expected",
                    diff.info.regions.len()
                ));
            }
            Err(AskError::Llm(e)) => return Err(e.into()),
        }
    }
    Ok(outcome)
}

fn auto_expected(step_index: u32, region_index: u32, why: &str) -> DifferenceVerdict {
    DifferenceVerdict {
        step_index,
        region_index,
        classification: Classification::Expected,
        description: why.to_string(),
        reasoning: "classified without model analysis; defaults to expected".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::change_context::{ChangeIntent, CodeChange};
    use crate::clock::fixed_clock;
    use crate::config::{Config, Geometry};
    use crate::executor::{
        BuildIds, InstructionKind, Position, StepRecord, Termination, UiInstruction,
    };
    use crate::pixel_diff::{Bbox, DiffRegion};
    use chrono::{TimeZone, Utc};
    use std::path::Path;

    fn gateway(dir: &Path, script: &str) -> LlmGateway {
        let script_path = dir.join("detector.script");
        std::fs::write(&script_path, script).unwrap();
        let mut cfg = Config::default();
        cfg.models.detector.model = format!("fake:{}", script_path.display());
        cfg.models.embedding.model = "fake:unused".into();
        LlmGateway::new(&cfg, fixed_clock())
    }

    fn ctx() -> ChangeContext {
        ChangeContext {
            pr_intent: ChangeIntent {
                source_id: "pr:7".into(),
                title: "Move the Save button into the toolbar".into(),
                description: "Relocates Save; no behavior change intended.".into(),
                created_at: Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap(),
            },
            resolved_issues: vec![],
            code_change: CodeChange {
                commit_messages: vec!["move save button".into()],
                files: vec![],
            },
            preceding: vec![],
            pre_revision: "aaa".into(),
            post_revision: "bbb".into(),
            warnings: vec![],
        }
    }

    fn analysis() -> ImpactAnalysis {
        ImpactAnalysis {
            intent_explanation: "The Save button moves to the toolbar.".into(),
            affected_behaviors: vec!["saving".into()],
            high_risk_cases: vec![],
        }
    }

    fn click(x: u32, y: u32) -> UiInstruction {
        UiInstruction {
            kind: InstructionKind::Click,
            target_name: "Save".into(),
            position: Some(Position { x, y }),
            text: None,
            keys: None,
            direction: None,
            end_position: None,
            wait_ms: None,
        }
    }

    fn step(i: u32) -> StepRecord {
        StepRecord {
            step_index: i,
            instruction: click(10 + i, 10),
            post_screenshot: format!("step_{i}_post.png"),
            pre_screenshot: Some(format!("step_{i}_pre.png")),
            llm_turn_index: 1,
        }
    }

    fn trace(n_steps: u32) -> ExecutionTrace {
        ExecutionTrace {
            scenario_id: "s1".into(),
            steps: (0..n_steps).map(step).collect(),
            termination: Termination::Completed,
            llm_turns_used: n_steps,
            build_ids: BuildIds {
                pre: "img@a".into(),
                post: "img@b".into(),
            },
            replay_failure_at: None,
            error: None,
        }
    }

    fn region(index: u32, pixel_count: u64) -> DiffRegion {
        let x = 10 * index;
        DiffRegion {
            index,
            bbox: Bbox {
                x1: x,
                y1: 0,
                x2: x + 5,
                y2: 5,
            },
            pixel_count,
        }
    }

    /// Writes a placeholder annotated pair and returns a StepDiff.
    fn diff(dir: &Path, step_index: u32, regions: Vec<DiffRegion>) -> StepDiff {
        let pre = dir.join(format!("step_{step_index}_pre_annotated.png"));
        let post = dir.join(format!("step_{step_index}_post_annotated.png"));
        image::RgbImage::from_pixel(4, 4, image::Rgb([step_index as u8, 0, 0]))
            .save(&pre)
            .unwrap();
        image::RgbImage::from_pixel(4, 4, image::Rgb([step_index as u8, 0, 1]))
            .save(&post)
            .unwrap();
        StepDiff {
            info: ParsedInfo {
                step_index,
                regions,
                image_dims: Geometry {
                    width: 200,
                    height: 120,
                },
                dimension_mismatch: false,
            },
            annotated_pre: pre,
            annotated_post: post,
        }
    }

    fn fenced(v: serde_json::Value) -> String {
        format!("```json\n{v}\n```")
    }

    fn turn(matches: &str, reply: &str) -> String {
        format!("[[turn]]\nmatch = \"{matches}\"\nreply = '''\n{reply}\n'''\n\n")
    }

    #[test]
    fn intent_covered_difference_stays_expected() {
        let dir = tempfile::tempdir().unwrap();
        let reply = fenced(serde_json::json!({
            "verdicts": [{
                "region_index": 0,
                "classification": "expected",
                "description": "Save button now in the toolbar",
                "reasoning": "the change intent says the button moves"
            }]
        }));
        let llm = gateway(dir.path(), &turn("Step 0.", &reply));
        let diffs = vec![diff(dir.path(), 0, vec![region(0, 25)])];
        let out = detect_bugs(
            &trace(1),
            &diffs,
            &ctx(),
            &analysis(),
            &llm,
            &PromptSet::new(None),
        )
        .unwrap();
        assert!(out.candidates.is_empty());
        assert_eq!(out.verdicts.len(), 1);
        assert_eq!(out.verdicts[0].classification, Classification::Expected);
        assert!(out.flags.is_empty());
    }

    #[test]
    fn unintended_difference_files_a_candidate() {
        let dir = tempfile::tempdir().unwrap();
        let reply = fenced(serde_json::json!({
            "verdicts": [
                {"region_index": 0, "classification": "expected",
                 "description": "moved button", "reasoning": "covered by intent"},
                {"region_index": 1, "classification": "bug",
                 "description": "editor opened in a separate popup window",
                 "reasoning": "outside the intended scope of the change"}
            ],
            "reports": [{
                "title": "Editor opens in a popup instead of the main window",
                "description": "After the click, the changed build shows a popup.",
                "evidence": [{"step_index": 0, "region_index": 1}]
            }]
        }));
        let llm = gateway(dir.path(), &turn("Step 0.", &reply));
        let diffs = vec![diff(dir.path(), 0, vec![region(0, 25), region(1, 400)])];
        let out = detect_bugs(
            &trace(1),
            &diffs,
            &ctx(),
            &analysis(),
            &llm,
            &PromptSet::new(None),
        )
        .unwrap();
        assert_eq!(out.verdicts.len(), 2);
        assert_eq!(out.candidates.len(), 1);
        let report = &out.candidates[0];
        assert_eq!(report.report_id, "7-s1-1");
        assert_eq!(report.pr_id, "7");
        assert_eq!(report.scenario_id, "s1");
        assert_eq!(report.status, ReportStatus::Candidate);
        assert_eq!(
            report.evidence,
            vec![Evidence {
                step_index: 0,
                region_index: 1
            }]
        );
    }

    #[test]
    fn repeated_divergence_yields_one_candidate_per_filing() {
        let dir = tempfile::tempdir().unwrap();
        let bug_reply = |step: u32| {
            fenced(serde_json::json!({
                "verdicts": [{
                    "region_index": 0, "classification": "bug",
                    "description": "missing save confirmation",
                    "reasoning": "not explained by the intent"
                }],
                "reports": [{
                    "title": format!("No confirmation after save (step {step})"),
                    "description": "The changed build never confirms the save.",
                    "evidence": [{"step_index": step, "region_index": 0}]
                }]
            }))
        };
        let script = format!(
            "{}{}",
            turn("Step 0.", &bug_reply(0)),
            turn("Step 1.", &bug_reply(1))
        );
        let llm = gateway(dir.path(), &script);
        let diffs = vec![
            diff(dir.path(), 0, vec![region(0, 30)]),
            diff(dir.path(), 1, vec![region(0, 30)]),
        ];
        let out = detect_bugs(
            &trace(2),
            &diffs,
            &ctx(),
            &analysis(),
            &llm,
            &PromptSet::new(None),
        )
        .unwrap();
        assert_eq!(out.candidates.len(), 2, "dedup is the filter's job");
        assert_eq!(out.candidates[0].report_id, "7-s1-1");
        assert_eq!(out.candidates[1].report_id, "7-s1-2");
        assert_eq!(out.verdicts.len(), 2);
    }

    #[test]
    fn clean_trace_produces_nothing_no_matter_the_script() {
        let dir = tempfile::tempdir().unwrap();
        // A script that would file a bug if it were ever consulted.
        let poisoned = fenced(serde_json::json!({
            "verdicts": [],
            "reports": [{"title": "fabricated", "description": "x",
                          "evidence": [{"step_index": 0, "region_index": -1}]}]
        }));
        let llm = gateway(dir.path(), &format!("[[turn]]\nreply = '''\n{poisoned}\n'''\n"));
        let diffs = vec![
            diff(dir.path(), 0, vec![]),
            diff(dir.path(), 1, vec![]),
        ];
        let out = detect_bugs(
            &trace(2),
            &diffs,
            &ctx(),
            &analysis(),
            &llm,
            &PromptSet::new(None),
        )
        .unwrap();
        assert!(out.candidates.is_empty());
        assert!(out.verdicts.is_empty());
        assert!(out.flags.is_empty());
    }

    #[test]
    fn clean_steps_are_skipped_in_a_mixed_trace() {
        let dir = tempfile::tempdir().unwrap();
        let reply = fenced(serde_json::json!({
            "verdicts": [{"region_index": 0, "classification": "expected",
                           "description": "toolbar", "reasoning": "intent"}]
        }));
        // Only a step-1 record exists; a send for step 0 would exhaust.
        let llm = gateway(dir.path(), &turn("Step 1.", &reply));
        let diffs = vec![
            diff(dir.path(), 0, vec![]),
            diff(dir.path(), 1, vec![region(0, 10)]),
        ];
        let out = detect_bugs(
            &trace(2),
            &diffs,
            &ctx(),
            &analysis(),
            &llm,
            &PromptSet::new(None),
        )
        .unwrap();
        assert_eq!(out.verdicts.len(), 1);
        assert_eq!(out.verdicts[0].step_index, 1);
    }

    #[test]
    fn failed_step_falls_open_to_expected_and_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let good = fenced(serde_json::json!({
            "verdicts": [{"region_index": 0, "classification": "bug",
                           "description": "misrendered list", "reasoning": "not in intent"}],
            "reports": [{"title": "List misrendered", "description": "d",
                          "evidence": [{"step_index": 1, "region_index": 0}]}]
        }));
        let script = format!(
            "[[turn]]\nreply = \"word salad\"\n\n[[turn]]\nreply = \"more salad\"\n\n{}",
            turn("Step 1.", &good)
        );
        let llm = gateway(dir.path(), &script);
        let diffs = vec![
            diff(dir.path(), 0, vec![region(0, 9), region(1, 9)]),
            diff(dir.path(), 1, vec![region(0, 9)]),
        ];
        let out = detect_bugs(
            &trace(2),
            &diffs,
            &ctx(),
            &analysis(),
            &llm,
            &PromptSet::new(None),
        )
        .unwrap();
        // Step 0: two auto-expected verdicts, one flag, no report. Step 1
        // still analyzed normally.
        assert_eq!(out.verdicts.len(), 3);
        assert!(out.verdicts[..2]
            .iter()
            .all(|v| v.classification == Classification::Expected));
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.candidates[0].report_id, "7-s1-1");
        assert_eq!(out.flags.len(), 1);
        assert!(out.flags[0].contains("step 0"), "{:?}", out.flags);
    }

    #[test]
    fn region_overflow_is_truncated_to_the_largest() {
        let dir = tempfile::tempdir().unwrap();
        let n = MAX_REGIONS_IN_PROMPT as u32 + 3;
        // pixel_count descends with the index, so the shown set is 0..40.
        let regions: Vec<DiffRegion> =
            (0..n).map(|i| region(i, (1000 - i) as u64)).collect();
        let verdicts: Vec<serde_json::Value> = (0..MAX_REGIONS_IN_PROMPT as u32)
            .map(|i| {
                serde_json::json!({"region_index": i, "classification": "expected",
                                    "description": "noise", "reasoning": "intent"})
            })
            .collect();
        let reply = fenced(serde_json::json!({ "verdicts": verdicts }));
        let llm = gateway(dir.path(), &turn("Step 0.", &reply));
        let diffs = vec![diff(dir.path(), 0, regions)];
        let out = detect_bugs(
            &trace(1),
            &diffs,
            &ctx(),
            &analysis(),
            &llm,
            &PromptSet::new(None),
        )
        .unwrap();
        assert_eq!(out.verdicts.len(), n as usize, "verdict totality");
        assert_eq!(
            out.verdicts
                .iter()
                .filter(|v| v.description.contains("prompt budget"))
                .count(),
            3
        );
        assert_eq!(out.flags.len(), 1);
        assert!(out.candidates.is_empty());
    }

    #[test]
    fn bad_evidence_and_missing_verdicts_fall_open() {
        let dir = tempfile::tempdir().unwrap();
        for bad in [
            // Evidence cites a region that does not exist.
            fenced(serde_json::json!({
                "verdicts": [{"region_index": 0, "classification": "bug",
                               "description": "d", "reasoning": "r"}],
                "reports": [{"title": "t", "description": "d",
                              "evidence": [{"step_index": 0, "region_index": 9}]}]
            })),
            // A verdict is missing.
            fenced(serde_json::json!({ "verdicts": [] })),
        ] {
            let script = format!(
                "[[turn]]\nreply = '''\n{bad}\n'''\n\n[[turn]]\nreply = '''\n{bad}\n'''\n"
            );
            let llm = gateway(dir.path(), &script);
            let diffs = vec![diff(dir.path(), 0, vec![region(0, 10)])];
            let out = detect_bugs(
                &trace(1),
                &diffs,
                &ctx(),
                &analysis(),
                &llm,
                &PromptSet::new(None),
            )
            .unwrap();
            assert!(out.candidates.is_empty());
            assert_eq!(out.verdicts.len(), 1);
            assert_eq!(out.verdicts[0].classification, Classification::Expected);
            assert_eq!(out.flags.len(), 1);
        }
    }

    #[test]
    fn whole_step_evidence_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let reply = fenced(serde_json::json!({
            "verdicts": [{"region_index": 0, "classification": "bug",
                           "description": "layout shifted", "reasoning": "r"}],
            "reports": [{"title": "Whole layout misaligned", "description": "d",
                          "evidence": [{"step_index": 0, "region_index": -1}]}]
        }));
        let llm = gateway(dir.path(), &turn("Step 0.", &reply));
        let diffs = vec![diff(dir.path(), 0, vec![region(0, 10)])];
        let out = detect_bugs(
            &trace(1),
            &diffs,
            &ctx(),
            &analysis(),
            &llm,
            &PromptSet::new(None),
        )
        .unwrap();
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.candidates[0].evidence[0].region_index, WHOLE_STEP);
    }

    #[test]
    fn missing_baseline_screenshot_is_a_precondition_error() {
        let dir = tempfile::tempdir().unwrap();
        let llm = gateway(dir.path(), "");
        let mut t = trace(1);
        t.steps[0].pre_screenshot = None;
        let diffs = vec![diff(dir.path(), 0, vec![region(0, 10)])];
        let err = detect_bugs(&t, &diffs, &ctx(), &analysis(), &llm, &PromptSet::new(None))
            .unwrap_err();
        assert!(matches!(err, DetectError::Precondition(_)), "{err}");
    }
}
