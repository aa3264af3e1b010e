//! Final report bundle for one run: a structured `summary.json` and a
//! human-readable `summary.md`, covering the kept bug reports with their
//! evidence images, the filtered candidates by category, analysis flags,
//! and a three-component usage breakdown that sums exactly to the meter.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::{BugReport, ReportStatus, StepDiff};
use crate::llm::{MeterSnapshot, Role, RoleUsage};

pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_MD: &str = "summary.md";

/// Usage aggregated into the three pipeline components: scenario
/// generation (generation, report triage, and embeddings), scenario
/// execution, and bug detection (difference analysis and filtering).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub generator: RoleUsage,
    pub executor: RoleUsage,
    pub detector: RoleUsage,
    pub total: RoleUsage,
}

/// Folds per-role usage into the three components. Every role belongs to
/// exactly one component, so the components always sum to the total.
pub fn cost_breakdown(meter: &MeterSnapshot) -> CostBreakdown {
    let mut breakdown = CostBreakdown::default();
    for (role, usage) in meter {
        let bucket = match role {
            Role::Generator | Role::Classifier | Role::Embedding => &mut breakdown.generator,
            Role::Executor => &mut breakdown.executor,
            Role::Detector | Role::Filter => &mut breakdown.detector,
        };
        add_usage(bucket, usage);
        add_usage(&mut breakdown.total, usage);
    }
    breakdown
}

fn add_usage(into: &mut RoleUsage, from: &RoleUsage) {
    into.requests += from.requests;
    into.input_tokens += from.input_tokens;
    into.output_tokens += from.output_tokens;
    into.image_count += from.image_count;
    into.cost_micros += from.cost_micros;
    into.wall_ms += from.wall_ms;
}

/// One evidence citation of a kept report, with the annotated screenshot
/// pair it points at (paths relative to the run directory).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub step_index: u32,
    pub region_index: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotated_pre: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotated_post: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptReport {
    pub report_id: String,
    pub scenario_id: String,
    pub title: String,
    pub description: String,
    pub evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredCounts {
    pub duplicates: usize,
    pub rendering_artifacts: usize,
    pub nondeterministic: usize,
}

/// The structured form of the final report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub pr_id: String,
    pub generated_at: String,
    pub candidates_total: usize,
    pub kept: Vec<KeptReport>,
    pub filtered: FilteredCounts,
    pub flags: Vec<String>,
    pub usage: CostBreakdown,
}

/// Everything the report needs from the earlier stages.
pub struct ReportInputs<'a> {
    pub run_id: &'a str,
    pub pr_id: &'a str,
    pub generated_at: &'a str,
    pub reports: &'a [BugReport],
    /// Per-scenario diff artifacts, for resolving evidence citations.
    pub evidence: &'a BTreeMap<String, Vec<StepDiff>>,
    /// Analysis gaps accumulated by detection and filtering.
    pub flags: &'a [String],
    pub meter: &'a MeterSnapshot,
    /// Evidence paths are stored relative to this directory.
    pub run_dir: &'a Path,
}

/// Builds the summary and writes `summary.json` and `summary.md` into
/// `out_dir`. Returns the structured summary.
pub fn emit_report(inputs: &ReportInputs, out_dir: &Path) -> std::io::Result<RunSummary> {
    let summary = build_summary(inputs);
    std::fs::create_dir_all(out_dir)?;
    let mut json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    json.push(b'\n');
    std::fs::write(out_dir.join(SUMMARY_JSON), json)?;
    std::fs::write(out_dir.join(SUMMARY_MD), render_markdown(&summary))?;
    Ok(summary)
}

fn build_summary(inputs: &ReportInputs) -> RunSummary {
    let mut filtered = FilteredCounts::default();
    let mut kept = Vec::new();
    for report in inputs.reports {
        match report.status {
            ReportStatus::Kept => kept.push(kept_report(inputs, report)),
            ReportStatus::FilteredDuplicate => filtered.duplicates += 1,
            ReportStatus::FilteredRendering => filtered.rendering_artifacts += 1,
            ReportStatus::FilteredNondeterminism => filtered.nondeterministic += 1,
            // The filter stage has already run; nothing is left undecided.
            ReportStatus::Candidate => {}
        }
    }
    RunSummary {
        run_id: inputs.run_id.to_string(),
        pr_id: inputs.pr_id.to_string(),
        generated_at: inputs.generated_at.to_string(),
        candidates_total: inputs.reports.len(),
        kept,
        filtered,
        flags: inputs.flags.to_vec(),
        usage: cost_breakdown(inputs.meter),
    }
}

fn kept_report(inputs: &ReportInputs, report: &BugReport) -> KeptReport {
    let diffs = inputs.evidence.get(&report.scenario_id);
    let evidence = report
        .evidence
        .iter()
        .map(|ev| {
            let diff = diffs.and_then(|d| d.iter().find(|s| s.info.step_index == ev.step_index));
            EvidenceRef {
                step_index: ev.step_index,
                region_index: ev.region_index,
                annotated_pre: diff.map(|d| relativize(&d.annotated_pre, inputs.run_dir)),
                annotated_post: diff.map(|d| relativize(&d.annotated_post, inputs.run_dir)),
            }
        })
        .collect();
    KeptReport {
        report_id: report.report_id.clone(),
        scenario_id: report.scenario_id.clone(),
        title: report.title.clone(),
        description: report.description.clone(),
        evidence,
    }
}

/// Paths inside the run directory are stored relative to it so two runs
/// in different locations produce identical artifacts.
fn relativize(path: &Path, run_dir: &Path) -> String {
    path.strip_prefix(run_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn dollars(micros: u64) -> String {
    format!("{}.{:06}", micros / 1_000_000, micros % 1_000_000)
}

fn render_markdown(summary: &RunSummary) -> String {
    use std::fmt::Write;
    let mut md = String::new();
    let _ = writeln!(md, "# Differential GUI test report: PR {}", summary.pr_id);
    let _ = writeln!(md);
    let _ = writeln!(md, "Run `{}`, generated {}.", summary.run_id, summary.generated_at);
    let _ = writeln!(md);
    let _ = writeln!(md, "## Verdict");
    let _ = writeln!(md);
    if summary.kept.is_empty() {
        let _ = writeln!(
            md,
            "No unintended differences were found: every observed difference was \
             either explained by the change intent or filtered as noise."
        );
    } else {
        let _ = writeln!(
            md,
            "{} unintended difference(s) kept out of {} candidate report(s).",
            summary.kept.len(),
            summary.candidates_total
        );
    }
    if !summary.kept.is_empty() {
        let _ = writeln!(md);
        let _ = writeln!(md, "## Kept bug reports");
        for report in &summary.kept {
            let _ = writeln!(md);
            let _ = writeln!(md, "### {}: {}", report.report_id, report.title);
            let _ = writeln!(md);
            let _ = writeln!(md, "{}", report.description);
            let _ = writeln!(md);
            let _ = writeln!(md, "Scenario `{}`. Evidence:", report.scenario_id);
            for ev in &report.evidence {
                let at = if ev.region_index < 0 {
                    format!("step {}, whole step", ev.step_index)
                } else {
                    format!("step {}, region {}", ev.step_index, ev.region_index)
                };
                match (&ev.annotated_pre, &ev.annotated_post) {
                    (Some(pre), Some(post)) => {
                        let _ = writeln!(md, "- {at}: [baseline]({pre}) vs [changed]({post})");
                    }
                    _ => {
                        let _ = writeln!(md, "- {at}");
                    }
                }
            }
        }
    }
    let _ = writeln!(md);
    let _ = writeln!(md, "## Filtered candidates");
    let _ = writeln!(md);
    let _ = writeln!(md, "- duplicates: {}", summary.filtered.duplicates);
    let _ = writeln!(
        md,
        "- rendering artifacts: {}",
        summary.filtered.rendering_artifacts
    );
    let _ = writeln!(
        md,
        "- nondeterministic behavior: {}",
        summary.filtered.nondeterministic
    );
    if !summary.flags.is_empty() {
        let _ = writeln!(md);
        let _ = writeln!(md, "## Analysis flags");
        let _ = writeln!(md);
        for flag in &summary.flags {
            let _ = writeln!(md, "- {flag}");
        }
    }
    let _ = writeln!(md);
    let _ = writeln!(md, "## Usage and cost");
    let _ = writeln!(md);
    let _ = writeln!(
        md,
        "| component | requests | input tokens | output tokens | images | cost (USD) |"
    );
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for (name, usage) in [
        ("generation", &summary.usage.generator),
        ("execution", &summary.usage.executor),
        ("detection", &summary.usage.detector),
        ("total", &summary.usage.total),
    ] {
        let _ = writeln!(
            md,
            "| {name} | {} | {} | {} | {} | {} |",
            usage.requests,
            usage.input_tokens,
            usage.output_tokens,
            usage.image_count,
            dollars(usage.cost_micros)
        );
    }
    md
}
