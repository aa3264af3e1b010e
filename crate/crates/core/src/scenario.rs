//! The three-stage scenario generator: change-impact analysis with initial
//! scenario generation, event-sequence enrichment backed by knowledge-base
//! retrieval, and test-data instantiation.
//!
//! Each stage runs in a fresh model session and expects one fenced JSON
//! block back; a malformed reply earns exactly one repair reprompt before
//! the stage fails. Scenario ids are assigned here, never by the model, so
//! they stay unique per PR run. Scenarios that grow past the complexity
//! ceiling during enrichment are replaced by newly generated ones under
//! fresh ids rather than trimmed.
//!
//! Every stage enforces the end-user phrasing rule lexically: no analysis
//! entry or scenario step may contain a changed file's path or name.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::change_context::ChangeContext;
use crate::config::{Budgets, SkbConfig};
use crate::llm::{ask_with_repair, extract_fenced_json, AskError, ChatMessage, LlmGateway, Role};
use crate::prompts::PromptSet;
use crate::skb::{SkbError, SkbIndex};

/// Enriched scenarios longer than this are replaced, not extended.
pub const MAX_STEPS_BEFORE_REPLACEMENT: usize = 15;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
    #[error("model response unusable after repair attempt: {0}")]
    LlmFormat(String),
    #[error(transparent)]
    Skb(#[from] SkbError),
    #[error("stage precondition violated: {0}")]
    Precondition(String),
}

impl From<AskError> for ScenarioError {
    fn from(e: AskError) -> Self {
        match e {
            AskError::Llm(e) => ScenarioError::Llm(e),
            AskError::Format(m) => ScenarioError::LlmFormat(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generated,
    EventEnriched,
    DataEnriched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactAnalysis {
    pub intent_explanation: String,
    pub affected_behaviors: Vec<String>,
    pub high_risk_cases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStep {
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_observation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDataItem {
    pub name: String,
    pub constraint: String,
    #[serde(default)]
    pub concrete_value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestScenario {
    pub scenario_id: String,
    pub title: String,
    pub stage: Stage,
    pub preconditions: Vec<String>,
    pub steps: Vec<ScenarioStep>,
    pub test_data: Vec<TestDataItem>,
    /// Knowledge-base chunk ids that informed the enrichment.
    #[serde(default)]
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBatch {
    pub pr_id: String,
    pub analysis: ImpactAnalysis,
    pub scenarios: Vec<TestScenario>,
}

impl ScenarioBatch {
    /// Construction truncates to the per-PR scenario budget, preserving
    /// the emitted order.
    pub fn new(
        pr_id: String,
        analysis: ImpactAnalysis,
        mut scenarios: Vec<TestScenario>,
        budgets: &Budgets,
    ) -> Self {
        scenarios.truncate(budgets.max_scenarios_per_pr as usize);
        Self {
            pr_id,
            analysis,
            scenarios,
        }
    }
}

/// Lexical phrases that must not appear in user-facing text: each changed
/// file's full path, and its file name when it looks like a file name.
fn forbidden_phrases(ctx: &ChangeContext) -> Vec<String> {
    let mut out = Vec::new();
    for f in &ctx.code_change.files {
        for p in std::iter::once(f.path.as_str()).chain(f.pre_path.as_deref()) {
            out.push(p.to_string());
            if let Some(name) = p.rsplit('/').next() {
                if name.contains('.') && name != p {
                    out.push(name.to_string());
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

fn check_end_user_text(text: &str, forbidden: &[String], where_: &str) -> Result<(), String> {
    for phrase in forbidden {
        if text.contains(phrase.as_str()) {
            return Err(format!(
                "{where_} mentions the code artifact {phrase:?}; describe the behavior \
                 in end-user terms instead"
            ));
        }
    }
    Ok(())
}

fn validate_scenario_text(s: &TestScenario, forbidden: &[String]) -> Result<(), String> {
    if s.steps.is_empty() {
        return Err(format!("scenario {:?} has no steps", s.title));
    }
    for step in &s.steps {
        check_end_user_text(&step.description, forbidden, "a scenario step")?;
        if let Some(obs) = &step.expected_observation {
            check_end_user_text(obs, forbidden, "an expected observation")?;
        }
    }
    Ok(())
}

/// Next unused scenario id of the form `s<n>` given ids already assigned.
fn next_scenario_id(existing: &[String]) -> String {
    let max = existing
        .iter()
        .filter_map(|id| id.strip_prefix('s')?.parse::<u64>().ok())
        .max()
        .unwrap_or(0);
    format!("s{}", max + 1)
}

fn render_context(ctx: &ChangeContext) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "Pull request: {}", ctx.pr_intent.title);
    let _ = writeln!(s, "{}", ctx.pr_intent.description);
    for issue in &ctx.resolved_issues {
        let _ = writeln!(s, "\nResolves {}: {}", issue.source_id, issue.title);
        let _ = writeln!(s, "{}", issue.description);
    }
    let _ = writeln!(s, "\nCommit messages:");
    for m in &ctx.code_change.commit_messages {
        let _ = writeln!(s, "- {m}");
    }
    let _ = writeln!(s, "\nChanged files and patches:");
    for f in &ctx.code_change.files {
        if f.binary {
            let _ = writeln!(s, "--- {} (binary) ---", f.path);
        } else {
            let _ = writeln!(s, "--- {} ---\n{}", f.path, f.patch);
        }
    }
    if !ctx.preceding.is_empty() {
        let _ = writeln!(s, "\nEarlier changes that touched the same lines:");
        for p in &ctx.preceding {
            let _ = writeln!(
                s,
                "{}. {} ({} overlapping lines): {}\n   {}",
                p.rank, p.intent.source_id, p.overlap_lines, p.intent.title,
                p.intent.description
            );
        }
    }
    s
}

fn render_scenarios(scenarios: &[TestScenario]) -> String {
    serde_json::to_string_pretty(scenarios).expect("scenarios serialize")
}

/// The PR identifier without its `pr:` source prefix, as used in run ids
/// and report ids.
pub fn bare_pr_id(ctx: &ChangeContext) -> String {
    ctx.pr_intent
        .source_id
        .strip_prefix("pr:")
        .unwrap_or(&ctx.pr_intent.source_id)
        .to_string()
}

#[derive(Deserialize)]
struct ScenarioReply {
    title: String,
    #[serde(default)]
    preconditions: Vec<String>,
    steps: Vec<ScenarioStep>,
    #[serde(default)]
    test_data: Vec<TestDataItem>,
}

#[derive(Deserialize)]
struct GenerationReply {
    change_impact_analysis: ImpactAnalysis,
    test_scenarios: Vec<ScenarioReply>,
}

/// Stage 1: change-impact analysis and initial scenarios.
pub fn generate_scenarios(
    ctx: &ChangeContext,
    llm: &LlmGateway,
    prompts: &PromptSet,
    budgets: &Budgets,
) -> Result<ScenarioBatch, ScenarioError> {
    let forbidden = forbidden_phrases(ctx);
    let prompt = prompts.impact_and_scenarios(
        &render_context(ctx),
        &budgets.max_scenarios_per_pr.to_string(),
    );
    let mut session = llm.open_session(Role::Generator)?;
    let reply: GenerationReply =
        ask_with_repair(llm, &mut session, ChatMessage::user(prompt), |text| {
            let value = extract_fenced_json(text)?;
            let parsed: GenerationReply =
                serde_json::from_value(value).map_err(|e| format!("missing or bad field: {e}"))?;
            if parsed.change_impact_analysis.intent_explanation.trim().is_empty() {
                return Err("intent_explanation must not be empty".into());
            }
            for b in &parsed.change_impact_analysis.affected_behaviors {
                check_end_user_text(b, &forbidden, "an affected behavior")?;
            }
            if parsed.test_scenarios.is_empty() {
                return Err("at least one test scenario is required".into());
            }
            for s in &parsed.test_scenarios {
                if s.steps.is_empty() {
                    return Err(format!("scenario {:?} has no steps", s.title));
                }
            }
            Ok(parsed)
        })?;

    let mut ids: Vec<String> = Vec::new();
    let mut scenarios = Vec::new();
    for r in reply.test_scenarios {
        let id = next_scenario_id(&ids);
        ids.push(id.clone());
        let s = TestScenario {
            scenario_id: id,
            title: r.title,
            stage: Stage::Generated,
            preconditions: r.preconditions,
            steps: r.steps,
            test_data: r.test_data,
            provenance: Vec::new(),
        };
        validate_scenario_text(&s, &forbidden).map_err(ScenarioError::LlmFormat)?;
        scenarios.push(s);
    }
    Ok(ScenarioBatch::new(
        bare_pr_id(ctx),
        reply.change_impact_analysis,
        scenarios,
        budgets,
    ))
}

#[derive(Deserialize)]
struct QueriesReply {
    queries: Vec<String>,
}

#[derive(Deserialize)]
struct EnrichedScenarioReply {
    scenario_id: String,
    title: String,
    #[serde(default)]
    preconditions: Vec<String>,
    steps: Vec<ScenarioStep>,
    #[serde(default)]
    test_data: Vec<TestDataItem>,
    #[serde(default)]
    provenance: Vec<String>,
}

#[derive(Deserialize)]
struct EnrichmentReply {
    test_scenarios: Vec<EnrichedScenarioReply>,
}

/// Knowledge-base access for enrichment: the index to search, its tuning,
/// and the hard recency cutoff every retrieved chunk must predate.
#[derive(Clone, Copy)]
pub struct Retrieval<'a> {
    pub index: &'a SkbIndex,
    pub cfg: &'a SkbConfig,
    pub cutoff: DateTime<Utc>,
}

/// Stage 2: event-sequence enrichment. The model proposes retrieval
/// queries, retrieval runs against the knowledge base under the PR-creation
/// cutoff, and the retrieved excerpts feed the enrichment prompt. Output
/// scenarios keep their ids; overgrown ones are replaced under fresh ids.
pub fn enrich_event_sequences(
    batch: &ScenarioBatch,
    ctx: &ChangeContext,
    retrieval: &Retrieval,
    llm: &LlmGateway,
    prompts: &PromptSet,
    budgets: &Budgets,
) -> Result<ScenarioBatch, ScenarioError> {
    let Retrieval { index, cfg: skb_cfg, cutoff } = *retrieval;
    if let Some(s) = batch.scenarios.iter().find(|s| s.stage != Stage::Generated) {
        return Err(ScenarioError::Precondition(format!(
            "scenario {} is at stage {:?}, expected generated",
            s.scenario_id, s.stage
        )));
    }
    let forbidden = forbidden_phrases(ctx);
    let mut session = llm.open_session(Role::Generator)?;

    let scenarios_text = render_scenarios(&batch.scenarios);
    let queries: QueriesReply = ask_with_repair(
        llm,
        &mut session,
        ChatMessage::user(
            prompts.retrieval_queries(&scenarios_text, &skb_cfg.max_queries.to_string()),
        ),
        |text| {
            let value = extract_fenced_json(text)?;
            serde_json::from_value(value).map_err(|e| format!("missing or bad field: {e}"))
        },
    )?;

    let mut retrieved: Vec<crate::skb::RetrievalResult> = Vec::new();
    for q in queries.queries.iter().take(skb_cfg.max_queries as usize) {
        let results = index.query(llm, q, cutoff, skb_cfg.top_k as usize)?;
        for r in results {
            // Anti-leakage check at the call site, independent of the
            // index's own filtering.
            assert!(
                r.chunk.created_at < cutoff,
                "retrieval leaked a chunk created at {} past cutoff {cutoff}",
                r.chunk.created_at
            );
            if !retrieved.iter().any(|x| x.chunk.chunk_id == r.chunk.chunk_id) {
                retrieved.push(r);
            }
        }
    }
    let known_chunk_ids: Vec<&str> = retrieved
        .iter()
        .map(|r| r.chunk.chunk_id.as_str())
        .collect();
    let chunks_text = if retrieved.is_empty() {
        "(no relevant historical excerpts found)".to_string()
    } else {
        retrieved
            .iter()
            .map(|r| format!("[{}]\n{}\n", r.chunk.chunk_id, r.chunk.text))
            .collect::<Vec<_>>()
            .join("\n")
    };

    let expected_ids: Vec<&str> = batch
        .scenarios
        .iter()
        .map(|s| s.scenario_id.as_str())
        .collect();
    let reply: EnrichmentReply = ask_with_repair(
        llm,
        &mut session,
        ChatMessage::user(prompts.event_enrichment(&scenarios_text, &chunks_text)),
        |text| {
            let value = extract_fenced_json(text)?;
            let parsed: EnrichmentReply =
                serde_json::from_value(value).map_err(|e| format!("missing or bad field: {e}"))?;
            let got: Vec<&str> = parsed
                .test_scenarios
                .iter()
                .map(|s| s.scenario_id.as_str())
                .collect();
            if got != expected_ids {
                return Err(format!(
                    "expected exactly the scenario ids {expected_ids:?} in order, got {got:?}"
                ));
            }
            for s in &parsed.test_scenarios {
                if s.steps.is_empty() {
                    return Err(format!("scenario {} has no steps", s.scenario_id));
                }
            }
            Ok(parsed)
        },
    )?;

    let mut ids: Vec<String> = batch
        .scenarios
        .iter()
        .map(|s| s.scenario_id.clone())
        .collect();
    let mut out = Vec::new();
    for r in reply.test_scenarios {
        let provenance: Vec<String> = r
            .provenance
            .iter()
            .filter(|id| known_chunk_ids.contains(&id.as_str()))
            .cloned()
            .collect();
        if provenance.len() != r.provenance.len() {
            log::warn!(
                "scenario {} cited unknown chunk ids; dropped them",
                r.scenario_id
            );
        }
        let enriched = TestScenario {
            scenario_id: r.scenario_id,
            title: r.title,
            stage: Stage::EventEnriched,
            preconditions: r.preconditions,
            steps: r.steps,
            test_data: r.test_data,
            provenance,
        };
        validate_scenario_text(&enriched, &forbidden).map_err(ScenarioError::LlmFormat)?;

        if enriched.steps.len() > MAX_STEPS_BEFORE_REPLACEMENT {
            let fresh_id = next_scenario_id(&ids);
            ids.push(fresh_id.clone());
            let replacement = request_replacement(
                llm,
                &mut session,
                prompts,
                ctx,
                &forbidden,
                &enriched.title,
                fresh_id,
            )?;
            out.push(replacement);
        } else {
            out.push(enriched);
        }
    }
    Ok(ScenarioBatch::new(
        batch.pr_id.clone(),
        batch.analysis.clone(),
        out,
        budgets,
    ))
}

fn request_replacement(
    llm: &LlmGateway,
    session: &mut crate::llm::Session,
    prompts: &PromptSet,
    ctx: &ChangeContext,
    forbidden: &[String],
    overgrown_title: &str,
    fresh_id: String,
) -> Result<TestScenario, ScenarioError> {
    let prompt = prompts.scenario_replacement(&render_context(ctx), overgrown_title);
    let r: ScenarioReply = ask_with_repair(llm, session, ChatMessage::user(prompt), |text| {
        let value = extract_fenced_json(text)?;
        let parsed: ScenarioReply =
            serde_json::from_value(value).map_err(|e| format!("missing or bad field: {e}"))?;
        if parsed.steps.is_empty() {
            return Err("replacement scenario has no steps".into());
        }
        Ok(parsed)
    })?;
    let s = TestScenario {
        scenario_id: fresh_id,
        title: r.title,
        stage: Stage::EventEnriched,
        preconditions: r.preconditions,
        steps: r.steps,
        test_data: r.test_data,
        provenance: Vec::new(),
    };
    validate_scenario_text(&s, forbidden).map_err(ScenarioError::LlmFormat)?;
    if s.steps.len() > MAX_STEPS_BEFORE_REPLACEMENT {
        log::warn!(
            "replacement scenario {} still has {} steps; accepting as-is",
            s.scenario_id,
            s.steps.len()
        );
    }
    Ok(s)
}

#[derive(Deserialize)]
struct DataScenarioReply {
    scenario_id: String,
    #[serde(default)]
    test_data: Vec<TestDataItem>,
}

#[derive(Deserialize)]
struct DataStageReply {
    test_scenarios: Vec<DataScenarioReply>,
}

/// Stage 3: test-data instantiation. Steps and preconditions pass through
/// unchanged; test_data is replaced by the model's concrete values.
pub fn enrich_test_data(
    batch: &ScenarioBatch,
    llm: &LlmGateway,
    prompts: &PromptSet,
    budgets: &Budgets,
) -> Result<ScenarioBatch, ScenarioError> {
    if let Some(s) = batch
        .scenarios
        .iter()
        .find(|s| s.stage != Stage::EventEnriched)
    {
        return Err(ScenarioError::Precondition(format!(
            "scenario {} is at stage {:?}, expected event_enriched",
            s.scenario_id, s.stage
        )));
    }
    let mut session = llm.open_session(Role::Generator)?;
    let expected_ids: Vec<&str> = batch
        .scenarios
        .iter()
        .map(|s| s.scenario_id.as_str())
        .collect();
    let reply: DataStageReply = ask_with_repair(
        llm,
        &mut session,
        ChatMessage::user(prompts.data_enrichment(&render_scenarios(&batch.scenarios))),
        |text| {
            let value = extract_fenced_json(text)?;
            let parsed: DataStageReply =
                serde_json::from_value(value).map_err(|e| format!("missing or bad field: {e}"))?;
            let got: Vec<&str> = parsed
                .test_scenarios
                .iter()
                .map(|s| s.scenario_id.as_str())
                .collect();
            if got != expected_ids {
                return Err(format!(
                    "expected exactly the scenario ids {expected_ids:?} in order, got {got:?}"
                ));
            }
            for s in &parsed.test_scenarios {
                for d in &s.test_data {
                    if d.concrete_value.trim().is_empty() {
                        return Err(format!(
                            "test data {:?} in scenario {} has no concrete_value",
                            d.name, s.scenario_id
                        ));
                    }
                }
            }
            Ok(parsed)
        },
    )?;

    let scenarios = batch
        .scenarios
        .iter()
        .zip(reply.test_scenarios)
        .map(|(s, r)| TestScenario {
            stage: Stage::DataEnriched,
            test_data: r.test_data,
            ..s.clone()
        })
        .collect();
    Ok(ScenarioBatch::new(
        batch.pr_id.clone(),
        batch.analysis.clone(),
        scenarios,
        budgets,
    ))
}
