//! Scenario execution: an LLM-driven play phase against the changed build,
//! then a verbatim replay of the recorded instruction stream against the
//! baseline build, producing a paired screenshot trace.
//!
//! The play dialogue sends the scenario plus a screenshot, receives a batch
//! of UI instructions (or completion), executes them, and repeats. Every
//! message sent to the model costs one turn from a hard per-scenario budget;
//! executed instructions draw from a second budget. Replay never consults
//! the model: it reloads the instructions persisted in `trace.json`, checks
//! byte equality of their canonical serialization, and drives them against
//! a fresh session of the baseline build.

pub mod driver;
pub mod instruction;
pub mod runtime;

use std::path::Path;
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use driver::{sleep_seconds, InputDriver, XdoDriver};
pub use instruction::{
    canonical_stream, InstructionKind, Position, ScrollDirection, UiInstruction,
};
pub use runtime::{
    build_sut, BuildArtifact, BuildCache, CommandRuntime, ContainerRuntime, ContainerSession,
    ExecOutput, LocalRuntime, RuntimeError, SessionState,
};

use crate::config::{Budgets, ExecutorConfig, Geometry, SutConfig};
use crate::llm::{
    extract_fenced_json, repair_message, ChatMessage, LlmError, LlmGateway, Role, Session,
};
use crate::prompts::PromptSet;
use crate::scenario::TestScenario;

pub const TRACE_FILE: &str = "trace.json";

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("unusable model response after repair attempt: {0}")]
    Format(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace integrity: {0}")]
    Trace(String),
}

/// Why a scenario's execution stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    LlmBudgetExhausted,
    UiBudgetExhausted,
    ExecutionError,
}

/// One executed instruction with its screenshots. `post_screenshot` is
/// captured during play on the changed build; `pre_screenshot` is filled in
/// by replay on the baseline build and stays absent for steps replay never
/// reached. Paths are file names relative to the trace directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: u32,
    pub instruction: UiInstruction,
    pub post_screenshot: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_screenshot: Option<String>,
    /// 1-based index of the model turn whose batch produced this step.
    pub llm_turn_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildIds {
    pub pre: String,
    pub post: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub scenario_id: String,
    pub steps: Vec<StepRecord>,
    pub termination: Termination,
    pub llm_turns_used: u32,
    pub build_ids: BuildIds,
    /// Step index where replay broke off, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_failure_at: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExecutionTrace {
    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let mut json = serde_json::to_vec_pretty(self).expect("trace serializes");
        json.push(b'\n');
        std::fs::write(dir.join(TRACE_FILE), json)
    }

    pub fn load(dir: &Path) -> Result<Self, ExecError> {
        let bytes = std::fs::read(dir.join(TRACE_FILE))?;
        serde_json::from_slice(&bytes).map_err(|e| ExecError::Trace(e.to_string()))
    }

    pub fn instructions(&self) -> Vec<UiInstruction> {
        self.steps.iter().map(|s| s.instruction.clone()).collect()
    }
}

/// Counts model turns against a hard ceiling. Every send costs one turn,
/// including repair reprompts; once the ceiling is reached no further send
/// happens.
#[derive(Debug)]
pub struct TurnBudget {
    max: u32,
    used: u32,
}

impl TurnBudget {
    pub fn new(max: u32) -> Self {
        Self { max, used: 0 }
    }

    fn try_take(&mut self) -> bool {
        if self.used < self.max {
            self.used += 1;
            true
        } else {
            false
        }
    }

    pub fn used(&self) -> u32 {
        self.used
    }
}

#[derive(Debug, PartialEq)]
pub enum TranslateOutcome {
    Batch(Vec<UiInstruction>),
    Complete,
    TurnsExhausted,
}

/// One translation exchange: sends `message` (if budget remains), parses
/// the reply into an instruction batch or a completion marker, and on a
/// malformed reply spends one more turn on a single repair reprompt before
/// giving up with [`ExecError::Format`].
pub fn translate_next(
    llm: &LlmGateway,
    session: &mut Session,
    message: ChatMessage,
    geometry: &Geometry,
    budget: &mut TurnBudget,
) -> Result<TranslateOutcome, ExecError> {
    if !budget.try_take() {
        return Ok(TranslateOutcome::TurnsExhausted);
    }
    let reply = llm.send(session, message)?;
    match parse_executor_reply(&reply.text(), geometry) {
        Ok(outcome) => Ok(outcome),
        Err(problem) => {
            if !budget.try_take() {
                return Ok(TranslateOutcome::TurnsExhausted);
            }
            let reply = llm.send(session, ChatMessage::user(repair_message(&problem)))?;
            parse_executor_reply(&reply.text(), geometry).map_err(ExecError::Format)
        }
    }
}

fn parse_executor_reply(text: &str, geometry: &Geometry) -> Result<TranslateOutcome, String> {
    let value = extract_fenced_json(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| "reply is not a JSON object".to_string())?;
    if obj.get("scenario_complete").and_then(|v| v.as_bool()) == Some(true) {
        return Ok(TranslateOutcome::Complete);
    }
    let raw = obj.get("instructions").ok_or_else(|| {
        "expected \"instructions\" or \"scenario_complete\": true".to_string()
    })?;
    let batch: Vec<UiInstruction> =
        serde_json::from_value(raw.clone()).map_err(|e| format!("bad instruction list: {e}"))?;
    if batch.is_empty() {
        return Err("instruction batch is empty".into());
    }
    for ins in &batch {
        ins.validate(geometry)
            .map_err(|problem| format!("invalid instruction {}: {problem}", ins.canonical_json()))?;
    }
    Ok(TranslateOutcome::Batch(batch))
}

/// Everything scenario execution needs, borrowed from the caller.
pub struct ExecutorEnv<'a> {
    pub llm: &'a LlmGateway,
    pub prompts: &'a PromptSet,
    pub runtime: &'a dyn ContainerRuntime,
    pub driver: &'a dyn InputDriver,
    pub sut: &'a SutConfig,
    pub exec: &'a ExecutorConfig,
    pub budgets: &'a Budgets,
}

impl ExecutorEnv<'_> {
    fn settle(&self) {
        let ms = (self.exec.settle_ms as f64 * self.exec.wait_scale).round() as u64;
        if ms > 0 {
            std::thread::sleep(Duration::from_millis(ms));
        }
    }

    /// Runs one instruction: injects its commands (retrying a failed
    /// command once), waits for the UI to settle, and captures the result.
    fn execute_instruction(
        &self,
        session: &ContainerSession,
        instruction: &UiInstruction,
    ) -> Result<RgbImage, String> {
        for argv in self.driver.commands(instruction, self.exec.wait_scale) {
            if let Err(first) = self.runtime.exec_in_session(session, &argv) {
                if let Err(second) = self.runtime.exec_in_session(session, &argv) {
                    return Err(format!(
                        "command {argv:?} failed twice: {first}; retry: {second}"
                    ));
                }
            }
        }
        self.settle();
        self.runtime
            .capture_screenshot(session)
            .map_err(|e| format!("screenshot: {e}"))
    }
}

fn save_png(img: &RgbImage, path: &Path) -> std::io::Result<()> {
    img.save(path)
        .map_err(|e| std::io::Error::other(format!("writing {}: {e}", path.display())))
}

/// Plays `scenario` against the post build, persists the trace, then
/// replays the identical instruction stream against the pre build. All
/// artifacts land in `out_dir`: `trace.json`, `initial_post.png`, and
/// `step_<i>_{post,pre}.png` per step.
pub fn run_scenario(
    env: &ExecutorEnv,
    scenario: &TestScenario,
    pre: &BuildArtifact,
    post: &BuildArtifact,
    out_dir: &Path,
) -> Result<ExecutionTrace, ExecError> {
    std::fs::create_dir_all(out_dir)?;
    let geometry = env.sut.display_geometry;
    let mut budget = TurnBudget::new(env.budgets.max_llm_turns_per_scenario);
    let mut session = env
        .llm
        .open_named_session(Role::Executor, &format!("exec-{}", scenario.scenario_id))?;

    let mut post_session = env.runtime.start_session(
        &post.build_id,
        &post.revision,
        env.sut,
        &format!("{}-post", scenario.scenario_id),
    )?;
    let play = play_phase(
        env,
        scenario,
        &post_session,
        &mut session,
        &mut budget,
        &geometry,
        out_dir,
    );
    let teardown = env.runtime.teardown(&mut post_session);
    let (steps, termination, error) = play?;
    teardown?;

    let trace = ExecutionTrace {
        scenario_id: scenario.scenario_id.clone(),
        steps,
        termination,
        llm_turns_used: budget.used(),
        build_ids: BuildIds {
            pre: pre.build_id.clone(),
            post: post.build_id.clone(),
        },
        replay_failure_at: None,
        error,
    };
    trace.save(out_dir)?;
    if trace.steps.is_empty() {
        return Ok(trace);
    }

    // Replay works exclusively from the persisted trace so that what it
    // executes is provably what was recorded.
    let mut replayed = ExecutionTrace::load(out_dir)?;
    let recorded = canonical_stream(&trace.instructions());
    let reloaded = canonical_stream(&replayed.instructions());
    if recorded != reloaded {
        return Err(ExecError::Trace(
            "persisted instruction stream differs from the one played".into(),
        ));
    }

    let mut pre_session = env.runtime.start_session(
        &pre.build_id,
        &pre.revision,
        env.sut,
        &format!("{}-pre", scenario.scenario_id),
    )?;
    for i in 0..replayed.steps.len() {
        let instruction = replayed.steps[i].instruction.clone();
        match env.execute_instruction(&pre_session, &instruction) {
            Ok(img) => {
                let name = format!("step_{i}_pre.png");
                if let Err(e) = save_png(&img, &out_dir.join(&name)) {
                    let _ = env.runtime.teardown(&mut pre_session);
                    return Err(e.into());
                }
                replayed.steps[i].pre_screenshot = Some(name);
            }
            Err(detail) => {
                replayed.replay_failure_at = Some(replayed.steps[i].step_index);
                if replayed.error.is_none() {
                    replayed.error = Some(format!("replay: {detail}"));
                }
                break;
            }
        }
    }
    env.runtime.teardown(&mut pre_session)?;
    replayed.save(out_dir)?;
    Ok(replayed)
}

type PlayResult = Result<(Vec<StepRecord>, Termination, Option<String>), ExecError>;

fn play_phase(
    env: &ExecutorEnv,
    scenario: &TestScenario,
    post_session: &ContainerSession,
    session: &mut Session,
    budget: &mut TurnBudget,
    geometry: &Geometry,
    out_dir: &Path,
) -> PlayResult {
    let initial = env
        .runtime
        .capture_screenshot(post_session)
        .map_err(ExecError::Runtime)?;
    let initial_name = "initial_post.png";
    save_png(&initial, &out_dir.join(initial_name))?;

    let scenario_json =
        serde_json::to_string_pretty(scenario).expect("scenario serializes");
    let opening = env.prompts.executor_play(
        &scenario_json,
        &geometry.width.to_string(),
        &geometry.height.to_string(),
    );
    let mut next_message =
        ChatMessage::user_with_images(opening, &[out_dir.join(initial_name)])?;

    let mut steps: Vec<StepRecord> = Vec::new();
    loop {
        match translate_next(env.llm, session, next_message, geometry, budget) {
            Ok(TranslateOutcome::TurnsExhausted) => {
                return Ok((steps, Termination::LlmBudgetExhausted, None));
            }
            Ok(TranslateOutcome::Complete) => {
                return Ok((steps, Termination::Completed, None));
            }
            Ok(TranslateOutcome::Batch(batch)) => {
                let turn_index = budget.used();
                for instruction in batch {
                    if steps.len() as u32 >= env.budgets.max_ui_instructions_per_scenario {
                        return Ok((steps, Termination::UiBudgetExhausted, None));
                    }
                    let idx = steps.len() as u32;
                    match env.execute_instruction(post_session, &instruction) {
                        Ok(img) => {
                            let name = format!("step_{idx}_post.png");
                            save_png(&img, &out_dir.join(&name))?;
                            steps.push(StepRecord {
                                step_index: idx,
                                instruction,
                                post_screenshot: name,
                                pre_screenshot: None,
                                llm_turn_index: turn_index,
                            });
                        }
                        Err(detail) => {
                            return Ok((steps, Termination::ExecutionError, Some(detail)));
                        }
                    }
                }
                let last = steps.last().expect("batch contained an instruction");
                next_message = ChatMessage::user_with_images(
                    env.prompts.executor_continue(),
                    &[out_dir.join(&last.post_screenshot)],
                )?;
            }
            Err(ExecError::Format(problem)) => {
                return Ok((steps, Termination::ExecutionError, Some(problem)));
            }
            Err(other) => return Err(other),
        }
    }
}
