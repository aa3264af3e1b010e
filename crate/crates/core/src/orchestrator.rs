//! Pipeline driver: runs ingest, generate, execute, diff, detect, filter,
//! and report for one pull request, persisting every stage's inputs and
//! outputs under `runs/<run_id>/<stage>/`.
//!
//! The run directory is the contract between stages: each stage reads only
//! earlier stages' files and writes only its own directory, a manifest
//! tracks per-stage status and timestamps, and re-invocation resumes from
//! the first stage that is not done. Stages that are done are never
//! re-executed and their files never rewritten unless forced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::bug_filter::{filter_reports, FilterError, FilterOutcome};
use crate::change_context::{fetch_change_context, ChangeContext, ChangeContextError};
use crate::clock::SharedClock;
use crate::config::{Config, RuntimeKind, TrackerKind};
use crate::detection::{detect_bugs, BugReport, DetectError, DetectionOutcome, StepDiff};
use crate::executor::{
    build_sut, run_scenario, BuildCache, CommandRuntime, ContainerRuntime, ExecError, ExecutorEnv,
    ExecutionTrace, LocalRuntime, XdoDriver,
};
use crate::llm::{LlmError, LlmGateway, MeterSnapshot, UsageMeter};
use crate::pixel_diff::{annotate, parse_diff};
use crate::prompts::PromptSet;
use crate::report::{emit_report, ReportInputs};
use crate::scenario::{
    enrich_event_sequences, enrich_test_data, generate_scenarios, Retrieval, ScenarioBatch,
    ScenarioError,
};
use crate::skb::{SkbError, SkbIndex};
use crate::tracker::{HttpTracker, IssueTrackerClient, MockTracker};
use crate::vcs::GitCli;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHANGE_CONTEXT_FILE: &str = "change_context.json";
pub const SCENARIOS_FILE: &str = "scenarios.json";
pub const DIFFS_FILE: &str = "diffs.json";
pub const CANDIDATES_FILE: &str = "candidates.json";
pub const FILTER_OUTCOME_FILE: &str = "outcome.json";

/// The pipeline stages in execution order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Ingest,
    Generate,
    Execute,
    Diff,
    Detect,
    Filter,
    Report,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 7] = [
        PipelineStage::Ingest,
        PipelineStage::Generate,
        PipelineStage::Execute,
        PipelineStage::Diff,
        PipelineStage::Detect,
        PipelineStage::Filter,
        PipelineStage::Report,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            PipelineStage::Ingest => "ingest",
            PipelineStage::Generate => "generate",
            PipelineStage::Execute => "execute",
            PipelineStage::Diff => "diff",
            PipelineStage::Detect => "detect",
            PipelineStage::Filter => "filter",
            PipelineStage::Report => "report",
        }
    }
}

impl std::fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimes {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

/// Persistent record of one run's progress, stored as `manifest.json` in
/// the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub pr_id: String,
    pub stage_status: BTreeMap<PipelineStage, StageStatus>,
    pub timestamps: BTreeMap<PipelineStage, StageTimes>,
    /// Usage counters as of the most recently completed stage; restored
    /// into the gateway on resume so totals survive interruption.
    pub meter_snapshot: MeterSnapshot,
    /// Stage output directories, relative to the run directory.
    pub artifact_paths: BTreeMap<PipelineStage, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<PipelineStage, String>,
}

impl RunManifest {
    pub fn new(pr_id: &str) -> Self {
        Self {
            run_id: run_id_for(pr_id),
            pr_id: pr_id.to_string(),
            stage_status: PipelineStage::ALL
                .iter()
                .map(|s| (*s, StageStatus::Pending))
                .collect(),
            timestamps: BTreeMap::new(),
            meter_snapshot: MeterSnapshot::new(),
            artifact_paths: BTreeMap::new(),
            errors: BTreeMap::new(),
        }
    }

    pub fn status(&self, stage: PipelineStage) -> StageStatus {
        self.stage_status
            .get(&stage)
            .copied()
            .unwrap_or(StageStatus::Pending)
    }

    /// The first stage that has not completed, in pipeline order.
    pub fn first_incomplete(&self) -> Option<PipelineStage> {
        PipelineStage::ALL
            .into_iter()
            .find(|s| self.status(*s) != StageStatus::Done)
    }

    pub fn save(&self, run_dir: &Path) -> std::io::Result<()> {
        let mut json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        json.push(b'\n');
        std::fs::write(run_dir.join(MANIFEST_FILE), json)
    }

    pub fn load(run_dir: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(run_dir.join(MANIFEST_FILE))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

pub fn run_id_for(pr_id: &str) -> String {
    format!("pr-{pr_id}")
}

/// A stage-internal failure, split by whether an LLM provider caused it
/// (which callers report with a distinct exit code).
#[derive(Debug)]
pub enum StageFailure {
    Provider(String),
    Other(String),
}

impl StageFailure {
    fn message(&self) -> &str {
        match self {
            StageFailure::Provider(m) | StageFailure::Other(m) => m,
        }
    }
}

impl From<LlmError> for StageFailure {
    fn from(e: LlmError) -> Self {
        StageFailure::Provider(e.to_string())
    }
}

impl From<ScenarioError> for StageFailure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Llm(inner) => StageFailure::Provider(inner.to_string()),
            ScenarioError::Skb(SkbError::Llm(inner)) => StageFailure::Provider(inner.to_string()),
            other => StageFailure::Other(other.to_string()),
        }
    }
}

impl From<SkbError> for StageFailure {
    fn from(e: SkbError) -> Self {
        match e {
            SkbError::Llm(inner) => StageFailure::Provider(inner.to_string()),
            other => StageFailure::Other(other.to_string()),
        }
    }
}

impl From<ExecError> for StageFailure {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::Llm(inner) => StageFailure::Provider(inner.to_string()),
            other => StageFailure::Other(other.to_string()),
        }
    }
}

impl From<DetectError> for StageFailure {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::Llm(inner) => StageFailure::Provider(inner.to_string()),
            other => StageFailure::Other(other.to_string()),
        }
    }
}

impl From<FilterError> for StageFailure {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Llm(inner) => StageFailure::Provider(inner.to_string()),
            other => StageFailure::Other(other.to_string()),
        }
    }
}

impl From<ChangeContextError> for StageFailure {
    fn from(e: ChangeContextError) -> Self {
        StageFailure::Other(e.to_string())
    }
}

impl From<crate::executor::RuntimeError> for StageFailure {
    fn from(e: crate::executor::RuntimeError) -> Self {
        StageFailure::Other(e.to_string())
    }
}

impl From<std::io::Error> for StageFailure {
    fn from(e: std::io::Error) -> Self {
        StageFailure::Other(e.to_string())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("run artifacts: {0}")]
    Artifacts(String),
    #[error("stage {stage} failed: {message}")]
    Stage {
        stage: PipelineStage,
        provider: bool,
        message: String,
    },
}

impl PipelineError {
    /// Process exit code for this failure: 2 configuration, 4 provider,
    /// 3 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { provider: true, .. } => 4,
            _ => 3,
        }
    }
}

/// Owns everything a run needs: configuration, the LLM gateway, prompt
/// templates, the container runtime, and the build cache.
pub struct Pipeline {
    cfg: Config,
    llm: LlmGateway,
    prompts: PromptSet,
    clock: SharedClock,
    runtime: Box<dyn ContainerRuntime>,
    cache: BuildCache,
}

impl Pipeline {
    pub fn new(cfg: Config, clock: SharedClock) -> Self {
        let llm = LlmGateway::new(&cfg, clock.clone());
        let prompts = PromptSet::new(cfg.paths.prompt_dir.clone());
        let runtime: Box<dyn ContainerRuntime> = match cfg.executor.runtime {
            RuntimeKind::Local => Box::new(LocalRuntime::new()),
            RuntimeKind::Command => Box::new(CommandRuntime::new(cfg.executor.runtime_command.clone())),
        };
        Self {
            cfg,
            llm,
            prompts,
            clock,
            runtime,
            cache: BuildCache::new(),
        }
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn gateway(&self) -> &LlmGateway {
        &self.llm
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn run_dir(&self, pr_id: &str) -> PathBuf {
        self.cfg.paths.runs_dir.join(run_id_for(pr_id))
    }

    /// Runs every stage in order, resuming from the first incomplete one.
    /// With `force`, the manifest is reset and everything re-executes.
    pub fn run(&mut self, pr_id: &str, force: bool) -> Result<RunManifest, PipelineError> {
        let (run_dir, mut manifest) = self.prepare(pr_id, force)?;
        for stage in PipelineStage::ALL {
            if manifest.status(stage) == StageStatus::Done {
                continue;
            }
            self.execute_stage(&mut manifest, &run_dir, stage)?;
        }
        Ok(manifest)
    }

    /// Runs one stage in isolation. Its predecessors must be done; a stage
    /// already done is only repeated with `force`.
    pub fn run_stage(
        &mut self,
        pr_id: &str,
        stage: PipelineStage,
        force: bool,
    ) -> Result<RunManifest, PipelineError> {
        let (run_dir, mut manifest) = self.prepare(pr_id, false)?;
        for earlier in PipelineStage::ALL.into_iter().take_while(|s| *s != stage) {
            if manifest.status(earlier) != StageStatus::Done {
                return Err(PipelineError::Stage {
                    stage,
                    provider: false,
                    message: format!("predecessor stage {earlier} is not done"),
                });
            }
        }
        if manifest.status(stage) == StageStatus::Done && !force {
            return Ok(manifest);
        }
        self.execute_stage(&mut manifest, &run_dir, stage)?;
        Ok(manifest)
    }

    fn prepare(&mut self, pr_id: &str, force: bool) -> Result<(PathBuf, RunManifest), PipelineError> {
        let run_dir = self.run_dir(pr_id);
        std::fs::create_dir_all(&run_dir)
            .map_err(|e| PipelineError::Artifacts(format!("{}: {e}", run_dir.display())))?;
        let manifest = if !force && run_dir.join(MANIFEST_FILE).exists() {
            RunManifest::load(&run_dir)
                .map_err(|e| PipelineError::Artifacts(format!("loading manifest: {e}")))?
        } else {
            RunManifest::new(pr_id)
        };
        self.llm
            .restore_meter(Arc::new(UsageMeter::from_snapshot(manifest.meter_snapshot.clone())));
        Ok((run_dir, manifest))
    }

    fn now(&self) -> String {
        self.clock
            .now()
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }

    fn execute_stage(
        &self,
        manifest: &mut RunManifest,
        run_dir: &Path,
        stage: PipelineStage,
    ) -> Result<(), PipelineError> {
        let save =
            |m: &RunManifest| -> Result<(), PipelineError> {
                m.save(run_dir)
                    .map_err(|e| PipelineError::Artifacts(format!("saving manifest: {e}")))
            };
        manifest.stage_status.insert(stage, StageStatus::Pending);
        manifest.timestamps.insert(
            stage,
            StageTimes {
                started_at: Some(self.now()),
                finished_at: None,
            },
        );
        manifest.errors.remove(&stage);
        save(manifest)?;

        // A failed or forced earlier attempt may have left partial output.
        let stage_dir = run_dir.join(stage.dir_name());
        if stage_dir.exists() {
            std::fs::remove_dir_all(&stage_dir)
                .map_err(|e| PipelineError::Artifacts(format!("{}: {e}", stage_dir.display())))?;
        }
        std::fs::create_dir_all(&stage_dir)
            .map_err(|e| PipelineError::Artifacts(format!("{}: {e}", stage_dir.display())))?;

        let result = match stage {
            PipelineStage::Ingest => self.stage_ingest(&manifest.pr_id, &stage_dir),
            PipelineStage::Generate => self.stage_generate(run_dir, &stage_dir),
            PipelineStage::Execute => self.stage_execute(run_dir, &stage_dir),
            PipelineStage::Diff => self.stage_diff(run_dir, &stage_dir),
            PipelineStage::Detect => self.stage_detect(run_dir, &stage_dir),
            PipelineStage::Filter => self.stage_filter(run_dir, &stage_dir),
            PipelineStage::Report => self.stage_report(manifest, run_dir, &stage_dir),
        };
        let times = manifest.timestamps.entry(stage).or_default();
        times.finished_at = Some(self.now());
        match result {
            Ok(()) => {
                manifest.stage_status.insert(stage, StageStatus::Done);
                manifest
                    .artifact_paths
                    .insert(stage, stage.dir_name().to_string());
                manifest.meter_snapshot = self.llm.meter().snapshot();
                save(manifest)?;
                Ok(())
            }
            Err(failure) => {
                manifest.stage_status.insert(stage, StageStatus::Failed);
                manifest
                    .errors
                    .insert(stage, failure.message().to_string());
                save(manifest)?;
                Err(PipelineError::Stage {
                    stage,
                    provider: matches!(failure, StageFailure::Provider(_)),
                    message: failure.message().to_string(),
                })
            }
        }
    }

    fn make_tracker(&self) -> Result<Box<dyn IssueTrackerClient>, StageFailure> {
        match self.cfg.sut.issue_tracker_kind {
            TrackerKind::Mock => {
                let dir = self.cfg.tracker.fixture_dir.clone().ok_or_else(|| {
                    StageFailure::Other(
                        "tracker.fixture_dir is required for the mock tracker".into(),
                    )
                })?;
                Ok(Box::new(MockTracker::new(dir)))
            }
            TrackerKind::Github | TrackerKind::Bugzilla => {
                let base = self.cfg.tracker.api_base.clone().ok_or_else(|| {
                    StageFailure::Other("tracker.api_base is required for HTTP trackers".into())
                })?;
                Ok(Box::new(HttpTracker::new(base)))
            }
        }
    }

    fn stage_ingest(&self, pr_id: &str, stage_dir: &Path) -> Result<(), StageFailure> {
        let tracker = self.make_tracker()?;
        let repo = GitCli::new(&self.cfg.sut.repo_location);
        let ctx = fetch_change_context(
            pr_id,
            tracker.as_ref(),
            &repo,
            &self.cfg.tracker.commit_ref_pattern,
            self.cfg.llm.max_attempts,
        )?;
        write_json(&stage_dir.join(CHANGE_CONTEXT_FILE), &ctx)
    }

    fn load_context(&self, run_dir: &Path) -> Result<ChangeContext, StageFailure> {
        read_json(
            &run_dir
                .join(PipelineStage::Ingest.dir_name())
                .join(CHANGE_CONTEXT_FILE),
        )
    }

    fn load_batch(&self, run_dir: &Path) -> Result<ScenarioBatch, StageFailure> {
        read_json(
            &run_dir
                .join(PipelineStage::Generate.dir_name())
                .join(SCENARIOS_FILE),
        )
    }

    fn load_index(&self) -> Result<SkbIndex, StageFailure> {
        let path = &self.cfg.paths.skb_index;
        if path.exists() {
            Ok(SkbIndex::load(path)?)
        } else {
            // No knowledge base yet: enrichment proceeds without excerpts.
            let (index, _) = SkbIndex::build(&[], &self.llm, &self.cfg.skb, 0)?;
            Ok(index)
        }
    }

    fn stage_generate(&self, run_dir: &Path, stage_dir: &Path) -> Result<(), StageFailure> {
        let ctx = self.load_context(run_dir)?;
        let batch = generate_scenarios(&ctx, &self.llm, &self.prompts, &self.cfg.budgets)?;
        let index = self.load_index()?;
        let retrieval = Retrieval {
            index: &index,
            cfg: &self.cfg.skb,
            cutoff: ctx.pr_intent.created_at,
        };
        let batch =
            enrich_event_sequences(&batch, &ctx, &retrieval, &self.llm, &self.prompts, &self.cfg.budgets)?;
        let batch = enrich_test_data(&batch, &self.llm, &self.prompts, &self.cfg.budgets)?;
        write_json(&stage_dir.join(SCENARIOS_FILE), &batch)
    }

    fn stage_execute(&self, run_dir: &Path, stage_dir: &Path) -> Result<(), StageFailure> {
        let ctx = self.load_context(run_dir)?;
        let batch = self.load_batch(run_dir)?;
        let runtime = self.runtime.as_ref();
        let pre = build_sut(runtime, &self.cache, &self.cfg.sut, &ctx.pre_revision)?;
        let post = build_sut(runtime, &self.cache, &self.cfg.sut, &ctx.post_revision)?;
        let driver = XdoDriver;
        let results = parallel_map(
            &batch.scenarios,
            self.cfg.executor.workers as usize,
            |scenario| {
                let env = ExecutorEnv {
                    llm: &self.llm,
                    prompts: &self.prompts,
                    runtime,
                    driver: &driver,
                    sut: &self.cfg.sut,
                    exec: &self.cfg.executor,
                    budgets: &self.cfg.budgets,
                };
                run_scenario(
                    &env,
                    scenario,
                    &pre,
                    &post,
                    &stage_dir.join(&scenario.scenario_id),
                )
                .map(drop)
                .map_err(StageFailure::from)
            },
        );
        for result in results {
            result?;
        }
        Ok(())
    }

    fn stage_diff(&self, run_dir: &Path, stage_dir: &Path) -> Result<(), StageFailure> {
        let batch = self.load_batch(run_dir)?;
        let threshold = self.cfg.budgets.pixel_diff_threshold.min(255) as u8;
        let radius = self.cfg.diff.dilation_radius;
        for scenario in &batch.scenarios {
            let sid = &scenario.scenario_id;
            let exec_dir = run_dir.join(PipelineStage::Execute.dir_name()).join(sid);
            let trace = ExecutionTrace::load(&exec_dir)?;
            let out_dir = stage_dir.join(sid);
            std::fs::create_dir_all(&out_dir)?;
            let mut diffs = Vec::new();
            for step in &trace.steps {
                let Some(pre_name) = &step.pre_screenshot else {
                    continue;
                };
                let pre = load_png(&exec_dir.join(pre_name))?;
                let post = load_png(&exec_dir.join(&step.post_screenshot))?;
                let info = parse_diff(step.step_index, &pre, &post, threshold, radius);
                let annotated_pre = out_dir.join(format!("step_{}_pre_annotated.png", step.step_index));
                let annotated_post =
                    out_dir.join(format!("step_{}_post_annotated.png", step.step_index));
                save_png(&annotate(&pre, &info.regions), &annotated_pre)?;
                save_png(&annotate(&post, &info.regions), &annotated_post)?;
                diffs.push(StepDiff {
                    info,
                    annotated_pre,
                    annotated_post,
                });
            }
            let portable: Vec<StepDiff> = diffs
                .iter()
                .map(|d| StepDiff {
                    info: d.info.clone(),
                    annotated_pre: relative_to(&d.annotated_pre, run_dir),
                    annotated_post: relative_to(&d.annotated_post, run_dir),
                })
                .collect();
            write_json(&out_dir.join(DIFFS_FILE), &portable)?;
        }
        Ok(())
    }

    fn load_diffs(&self, run_dir: &Path, scenario_id: &str) -> Result<Vec<StepDiff>, StageFailure> {
        let path = run_dir
            .join(PipelineStage::Diff.dir_name())
            .join(scenario_id)
            .join(DIFFS_FILE);
        let portable: Vec<StepDiff> = read_json(&path)?;
        Ok(portable
            .into_iter()
            .map(|d| StepDiff {
                annotated_pre: run_dir.join(&d.annotated_pre),
                annotated_post: run_dir.join(&d.annotated_post),
                ..d
            })
            .collect())
    }

    fn stage_detect(&self, run_dir: &Path, stage_dir: &Path) -> Result<(), StageFailure> {
        let ctx = self.load_context(run_dir)?;
        let batch = self.load_batch(run_dir)?;
        let outcomes = parallel_map(
            &batch.scenarios,
            self.cfg.executor.workers as usize,
            |scenario| -> Result<DetectionOutcome, StageFailure> {
                let sid = &scenario.scenario_id;
                let trace =
                    ExecutionTrace::load(&run_dir.join(PipelineStage::Execute.dir_name()).join(sid))?;
                let diffs = self.load_diffs(run_dir, sid)?;
                Ok(detect_bugs(
                    &trace,
                    &diffs,
                    &ctx,
                    &batch.analysis,
                    &self.llm,
                    &self.prompts,
                )?)
            },
        );
        let mut candidates: Vec<BugReport> = Vec::new();
        for (scenario, outcome) in batch.scenarios.iter().zip(outcomes) {
            let outcome = outcome?;
            write_json(
                &stage_dir.join(format!("{}.json", scenario.scenario_id)),
                &outcome,
            )?;
            candidates.extend(outcome.candidates);
        }
        write_json(&stage_dir.join(CANDIDATES_FILE), &candidates)
    }

    fn stage_filter(&self, run_dir: &Path, stage_dir: &Path) -> Result<(), StageFailure> {
        let batch = self.load_batch(run_dir)?;
        let candidates: Vec<BugReport> = read_json(
            &run_dir
                .join(PipelineStage::Detect.dir_name())
                .join(CANDIDATES_FILE),
        )?;
        let mut evidence = BTreeMap::new();
        for scenario in &batch.scenarios {
            evidence.insert(
                scenario.scenario_id.clone(),
                self.load_diffs(run_dir, &scenario.scenario_id)?,
            );
        }
        let outcome = filter_reports(&candidates, &evidence, &self.llm, &self.prompts)?;
        write_json(&stage_dir.join(FILTER_OUTCOME_FILE), &outcome)
    }

    fn stage_report(
        &self,
        manifest: &RunManifest,
        run_dir: &Path,
        stage_dir: &Path,
    ) -> Result<(), StageFailure> {
        let batch = self.load_batch(run_dir)?;
        let outcome: FilterOutcome = read_json(
            &run_dir
                .join(PipelineStage::Filter.dir_name())
                .join(FILTER_OUTCOME_FILE),
        )?;
        let mut flags = Vec::new();
        let mut evidence = BTreeMap::new();
        for scenario in &batch.scenarios {
            let sid = &scenario.scenario_id;
            let detection: DetectionOutcome = read_json(
                &run_dir
                    .join(PipelineStage::Detect.dir_name())
                    .join(format!("{sid}.json")),
            )?;
            for flag in detection.flags {
                flags.push(format!("scenario {sid}: {flag}"));
            }
            evidence.insert(sid.clone(), self.load_diffs(run_dir, sid)?);
        }
        flags.extend(outcome.flags.iter().cloned());
        let meter = self.llm.meter().snapshot();
        let generated_at = self.now();
        emit_report(
            &ReportInputs {
                run_id: &manifest.run_id,
                pr_id: &manifest.pr_id,
                generated_at: &generated_at,
                reports: &outcome.reports,
                evidence: &evidence,
                flags: &flags,
                meter: &meter,
                run_dir,
            },
            stage_dir,
        )?;
        Ok(())
    }
}

/// Applies `f` to every item on a bounded worker pool, assigning item `i`
/// to worker `i % workers`, and returns the results in input order.
fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let worker_count = workers.clamp(1, items.len().max(1));
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for worker in 0..worker_count {
            let f = &f;
            let slots = &slots;
            scope.spawn(move || {
                let mut i = worker;
                while i < items.len() {
                    *slots[i].lock().expect("result slot") = Some(f(&items[i]));
                    i += worker_count;
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("result slot")
                .expect("worker filled its slots")
        })
        .collect()
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).unwrap_or(path).to_path_buf()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StageFailure> {
    let mut json = serde_json::to_vec_pretty(value).expect("artifact serializes");
    json.push(b'\n');
    std::fs::write(path, json)
        .map_err(|e| StageFailure::Other(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StageFailure> {
    let bytes = std::fs::read(path)
        .map_err(|e| StageFailure::Other(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| StageFailure::Other(format!("{}: {e}", path.display())))
}

fn load_png(path: &Path) -> Result<image::RgbImage, StageFailure> {
    Ok(image::open(path)
        .map_err(|e| StageFailure::Other(format!("{}: {e}", path.display())))?
        .to_rgb8())
}

fn save_png(img: &image::RgbImage, path: &Path) -> Result<(), StageFailure> {
    img.save(path)
        .map_err(|e| StageFailure::Other(format!("{}: {e}", path.display())))
}
