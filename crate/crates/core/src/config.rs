//! Runtime configuration: one TOML file per system under test.
//!
//! [`load_config`] parses the file, layers `RIPPLE_<SECTION>_<KEY>`
//! environment overrides on top, applies defaults, resolves relative paths
//! against the config file's directory, and validates every invariant. The
//! resulting [`Config`] is immutable and shared read-only across the
//! pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "RIPPLE_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config value for `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("environment override {var} does not match any config key")]
    UnknownOverride { var: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: u32,
    pub height: u32,
}

impl Geometry {
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as u64) < self.width as u64 && (y as u64) < self.height as u64
    }
}

impl std::fmt::Display for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackerKind {
    Github,
    Bugzilla,
    Mock,
}

/// The system under test: where it lives, how to build and launch it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SutConfig {
    pub name: String,
    /// Local path or URL of the SUT repository clone.
    pub repo_location: String,
    /// Base container image with the build toolchain preinstalled.
    pub container_image_ref: String,
    /// Shell template; `{revision}` (required, exactly once) and `{repo}`
    /// are substituted before execution.
    pub build_command: String,
    pub launch_command: String,
    pub display_geometry: Geometry,
    pub issue_tracker_kind: TrackerKind,
}

impl Default for SutConfig {
    fn default() -> Self {
        Self {
            name: String::new(),
            repo_location: String::new(),
            container_image_ref: String::new(),
            build_command: String::new(),
            launch_command: String::new(),
            display_geometry: Geometry {
                width: 1280,
                height: 800,
            },
            issue_tracker_kind: TrackerKind::Mock,
        }
    }
}

/// Hard ceilings on scenario generation and execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budgets {
    pub max_llm_turns_per_scenario: u32,
    pub max_ui_instructions_per_scenario: u32,
    pub max_scenarios_per_pr: u32,
    pub pixel_diff_threshold: u32,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            max_llm_turns_per_scenario: 20,
            max_ui_instructions_per_scenario: 35,
            max_scenarios_per_pr: 7,
            pixel_diff_threshold: 30,
        }
    }
}

/// One LLM role binding: which model serves it and where.
///
/// A `model` of the form `fake:<script-path>` routes the role to the
/// deterministic scripted provider instead of an HTTP endpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelRole {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key. Secrets are
    /// never written into config files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl ModelRole {
    fn fake(script: &str) -> Self {
        Self {
            model: format!("fake:{script}"),
            endpoint: None,
            api_key_env: None,
        }
    }

    /// Script path when this role is bound to the scripted fake provider.
    pub fn fake_script(&self) -> Option<&Path> {
        self.model.strip_prefix("fake:").map(Path::new)
    }
}

/// Model bindings for every pipeline role plus the embedding endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelRoles {
    pub generator: ModelRole,
    pub executor: ModelRole,
    pub detector: ModelRole,
    pub filter: ModelRole,
    pub classifier: ModelRole,
    pub embedding: ModelRole,
    /// Embedding vector dimension requested from the provider.
    pub embedding_dim: u32,
}

impl Default for ModelRoles {
    fn default() -> Self {
        Self {
            generator: ModelRole::fake("scripts/generator.script"),
            executor: ModelRole::fake("scripts/executor.script"),
            detector: ModelRole::fake("scripts/detector.script"),
            filter: ModelRole::fake("scripts/filter.script"),
            classifier: ModelRole::fake("scripts/classifier.script"),
            embedding: ModelRole::fake("scripts/embedding.script"),
            embedding_dim: 64,
        }
    }
}

/// Scenario knowledge base construction and retrieval parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkbConfig {
    pub chunk_tokens: u32,
    pub chunk_overlap: u32,
    /// Chunks returned per query.
    pub top_k: u32,
    /// Retrieval queries allowed per scenario batch.
    pub max_queries: u32,
    /// A report is rejected as log output when more than this fraction of
    /// its lines carry timestamps.
    pub timestamp_line_ratio: f64,
    /// Reports whose title or body contains any of these are rejected.
    pub stop_keywords: Vec<String>,
}

impl Default for SkbConfig {
    fn default() -> Self {
        Self {
            chunk_tokens: 512,
            chunk_overlap: 64,
            top_k: 8,
            max_queries: 5,
            timestamp_line_ratio: 0.30,
            stop_keywords: vec!["intermittent".into(), "flaky".into()],
        }
    }
}

/// Screenshot comparison parameters. The pixel threshold itself lives in
/// [`Budgets::pixel_diff_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffConfig {
    pub dilation_radius: u32,
}

impl Default for DiffConfig {
    fn default() -> Self {
        Self { dilation_radius: 3 }
    }
}

/// Per-model price card in integer micro-dollars, keeping cost arithmetic
/// exact and platform-independent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelPrice {
    pub input_per_mtok_micros: u64,
    pub output_per_mtok_micros: u64,
    pub per_image_micros: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Directory of fixture records for the mock tracker.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture_dir: Option<PathBuf>,
    /// Base URL for HTTP trackers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_base: Option<String>,
    /// Fallback pattern extracting issue ids from commit messages when the
    /// tracker exposes no cross-references.
    pub commit_ref_pattern: String,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            fixture_dir: None,
            api_base: None,
            commit_ref_pattern: r"#(\d+)".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuntimeKind {
    /// In-process mock GUI sessions; no container engine required.
    Local,
    /// Shell out to a container engine executable.
    Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecutorConfig {
    pub runtime: RuntimeKind,
    /// Container engine executable for the `command` runtime.
    pub runtime_command: String,
    /// Delay between injecting an action and capturing the screenshot.
    pub settle_ms: u64,
    /// Multiplier applied to `wait` instructions and settle delays; fixtures
    /// set 0.0 to run at full speed.
    pub wait_scale: f64,
    /// Concurrent scenario executions.
    pub workers: u32,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            runtime: RuntimeKind::Local,
            runtime_command: "docker".into(),
            settle_ms: 800,
            wait_scale: 1.0,
            workers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    /// Provider attempts per request (1 = no retry).
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    /// Write raw request/response records under the run directory.
    pub audit_log: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 200,
            audit_log: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Parent directory for per-run artifact trees.
    pub runs_dir: PathBuf,
    /// Scenario knowledge base index file.
    pub skb_index: PathBuf,
    /// Override directory for prompt templates; built-in templates are used
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            runs_dir: PathBuf::from("runs"),
            skb_index: PathBuf::from("skb.index"),
            prompt_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub sut: SutConfig,
    pub budgets: Budgets,
    pub models: ModelRoles,
    pub skb: SkbConfig,
    pub diff: DiffConfig,
    /// Price table keyed by model identifier; unlisted models cost zero.
    pub pricing: BTreeMap<String, ModelPrice>,
    pub tracker: TrackerConfig,
    pub executor: ExecutorConfig,
    pub llm: LlmConfig,
    pub paths: PathsConfig,
}

/// Loads, overrides, resolves, and validates a config file.
pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let overrides: Vec<(String, String)> = std::env::vars()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    load_config_with_env(path, &overrides)
}

/// [`load_config`] with an explicit override list, so tests need not touch
/// process-global environment state.
pub fn load_config_with_env(
    path: &Path,
    overrides: &[(String, String)],
) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file_table: toml::Table = text.parse().map_err(|e| ConfigError::Parse(format!("{e}")))?;

    // Layer the file over a fully-defaulted table so that environment
    // overrides can target keys the file omits.
    let mut table = to_table(&Config::default());
    merge_into(&mut table, file_table)?;

    for (var, value) in overrides {
        let key_path = &var[ENV_PREFIX.len()..];
        let segments: Vec<&str> = key_path.split('_').filter(|s| !s.is_empty()).collect();
        if segments.is_empty() || !apply_override(&mut table, &segments, value) {
            return Err(ConfigError::UnknownOverride { var: var.clone() });
        }
    }

    let mut cfg: Config = toml::Value::Table(table)
        .try_into()
        .map_err(|e| ConfigError::Parse(format!("{e}")))?;

    let base = path.parent().unwrap_or(Path::new("."));
    let base = base
        .canonicalize()
        .map_err(|source| ConfigError::Io {
            path: base.to_path_buf(),
            source,
        })?;
    resolve_paths(&mut cfg, &base);
    validate(&cfg)?;
    Ok(cfg)
}

fn to_table(cfg: &Config) -> toml::Table {
    // A defaulted Config always serializes: it contains no non-serializable
    // values and all None fields are skipped.
    toml::Table::try_from(cfg).expect("default config serializes")
}

/// Deep-merges `incoming` over `base`. Tables merge recursively; any other
/// value replaces. Unknown sections or keys are rejected here so typos fail
/// fast with the offending name.
fn merge_into(base: &mut toml::Table, incoming: toml::Table) -> Result<(), ConfigError> {
    for (key, value) in incoming {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => {
                // Map-valued sections (pricing) accept arbitrary keys.
                if key == "pricing" {
                    for (model, price) in src {
                        dst.insert(model, price);
                    }
                } else {
                    merge_into(dst, src)?;
                }
            }
            (Some(slot), v) => *slot = v,
            (None, v) => {
                // Optional fields (endpoint, fixture_dir, prompt_dir ...) are
                // absent from the default table; accept them as-is.
                base.insert(key, v);
            }
        }
    }
    Ok(())
}

/// Walks `segments` into `table`, matching the longest case-insensitive
/// underscore-joined prefix against existing keys at each level, and sets the
/// leaf from `raw` coerced to the existing value's type.
fn apply_override(table: &mut toml::Table, segments: &[&str], raw: &str) -> bool {
    for take in (1..=segments.len()).rev() {
        let joined = segments[..take].join("_");
        let Some(key) = table
            .keys()
            .find(|k| k.eq_ignore_ascii_case(&joined))
            .cloned()
        else {
            continue;
        };
        if take == segments.len() {
            let Some(coerced) = coerce_like(raw, &table[&key]) else {
                return false;
            };
            table.insert(key, coerced);
            return true;
        }
        if let Some(toml::Value::Table(sub)) = table.get_mut(&key) {
            if apply_override(sub, &segments[take..], raw) {
                return true;
            }
        }
    }
    false
}

fn coerce_like(raw: &str, like: &toml::Value) -> Option<toml::Value> {
    use toml::Value::*;
    match like {
        String(_) => Some(String(raw.to_string())),
        Integer(_) => raw.trim().parse().ok().map(Integer),
        Float(_) => raw.trim().parse().ok().map(Float),
        Boolean(_) => raw.trim().parse().ok().map(Boolean),
        Datetime(_) => raw.trim().parse().ok().map(Datetime),
        // Array values are parsed as a one-key TOML document.
        Array(_) => format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v")),
        Table(_) => None,
    }
}

fn resolve_paths(cfg: &mut Config, base: &Path) {
    let absolutize = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if !cfg.sut.repo_location.contains("://") && Path::new(&cfg.sut.repo_location).is_relative() {
        cfg.sut.repo_location = base.join(&cfg.sut.repo_location).display().to_string();
    }
    for role in [
        &mut cfg.models.generator,
        &mut cfg.models.executor,
        &mut cfg.models.detector,
        &mut cfg.models.filter,
        &mut cfg.models.classifier,
        &mut cfg.models.embedding,
    ] {
        if let Some(script) = role.fake_script() {
            if script.is_relative() {
                role.model = format!("fake:{}", base.join(script).display());
            }
        }
    }
    if let Some(dir) = cfg.tracker.fixture_dir.as_mut() {
        absolutize(dir);
    }
    absolutize(&mut cfg.paths.runs_dir);
    absolutize(&mut cfg.paths.skb_index);
    if let Some(dir) = cfg.paths.prompt_dir.as_mut() {
        absolutize(dir);
    }
}

fn validate(cfg: &Config) -> Result<(), ConfigError> {
    let sut = &cfg.sut;
    if sut.name.is_empty() {
        return Err(invalid("sut.name", "must be set"));
    }
    if sut.repo_location.is_empty() {
        return Err(invalid("sut.repo_location", "must be set"));
    }
    let revision_slots = sut.build_command.matches("{revision}").count();
    if revision_slots != 1 {
        return Err(invalid(
            "sut.build_command",
            format!("must contain exactly one {{revision}} placeholder, found {revision_slots}"),
        ));
    }
    if sut.launch_command.is_empty() {
        return Err(invalid("sut.launch_command", "must be set"));
    }
    for (field, v) in [
        ("sut.display_geometry.width", sut.display_geometry.width),
        ("sut.display_geometry.height", sut.display_geometry.height),
    ] {
        if !(320..=8192).contains(&v) {
            return Err(invalid(field, format!("{v} outside [320, 8192]")));
        }
    }

    let b = &cfg.budgets;
    for (field, v) in [
        ("max_llm_turns_per_scenario", b.max_llm_turns_per_scenario),
        (
            "max_ui_instructions_per_scenario",
            b.max_ui_instructions_per_scenario,
        ),
        ("max_scenarios_per_pr", b.max_scenarios_per_pr),
    ] {
        if v == 0 {
            return Err(invalid(field, "must be positive"));
        }
    }
    if b.pixel_diff_threshold > 255 {
        return Err(invalid(
            "pixel_diff_threshold",
            format!("{} outside [0, 255]", b.pixel_diff_threshold),
        ));
    }

    for (field, role) in [
        ("models.generator", &cfg.models.generator),
        ("models.executor", &cfg.models.executor),
        ("models.detector", &cfg.models.detector),
        ("models.filter", &cfg.models.filter),
        ("models.classifier", &cfg.models.classifier),
        ("models.embedding", &cfg.models.embedding),
    ] {
        if role.model.is_empty() {
            return Err(invalid(field, "model identifier must be set"));
        }
        if role.model == "fake:" {
            return Err(invalid(field, "fake: sentinel requires a script path"));
        }
    }
    if cfg.models.embedding_dim == 0 {
        return Err(invalid("models.embedding_dim", "must be positive"));
    }

    let skb = &cfg.skb;
    if skb.chunk_tokens <= skb.chunk_overlap {
        return Err(invalid(
            "skb.chunk_tokens",
            format!(
                "chunk_tokens ({}) must exceed chunk_overlap ({})",
                skb.chunk_tokens, skb.chunk_overlap
            ),
        ));
    }
    if skb.top_k == 0 {
        return Err(invalid("skb.top_k", "must be positive"));
    }
    if skb.max_queries == 0 {
        return Err(invalid("skb.max_queries", "must be positive"));
    }
    if !(0.0..=1.0).contains(&skb.timestamp_line_ratio) {
        return Err(invalid("skb.timestamp_line_ratio", "must be in [0, 1]"));
    }

    if cfg.executor.workers == 0 {
        return Err(invalid("executor.workers", "must be positive"));
    }
    if cfg.executor.wait_scale < 0.0 || !cfg.executor.wait_scale.is_finite() {
        return Err(invalid("executor.wait_scale", "must be a finite value >= 0"));
    }
    if cfg.llm.max_attempts == 0 {
        return Err(invalid("llm.max_attempts", "must be positive"));
    }
    Ok(())
}

impl Config {
    /// Serializes in the same layout [`load_config`] accepts.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[sut]
name = "demo"
repo_location = "repo"
container_image_ref = "base:1"
build_command = "make REV={revision}"
launch_command = "./app"
display_geometry = { width = 640, height = 480 }
issue_tracker_kind = "mock"
"#;

    fn write_cfg(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("ripple.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn minimal_file_gets_paper_default_budgets() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load_config_with_env(&write_cfg(dir.path(), MINIMAL), &[]).unwrap();
        assert_eq!(cfg.budgets.max_llm_turns_per_scenario, 20);
        assert_eq!(cfg.budgets.max_ui_instructions_per_scenario, 35);
        assert_eq!(cfg.budgets.max_scenarios_per_pr, 7);
        assert_eq!(cfg.budgets.pixel_diff_threshold, 30);
        assert_eq!(cfg.diff.dilation_radius, 3);
        assert_eq!(cfg.skb.chunk_tokens, 512);
        assert_eq!(cfg.skb.chunk_overlap, 64);
    }

    #[test]
    fn zero_scenario_budget_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{MINIMAL}\n[budgets]\nmax_scenarios_per_pr = 0\n");
        let err = load_config_with_env(&write_cfg(dir.path(), &text), &[]).unwrap_err();
        match err {
            ConfigError::Validation { field, .. } => assert_eq!(field, "max_scenarios_per_pr"),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn out_of_range_threshold_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{MINIMAL}\n[budgets]\npixel_diff_threshold = 300\n");
        let err = load_config_with_env(&write_cfg(dir.path(), &text), &[]).unwrap_err();
        assert!(matches!(err, ConfigError::Validation { .. }), "{err}");
    }

    #[test]
    fn build_command_needs_exactly_one_revision_slot() {
        let dir = tempfile::tempdir().unwrap();
        for bad in ["make all", "make {revision} {revision}"] {
            let text = MINIMAL.replace("make REV={revision}", bad);
            let err = load_config_with_env(&write_cfg(dir.path(), &text), &[]).unwrap_err();
            assert!(matches!(err, ConfigError::Validation { .. }), "{bad}: {err}");
        }
    }

    #[test]
    fn geometry_bounds_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let text = MINIMAL.replace("width = 640", "width = 100");
        let err = load_config_with_env(&write_cfg(dir.path(), &text), &[]).unwrap_err();
        assert!(matches!(err, ConfigError::Validation { .. }), "{err}");
    }

    #[test]
    fn env_overrides_walk_nested_keys_case_insensitively() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_cfg(dir.path(), MINIMAL);
        let overrides = vec![
            ("RIPPLE_BUDGETS_MAX_SCENARIOS_PER_PR".into(), "5".into()),
            ("RIPPLE_SUT_DISPLAY_GEOMETRY_WIDTH".into(), "800".into()),
            ("RIPPLE_MODELS_GENERATOR_MODEL".into(), "gpt-test".into()),
            ("RIPPLE_EXECUTOR_WAIT_SCALE".into(), "0.5".into()),
        ];
        let cfg = load_config_with_env(&p, &overrides).unwrap();
        assert_eq!(cfg.budgets.max_scenarios_per_pr, 5);
        assert_eq!(cfg.sut.display_geometry.width, 800);
        assert_eq!(cfg.models.generator.model, "gpt-test");
        assert_eq!(cfg.executor.wait_scale, 0.5);
    }

    #[test]
    fn unresolved_env_override_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_cfg(dir.path(), MINIMAL);
        let overrides = vec![("RIPPLE_NO_SUCH_KEY".into(), "1".into())];
        let err = load_config_with_env(&p, &overrides).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownOverride { .. }), "{err}");
    }

    #[test]
    fn unknown_file_key_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{MINIMAL}\n[budgets]\nmax_scenarios = 3\n");
        let err = load_config_with_env(&write_cfg(dir.path(), &text), &[]).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "{err}");
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load_config_with_env(&write_cfg(dir.path(), MINIMAL), &[]).unwrap();
        let base = dir.path().canonicalize().unwrap();
        assert_eq!(cfg.paths.runs_dir, base.join("runs"));
        assert!(Path::new(&cfg.sut.repo_location).is_absolute());
        let script = cfg.models.generator.fake_script().unwrap();
        assert_eq!(script, base.join("scripts/generator.script"));
    }

    #[test]
    fn loaded_config_round_trips_through_serialization() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "{MINIMAL}\n[pricing.\"gpt-test\"]\ninput_per_mtok_micros = 2500000\n\n[budgets]\npixel_diff_threshold = 25\n"
        );
        let cfg = load_config_with_env(&write_cfg(dir.path(), &text), &[]).unwrap();
        let redir = tempfile::tempdir().unwrap();
        let again = load_config_with_env(&write_cfg(redir.path(), &cfg.to_toml_string()), &[]).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn identical_bytes_yield_identical_configs() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = load_config_with_env(&write_cfg(dir_a.path(), MINIMAL), &[]).unwrap();
        let b = load_config_with_env(&write_cfg(dir_b.path(), MINIMAL), &[]).unwrap();
        // Path resolution differs by directory; compare location-free parts.
        assert_eq!(a.budgets, b.budgets);
        assert_eq!(a.skb, b.skb);
        assert_eq!(a.sut.build_command, b.sut.build_command);
    }
}
