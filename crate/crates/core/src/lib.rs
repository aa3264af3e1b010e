//! Ripple: a change-aware differential GUI testing engine.
//!
//! Given a pull request, Ripple generates end-user test scenarios from the
//! change intent (enriched with retrieval over a mined scenario knowledge
//! base), executes them on the pre-change and post-change builds of the
//! system under test inside isolated sessions, compares paired screenshots
//! pixel-by-pixel, and asks a multimodal model to separate intended behavior
//! changes from regressions.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`config`]: one TOML file describing the SUT, budgets, models, pricing.
//! - [`change_context`]: PR intent, patches, and blame-ranked preceding
//!   change intents ([`vcs`] and [`tracker`] supply the raw data).
//! - [`skb`]: the scenario knowledge base (filter, chunk, embed, hybrid query).
//! - [`scenario`]: three-stage scenario generation and enrichment.
//! - [`executor`]: UI instruction translation and dual-build play/replay.
//! - [`pixel_diff`]: threshold mask, dilation, connected regions, annotation.
//! - [`detection`]: per-step difference verdicts and candidate bug reports.
//! - [`bug_filter`]: duplicate / rendering-artifact / non-determinism filters.
//! - [`llm`]: role-routed multimodal gateway with a deterministic scripted
//!   fake provider for offline runs.
//! - [`orchestrator`]: resumable per-stage pipeline driver and run manifest.
//! - [`report`]: final per-PR report bundle with cost accounting.
//!
//! [`mock_gui`] is a small deterministic GUI application bundled as a test
//! target; [`testkit`] materializes complete demo fixtures (git repo, tracker
//! records, fake provider scripts) for tests and the `ripple fixture`
//! subcommand.

pub mod bug_filter;
pub mod change_context;
pub mod clock;
pub mod config;
pub mod detection;
pub mod executor;
pub mod font;
pub mod llm;
pub mod mock_gui;
pub mod orchestrator;
pub mod pixel_diff;
pub mod prompts;
pub mod report;
pub mod scenario;
pub mod skb;
pub mod testkit;
pub mod tracker;
pub mod vcs;

pub use config::Config;
