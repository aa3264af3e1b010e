//! Prompt templates for every LLM role, with optional on-disk overrides.
//!
//! Each template ships embedded in the binary. When the config points at a
//! prompt directory, a file named `<template>.txt` in that directory
//! replaces the embedded text, letting deployments tune wording without
//! rebuilding. Placeholders are `{name}` tokens substituted left to right;
//! substituted values are never re-scanned, so user-controlled text cannot
//! inject further placeholders.

use std::path::PathBuf;

/// Fills `{name}` placeholders from `vars`. Unknown placeholders are kept
/// verbatim so template typos stay visible in the rendered prompt.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        match tail[1..].find(['{', '}']) {
            Some(rel) if tail.as_bytes()[1 + rel] == b'}' => {
                let key = &tail[1..1 + rel];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&tail[..rel + 2]),
                }
                rest = &tail[rel + 2..];
            }
            _ => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Resolves templates, preferring `<dir>/<name>.txt` when an override
/// directory is configured.
pub struct PromptSet {
    dir: Option<PathBuf>,
}

impl PromptSet {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    fn template(&self, name: &str, embedded: &'static str) -> String {
        if let Some(dir) = &self.dir {
            if let Ok(text) = std::fs::read_to_string(dir.join(format!("{name}.txt"))) {
                return text;
            }
        }
        embedded.to_string()
    }

    /// Change-impact analysis plus initial scenario generation, answered
    /// as one fenced JSON object.
    pub fn impact_and_scenarios(&self, context: &str, max_scenarios: &str) -> String {
        let t = self.template(
            "impact_and_scenarios",
            "Role: You are a senior GUI test designer for desktop applications.\n\
             Task: Study the pull request below, explain what the change intends to\n\
             accomplish for end users, list the user-visible behaviors it may affect\n\
             (including high-risk or sensitive cases), and design user-level test\n\
             scenarios that exercise those behaviors.\n\
             \n\
             {context}\n\
             \n\
             Output Guidelines:\n\
             - Reply with exactly one fenced JSON block.\n\
             - Top-level keys: \"change_impact_analysis\" and \"test_scenarios\".\n\
             - change_impact_analysis has \"intent_explanation\" (string),\n\
               \"affected_behaviors\" (list of strings), \"high_risk_cases\" (list of strings).\n\
             - test_scenarios is a list of at most {max_scenarios} objects, each with\n\
               \"title\" (string), \"preconditions\" (list of strings), \"steps\" (list of\n\
               objects with \"description\" and optional \"expected_observation\"), and\n\
               \"test_data\" (list of objects with \"name\", \"constraint\", and optional\n\
               \"concrete_value\").\n\
             - Phrase everything as an end user would experience it. Never mention\n\
               file paths, function names, or any other code identifiers.",
        );
        fill(&t, &[("context", context), ("max_scenarios", max_scenarios)])
    }

    /// Asks for knowledge-base retrieval queries for a scenario batch.
    pub fn retrieval_queries(&self, scenarios: &str, max_queries: &str) -> String {
        let t = self.template(
            "retrieval_queries",
            "Task: You will enrich the GUI test scenarios below with alternative event\n\
             sequences drawn from historical end-user reports. First, propose search\n\
             queries describing the user workflows, surfaces, and interaction patterns\n\
             worth looking up.\n\
             \n\
             Scenarios:\n{scenarios}\n\
             \n\
             Output Guidelines:\n\
             - Reply with exactly one fenced JSON block.\n\
             - Top-level key \"queries\": a list of at most {max_queries} short strings.",
        );
        fill(&t, &[("scenarios", scenarios), ("max_queries", max_queries)])
    }

    /// Event-sequence enrichment given retrieved knowledge-base chunks.
    pub fn event_enrichment(&self, scenarios: &str, chunks: &str) -> String {
        let t = self.template(
            "event_enrichment",
            "Task: Enrich each test scenario below with alternative or additional event\n\
             sequences suggested by the historical report excerpts. Keep each scenario's\n\
             purpose; you may reorder, extend, or diversify its steps. Record which\n\
             excerpts you used.\n\
             \n\
             Scenarios:\n{scenarios}\n\
             \n\
             Historical excerpts (id then text):\n{chunks}\n\
             \n\
             Output Guidelines:\n\
             - Reply with exactly one fenced JSON block.\n\
             - Top-level key \"test_scenarios\": one object per input scenario, carrying\n\
               the same \"scenario_id\", plus \"title\", \"preconditions\", \"steps\"\n\
               (objects with \"description\" and optional \"expected_observation\"),\n\
               \"test_data\", and \"provenance\" (list of excerpt ids actually used,\n\
               possibly empty).\n\
             - Phrase steps as end-user actions only; no file paths or code identifiers.",
        );
        fill(&t, &[("scenarios", scenarios), ("chunks", chunks)])
    }

    /// Requests one fresh, simpler scenario to replace an overgrown one.
    pub fn scenario_replacement(&self, context: &str, title: &str) -> String {
        let t = self.template(
            "scenario_replacement",
            "The enriched scenario titled \"{title}\" has become too long to execute\n\
             reliably. Instead of extending it further, design one new, simpler test\n\
             scenario that still exercises the changed behavior described earlier.\n\
             \n\
             {context}\n\
             \n\
             Output Guidelines:\n\
             - Reply with exactly one fenced JSON block containing a single object with\n\
               \"title\", \"preconditions\", \"steps\" (objects with \"description\" and\n\
               optional \"expected_observation\"), and \"test_data\".\n\
             - Phrase steps as end-user actions only; no file paths or code identifiers.",
        );
        fill(&t, &[("context", context), ("title", title)])
    }

    /// Test-data identification and instantiation.
    pub fn data_enrichment(&self, scenarios: &str) -> String {
        let t = self.template(
            "data_enrichment",
            "Task: For each test scenario below, identify every piece of test data its\n\
             steps require, infer the constraint each item must satisfy, and provide a\n\
             concrete executable value. Validate any example values already present and\n\
             replace those that violate their constraints. Where several scenarios need\n\
             the same kind of data, give each a distinct representative value.\n\
             \n\
             Scenarios:\n{scenarios}\n\
             \n\
             Output Guidelines:\n\
             - Reply with exactly one fenced JSON block.\n\
             - Top-level key \"test_scenarios\": one object per input scenario with the\n\
               same \"scenario_id\" and a \"test_data\" list of objects, each carrying\n\
               \"name\", \"constraint\", and a nonempty \"concrete_value\".",
        );
        fill(&t, &[("scenarios", scenarios)])
    }

    /// Opening message of an execution dialogue: the instruction
    /// vocabulary, the reply contract, and the scenario to perform. A
    /// screenshot of the freshly launched interface accompanies it.
    pub fn executor_play(&self, scenario: &str, width: &str, height: &str) -> String {
        let t = self.template(
            "executor_play",
            "Role: You operate a desktop GUI application on behalf of a tester. You see\n\
             the screen only through the screenshot attached to each message, and you act\n\
             only by emitting structured instructions.\n\
             \n\
             Task: Perform the test scenario below step by step. After each of your\n\
             replies the instructions are executed in order and you receive a new\n\
             screenshot of the resulting state.\n\
             \n\
             Instruction kinds and their arguments (the display is {width}x{height};\n\
             x grows right, y grows down; coordinates must stay inside it):\n\
             - \"click\", \"right_click\", \"long_click\", \"double_click\",\n\
               \"triple_click\", \"move\": require \"position\" {\"x\", \"y\"}.\n\
             - \"input\": requires \"position\" and \"text\"; it clicks the position,\n\
               then types the text.\n\
             - \"scroll\": requires \"direction\" (\"up\", \"down\", \"left\", or\n\
               \"right\") and nothing else; it scrolls at the current pointer location.\n\
             - \"drag\": requires \"position\" and \"end_position\".\n\
             - \"keypress\": requires \"keys\", a list of X key symbols pressed as one\n\
               chord, for example [\"ctrl\", \"a\"].\n\
             - \"wait\": requires \"wait_ms\", a positive number of milliseconds.\n\
             Every instruction also carries \"target_name\", a short human-readable name\n\
             of the widget or purpose it addresses. No other fields are allowed.\n\
             \n\
             Scenario:\n{scenario}\n\
             \n\
             Output Guidelines:\n\
             - Reply with exactly one fenced JSON block and no other commentary.\n\
             - While work remains: {\"instructions\": [ ... ]} with at least one\n\
               instruction, in execution order.\n\
             - Once the scenario is finished: {\"scenario_complete\": true}.",
        );
        fill(
            &t,
            &[("scenario", scenario), ("width", width), ("height", height)],
        )
    }

    /// Continuation message between instruction batches.
    pub fn executor_continue(&self) -> String {
        self.template(
            "executor_continue",
            "Your instructions were executed. The attached screenshot shows the current\n\
             state of the interface. Reply with one fenced JSON block: the next\n\
             {\"instructions\": [ ... ]}, or {\"scenario_complete\": true} if the\n\
             scenario is finished.",
        )
    }

    /// Context preamble opening a detection dialogue: what changed and
    /// why, so intended differences can be told from regressions.
    pub fn detector_opening(
        &self,
        pr_title: &str,
        pr_description: &str,
        intent_explanation: &str,
    ) -> String {
        let t = self.template(
            "detector_opening",
            "Role: You review paired GUI screenshots from two builds of the same\n\
             application: the baseline build and a build with the change below applied.\n\
             Differences that realize the described intent are expected; differences the\n\
             intent does not explain are potential bugs. Report only clear, observable\n\
             defects; never speculate beyond what the screenshots show.\n\
             \n\
             Change under test: {pr_title}\n\
             {pr_description}\n\
             \n\
             Interpreted intent: {intent_explanation}\n",
        );
        fill(
            &t,
            &[
                ("pr_title", pr_title),
                ("pr_description", pr_description),
                ("intent_explanation", intent_explanation),
            ],
        )
    }

    /// One detection step: the executed instruction, the detected
    /// difference regions, and the reply contract. Two annotated
    /// screenshots ride along: baseline first, changed build second.
    pub fn detector_step(&self, step_index: &str, instruction: &str, parsed_info: &str) -> String {
        let t = self.template(
            "detector_step",
            "Step {step_index}. Instruction executed on both builds:\n{instruction}\n\
             \n\
             Detected difference regions (indices match the boxes drawn on both\n\
             attached screenshots; the first image is the baseline build, the second\n\
             the changed build):\n{parsed_info}\n\
             \n\
             Classify every listed region. A region is \"expected\" when the change\n\
             intent accounts for it, \"bug\" when it does not.\n\
             \n\
             Output Guidelines:\n\
             - Reply with exactly one fenced JSON block.\n\
             - \"verdicts\": one object per listed region with \"region_index\",\n\
               \"classification\" (\"expected\" or \"bug\"), \"description\", and\n\
               \"reasoning\".\n\
             - \"reports\": bug reports for issues not already reported earlier in this\n\
               dialogue; each has \"title\", \"description\", and nonempty \"evidence\",\n\
               a list of {\"step_index\", \"region_index\"} pairs; use region_index -1\n\
               for an issue visible in the step as a whole. Omit or leave empty when\n\
               every difference is expected or already reported.",
        );
        fill(
            &t,
            &[
                ("step_index", step_index),
                ("instruction", instruction),
                ("parsed_info", parsed_info),
            ],
        )
    }

    /// One joint pass over all candidate bug reports of a run, deciding
    /// which survive. The candidates' evidence screenshots are attached in
    /// the order the candidates list them.
    pub fn filter_candidates(&self, candidates: &str) -> String {
        let t = self.template(
            "filter_candidates",
            "Role: You are the final reviewer of candidate GUI bug reports produced by\n\
             comparing two builds of an application. Considering all candidates together,\n\
             weed out the false positives:\n\
             - duplicates: several candidates describing the same underlying issue;\n\
             - rendering artifacts: differences caused by screenshot timing or rendering\n\
               delays rather than by the change under test;\n\
             - nondeterminism: unstable or non-deterministic interface behavior such as\n\
               clocks, animations, or randomized content.\n\
             Evidence screenshots are attached in the order the candidates cite them.\n\
             \n\
             Candidates:\n{candidates}\n\
             \n\
             Output Guidelines:\n\
             - Reply with exactly one fenced JSON block.\n\
             - Top-level key \"decisions\": exactly one object per candidate, each with\n\
               \"report_id\", \"outcome\", \"rationale\", and, when the outcome is\n\
               \"duplicate_of\", a \"duplicate_of\" field naming another report_id.\n\
             - \"outcome\" is one of \"keep\", \"duplicate_of\", \"rendering_artifact\",\n\
               or \"nondeterministic\".\n\
             - duplicate_of chains must point at other candidates and must not form\n\
               cycles. When unsure, keep the report.",
        );
        fill(&t, &[("candidates", candidates)])
    }

    /// Asks whether a historical report describes an end-user GUI
    /// interaction scenario. The reply must be the single word KEEP or
    /// REJECT.
    pub fn report_classifier(&self, title: &str, body: &str) -> String {
        let t = self.template(
            "report_classifier",
            "You triage historical bug reports for a GUI testing knowledge base.\n\
             Keep only reports that describe an end-user GUI interaction scenario:\n\
             concrete steps a person takes in the interface and what they observe.\n\
             Reject crash dumps, log excerpts, build failures, and test-infrastructure noise.\n\
             \n\
             Title: {title}\n\
             Body:\n{body}\n\
             \n\
             Answer with exactly one word: KEEP or REJECT.",
        );
        fill(&t, &[("title", title), ("body", body)])
    }
}
