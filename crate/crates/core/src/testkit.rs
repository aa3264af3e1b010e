//! Self-contained end-to-end fixtures for integration tests.
//!
//! [`build_fixture`] lays out everything a full pipeline run needs under one
//! directory: a git repository holding a two-commit GUI application, mock
//! tracker records for the pull request, scripted replies for every model
//! role, and a configuration pointing at all of it. The second commit either
//! changes only the save button's label casing (a clean change) or
//! additionally relocates the button (a seeded regression the pipeline is
//! expected to catch).
//!
//! [`build_blame_repo`] builds a separate repository whose per-line
//! authorship is tracked during construction, for exercising history
//! attribution against ground truth that does not come from git itself.

use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{TimeZone, Utc};

use crate::config::{Config, Geometry, ModelPrice, RuntimeKind, TrackerKind};
use crate::tracker::{IssueRecord, PrRecord};

/// Id of the pull request every fixture registers with its mock tracker.
pub const FIXTURE_PR_ID: &str = "7";

/// Knobs for [`build_fixture`].
pub struct FixtureOptions {
    /// When set, the post-change build also moves the save button, so the
    /// scripted click hits it only on the changed build and the baseline
    /// replay lands on empty space.
    pub seeded_regression: bool,
}

/// Paths and configuration of a built fixture.
pub struct Fixture {
    pub root: PathBuf,
    pub cfg: Config,
    pub pre_revision: String,
    pub post_revision: String,
}

impl Fixture {
    pub fn script_path(&self, name: &str) -> PathBuf {
        self.root.join("scripts").join(format!("{name}.toml"))
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }
}

/// Runs git with pinned author, committer, and dates so object ids and
/// screenshots are reproducible across machines and runs.
pub fn git(dir: &Path, args: &[&str]) {
    let out = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(args)
        .env("GIT_AUTHOR_NAME", "Fixture")
        .env("GIT_AUTHOR_EMAIL", "fixture@example.com")
        .env("GIT_COMMITTER_NAME", "Fixture")
        .env("GIT_COMMITTER_EMAIL", "fixture@example.com")
        .env("GIT_AUTHOR_DATE", "2024-02-20T00:00:00Z")
        .env("GIT_COMMITTER_DATE", "2024-02-20T00:00:00Z")
        .output()
        .unwrap_or_else(|e| panic!("running git {args:?}: {e}"));
    assert!(
        out.status.success(),
        "git {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn git_head(dir: &Path) -> String {
    let out = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(["rev-parse", "HEAD"])
        .output()
        .expect("git rev-parse");
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

fn app_toml(save_label: &str, save_x: u32) -> String {
    format!(
        r#"title = "NotePad"
geometry = {{ width = 200, height = 120 }}

[[element]]
kind = "button"
id = "save"
label = "{save_label}"
x = {save_x}
y = 30
width = 60
height = 20

[[element]]
kind = "text_field"
id = "name"
x = 20
y = 60
width = 120
height = 14
"#
    )
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    let mut bytes = serde_json::to_vec_pretty(value).expect("fixture record serializes");
    bytes.push(b'\n');
    std::fs::write(path, bytes).unwrap_or_else(|e| panic!("writing {}: {e}", path.display()));
}

const GENERATOR_SCRIPT: &str = r#"[[turn]]
match = "Study the pull request below"
reply = '''
```json
{
  "change_impact_analysis": {
    "intent_explanation": "The save control's label switches to uppercase lettering; its position and behavior are meant to stay the same.",
    "affected_behaviors": [
      "The lettering on the save control",
      "Saving a note from the main window"
    ],
    "high_risk_cases": [
      "The save control no longer reacting to clicks"
    ]
  },
  "test_scenarios": [
    {
      "title": "Save a note from the main window",
      "preconditions": ["The application is freshly started"],
      "steps": [
        {
          "description": "Press the save control",
          "expected_observation": "The control shows its pressed state"
        },
        {
          "description": "Enter the note name into the name field"
        }
      ],
      "test_data": [
        {"name": "note name", "constraint": "short plain text"}
      ]
    }
  ]
}
```
'''

[[turn]]
match = "worth looking up"
reply = '''
```json
{"queries": ["saving a note from the main window", "save control click"]}
```
'''

[[turn]]
match = "Historical excerpts"
reply = '''
```json
{
  "test_scenarios": [
    {
      "scenario_id": "s1",
      "title": "Save a note from the main window",
      "preconditions": ["The application is freshly started"],
      "steps": [
        {
          "description": "Press the save control",
          "expected_observation": "The control shows its pressed state"
        },
        {
          "description": "Enter the note name into the name field"
        }
      ],
      "test_data": [
        {"name": "note name", "constraint": "short plain text"}
      ],
      "provenance": []
    }
  ]
}
```
'''

[[turn]]
match = "identify every piece of test data"
reply = '''
```json
{
  "test_scenarios": [
    {
      "scenario_id": "s1",
      "test_data": [
        {
          "name": "note name",
          "constraint": "short plain text",
          "concrete_value": "Quarterly plan"
        }
      ]
    }
  ]
}
```
'''
"#;

fn executor_script(click_x: u32) -> String {
    format!(
        r#"[[turn]]
match = "Perform the test scenario"
reply = '''
```json
{{"instructions": [
  {{"kind": "click", "target_name": "Save control", "position": {{"x": {click_x}, "y": 40}}}},
  {{"kind": "input", "target_name": "Name field", "position": {{"x": 30, "y": 66}}, "text": "Quarterly plan"}}
]}}
```
'''

[[turn]]
match = "Your instructions were executed"
reply = '''
```json
{{"scenario_complete": true}}
```
'''
"#
    )
}

const DETECTOR_SCRIPT_REGRESSION: &str = r#"[[turn]]
match = "Step 0."
reply = '''
```json
{
  "verdicts": [
    {
      "region_index": 0,
      "classification": "bug",
      "description": "The save control sits at a different position and the baseline click landed on empty space.",
      "reasoning": "The stated intent covers only the label casing, not a relocation."
    }
  ],
  "reports": [
    {
      "title": "Save control unexpectedly moved",
      "description": "Pressing the save control works only at its new position in the changed build; on the baseline the same click hits empty space, so the control was relocated although the change was meant to alter only the label casing.",
      "evidence": [{"step_index": 0, "region_index": 0}]
    }
  ]
}
```
'''

[[turn]]
match = "Step 1."
reply = '''
```json
{
  "verdicts": [
    {
      "region_index": 0,
      "classification": "bug",
      "description": "The save control is still displaced from its baseline position.",
      "reasoning": "Same relocation as in the previous step; already reported."
    }
  ],
  "reports": []
}
```
'''
"#;

const DETECTOR_SCRIPT_CLEAN: &str = r#"[[turn]]
match = "Step 0."
reply = '''
```json
{
  "verdicts": [
    {
      "region_index": 0,
      "classification": "expected",
      "description": "The save control label switched to uppercase lettering.",
      "reasoning": "Exactly the casing change the intent describes."
    }
  ],
  "reports": []
}
```
'''

[[turn]]
match = "Step 1."
reply = '''
```json
{
  "verdicts": [
    {
      "region_index": 0,
      "classification": "expected",
      "description": "The uppercase save control label remains visible.",
      "reasoning": "Carryover of the intended casing change."
    }
  ],
  "reports": []
}
```
'''
"#;

const FILTER_SCRIPT: &str = r#"[[turn]]
match = "Candidates:"
reply = '''
```json
{
  "decisions": [
    {
      "report_id": "7-s1-1",
      "outcome": "keep",
      "rationale": "A control relocation is not explained by a label casing change."
    }
  ]
}
```
'''
"#;

/// Builds the full pipeline fixture under `root` and returns its
/// configuration. The directory must exist; everything else is created.
pub fn build_fixture(root: &Path, opts: &FixtureOptions) -> std::io::Result<Fixture> {
    let sut_dir = root.join("sut");
    std::fs::create_dir_all(&sut_dir)?;
    git(&sut_dir, &["init", "-q", "-b", "main"]);
    std::fs::write(sut_dir.join("app.toml"), app_toml("Save", 20))?;
    git(&sut_dir, &["add", "-A"]);
    git(&sut_dir, &["commit", "-q", "-m", "Initial application layout"]);
    let pre_revision = git_head(&sut_dir);

    let post_x = if opts.seeded_regression { 120 } else { 20 };
    std::fs::write(sut_dir.join("app.toml"), app_toml("SAVE", post_x))?;
    git(&sut_dir, &["add", "-A"]);
    git(
        &sut_dir,
        &["commit", "-q", "-m", "Normalize save button label casing"],
    );
    let post_revision = git_head(&sut_dir);

    let tracker_dir = root.join("tracker");
    std::fs::create_dir_all(&tracker_dir)?;
    write_json(
        &tracker_dir.join(format!("pr_{FIXTURE_PR_ID}.json")),
        &PrRecord {
            id: FIXTURE_PR_ID.into(),
            title: "Normalize the save button label casing".into(),
            description: "Buttons should use uppercase labels. No behavior change intended."
                .into(),
            created_at: Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap(),
            base_revision: pre_revision.clone(),
            head_revision: Some(post_revision.clone()),
            resolved_issue_ids: vec!["42".into()],
        },
    );
    write_json(
        &tracker_dir.join("issue_42.json"),
        &IssueRecord {
            id: "42".into(),
            title: "Button labels are inconsistently cased".into(),
            description: "Some buttons use title case, others uppercase; settle on uppercase."
                .into(),
            created_at: Utc.with_ymd_and_hms(2024, 2, 1, 0, 0, 0).unwrap(),
        },
    );

    let scripts = root.join("scripts");
    std::fs::create_dir_all(&scripts)?;
    let click_x = if opts.seeded_regression { 130 } else { 50 };
    let detector = if opts.seeded_regression {
        DETECTOR_SCRIPT_REGRESSION
    } else {
        DETECTOR_SCRIPT_CLEAN
    };
    std::fs::write(scripts.join("generator.toml"), GENERATOR_SCRIPT)?;
    std::fs::write(scripts.join("executor.toml"), executor_script(click_x))?;
    std::fs::write(scripts.join("detector.toml"), detector)?;
    std::fs::write(scripts.join("filter.toml"), FILTER_SCRIPT)?;

    let mut cfg = Config::default();
    cfg.sut.name = "notepad".into();
    cfg.sut.repo_location = sut_dir.display().to_string();
    cfg.sut.container_image_ref = "fixture/base:1".into();
    cfg.sut.build_command = "true {revision}".into();
    cfg.sut.launch_command = "./notepad".into();
    cfg.sut.display_geometry = Geometry {
        width: 320,
        height: 320,
    };
    cfg.sut.issue_tracker_kind = TrackerKind::Mock;
    cfg.tracker.fixture_dir = Some(tracker_dir);
    cfg.executor.runtime = RuntimeKind::Local;
    cfg.executor.settle_ms = 0;
    cfg.executor.wait_scale = 0.0;
    cfg.executor.workers = 2;
    // On a 200x120 screen no two difference areas are further apart than
    // twice this radius, so every step collapses to one region and scripted
    // verdicts can name region 0.
    cfg.diff.dilation_radius = 60;
    cfg.paths.runs_dir = root.join("runs");
    cfg.paths.skb_index = root.join("skb.index");

    let fake = |name: &str| format!("fake:{}", scripts.join(format!("{name}.toml")).display());
    cfg.models.generator.model = fake("generator");
    cfg.models.executor.model = fake("executor");
    cfg.models.detector.model = fake("detector");
    cfg.models.filter.model = fake("filter");
    cfg.models.classifier.model = fake("generator");
    // Embeddings never read a script, but the loader absolutizes relative
    // fake paths, so use an absolute one to keep round-trips exact.
    cfg.models.embedding.model = format!("fake:{}", root.join("embeddings").display());

    // Distinct nonzero prices per role make cost accounting mistakes show
    // up as sums that no longer match the meter.
    let price = |i: u64, o: u64, img: u64| ModelPrice {
        input_per_mtok_micros: i * 1_000_000,
        output_per_mtok_micros: o * 1_000_000,
        per_image_micros: img,
    };
    cfg.pricing.insert(cfg.models.generator.model.clone(), price(2, 4, 5));
    cfg.pricing.insert(cfg.models.executor.model.clone(), price(1, 2, 3));
    cfg.pricing.insert(cfg.models.detector.model.clone(), price(3, 6, 7));
    cfg.pricing.insert(cfg.models.filter.model.clone(), price(1, 3, 2));
    cfg.pricing.insert(cfg.models.embedding.model.clone(), price(1, 0, 0));

    std::fs::write(root.join("config.toml"), cfg.to_toml_string())?;
    Ok(Fixture {
        root: root.to_path_buf(),
        cfg,
        pre_revision,
        post_revision,
    })
}

/// Ground truth for [`build_blame_repo`]: which numbered change last wrote
/// each line of the tracked file, recorded while the history was built.
pub struct BlameFixture {
    pub repo_dir: PathBuf,
    pub tracker_dir: PathBuf,
    pub file: &'static str,
    pub head: String,
    /// `line_owner[i]` is the 1-based change number that last rewrote line
    /// `i` of the file as of `head`.
    pub line_owner: Vec<usize>,
    /// Commit id of each change, indexed by change number - 1.
    pub commit_ids: Vec<String>,
}

/// Builds a repository where ten successive changes each rewrite a known
/// slice of a fifty-line file, with tracker records and cross-references
/// linking every commit to a pull request of the same number. Line
/// ownership is recorded during construction, independent of any blame
/// computation.
pub fn build_blame_repo(root: &Path) -> std::io::Result<BlameFixture> {
    const FILE: &str = "flow.txt";
    const LINES: usize = 50;
    let repo_dir = root.join("blame-repo");
    let tracker_dir = root.join("blame-tracker");
    std::fs::create_dir_all(&repo_dir)?;
    std::fs::create_dir_all(&tracker_dir)?;
    git(&repo_dir, &["init", "-q", "-b", "main"]);

    // Change k > 1 rewrites lines [4(k-1), 4(k-1) + 8), so consecutive
    // changes overlap by half their span.
    let mut line_owner = vec![0usize; LINES];
    let mut commit_ids = Vec::new();
    let mut xref: std::collections::BTreeMap<String, Vec<String>> = Default::default();
    for change in 1..=10usize {
        if change == 1 {
            line_owner.fill(1);
        } else {
            let start = 4 * (change - 1);
            for owner in line_owner.iter_mut().skip(start).take(8) {
                *owner = change;
            }
        }
        let content: String = line_owner
            .iter()
            .enumerate()
            .map(|(i, owner)| format!("line {i} as of change {owner}\n"))
            .collect();
        std::fs::write(repo_dir.join(FILE), content)?;
        git(&repo_dir, &["add", "-A"]);
        git(
            &repo_dir,
            &["commit", "-q", "-m", &format!("Change number {change}")],
        );
        let commit = git_head(&repo_dir);
        xref.insert(commit.clone(), vec![format!("pr:{change}")]);
        write_json(
            &tracker_dir.join(format!("pr_{change}.json")),
            &PrRecord {
                id: change.to_string(),
                title: format!("Change number {change}"),
                description: format!("Rewrites a slice of {FILE}."),
                created_at: Utc
                    .with_ymd_and_hms(2024, 1, change as u32, 0, 0, 0)
                    .unwrap(),
                base_revision: commit_ids.last().cloned().unwrap_or_default(),
                head_revision: Some(commit.clone()),
                resolved_issue_ids: vec![],
            },
        );
        commit_ids.push(commit);
    }
    write_json(&tracker_dir.join("xref.json"), &xref);

    Ok(BlameFixture {
        repo_dir,
        tracker_dir,
        file: FILE,
        head: commit_ids.last().cloned().unwrap(),
        line_owner,
        commit_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config;

    #[test]
    fn fixture_config_round_trips_through_the_loader() {
        let dir = tempfile::tempdir().unwrap();
        let fixture = build_fixture(
            dir.path(),
            &FixtureOptions {
                seeded_regression: true,
            },
        )
        .unwrap();
        let loaded = config::load_config_with_env(&fixture.config_path(), &[]).unwrap();
        assert_eq!(loaded, fixture.cfg);
        assert_ne!(fixture.pre_revision, fixture.post_revision);
    }

    #[test]
    fn blame_repo_ground_truth_matches_file_content() {
        let dir = tempfile::tempdir().unwrap();
        let fx = build_blame_repo(dir.path()).unwrap();
        assert_eq!(fx.commit_ids.len(), 10);
        let content = std::fs::read_to_string(fx.repo_dir.join(fx.file)).unwrap();
        for (i, line) in content.lines().enumerate() {
            assert_eq!(line, format!("line {i} as of change {}", fx.line_owner[i]));
        }
        // Later changes own their slice; lines outside every rewritten
        // window still belong to the initial change.
        assert_eq!(fx.line_owner[0], 1);
        assert_eq!(fx.line_owner[5], 2);
        assert_eq!(fx.line_owner[8], 3, "overlap goes to the later change");
        assert_eq!(fx.line_owner[40], 10);
        assert_eq!(fx.line_owner[49], 1);
    }
}
