//! Session-isolated execution environments for the system under test.
//!
//! `LocalRuntime` runs the bundled mock GUI in-process and needs no
//! container engine; `CommandRuntime` shells out to one (docker, podman)
//! with the same session lifecycle. Builds are cached per
//! (image reference, revision) so pre and post builds happen once per run.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::config::{Geometry, SutConfig};
use crate::mock_gui::{parse_definition, parse_xdotool, AppDefinition, MockGuiApp};
use crate::vcs::{GitCli, VcsClient};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("build failed for revision {revision}: {detail}")]
    BuildFailure { revision: String, detail: String },
    #[error("no live session {0}")]
    SessionNotFound(String),
    #[error("command failed in session: {0}")]
    Driver(String),
    #[error("screenshot capture failed: {0}")]
    Screenshot(String),
    #[error("runtime i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutput {
    pub status: i32,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Running,
    TornDown,
}

/// Handle to one launched SUT instance. A fresh session is created per
/// (scenario, build) pair and torn down when that side finishes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContainerSession {
    pub session_id: String,
    pub image_ref: String,
    pub sut_revision: String,
    pub display_geometry: Geometry,
    pub state: SessionState,
}

pub trait ContainerRuntime: Send + Sync {
    /// Produces a runnable image for the given revision and returns its
    /// identifier. Callers should go through [`build_sut`] to get caching.
    fn build_image(&self, cfg: &SutConfig, revision: &str) -> Result<String, RuntimeError>;

    /// Launches exactly one SUT process in a fresh isolated environment.
    fn start_session(
        &self,
        image_id: &str,
        revision: &str,
        cfg: &SutConfig,
        session_id: &str,
    ) -> Result<ContainerSession, RuntimeError>;

    fn exec_in_session(
        &self,
        session: &ContainerSession,
        argv: &[String],
    ) -> Result<ExecOutput, RuntimeError>;

    fn capture_screenshot(&self, session: &ContainerSession) -> Result<RgbImage, RuntimeError>;

    fn copy_in(
        &self,
        session: &ContainerSession,
        src: &Path,
        dest: &str,
    ) -> Result<(), RuntimeError>;

    fn teardown(&self, session: &mut ContainerSession) -> Result<(), RuntimeError>;
}

/// A completed build, identified by the image the runtime produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildArtifact {
    pub build_id: String,
    pub revision: String,
}

/// Memoizes builds by (image reference, revision).
#[derive(Default)]
pub struct BuildCache {
    built: Mutex<HashMap<(String, String), BuildArtifact>>,
}

impl BuildCache {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Builds the SUT at `revision`, reusing a prior build of the same
/// (image reference, revision) pair if one exists.
pub fn build_sut(
    runtime: &dyn ContainerRuntime,
    cache: &BuildCache,
    cfg: &SutConfig,
    revision: &str,
) -> Result<BuildArtifact, RuntimeError> {
    let key = (cfg.container_image_ref.clone(), revision.to_string());
    if let Some(hit) = cache.built.lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }
    let build_id = runtime.build_image(cfg, revision)?;
    let artifact = BuildArtifact {
        build_id,
        revision: revision.to_string(),
    };
    cache
        .built
        .lock()
        .unwrap()
        .insert(key, artifact.clone());
    Ok(artifact)
}

struct LocalSession {
    app: MockGuiApp,
    profile_dir: PathBuf,
    _dir: tempfile::TempDir,
}

/// In-process runtime hosting the mock GUI. "Building" checks out
/// `app.toml` at the requested revision and parses it; the configured
/// build command is irrelevant here because nothing is compiled.
pub struct LocalRuntime {
    images: Mutex<HashMap<String, AppDefinition>>,
    sessions: Mutex<HashMap<String, LocalSession>>,
}

impl LocalRuntime {
    pub fn new() -> Self {
        Self {
            images: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    /// Reads the isolation marker the app wrote into its profile
    /// directory. Test hook; not part of the runtime contract.
    pub fn profile_marker(&self, session: &ContainerSession) -> Result<String, RuntimeError> {
        let sessions = self.sessions.lock().unwrap();
        let live = sessions
            .get(&session.session_id)
            .ok_or_else(|| RuntimeError::SessionNotFound(session.session_id.clone()))?;
        std::fs::read_to_string(live.profile_dir.join("marker.txt"))
            .map_err(|e| RuntimeError::Io(e.to_string()))
    }
}

impl Default for LocalRuntime {
    fn default() -> Self {
        Self::new()
    }
}

impl ContainerRuntime for LocalRuntime {
    fn build_image(&self, cfg: &SutConfig, revision: &str) -> Result<String, RuntimeError> {
        let fail = |detail: String| RuntimeError::BuildFailure {
            revision: revision.to_string(),
            detail,
        };
        let repo = GitCli::new(cfg.sut_repo_path());
        let bytes = repo
            .show_file(revision, "app.toml")
            .map_err(|e| fail(e.to_string()))?;
        let text = String::from_utf8(bytes).map_err(|e| fail(e.to_string()))?;
        let def = parse_definition(&text).map_err(fail)?;
        let image_id = format!("local/{}@{}", cfg.name, revision);
        self.images.lock().unwrap().insert(image_id.clone(), def);
        Ok(image_id)
    }

    fn start_session(
        &self,
        image_id: &str,
        revision: &str,
        cfg: &SutConfig,
        session_id: &str,
    ) -> Result<ContainerSession, RuntimeError> {
        let def = self
            .images
            .lock()
            .unwrap()
            .get(image_id)
            .cloned()
            .ok_or_else(|| RuntimeError::Io(format!("image {image_id} was never built")))?;
        let dir = tempfile::tempdir().map_err(|e| RuntimeError::Io(e.to_string()))?;
        let profile_dir = dir.path().join("profile");
        let app = MockGuiApp::new(def, profile_dir.clone(), session_id)
            .map_err(|e| RuntimeError::Io(e.to_string()))?;
        let geometry = app.geometry();
        self.sessions.lock().unwrap().insert(
            session_id.to_string(),
            LocalSession {
                app,
                profile_dir,
                _dir: dir,
            },
        );
        Ok(ContainerSession {
            session_id: session_id.to_string(),
            image_ref: image_id.to_string(),
            sut_revision: revision.to_string(),
            display_geometry: cfg.display_geometry.min_with(geometry),
            state: SessionState::Running,
        })
    }

    fn exec_in_session(
        &self,
        session: &ContainerSession,
        argv: &[String],
    ) -> Result<ExecOutput, RuntimeError> {
        let mut sessions = self.sessions.lock().unwrap();
        let live = sessions
            .get_mut(&session.session_id)
            .ok_or_else(|| RuntimeError::SessionNotFound(session.session_id.clone()))?;
        let events = parse_xdotool(argv).map_err(RuntimeError::Driver)?;
        for event in events {
            live.app.handle(event);
        }
        Ok(ExecOutput {
            status: 0,
            stdout: Vec::new(),
            stderr: Vec::new(),
        })
    }

    fn capture_screenshot(&self, session: &ContainerSession) -> Result<RgbImage, RuntimeError> {
        let sessions = self.sessions.lock().unwrap();
        let live = sessions
            .get(&session.session_id)
            .ok_or_else(|| RuntimeError::SessionNotFound(session.session_id.clone()))?;
        Ok(live.app.render())
    }

    fn copy_in(
        &self,
        session: &ContainerSession,
        src: &Path,
        dest: &str,
    ) -> Result<(), RuntimeError> {
        let sessions = self.sessions.lock().unwrap();
        let live = sessions
            .get(&session.session_id)
            .ok_or_else(|| RuntimeError::SessionNotFound(session.session_id.clone()))?;
        let target = live.profile_dir.join(dest.trim_start_matches('/'));
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).map_err(|e| RuntimeError::Io(e.to_string()))?;
        }
        std::fs::copy(src, &target).map_err(|e| RuntimeError::Io(e.to_string()))?;
        Ok(())
    }

    fn teardown(&self, session: &mut ContainerSession) -> Result<(), RuntimeError> {
        self.sessions.lock().unwrap().remove(&session.session_id);
        session.state = SessionState::TornDown;
        Ok(())
    }
}

impl SutConfig {
    /// The repository location as a local path. The local runtime only
    /// supports local clones.
    fn sut_repo_path(&self) -> PathBuf {
        PathBuf::from(&self.repo_location)
    }
}

impl Geometry {
    /// Componentwise minimum; guards against an app definition larger
    /// than the configured display.
    fn min_with(self, other: Geometry) -> Geometry {
        Geometry {
            width: self.width.min(other.width),
            height: self.height.min(other.height),
        }
    }
}

/// Runtime that shells out to a container engine executable. Command
/// shapes follow the docker CLI, which podman mirrors.
pub struct CommandRuntime {
    engine: String,
}

impl CommandRuntime {
    pub fn new(engine: impl Into<String>) -> Self {
        Self {
            engine: engine.into(),
        }
    }

    fn run(&self, args: &[String]) -> Result<ExecOutput, RuntimeError> {
        let out = Command::new(&self.engine)
            .args(args)
            .output()
            .map_err(|e| RuntimeError::Io(format!("launching {}: {e}", self.engine)))?;
        Ok(ExecOutput {
            status: out.status.code().unwrap_or(-1),
            stdout: out.stdout,
            stderr: out.stderr,
        })
    }

    fn run_ok(&self, args: &[String]) -> Result<ExecOutput, RuntimeError> {
        let out = self.run(args)?;
        if out.status != 0 {
            return Err(RuntimeError::Driver(format!(
                "{} {} exited {}: {}",
                self.engine,
                args.join(" "),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(out)
    }
}

fn strings(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|p| p.to_string()).collect()
}

impl ContainerRuntime for CommandRuntime {
    fn build_image(&self, cfg: &SutConfig, revision: &str) -> Result<String, RuntimeError> {
        let tag = format!("{}-sut:{revision}", cfg.name);
        let build_cmd = cfg
            .build_command
            .replace("{revision}", revision)
            .replace("{repo}", &cfg.repo_location);
        let args = strings(&[
            "build",
            "-t",
            &tag,
            "--build-arg",
            &format!("SUT_REVISION={revision}"),
            "--build-arg",
            &format!("SUT_BUILD_COMMAND={build_cmd}"),
            &cfg.repo_location,
        ]);
        let out = self.run(&args)?;
        if out.status != 0 {
            return Err(RuntimeError::BuildFailure {
                revision: revision.to_string(),
                detail: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(tag)
    }

    fn start_session(
        &self,
        image_id: &str,
        revision: &str,
        cfg: &SutConfig,
        session_id: &str,
    ) -> Result<ContainerSession, RuntimeError> {
        self.run_ok(&strings(&["run", "-d", "--name", session_id, image_id]))?;
        // One SUT process per session, detached so exec calls can follow.
        self.run_ok(&strings(&[
            "exec",
            "-d",
            session_id,
            "sh",
            "-c",
            &cfg.launch_command,
        ]))?;
        Ok(ContainerSession {
            session_id: session_id.to_string(),
            image_ref: image_id.to_string(),
            sut_revision: revision.to_string(),
            display_geometry: cfg.display_geometry,
            state: SessionState::Running,
        })
    }

    fn exec_in_session(
        &self,
        session: &ContainerSession,
        argv: &[String],
    ) -> Result<ExecOutput, RuntimeError> {
        let mut args = strings(&["exec", &session.session_id]);
        args.extend(argv.iter().cloned());
        let out = self.run(&args)?;
        if out.status != 0 {
            return Err(RuntimeError::Driver(format!(
                "{:?} exited {}: {}",
                argv,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(out)
    }

    fn capture_screenshot(&self, session: &ContainerSession) -> Result<RgbImage, RuntimeError> {
        let out = self.run_ok(&strings(&[
            "exec",
            &session.session_id,
            "import",
            "-window",
            "root",
            "png:-",
        ]))?;
        let img = image::load_from_memory(&out.stdout)
            .map_err(|e| RuntimeError::Screenshot(e.to_string()))?;
        Ok(img.to_rgb8())
    }

    fn copy_in(
        &self,
        session: &ContainerSession,
        src: &Path,
        dest: &str,
    ) -> Result<(), RuntimeError> {
        self.run_ok(&strings(&[
            "cp",
            &src.display().to_string(),
            &format!("{}:{dest}", session.session_id),
        ]))?;
        Ok(())
    }

    fn teardown(&self, session: &mut ContainerSession) -> Result<(), RuntimeError> {
        self.run_ok(&strings(&["rm", "-f", &session.session_id]))?;
        session.state = SessionState::TornDown;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;
    use std::sync::atomic::{AtomicU32, Ordering};

    const APP_TOML: &str = r#"
title = "Demo"
geometry = { width = 200, height = 120 }

[[element]]
kind = "button"
id = "go"
label = "Go"
x = 20
y = 30
width = 60
height = 20
"#;

    fn git(dir: &Path, args: &[&str]) {
        let out = Command::new("git")
            .arg("-C")
            .arg(dir)
            .args(args)
            .env("GIT_AUTHOR_NAME", "Fixture")
            .env("GIT_AUTHOR_EMAIL", "fixture@example.com")
            .env("GIT_COMMITTER_NAME", "Fixture")
            .env("GIT_COMMITTER_EMAIL", "fixture@example.com")
            .env("GIT_AUTHOR_DATE", "2023-05-01T00:00:00Z")
            .env("GIT_COMMITTER_DATE", "2023-05-01T00:00:00Z")
            .output()
            .unwrap();
        assert!(out.status.success(), "git {args:?} failed");
    }

    fn sut_repo() -> (tempfile::TempDir, String) {
        let dir = tempfile::tempdir().unwrap();
        git(dir.path(), &["init", "-q", "-b", "main"]);
        std::fs::write(dir.path().join("app.toml"), APP_TOML).unwrap();
        git(dir.path(), &["add", "-A"]);
        git(dir.path(), &["commit", "-q", "-m", "app"]);
        let rev = Command::new("git")
            .arg("-C")
            .arg(dir.path())
            .args(["rev-parse", "HEAD"])
            .output()
            .unwrap();
        let rev = String::from_utf8(rev.stdout).unwrap().trim().to_string();
        (dir, rev)
    }

    fn sut_cfg(repo: &Path) -> SutConfig {
        SutConfig {
            name: "demo".into(),
            repo_location: repo.display().to_string(),
            container_image_ref: "base:1".into(),
            build_command: "make REV={revision}".into(),
            launch_command: "./app".into(),
            display_geometry: Geometry {
                width: 200,
                height: 120,
            },
            issue_tracker_kind: crate::config::TrackerKind::Mock,
        }
    }

    #[test]
    fn local_build_checks_out_and_parses_the_app() {
        let (repo, rev) = sut_repo();
        let cfg = sut_cfg(repo.path());
        let rt = LocalRuntime::new();
        let image = rt.build_image(&cfg, &rev).unwrap();
        assert_eq!(image, format!("local/demo@{rev}"));

        let err = rt.build_image(&cfg, "does-not-exist").unwrap_err();
        assert!(matches!(err, RuntimeError::BuildFailure { .. }), "{err}");
    }

    #[test]
    fn build_cache_skips_repeat_builds() {
        struct Counting(AtomicU32);
        impl ContainerRuntime for Counting {
            fn build_image(&self, _: &SutConfig, revision: &str) -> Result<String, RuntimeError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok(format!("img@{revision}"))
            }
            fn start_session(
                &self,
                _: &str,
                _: &str,
                _: &SutConfig,
                _: &str,
            ) -> Result<ContainerSession, RuntimeError> {
                unreachable!()
            }
            fn exec_in_session(
                &self,
                _: &ContainerSession,
                _: &[String],
            ) -> Result<ExecOutput, RuntimeError> {
                unreachable!()
            }
            fn capture_screenshot(&self, _: &ContainerSession) -> Result<RgbImage, RuntimeError> {
                unreachable!()
            }
            fn copy_in(&self, _: &ContainerSession, _: &Path, _: &str) -> Result<(), RuntimeError> {
                unreachable!()
            }
            fn teardown(&self, _: &mut ContainerSession) -> Result<(), RuntimeError> {
                unreachable!()
            }
        }

        let rt = Counting(AtomicU32::new(0));
        let cache = BuildCache::new();
        let cfg = sut_cfg(Path::new("unused"));
        let a = build_sut(&rt, &cache, &cfg, "r1").unwrap();
        let b = build_sut(&rt, &cache, &cfg, "r1").unwrap();
        let c = build_sut(&rt, &cache, &cfg, "r2").unwrap();
        assert_eq!(a, b);
        assert_ne!(a.build_id, c.build_id);
        assert_eq!(rt.0.load(Ordering::SeqCst), 2, "one build per revision");
    }

    #[test]
    fn local_sessions_execute_commands_and_stay_isolated() {
        let (repo, rev) = sut_repo();
        let cfg = sut_cfg(repo.path());
        let rt = LocalRuntime::new();
        let image = rt.build_image(&cfg, &rev).unwrap();
        let s1 = rt.start_session(&image, &rev, &cfg, "sess-a").unwrap();
        let s2 = rt.start_session(&image, &rev, &cfg, "sess-b").unwrap();

        assert_eq!(rt.profile_marker(&s1).unwrap(), "owner=sess-a\n");
        assert_eq!(rt.profile_marker(&s2).unwrap(), "owner=sess-b\n");

        let before = rt.capture_screenshot(&s2).unwrap();
        // Click the button in session A only.
        for argv in [
            vec!["xdotool".into(), "mousemove".into(), "50".into(), "40".into()],
            vec!["xdotool".into(), "click".into(), "1".into()],
        ] {
            rt.exec_in_session(&s1, &argv).unwrap();
        }
        let after_a = rt.capture_screenshot(&s1).unwrap();
        let after_b = rt.capture_screenshot(&s2).unwrap();
        assert_ne!(after_a.as_raw(), before.as_raw(), "A changed");
        assert_eq!(after_b.as_raw(), before.as_raw(), "B untouched");
    }

    #[test]
    fn local_exec_rejects_unknown_commands() {
        let (repo, rev) = sut_repo();
        let cfg = sut_cfg(repo.path());
        let rt = LocalRuntime::new();
        let image = rt.build_image(&cfg, &rev).unwrap();
        let s = rt.start_session(&image, &rev, &cfg, "sess").unwrap();
        let err = rt
            .exec_in_session(&s, &["rm".into(), "-rf".into(), "/".into()])
            .unwrap_err();
        assert!(matches!(err, RuntimeError::Driver(_)), "{err}");
    }

    #[test]
    fn teardown_invalidates_the_session() {
        let (repo, rev) = sut_repo();
        let cfg = sut_cfg(repo.path());
        let rt = LocalRuntime::new();
        let image = rt.build_image(&cfg, &rev).unwrap();
        let mut s = rt.start_session(&image, &rev, &cfg, "sess").unwrap();
        rt.teardown(&mut s).unwrap();
        assert_eq!(s.state, SessionState::TornDown);
        let err = rt.capture_screenshot(&s).unwrap_err();
        assert!(matches!(err, RuntimeError::SessionNotFound(_)), "{err}");
    }

    #[test]
    fn copy_in_lands_inside_the_profile() {
        let (repo, rev) = sut_repo();
        let cfg = sut_cfg(repo.path());
        let rt = LocalRuntime::new();
        let image = rt.build_image(&cfg, &rev).unwrap();
        let s = rt.start_session(&image, &rev, &cfg, "sess").unwrap();

        let src_dir = tempfile::tempdir().unwrap();
        let src = src_dir.path().join("seed.txt");
        std::fs::write(&src, "data").unwrap();
        rt.copy_in(&s, &src, "/inbox/seed.txt").unwrap();

        let sessions = rt.sessions.lock().unwrap();
        let live = &sessions[&s.session_id];
        let copied = std::fs::read_to_string(live.profile_dir.join("inbox/seed.txt")).unwrap();
        assert_eq!(copied, "data");
    }

    /// Engine stub that logs every invocation and answers canned output,
    /// so command shapes can be asserted without a container engine.
    fn stub_engine(dir: &Path, png: &Path) -> PathBuf {
        let log = dir.join("argv.log");
        let path = dir.join("fakeengine");
        let script = format!(
            "#!/bin/sh\nprintf '%s\\n' \"$*\" >> {log}\ncase \"$3\" in\n  import) cat {png} ;;\nesac\nexit 0\n",
            log = log.display(),
            png = png.display(),
        );
        std::fs::write(&path, script).unwrap();
        let mut perms = std::fs::metadata(&path).unwrap().permissions();
        use std::os::unix::fs::PermissionsExt;
        perms.set_mode(0o755);
        std::fs::set_permissions(&path, perms).unwrap();
        path
    }

    #[test]
    fn command_runtime_drives_the_engine_cli() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("shot.png");
        RgbImage::from_pixel(8, 4, image::Rgb([9, 9, 9]))
            .save(&png)
            .unwrap();
        let engine = stub_engine(dir.path(), &png);

        let cfg = sut_cfg(Path::new("/srv/sut"));
        let rt = CommandRuntime::new(engine.display().to_string());
        let image = rt.build_image(&cfg, "abc123").unwrap();
        assert_eq!(image, "demo-sut:abc123");
        let mut s = rt.start_session(&image, "abc123", &cfg, "sess-1").unwrap();
        rt.exec_in_session(&s, &["xdotool".into(), "click".into(), "1".into()])
            .unwrap();
        let shot = rt.capture_screenshot(&s).unwrap();
        assert_eq!((shot.width(), shot.height()), (8, 4));
        rt.teardown(&mut s).unwrap();

        let log = std::fs::read_to_string(dir.path().join("argv.log")).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(
            lines[0],
            "build -t demo-sut:abc123 --build-arg SUT_REVISION=abc123 \
             --build-arg SUT_BUILD_COMMAND=make REV=abc123 /srv/sut"
        );
        assert_eq!(lines[1], "run -d --name sess-1 demo-sut:abc123");
        assert_eq!(lines[2], "exec -d sess-1 sh -c ./app");
        assert_eq!(lines[3], "exec sess-1 xdotool click 1");
        assert_eq!(lines[4], "exec sess-1 import -window root png:-");
        assert_eq!(lines[5], "rm -f sess-1");
    }
}
