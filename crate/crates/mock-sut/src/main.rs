//! Standalone build of the bundled mock GUI.
//!
//! Runs the deterministic demo application as its own process so a
//! container-based deployment can exercise exactly the command surface the
//! in-process runtime uses. The window definition is loaded from a TOML
//! file; commands then arrive one per line on stdin and each gets a one
//! line reply on stdout:
//!
//! ```text
//! xdotool mousemove 50 40        ok
//! xdotool type --delay 0 "hi x"  ok
//! screenshot /tmp/shot.png       ok /tmp/shot.png
//! geometry                       ok 200x120
//! quit                           (exits; EOF works too)
//! ```
//!
//! Failures answer `err <detail>` and leave the app state untouched, so a
//! driver can run the protocol synchronously and treat any `err` as a
//! failed input step.

use std::io::{BufRead, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ripple_core::mock_gui::{parse_definition, parse_xdotool, MockGuiApp};

/// Deterministic GUI application driven by line commands on stdin.
#[derive(Parser)]
#[command(name = "ripple-mock-sut", version)]
struct Cli {
    /// TOML window definition (title, geometry, widgets).
    app_definition: PathBuf,

    /// Directory for the app's private profile; a temporary directory is
    /// used when omitted.
    #[arg(long)]
    profile_dir: Option<PathBuf>,

    /// Session identifier written into the profile marker.
    #[arg(long, default_value = "standalone")]
    session_id: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let toml_text = match std::fs::read_to_string(&cli.app_definition) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("error: reading {}: {e}", cli.app_definition.display());
            return ExitCode::from(2);
        }
    };
    let def = match parse_definition(&toml_text) {
        Ok(def) => def,
        Err(e) => {
            eprintln!("error: {}: {e}", cli.app_definition.display());
            return ExitCode::from(2);
        }
    };

    // Keep the temp dir handle alive for the whole serve loop; dropping it
    // would delete the profile out from under the app.
    let temp;
    let profile_dir = match cli.profile_dir {
        Some(dir) => dir,
        None => {
            temp = match tempfile::tempdir() {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: creating profile dir: {e}");
                    return ExitCode::from(1);
                }
            };
            temp.path().join("profile")
        }
    };

    let mut app = match MockGuiApp::new(def, profile_dir, &cli.session_id) {
        Ok(app) => app,
        Err(e) => {
            eprintln!("error: starting app: {e}");
            return ExitCode::from(1);
        }
    };

    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    match serve(&mut app, stdin.lock(), BufWriter::new(stdout.lock())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Reads commands until `quit` or EOF, answering each on `output`.
fn serve(
    app: &mut MockGuiApp,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match respond(app, line) {
            Reply::Ok(None) => writeln!(output, "ok")?,
            Reply::Ok(Some(detail)) => writeln!(output, "ok {detail}")?,
            Reply::Err(msg) => writeln!(output, "err {msg}")?,
            Reply::Quit => break,
        }
        output.flush()?;
    }
    Ok(())
}

enum Reply {
    Ok(Option<String>),
    Err(String),
    Quit,
}

fn respond(app: &mut MockGuiApp, line: &str) -> Reply {
    let argv = match split_command(line) {
        Ok(argv) => argv,
        Err(e) => return Reply::Err(e),
    };
    match argv[0].as_str() {
        "quit" => Reply::Quit,
        "geometry" => {
            let g = app.geometry();
            Reply::Ok(Some(format!("{}x{}", g.width, g.height)))
        }
        "screenshot" => {
            if argv.len() != 2 {
                return Reply::Err("usage: screenshot <path>".into());
            }
            match app.render().save(&argv[1]) {
                Ok(()) => Reply::Ok(Some(argv[1].clone())),
                Err(e) => Reply::Err(format!("saving {}: {e}", argv[1])),
            }
        }
        "xdotool" => match parse_xdotool(&argv) {
            Ok(events) => {
                for event in events {
                    app.handle(event);
                }
                Reply::Ok(None)
            }
            Err(e) => Reply::Err(e),
        },
        other => Reply::Err(format!("unknown command {other:?}")),
    }
}

/// Splits a command line into argv, honoring double quotes so typed text
/// can carry spaces: `xdotool type --delay 0 "hello world"`.
fn split_command(line: &str) -> Result<Vec<String>, String> {
    let mut argv = Vec::new();
    let mut current = String::new();
    let mut in_quotes = false;
    let mut has_token = false;
    for ch in line.chars() {
        match ch {
            '"' => {
                in_quotes = !in_quotes;
                has_token = true;
            }
            c if c.is_whitespace() && !in_quotes => {
                if has_token {
                    argv.push(std::mem::take(&mut current));
                    has_token = false;
                }
            }
            c => {
                current.push(c);
                has_token = true;
            }
        }
    }
    if in_quotes {
        return Err("unterminated quote".into());
    }
    if has_token {
        argv.push(current);
    }
    Ok(argv)
}
