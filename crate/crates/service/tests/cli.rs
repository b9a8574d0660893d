use std::path::Path;
use std::process::Command;

use clap::Parser;
use roleplay_service::cli::{run, Cli};

const CONFIG: &str = r#"corpus_dir = "corpus"

[backends.a]
kind = "mock"
script = "a.txt"
cycle = true

[backends.b]
kind = "mock"
script = "b.txt"
cycle = true

[backends.down]
kind = "http"
endpoint = "http://127.0.0.1:1"
model = "m"
timeout_secs = 1
"#;

const INT_SETUP: &str = r#"id = "{id}"

[config]
task = "int"
image_description = "a pear with arms and legs"
backend_id = "{backend}"
"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("config.toml"), CONFIG).unwrap();
    std::fs::write(root.join("a.txt"), "Oui, une poire.\nElle a des bras !\n").unwrap();
    std::fs::write(
        root.join("b.txt"),
        "Je vois une poire. Elle a des bras. Elle a des jambes. Elle danse.\nC'est drôle.\n",
    )
    .unwrap();
    for (id, backend) in [("int-a", "a"), ("int-b", "b"), ("int-down", "down")] {
        let body = INT_SETUP.replace("{id}", id).replace("{backend}", backend);
        std::fs::write(root.join(format!("{id}.toml")), body).unwrap();
    }
    dir
}

fn p(root: &Path, name: &str) -> String {
    root.join(name).to_string_lossy().into_owned()
}

fn exec(args: &[&str], stdin: &str) -> (Result<(), u8>, String) {
    let cli = Cli::try_parse_from(std::iter::once("roleplay").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    let r = run(cli, &mut stdin.as_bytes(), &mut out).map_err(|f| f.code());
    (r, String::from_utf8(out).unwrap())
}

fn selfchat(root: &Path, a: &str, b: &str, count: &str) -> (Result<(), u8>, String) {
    exec(
        &[
            "--config",
            &p(root, "config.toml"),
            "selfchat",
            "--setup-a",
            &p(root, &format!("{a}.toml")),
            "--setup-b",
            &p(root, &format!("{b}.toml")),
            "--rounds",
            "3",
            "--count",
            count,
        ],
        "",
    )
}

#[test]
fn exit_codes_from_the_binary() {
    let dir = workspace();
    let bin = env!("CARGO_BIN_EXE_roleplay");
    let missing = Command::new(bin)
        .args(["--config", "/nonexistent/roleplay.toml", "report", "elo"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    let down = Command::new(bin)
        .args([
            "--config",
            &p(dir.path(), "config.toml"),
            "chat",
            "--task",
            "int",
        ])
        .args(["--image", "une poire", "--backend", "down"])
        .stdin(std::process::Stdio::null())
        .output()
        .unwrap();
    // no input: the session is created and the loop ends at once
    assert_eq!(down.status.code(), Some(0));
    let mut child = Command::new(bin)
        .args([
            "--config",
            &p(dir.path(), "config.toml"),
            "chat",
            "--task",
            "int",
        ])
        .args(["--image", "une poire", "--backend", "down"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child.stdin.take().unwrap().write_all(b"Bonjour\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selfchat_then_offline_commands() {
    let dir = workspace();
    let root = dir.path();
    let (r, out) = selfchat(root, "int-a", "int-b", "4");
    assert_eq!(r, Ok(()));
    assert!(out.starts_with("4/4 valid"), "{out}");

    let corpus = p(root, "corpus");
    let (r, out) = exec(&["stats", "--corpus", &corpus, "--group", "int"], "");
    assert_eq!(r, Ok(()));
    let header = out.lines().next().unwrap();
    assert!(
        header.starts_with("Config.") && header.ends_with("Conv"),
        "{out}"
    );
    assert_eq!(out.lines().count(), 2);
    assert!(out.lines().nth(1).unwrap().starts_with("int-a"));

    // side B always opens with four sentences, so its too-long rate is set
    // by the script
    let (r, out) = exec(&["filter-audit", "--corpus", &corpus, "--json"], "");
    assert_eq!(r, Ok(()));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let rows = v["int"].as_array().unwrap();
    let b = rows.iter().find(|r| r["setup"] == "int-b").unwrap();
    assert!(b["detected"]["too_long"].as_f64().unwrap() > 0.0);
    let a = rows.iter().find(|r| r["setup"] == "int-a").unwrap();
    assert_eq!(a["detected"]["too_long"].as_f64(), Some(0.0));

    // conversations belong to side A's setup, so only int-a is present yet
    let (r, _) = exec(&["arena", "pairs", "--corpus", &corpus], "");
    assert_eq!(r, Err(1));
    let (r, _) = selfchat(root, "int-b", "int-a", "4");
    assert_eq!(r, Ok(()));
    let args = [
        "arena", "pairs", "--corpus", &corpus, "--min", "3", "--max", "3",
    ];
    let (r, out) = exec(&args, "");
    assert_eq!(r, Ok(()));
    assert_eq!(out.lines().count(), 3);
    assert_eq!(exec(&args, "").1, out);
}

#[test]
fn selfchat_with_a_dead_backend_exits_two() {
    let dir = workspace();
    let (r, out) = selfchat(dir.path(), "int-a", "int-down", "2");
    assert_eq!(r, Err(2));
    assert!(out.starts_with("0/2 valid"), "{out}");
}

#[test]
fn config_errors_exit_one() {
    let dir = workspace();
    let root = dir.path();
    let (r, _) = exec(&["report", "elo"], "");
    assert_eq!(r, Err(1));
    std::fs::write(root.join("bad.toml"), "listen = 3\n").unwrap();
    let (r, _) = exec(&["--config", &p(root, "bad.toml"), "report", "elo"], "");
    assert_eq!(r, Err(1));
    let (r, _) = exec(
        &["stats", "--corpus", &p(root, "corpus"), "--group", "nope"],
        "",
    );
    assert_eq!(r, Err(1));
}
