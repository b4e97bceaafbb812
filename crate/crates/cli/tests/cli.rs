use std::fs;
use std::path::Path;

use assert_cmd::Command;

const SUBJECT: &str = "#include <stdio.h>\n\
int main(void) {\n\
    char b[8] = {0};\n\
    size_t n = fread(b, 1, 7, stdin);\n\
    if (n > 2 && b[0] == 'K')\n\
        puts(\"k\");\n\
    return 0;\n\
}\n";

fn slicefuzz() -> Command {
    Command::cargo_bin("slicefuzz").unwrap()
}

fn subject(dir: &Path) {
    fs::write(dir.join("s.c"), SUBJECT).unwrap();
    fs::create_dir_all(dir.join("seeds")).unwrap();
    fs::write(dir.join("seeds/a"), "abc").unwrap();
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let p = dir.join("campaign.toml");
    fs::write(
        &p,
        format!(
            "[subject]\nsources = [\"s.c\"]\n\n[campaign]\nmode = \"deterministic\"\n\
             max_execs = 50\nplateau_secs = 0.01\nwall_secs = 60\n{extra}"
        ),
    )
    .unwrap();
    p
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    slicefuzz()
        .args(["run", "--config"])
        .arg(dir.path().join("nope.toml"))
        .assert()
        .code(2);
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    subject(dir.path());
    let cfg = write_config(dir.path(), "plateau = 3\n");
    slicefuzz().args(["run", "--config"]).arg(cfg).assert().code(2);
}

#[test]
fn compiler_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    subject(dir.path());
    let cfg = dir.path().join("campaign.toml");
    fs::write(
        &cfg,
        "[subject]\nsources = [\"s.c\"]\ncflags = [\"-Werror=this-flag-does-not-exist\"]\n",
    )
    .unwrap();
    slicefuzz().args(["run", "--config"]).arg(cfg).assert().code(3);
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    subject(dir.path());
    let cfg = write_config(dir.path(), "");
    let out = slicefuzz().args(["run", "--config"]).arg(&cfg).assert().success();
    let summary: serde_json::Value = serde_json::from_slice(&out.get_output().stdout).unwrap();
    assert_eq!(summary["execs"], 50);
    for f in ["summary.json", "roadblocks.csv", "coverage_over_time.csv"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f} missing");
    }
    let out = slicefuzz()
        .arg("report")
        .arg(dir.path().join("out"))
        .assert()
        .success();
    let again: serde_json::Value = serde_json::from_slice(&out.get_output().stdout).unwrap();
    assert_eq!(again, summary);
}

#[test]
fn trace_and_slice() {
    let dir = tempfile::tempdir().unwrap();
    subject(dir.path());
    let cfg = write_config(dir.path(), "");
    slicefuzz().args(["run", "--config"]).arg(&cfg).assert().success();
    let bin = dir.path().join("out/build/subject.traced");
    let out = slicefuzz()
        .args(["trace", "--target"])
        .arg(&bin)
        .arg("--input")
        .arg(dir.path().join("seeds/a"))
        .args(["--stop-at", "s.c:5"])
        .assert()
        .success();
    let text = String::from_utf8(out.get_output().stdout.clone()).unwrap();
    let records: Vec<&str> = text.lines().filter(|l| !l.starts_with(['!', '#'])).collect();
    assert_eq!(records.last(), Some(&"s.c:5:0"));
    assert!(text.contains("truncated_at="));

    let out = slicefuzz()
        .args(["slice", "--target-cond", "s.c:5", "--arm", "0", "--seed"])
        .arg(dir.path().join("seeds/a"))
        .arg("--source")
        .arg(dir.path().join("s.c"))
        .assert()
        .success();
    let text = String::from_utf8(out.get_output().stdout.clone()).unwrap();
    assert!(text.contains("fread"), "slice lacks the read:\n{text}");
}
