mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mailkit::cfg::deserialize_many;
use mailkit::mail::parse_mail;

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("mailkit").chain(args.iter().copied());
    let code = mailkit::cli::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn translate_emits_parseable_mail() {
    let (code, out, err) = run(&["translate", p(&fixture_path("merge_sort_x86.asm"))]);
    assert_eq!(code, 0, "{err}");
    let program = parse_mail(&out).unwrap();
    assert_eq!(program.functions.len(), 1);
}

#[test]
fn cfg_reports_loops_and_parses_back() {
    let (code, out, err) = run(&[
        "cfg",
        "--normalize",
        "--loops",
        p(&fixture_path("merge_sort_x86.asm")),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("1 outer, 2 inner"), "{out}");
    let graphs = deserialize_many(&out).unwrap();
    assert_eq!(graphs.len(), 1);
    assert_eq!(graphs[0].len(), 13);

    let (code, dot, _) = run(&[
        "cfg",
        "--dot",
        p(&fixture_path("merge_sort_arm.asm")),
        "--arch",
        "arm",
    ]);
    assert_eq!(code, 0);
    assert!(dot.starts_with("digraph"));
}

#[test]
fn store_detect_and_match_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let funcs = fixture_path("functions_x86.asm");
    let (code, _, err) = run(&["build-templates", "--store", p(&store), p(&funcs)]);
    assert_eq!(code, 0, "{err}");
    assert!(store.join("index.json").is_file());

    let renamed = dir.path().join("renamed.asm");
    fs::write(
        &renamed,
        mailkit::synth::rename_registers(
            &fs::read_to_string(&funcs).unwrap(),
            mailkit::disasm::Arch::X86,
            5,
        ),
    )
    .unwrap();
    let (code, out, err) = run(&["detect", "--store", p(&store), "--exact", p(&renamed)]);
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(report["verdict"], "malware");

    let (code, out, _) = run(&[
        "detect",
        "--store",
        p(&store),
        "--threshold",
        "1.0",
        "--format",
        "text",
        p(&fixture_path("merge_sort_x86.asm")),
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("benign"), "{out}");

    let (code, out, err) = run(&["match", p(&funcs), p(&renamed)]);
    assert_eq!(code, 0, "{err}");
    assert!(!out.is_empty());
}

#[test]
fn xval_and_sweep_on_a_synthetic_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let (code, _, err) = run(&["synth-corpus", "--out", p(&corpus), "--benign", "10"]);
    assert_eq!(code, 0, "{err}");
    let manifest = corpus.join("manifest.txt");
    let args = [
        "xval",
        "--corpus",
        p(&manifest),
        "--folds",
        "3",
        "--train",
        "2",
        "--seed",
        "42",
        "--format",
        "json",
    ];
    let (code, a, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    let (_, b, _) = run(&args);
    assert_eq!(a, b);
    let cv: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(cv["rounds"].as_array().unwrap().len(), 3);

    let store = dir.path().join("store");
    let first = fs::read_dir(&corpus)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|q| {
            q.file_name()
                .unwrap()
                .to_str()
                .unwrap()
                .starts_with("malware_")
        })
        .min()
        .unwrap();
    assert_eq!(
        run(&["build-templates", "--store", p(&store), p(&first)]).0,
        0
    );
    let (code, out, err) = run(&[
        "sweep",
        "--store",
        p(&store),
        "--corpus",
        p(&manifest),
        "--thresholds",
        "0.25,0.5,1.0",
    ]);
    assert_eq!(code, 0, "{err}");
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{out}");
    assert!(!rows[0].contains("(0/30)"), "{out}");
}

#[test]
fn errors_use_distinct_exit_codes() {
    assert_eq!(run(&["frobnicate"]).0, 2);
    assert_eq!(run(&["xval", "--corpus", "x", "--folds", "1"]).0, 2);
    let (code, _, err) = run(&["translate", "/nonexistent/file.asm"]);
    assert_eq!(code, 1);
    assert!(!err.is_empty());
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("translate"));
}

#[test]
fn binary_runs() {
    let out = Command::new(env!("CARGO_BIN_EXE_mailkit"))
        .args(["cfg", "--loops"])
        .arg(fixture_path("merge_sort_x86.asm"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("1 outer, 2 inner"));
}
