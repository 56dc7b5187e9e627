use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn miaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miaudit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 8] = [
    "--n-member",
    "40",
    "--n-nonmember",
    "40",
    "--length",
    "16",
    "--seed",
    "7",
];

fn synth_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["synth", "--out-dir", p(dir)];
    args.extend(SMALL);
    args.extend(extra);
    miaudit(&args)
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn synth_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&synth_into(&a, &["--jobs", "1"])), 0);
    assert_eq!(code(&synth_into(&b, &["--jobs", "4"])), 0);
    for f in [
        "records.jsonl",
        "scores.csv",
        "report.csv",
        "report.txt",
        "roc.csv",
    ] {
        let bytes = read(&a.join(f));
        assert!(bytes.starts_with(b"# provenance: miaudit "), "{f}");
        assert_eq!(bytes, read(&b.join(f)), "{f}");
    }
}

#[test]
fn eval_from_scores_matches_eval_from_records() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s");
    assert_eq!(code(&synth_into(&s, &[])), 0);
    let records = s.join("records.jsonl");
    let scores = tmp.path().join("scores.csv");

    let out = miaudit(&[
        "score",
        "--records",
        p(&records),
        "--out",
        p(&scores),
        "--jobs",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (e1, e2) = (tmp.path().join("e1"), tmp.path().join("e2"));
    assert_eq!(
        code(&miaudit(&[
            "eval",
            "--scores",
            p(&scores),
            "--out-dir",
            p(&e1)
        ])),
        0
    );
    assert_eq!(
        code(&miaudit(&[
            "eval",
            "--records",
            p(&records),
            "--out-dir",
            p(&e2),
            "--jobs",
            "1"
        ])),
        0
    );
    for f in ["report.csv", "report.txt", "roc.csv"] {
        assert_eq!(read(&e1.join(f)), read(&e2.join(f)), "{f}");
    }

    // re-scoring is idempotent
    let again = tmp.path().join("again.csv");
    assert_eq!(
        code(&miaudit(&[
            "score",
            "--records",
            p(&records),
            "--out",
            p(&again)
        ])),
        0
    );
    assert_eq!(read(&scores), read(&again));
}

#[test]
fn report_re_renders_existing_results() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s");
    assert_eq!(code(&synth_into(&s, &[])), 0);
    let grid = tmp.path().join("grid.txt");
    let out = miaudit(&[
        "report",
        "--input",
        p(&s.join("report.csv")),
        "--out",
        p(&grid),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read(&grid), read(&s.join("report.txt")));
    let text = String::from_utf8(read(&grid)).unwrap();
    // empty image and instruction slices have no scores
    assert!(text.lines().nth(2).unwrap().contains("N/A"));
}

#[test]
fn config_grid_and_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s");
    assert_eq!(code(&synth_into(&s, &[])), 0);
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "fpr_targets = [0.1]\n[grid]\nkinds = [\"max_renyi_k\", \"min_k_prob\"]\nalphas = [inf]\nk_percents = [0, 100]\nslices = [\"desp\"]\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("e");
    let records = s.join("records.jsonl");
    let args = [
        "eval",
        "--records",
        p(&records),
        "--config",
        p(&cfg),
        "--out-dir",
        p(&out_dir),
        "--fpr",
        "0.05",
    ];
    let out = miaudit(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = String::from_utf8(read(&out_dir.join("report.csv"))).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert!(lines[1].contains("tpr_at_5fpr"), "{}", lines[1]);
    assert_eq!(lines.len(), 2 + 4);
    assert!(lines[2].starts_with("max_renyi_k,inf,0,desp,member_low,"));
}

#[test]
fn score_writes_requested_file() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s");
    assert_eq!(code(&synth_into(&s, &[])), 0);
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "[[metric]]\nkind = \"perplexity\"\nslice = \"desp\"\n",
    )
    .unwrap();
    let out = tmp.path().join("scores.csv");
    let r = miaudit(&[
        "score",
        "--records",
        p(&s.join("records.jsonl")),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&r), 0);
    let text = String::from_utf8(read(&out)).unwrap();
    assert_eq!(text.lines().count(), 2 + 80);
    assert_eq!(
        text.lines().nth(1).unwrap(),
        "sample_id,label,kind,alpha,k_percent,slice,orientation,score,computable"
    );
}

#[test]
fn validate_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s");
    assert_eq!(code(&synth_into(&s, &[])), 0);
    let good = s.join("records.jsonl");
    let ok = miaudit(&["validate", "--records", p(&good)]);
    assert_eq!(code(&ok), 0);
    assert!(String::from_utf8_lossy(&ok.stdout)
        .starts_with("records: 80 (member 40, nonmember 40, unknown 0)"));

    let text = String::from_utf8(read(&good)).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.insert(3, "{\"id\": oops}");
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, lines.join("\n")).unwrap();
    let strict = miaudit(&["validate", "--records", p(&bad)]);
    assert_eq!(code(&strict), 2);
    let msg = stderr(&strict);
    assert_eq!(msg.lines().count(), 1, "{msg}");
    assert!(msg.contains("line 4"), "{msg}");

    let lenient = miaudit(&["validate", "--records", p(&bad), "--parse-mode", "lenient"]);
    assert_eq!(code(&lenient), 2);
    assert!(String::from_utf8_lossy(&lenient.stdout).contains("rejected: 1"));
}

#[test]
fn usage_errors_exit_1() {
    for args in [
        vec!["frobnicate"],
        vec!["score", "--records", "r.jsonl"],
        vec![
            "eval",
            "--scores",
            "a.csv",
            "--records",
            "b.jsonl",
            "--out-dir",
            "x",
        ],
        vec![
            "score",
            "--records",
            "r.jsonl",
            "--out",
            "s.csv",
            "--parse-mode",
            "loose",
        ],
        vec!["synth", "--alphabet-size", "1", "--out-dir", "x"],
    ] {
        let out = miaudit(&args);
        assert_eq!(code(&out), 1, "{args:?}: {}", stderr(&out));
        assert_eq!(stderr(&out).lines().count(), 1, "{args:?}");
    }
    assert_eq!(code(&miaudit(&["--help"])), 0);
    assert_eq!(code(&miaudit(&["--version"])), 0);
}

#[test]
fn data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.jsonl");
    let out = tmp.path().join("o.csv");
    assert_eq!(
        code(&miaudit(&[
            "score",
            "--records",
            p(&missing),
            "--out",
            p(&out)
        ])),
        2
    );

    let scores = tmp.path().join("scores.csv");
    fs::write(&scores, "# provenance: x\nnot,a,scores,file\n").unwrap();
    let r = miaudit(&["eval", "--scores", p(&scores), "--out-dir", p(tmp.path())]);
    assert_eq!(code(&r), 2);
}
