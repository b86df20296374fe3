use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bprg::checkpoint::load_checkpoint;
use bprg::report::read_trajectory_csv;
use bprg::trajectory::Phase;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small.json")
}

fn bprg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bprg"))
        .args(args)
        .output()
        .expect("spawn bprg")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let o = bprg(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_flag_exit_1() {
    assert_eq!(bprg(&["frobnicate"]).status.code(), Some(1));
    let o = bprg(&["run", "--config", "x.json", "--out-dir", "d", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus"));
    assert_eq!(
        bprg(&["prune", "--ckpt", "k", "--sparsity", "half", "--out", "o"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn help_exits_0() {
    let o = bprg(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("regrow"));
}

#[test]
fn run_writes_all_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bprg(&["run", "--config", s(&fixture()), "--out-dir", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for name in ["trajectory.csv", "trajectory.svg", "final.bprg"] {
        let (x, y) = (
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
        );
        assert_eq!(x, y, "{name} differs between runs");
    }
    let recs = read_trajectory_csv(&a.join("trajectory.csv")).unwrap();
    // three cadence records, the baseline, two prune and two regrow steps
    assert_eq!(recs.len(), 3 + 1 + 2 + 2);
    assert_eq!(recs.iter().filter(|r| r.phase == Phase::Regrow).count(), 2);
    let (model, ms) = load_checkpoint(&a.join("final.bprg")).unwrap();
    assert_eq!(ms.active_count(), recs.last().unwrap().active_params);
    assert_eq!(model.prunable_count(), ms.total());
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let read = |seed: &str| {
        let out = dir.path().join(seed);
        let o = bprg(&[
            "--seed",
            seed,
            "run",
            "--config",
            s(&fixture()),
            "--out-dir",
            s(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(out.join("final.bprg")).unwrap()
    };
    assert_ne!(read("1"), read("2"));
}

#[test]
fn bad_config_exits_2_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture())
        .unwrap()
        .replace("\"s_end\"", "\"s_ending\"");
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, text).unwrap();
    let o = bprg(&[
        "run",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("regrow"), "{}", stderr(&o));
}

#[test]
fn train_prune_regrow_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let cfg = fixture();

    let o = bprg(&["train", "--config", s(&cfg), "--out", s(&p("dense.bprg"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (dense, ms) = load_checkpoint(&p("dense.bprg")).unwrap();
    assert_eq!(ms.pruned_count(), 0);

    let o = bprg(&[
        "prune",
        "--ckpt",
        s(&p("dense.bprg")),
        "--sparsity",
        "0.9",
        "--mode",
        "one-shot",
        "--out",
        s(&p("p.bprg")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (_, ms) = load_checkpoint(&p("p.bprg")).unwrap();
    assert_eq!(
        ms.active_count(),
        bprg::sparsity::keep_count(ms.total(), 0.9)
    );

    // Rewinding everything without fine-tuning restores the dense weights.
    let o = bprg(&[
        "regrow",
        "--ckpt",
        s(&p("p.bprg")),
        "--to-sparsity",
        "0",
        "--criterion",
        "rewind",
        "--init",
        "rewind",
        "--out",
        s(&p("r.bprg")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (restored, ms) = load_checkpoint(&p("r.bprg")).unwrap();
    assert_eq!(ms.pruned_count(), 0);
    assert_eq!(restored, dense);

    let o = bprg(&[
        "prune",
        "--ckpt",
        s(&p("dense.bprg")),
        "--sparsity",
        "0.8",
        "--mode",
        "iterative",
        "--steps",
        "3",
        "--config",
        s(&cfg),
        "--out",
        s(&p("it.bprg")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("test_accuracy"));

    let o = bprg(&[
        "regrow",
        "--ckpt",
        s(&p("it.bprg")),
        "--to-sparsity",
        "0.6",
        "--criterion",
        "gradient",
        "--config",
        s(&cfg),
        "--out",
        s(&p("g.bprg")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (_, ms) = load_checkpoint(&p("g.bprg")).unwrap();
    assert_eq!(
        ms.active_count(),
        bprg::sparsity::keep_count(ms.total(), 0.6)
    );
}

#[test]
fn regrow_usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("d.bprg");
    assert_eq!(
        bprg(&["train", "--config", s(&fixture()), "--out", s(&ck)])
            .status
            .code(),
        Some(0)
    );
    let pruned = dir.path().join("p.bprg");
    assert_eq!(
        bprg(&[
            "prune",
            "--ckpt",
            s(&ck),
            "--sparsity",
            "0.5",
            "--out",
            s(&pruned)
        ])
        .status
        .code(),
        Some(0)
    );

    let gradient_without_data = bprg(&[
        "regrow",
        "--ckpt",
        s(&pruned),
        "--to-sparsity",
        "0.2",
        "--criterion",
        "gradient",
        "--out",
        "x",
    ]);
    assert_eq!(gradient_without_data.status.code(), Some(1));
    let upward = bprg(&[
        "regrow",
        "--ckpt",
        s(&pruned),
        "--to-sparsity",
        "0.7",
        "--criterion",
        "random",
        "--out",
        "x",
    ]);
    assert_eq!(upward.status.code(), Some(1));
    let out_of_range = bprg(&["prune", "--ckpt", s(&ck), "--sparsity", "1.5", "--out", "x"]);
    assert_eq!(out_of_range.status.code(), Some(1));
}

#[test]
fn corrupt_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bprg");
    std::fs::write(&junk, b"XXXX\x01\x00\x00\x00").unwrap();
    let o = bprg(&[
        "prune",
        "--ckpt",
        s(&junk),
        "--sparsity",
        "0.5",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("magic"));

    let missing = bprg(&[
        "report",
        "--csv",
        s(&dir.path().join("none.csv")),
        "--svg",
        "x.svg",
    ]);
    assert_eq!(missing.status.code(), Some(2));

    let csv = dir.path().join("t.csv");
    std::fs::write(&csv, "phase,step\npretrain,0\n").unwrap();
    assert_eq!(
        bprg(&[
            "report",
            "--csv",
            s(&csv),
            "--svg",
            s(&dir.path().join("t.svg"))
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn report_replots_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        bprg(&["run", "--config", s(&fixture()), "--out-dir", s(&out)])
            .status
            .code(),
        Some(0)
    );
    let svg = dir.path().join("again.svg");
    let o = bprg(&[
        "report",
        "--csv",
        s(&out.join("trajectory.csv")),
        "--svg",
        s(&svg),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let count = |tag: &str| doc.descendants().filter(|n| n.has_tag_name(tag)).count();
    assert_eq!(count("circle") + count("rect") + count("polygon"), 8);
}
