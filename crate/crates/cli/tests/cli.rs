use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn tradeoff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tradeoff"))
        .args(args)
        .current_dir(root())
        .env_remove("TRADEOFF_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn analyze_prints_totals_and_checks_golden_cells() {
    let o = tradeoff(&[
        "analyze",
        "specs/baseline.spec",
        "--expect-golden",
        "baseline",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("48,858") && out.contains("3,273,504"), "{out}");
    assert!(out.contains("golden OK"));

    let o = tradeoff(&["analyze", "specs/optimized.spec", "--kv"]);
    assert!(stdout(&o).contains("total.params=13874\n"));

    let o = tradeoff(&[
        "analyze",
        "specs/optimized.spec",
        "--expect-golden",
        "baseline",
    ]);
    assert_eq!(o.status.code(), Some(7));

    let o = tradeoff(&["analyze", "baseline", "optimized"]);
    assert!(stdout(&o).contains("ratio 235.95x"), "{}", stdout(&o));
}

#[test]
fn analyze_reports_spec_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.spec");
    std::fs::write(&empty, "").unwrap();
    let o = tradeoff(&["analyze", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no layers"), "{}", stderr(&o));

    let bad = dir.path().join("bad.spec");
    std::fs::write(&bad, "input h=28 w=28 c=1\nmaxpool window=3\n").unwrap();
    assert_eq!(
        tradeoff(&["analyze", bad.to_str().unwrap()]).status.code(),
        Some(3)
    );
    assert_eq!(
        tradeoff(&["analyze", "/no/such.spec"]).status.code(),
        Some(2)
    );
    assert_eq!(tradeoff(&["analyze"]).status.code(), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let o = tradeoff(&["gradcheck", "--layers", "dense,relu", "--cases", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("dense") && !out.contains("conv"), "{out}");

    let o = tradeoff(&[
        "gradcheck",
        "--layers",
        "conv",
        "--inject-fault",
        "conv-sign-flip",
    ]);
    assert_eq!(o.status.code(), Some(8));
    assert!(stderr(&o).contains("failed for: conv"), "{}", stderr(&o));
}

#[test]
fn table_search_selects_and_reports_infeasibility() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = tradeoff(&[
        "search",
        "plans/reference.plan",
        "--oracle",
        "table",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let selected = std::fs::read_to_string(dir.path().join("selected.spec")).unwrap();
    assert!(
        selected.contains("conv k=5 out=2\nmaxpool window=4\n"),
        "{selected}"
    );
    let frontier = std::fs::read_to_string(dir.path().join("frontier.csv")).unwrap();
    assert!(frontier.starts_with("size,accuracy,id\n"));
    let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert!(curves.contains("2,97.38,96.20,94.28"), "{curves}");
    let ledger = std::fs::read_to_string(dir.path().join("ledger.txt")).unwrap();

    let o = tradeoff(&[
        "search",
        "plans/reference.plan",
        "--oracle",
        "table",
        "--threshold",
        "0.99",
        "--out",
        out,
    ]);
    assert!(
        stdout(&o).contains("selected fc1_width:128"),
        "{}",
        stdout(&o)
    );
    // the rerun resumed from the ledger instead of appending duplicates
    assert_eq!(
        std::fs::read_to_string(dir.path().join("ledger.txt")).unwrap(),
        ledger
    );

    let o = tradeoff(&[
        "search",
        "plans/reference.plan",
        "--oracle",
        "table",
        "--threshold",
        "1.0",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(6));
    assert!(stderr(&o).contains("best found 0.9929"), "{}", stderr(&o));
    assert!(!dir.path().join("selected.spec").exists());
}

#[test]
fn missing_data_is_actionable() {
    let o = tradeoff(&[
        "train",
        "optimized",
        "--data-dir",
        "/nonexistent",
        "--iterations",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(4));
    let err = stderr(&o);
    assert!(
        err.contains("train-images-idx3-ubyte") && err.contains("fetch-mnist.sh"),
        "{err}"
    );
}

#[test]
fn train_is_reproducible_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = tradeoff(&[
            "train",
            "specs/optimized.spec",
            "--iterations",
            "30",
            "--seed",
            "4",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        out
    };
    let a = run("a");
    let b = run("b");
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "checkpoint.bin"), read(&b, "checkpoint.bin"));
    assert_eq!(read(&a, "results.txt"), read(&b, "results.txt"));

    let c = dir.path().join("c");
    let manifest = a.join("manifest.txt");
    let o = tradeoff(&[
        "--replay",
        manifest.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["checkpoint.bin", "results.txt", "loss.csv"] {
        assert_eq!(read(&a, f), read(&c, f), "{f}");
    }
}
