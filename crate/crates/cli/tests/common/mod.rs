#![allow(dead_code)]

use std::path::{Path, PathBuf};

use qvec_cli::{dispatch, RunReport};
use qvec_core::{Checkpoint, Tensor};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares `actual` with a committed golden file. `QVEC_BLESS=1`
/// rewrites the file instead.
pub fn check_golden(name: &str, actual: &[u8]) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("QVEC_BLESS").is_some() {
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!(
            "{} differs from the committed golden file",
            path.display()
        ))
    }
}

/// Runs the CLI in-process with `--report <dir>/<report>` appended.
pub fn run(args: &[&str], report: &Path) -> (i32, RunReport, String) {
    let mut argv = vec!["qvec".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.push("--report".into());
    argv.push(report.display().to_string());
    let out = dispatch(argv);
    let text = std::fs::read_to_string(report).expect("report written");
    (out.code, out.report.expect("parsed"), text)
}

pub fn ok(args: &[&str], report: &Path) -> RunReport {
    let (code, r, _) = run(args, report);
    assert_eq!(code, 0, "{args:?} failed: {:?}", r.error);
    r
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}

/// Fixed checkpoint exercising signed zeros, subnormals, extremes and
/// non-dyadic values. Committed as `tiny.qvc`.
pub fn golden_checkpoint() -> Checkpoint {
    let w = vec![
        0.0,
        -0.0,
        1.0,
        -1.5,
        0.1,
        f32::MIN_POSITIVE,
        1e-40,
        -3.4028235e38,
        std::f32::consts::PI,
        -7.25e-3,
        65504.0,
        1.0 / 3.0,
    ];
    let b = vec![0.5, -2.0, 1e-7];
    let mut c = Checkpoint::new()
        .with_meta("task", "golden")
        .with_meta("seed", "7");
    c.insert("backbone.0.weight", Tensor::new(vec![3, 4], w).unwrap())
        .unwrap();
    c.insert("backbone.0.bias", Tensor::new(vec![3], b).unwrap())
        .unwrap();
    c
}
