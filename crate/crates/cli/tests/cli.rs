use std::path::Path;
use std::process::{Command, Output};

fn srblab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srblab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SRBLAB_OUT")
        .env_remove("SRBLAB_WORKERS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_except_manifest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn every_subcommand_has_help() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["check", "srb", "hyptimes", "lyapunov", "entropy", "sweep", "unstable", "preimages", "run"] {
        let o = srblab(&[cmd, "--help"], tmp.path());
        assert!(o.status.success(), "{cmd}");
        let text = String::from_utf8_lossy(&o.stdout);
        assert!(text.contains("Usage"), "{cmd}");
        if cmd != "run" {
            assert!(text.contains("Outputs") && text.contains("--seed") && text.contains("--out"), "{cmd}: {text}");
        }
    }
    let o = srblab(&["sweep", "--help"], tmp.path());
    assert!(String::from_utf8_lossy(&o.stdout).contains("--t-range"));
}

#[test]
fn validation_failures_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = srblab(&["srb", "--matrix", "1,2;2,4"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model.matrix: matrix singular"));

    let o = srblab(&["check", "--family", "pitchfork", "--rho", "0.3"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model.rho") && stderr(&o).contains("(0.382, 1.000)"));

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "kind = \"srb\"\n[run]\niters = \"x\"\nbogus = 1\n[cones]\nwidth = -1\n").unwrap();
    let o = srblab(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for key in ["run.iters", "run.bogus", "cones.width"] {
        assert!(err.contains(key), "{err}");
    }

    std::fs::write(&cfg, "kind = \"srb\"\n[run\n").unwrap();
    let o = srblab(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"));

    let o = srblab(&["nonsense"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = blocker.join("sub");
    let o = srblab(&["preimages", "--family", "doubling", "--out", out.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn outputs_are_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    for w in ["1", "4"] {
        let out = tmp.path().join(format!("w{w}"));
        let o = srblab(
            &["srb", "--iters", "100", "--samples", "300", "--starts", "8", "--seed", "5", "--workers", w, "--out", out.to_str().unwrap()],
            tmp.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        seen.push(files_except_manifest(&out));
    }
    assert!(!seen[0].is_empty());
    assert_eq!(seen[0], seen[1]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("w1/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn out_dir_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_srblab"))
        .args(["preimages", "--family", "doubling", "--point", "0.25"])
        .current_dir(tmp.path())
        .env("SRBLAB_OUT", "from-env")
        .output()
        .unwrap();
    assert!(o.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("from-env/preimages.csv")).unwrap();
    assert_eq!(csv, "branch,x\n1,0.125\n2,0.625\n");
}

#[test]
fn config_file_and_flags_combine() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("hyp.toml");
    std::fs::write(&cfg, "kind = \"hyptimes\"\n[run]\niters = 200\nstarts = 4\n[constants]\nc = 0.2\n").unwrap();
    let o = srblab(&["hyptimes", "--config", cfg.to_str().unwrap(), "--out", "h"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("h/hyptimes.csv")).unwrap();
    assert!(csv.starts_with("orbit_id,n_detected,frequency_hat,birkhoff_avg\n"));
    assert_eq!(csv.lines().count(), 5);
    // a file for another experiment is refused
    let o = srblab(&["srb", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_accepts_t_range() {
    let tmp = tempfile::tempdir().unwrap();
    let o = srblab(
        &[
            "sweep", "--family", "pitchfork", "--t-range", "0:1:0.5", "--no-entropy", "--no-certify", "--iters", "50",
            "--samples", "200", "--out", "s",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let o = srblab(&["sweep", "--t-range", "0:1"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}
