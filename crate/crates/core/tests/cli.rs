use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

const TINY: &str = r#"{
  "world": {"n_train": 12, "n_eval": 3},
  "tokenizer": {"codebook_size": 16, "kmeans_iters": 4, "max_patches": 3000},
  "model": {"n_layers": 8, "d_model": 16, "n_heads": 2},
  "train": {"epochs": 1, "lr": 0.003},
  "rollout": {"max_steps": 5}
}"#;

fn uniwm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uniwm")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

/// Dataset plus one trained checkpoint, shared by the read-only tests.
struct Fixture {
    dir: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        std::fs::write(dir.join("tiny.json"), TINY).unwrap();
        assert_eq!(code(&uniwm(&["gen-data", "--config", "tiny.json", "--out", "data"], &dir)), 0);
        let o = uniwm(&["train", "--config", "tiny.json", "--data", "data", "--out", "run"], &dir);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        Fixture { dir }
    })
}

fn scratch() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("tiny.json"), TINY).unwrap();
    d
}

#[test]
fn missing_config_exits_2() {
    let d = scratch();
    let o = uniwm(&["gen-data", "--config", "absent.json", "--out", "data"], d.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.json"));
}

#[test]
fn unknown_config_key_exits_2() {
    let d = scratch();
    std::fs::write(d.path().join("bad.json"), r#"{"world": {"n_trian": 3}}"#).unwrap();
    assert_eq!(code(&uniwm(&["gen-data", "--config", "bad.json", "--out", "data"], d.path())), 2);
}

#[test]
fn gen_data_prints_manifest_and_refuses_rerun() {
    let d = scratch();
    let o = uniwm(&["gen-data", "--config", "tiny.json", "--out", "data"], d.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("manifest.json"));
    assert_eq!(code(&uniwm(&["gen-data", "--config", "tiny.json", "--out", "data"], d.path())), 3);
    assert_eq!(code(&uniwm(&["gen-data", "--config", "tiny.json", "--out", "data", "--force"], d.path())), 0);
}

#[test]
fn train_refuses_overwrite_and_resume_continues_steps() {
    let d = scratch();
    let p = d.path();
    assert_eq!(code(&uniwm(&["gen-data", "--config", "tiny.json", "--out", "data"], p)), 0);
    assert_eq!(code(&uniwm(&["train", "--config", "tiny.json", "--data", "data", "--out", "run"], p)), 0);
    assert_eq!(code(&uniwm(&["train", "--config", "tiny.json", "--data", "data", "--out", "run"], p)), 3);
    let first = std::fs::read_to_string(p.join("run/train_log.csv")).unwrap().lines().count();

    let mut two: Value = serde_json::from_str(TINY).unwrap();
    two["train"]["epochs"] = 2.into();
    std::fs::write(p.join("two.json"), two.to_string()).unwrap();
    let o = uniwm(&["train", "--config", "two.json", "--data", "data", "--out", "run", "--resume"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(p.join("run/train_log.csv")).unwrap();
    let mut steps: Vec<u64> = log.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(steps.len() + 1 > first);
    // one row per role, so steps repeat but never go back
    assert!(steps.windows(2).all(|w| w[1] >= w[0]), "steps went backwards");
    steps.dedup();
    assert!(steps.windows(2).all(|w| w[1] == w[0] + 1), "steps skipped");
    assert!(p.join("run/ckpt_epoch_002.ckpt").exists());
}

#[test]
fn loss_ablation_switches_both_losses() {
    let d = scratch();
    let p = d.path();
    assert_eq!(code(&uniwm(&["gen-data", "--config", "tiny.json", "--out", "data"], p)), 0);
    let mut cfg: Value = serde_json::from_str(TINY).unwrap();
    cfg["train"]["max_steps"] = 2.into();
    std::fs::write(p.join("short.json"), cfg.to_string()).unwrap();
    let o = uniwm(&["train", "--config", "short.json", "--data", "data", "--out", "run", "--loss-ablation", "ls-ls"], p);
    assert_eq!(code(&o), 0);
    let used = read_json(&p.join("run/config.json"));
    assert_eq!(used["train"]["plan_loss"], "label_smoothing");
    assert_eq!(used["train"]["world_loss"], "label_smoothing");
    let o = uniwm(&["train", "--config", "short.json", "--data", "data", "--out", "run2", "--loss-ablation", "l2-l2"], p);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_memory_modes_and_layers() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ck = f.dir.join("run/model.ckpt");
    let data = f.dir.join("data");
    let mut files = Vec::new();
    for m in ["off", "intra", "full"] {
        let out = dir.path().join(m);
        let o = uniwm(
            &["eval", "--checkpoint", ck.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--memory", m],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let r = read_json(&out.join("metrics.json"));
        assert_eq!(r["memory_mode"], m);
        assert_eq!(r["provenance"]["dataset_hash"].as_str().unwrap().len(), 64);
        assert!(out.join("metrics.csv").exists());
        files.push(std::fs::read(out.join("metrics.json")).unwrap());
    }
    assert!(files[0] != files[1] && files[1] != files[2] && files[0] != files[2]);

    let out = dir.path().join("l5");
    let o = uniwm(
        &["eval", "--checkpoint", ck.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--layers", "5"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(&out.join("metrics.json"))["memory_layers"], serde_json::json!([0, 1, 3, 5, 7]));
    let out = dir.path().join("lall");
    let o = uniwm(
        &["eval", "--checkpoint", ck.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--layers", "all", "--strategy", "both"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let r = read_json(&out.join("metrics.json"));
    assert_eq!(r["memory_layers"].as_array().unwrap().len(), 8);
    assert_eq!(r["strategy"], "predict_both");
    let o = uniwm(&["eval", "--checkpoint", "nope.ckpt", "--data", data.to_str().unwrap(), "--out", "x"], dir.path());
    assert_eq!(code(&o), 4);
}

#[test]
fn rollout_dump_frames_and_memtrace_schema() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ck = f.dir.join("run/model.ckpt");
    let data = f.dir.join("data");
    let o = uniwm(
        &[
            "rollout", "--checkpoint", ck.to_str().unwrap(), "--data", data.to_str().unwrap(), "--id", "12", "--out",
            dir.path().to_str().unwrap(), "--dump-frames", "--dump-memtrace",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let d = dir.path().join("rollout_000012");
    let actions = std::fs::read_to_string(d.join("actions.csv")).unwrap();
    let moves = actions.lines().skip(1).filter(|l| !l.contains("STOP")).count();
    let imag = std::fs::read_dir(&d).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("imag_")).count();
    assert_eq!(imag, moves);

    let schema = read_json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/memtrace.schema.json"));
    let trace = read_json(&d.join("memtrace.json"));
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&trace).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    let mut broken = trace.clone();
    broken["steps"][0]["events"][0]["event"] = "teleport".into();
    assert!(!validator.is_valid(&broken));

    let o = uniwm(&["rollout", "--checkpoint", ck.to_str().unwrap(), "--data", data.to_str().unwrap(), "--id", "999", "--out", "x"], dir.path());
    assert_eq!(code(&o), 4);
}

#[test]
fn report_tables_and_hash_warning() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ck = f.dir.join("run/model.ckpt");
    let data = f.dir.join("data");
    for m in ["off", "full"] {
        let out = dir.path().join(m);
        let o = uniwm(
            &["eval", "--checkpoint", ck.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--memory", m],
            dir.path(),
        );
        assert_eq!(code(&o), 0);
    }
    let o = uniwm(&["report", "off", "full", "--out", "rep"], dir.path());
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("rep/report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    for col in ["SR", "ATE", "RPE", "SSIM", "PSNR", "SSIM@5", "PSNR@1"] {
        assert!(lines[0].split(',').any(|c| c == col), "{col}");
    }
    assert!(!stdout(&o).contains("WARNING"));

    let mut other = read_json(&dir.path().join("full/metrics.json"));
    other["provenance"]["dataset_hash"] = "0".repeat(64).into();
    std::fs::create_dir_all(dir.path().join("other")).unwrap();
    std::fs::write(dir.path().join("other/metrics.json"), other.to_string()).unwrap();
    let o = uniwm(&["report", "off", "other"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("WARNING"));

    assert_eq!(code(&uniwm(&["report"], dir.path())), 2);
    assert_eq!(code(&uniwm(&["report", "missing"], dir.path())), 4);
}

#[test]
fn published_schemas_match_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&uniwm(&["schema", "--out", "s"], dir.path())), 0);
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas");
    for name in ["run_config.schema.json", "memtrace.schema.json"] {
        assert_eq!(read_json(&dir.path().join("s").join(name)), read_json(&root.join(name)), "{name} is stale");
    }
}
