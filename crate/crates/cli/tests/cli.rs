use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn privflock(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_privflock")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL: [&str; 6] = ["--sim.duration", "15", "--nn.hidden", "16", "--ga.elitism_count", "1"];

fn cooptimize(archive: &Path, seed: &str) -> Output {
    let mut args = vec!["--archive", archive.to_str().unwrap(), "--seed", seed, "cooptimize", "--fresh-discriminator"];
    args.extend(["--generations", "2", "--population", "4"]);
    args.extend(SMALL);
    privflock(&args)
}

#[test]
fn pretrain_writes_report_and_honors_shortcuts() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.ckpt");
    let mut args = vec!["pretrain", "--output", ckpt.to_str().unwrap(), "--samples", "20", "--epochs", "2"];
    args.extend(SMALL);
    let out = privflock(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(ckpt.is_file());
    let report = fs::read_to_string(dir.path().join("pretrain_report.csv")).unwrap();
    assert!(report.starts_with("train_flights,test_flights"));
    assert!(report.lines().next().unwrap().contains("test_accuracy"));
    let echoed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("pretrain_config.json")).unwrap()).unwrap();
    assert_eq!(echoed["coopt"]["pretrain"]["sample_count"], 20);
    assert_eq!(echoed["coopt"]["pretrain"]["epochs"], 2);
}

#[test]
fn missing_trajectory_kind_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"coopt": {"pretrain": {"hand_tuned": []}}}"#).unwrap();
    let out = privflock(&["--config", cfg.to_str().unwrap(), "pretrain", "--output", "/nonexistent/x.ckpt"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("coopt.pretrain"), "{}", stderr(&out));
}

#[test]
fn unknown_and_invalid_fields_name_their_path() {
    let out = privflock(&["pretrain", "--ga.mutation_rate", "0.1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("ga.mutation_rate"), "{}", stderr(&out));
    let out = privflock(&["pretrain", "--ga.mutation_prob", "2"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("ga.mutation_prob"), "{}", stderr(&out));
}

#[test]
fn missing_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("run");
    let out = privflock(&["--archive", archive.to_str().unwrap(), "cooptimize", "--checkpoint", "absent.ckpt"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("absent.ckpt"));
    let out = privflock(&["evaluate", "noise", "--checkpoint", "gone.ckpt"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("gone.ckpt"));
}

#[test]
fn same_seed_gives_identical_archives_and_tools_work_on_them() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&cooptimize(&a, "7")), 0);
    assert_eq!(code(&cooptimize(&b, "7")), 0);
    for g in 0..=2 {
        for f in ["population.csv", "offspring.csv", "metrics.csv", "discriminator.ckpt", "optimizer.ckpt"] {
            let rel = format!("gen_{g}/{f}");
            assert_eq!(fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap(), "{rel}");
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);

    let root = a.to_str().unwrap();
    let out = privflock(&["--archive", root, "evaluate", "replay"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = privflock(&["--archive", root, "evaluate", "noise", "--coopt.eval_experiments", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let noise = fs::read_to_string(a.join("noise_accuracy.csv")).unwrap();
    assert_eq!(noise.lines().count(), 4);

    let out = privflock(&["--archive", root, "evaluate", "generalization", "--coopt.eval_experiments", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let matrix = fs::read_to_string(a.join("generalization_matrix.csv")).unwrap();
    assert_eq!(matrix.lines().collect::<Vec<_>>()[0], "checkpoint,line,sine,chevron");
    assert_eq!(matrix.lines().count(), 2);

    for product in ["losses", "metrics", "trajectories"] {
        let out = privflock(&["--archive", root, "export", product]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let losses = fs::read_to_string(a.join("export_losses.csv")).unwrap();
    assert_eq!(losses.lines().next().unwrap(), "generation,kind,f_loss,upsilon,p_loss");
    assert_eq!(losses.lines().count(), 1 + 3 * 8);
    let metrics = fs::read_to_string(a.join("export_metrics.csv")).unwrap();
    let header = metrics.lines().next().unwrap();
    for col in ["mean_alignment", "speed_penalty", "spacing_penalty", "tracking_error"] {
        assert!(header.contains(col));
    }
}

#[test]
fn resume_extends_an_archive() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    assert_eq!(code(&cooptimize(&a, "3")), 0);
    let root = a.to_str().unwrap();
    let out = privflock(&["--archive", root, "cooptimize", "--resume", "--generations", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(a.join("gen_3/summary.json").is_file());
    let out = privflock(&["--archive", root, "cooptimize", "--resume", "--ga.mutation_prob", "0.3"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn empty_archive_exports_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    for product in ["losses", "metrics", "trajectories"] {
        let out = privflock(&["--archive", root, "export", product]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let text = fs::read_to_string(dir.path().join(format!("export_{product}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 1, "{product}");
    }
}

#[test]
fn zero_workers_is_rejected() {
    let out = privflock(&["--workers", "0", "pretrain"]);
    assert_eq!(code(&out), 2);
}
