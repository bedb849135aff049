use std::fs;
use std::path::{Path, PathBuf};

use privflock::config::apply_override;
use privflock::coopt::{
    completed_generations, eval_generalization, eval_noise_robustness, generate_windows, generation_dir, pretrain,
    run_cooptimization, simulate_windows, GenerationRecord, RunOptions, NET_FILE, OFFSPRING_FILE, POPULATION_FILE,
    RUN_FILE,
};
use privflock::flocking::{write_trace_csv, Chromosome, TrajectoryKind};
use privflock::ga::{read_generation_csv, GenerationRow};
use privflock::metrics::flocking_loss;
use privflock::nn::{load_net, save_net, Discriminator};
use privflock::seed::{self, Stream};
use privflock::WorkbenchConfig;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::{Cli, Command, EvalMode, Failure};

pub fn run(cli: &Cli, overrides: Vec<(String, String)>, argv: &[String]) -> Result<(), Failure> {
    let mut overrides = overrides;
    if let Some(seed) = cli.seed {
        overrides.push(("coopt.seed".into(), seed.to_string()));
    }
    match &cli.command {
        Command::Pretrain { output, samples, epochs } => {
            push_opt(&mut overrides, "coopt.pretrain.sample_count", samples);
            push_opt(&mut overrides, "coopt.pretrain.epochs", epochs);
            let cfg = resolve(cli, &overrides, false)?;
            let output = output.clone().unwrap_or_else(|| archive_or_cwd(cli).join("pretrained.ckpt"));
            cmd_pretrain(&cfg, &output)
        }
        Command::Cooptimize { checkpoint, fresh_discriminator, resume, generations, population, duration } => {
            push_opt(&mut overrides, "ga.generations", generations);
            push_opt(&mut overrides, "ga.population_size", population);
            push_opt(&mut overrides, "sim.duration", duration);
            let cfg = resolve(cli, &overrides, *resume)?;
            let archive = require_archive(cli)?;
            let start = Start { checkpoint: checkpoint.as_deref(), fresh: *fresh_discriminator, resume: *resume };
            cmd_cooptimize(&cfg, archive, start, argv)
        }
        Command::Evaluate { mode, checkpoint, experiment, output } => {
            let cfg = resolve(cli, &overrides, true)?;
            match mode {
                EvalMode::Generalization => {
                    let nets = load_checkpoints(&cfg, cli, checkpoint)?;
                    let out = output.clone().unwrap_or_else(|| archive_or_cwd(cli).join("generalization_matrix.csv"));
                    cmd_generalization(&cfg, &nets, archived_champion(cli)?.as_ref(), &out)
                }
                EvalMode::Noise => {
                    let nets = load_checkpoints(&cfg, cli, checkpoint)?;
                    let out = output.clone().unwrap_or_else(|| archive_or_cwd(cli).join("noise_accuracy.csv"));
                    cmd_noise(&cfg, &nets, archived_champion(cli)?.as_ref(), &out)
                }
                EvalMode::Replay => cmd_replay(&cfg, require_archive(cli)?, *experiment, output.as_deref()),
            }
        }
        Command::Export { product, output } => {
            let cfg = resolve(cli, &overrides, true)?;
            let archive = require_archive(cli)?;
            let out = output.clone().unwrap_or_else(|| archive.join(format!("export_{}.csv", product_name(*product))));
            crate::export::export(&cfg, archive, *product, &out)
        }
    }
}

fn product_name(p: crate::Product) -> &'static str {
    match p {
        crate::Product::Losses => "losses",
        crate::Product::Metrics => "metrics",
        crate::Product::Trajectories => "trajectories",
    }
}

fn push_opt<T: ToString>(overrides: &mut Vec<(String, String)>, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        overrides.push((key.to_string(), v.to_string()));
    }
}

fn archive_or_cwd(cli: &Cli) -> PathBuf {
    cli.archive.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn require_archive(cli: &Cli) -> Result<&Path, Failure> {
    cli.archive.as_deref().ok_or_else(|| Failure::Config("--archive is required for this command".into()))
}

/// Base document: `--config` if given, else the archived run config when
/// `from_archive` and one exists, else defaults. Overrides apply on top.
fn resolve(cli: &Cli, overrides: &[(String, String)], from_archive: bool) -> Result<WorkbenchConfig, Failure> {
    let archived = cli.archive.as_ref().map(|a| a.join(RUN_FILE)).filter(|p| p.is_file());
    let mut doc = match (&cli.config, archived) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| Failure::Config(format!("config {} is not JSON: {e}", path.display())))?
        }
        (None, Some(run)) if from_archive => {
            let text = fs::read_to_string(&run)?;
            let mut v: Value = serde_json::from_str(&text)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", run.display())))?;
            v.get_mut("config")
                .map(Value::take)
                .ok_or_else(|| Failure::Runtime(format!("{}: no `config` entry", run.display())))?
        }
        _ => serde_json::to_value(WorkbenchConfig::default()).expect("default config serializes"),
    };
    for (k, v) in overrides {
        apply_override(&mut doc, k, v)?;
    }
    let cfg = WorkbenchConfig::from_value(doc)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_checkpoint(cfg: &WorkbenchConfig, path: &Path) -> Result<Discriminator, Failure> {
    if !path.is_file() {
        return Err(Failure::Config(format!("checkpoint not found: {}", path.display())));
    }
    let arch = cfg.nn.architecture(cfg.sim.n_robots);
    load_net(path, Some(&arch)).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// The given checkpoints, or the latest archived discriminator.
fn load_checkpoints(cfg: &WorkbenchConfig, cli: &Cli, given: &[PathBuf]) -> Result<Vec<(String, Discriminator)>, Failure> {
    let paths: Vec<PathBuf> = if given.is_empty() {
        let Some(root) = &cli.archive else {
            return Err(Failure::Config("no checkpoint: pass --checkpoint or --archive".into()));
        };
        let last = completed_generations(root)?.last().copied();
        let path = match last {
            Some(g) => generation_dir(root, g).join(NET_FILE),
            None => generation_dir(root, 0).join(NET_FILE),
        };
        vec![path]
    } else {
        given.to_vec()
    };
    paths.iter().map(|p| Ok((p.display().to_string(), load_checkpoint(cfg, p)?))).collect()
}

fn config_digest(cfg: &WorkbenchConfig) -> String {
    let digest = Sha256::digest(cfg.to_json_pretty().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Failure::Runtime(e.to_string());
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| Failure::Runtime(e.to_string()))
}

fn cmd_pretrain(cfg: &WorkbenchConfig, output: &Path) -> Result<(), Failure> {
    let mut net = cfg.nn.init_net(cfg.sim.n_robots);
    let mut opt = cfg.nn.optimizer(&net);
    let report = pretrain(cfg, &mut net, &mut opt)?;
    let dir = output.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    save_net(&net, output)?;

    let summary = vec![vec![
        report.train_flights.to_string(),
        report.test_flights.to_string(),
        report.train_windows.to_string(),
        report.test_windows.to_string(),
        report.epoch_losses.len().to_string(),
        report.epoch_losses.last().map_or(String::new(), |l| l.to_string()),
        report.train_accuracy.to_string(),
        report.test_accuracy.to_string(),
    ]];
    let header = [
        "train_flights",
        "test_flights",
        "train_windows",
        "test_windows",
        "epochs",
        "final_loss",
        "train_accuracy",
        "test_accuracy",
    ];
    write_atomic(&dir.join("pretrain_report.csv"), &csv_bytes(&header, &summary)?)?;
    let losses: Vec<Vec<String>> =
        report.epoch_losses.iter().enumerate().map(|(k, l)| vec![(k + 1).to_string(), l.to_string()]).collect();
    write_atomic(&dir.join("pretrain_losses.csv"), &csv_bytes(&["epoch", "loss"], &losses)?)?;
    write_atomic(&dir.join("pretrain_config.json"), cfg.to_json_pretty().as_bytes())?;

    println!(
        "pretrained on {} flights ({} windows): train accuracy {:.4}, test accuracy {:.4}",
        report.train_flights, report.train_windows, report.train_accuracy, report.test_accuracy
    );
    println!("checkpoint written to {}", output.display());
    Ok(())
}

struct Start<'a> {
    checkpoint: Option<&'a Path>,
    fresh: bool,
    resume: bool,
}

fn cmd_cooptimize(cfg: &WorkbenchConfig, archive: &Path, start: Start<'_>, argv: &[String]) -> Result<(), Failure> {
    let started = chrono::Utc::now();
    let resuming = start.resume && !completed_generations(archive)?.is_empty();
    // a resumed run reloads its discriminator from the archive
    let net = match start.checkpoint {
        Some(path) if !resuming => load_checkpoint(cfg, path)?,
        _ if resuming || start.fresh => cfg.nn.init_net(cfg.sim.n_robots),
        _ => {
            return Err(Failure::Config(
                "nothing to resume; pass --checkpoint or --fresh-discriminator to start a run".into(),
            ))
        }
    };
    let options = RunOptions { archive: Some(archive.to_path_buf()), resume: start.resume };
    let report = |r: &GenerationRecord| {
        let s = &r.summary;
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        eprintln!(
            "gen {:>3}  median f_loss {}  best upsilon {}  mean p_loss {}  buffer {}  failures {}",
            s.generation,
            fmt(s.median_f_loss),
            fmt(s.best_upsilon),
            fmt(s.mean_p_loss),
            s.buffer_len,
            s.failures
        );
    };
    run_cooptimization(cfg, net, &options, report)?;

    let manifest = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config_digest": config_digest(cfg),
        "seed": cfg.coopt.seed,
        "command_line": argv,
        "started_at": started.to_rfc3339(),
        "finished_at": chrono::Utc::now().to_rfc3339(),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&archive.join("run_manifest.json"), text.as_bytes())?;
    println!("archive complete: {}", archive.display());
    Ok(())
}

/// Chromosome flown by the evaluation harnesses and whether its leader offset
/// is redrawn per flight: the archived champion as it is, else the hand-tuned
/// chromosome for `kind` flown like pre-training data.
fn chromosome_for(cfg: &WorkbenchConfig, champion: Option<&Chromosome>, kind: TrajectoryKind) -> (Chromosome, bool) {
    match champion {
        Some(c) => (c.clone(), false),
        None => (cfg.coopt.pretrain.chromosome_for(kind).cloned().unwrap_or_else(Chromosome::hand_tuned), true),
    }
}

fn archived_champion(cli: &Cli) -> Result<Option<Chromosome>, Failure> {
    match cli.archive.as_deref() {
        Some(root) if root.is_dir() => Ok(champion(root)?.map(|row| Chromosome::from_genes(&row.genes))),
        _ => Ok(None),
    }
}

fn cmd_generalization(
    cfg: &WorkbenchConfig,
    nets: &[(String, Discriminator)],
    champion: Option<&Chromosome>,
    out: &Path,
) -> Result<(), Failure> {
    let refs: Vec<&Discriminator> = nets.iter().map(|(_, n)| n).collect();
    let kinds = TrajectoryKind::ALL;
    let flights = cfg.coopt.eval_experiments;
    let matrix = eval_generalization(cfg, &refs, &kinds, |k| chromosome_for(cfg, champion, k), flights, cfg.coopt.seed)?;
    let mut header = vec!["checkpoint"];
    header.extend(kinds.iter().map(|k| k.as_str()));
    let rows: Vec<Vec<String>> = nets
        .iter()
        .zip(&matrix)
        .map(|((name, _), accs)| std::iter::once(name.clone()).chain(accs.iter().map(|a| a.to_string())).collect())
        .collect();
    write_atomic(out, &csv_bytes(&header, &rows)?)?;
    for row in &rows {
        println!("{}", row.join("  "));
    }
    Ok(())
}

fn cmd_noise(
    cfg: &WorkbenchConfig,
    nets: &[(String, Discriminator)],
    champion: Option<&Chromosome>,
    out: &Path,
) -> Result<(), Failure> {
    let kind = cfg.coopt.trajectory;
    let window_seed = seed::derive(cfg.coopt.seed, Stream::Noise, u64::MAX);
    let (chromosome, random_offset) = chromosome_for(cfg, champion, kind);
    let windows = generate_windows(cfg, kind, &chromosome, random_offset, cfg.coopt.eval_experiments, window_seed)?;
    if windows.is_empty() {
        return Err(Failure::Config("sim.duration: flights are shorter than one observation window".into()));
    }
    let mut rows = Vec::new();
    for (name, net) in nets {
        let accs = eval_noise_robustness(net, &windows, &cfg.coopt.noise_variances, cfg.coopt.seed)?;
        for (var, acc) in cfg.coopt.noise_variances.iter().zip(accs) {
            println!("{name}  variance {var}  accuracy {acc:.4}");
            rows.push(vec![name.clone(), var.to_string(), acc.to_string()]);
        }
    }
    write_atomic(out, &csv_bytes(&["checkpoint", "variance", "accuracy"], &rows)?)
}

pub fn read_rows(path: &Path) -> Result<Vec<GenerationRow>, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    read_generation_csv(file).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// Archived record of an experiment: the offspring row that introduced it.
fn find_experiment(cfg: &WorkbenchConfig, root: &Path, id: u64) -> Result<GenerationRow, Failure> {
    let generation = (id / cfg.ga.population_size as u64) as usize;
    let path = generation_dir(root, generation).join(OFFSPRING_FILE);
    if !path.is_file() {
        return Err(Failure::Config(format!("experiment {id}: {} not found", path.display())));
    }
    read_rows(&path)?
        .into_iter()
        .find(|r| r.experiment_id == id)
        .ok_or_else(|| Failure::Config(format!("experiment {id} is not in {}", path.display())))
}

pub fn champion(root: &Path) -> Result<Option<GenerationRow>, Failure> {
    let Some(last) = completed_generations(root)?.last().copied() else { return Ok(None) };
    Ok(read_rows(&generation_dir(root, last).join(POPULATION_FILE))?.into_iter().next())
}

fn cmd_replay(cfg: &WorkbenchConfig, root: &Path, experiment: Option<u64>, output: Option<&Path>) -> Result<(), Failure> {
    let id = match experiment {
        Some(id) => id,
        None => champion(root)?
            .ok_or_else(|| Failure::Config(format!("{} holds no completed generation", root.display())))?
            .experiment_id,
    };
    let row = find_experiment(cfg, root, id)?;
    let chromosome = Chromosome::from_genes(&row.genes);
    let traj = cfg.coopt.shape.build(cfg.coopt.trajectory);
    let repeats = cfg.ga.repeats_per_eval;
    let mut f_sum = 0.0;
    let mut first = None;
    for r in 0..repeats {
        let flight = seed::derive(cfg.coopt.seed, Stream::Experiment, id * repeats as u64 + r as u64);
        match simulate_windows(&chromosome, &traj, &cfg.sim.with_seed(flight), &cfg.nn) {
            Ok((trace, _)) => {
                f_sum += flocking_loss(&trace, &traj, &cfg.metrics).0;
                first.get_or_insert(trace);
            }
            Err(e) => {
                f_sum = f64::INFINITY;
                eprintln!("flight {r} aborted: {e}");
                break;
            }
        }
    }
    let f_loss = f_sum / repeats as f64;
    if let Some(trace) = &first {
        let out = output.map(Path::to_path_buf).unwrap_or_else(|| root.join(format!("replay_exp_{id}.csv")));
        let mut buf = Vec::new();
        write_trace_csv(trace, &mut buf).map_err(|e| Failure::Runtime(e.to_string()))?;
        write_atomic(&out, &buf)?;
        println!("trace written to {}", out.display());
    }
    println!("experiment {id}: replayed f_loss {f_loss}, archived {}", row.f_loss);
    let matches = if row.f_loss.is_finite() {
        (f_loss - row.f_loss).abs() <= 1e-9 * row.f_loss.abs().max(1.0)
    } else {
        !f_loss.is_finite()
    };
    if matches {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("replayed f_loss {f_loss} differs from archived {}", row.f_loss)))
    }
}
