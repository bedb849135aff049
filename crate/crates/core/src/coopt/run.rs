use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use super::archive::{
    self, completed_generations, finite, generation_dir, median, trace_path, GenerationSummary, METRICS_FILE,
    NET_FILE, OFFSPRING_FILE, OPTIMIZER_FILE, POPULATION_FILE, RUN_FILE, SUMMARY_FILE,
};
use super::buffer::{BufferEntry, ReplayBuffer};
use super::evaluate::{evaluate_chromosome, simulate_windows, EvalContext, Experiment};
use super::CooptError;
use crate::config::WorkbenchConfig;
use crate::flocking::{write_trace_csv, Chromosome, SimTrace};
use crate::ga::{self, read_generation_csv, Evaluation, Genes, Individual, Population};
use crate::metrics::MetricsVector;
use crate::nn::{accuracy, load_net, load_optimizer, save_net, save_optimizer, train_epoch, Discriminator, Sgd};
use crate::seed::{self, Stream};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory to archive into; nothing is written when `None`.
    pub archive: Option<PathBuf>,
    /// Continue from the last completed generation in `archive`.
    pub resume: bool,
}

#[derive(Clone, Debug)]
pub struct GenerationRecord {
    pub generation: usize,
    pub population: Population,
    pub offspring: Vec<Individual>,
    pub metrics: Vec<Option<MetricsVector>>,
    pub summary: GenerationSummary,
}

#[derive(Clone, Debug)]
pub struct RunArchive {
    /// Generations completed by this call (earlier ones if resumed are on disk).
    pub records: Vec<GenerationRecord>,
    pub first_generation: usize,
    pub net: Discriminator,
    pub optimizer: Sgd,
    pub buffer: ReplayBuffer,
}

impl RunArchive {
    pub fn final_population(&self) -> Option<&Population> {
        self.records.last().map(|r| &r.population)
    }
}

struct Offspring {
    individuals: Vec<Individual>,
    experiments: Vec<Option<Experiment>>,
}

fn evaluate_all(ctx: &EvalContext<'_>, genes: &[Genes], first_id: u64) -> Vec<Result<Evaluation<Experiment>, String>> {
    genes
        .par_iter()
        .enumerate()
        .map(|(k, g)| {
            let e = evaluate_chromosome(ctx, &Chromosome::from_genes(g), first_id + k as u64)?;
            Ok(Evaluation { f_loss: e.f_loss, p_loss: e.p_loss, extra: e })
        })
        .collect()
}

fn run_document(cfg: &WorkbenchConfig) -> serde_json::Value {
    json!({ "seed": cfg.coopt.seed, "config": cfg })
}

/// Whether an archived run document describes the same run as `cfg`. The
/// generation count may differ: it only decides where the loop stops, so a
/// resumed run may be extended.
fn same_run(stored: &serde_json::Value, cfg: &WorkbenchConfig) -> bool {
    let strip = |mut v: serde_json::Value| {
        if let Some(ga) = v.pointer_mut("/config/ga").and_then(|g| g.as_object_mut()) {
            ga.remove("generations");
        }
        v
    };
    strip(stored.clone()) == strip(run_document(cfg))
}

/// Generation loop. Generation 0 evaluates a random initial population;
/// generations `1..=ga.generations` breed and evaluate offspring. Every
/// generation then admits qualifying experiments to the replay buffer and
/// trains the discriminator on it. Evaluation within a generation uses the
/// discriminator as it was before that generation's training.
///
/// Offspring are evaluated on the current rayon pool; results are merged in
/// offspring order, so the outcome does not depend on the pool size.
pub fn run_cooptimization(
    cfg: &WorkbenchConfig,
    net: Discriminator,
    options: &RunOptions,
    mut on_generation: impl FnMut(&GenerationRecord),
) -> Result<RunArchive, CooptError> {
    cfg.validate().map_err(|e| CooptError::config(e.path, e.message))?;
    let arch = cfg.nn.architecture(cfg.sim.n_robots);
    if net.arch.in_channels != arch.in_channels || net.arch.n_robots != arch.n_robots {
        return Err(CooptError::Nn(crate::nn::NnError::Shape {
            layer: if net.arch.n_robots != arch.n_robots { "fc2.weight" } else { "conv.weight" }.into(),
            expected: vec![arch.in_channels, arch.n_robots],
            found: vec![net.arch.in_channels, net.arch.n_robots],
        }));
    }
    let master = cfg.coopt.seed;
    let m = cfg.ga.population_size as u64;
    let traj = cfg.coopt.shape.build(cfg.coopt.trajectory);
    let mut net = net;
    let mut opt = cfg.nn.optimizer(&net);
    let mut buffer = ReplayBuffer::new(cfg.coopt.buffer_capacity, cfg.ga.kappa);
    let mut population: Option<Population> = None;
    let mut first_generation = 0;

    if let Some(root) = &options.archive {
        fs::create_dir_all(root)?;
        let run_file = root.join(RUN_FILE);
        let done = completed_generations(root)?;
        if options.resume && !done.is_empty() {
            let stored: serde_json::Value = serde_json::from_str(&fs::read_to_string(&run_file)?)
                .map_err(|e| CooptError::archive(&run_file, e))?;
            if !same_run(&stored, cfg) {
                return Err(CooptError::archive(&run_file, "resolved config differs from the archived run"));
            }
            let last = *done.last().unwrap();
            if done != (0..=last).collect::<Vec<_>>() {
                return Err(CooptError::archive(root, format!("generations {done:?} are not contiguous")));
            }
            let dir = generation_dir(root, last);
            net = load_net(&dir.join(NET_FILE), Some(&net.arch))?;
            opt = load_optimizer(&dir.join(OPTIMIZER_FILE), &net)?;
            population = Some(load_population(&dir.join(POPULATION_FILE), m)?);
            buffer = rebuild_buffer(cfg, root, last)?;
            first_generation = last + 1;
            if stored != run_document(cfg) {
                let text = serde_json::to_string_pretty(&run_document(cfg)).expect("config serializes");
                archive::write_atomic(&run_file, text.as_bytes())?;
            }
        } else {
            if !done.is_empty() {
                return Err(CooptError::archive(root, "archive already holds generations; pass resume to continue"));
            }
            let text = serde_json::to_string_pretty(&run_document(cfg)).expect("config serializes");
            archive::write_atomic(&run_file, text.as_bytes())?;
        }
    }

    let mut records = Vec::new();
    for generation in first_generation..=cfg.ga.generations {
        let first_id = generation as u64 * m;
        let (next, offspring) = {
            let ctx = EvalContext {
                sim: &cfg.sim,
                weights: &cfg.metrics,
                nn: &cfg.nn,
                traj: &traj,
                net: &net,
                master_seed: master,
                repeats: cfg.ga.repeats_per_eval,
            };
            let evaluate = |genes: &[Genes]| evaluate_all(&ctx, genes, first_id);
            match &population {
                None => {
                    let mut rng = seed::rng(master, Stream::InitialPopulation, 0);
                    let (pop, extras) = ga::initial_population(&cfg.ga, &mut rng, evaluate);
                    // the population is sorted; restore draw order to match `extras`
                    let mut individuals = pop.members().to_vec();
                    individuals.sort_by_key(|i| i.experiment_id);
                    (pop, Offspring { individuals, experiments: extras })
                }
                Some(pop) => {
                    let mut rng = seed::rng(master, Stream::Breeding, generation as u64);
                    let out = ga::evolve_generation(pop, generation, first_id, &cfg.ga, &mut rng, evaluate);
                    (out.population, Offspring { individuals: out.offspring, experiments: out.extras })
                }
            }
        };

        let mut admitted = 0;
        for (ind, exp) in offspring.individuals.iter().zip(&offspring.experiments) {
            let Some(exp) = exp else { continue };
            if ind.failure.is_some() {
                continue;
            }
            let label = exp.traces.first().map_or(0, |t| t.leader_index);
            let entry = BufferEntry {
                experiment_id: ind.experiment_id,
                generation,
                f_loss: ind.f_loss,
                label,
                windows: exp.windows.clone(),
            };
            if buffer.push(entry) {
                admitted += 1;
            }
        }

        let mut train_rng = seed::rng(master, Stream::Training, generation as u64);
        let windows = buffer.windows();
        let (epoch_loss, train_accuracy) = if windows.is_empty() {
            (None, None)
        } else {
            let mut loss = 0.0;
            for _ in 0..cfg.coopt.online_epochs {
                loss = train_epoch(&mut net, &mut opt, &windows, cfg.nn.batch_size, &mut train_rng)?;
            }
            (Some(loss), Some(accuracy(&net, &windows)?))
        };

        let flown: Vec<f64> = offspring
            .experiments
            .iter()
            .flatten()
            .filter(|e| e.aborted.is_none())
            .map(|e| e.p_loss)
            .collect();
        let f_losses: Vec<f64> = next.members().iter().map(|i| i.f_loss).collect();
        let summary = GenerationSummary {
            generation,
            population_size: next.len(),
            failures: offspring.individuals.iter().filter(|i| i.failure.is_some()).count(),
            admitted,
            buffer_len: buffer.len(),
            buffer_windows: windows.len(),
            training_skipped: windows.is_empty(),
            epoch_loss,
            train_accuracy,
            mean_p_loss: (!flown.is_empty()).then(|| flown.iter().sum::<f64>() / flown.len() as f64),
            best_upsilon: finite(next.best().upsilon),
            median_f_loss: finite(median(&f_losses)),
        };
        drop(windows);

        let record = GenerationRecord {
            generation,
            population: next.clone(),
            offspring: offspring.individuals.clone(),
            metrics: offspring.experiments.iter().map(|e| e.as_ref().and_then(|e| e.metrics)).collect(),
            summary,
        };
        if let Some(root) = &options.archive {
            let traces: Vec<Option<&SimTrace>> =
                offspring.experiments.iter().map(|e| e.as_ref().and_then(|e| e.traces.first())).collect();
            write_generation(cfg, root, &record, &traces, &net, &opt)?;
        }
        on_generation(&record);
        records.push(record);
        population = Some(next);
    }

    Ok(RunArchive { records, first_generation, net, optimizer: opt, buffer })
}

fn write_generation(
    cfg: &WorkbenchConfig,
    root: &Path,
    record: &GenerationRecord,
    traces: &[Option<&SimTrace>],
    net: &Discriminator,
    opt: &Sgd,
) -> Result<(), CooptError> {
    let g = record.generation;
    let dir = generation_dir(root, g);
    fs::create_dir_all(dir.join("traces"))?;
    let elites = cfg.ga.elitism_count;
    archive::write_population(&dir.join(POPULATION_FILE), g, &record.population, elites)?;
    archive::write_offspring(&dir.join(OFFSPRING_FILE), g, &record.offspring, &record.population, elites)?;
    let repeats = cfg.ga.repeats_per_eval as u64;
    let rows: Vec<archive::MetricsRow> = record
        .offspring
        .iter()
        .zip(&record.metrics)
        .map(|(i, m)| {
            let seed = seed::derive(cfg.coopt.seed, Stream::Experiment, i.experiment_id * repeats);
            (i.experiment_id, *m, i.f_loss, seed)
        })
        .collect();
    archive::write_metrics(&dir.join(METRICS_FILE), g, &rows)?;
    for (ind, trace) in record.offspring.iter().zip(traces) {
        if let Some(trace) = trace {
            let path = trace_path(root, g, ind.experiment_id);
            let mut buf = Vec::new();
            write_trace_csv(trace, &mut buf).map_err(|e| CooptError::archive(&path, e))?;
            archive::write_atomic(&path, &buf)?;
        }
    }
    save_net(net, &dir.join(NET_FILE))?;
    save_optimizer(opt, &dir.join(OPTIMIZER_FILE))?;
    let summary = serde_json::to_string_pretty(&record.summary).expect("summary serializes");
    archive::write_atomic(&dir.join(SUMMARY_FILE), summary.as_bytes())?;
    Ok(())
}

fn load_population(path: &Path, m: u64) -> Result<Population, CooptError> {
    let file = fs::File::open(path)?;
    let rows = read_generation_csv(file).map_err(|e| CooptError::archive(path, e))?;
    let members = rows
        .into_iter()
        .map(|r| Individual {
            genes: r.genes,
            f_loss: r.f_loss,
            p_loss: r.p_loss,
            upsilon: r.upsilon,
            generation: (r.experiment_id / m) as usize,
            experiment_id: r.experiment_id,
            failure: (!r.upsilon.is_finite()).then(|| "evaluation failed".to_string()),
        })
        .collect();
    // rows were written in sorted order; keep it
    Ok(Population(members))
}

/// Re-fly the most recent qualifying experiments up to `last` to restore
/// the replay buffer. Windows depend only on the chromosome and the flight
/// seed, so this reproduces the buffer exactly.
fn rebuild_buffer(cfg: &WorkbenchConfig, root: &Path, last: usize) -> Result<ReplayBuffer, CooptError> {
    let mut qualifying = Vec::new();
    for g in 0..=last {
        let path = generation_dir(root, g).join(OFFSPRING_FILE);
        let rows = read_generation_csv(fs::File::open(&path)?).map_err(|e| CooptError::archive(&path, e))?;
        for r in rows {
            if r.f_loss <= cfg.ga.kappa && r.upsilon.is_finite() {
                qualifying.push((g, r));
            }
        }
    }
    let keep = qualifying.len().saturating_sub(cfg.coopt.buffer_capacity);
    let traj = cfg.coopt.shape.build(cfg.coopt.trajectory);
    let repeats = cfg.ga.repeats_per_eval as u64;
    let entries: Vec<BufferEntry> = qualifying[keep..]
        .par_iter()
        .map(|(g, r)| {
            let chromosome = Chromosome::from_genes(&r.genes);
            let mut windows = Vec::new();
            let mut label = 0;
            for rep in 0..repeats {
                let seed = seed::derive(cfg.coopt.seed, Stream::Experiment, r.experiment_id * repeats + rep);
                let (trace, w) = simulate_windows(&chromosome, &traj, &cfg.sim.with_seed(seed), &cfg.nn)?;
                if rep == 0 {
                    label = trace.leader_index;
                }
                windows.extend(w);
            }
            Ok(BufferEntry { experiment_id: r.experiment_id, generation: *g, f_loss: r.f_loss, label, windows })
        })
        .collect::<Result<_, CooptError>>()?;
    let mut buffer = ReplayBuffer::new(cfg.coopt.buffer_capacity, cfg.ga.kappa);
    for e in entries {
        buffer.push(e);
    }
    Ok(buffer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> WorkbenchConfig {
        let mut cfg = WorkbenchConfig::default();
        cfg.sim.duration = 15.0;
        cfg.nn.hidden = 16;
        cfg.ga.population_size = 4;
        cfg.ga.elitism_count = 1;
        cfg.ga.generations = 2;
        cfg.coopt.seed = 11;
        cfg
    }

    fn fresh(cfg: &WorkbenchConfig) -> Discriminator {
        Discriminator::new(cfg.nn.architecture(cfg.sim.n_robots), &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn records_per_generation_and_determinism() {
        let cfg = small();
        let a = run_cooptimization(&cfg, fresh(&cfg), &RunOptions::default(), |_| {}).unwrap();
        let b = run_cooptimization(&cfg, fresh(&cfg), &RunOptions::default(), |_| {}).unwrap();
        assert_eq!(a.records.len(), 3);
        assert_eq!(a.net, b.net);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.population, y.population);
            assert_eq!(x.summary, y.summary);
        }
        let ids: Vec<u64> = a.records[1].offspring.iter().map(|i| i.experiment_id).collect();
        assert_eq!(ids, vec![4, 5, 6, 7]);
    }

    #[test]
    fn negative_infinite_kappa_never_trains() {
        let mut cfg = small();
        cfg.ga.kappa = f64::NEG_INFINITY;
        let net = fresh(&cfg);
        let out = run_cooptimization(&cfg, net.clone(), &RunOptions::default(), |_| {}).unwrap();
        assert_eq!(out.net, net);
        for r in &out.records {
            assert!(r.summary.training_skipped);
            for i in r.population.members() {
                assert_eq!(i.upsilon, i.f_loss);
            }
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let mut cfg = small();
        cfg.ga.kappa = 1e9;
        let full_dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { archive: Some(full_dir.path().to_path_buf()), resume: false };
        let full = run_cooptimization(&cfg, fresh(&cfg), &opts, |_| {}).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut short = cfg.clone();
        short.ga.generations = 1;
        let opts = RunOptions { archive: Some(dir.path().to_path_buf()), resume: false };
        run_cooptimization(&short, fresh(&cfg), &opts, |_| {}).unwrap();
        let opts = RunOptions { archive: Some(dir.path().to_path_buf()), resume: true };
        let resumed = run_cooptimization(&cfg, fresh(&cfg), &opts, |_| {}).unwrap();
        assert_eq!(resumed.first_generation, 2);
        assert_eq!(resumed.net, full.net);
        assert_eq!(resumed.buffer, full.buffer);
        for name in [POPULATION_FILE, OFFSPRING_FILE, NET_FILE] {
            let a = fs::read(generation_dir(full_dir.path(), 2).join(name)).unwrap();
            let b = fs::read(generation_dir(dir.path(), 2).join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
        assert_eq!(fs::read(dir.path().join(RUN_FILE)).unwrap(), fs::read(full_dir.path().join(RUN_FILE)).unwrap());
    }

    #[test]
    fn resume_rejects_changed_config() {
        let cfg = small();
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { archive: Some(dir.path().to_path_buf()), resume: false };
        run_cooptimization(&cfg, fresh(&cfg), &opts, |_| {}).unwrap();
        let mut other = cfg.clone();
        other.ga.mutation_prob = 0.5;
        let opts = RunOptions { archive: Some(dir.path().to_path_buf()), resume: true };
        let err = run_cooptimization(&other, fresh(&cfg), &opts, |_| {}).unwrap_err();
        assert!(err.to_string().contains("differs"), "{err}");
    }
}
