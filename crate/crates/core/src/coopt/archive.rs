//! On-disk layout of a co-optimization run:
//!
//! ```text
//! run.json
//! gen_<k>/population.csv  offspring.csv  metrics.csv
//!         discriminator.ckpt  optimizer.ckpt  traces/exp_<j>.csv
//!         summary.json        (written last; marks the generation complete)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CooptError;
use crate::ga::{write_generation_csv, Individual, Population};
use crate::metrics::MetricsVector;

pub const RUN_FILE: &str = "run.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const POPULATION_FILE: &str = "population.csv";
pub const OFFSPRING_FILE: &str = "offspring.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const NET_FILE: &str = "discriminator.ckpt";
pub const OPTIMIZER_FILE: &str = "optimizer.ckpt";

/// Per-generation statistics. Non-finite values are stored as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generation: usize,
    pub population_size: usize,
    pub failures: usize,
    /// Offspring admitted to the replay buffer this generation.
    pub admitted: usize,
    pub buffer_len: usize,
    pub buffer_windows: usize,
    pub training_skipped: bool,
    pub epoch_loss: Option<f64>,
    /// Accuracy on the buffered windows after training.
    pub train_accuracy: Option<f64>,
    /// Mean privacy loss over offspring that flew.
    pub mean_p_loss: Option<f64>,
    pub best_upsilon: Option<f64>,
    pub median_f_loss: Option<f64>,
}

pub fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn generation_dir(root: &Path, generation: usize) -> PathBuf {
    root.join(format!("gen_{generation}"))
}

pub fn trace_path(root: &Path, generation: usize, experiment_id: u64) -> PathBuf {
    generation_dir(root, generation).join("traces").join(format!("exp_{experiment_id}.csv"))
}

/// Generations whose summary has been written, ascending.
pub fn completed_generations(root: &Path) -> Result<Vec<usize>, CooptError> {
    let mut gens = Vec::new();
    if !root.exists() {
        return Ok(gens);
    }
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(k) = name.to_str().and_then(|s| s.strip_prefix("gen_")).and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        if entry.path().join(SUMMARY_FILE).is_file() {
            gens.push(k);
        }
    }
    gens.sort_unstable();
    Ok(gens)
}

pub fn read_summary(root: &Path, generation: usize) -> Result<GenerationSummary, CooptError> {
    let path = generation_dir(root, generation).join(SUMMARY_FILE);
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| CooptError::archive(&path, e))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn write_population(path: &Path, generation: usize, population: &Population, elites: usize) -> Result<(), CooptError> {
    let rows: Vec<(Individual, bool)> =
        population.members().iter().enumerate().map(|(k, i)| (i.clone(), k < elites)).collect();
    write_rows(path, generation, &rows)
}

/// Offspring are flagged elite when they made it into the elite part of
/// the next population.
pub fn write_offspring(
    path: &Path,
    generation: usize,
    offspring: &[Individual],
    population: &Population,
    elites: usize,
) -> Result<(), CooptError> {
    let elite_ids: Vec<u64> = population.members().iter().take(elites).map(|i| i.experiment_id).collect();
    let rows: Vec<(Individual, bool)> =
        offspring.iter().map(|i| (i.clone(), elite_ids.contains(&i.experiment_id))).collect();
    write_rows(path, generation, &rows)
}

fn write_rows(path: &Path, generation: usize, rows: &[(Individual, bool)]) -> Result<(), CooptError> {
    let mut buf = Vec::new();
    write_generation_csv(&mut buf, generation, rows).map_err(|e| CooptError::archive(path, e))?;
    write_atomic(path, &buf)?;
    Ok(())
}

pub fn metrics_header() -> Vec<&'static str> {
    let mut h = vec!["experiment_id"];
    h.extend(MetricsVector::NAMES);
    h.extend(["f_loss", "generation", "seed"]);
    h
}

/// One metrics row: experiment id, metrics (`None` if the flight aborted),
/// flocking loss and the seed of the experiment's first flight.
pub type MetricsRow = (u64, Option<MetricsVector>, f64, u64);

/// One row per offspring; aborted flights have empty metric cells.
pub fn write_metrics(path: &Path, generation: usize, rows: &[MetricsRow]) -> Result<(), CooptError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| CooptError::archive(path, e);
    w.write_record(metrics_header()).map_err(wrap)?;
    for (id, m, f, seed) in rows {
        let mut rec = vec![id.to_string()];
        match m {
            Some(m) => rec.extend(m.0.iter().map(|v| v.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), 9)),
        }
        rec.extend([f.to_string(), generation.to_string(), seed.to_string()]);
        w.write_record(rec).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| CooptError::archive(path, e))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

/// Rows of a metrics file: experiment id and, when the flight completed,
/// its metrics vector.
pub fn read_metrics(path: &Path) -> Result<Vec<(u64, Option<MetricsVector>)>, CooptError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CooptError::archive(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CooptError::archive(path, e))?;
        let id = rec[0].parse::<u64>().map_err(|e| CooptError::archive(path, e))?;
        let m = if rec[1].is_empty() {
            None
        } else {
            let mut v = [0.0; 9];
            for (k, x) in v.iter_mut().enumerate() {
                *x = rec[1 + k].parse::<f64>().map_err(|e| CooptError::archive(path, e))?;
            }
            Some(MetricsVector(v))
        };
        out.push((id, m));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, 2.0]), 2.0);
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = MetricsVector([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        write_metrics(&p, 1, &[(3, Some(m), 4.5, 17), (4, None, f64::INFINITY, 18)]).unwrap();
        let back = read_metrics(&p).unwrap();
        assert_eq!(back, vec![(3, Some(m)), (4, None)]);
    }

    #[test]
    fn completed_generations_need_summary() {
        let dir = tempfile::tempdir().unwrap();
        for g in [0, 1, 2] {
            fs::create_dir_all(generation_dir(dir.path(), g)).unwrap();
        }
        fs::write(generation_dir(dir.path(), 0).join(SUMMARY_FILE), "{}").unwrap();
        fs::write(generation_dir(dir.path(), 2).join(SUMMARY_FILE), "{}").unwrap();
        assert_eq!(completed_generations(dir.path()).unwrap(), vec![0, 2]);
    }
}
