//! Plot-ready flattening of a run archive.

use std::fs;
use std::path::Path;

use privflock::coopt::{completed_generations, generation_dir, read_metrics, METRICS_FILE, OFFSPRING_FILE, POPULATION_FILE};
use privflock::flocking::TRACE_HEADER;
use privflock::WorkbenchConfig;

use crate::commands::read_rows;
use crate::{Failure, Product};

pub const LOSSES_HEADER: [&str; 5] = ["generation", "kind", "f_loss", "upsilon", "p_loss"];
pub const METRICS_HEADER: [&str; 6] =
    ["generation", "flights", "mean_alignment", "speed_penalty", "spacing_penalty", "tracking_error"];

pub fn export(cfg: &WorkbenchConfig, root: &Path, product: Product, out: &Path) -> Result<(), Failure> {
    let gens = completed_generations(root)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Failure::Runtime(e.to_string());
    match product {
        Product::Losses => {
            w.write_record(LOSSES_HEADER).map_err(wrap)?;
            for &g in &gens {
                let dir = generation_dir(root, g);
                for (kind, file) in [("population", POPULATION_FILE), ("experiment", OFFSPRING_FILE)] {
                    for r in read_rows(&dir.join(file))? {
                        w.write_record([
                            g.to_string(),
                            kind.to_string(),
                            r.f_loss.to_string(),
                            r.upsilon.to_string(),
                            r.p_loss.to_string(),
                        ])
                        .map_err(wrap)?;
                    }
                }
            }
        }
        Product::Metrics => {
            w.write_record(METRICS_HEADER).map_err(wrap)?;
            for &g in &gens {
                let path = generation_dir(root, g).join(METRICS_FILE);
                let flown: Vec<_> = read_metrics(&path)?.into_iter().filter_map(|(_, m)| m).collect();
                let n = flown.len();
                let mean = |f: fn(&privflock::MetricsVector) -> f64| {
                    if n == 0 {
                        String::new()
                    } else {
                        (flown.iter().map(f).sum::<f64>() / n as f64).to_string()
                    }
                };
                w.write_record([
                    g.to_string(),
                    n.to_string(),
                    mean(|m| -m.neg_mean_alignment()),
                    mean(|m| m.speed_penalty()),
                    mean(|m| m.spacing_penalty()),
                    mean(|m| m.mean_tracking_error()),
                ])
                .map_err(wrap)?;
            }
        }
        Product::Trajectories => {
            let mut header = vec!["generation", "experiment_id"];
            header.extend(TRACE_HEADER);
            w.write_record(&header).map_err(wrap)?;
            let m = cfg.ga.population_size as u64;
            for &g in &gens {
                // champion of generation g: first row of its sorted population
                let Some(best) = read_rows(&generation_dir(root, g).join(POPULATION_FILE))?.into_iter().next() else {
                    continue;
                };
                let id = best.experiment_id;
                let path = privflock::coopt::trace_path(root, (id / m) as usize, id);
                if !path.is_file() {
                    continue;
                }
                let mut r = csv::Reader::from_path(&path).map_err(wrap)?;
                for rec in r.records() {
                    let rec = rec.map_err(wrap)?;
                    let mut row = vec![g.to_string(), id.to_string()];
                    row.extend(rec.iter().map(String::from));
                    w.write_record(&row).map_err(wrap)?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Failure::Runtime(e.to_string()))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, bytes)?;
    println!("{} written ({} generations)", out.display(), gens.len());
    Ok(())
}
