//! A simple generational GA over 15-gene chromosomes: binary tournament,
//! single-point crossover, per-gene uniform resampling, and elitist
//! (mu + lambda) replacement.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::flocking::{Chromosome, GENE_COUNT, GENE_NAMES};

pub type Genes = [f64; GENE_COUNT];

/// Gated objective: the flocking loss alone when flocking is poor
/// (`f_loss >= kappa`), otherwise a blend with the privacy loss.
pub fn upsilon_loss(f_loss: f64, p_loss: f64, kappa: f64, beta: f64) -> f64 {
    if f_loss >= kappa {
        f_loss
    } else {
        beta * f_loss + (1.0 - beta) * p_loss
    }
}

fn default_bounds() -> [[f64; 2]; GENE_COUNT] {
    const GAIN: [f64; 2] = [0.0, 3.0];
    const RADIUS: [f64; 2] = [0.5, 10.0];
    [
        GAIN, GAIN, GAIN, RADIUS, RADIUS, RADIUS, GAIN, GAIN, GAIN, RADIUS, RADIUS, RADIUS,
        [0.0, 2.0],
        [-1.0, 1.0],
        [-1.0, 1.0],
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub elitism_count: usize,
    /// `[lower, upper]` per gene, in chromosome order.
    pub bounds: [[f64; 2]; GENE_COUNT],
    pub kappa: f64,
    pub beta: f64,
    /// Simulations per offspring; losses are averaged.
    pub repeats_per_eval: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 10,
            generations: 50,
            crossover_prob: 0.9,
            mutation_prob: 0.02,
            elitism_count: 3,
            bounds: default_bounds(),
            kappa: 3.0,
            beta: 0.5,
            repeats_per_eval: 1,
        }
    }
}

impl GaConfig {
    /// On failure returns the offending field and a message.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let err = |f: &str, m: String| Err((f.to_string(), m));
        if self.population_size < 2 {
            return err("population_size", format!("must be >= 2, got {}", self.population_size));
        }
        for (name, p) in [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return err(name, format!("must lie in [0, 1], got {p}"));
            }
        }
        if self.elitism_count > self.population_size {
            return err(
                "elitism_count",
                format!("must be <= population_size ({}), got {}", self.population_size, self.elitism_count),
            );
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return err("beta", format!("must lie in [0, 1], got {}", self.beta));
        }
        if self.kappa.is_nan() {
            return err("kappa", "must not be NaN".into());
        }
        if self.repeats_per_eval == 0 {
            return err("repeats_per_eval", "must be >= 1".into());
        }
        for (k, [lo, hi]) in self.bounds.iter().enumerate() {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return err(&format!("bounds[{k}]"), format!("{}: need finite lower < upper, got [{lo}, {hi}]", GENE_NAMES[k]));
            }
        }
        Ok(())
    }

    pub fn upsilon(&self, f_loss: f64, p_loss: f64) -> f64 {
        upsilon_loss(f_loss, p_loss, self.kappa, self.beta)
    }

    pub fn within_bounds(&self, genes: &Genes) -> bool {
        genes.iter().zip(&self.bounds).all(|(g, [lo, hi])| lo <= g && g <= hi)
    }

    pub fn random_genes<R: Rng + ?Sized>(&self, rng: &mut R) -> Genes {
        std::array::from_fn(|k| {
            let [lo, hi] = self.bounds[k];
            rng.random_range(lo..=hi)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genes: Genes,
    pub f_loss: f64,
    pub p_loss: f64,
    pub upsilon: f64,
    /// Generation in which this individual was bred (0 for the initial draw).
    pub generation: usize,
    pub experiment_id: u64,
    /// Set when evaluation failed; such individuals carry `upsilon = inf`.
    pub failure: Option<String>,
}

impl Individual {
    pub fn chromosome(&self) -> Chromosome {
        Chromosome::from_genes(&self.genes)
    }
}

/// Result of evaluating one chromosome, with caller-defined payload.
#[derive(Clone, Debug)]
pub struct Evaluation<X> {
    pub f_loss: f64,
    pub p_loss: f64,
    pub extra: X,
}

/// Sorted ascending by `upsilon`; ties keep insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct Population(pub Vec<Individual>);

impl Population {
    pub fn new(mut members: Vec<Individual>) -> Self {
        sort_by_upsilon(&mut members);
        Self(members)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn best(&self) -> &Individual {
        &self.0[0]
    }

    pub fn members(&self) -> &[Individual] {
        &self.0
    }
}

fn sort_by_upsilon(v: &mut [Individual]) {
    v.sort_by(|a, b| a.upsilon.total_cmp(&b.upsilon));
}

/// Binary tournament: two distinct members drawn uniformly, the lower
/// `upsilon` wins and the first draw wins ties.
pub fn select_parent<'a, R: Rng + ?Sized>(population: &'a Population, rng: &mut R) -> &'a Individual {
    let n = population.len();
    assert!(n >= 2, "tournament needs two individuals");
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let (a, b) = (&population.0[i], &population.0[j]);
    if b.upsilon < a.upsilon {
        b
    } else {
        a
    }
}

/// Single-point crossover with a cut in `[1, GENE_COUNT - 1]`.
pub fn crossover<R: Rng + ?Sized>(a: &Genes, b: &Genes, crossover_prob: f64, rng: &mut R) -> (Genes, Genes) {
    if rng.random::<f64>() >= crossover_prob {
        return (*a, *b);
    }
    let cut = rng.random_range(1..GENE_COUNT);
    (splice(a, b, cut), splice(b, a, cut))
}

/// Head `[0, cut)` from `a`, tail from `b`.
pub fn splice(a: &Genes, b: &Genes, cut: usize) -> Genes {
    std::array::from_fn(|k| if k < cut { a[k] } else { b[k] })
}

/// Each gene is independently resampled uniformly within its bounds with
/// probability `mutation_prob`.
pub fn mutate<R: Rng + ?Sized>(
    genes: &Genes,
    mutation_prob: f64,
    bounds: &[[f64; 2]; GENE_COUNT],
    rng: &mut R,
) -> Genes {
    let mut out = *genes;
    for (g, [lo, hi]) in out.iter_mut().zip(bounds) {
        if rng.random::<f64>() < mutation_prob {
            *g = rng.random_range(*lo..=*hi);
        }
    }
    out
}

/// Breed `population_size` offspring.
pub fn breed<R: Rng + ?Sized>(population: &Population, config: &GaConfig, rng: &mut R) -> Vec<Genes> {
    let m = config.population_size;
    let mut children = Vec::with_capacity(m);
    while children.len() < m {
        let a = select_parent(population, rng).genes;
        let b = select_parent(population, rng).genes;
        let (c1, c2) = crossover(&a, &b, config.crossover_prob, rng);
        children.push(mutate(&c1, config.mutation_prob, &config.bounds, rng));
        if children.len() < m {
            children.push(mutate(&c2, config.mutation_prob, &config.bounds, rng));
        }
    }
    children
}

/// Turn raw evaluator output into individuals. Failures and NaN losses get
/// `upsilon = inf`.
pub fn score<X>(
    genes: &[Genes],
    results: Vec<Result<Evaluation<X>, String>>,
    config: &GaConfig,
    generation: usize,
    first_experiment_id: u64,
) -> (Vec<Individual>, Vec<Option<X>>) {
    assert_eq!(genes.len(), results.len(), "one evaluation per chromosome");
    let mut individuals = Vec::with_capacity(genes.len());
    let mut extras = Vec::with_capacity(genes.len());
    for (k, (g, r)) in genes.iter().zip(results).enumerate() {
        let experiment_id = first_experiment_id + k as u64;
        let (f_loss, p_loss, upsilon, failure, extra) = match r {
            Ok(e) => {
                let u = config.upsilon(e.f_loss, e.p_loss);
                if u.is_nan() {
                    (e.f_loss, e.p_loss, f64::INFINITY, Some("loss is NaN".to_string()), Some(e.extra))
                } else {
                    (e.f_loss, e.p_loss, u, None, Some(e.extra))
                }
            }
            Err(msg) => (f64::INFINITY, f64::INFINITY, f64::INFINITY, Some(msg), None),
        };
        individuals.push(Individual { genes: *g, f_loss, p_loss, upsilon, generation, experiment_id, failure });
        extras.push(extra);
    }
    (individuals, extras)
}

/// Draw and evaluate a uniform random initial population.
pub fn initial_population<X, R, F>(config: &GaConfig, rng: &mut R, evaluate: F) -> (Population, Vec<Option<X>>)
where
    R: Rng + ?Sized,
    F: FnOnce(&[Genes]) -> Vec<Result<Evaluation<X>, String>>,
{
    let genes: Vec<Genes> = (0..config.population_size).map(|_| config.random_genes(rng)).collect();
    let results = evaluate(&genes);
    let (members, extras) = score(&genes, results, config, 0, 0);
    (Population::new(members), extras)
}

/// The next population: the `elitism_count` best parents, then the best of
/// the remaining parents and all offspring.
pub fn replace(population: &Population, offspring: &[Individual], config: &GaConfig) -> Population {
    let m = config.population_size;
    let e = config.elitism_count.min(population.len());
    let mut next: Vec<Individual> = population.0[..e].to_vec();
    let mut rest: Vec<Individual> = population.0[e..].iter().chain(offspring).cloned().collect();
    sort_by_upsilon(&mut rest);
    next.extend(rest.into_iter().take(m - e));
    Population::new(next)
}

#[derive(Clone, Debug)]
pub struct GenerationOutcome<X> {
    pub population: Population,
    /// The evaluated offspring in breeding order.
    pub offspring: Vec<Individual>,
    pub extras: Vec<Option<X>>,
}

impl<X> GenerationOutcome<X> {
    pub fn failures(&self) -> impl Iterator<Item = &Individual> {
        self.offspring.iter().filter(|i| i.failure.is_some())
    }
}

/// One generation: breed, evaluate all offspring in one batch, replace.
pub fn evolve_generation<X, R, F>(
    population: &Population,
    generation: usize,
    first_experiment_id: u64,
    config: &GaConfig,
    rng: &mut R,
    evaluate: F,
) -> GenerationOutcome<X>
where
    R: Rng + ?Sized,
    F: FnOnce(&[Genes]) -> Vec<Result<Evaluation<X>, String>>,
{
    let genes = breed(population, config, rng);
    let results = evaluate(&genes);
    let (offspring, extras) = score(&genes, results, config, generation, first_experiment_id);
    let population = replace(population, &offspring, config);
    GenerationOutcome { population, offspring, extras }
}

pub fn generation_csv_header() -> Vec<String> {
    let mut h: Vec<String> = vec!["generation".into(), "experiment_id".into()];
    h.extend(GENE_NAMES.iter().map(|s| s.to_string()));
    h.extend(["f_loss", "p_loss", "upsilon", "elite"].map(String::from));
    h
}

/// One row per individual: the generation being logged, its id, the genes,
/// losses, and whether it is flagged elite.
pub fn write_generation_csv<W: Write>(
    out: W,
    generation: usize,
    rows: &[(Individual, bool)],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(generation_csv_header())?;
    for (ind, elite) in rows {
        let mut rec = vec![generation.to_string(), ind.experiment_id.to_string()];
        rec.extend(ind.genes.iter().map(|g| g.to_string()));
        rec.push(ind.f_loss.to_string());
        rec.push(ind.p_loss.to_string());
        rec.push(ind.upsilon.to_string());
        rec.push(u8::from(*elite).to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRow {
    pub generation: usize,
    pub experiment_id: u64,
    pub genes: Genes,
    pub f_loss: f64,
    pub p_loss: f64,
    pub upsilon: f64,
    pub elite: bool,
}

pub fn read_generation_csv<R: Read>(input: R) -> Result<Vec<GenerationRow>, String> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    if header != generation_csv_header() {
        return Err("unexpected generation CSV header".into());
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |k: usize| -> Result<f64, String> {
            rec[k].parse::<f64>().map_err(|e| format!("row {}: column {k}: {e}", line + 1))
        };
        let int = |k: usize| -> Result<u64, String> {
            rec[k].parse::<u64>().map_err(|e| format!("row {}: column {k}: {e}", line + 1))
        };
        let mut genes = [0.0; GENE_COUNT];
        for (k, g) in genes.iter_mut().enumerate() {
            *g = num(2 + k)?;
        }
        rows.push(GenerationRow {
            generation: int(0)? as usize,
            experiment_id: int(1)?,
            genes,
            f_loss: num(17)?,
            p_loss: num(18)?,
            upsilon: num(19)?,
            elite: int(20)? == 1,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ind(upsilon: f64, id: u64) -> Individual {
        Individual {
            genes: [id as f64; GENE_COUNT],
            f_loss: upsilon,
            p_loss: 0.0,
            upsilon,
            generation: 0,
            experiment_id: id,
            failure: None,
        }
    }

    #[test]
    fn upsilon_examples() {
        assert_eq!(upsilon_loss(5.0, 0.3, 2.0, 0.5), 5.0);
        assert_eq!(upsilon_loss(1.0, 0.5, 2.0, 0.5), 0.75);
        assert_eq!(upsilon_loss(1.0, 0.9, 2.0, 1.0), 1.0);
        // boundary takes the gate branch
        assert_eq!(upsilon_loss(2.0, 0.0, 2.0, 0.5), 2.0);
    }

    #[test]
    fn tournament_best_always_wins_its_match() {
        let pop = Population::new((0..4).map(|k| ind(k as f64, k)).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[select_parent(&pop, &mut rng).experiment_id as usize] += 1;
        }
        // rank r wins against every worse member: P = 2 (n - 1 - r) / (n (n - 1))
        for w in counts.windows(2) {
            assert!(w[0] > w[1], "{counts:?}");
        }
        assert_eq!(counts[3], 0);
        assert!((counts[0] as f64 / 1e4 - 0.5).abs() < 0.03);
    }

    #[test]
    fn crossover_examples() {
        let a = [1.0; GENE_COUNT];
        let b = [2.0; GENE_COUNT];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(crossover(&a, &b, 0.0, &mut rng), (a, b));
        let (c1, c2) = crossover(&a, &a, 1.0, &mut rng);
        assert_eq!((c1, c2), (a, a));
        let c = splice(&a, &b, 6);
        assert_eq!(Chromosome::from_genes(&c).follower, Chromosome::from_genes(&a).follower);
        assert_eq!(Chromosome::from_genes(&c).leader, Chromosome::from_genes(&b).leader);
    }

    #[test]
    fn mutation_examples() {
        let cfg = GaConfig::default();
        let g = Chromosome::hand_tuned().genes();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(mutate(&g, 0.0, &cfg.bounds, &mut rng), g);
        let mut mean = [0.0; GENE_COUNT];
        let trials = 20_000;
        for _ in 0..trials {
            let m = mutate(&g, 1.0, &cfg.bounds, &mut rng);
            assert!(cfg.within_bounds(&m));
            for (s, v) in mean.iter_mut().zip(m) {
                *s += v / trials as f64;
            }
        }
        for (k, [lo, hi]) in cfg.bounds.iter().enumerate() {
            let mid = (lo + hi) / 2.0;
            assert!((mean[k] - mid).abs() < 0.05 * (hi - lo), "gene {k}");
        }
    }

    #[test]
    fn full_elitism_freezes_population() {
        let cfg = GaConfig { population_size: 4, elitism_count: 4, ..GaConfig::default() };
        let pop = Population::new((0..4).map(|k| ind(k as f64, k)).collect());
        let offspring: Vec<_> = (10..14).map(|k| ind(-1.0, k)).collect();
        assert_eq!(replace(&pop, &offspring, &cfg), pop);
    }

    #[test]
    fn replacement_keeps_elites_and_size() {
        let cfg = GaConfig { population_size: 4, elitism_count: 1, ..GaConfig::default() };
        let pop = Population::new((0..4).map(|k| ind(k as f64, k)).collect());
        let offspring = vec![ind(0.5, 10), ind(9.0, 11), ind(f64::INFINITY, 12), ind(1.5, 13)];
        let next = replace(&pop, &offspring, &cfg);
        let ids: Vec<u64> = next.members().iter().map(|i| i.experiment_id).collect();
        assert_eq!(ids, vec![0, 10, 1, 13]);
    }

    #[test]
    fn failures_get_infinite_upsilon() {
        let cfg = GaConfig::default();
        let genes = vec![[0.5; GENE_COUNT]; 2];
        let results: Vec<Result<Evaluation<()>, String>> =
            vec![Err("boom".into()), Ok(Evaluation { f_loss: 1.0, p_loss: 0.2, extra: () })];
        let (inds, extras) = score(&genes, results, &cfg, 3, 40);
        assert_eq!(inds[0].upsilon, f64::INFINITY);
        assert_eq!(inds[0].failure.as_deref(), Some("boom"));
        assert!(extras[0].is_none());
        assert_eq!(inds[1].experiment_id, 41);
        assert_eq!(inds[1].upsilon, 0.6);
    }

    #[test]
    fn csv_round_trip() {
        let mut a = ind(0.1 + 0.2, 7);
        a.genes[3] = std::f64::consts::PI;
        let b = ind(f64::INFINITY, 8);
        let mut buf = Vec::new();
        write_generation_csv(&mut buf, 2, &[(a.clone(), true), (b.clone(), false)]).unwrap();
        let rows = read_generation_csv(buf.as_slice()).unwrap();
        assert_eq!(rows[0].genes, a.genes);
        assert_eq!(rows[0].upsilon, a.upsilon);
        assert!(rows[0].elite && !rows[1].elite);
        assert_eq!(rows[1].upsilon, f64::INFINITY);
    }

    #[test]
    fn default_config_is_valid() {
        assert!(GaConfig::default().validate().is_ok());
        let bad = GaConfig { elitism_count: 11, ..GaConfig::default() };
        assert_eq!(bad.validate().unwrap_err().0, "elitism_count");
    }
}
