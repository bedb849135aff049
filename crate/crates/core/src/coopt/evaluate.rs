use crate::flocking::{extract_windows, simulate, Chromosome, FlockingError, ReferenceTrajectory, SimConfig, SimTrace};
use crate::metrics::{flocking_loss, MetricWeights, MetricsVector};
use crate::nn::{privacy_loss, Discriminator, NnConfig, ObservationWindow};
use crate::seed::{self, Stream};

/// Everything an experiment needs besides the chromosome.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub sim: &'a SimConfig,
    pub weights: &'a MetricWeights,
    pub nn: &'a NnConfig,
    pub traj: &'a ReferenceTrajectory,
    pub net: &'a Discriminator,
    pub master_seed: u64,
    pub repeats: usize,
}

impl EvalContext<'_> {
    /// Simulation seed of one flight of an experiment.
    pub fn flight_seed(&self, experiment_id: u64, repeat: usize) -> u64 {
        seed::derive(self.master_seed, Stream::Experiment, experiment_id * self.repeats as u64 + repeat as u64)
    }
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub experiment_id: u64,
    pub f_loss: f64,
    pub p_loss: f64,
    /// Metrics averaged over repeats; `None` if a flight aborted.
    pub metrics: Option<MetricsVector>,
    pub traces: Vec<SimTrace>,
    pub windows: Vec<ObservationWindow>,
    /// Why the simulation aborted, if it did.
    pub aborted: Option<String>,
}

/// Simulate one flight and cut it into windows.
pub fn simulate_windows(
    chromosome: &Chromosome,
    traj: &ReferenceTrajectory,
    sim: &SimConfig,
    nn: &NnConfig,
) -> Result<(SimTrace, Vec<ObservationWindow>), FlockingError> {
    let trace = simulate(chromosome, traj, sim)?;
    let windows = extract_windows(&trace, nn.window_seconds, nn.sample_rate)?;
    Ok((trace, windows))
}

/// Fly a chromosome `repeats` times and score it. Losses are averaged over
/// flights; the privacy loss of a flight uses that flight's windows. A
/// non-finite simulation scores `f_loss = inf`, `p_loss = 1 / gamma`.
pub fn evaluate_chromosome(ctx: &EvalContext<'_>, chromosome: &Chromosome, experiment_id: u64) -> Result<Experiment, String> {
    chromosome.validate(ctx.sim.sensing_range)?;
    let mut f_sum = 0.0;
    let mut p_sum = 0.0;
    let mut m_sum = [0.0; 9];
    let mut traces = Vec::with_capacity(ctx.repeats);
    let mut windows = Vec::new();
    for r in 0..ctx.repeats {
        let sim = ctx.sim.with_seed(ctx.flight_seed(experiment_id, r));
        match simulate_windows(chromosome, ctx.traj, &sim, ctx.nn) {
            Ok((trace, w)) => {
                let (f, m) = flocking_loss(&trace, ctx.traj, ctx.weights);
                let p = privacy_loss(ctx.net, &w, ctx.nn.gamma).map_err(|e| e.to_string())?;
                f_sum += f;
                p_sum += p;
                for (s, v) in m_sum.iter_mut().zip(m.0) {
                    *s += v;
                }
                traces.push(trace);
                windows.extend(w);
            }
            Err(e @ FlockingError::NonFinite { .. }) => {
                return Ok(Experiment {
                    experiment_id,
                    f_loss: f64::INFINITY,
                    p_loss: 1.0 / ctx.nn.gamma,
                    metrics: None,
                    traces: Vec::new(),
                    windows: Vec::new(),
                    aborted: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e.to_string()),
        }
    }
    let k = ctx.repeats as f64;
    Ok(Experiment {
        experiment_id,
        f_loss: f_sum / k,
        p_loss: p_sum / k,
        metrics: Some(MetricsVector(m_sum.map(|v| v / k))),
        traces,
        windows,
        aborted: None,
    })
}
