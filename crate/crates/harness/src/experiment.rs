//! Monte Carlo trials: every trial redraws the deployment, activity,
//! channels, pilots and noise from its own seed, then runs one detector.

use cfdetect::covbase::{run_cov, CovKnowledge};
use cfdetect::ghvi::run_ghvi;
use cfdetect::mapdet::run_map;
use cfdetect::simkit::{
    build_scenario, derive_seed, draw_activity, draw_channels, generate_pilots, perturb_knowledge, synthesize,
    SystemConfig,
};
use cfdetect::{ChannelRealization, PilotMatrix, ReceivedSignals, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, AlgorithmSpec, ExperimentSpec};
use crate::error::{HarnessError, Result};

/// Sub-streams of a trial seed.
pub mod stream {
    pub const SCENARIO: u64 = 0;
    pub const ACTIVITY: u64 = 1;
    pub const CHANNELS: u64 = 2;
    pub const PILOTS: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const SOLVER: u64 = 5;
    pub const KNOWLEDGE: u64 = 6;
    pub const EPSILON: u64 = 7;
}

pub fn trial_seed(master_seed: u64, index: usize) -> u64 {
    derive_seed(master_seed, index as u64)
}

pub fn stream_rng(trial_seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, stream))
}

/// Everything drawn for one trial.
#[derive(Debug, Clone)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    /// System configuration after the per-trial overrides; `seed` stays the
    /// master seed.
    pub config: SystemConfig,
    pub scenario: Scenario,
    /// The scenario as a knowledge-based detector is told about it.
    pub knowledge: Scenario,
    pub channels: ChannelRealization,
    pub pilots: PilotMatrix,
    pub signals: ReceivedSignals,
}

impl Trial {
    pub fn truth(&self) -> &[bool] {
        &self.channels.activity
    }
}

pub fn generate_trial(spec: &ExperimentSpec, index: usize) -> Result<Trial> {
    let seed = trial_seed(spec.master_seed(), index);
    let mut config = spec.system.clone();
    config.seed = spec.master_seed();
    if let Some(f) = spec.perturbation.rician_fraction {
        config.rician_fraction = f;
    }
    if let Some([lo, hi]) = spec.perturbation.epsilon_range {
        let u: f64 = stream_rng(seed, stream::EPSILON).random();
        config.epsilon = lo + (hi - lo) * u;
    }
    let scenario: Scenario = build_scenario(&config, &mut stream_rng(seed, stream::SCENARIO))?;
    let activity = draw_activity(&config, &mut stream_rng(seed, stream::ACTIVITY));
    let channels = draw_channels(&scenario, &config, &activity, &mut stream_rng(seed, stream::CHANNELS))?;
    let pilots = generate_pilots(&config, &mut stream_rng(seed, stream::PILOTS));
    let signals = synthesize(
        &scenario,
        &channels,
        &pilots,
        &config,
        &mut stream_rng(seed, stream::NOISE),
    )?;
    let knowledge = perturb_knowledge(
        &scenario,
        &spec.perturbation.knowledge(),
        &mut stream_rng(seed, stream::KNOWLEDGE),
    )?;
    Ok(Trial {
        index,
        seed,
        config,
        scenario,
        knowledge,
        channels,
        pilots,
        signals,
    })
}

/// Scores from one detector run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs `algorithm.name` on one problem. `knowledge` is only read by the
/// covariance detector; `init_seed` only by the Bayesian ones.
pub fn detect(
    algorithm: &AlgorithmSpec,
    signals: &ReceivedSignals,
    pilots: &PilotMatrix,
    knowledge: &CovKnowledge<f64>,
    init_seed: u64,
) -> cfdetect::Result<Detection> {
    let mut rng = stream_rng(init_seed, stream::SOLVER);
    let hyper = algorithm.hyper();
    let (scores, iterations, converged) = match algorithm.name {
        Algorithm::Ghvi => {
            let o = run_ghvi(signals, pilots, &algorithm.solver, &hyper, &mut rng)?;
            (o.scores, o.iterations, o.converged)
        }
        Algorithm::Map => {
            let o = run_map(signals, pilots, &algorithm.solver, &hyper, &mut rng)?;
            (o.scores, o.iterations, o.converged)
        }
        Algorithm::Cov => {
            let o = run_cov(signals, knowledge, &algorithm.cov)?;
            (o.scores, o.iterations, o.converged)
        }
    };
    Ok(Detection {
        scores,
        iterations,
        converged,
    })
}

pub fn detect_trial(spec: &ExperimentSpec, trial: &Trial) -> cfdetect::Result<Detection> {
    let knowledge = CovKnowledge::from_scenario(&trial.knowledge, &trial.pilots);
    detect(&spec.algorithm, &trial.signals, &trial.pilots, &knowledge, trial.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub index: usize,
    pub scores: Vec<f64>,
    pub truth: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
}

/// A trial whose detector aborted; it is left out of every statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialSet {
    /// Completed trials in index order.
    pub records: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
}

impl TrialSet {
    /// `(score, active)` for every user of every completed trial.
    pub fn scored(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.records
            .iter()
            .flat_map(|r| r.scores.iter().copied().zip(r.truth.iter().copied()))
    }

    pub fn active_count(&self) -> usize {
        self.scored().filter(|&(_, a)| a).count()
    }

    pub fn inactive_count(&self) -> usize {
        self.scored().filter(|&(_, a)| !a).count()
    }

    /// `(PMD, PFA)` when deciding `score > threshold`; a rate with an empty
    /// denominator is NaN.
    pub fn error_rates(&self, threshold: f64) -> (f64, f64) {
        let (mut missed, mut active, mut false_alarm, mut inactive) = (0usize, 0usize, 0usize, 0usize);
        for (s, a) in self.scored() {
            let said_active = s > threshold;
            if a {
                active += 1;
                missed += usize::from(!said_active);
            } else {
                inactive += 1;
                false_alarm += usize::from(said_active);
            }
        }
        let ratio = |num: usize, den: usize| if den == 0 { f64::NAN } else { num as f64 / den as f64 };
        (ratio(missed, active), ratio(false_alarm, inactive))
    }

    /// Share of all attempted trials whose detector met its stopping rule;
    /// aborted trials count as not converged.
    pub fn converged_share(&self) -> f64 {
        let attempted = self.records.len() + self.failures.len();
        self.records.iter().filter(|r| r.converged).count() as f64 / attempted as f64
    }

    pub fn mean_iterations(&self) -> f64 {
        self.records.iter().map(|r| r.iterations as f64).sum::<f64>() / self.records.len() as f64
    }
}

fn run_one(spec: &ExperimentSpec, index: usize) -> Result<std::result::Result<TrialRecord, TrialFailure>> {
    let trial = generate_trial(spec, index)?;
    Ok(match detect_trial(spec, &trial) {
        Ok(d) => Ok(TrialRecord {
            index,
            scores: d.scores,
            truth: trial.truth().to_vec(),
            iterations: d.iterations,
            converged: d.converged,
        }),
        Err(e) => Err(TrialFailure {
            index,
            message: e.to_string(),
        }),
    })
}

/// Runs `spec.run.trials` trials in parallel. Results are gathered in trial
/// order, so the output does not depend on scheduling. A trial whose
/// simulation fails is a hard error; one whose detector aborts is recorded
/// in `failures`.
pub fn run_trials(spec: &ExperimentSpec) -> Result<TrialSet> {
    spec.validate()?;
    let work = || -> Result<Vec<_>> { (0..spec.run.trials).into_par_iter().map(|i| run_one(spec, i)).collect() };
    let outcomes = match spec.run.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Usage(format!("cannot start {n} workers: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut set = TrialSet::default();
    for o in outcomes {
        match o {
            Ok(r) => set.records.push(r),
            Err(f) => set.failures.push(f),
        }
    }
    Ok(set)
}
