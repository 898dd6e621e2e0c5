//! Episode simulation and fulfilled-request statistics.

use rand::Rng;
use rayon::prelude::*;

use crate::env::{initial_state, sample_arrivals};
use crate::error::Result;
use crate::pattern::{RewardSpec, TrafficPattern};
use crate::rng::{rng_for, stream};
use crate::sdm::{run_epoch_with, DispatchPolicy, StepRecord, TaskKind};
use crate::state::SystemState;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpisodeSummary {
    pub arrivals: u64,
    pub matches: u64,
    pub empty_routes: u64,
    pub steps: u64,
    pub total_reward: f64,
}

impl EpisodeSummary {
    /// Matches over arrivals; an episode without arrivals counts as fully served.
    pub fn fulfilled_fraction(&self) -> f64 {
        if self.arrivals == 0 {
            1.0
        } else {
            self.matches as f64 / self.arrivals as f64
        }
    }

    /// Counts one SDM step.
    pub fn record(&mut self, kind: TaskKind, reward: f64) {
        self.steps += 1;
        self.total_reward += reward;
        match kind {
            TaskKind::Match => self.matches += 1,
            TaskKind::EmptyRoute => self.empty_routes += 1,
            TaskKind::DoNothing => {}
        }
    }
}

/// Epoch-1 state with minute-1 arrivals already sampled.
pub fn start_episode<R: Rng + ?Sized>(pattern: &TrafficPattern, rng: &mut R) -> SystemState {
    let mut state = initial_state(pattern);
    state.passengers = sample_arrivals(pattern, 1, rng);
    state
}

/// Runs one working day. `on_epoch_start` sees each epoch's system state
/// before the SDM process runs; `on_step` sees every record.
pub fn simulate_episode_with<P, R>(
    policy: &P,
    pattern: &TrafficPattern,
    rewards: &RewardSpec,
    rng: &mut R,
    mut on_epoch_start: impl FnMut(&SystemState),
    mut on_step: impl FnMut(&StepRecord),
) -> Result<EpisodeSummary>
where
    P: DispatchPolicy + ?Sized,
    R: Rng + ?Sized,
{
    let mut summary = EpisodeSummary::default();
    let mut state = start_episode(pattern, rng);
    while !state.is_terminal(pattern) {
        summary.arrivals += state.passengers.total();
        on_epoch_start(&state);
        state = run_epoch_with(state, policy, rewards, pattern, rng, |rec| {
            summary.record(rec.kind, rec.reward);
            on_step(rec);
        })?;
    }
    Ok(summary)
}

pub fn simulate_episode<P, R>(
    policy: &P,
    pattern: &TrafficPattern,
    rewards: &RewardSpec,
    rng: &mut R,
) -> Result<EpisodeSummary>
where
    P: DispatchPolicy + ?Sized,
    R: Rng + ?Sized,
{
    simulate_episode_with(policy, pattern, rewards, rng, |_| {}, |_| {})
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: Vec<EpisodeSummary>,
    pub mean_fraction: f64,
    /// Standard error of the mean fraction across episodes.
    pub std_error: f64,
    pub mean_reward: f64,
}

impl EvalSummary {
    pub fn from_episodes(episodes: Vec<EpisodeSummary>) -> Self {
        let n = episodes.len().max(1) as f64;
        let fractions: Vec<f64> = episodes.iter().map(EpisodeSummary::fulfilled_fraction).collect();
        let mean_fraction = fractions.iter().sum::<f64>() / n;
        let var = if episodes.len() > 1 {
            fractions.iter().map(|f| (f - mean_fraction).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mean_reward = episodes.iter().map(|e| e.total_reward).sum::<f64>() / n;
        if episodes.iter().any(|e| e.arrivals == 0) {
            log::warn!("episodes without ride requests are counted as fully served (0/0 = 1)");
        }
        Self {
            mean_fraction,
            std_error: (var / n).sqrt(),
            mean_reward,
            episodes,
        }
    }
}

/// Evaluates a policy on `episodes` days; day `k` uses the generator derived from `(seed, k)`.
pub fn evaluate<P>(
    policy: &P,
    pattern: &TrafficPattern,
    rewards: &RewardSpec,
    episodes: usize,
    seed: u64,
    parallel: bool,
) -> Result<EvalSummary>
where
    P: DispatchPolicy + Sync + ?Sized,
{
    let run = |k: usize| {
        let mut rng = eval_rng(seed, k);
        simulate_episode(policy, pattern, rewards, &mut rng)
    };
    let results: Result<Vec<EpisodeSummary>> = if parallel {
        (0..episodes).into_par_iter().map(run).collect()
    } else {
        (0..episodes).map(run).collect()
    };
    Ok(EvalSummary::from_episodes(results?))
}

pub fn eval_rng(seed: u64, episode: usize) -> crate::rng::SimRng {
    rng_for(seed, &[stream::EVAL, episode as u64])
}
