//! Episode collection under the current (behavior) policy.

use rand::Rng;
use rayon::prelude::*;

use super::dataset::{Datapoint, Dataset};
use crate::env::advance_time;
use crate::error::Result;
use crate::eval::{start_episode, EpisodeSummary};
use crate::nn::{SparseVec, Tape};
use crate::pattern::{RewardSpec, TrafficPattern};
use crate::policy::PolicyParams;
use crate::rng::{rng_for, stream};
use crate::sdm::{available_origins, sample_action};
use crate::state::SdmState;

/// Runs one episode with `policy`, recording every SDM step.
pub fn rollout_episode<R: Rng + ?Sized>(
    policy: &PolicyParams,
    pattern: &TrafficPattern,
    rewards: &RewardSpec,
    rng: &mut R,
) -> Result<Dataset> {
    let r = pattern.regions();
    let mut data = Dataset::new(policy.encoder.clone());
    data.begin_episode();
    let mut summary = EpisodeSummary::default();
    let mut features = SparseVec::new(policy.encoder.feature_len());
    let mut tape = Tape::default();
    let mut probs = vec![0.0; r * r];
    // Datapoint still waiting for its bootstrap state.
    let mut pending: Option<usize> = None;

    let mut state = start_episode(pattern, rng);
    while !state.is_terminal(pattern) {
        summary.arrivals += state.passengers.total();
        let epoch = state.epoch as u32;
        let mut sdm = SdmState::begin(state, pattern.patience());
        let mut step = 0u32;
        loop {
            let origins = available_origins(&sdm);
            // The state after the epoch's last step is never stored: the
            // bootstrap target there is the next epoch's first state.
            if origins == 0 && step > 0 {
                break;
            }
            let slot = data.push_state(&sdm)?;
            if let Some(p) = pending.take() {
                data.points[p].next_slot = Some(slot);
            }
            if origins == 0 {
                break;
            }
            step += 1;
            data.features_into(slot, &mut features);
            policy.distribution_encoded(sdm.epoch, &features, origins, &mut tape, &mut probs)?;
            let action = sample_action(&probs, r, rng);
            let a = action.index(r);
            let outcome = sdm.apply(action, rewards, pattern)?;
            summary.record(outcome.kind, outcome.reward);
            data.push_point(Datapoint {
                episode: 0,
                epoch,
                step,
                slot,
                next_slot: None,
                action: a as u16,
                behavior_prob: probs[a],
                reward: outcome.reward,
                ret: 0.0,
                advantage: 0.0,
            });
            pending = Some(data.points.len() - 1);
        }
        state = advance_time(&sdm, pattern, rng);
    }
    data.summaries.push(summary);
    Ok(data)
}

/// Collects `episodes` episodes; episode `k` of iteration `iteration` draws
/// from its own generator derived from `seed`, and results are merged in
/// episode order, so the dataset does not depend on thread scheduling.
pub fn collect_rollouts(
    policy: &PolicyParams,
    pattern: &TrafficPattern,
    rewards: &RewardSpec,
    episodes: usize,
    seed: u64,
    iteration: usize,
    parallel: bool,
) -> Result<Dataset> {
    let run = |k: usize| {
        let mut rng = rng_for(seed, &[stream::ROLLOUT, iteration as u64, k as u64]);
        rollout_episode(policy, pattern, rewards, &mut rng)
    };
    let parts: Result<Vec<Dataset>> = if parallel {
        (0..episodes).into_par_iter().map(run).collect()
    } else {
        (0..episodes).map(run).collect()
    };
    let mut data = Dataset::new(policy.encoder.clone());
    for part in parts? {
        data.append(part)?;
    }
    Ok(data)
}
