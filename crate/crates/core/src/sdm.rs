//! Sequential decision making within one epoch.
//!
//! Each available car is addressed by one atomic `(origin, destination)` trip.
//! The car closest to the origin takes the trip; a waiting passenger for that
//! exact trip is always served first, an idle car with no such passenger
//! relocates empty, and anything else keeps its current task ("do nothing").

use std::io::Write;

use rand::Rng;

use crate::env::{advance_time, categorical};
use crate::error::{Error, Result};
use crate::pattern::{RewardSpec, TrafficPattern};
use crate::state::{SdmState, SystemState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AtomicAction {
    pub origin: usize,
    pub destination: usize,
}

impl AtomicAction {
    pub fn new(origin: usize, destination: usize) -> Self {
        Self {
            origin,
            destination,
        }
    }

    /// Flat index `origin * R + destination`.
    #[inline]
    pub fn index(self, regions: usize) -> usize {
        self.origin * regions + self.destination
    }

    #[inline]
    pub fn from_index(index: usize, regions: usize) -> Self {
        Self::new(index / regions, index % regions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Match,
    EmptyRoute,
    DoNothing,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Match => "match",
            TaskKind::EmptyRoute => "empty-route",
            TaskKind::DoNothing => "do-nothing",
        }
    }
}

/// Effect of one atomic action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub kind: TaskKind,
    pub reward: f64,
    /// Remaining travel time of the car that was picked.
    pub eta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// 1-based SDM step within the epoch.
    pub step: usize,
    pub action: AtomicAction,
    pub kind: TaskKind,
    pub reward: f64,
    pub behavior_prob: f64,
}

/// `I_t`: cars at most `L` minutes from their destination. Do-nothing cars are
/// held outside `cars` and never counted.
pub fn available_car_count(state: &SdmState) -> usize {
    (0..state.regions())
        .map(|o| state.cars.available_at(o, state.patience) as usize)
        .sum()
}

/// Bitset of origins with an available car.
#[inline]
pub fn available_origins(state: &SdmState) -> u64 {
    let mut bits = 0u64;
    for o in 0..state.regions() {
        if state.cars.available_at(o, state.patience) > 0 {
            bits |= 1 << o;
        }
    }
    bits
}

/// Expands an origin bitset into the `R^2` action mask.
pub fn mask_from_origins(origins: u64, regions: usize) -> Vec<bool> {
    (0..regions * regions)
        .map(|a| origins >> (a / regions) & 1 == 1)
        .collect()
}

/// `mask[o * R + d]` is true iff some car is at most `L` minutes from `o`.
pub fn feasible_mask(state: &SdmState) -> Vec<bool> {
    mask_from_origins(available_origins(state), state.regions())
}

impl SdmState {
    /// Applies one atomic action in place.
    pub fn apply(
        &mut self,
        action: AtomicAction,
        rewards: &RewardSpec,
        pattern: &TrafficPattern,
    ) -> Result<Outcome> {
        let (o, d) = (action.origin, action.destination);
        let r = self.regions();
        if o >= r || d >= r {
            return Err(Error::InfeasibleAction {
                origin: o,
                destination: d,
            });
        }
        let eta = self
            .cars
            .closest(o, self.patience)
            .ok_or(Error::InfeasibleAction {
                origin: o,
                destination: d,
            })?;
        let t = self.epoch;
        self.cars.remove_one(o, eta);
        let outcome = if self.passengers.get(o, d) > 0 {
            // requests for the same trip are exchangeable, so serving "a random one"
            // is a count decrement
            self.passengers.set(o, d, self.passengers.get(o, d) - 1);
            self.cars.add(d, eta + pattern.tau(t, o, d), 1);
            Outcome {
                kind: TaskKind::Match,
                reward: rewards.match_reward(t, o, d, eta),
                eta,
            }
        } else if eta == 0 && d != o {
            self.cars.add(d, pattern.tau(t, o, d), 1);
            Outcome {
                kind: TaskKind::EmptyRoute,
                reward: -rewards.empty_cost(t, o, d),
                eta,
            }
        } else {
            self.add_do_nothing(o, eta);
            Outcome {
                kind: TaskKind::DoNothing,
                reward: 0.0,
                eta,
            }
        };
        Ok(outcome)
    }
}

/// Functional form of [`SdmState::apply`].
pub fn apply_atomic(
    state: &SdmState,
    action: AtomicAction,
    rewards: &RewardSpec,
    pattern: &TrafficPattern,
) -> Result<(SdmState, f64, TaskKind)> {
    let mut next = state.clone();
    let outcome = next.apply(action, rewards, pattern)?;
    Ok((next, outcome.reward, outcome.kind))
}

/// Anything that yields a distribution over the `R^2` trips for an SDM state.
pub trait DispatchPolicy {
    /// Writes `pi(.|state)` into `probs` (length `R^2`). Infeasible trips must get 0.
    fn distribution(&self, state: &SdmState, probs: &mut [f64]) -> Result<()>;
}

impl<P: DispatchPolicy + ?Sized> DispatchPolicy for &P {
    fn distribution(&self, state: &SdmState, probs: &mut [f64]) -> Result<()> {
        (**self).distribution(state, probs)
    }
}

/// Inverse-CDF draw from a trip distribution; zero-probability trips are never returned.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], regions: usize, rng: &mut R) -> AtomicAction {
    AtomicAction::from_index(categorical(probs, rng), regions)
}

/// Runs the SDM process for one epoch and transitions to the next one.
pub fn run_epoch<P, R>(
    state: SystemState,
    policy: &P,
    rewards: &RewardSpec,
    pattern: &TrafficPattern,
    rng: &mut R,
) -> Result<(Vec<StepRecord>, SystemState)>
where
    P: DispatchPolicy + ?Sized,
    R: Rng + ?Sized,
{
    let mut records = Vec::new();
    let next = run_epoch_with(state, policy, rewards, pattern, rng, |rec| records.push(*rec))?;
    Ok((records, next))
}

/// [`run_epoch`] that hands each record to `on_step` instead of collecting them.
///
/// The policy sees every pre-action SDM state through `distribution`, which is
/// where callers that need the states should capture them.
pub fn run_epoch_with<P, R, F>(
    state: SystemState,
    policy: &P,
    rewards: &RewardSpec,
    pattern: &TrafficPattern,
    rng: &mut R,
    mut on_step: F,
) -> Result<SystemState>
where
    P: DispatchPolicy + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&StepRecord),
{
    let r = pattern.regions();
    let mut sdm = SdmState::begin(state, pattern.patience());
    let steps = available_car_count(&sdm);
    let mut probs = vec![0.0; r * r];
    for step in 1..=steps {
        policy.distribution(&sdm, &mut probs)?;
        let origins = available_origins(&sdm);
        for (a, &p) in probs.iter().enumerate() {
            if p > 0.0 && origins >> (a / r) & 1 == 0 {
                return Err(Error::PolicyMask { index: a, prob: p });
            }
        }
        let action = sample_action(&probs, r, rng);
        let behavior_prob = probs[action.index(r)];
        let outcome = sdm.apply(action, rewards, pattern)?;
        let record = StepRecord {
            epoch: sdm.epoch,
            step,
            action,
            kind: outcome.kind,
            reward: outcome.reward,
            behavior_prob,
        };
        on_step(&record);
    }
    debug_assert_eq!(available_car_count(&sdm), 0);
    Ok(advance_time(&sdm, pattern, rng))
}

/// Writes step records as CSV. Regions are written 1-based. `header` lines are
/// emitted as `#` comments before the column row.
pub fn write_trace<W: Write>(mut out: W, header: &[String], records: &[StepRecord]) -> std::io::Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "epoch,step,origin,destination,kind,reward,behavior_prob")?;
    for rec in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            rec.epoch,
            rec.step,
            rec.action.origin + 1,
            rec.action.destination + 1,
            rec.kind.as_str(),
            rec.reward,
            rec.behavior_prob
        )?;
    }
    Ok(())
}
