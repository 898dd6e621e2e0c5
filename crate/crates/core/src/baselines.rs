//! Reference policies used as comparators.

use rand::Rng;

use crate::error::{Error, Result};
use crate::sdm::{available_origins, sample_action, AtomicAction, DispatchPolicy};
use crate::state::SdmState;

/// Uniform over feasible trips.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomFeasible;

impl DispatchPolicy for RandomFeasible {
    fn distribution(&self, state: &SdmState, probs: &mut [f64]) -> Result<()> {
        let r = state.regions();
        let origins = available_origins(state);
        if origins == 0 {
            return Err(Error::EmptyMask);
        }
        let p = 1.0 / (origins.count_ones() as usize * r) as f64;
        for (a, out) in probs.iter_mut().enumerate() {
            *out = if origins >> (a / r) & 1 == 1 { p } else { 0.0 };
        }
        Ok(())
    }
}

pub fn random_feasible_policy<R: Rng + ?Sized>(state: &SdmState, rng: &mut R) -> Result<AtomicAction> {
    let r = state.regions();
    let mut probs = vec![0.0; r * r];
    RandomFeasible.distribution(state, &mut probs)?;
    Ok(sample_action(&probs, r, rng))
}

/// Myopic matcher: the feasible trip with the most waiting requests (lowest
/// index on ties); with no request at any feasible origin, the lowest-index
/// available origin stays put.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyMatching;

impl GreedyMatching {
    pub fn choose(state: &SdmState) -> Result<AtomicAction> {
        let r = state.regions();
        let origins = available_origins(state);
        if origins == 0 {
            return Err(Error::EmptyMask);
        }
        let mut best: Option<(u32, AtomicAction)> = None;
        for o in (0..r).filter(|o| origins >> o & 1 == 1) {
            for d in 0..r {
                let waiting = state.passengers.get(o, d);
                if waiting > 0 && best.map_or(true, |(n, _)| waiting > n) {
                    best = Some((waiting, AtomicAction::new(o, d)));
                }
            }
        }
        Ok(best.map(|(_, a)| a).unwrap_or_else(|| {
            let o = origins.trailing_zeros() as usize;
            AtomicAction::new(o, o)
        }))
    }
}

impl DispatchPolicy for GreedyMatching {
    fn distribution(&self, state: &SdmState, probs: &mut [f64]) -> Result<()> {
        let action = Self::choose(state)?;
        probs.fill(0.0);
        probs[action.index(state.regions())] = 1.0;
        Ok(())
    }
}

/// The greedy choice; the generator is unused because ties are broken by index.
pub fn greedy_matching_policy<R: Rng + ?Sized>(state: &SdmState, _rng: &mut R) -> Result<AtomicAction> {
    GreedyMatching::choose(state)
}
