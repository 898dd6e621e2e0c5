//! Count-based system and SDM states.

use std::sync::Arc;

use crate::pattern::TrafficPattern;

/// `counts[d][eta]`: cars whose final destination is `d` and whose total remaining
/// travel time is `eta`, for `eta` in `0..=tau_max[d] + L`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CarsStatus {
    offsets: Arc<[usize]>,
    counts: Vec<u32>,
}

impl CarsStatus {
    pub fn empty(pattern: &TrafficPattern) -> Self {
        Self::with_lengths(
            pattern
                .tau_max()
                .iter()
                .map(|tau| tau + pattern.patience() + 1),
        )
    }

    /// Empty status with explicit per-destination `eta` ranges.
    pub fn with_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        for len in lengths {
            offsets.push(offsets.last().unwrap() + len);
        }
        let total = *offsets.last().unwrap();
        Self {
            offsets: offsets.into(),
            counts: vec![0; total],
        }
    }

    pub fn regions(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of `eta` slots tracked for destination `d`.
    pub fn slots(&self, d: usize) -> usize {
        self.offsets[d + 1] - self.offsets[d]
    }

    #[inline]
    pub fn get(&self, d: usize, eta: usize) -> u32 {
        self.counts[self.offsets[d] + eta]
    }

    #[inline]
    pub fn set(&mut self, d: usize, eta: usize, n: u32) {
        let i = self.offsets[d] + eta;
        self.counts[i] = n;
    }

    #[inline]
    pub fn add(&mut self, d: usize, eta: usize, n: u32) {
        let i = self.offsets[d] + eta;
        self.counts[i] += n;
    }

    #[inline]
    pub fn remove_one(&mut self, d: usize, eta: usize) {
        let i = self.offsets[d] + eta;
        debug_assert!(self.counts[i] > 0);
        self.counts[i] -= 1;
    }

    pub fn destination(&self, d: usize) -> &[u32] {
        &self.counts[self.offsets[d]..self.offsets[d + 1]]
    }

    /// Flat view in destination-major order.
    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Cars at most `patience` minutes away from region `o`.
    #[inline]
    pub fn available_at(&self, o: usize, patience: usize) -> u32 {
        self.destination(o)[..=patience].iter().sum()
    }

    /// Smallest `eta <= patience` with a car heading to `o`.
    #[inline]
    pub fn closest(&self, o: usize, patience: usize) -> Option<usize> {
        self.destination(o)[..=patience].iter().position(|&c| c > 0)
    }
}

/// `counts[o][d]`: ride requests waiting this minute.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PassengersStatus {
    regions: usize,
    counts: Vec<u32>,
}

impl PassengersStatus {
    pub fn empty(regions: usize) -> Self {
        Self {
            regions,
            counts: vec![0; regions * regions],
        }
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    #[inline]
    pub fn get(&self, o: usize, d: usize) -> u32 {
        self.counts[o * self.regions + d]
    }

    #[inline]
    pub fn set(&mut self, o: usize, d: usize, n: u32) {
        self.counts[o * self.regions + d] = n;
    }

    #[inline]
    pub fn add(&mut self, o: usize, d: usize, n: u32) {
        self.counts[o * self.regions + d] += n;
    }

    /// Row-major flat view, index `o * R + d`.
    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// MDP state at the start of a decision epoch. `epoch == H + 1` is terminal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemState {
    pub epoch: usize,
    pub cars: CarsStatus,
    pub passengers: PassengersStatus,
}

impl SystemState {
    pub fn is_terminal(&self, pattern: &TrafficPattern) -> bool {
        self.epoch > pattern.horizon()
    }
}

/// State of the sequential decision process within one epoch.
///
/// `do_nothing[d][eta]` (for `eta` in `0..=L`) holds cars that were told to keep
/// their current task this epoch; they are out of the available pool until the
/// next epoch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SdmState {
    pub epoch: usize,
    pub cars: CarsStatus,
    pub passengers: PassengersStatus,
    pub do_nothing: Vec<u32>,
    pub patience: usize,
}

impl SdmState {
    /// First SDM state of an epoch: the system state plus an empty do-nothing tracker.
    pub fn begin(state: SystemState, patience: usize) -> Self {
        let regions = state.cars.regions();
        Self {
            epoch: state.epoch,
            cars: state.cars,
            passengers: state.passengers,
            do_nothing: vec![0; regions * (patience + 1)],
            patience,
        }
    }

    pub fn regions(&self) -> usize {
        self.cars.regions()
    }

    #[inline]
    pub fn do_nothing(&self, d: usize, eta: usize) -> u32 {
        self.do_nothing[d * (self.patience + 1) + eta]
    }

    #[inline]
    pub fn add_do_nothing(&mut self, d: usize, eta: usize) {
        self.do_nothing[d * (self.patience + 1) + eta] += 1;
    }

    /// Cars in `cars` plus cars in the do-nothing tracker.
    pub fn fleet_total(&self) -> u64 {
        self.cars.total() + self.do_nothing.iter().map(|&c| c as u64).sum::<u64>()
    }
}
