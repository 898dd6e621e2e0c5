//! Rollout storage: one datapoint per SDM step, with compactly stored states.

use crate::error::{Error, Result};
use crate::eval::EpisodeSummary;
use crate::nn::SparseVec;
use crate::policy::EncoderConfig;
use crate::sdm::available_origins;
use crate::state::SdmState;

/// An SDM state as stored in the dataset. Counts live in the dataset's
/// shared buffers at `start..start + len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub time_index: u32,
    /// Bitset of origins with an available car.
    pub origins: u64,
    start: u32,
    len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Datapoint {
    pub episode: u32,
    pub epoch: u32,
    /// 1-based step within the epoch.
    pub step: u32,
    pub slot: u32,
    /// State used for bootstrapping: the next step's state, or the next
    /// epoch's first SDM state after the last step. `None` after the last step
    /// of the episode.
    pub next_slot: Option<u32>,
    pub action: u16,
    pub behavior_prob: f64,
    pub reward: f64,
    pub ret: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    encoder: EncoderConfig,
    episodes: usize,
    slots: Vec<Slot>,
    feature_index: Vec<u16>,
    feature_count: Vec<u32>,
    pub points: Vec<Datapoint>,
    /// Datapoint range of each episode.
    pub episode_ranges: Vec<std::ops::Range<usize>>,
    pub summaries: Vec<EpisodeSummary>,
}

impl Dataset {
    pub fn new(encoder: EncoderConfig) -> Self {
        Self {
            encoder,
            episodes: 0,
            slots: Vec::new(),
            feature_index: Vec::new(),
            feature_count: Vec::new(),
            points: Vec::new(),
            episode_ranges: Vec::new(),
            summaries: Vec::new(),
        }
    }

    pub fn encoder(&self) -> &EncoderConfig {
        &self.encoder
    }

    /// Number of episodes (`K`).
    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Stores an SDM state and returns its slot index.
    pub fn push_state(&mut self, state: &SdmState) -> Result<u32> {
        if self.encoder.feature_len() > u16::MAX as usize + 1 {
            return Err(Error::Shape("feature vector too long for compact storage".into()));
        }
        let start = self.feature_index.len();
        let (idx, cnt) = (&mut self.feature_index, &mut self.feature_count);
        self.encoder.for_each_count(state, |i, c| {
            idx.push(i as u16);
            cnt.push(c);
        })?;
        self.slots.push(Slot {
            time_index: state.epoch as u32,
            origins: available_origins(state),
            start: start as u32,
            len: (self.feature_index.len() - start) as u32,
        });
        Ok(self.slots.len() as u32 - 1)
    }

    /// Scaled features of a stored state.
    pub fn features_into(&self, slot: u32, out: &mut SparseVec) {
        let s = self.slots[slot as usize];
        let range = s.start as usize..(s.start + s.len) as usize;
        out.len = self.encoder.feature_len();
        out.clear();
        for (&i, &c) in self.feature_index[range.clone()].iter().zip(&self.feature_count[range]) {
            out.push(i as usize, c as f64 * self.encoder.scale_of(i as usize));
        }
    }

    pub fn features(&self, slot: u32) -> (usize, SparseVec) {
        let mut out = SparseVec::new(self.encoder.feature_len());
        self.features_into(slot, &mut out);
        (self.slots[slot as usize].time_index as usize, out)
    }

    /// Appends the episodes of `other`, renumbering them after the current ones.
    pub fn append(&mut self, other: Dataset) -> Result<()> {
        if other.encoder != self.encoder {
            return Err(Error::Shape("datasets use different encoders".into()));
        }
        let slot_offset = self.slots.len() as u32;
        let feature_offset = self.feature_index.len() as u32;
        let point_offset = self.points.len();
        let episode_offset = self.episodes as u32;
        self.slots.extend(other.slots.into_iter().map(|mut s| {
            s.start += feature_offset;
            s
        }));
        self.feature_index.extend(other.feature_index);
        self.feature_count.extend(other.feature_count);
        self.points.extend(other.points.into_iter().map(|mut p| {
            p.episode += episode_offset;
            p.slot += slot_offset;
            p.next_slot = p.next_slot.map(|n| n + slot_offset);
            p
        }));
        self.episode_ranges.extend(
            other
                .episode_ranges
                .into_iter()
                .map(|r| r.start + point_offset..r.end + point_offset),
        );
        self.summaries.extend(other.summaries);
        self.episodes += other.episodes;
        Ok(())
    }

    /// Starts a new episode; subsequent datapoints belong to it.
    pub fn begin_episode(&mut self) {
        self.episode_ranges.push(self.points.len()..self.points.len());
        self.episodes += 1;
    }

    /// Appends a datapoint to the current episode.
    pub fn push_point(&mut self, point: Datapoint) {
        self.points.push(point);
        if let Some(r) = self.episode_ranges.last_mut() {
            r.end = self.points.len();
        }
    }

    pub fn mean_fulfilled_fraction(&self) -> f64 {
        mean(self.summaries.iter().map(EpisodeSummary::fulfilled_fraction))
    }

    pub fn mean_episode_reward(&self) -> f64 {
        mean(self.summaries.iter().map(|s| s.total_reward))
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
