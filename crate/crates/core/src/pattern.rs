//! Traffic patterns, reward tables and the pattern file format.
//!
//! A pattern file is TOML. Traffic parameters are piecewise constant in time
//! and stored as blocks covering minutes `start..=end`:
//!
//! ```toml
//! name = "toy"
//! regions = 2
//! horizon = 3
//! patience = 1
//! fleet_size = 1
//!
//! [rewards]            # optional, defaults to match_reward = 1, empty_cost = 0
//! match_reward = 1.0
//! empty_cost = 0.0
//!
//! [[blocks]]
//! start = 1
//! end = 3
//! lambda = [0.5, 0.5]          # mean arrivals per minute at each origin
//! prob = [[0.5, 0.5], [0.5, 0.5]]  # destination probabilities, rows sum to 1
//! tau = [[2, 3], [3, 2]]       # trip durations in minutes
//!
//! [train]              # optional training overrides (see `TrainOverrides`)
//! iterations = 10
//! ```
//!
//! Time-varying rewards can be given with `[[rewards.blocks]]` entries carrying
//! `start`, `end` and optional `match_reward[o][d][eta]` / `empty_cost[o][d]`
//! tables. Regions are 0-based in the API and 1-based nowhere else except the
//! trace CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppo::TrainOverrides;

const ROW_SUM_TOL: f64 = 1e-9;

/// Largest supported region count; feasibility masks are stored as `u64` origin bitsets.
pub const MAX_REGIONS: usize = 64;

/// One piecewise-constant block of traffic parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficBlock {
    pub start: usize,
    pub end: usize,
    /// `lambda[o]`
    pub lambda: Vec<f64>,
    /// Row-major `prob[o * R + d]`.
    pub prob: Vec<f64>,
    /// Row-major `tau[o * R + d]`, in minutes.
    pub tau: Vec<usize>,
}

/// Validated, time-varying transportation network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficPattern {
    name: String,
    regions: usize,
    horizon: usize,
    patience: usize,
    fleet_size: usize,
    blocks: Vec<TrafficBlock>,
    block_of: Vec<usize>,
    tau_max: Vec<usize>,
}

impl TrafficPattern {
    pub fn new(
        name: impl Into<String>,
        regions: usize,
        horizon: usize,
        patience: usize,
        fleet_size: usize,
        blocks: Vec<TrafficBlock>,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidPattern(msg));
        if regions == 0 || regions > MAX_REGIONS {
            return invalid(format!("region count {regions} outside 1..={MAX_REGIONS}"));
        }
        if horizon == 0 {
            return invalid("horizon must be at least one minute".into());
        }
        if fleet_size > u16::MAX as usize {
            return invalid(format!("fleet size {fleet_size} exceeds {}", u16::MAX));
        }
        if blocks.is_empty() {
            return invalid("no traffic blocks".into());
        }

        let mut block_of = vec![usize::MAX; horizon];
        for (b, block) in blocks.iter().enumerate() {
            if block.start < 1 || block.end > horizon || block.start > block.end {
                return invalid(format!(
                    "block {b} covers {}..={} outside 1..={horizon}",
                    block.start, block.end
                ));
            }
            if block.lambda.len() != regions
                || block.prob.len() != regions * regions
                || block.tau.len() != regions * regions
            {
                return invalid(format!("block {b} tables do not match {regions} regions"));
            }
            for t in block.start..=block.end {
                if block_of[t - 1] != usize::MAX {
                    return invalid(format!("minute {t} covered by more than one block"));
                }
                block_of[t - 1] = b;
            }
            for (o, &rate) in block.lambda.iter().enumerate() {
                if !rate.is_finite() || rate < 0.0 {
                    return invalid(format!("negative entry: lambda[{o}] = {rate} in block {b}"));
                }
            }
            for o in 0..regions {
                let row = &block.prob[o * regions..(o + 1) * regions];
                if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
                    return invalid(format!("negative entry: prob row {o} has {p} in block {b}"));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return invalid(format!("row-sum: prob row {o} sums to {sum} in block {b}"));
                }
            }
            for (i, &dur) in block.tau.iter().enumerate() {
                if dur < 1 {
                    return invalid(format!("tau[{}][{}] = 0 in block {b}", i / regions, i % regions));
                }
                if dur <= patience {
                    return invalid(format!(
                        "patience assumption violated: tau[{}][{}] = {dur} <= L = {patience} in block {b}",
                        i / regions,
                        i % regions
                    ));
                }
            }
        }
        if let Some(t) = block_of.iter().position(|&b| b == usize::MAX) {
            return invalid(format!("minute {} not covered by any block", t + 1));
        }

        let mut tau_max = vec![0; regions];
        for block in &blocks {
            for o in 0..regions {
                for d in 0..regions {
                    tau_max[d] = tau_max[d].max(block.tau[o * regions + d]);
                }
            }
        }

        Ok(Self {
            name: name.into(),
            regions,
            horizon,
            patience,
            fleet_size,
            blocks,
            block_of,
            tau_max,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn patience(&self) -> usize {
        self.patience
    }

    pub fn fleet_size(&self) -> usize {
        self.fleet_size
    }

    pub fn blocks(&self) -> &[TrafficBlock] {
        &self.blocks
    }

    /// Maximum travel time into each destination over all minutes and origins.
    pub fn tau_max(&self) -> &[usize] {
        &self.tau_max
    }

    #[inline]
    fn block(&self, t: usize) -> &TrafficBlock {
        &self.blocks[self.block_of[t - 1]]
    }

    /// Mean arrivals per minute at origin `o` during minute `t` (1-based).
    #[inline]
    pub fn lambda(&self, t: usize, o: usize) -> f64 {
        self.block(t).lambda[o]
    }

    #[inline]
    pub fn prob(&self, t: usize, o: usize, d: usize) -> f64 {
        self.block(t).prob[o * self.regions + d]
    }

    /// Destination distribution for arrivals at `o` during minute `t`.
    #[inline]
    pub fn prob_row(&self, t: usize, o: usize) -> &[f64] {
        let r = self.regions;
        &self.block(t).prob[o * r..(o + 1) * r]
    }

    #[inline]
    pub fn tau(&self, t: usize, o: usize, d: usize) -> usize {
        self.block(t).tau[o * self.regions + d]
    }

    /// Whole-day expected arrivals at each origin, `sum_t lambda_o(t)`.
    pub fn total_demand(&self) -> Vec<f64> {
        let mut demand = vec![0.0; self.regions];
        for block in &self.blocks {
            let len = (block.end - block.start + 1) as f64;
            for (o, rate) in block.lambda.iter().enumerate() {
                demand[o] += len * rate;
            }
        }
        demand
    }

    /// Same network with a different fleet size and every arrival rate multiplied by `factor`.
    pub fn rescaled(&self, fleet_size: usize, factor: f64) -> Result<Self> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| TrafficBlock {
                lambda: b.lambda.iter().map(|l| l * factor).collect(),
                ..b.clone()
            })
            .collect();
        Self::new(
            self.name.clone(),
            self.regions,
            self.horizon,
            self.patience,
            fleet_size,
            blocks,
        )
    }
}

/// Matching rewards `c^f_t(o,d,eta)` and empty-routing costs `c^e_t(o,d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpec {
    regions: usize,
    patience: usize,
    match_reward: Vec<f64>,
    empty_cost: Vec<f64>,
}

impl RewardSpec {
    /// Time-invariant rewards: every match pays `match_reward`, every empty trip costs `empty_cost`.
    pub fn constant(pattern: &TrafficPattern, match_reward: f64, empty_cost: f64) -> Self {
        let (h, r, l) = (pattern.horizon, pattern.regions, pattern.patience);
        Self {
            regions: r,
            patience: l,
            match_reward: vec![match_reward; h * r * r * (l + 1)],
            empty_cost: vec![empty_cost; h * r * r],
        }
    }

    /// Rewards used by the shipped presets: one unit per fulfilled request, free relocation.
    pub fn unit_matching(pattern: &TrafficPattern) -> Self {
        Self::constant(pattern, 1.0, 0.0)
    }

    #[inline]
    pub fn match_reward(&self, t: usize, o: usize, d: usize, eta: usize) -> f64 {
        let r = self.regions;
        self.match_reward[(((t - 1) * r + o) * r + d) * (self.patience + 1) + eta]
    }

    #[inline]
    pub fn empty_cost(&self, t: usize, o: usize, d: usize) -> f64 {
        let r = self.regions;
        self.empty_cost[((t - 1) * r + o) * r + d]
    }

    fn set_match(&mut self, t: usize, o: usize, d: usize, eta: usize, value: f64) {
        let r = self.regions;
        self.match_reward[(((t - 1) * r + o) * r + d) * (self.patience + 1) + eta] = value;
    }

    fn set_empty(&mut self, t: usize, o: usize, d: usize, value: f64) {
        let r = self.regions;
        self.empty_cost[((t - 1) * r + o) * r + d] = value;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlockFile {
    start: usize,
    end: usize,
    lambda: Vec<f64>,
    prob: Vec<Vec<f64>>,
    tau: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RewardBlockFile {
    start: usize,
    end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    match_reward: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    empty_cost: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RewardFile {
    #[serde(default = "one")]
    match_reward: f64,
    #[serde(default)]
    empty_cost: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    blocks: Vec<RewardBlockFile>,
}

fn one() -> f64 {
    1.0
}

impl Default for RewardFile {
    fn default() -> Self {
        Self {
            match_reward: 1.0,
            empty_cost: 0.0,
            blocks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternFile {
    #[serde(default)]
    name: String,
    regions: usize,
    horizon: usize,
    patience: usize,
    fleet_size: usize,
    #[serde(default)]
    rewards: RewardFile,
    blocks: Vec<BlockFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train: Option<TrainOverrides>,
}

/// Everything a pattern file carries.
#[derive(Debug, Clone)]
pub struct Preset {
    pub pattern: TrafficPattern,
    pub rewards: RewardSpec,
    pub train: TrainOverrides,
}

/// Names of the presets compiled into the library.
pub const PRESET_NAMES: &[&str] = &["didi5", "didi5-small"];

fn preset_source(name: &str) -> Option<&'static str> {
    match name {
        "didi5" => Some(include_str!("../../../presets/didi5.toml")),
        "didi5-small" => Some(include_str!("../../../presets/didi5-small.toml")),
        _ => None,
    }
}

impl Preset {
    pub fn builtin(name: &str) -> Result<Self> {
        let src = preset_source(name).ok_or_else(|| Error::UnknownPreset {
            name: name.to_string(),
            available: PRESET_NAMES.join(", "),
        })?;
        Self::from_toml_str(src)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let src = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&src)
    }

    pub fn from_toml_str(src: &str) -> Result<Self> {
        let file: PatternFile = toml::from_str(src).map_err(|e| Error::Parse(e.to_string()))?;
        let r = file.regions;
        let mut blocks = Vec::with_capacity(file.blocks.len());
        for (b, block) in file.blocks.into_iter().enumerate() {
            let prob = flatten(block.prob, r, || format!("block {b} prob"))?;
            let tau = flatten(block.tau, r, || format!("block {b} tau"))?;
            blocks.push(TrafficBlock {
                start: block.start,
                end: block.end,
                lambda: block.lambda,
                prob,
                tau,
            });
        }
        let pattern = TrafficPattern::new(
            file.name,
            file.regions,
            file.horizon,
            file.patience,
            file.fleet_size,
            blocks,
        )?;
        let rewards = build_rewards(&pattern, &file.rewards)?;
        Ok(Self {
            pattern,
            rewards,
            train: file.train.unwrap_or_default(),
        })
    }

    /// Writes the preset back out in the pattern file format.
    ///
    /// Time-varying reward tables are emitted as one reward block per minute
    /// whenever they differ from a constant table.
    pub fn to_toml_string(&self) -> String {
        let p = &self.pattern;
        let r = p.regions;
        let blocks = p
            .blocks
            .iter()
            .map(|b| BlockFile {
                start: b.start,
                end: b.end,
                lambda: b.lambda.clone(),
                prob: b.prob.chunks(r).map(<[f64]>::to_vec).collect(),
                tau: b.tau.chunks(r).map(<[usize]>::to_vec).collect(),
            })
            .collect();
        let base_match = self.rewards.match_reward.first().copied().unwrap_or(1.0);
        let base_empty = self.rewards.empty_cost.first().copied().unwrap_or(0.0);
        let mut reward_blocks = Vec::new();
        let constant = self.rewards.match_reward.iter().all(|&v| v == base_match)
            && self.rewards.empty_cost.iter().all(|&v| v == base_empty);
        if !constant {
            for t in 1..=p.horizon {
                let match_reward = (0..r)
                    .map(|o| {
                        (0..r)
                            .map(|d| {
                                (0..=p.patience)
                                    .map(|eta| self.rewards.match_reward(t, o, d, eta))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                let empty_cost = (0..r)
                    .map(|o| (0..r).map(|d| self.rewards.empty_cost(t, o, d)).collect())
                    .collect();
                reward_blocks.push(RewardBlockFile {
                    start: t,
                    end: t,
                    match_reward: Some(match_reward),
                    empty_cost: Some(empty_cost),
                });
            }
        }
        let file = PatternFile {
            name: p.name.clone(),
            regions: r,
            horizon: p.horizon,
            patience: p.patience,
            fleet_size: p.fleet_size,
            rewards: RewardFile {
                match_reward: base_match,
                empty_cost: base_empty,
                blocks: reward_blocks,
            },
            blocks,
            train: (self.train != TrainOverrides::default()).then(|| self.train.clone()),
        };
        toml::to_string(&file).expect("pattern file serializes")
    }
}

/// Loads and validates the traffic pattern from a pattern file.
pub fn load_traffic_pattern(path: impl AsRef<Path>) -> Result<TrafficPattern> {
    Preset::from_path(path).map(|p| p.pattern)
}

fn flatten<T: Copy>(rows: Vec<Vec<T>>, r: usize, what: impl Fn() -> String) -> Result<Vec<T>> {
    if rows.len() != r || rows.iter().any(|row| row.len() != r) {
        return Err(Error::InvalidPattern(format!("{} is not {r}x{r}", what())));
    }
    Ok(rows.into_iter().flatten().collect())
}

fn build_rewards(pattern: &TrafficPattern, file: &RewardFile) -> Result<RewardSpec> {
    if !file.match_reward.is_finite() || !file.empty_cost.is_finite() {
        return Err(Error::InvalidPattern("reward constants must be finite".into()));
    }
    let mut spec = RewardSpec::constant(pattern, file.match_reward, file.empty_cost);
    let (r, l, h) = (pattern.regions, pattern.patience, pattern.horizon);
    for (b, block) in file.blocks.iter().enumerate() {
        if block.start < 1 || block.end > h || block.start > block.end {
            return Err(Error::InvalidPattern(format!(
                "reward block {b} covers {}..={} outside 1..={h}",
                block.start, block.end
            )));
        }
        if let Some(table) = &block.match_reward {
            let ok = table.len() == r
                && table
                    .iter()
                    .all(|row| row.len() == r && row.iter().all(|e| e.len() == l + 1));
            if !ok {
                return Err(Error::InvalidPattern(format!(
                    "reward block {b} match_reward is not {r}x{r}x{}",
                    l + 1
                )));
            }
        }
        if let Some(table) = &block.empty_cost {
            if table.len() != r || table.iter().any(|row| row.len() != r) {
                return Err(Error::InvalidPattern(format!(
                    "reward block {b} empty_cost is not {r}x{r}"
                )));
            }
        }
        for t in block.start..=block.end {
            for o in 0..r {
                for d in 0..r {
                    if let Some(table) = &block.match_reward {
                        for eta in 0..=l {
                            spec.set_match(t, o, d, eta, table[o][d][eta]);
                        }
                    }
                    if let Some(table) = &block.empty_cost {
                        spec.set_empty(t, o, d, table[o][d]);
                    }
                }
            }
        }
    }
    if spec
        .match_reward
        .iter()
        .chain(&spec.empty_cost)
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidPattern("reward tables must be finite".into()));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn didi5() -> Preset {
        Preset::builtin("didi5").unwrap()
    }

    #[test]
    fn didi5_lookups() {
        let p = didi5().pattern;
        assert_eq!(p.lambda(60, 4), 18.0);
        assert_eq!(p.tau(200, 0, 2), 75);
        assert_eq!(p.prob(60, 4, 0), 0.3);
        assert_eq!(p.tau(200, 3, 1), 6);
        assert_eq!((p.regions(), p.horizon(), p.patience(), p.fleet_size()), (5, 360, 5, 1000));
    }

    #[test]
    fn didi5_tau_max_matches_scan() {
        let p = didi5().pattern;
        let mut scan = vec![0; 5];
        for t in 1..=360 {
            for o in 0..5 {
                for (d, m) in scan.iter_mut().enumerate() {
                    *m = (*m).max(p.tau(t, o, d));
                }
            }
        }
        assert_eq!(p.tau_max(), scan.as_slice());
        assert_eq!(p.tau_max(), &[75, 66, 75, 60, 39]);
    }

    #[test]
    fn small_preset_scales_demand_and_fleet() {
        let small = Preset::builtin("didi5-small").unwrap();
        let full = didi5();
        assert_eq!(small.pattern.fleet_size(), 100);
        for t in [1, 150, 300] {
            for o in 0..5 {
                let expect = full.pattern.lambda(t, o) * 0.1;
                assert!((small.pattern.lambda(t, o) - expect).abs() < 1e-12);
            }
        }
        assert_eq!(small.train.iterations, Some(10));
        assert_eq!(small.train.episodes, Some(20));
    }

    #[test]
    fn rewards_are_unit_matching() {
        let preset = didi5();
        assert_eq!(preset.rewards.match_reward(1, 0, 3, 5), 1.0);
        assert_eq!(preset.rewards.empty_cost(360, 4, 4), 0.0);
    }

    fn toy_block(tau: usize) -> TrafficBlock {
        TrafficBlock {
            start: 1,
            end: 4,
            lambda: vec![1.0, 1.0],
            prob: vec![0.5, 0.5, 0.5, 0.5],
            tau: vec![tau; 4],
        }
    }

    #[test]
    fn patience_assumption_is_enforced() {
        let err = TrafficPattern::new("t", 2, 4, 5, 1, vec![toy_block(3)]).unwrap_err();
        assert!(err.to_string().contains("patience assumption violated"), "{err}");
    }

    #[test]
    fn row_sum_and_negative_entries_rejected() {
        let mut block = toy_block(7);
        block.prob[0] = 0.6;
        let err = TrafficPattern::new("t", 2, 4, 5, 1, vec![block]).unwrap_err();
        assert!(err.to_string().contains("row-sum"), "{err}");

        let mut block = toy_block(7);
        block.lambda[1] = -0.5;
        let err = TrafficPattern::new("t", 2, 4, 5, 1, vec![block]).unwrap_err();
        assert!(err.to_string().contains("negative entry"), "{err}");
    }

    #[test]
    fn gaps_in_block_coverage_rejected() {
        let mut block = toy_block(7);
        block.end = 3;
        let err = TrafficPattern::new("t", 2, 4, 5, 1, vec![block]).unwrap_err();
        assert!(err.to_string().contains("minute 4"), "{err}");
    }

    #[test]
    fn unknown_preset_lists_available() {
        let err = Preset::builtin("nope").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("didi5") && msg.contains("didi5-small"), "{msg}");
    }

    #[test]
    fn round_trip_preserves_everything() {
        let preset = didi5();
        let back = Preset::from_toml_str(&preset.to_toml_string()).unwrap();
        assert_eq!(back.pattern, preset.pattern);
        assert_eq!(back.rewards, preset.rewards);
    }

    #[test]
    fn time_varying_rewards_parse_and_round_trip() {
        let src = r#"
            regions = 2
            horizon = 2
            patience = 1
            fleet_size = 3
            [rewards]
            match_reward = 1.0
            empty_cost = 0.5
            [[rewards.blocks]]
            start = 2
            end = 2
            empty_cost = [[0.0, 2.0], [3.0, 0.0]]
            [[blocks]]
            start = 1
            end = 2
            lambda = [0.5, 0.25]
            prob = [[0.5, 0.5], [1.0, 0.0]]
            tau = [[2, 3], [4, 2]]
        "#;
        let preset = Preset::from_toml_str(src).unwrap();
        assert_eq!(preset.rewards.empty_cost(1, 0, 1), 0.5);
        assert_eq!(preset.rewards.empty_cost(2, 1, 0), 3.0);
        let back = Preset::from_toml_str(&preset.to_toml_string()).unwrap();
        assert_eq!(back.rewards, preset.rewards);
    }

    #[test]
    fn parse_error_is_reported() {
        assert!(matches!(Preset::from_toml_str("regions = ["), Err(Error::Parse(_))));
    }
}
