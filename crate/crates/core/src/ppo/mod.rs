//! Proximal policy optimization for the trip-selection policy: rollouts,
//! Monte-Carlo returns, value fitting, one-step advantages and clipped
//! surrogate updates with KL early stopping.

mod dataset;
mod objective;
mod rollout;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use dataset::{Datapoint, Dataset, Slot};
pub use objective::{
    approx_kl, clipped_term, compute_advantages, compute_returns, fit_value, normalize_advantages,
    slot_values, surrogate_batch, surrogate_loss, BatchStats, KlEstimator,
};
pub use rollout::{collect_rollouts, rollout_episode};

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::nn::{AdamConfig, Head, Network, OptimizerState};
use crate::pattern::{RewardSpec, TrafficPattern};
use crate::policy::{EncoderConfig, NetShape, PolicyParams, ValueParams};
use crate::rng::{derive_seed, rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Policy iterations `J`.
    pub iterations: usize,
    /// Episodes (working days) collected per iteration, `K`.
    pub episodes: usize,
    /// Initial policy learning rate, decayed linearly over the iterations.
    pub policy_lr: f64,
    pub value_lr: f64,
    /// Initial clipping parameter, decayed linearly over the iterations.
    pub clip: f64,
    pub policy_passes: usize,
    pub value_passes: usize,
    /// Policy passes stop once the KL estimate on a minibatch exceeds this.
    pub kl_target: f64,
    /// L2 coefficient on the time embeddings.
    pub embedding_decay: f64,
    pub seed: u64,
    pub minibatch_size: usize,
    pub kl_estimator: KlEstimator,
    pub normalize_advantages: bool,
    /// Fresh episodes used to evaluate each new policy. With 0 the reported
    /// fraction comes from the iteration's own training episodes.
    pub eval_episodes: usize,
    /// Collect episodes on the rayon thread pool.
    pub parallel: bool,
    pub network: NetShape,
    /// The value network predicts `V / value_scale`; defaults to the fleet size.
    pub value_scale: Option<f64>,
    /// Multiplier for waiting-request counts in the features; defaults to `1 / N`.
    pub passenger_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 75,
            episodes: 300,
            policy_lr: 5e-5,
            value_lr: 1e-4,
            clip: 0.2,
            policy_passes: 3,
            value_passes: 10,
            kl_target: 0.012,
            embedding_decay: 0.005,
            seed: 0,
            minibatch_size: 4096,
            kl_estimator: KlEstimator::LogRatio,
            normalize_advantages: false,
            eval_episodes: 0,
            parallel: true,
            network: NetShape::default(),
            value_scale: None,
            passenger_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.iterations == 0 || self.episodes == 0 {
            return fail("iterations and episodes must be at least 1");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return fail("clip must lie in (0, 1)");
        }
        for (name, lr) in [("policy_lr", self.policy_lr), ("value_lr", self.value_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.minibatch_size == 0 {
            return fail("minibatch_size must be at least 1");
        }
        if !(self.kl_target > 0.0) {
            return fail("kl_target must be positive");
        }
        if !(self.embedding_decay >= 0.0) {
            return fail("embedding_decay must be non-negative");
        }
        if matches!(self.value_scale, Some(s) if !(s.is_finite() && s > 0.0)) {
            return fail("value_scale must be positive");
        }
        if matches!(self.passenger_scale, Some(s) if !(s.is_finite() && s > 0.0)) {
            return fail("passenger_scale must be positive");
        }
        if self.network.hidden.iter().any(|&h| h == 0) || self.network.embedding_dim == 0 {
            return fail("network layers must be non-empty");
        }
        Ok(())
    }

    /// `max(1 - j/J, 0.01) * policy_lr` for 1-based iteration `j`.
    pub fn learning_rate_at(&self, j: usize) -> f64 {
        (1.0 - j as f64 / self.iterations as f64).max(0.01) * self.policy_lr
    }

    /// `max((1 - j/J) * clip, 0.01)` for 1-based iteration `j`.
    pub fn clip_at(&self, j: usize) -> f64 {
        ((1.0 - j as f64 / self.iterations as f64) * self.clip).max(0.01)
    }
}

/// Optional replacements for [`TrainConfig`] fields, as found in preset files
/// and on the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub iterations: Option<usize>,
    pub episodes: Option<usize>,
    pub policy_lr: Option<f64>,
    pub value_lr: Option<f64>,
    pub clip: Option<f64>,
    pub policy_passes: Option<usize>,
    pub value_passes: Option<usize>,
    pub kl_target: Option<f64>,
    pub embedding_decay: Option<f64>,
    pub seed: Option<u64>,
    pub minibatch_size: Option<usize>,
    pub kl_estimator: Option<KlEstimator>,
    pub normalize_advantages: Option<bool>,
    pub eval_episodes: Option<usize>,
    pub parallel: Option<bool>,
    pub hidden: Option<Vec<usize>>,
    pub value_scale: Option<f64>,
    pub passenger_scale: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f.clone() {
                    cfg.$f = v;
                }
            )*};
        }
        set!(
            iterations,
            episodes,
            policy_lr,
            value_lr,
            clip,
            policy_passes,
            value_passes,
            kl_target,
            embedding_decay,
            seed,
            minibatch_size,
            kl_estimator,
            normalize_advantages,
            eval_episodes,
            parallel
        );
        if let Some(h) = &self.hidden {
            cfg.network.hidden = h.clone();
        }
        if self.value_scale.is_some() {
            cfg.value_scale = self.value_scale;
        }
        if self.passenger_scale.is_some() {
            cfg.passenger_scale = self.passenger_scale;
        }
    }

    /// `self` with every field set in `other` replaced.
    pub fn merged(&self, other: &TrainOverrides) -> TrainOverrides {
        let mut a = serde_json::to_value(self).expect("overrides serialize");
        let b = serde_json::to_value(other).expect("overrides serialize");
        if let (Some(a), Some(b)) = (a.as_object_mut(), b.as_object()) {
            for (k, v) in b {
                if !v.is_null() {
                    a.insert(k.clone(), v.clone());
                }
            }
        }
        serde_json::from_value(a).expect("overrides deserialize")
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_fulfilled_fraction: f64,
    pub mean_episode_reward: f64,
    /// Surrogate estimate `(1/K) sum min(r A, clip(r) A)` averaged over the
    /// minibatches visited.
    pub surrogate_loss: f64,
    /// Mean squared value error over the last value pass.
    pub value_loss: f64,
    /// Last minibatch KL estimate measured during the policy passes.
    pub approx_kl: f64,
    pub lr: f64,
    pub clip: f64,
    pub datapoints: usize,
    pub policy_updates: usize,
    pub wall_seconds: f64,
}

pub const METRICS_COLUMNS: &str =
    "iteration,mean_fulfilled_fraction,mean_episode_reward,surrogate_loss,value_loss,approx_kl,lr,clip";

impl IterationMetrics {
    /// CSV row matching [`METRICS_COLUMNS`]. Wall-clock time is left out so
    /// the file is reproducible; it goes to a separate timing log.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            self.mean_fulfilled_fraction,
            self.mean_episode_reward,
            self.surrogate_loss,
            self.value_loss,
            self.approx_kl,
            self.lr,
            self.clip
        )
    }
}

/// Writes a metrics CSV. `header` lines become `#` comments above the column row.
pub fn write_metrics<W: Write>(mut out: W, header: &[String], rows: &[IterationMetrics]) -> std::io::Result<()> {
    for h in header {
        writeln!(out, "# {h}")?;
    }
    writeln!(out, "{METRICS_COLUMNS}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Fresh policy and value networks for `pattern`.
pub fn initial_params(cfg: &TrainConfig, pattern: &TrafficPattern) -> Result<(PolicyParams, ValueParams)> {
    let mut encoder = EncoderConfig::for_pattern(pattern);
    if let Some(s) = cfg.passenger_scale {
        encoder.passenger_scale = s;
    }
    let r = pattern.regions();
    let policy_arch = cfg.network.architecture(&encoder, r * r, Head::Softmax);
    let value_arch = cfg.network.architecture(&encoder, 1, Head::Identity);
    let policy_net = Network::init(policy_arch, &mut rng_for(cfg.seed, &[stream::POLICY_INIT]))?;
    let value_net = Network::init(value_arch, &mut rng_for(cfg.seed, &[stream::VALUE_INIT]))?;
    let scale = cfg.value_scale.unwrap_or(pattern.fleet_size().max(1) as f64);
    Ok((
        PolicyParams::new(policy_net, encoder.clone())?,
        ValueParams::new(value_net, encoder, scale)?,
    ))
}

/// Complete optimization state; advancing it one iteration is all-or-nothing.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub pattern: TrafficPattern,
    pub rewards: RewardSpec,
    pub policy: PolicyParams,
    pub value: ValueParams,
    pub policy_optimizer: OptimizerState,
    pub value_optimizer: OptimizerState,
    /// Completed iterations.
    pub iteration: usize,
    pub history: Vec<IterationMetrics>,
}

impl Trainer {
    pub fn new(config: TrainConfig, pattern: TrafficPattern, rewards: RewardSpec) -> Result<Self> {
        config.validate()?;
        let (policy, value) = initial_params(&config, &pattern)?;
        let mut policy_adam = AdamConfig::new(config.learning_rate_at(1));
        policy_adam.embedding_decay = config.embedding_decay;
        let mut value_adam = AdamConfig::new(config.value_lr);
        value_adam.embedding_decay = config.embedding_decay;
        Ok(Self {
            policy_optimizer: OptimizerState::new(&policy.net, policy_adam),
            value_optimizer: OptimizerState::new(&value.net, value_adam),
            config,
            pattern,
            rewards,
            policy,
            value,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// Runs the next iteration. On error the trainer is left exactly as before the call.
    pub fn step(&mut self) -> Result<IterationMetrics> {
        let mut next = self.clone();
        let metrics = next.advance()?;
        *self = next;
        Ok(metrics)
    }

    fn advance(&mut self) -> Result<IterationMetrics> {
        let started = Instant::now();
        let cfg = self.config.clone();
        let j = self.iteration + 1;
        let lr = cfg.learning_rate_at(j);
        let clip = cfg.clip_at(j);

        let mut data = collect_rollouts(
            &self.policy,
            &self.pattern,
            &self.rewards,
            cfg.episodes,
            cfg.seed,
            j,
            cfg.parallel,
        )?;
        compute_returns(&mut data);
        let value_loss = fit_value(
            &mut self.value,
            &mut self.value_optimizer,
            &data,
            cfg.value_passes,
            cfg.minibatch_size,
            &mut rng_for(cfg.seed, &[stream::SHUFFLE, j as u64, 0]),
        )?;
        compute_advantages(&self.value, &mut data)?;
        if cfg.normalize_advantages {
            normalize_advantages(&mut data);
        }

        self.policy_optimizer.set_learning_rate(lr);
        let n = data.len();
        let k = data.episodes() as f64;
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle = rng_for(cfg.seed, &[stream::SHUFFLE, j as u64, 1]);
        let mut grads = self.policy.net.zero_gradients();
        let (mut objective, mut visited, mut updates, mut kl) = (0.0, 0usize, 0usize, 0.0);
        'passes: for _ in 0..cfg.policy_passes {
            order.shuffle(&mut shuffle);
            for batch in order.chunks(cfg.minibatch_size) {
                grads.0.fill(0.0);
                // Minimizing -L: each datapoint stands for n / |batch| of the K-episode sum.
                let weight = -(n as f64 / batch.len() as f64) / k;
                let stats = surrogate_batch(
                    &self.policy,
                    &data,
                    batch,
                    clip,
                    cfg.kl_estimator,
                    weight,
                    Some(&mut grads.0),
                )?;
                objective += stats.objective;
                visited += stats.count;
                kl = stats.kl / stats.count.max(1) as f64;
                if kl > cfg.kl_target {
                    log::debug!("iteration {j}: KL {kl:.5} above target after {updates} updates");
                    break 'passes;
                }
                self.policy_optimizer.step(&mut self.policy.net, &grads)?;
                updates += 1;
            }
        }
        let surrogate = if visited == 0 {
            0.0
        } else {
            objective / visited as f64 * n as f64 / k
        };
        if !surrogate.is_finite() {
            return Err(Error::NonFinite { what: "surrogate objective".into() });
        }

        let (fraction, reward) = if cfg.eval_episodes > 0 {
            let seed = derive_seed(cfg.seed, &[stream::EVAL, j as u64]);
            let s = evaluate(&self.policy, &self.pattern, &self.rewards, cfg.eval_episodes, seed, cfg.parallel)?;
            (s.mean_fraction, s.mean_reward)
        } else {
            (data.mean_fulfilled_fraction(), data.mean_episode_reward())
        };

        self.iteration = j;
        let metrics = IterationMetrics {
            iteration: j,
            mean_fulfilled_fraction: fraction,
            mean_episode_reward: reward,
            surrogate_loss: surrogate,
            value_loss,
            approx_kl: kl,
            lr,
            clip,
            datapoints: n,
            policy_updates: updates,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        self.history.push(metrics.clone());
        Ok(metrics)
    }

    /// Runs the remaining iterations, calling `after_iteration` once each has
    /// been committed (for logging and checkpointing).
    pub fn run(&mut self, mut after_iteration: impl FnMut(&Trainer, &IterationMetrics) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let m = self.step()?;
            after_iteration(self, &m)?;
        }
        Ok(())
    }
}

/// Trains from scratch and returns the final policy with the per-iteration log.
pub fn train(
    cfg: &TrainConfig,
    pattern: &TrafficPattern,
    rewards: &RewardSpec,
) -> Result<(PolicyParams, Vec<IterationMetrics>)> {
    let mut trainer = Trainer::new(cfg.clone(), pattern.clone(), rewards.clone())?;
    trainer.run(|_, m| {
        log::info!(
            "iteration {}: fulfilled {:.4}, reward {:.2}, kl {:.5}",
            m.iteration,
            m.mean_fulfilled_fraction,
            m.mean_episode_reward,
            m.approx_kl
        );
        Ok(())
    })?;
    Ok((trainer.policy, trainer.history))
}
