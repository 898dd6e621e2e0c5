//! Returns, value fitting, advantages, the clipped surrogate and the KL estimate.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Gradients, OptimizerState, SparseVec, Tape};
use crate::policy::{PolicyParams, ValueParams};

/// Fills `ret` with the reward-to-go of every datapoint within its episode.
pub fn compute_returns(data: &mut Dataset) {
    for range in data.episode_ranges.clone() {
        let mut tail = 0.0;
        for p in data.points[range].iter_mut().rev() {
            tail += p.reward;
            p.ret = tail;
        }
    }
}

/// Minibatch regression of the value network onto the returns. Returns the
/// mean squared error (in reward units) accumulated over the final pass.
pub fn fit_value<R: Rng + ?Sized>(
    value: &mut ValueParams,
    optimizer: &mut OptimizerState,
    data: &Dataset,
    passes: usize,
    minibatch: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut features = SparseVec::new(data.encoder().feature_len());
    let mut tape = Tape::default();
    let mut grads = value.net.zero_gradients();
    let scale = value.scale;
    let mut last_pass_loss = 0.0;
    for _ in 0..passes {
        order.shuffle(rng);
        let mut pass_loss = 0.0;
        for batch in order.chunks(minibatch.max(1)) {
            grads.0.fill(0.0);
            let m = batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let p = &data.points[i];
                data.features_into(p.slot, &mut features);
                let t = data.slots()[p.slot as usize].time_index as usize;
                value.net.forward_into(t, &features, false, &mut tape)?;
                let err = tape.raw_output()[0] - p.ret / scale;
                batch_loss += err * err;
                value.net.backward_into(&tape, &[2.0 * err / m], &mut grads.0)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite { what: "value loss".into() });
            }
            pass_loss += batch_loss;
            optimizer.step(&mut value.net, &grads)?;
        }
        last_pass_loss = pass_loss * scale * scale / data.len().max(1) as f64;
    }
    Ok(last_pass_loss)
}

/// Value estimate of every stored state.
pub fn slot_values(value: &ValueParams, data: &Dataset) -> Result<Vec<f64>> {
    let mut features = SparseVec::new(data.encoder().feature_len());
    let mut tape = Tape::default();
    (0..data.slots().len() as u32)
        .map(|s| {
            data.features_into(s, &mut features);
            let t = data.slots()[s as usize].time_index as usize;
            value.estimate_encoded(t, &features, &mut tape)
        })
        .collect()
}

/// `A = c + V(next) - V(current)`, with `V := 0` after the final step.
pub fn compute_advantages(value: &ValueParams, data: &mut Dataset) -> Result<()> {
    let v = slot_values(value, data)?;
    for p in &mut data.points {
        let next = p.next_slot.map_or(0.0, |s| v[s as usize]);
        p.advantage = p.reward + next - v[p.slot as usize];
    }
    Ok(())
}

/// Shifts and scales the advantages to zero mean and unit variance.
pub fn normalize_advantages(data: &mut Dataset) {
    let n = data.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean = data.points.iter().map(|p| p.advantage).sum::<f64>() / n;
    let var = data.points.iter().map(|p| (p.advantage - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    for p in &mut data.points {
        p.advantage = (p.advantage - mean) / sd;
    }
}

/// Sample estimator of `KL(behavior || current)` on the taken actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlEstimator {
    /// `log pi_b(a|s) - log pi(a|s)`.
    #[default]
    LogRatio,
    /// `(r - 1) - log r` with `r = pi(a|s) / pi_b(a|s)`; never negative.
    RatioBound,
}

impl KlEstimator {
    pub fn term(self, ratio: f64) -> f64 {
        match self {
            KlEstimator::LogRatio => -ratio.ln(),
            KlEstimator::RatioBound => (ratio - 1.0) - ratio.ln(),
        }
    }
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Sums over a set of datapoints, produced by one forward pass each.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub objective: f64,
    pub kl: f64,
    pub clipped: usize,
    pub count: usize,
}

/// Evaluates the clipped surrogate on `indices`. When `grads` is given,
/// accumulates `weight * d(sum of terms)/d(theta)` into it.
pub fn surrogate_batch(
    policy: &PolicyParams,
    data: &Dataset,
    indices: &[usize],
    epsilon: f64,
    estimator: KlEstimator,
    weight: f64,
    mut grads: Option<&mut [f64]>,
) -> Result<BatchStats> {
    let r = policy.encoder.regions;
    let mut features = SparseVec::new(data.encoder().feature_len());
    let mut tape = Tape::default();
    let mut probs = vec![0.0; r * r];
    let mut out_grad = vec![0.0; r * r];
    let mut stats = BatchStats::default();
    for &i in indices {
        let p = &data.points[i];
        let slot = data.slots()[p.slot as usize];
        data.features_into(p.slot, &mut features);
        policy.distribution_encoded(slot.time_index as usize, &features, slot.origins, &mut tape, &mut probs)?;
        let a = p.action as usize;
        let ratio = probs[a] / p.behavior_prob;
        if !ratio.is_finite() || ratio <= 0.0 {
            return Err(Error::NonFinite {
                what: format!("probability ratio {ratio} at datapoint {i}"),
            });
        }
        let term = clipped_term(ratio, p.advantage, epsilon);
        stats.objective += term;
        stats.kl += estimator.term(ratio);
        stats.count += 1;
        let unclipped = ratio * p.advantage <= term;
        if !unclipped {
            stats.clipped += 1;
        }
        if let Some(g) = grads.as_deref_mut() {
            if unclipped && p.advantage != 0.0 {
                // d(r A)/dz_j = A r (1[j = a] - p_j) on feasible logits.
                let c = weight * p.advantage * ratio;
                for (j, (o, &pj)) in out_grad.iter_mut().zip(&probs).enumerate() {
                    *o = c * (f64::from(u8::from(j == a)) - pj);
                }
                policy.net.backward_into(&tape, &out_grad, g)?;
            }
        }
    }
    Ok(stats)
}

/// Surrogate estimate `(1/K) sum min(r A, clip(r) A)` over the whole dataset
/// and its gradient in the ascent direction.
pub fn surrogate_loss(policy: &PolicyParams, data: &Dataset, epsilon: f64) -> Result<(f64, Gradients)> {
    let k = data.episodes().max(1) as f64;
    let mut grads = policy.net.zero_gradients();
    let all: Vec<usize> = (0..data.len()).collect();
    let stats = surrogate_batch(
        policy,
        data,
        &all,
        epsilon,
        KlEstimator::LogRatio,
        1.0 / k,
        Some(&mut grads.0),
    )?;
    Ok((stats.objective / k, grads))
}

/// Mean KL estimate between the behavior policy and `policy` over the dataset.
pub fn approx_kl(data: &Dataset, policy: &PolicyParams, estimator: KlEstimator) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    let stats = surrogate_batch(policy, data, &all, 0.0, estimator, 0.0, None)?;
    Ok(if stats.count == 0 { 0.0 } else { stats.kl / stats.count as f64 })
}
