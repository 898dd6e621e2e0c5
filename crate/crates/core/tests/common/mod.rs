//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use ridehail::env::release_and_age;
use ridehail::nn::{Activation, Network};
use ridehail::pattern::TrafficBlock;
use ridehail::ppo::Dataset;
use ridehail::policy::{EncoderConfig, NetShape, PolicyParams, ValueParams};
use ridehail::sdm::available_car_count;
use ridehail::{DispatchPolicy, PassengersStatus, RewardSpec, SdmState, SystemState, TrafficPattern};

pub fn small_shape() -> NetShape {
    NetShape {
        embedding_dim: 3,
        hidden: vec![12, 6],
        activation: Activation::Relu,
    }
}

pub fn random_policy<R: Rng>(pattern: &TrafficPattern, rng: &mut R) -> PolicyParams {
    let enc = EncoderConfig::for_pattern(pattern);
    let r = pattern.regions();
    let arch = small_shape().architecture(&enc, r * r, ridehail::nn::Head::Softmax);
    let mut net = Network::init(arch, rng).unwrap();
    // Larger weights make the distributions far from uniform.
    for w in net.params_mut() {
        *w *= 3.0;
    }
    PolicyParams::new(net, enc).unwrap()
}

pub fn random_value<R: Rng>(pattern: &TrafficPattern, rng: &mut R) -> ValueParams {
    let enc = EncoderConfig::for_pattern(pattern);
    let arch = small_shape().architecture(&enc, 1, ridehail::nn::Head::Identity);
    ValueParams::new(Network::init(arch, rng).unwrap(), enc, 1.0).unwrap()
}

/// Two regions, one car, three minutes, patience one minute.
pub fn enumerable_toy() -> TrafficPattern {
    TrafficPattern::new(
        "enumerable-toy",
        2,
        3,
        1,
        1,
        vec![TrafficBlock {
            start: 1,
            end: 3,
            lambda: vec![0.7, 0.4],
            prob: vec![0.4, 0.6, 0.8, 0.2],
            tau: vec![2, 3, 2, 2],
        }],
    )
    .unwrap()
}

/// One-car toy with a short horizon, used for smoke runs.
pub fn one_car_toy(horizon: usize) -> TrafficPattern {
    TrafficPattern::new(
        "one-car",
        2,
        horizon,
        1,
        1,
        vec![TrafficBlock {
            start: 1,
            end: horizon,
            lambda: vec![0.6, 0.4],
            prob: vec![0.5, 0.5, 0.7, 0.3],
            tau: vec![2, 3, 3, 2],
        }],
    )
    .unwrap()
}

/// Every arrival outcome at minute `t` when each origin receives at most one
/// request: `P(1) = lambda / (1 + lambda)` (Poisson renormalised to {0, 1}).
pub fn truncated_arrivals(pattern: &TrafficPattern, t: usize) -> Vec<(f64, PassengersStatus)> {
    let r = pattern.regions();
    let mut out = vec![(1.0, PassengersStatus::empty(r))];
    for o in 0..r {
        let lam = pattern.lambda(t, o);
        let p_one = lam / (1.0 + lam);
        let mut next = Vec::new();
        for (p, pax) in &out {
            next.push((p * (1.0 - p_one), pax.clone()));
            for d in 0..r {
                let q = pattern.prob(t, o, d);
                if q > 0.0 && p_one > 0.0 {
                    let mut with = pax.clone();
                    with.add(o, d, 1);
                    next.push((p * p_one * q, with));
                }
            }
        }
        out = next;
    }
    out
}

fn first_states(pattern: &TrafficPattern, released: SystemState) -> Vec<(f64, SdmState)> {
    if released.is_terminal(pattern) {
        return Vec::new();
    }
    truncated_arrivals(pattern, released.epoch)
        .into_iter()
        .map(|(p, pax)| {
            let mut s = released.clone();
            s.passengers = pax;
            (p, SdmState::begin(s, pattern.patience()))
        })
        .collect()
}

/// Exact enumeration over the truncated-arrival toy.
pub struct Enumerator<'a> {
    pub pattern: &'a TrafficPattern,
    pub rewards: &'a RewardSpec,
}

impl Enumerator<'_> {
    fn distribution(&self, policy: &dyn DispatchPolicy, s: &SdmState) -> Vec<f64> {
        let r = self.pattern.regions();
        let mut probs = vec![0.0; r * r];
        policy.distribution(s, &mut probs).unwrap();
        probs
    }

    /// Successors of taking `a` in `s`: reward and weighted next SDM states
    /// (empty when the episode ends).
    pub fn successors(&self, s: &SdmState, a: usize) -> (f64, Vec<(f64, SdmState)>) {
        let r = self.pattern.regions();
        let mut next = s.clone();
        let outcome = next
            .apply(ridehail::AtomicAction::from_index(a, r), self.rewards, self.pattern)
            .unwrap();
        (outcome.reward, self.settle(next))
    }

    /// Weighted states from which the next decision is made (or the episode ends).
    fn settle(&self, s: SdmState) -> Vec<(f64, SdmState)> {
        if available_car_count(&s) > 0 {
            vec![(1.0, s)]
        } else {
            first_states(self.pattern, release_and_age(&s))
        }
    }

    /// `V_pi(s)` for an SDM state (which may have no available car).
    pub fn value(&self, policy: &dyn DispatchPolicy, s: &SdmState) -> f64 {
        if available_car_count(&s.clone()) == 0 {
            return first_states(self.pattern, release_and_age(s))
                .iter()
                .map(|(p, n)| p * self.value(policy, n))
                .sum();
        }
        let probs = self.distribution(policy, s);
        probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(a, &p)| {
                let (c, next) = self.successors(s, a);
                p * (c + next.iter().map(|(q, n)| q * self.value(policy, n)).sum::<f64>())
            })
            .sum()
    }

    /// `A_xi(s, a) = c(s, a) + E[V_xi(s')] - V_xi(s)`.
    pub fn advantage(&self, xi: &dyn DispatchPolicy, s: &SdmState, a: usize) -> f64 {
        let (c, next) = self.successors(s, a);
        c + next.iter().map(|(q, n)| q * self.value(xi, n)).sum::<f64>() - self.value(xi, s)
    }

    /// `E_theta[sum of A_xi along the trajectory from s]`.
    pub fn advantage_sum(&self, theta: &dyn DispatchPolicy, xi: &dyn DispatchPolicy, s: &SdmState) -> f64 {
        if available_car_count(s) == 0 {
            return first_states(self.pattern, release_and_age(s))
                .iter()
                .map(|(p, n)| p * self.advantage_sum(theta, xi, n))
                .sum();
        }
        let probs = self.distribution(theta, s);
        probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(a, &p)| {
                let (_, next) = self.successors(s, a);
                p * (self.advantage(xi, s, a)
                    + next
                        .iter()
                        .map(|(q, n)| q * self.advantage_sum(theta, xi, n))
                        .sum::<f64>())
            })
            .sum()
    }

    /// Weighted first SDM states of an episode.
    pub fn initial_states(&self) -> Vec<(f64, SdmState)> {
        first_states(self.pattern, ridehail::env::initial_state(self.pattern))
    }
}

/// `(1/K) sum A grad log pi(a|s)`, assembled from per-logit backward passes.
pub fn vanilla_policy_gradient(policy: &PolicyParams, data: &Dataset) -> Vec<f64> {
    let r = policy.encoder.regions;
    let mut total = vec![0.0; policy.net.param_count()];
    for p in &data.points {
        let (t, x) = data.features(p.slot);
        let origins = data.slots()[p.slot as usize].origins;
        let (logits, tape) = policy.net.forward_logits(t, &x).unwrap();
        let feasible: Vec<usize> = (0..r * r).filter(|a| origins >> (a / r) & 1 == 1).collect();
        let m = feasible.iter().map(|&a| logits[a]).fold(f64::MIN, f64::max);
        let z: f64 = feasible.iter().map(|&a| (logits[a] - m).exp()).sum();
        let mut unit = vec![0.0; r * r];
        for &j in &feasible {
            let pj = (logits[j] - m).exp() / z;
            let coef = if j == p.action as usize { 1.0 - pj } else { -pj };
            unit.fill(0.0);
            unit[j] = 1.0;
            let gz = policy.net.backward(&tape, &unit).unwrap();
            for (tot, g) in total.iter_mut().zip(&gz.0) {
                *tot += p.advantage * coef * g / data.episodes() as f64;
            }
        }
    }
    total
}
