//! Passenger arrivals, fleet initialization and the between-epoch transition.

use rand::Rng;

use crate::pattern::TrafficPattern;
use crate::state::{CarsStatus, PassengersStatus, SdmState, SystemState};

/// Rates at or above this use the library sampler instead of CDF inversion.
const INVERSION_LIMIT: f64 = 30.0;

/// Draws a Poisson variate by sequential CDF inversion.
pub fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda >= INVERSION_LIMIT {
        use rand_distr::Distribution;
        let dist = rand_distr::Poisson::new(lambda).expect("positive finite rate");
        return dist.sample(rng) as u32;
    }
    let u: f64 = rng.gen();
    let mut k = 0u32;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    // the tail beyond ~lambda + 40 sqrt(lambda) is far below f64 resolution
    while u > cdf && p > 0.0 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

/// Index drawn from a discrete distribution by inversion.
pub(crate) fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cdf = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cdf += p;
        last = i;
        if u < cdf {
            return i;
        }
    }
    last
}

/// Ride requests arriving during minute `t`: Poisson per origin, destinations from `P[t][o][.]`.
pub fn sample_arrivals<R: Rng + ?Sized>(
    pattern: &TrafficPattern,
    t: usize,
    rng: &mut R,
) -> PassengersStatus {
    let r = pattern.regions();
    let mut passengers = PassengersStatus::empty(r);
    for o in 0..r {
        let n = poisson(pattern.lambda(t, o), rng);
        let row = pattern.prob_row(t, o);
        for _ in 0..n {
            passengers.add(o, categorical(row, rng), 1);
        }
    }
    passengers
}

/// Splits `total` units proportionally to `weights` by largest remainder.
///
/// Ties in the remainder go to the lower index. All-zero weights split evenly.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 {
        weights.to_vec()
    } else {
        vec![1.0; weights.len()]
    };
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

/// Epoch-1 state with all cars idle, distributed in proportion to whole-day demand.
///
/// Passengers are left empty; the episode driver samples minute-1 arrivals.
pub fn initial_state(pattern: &TrafficPattern) -> SystemState {
    let alloc = largest_remainder(&pattern.total_demand(), pattern.fleet_size());
    let mut cars = CarsStatus::empty(pattern);
    for (o, n) in alloc.into_iter().enumerate() {
        cars.set(o, 0, n as u32);
    }
    SystemState {
        epoch: 1,
        cars,
        passengers: PassengersStatus::empty(pattern.regions()),
    }
}

/// Deterministic part of the transition: merge the do-nothing tracker back,
/// age every car by one minute (idle cars stay at `eta = 0`) and drop all
/// unmatched requests. The returned state carries no passengers.
pub fn release_and_age(final_state: &SdmState) -> SystemState {
    let r = final_state.regions();
    let l = final_state.patience;
    let mut cars = final_state.cars.clone();
    for d in 0..r {
        for eta in 0..=l {
            let n = final_state.do_nothing(d, eta);
            if n > 0 {
                cars.add(d, eta, n);
            }
        }
    }
    // every destination has at least two slots since tau_max >= 1
    for d in 0..r {
        let slots = cars.slots(d);
        let idle = cars.get(d, 0) + cars.get(d, 1);
        cars.set(d, 0, idle);
        for eta in 1..slots - 1 {
            cars.set(d, eta, cars.get(d, eta + 1));
        }
        cars.set(d, slots - 1, 0);
    }
    SystemState {
        epoch: final_state.epoch + 1,
        cars,
        passengers: PassengersStatus::empty(r),
    }
}

/// Moves to the next epoch and samples its arrivals. Past the horizon the
/// terminal state (epoch `H + 1`) has no arrivals.
pub fn advance_time<R: Rng + ?Sized>(
    final_state: &SdmState,
    pattern: &TrafficPattern,
    rng: &mut R,
) -> SystemState {
    let mut next = release_and_age(final_state);
    if next.epoch <= pattern.horizon() {
        next.passengers = sample_arrivals(pattern, next.epoch, rng);
    }
    next
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::pattern::{Preset, TrafficBlock};

    fn didi5() -> TrafficPattern {
        Preset::builtin("didi5").unwrap().pattern
    }

    fn toy(lambda: Vec<f64>, fleet: usize) -> TrafficPattern {
        let r = lambda.len();
        TrafficPattern::new(
            "toy",
            r,
            3,
            1,
            fleet,
            vec![TrafficBlock {
                start: 1,
                end: 3,
                lambda,
                prob: vec![1.0 / r as f64; r * r],
                tau: vec![2; r * r],
            }],
        )
        .unwrap()
    }

    #[test]
    fn zero_rates_give_no_arrivals() {
        let p = toy(vec![0.0, 0.0], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_arrivals(&p, 1, &mut rng).total(), 0);
    }

    #[test]
    fn arrival_mean_and_destination_frequency() {
        let p = didi5();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let (mut total, mut to_first) = (0u64, 0u64);
        for _ in 0..draws {
            let s = sample_arrivals(&p, 60, &mut rng);
            total += (0..5).map(|d| s.get(4, d) as u64).sum::<u64>();
            to_first += s.get(4, 0) as u64;
        }
        let mean = total as f64 / draws as f64;
        assert!((17.87..=18.13).contains(&mean), "mean {mean}");
        let freq = to_first as f64 / total as f64;
        assert!((freq - 0.3).abs() < 0.005, "freq {freq}");
    }

    #[test]
    fn poisson_variance_matches_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| poisson(4.5, &mut rng) as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 4.5).abs() < 0.03);
        assert!((var - 4.5).abs() < 0.08);
    }

    #[test]
    fn didi5_initial_allocation() {
        let p = didi5();
        // whole-day demand per region, summed by hand from the three blocks
        let weights = [
            120.0 * (1.8 + 12.0 + 2.0),
            120.0 * (1.8 + 8.0 + 2.0),
            120.0 * (1.8 + 8.0 + 2.0),
            120.0 * (1.8 + 8.0 + 22.0),
            120.0 * (18.0 + 2.0 + 2.0),
        ];
        let total: f64 = weights.iter().sum();
        let quotas: Vec<f64> = weights.iter().map(|w| w / total * 1000.0).collect();
        // quotas: 169.53, 126.61, 126.61, 341.20, 236.05 -> floors sum to 998;
        // the two largest remainders (regions 2 and 3, 0.61 each) get the extra cars
        assert!((quotas[0] - 169.527).abs() < 1e-3);
        let s = initial_state(&p);
        let got: Vec<u32> = (0..5).map(|o| s.cars.get(o, 0)).collect();
        assert_eq!(got, vec![169, 127, 127, 341, 236]);
        assert_eq!(s.cars.total(), 1000);
        assert_eq!(s.epoch, 1);
    }

    #[test]
    fn uniform_and_single_car_allocation() {
        assert_eq!(largest_remainder(&[3.0, 3.0], 10), vec![5, 5]);
        assert_eq!(largest_remainder(&[1.0, 5.0, 2.0], 1), vec![0, 1, 0]);
        assert_eq!(largest_remainder(&[0.0, 0.0, 0.0], 4), vec![2, 1, 1]);
    }

    fn sdm_with(p: &TrafficPattern) -> SdmState {
        let mut s = initial_state(p);
        for o in 0..p.regions() {
            s.cars.set(o, 0, 0);
        }
        SdmState::begin(s, p.patience())
    }

    #[test]
    fn en_route_car_is_decremented() {
        let p = didi5();
        let mut s = sdm_with(&p);
        s.cars.set(1, 7, 1);
        let next = release_and_age(&s);
        assert_eq!(next.cars.get(1, 6), 1);
        assert_eq!(next.cars.total(), 1);
        assert_eq!(next.epoch, 2);
    }

    #[test]
    fn do_nothing_car_is_merged_and_floored() {
        let p = didi5();
        let mut s = sdm_with(&p);
        s.add_do_nothing(2, 0);
        s.add_do_nothing(0, 3);
        s.cars.set(4, 0, 2);
        s.cars.set(4, 1, 1);
        let next = release_and_age(&s);
        assert_eq!(next.cars.get(2, 0), 1);
        assert_eq!(next.cars.get(0, 2), 1);
        assert_eq!(next.cars.get(4, 0), 3);
        assert_eq!(next.cars.total(), 5);
    }

    #[test]
    fn last_slot_empties_after_aging() {
        let p = didi5();
        let mut s = sdm_with(&p);
        let top = s.cars.slots(4) - 1;
        s.cars.set(4, top, 4);
        let next = release_and_age(&s);
        assert_eq!(next.cars.get(4, top), 0);
        assert_eq!(next.cars.get(4, top - 1), 4);
    }

    #[test]
    fn advancing_past_horizon_is_terminal() {
        let p = toy(vec![5.0, 5.0], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = sdm_with(&p);
        s.epoch = 3;
        let next = advance_time(&s, &p, &mut rng);
        assert_eq!(next.epoch, 4);
        assert!(next.is_terminal(&p));
        assert_eq!(next.passengers.total(), 0);
    }

    #[test]
    fn advance_samples_fresh_arrivals() {
        let p = toy(vec![5.0, 5.0], 2);
        let mut s = sdm_with(&p);
        s.passengers.set(0, 1, 40);
        let a = advance_time(&s, &p, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_arrivals(&p, 2, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.passengers, b);
    }
}
