//! Reference computations and instance generators shared by integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use tierfee_core::demand::DiscountTable;
use tierfee_core::solver::SteadyDemand;
use tierfee_core::{Blockchain, DemandComponent, DemandSpec, DiscountDist, DiscountFunction, V0Dist, ValueFunction};

fn fixed_discount(c: &DemandComponent) -> DiscountFunction {
    c.discount.fixed().expect("oracle needs a fixed discount per component")
}

/// `[E[T_0], E[T_1], ..]` by brute force: every pairwise crossing of the
/// utility lines splits the v0 support, and each piece is classified at its
/// midpoint with the chain's tie-splitting choice probabilities.
pub fn oracle_demand(chain: &Blockchain, rate: f64, spec: &DemandSpec) -> Vec<f64> {
    let m = chain.len();
    let mut out = vec![0.0; m + 1];
    for c in spec.components() {
        let h = fixed_discount(c);
        let lines: Vec<(f64, f64)> = std::iter::once((0.0, 0.0))
            .chain(chain.tiers().iter().map(|t| (h.factor(f64::from(t.delay)), -t.price)))
            .collect();
        let probs_at = |v0: f64| chain.choice_probabilities(&ValueFunction::new(v0, h.clone()).unwrap());
        let (lo, hi, mass): (f64, f64, Box<dyn Fn(f64, f64) -> f64>) = match c.v0 {
            V0Dist::Point { value } => {
                for (j, p) in probs_at(value).into_iter().enumerate() {
                    out[j] += rate * c.weight * p;
                }
                continue;
            }
            V0Dist::Uniform { lo, hi } => (lo, hi, Box::new(move |a, b| (b - a) / (hi - lo))),
            V0Dist::Normal { mean, sd } => {
                let n = Normal::new(mean, sd).unwrap();
                let kept = 1.0 - n.cdf(0.0);
                let top = mean + 12.0 * sd;
                (0.0, top, Box::new(move |a, b| (n.cdf(b) - n.cdf(a)) / kept))
            }
        };
        let mut cuts = vec![lo, hi];
        for a in 0..lines.len() {
            for b in a + 1..lines.len() {
                let (sa, ia) = lines[a];
                let (sb, ib) = lines[b];
                if sa != sb {
                    let x = (ib - ia) / (sa - sb);
                    if x > lo && x < hi {
                        cuts.push(x);
                    }
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            if w[1] - w[0] <= 0.0 {
                continue;
            }
            let share = mass(w[0], w[1]);
            for (j, p) in probs_at(0.5 * (w[0] + w[1])).into_iter().enumerate() {
                out[j] += rate * c.weight * share * p;
            }
        }
    }
    out
}

pub struct Instance {
    pub sizes: Vec<f64>,
    pub delays: Vec<u32>,
    pub demand: SteadyDemand,
}

impl Instance {
    pub fn throughput(&self) -> f64 {
        self.sizes.iter().sum()
    }
}

/// Strictly decreasing table starting at `(1, 1)`.
pub fn random_table<R: Rng>(rng: &mut R) -> DiscountDist {
    let mut points = vec![(1.0, 1.0)];
    let (mut d, mut f) = (1.0, 1.0);
    for _ in 0..rng.gen_range(1..=3) {
        d += rng.gen_range(1.0..4.0);
        f *= rng.gen_range(0.2..0.8);
        points.push((d, f));
    }
    DiscountDist::Table {
        points: Arc::new(DiscountTable::new(points).unwrap()),
    }
}

/// A finite mixture of fixed discount functions with continuous uniform v0.
pub fn random_spec<R: Rng>(rng: &mut R, max_components: usize) -> DemandSpec {
    let count = rng.gen_range(1..=max_components);
    let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let components = raw
        .iter()
        .map(|w| {
            let hi = rng.gen_range(0.5..3.0);
            let v0 = V0Dist::Uniform { lo: 0.0, hi };
            let discount = if rng.gen_bool(0.7) {
                DiscountDist::Point {
                    urgency: rng.gen_range(1.2..4.0),
                }
            } else {
                random_table(rng)
            };
            DemandComponent::new(w / total, v0, discount).unwrap()
        })
        .collect();
    DemandSpec::new(components).unwrap()
}

pub fn random_sizes<R: Rng>(rng: &mut R, k: usize, throughput: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| throughput * r / total).collect()
}

pub fn random_delays<R: Rng>(rng: &mut R, k: usize) -> Vec<u32> {
    let mut delays = vec![1u32];
    for _ in 1..k {
        let last = *delays.last().unwrap();
        delays.push(last + rng.gen_range(1..=4));
    }
    delays
}

/// Regular instance: continuous v0, fixed discounts, arrivals above throughput.
pub fn random_instance<R: Rng>(rng: &mut R, k: usize) -> Instance {
    let throughput = rng.gen_range(50.0..200.0);
    let rate = throughput * rng.gen_range(1.2..4.0);
    Instance {
        sizes: random_sizes(rng, k, throughput),
        delays: random_delays(rng, k),
        demand: SteadyDemand::new(rate, random_spec(rng, 3)).unwrap(),
    }
}

/// Geometric-only mixture with urgency ranges bounded away from 1, as the
/// delay construction requires.
pub fn random_geometric_spec<R: Rng>(rng: &mut R) -> DemandSpec {
    let count = rng.gen_range(1..=3);
    let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let components = raw
        .iter()
        .map(|w| {
            let lo = rng.gen_range(1.5..3.5);
            let discount = if rng.gen_bool(0.5) {
                DiscountDist::Uniform {
                    lo,
                    hi: lo + rng.gen_range(0.2..1.5),
                }
            } else {
                DiscountDist::Point { urgency: lo }
            };
            DemandComponent::new(w / total, V0Dist::Uniform { lo: 0.0, hi: rng.gen_range(0.5..3.0) }, discount).unwrap()
        })
        .collect();
    DemandSpec::new(components).unwrap()
}

/// Regular instance: uniform v0 and point-urgency geometric discounts, which
/// are continuous, strictly decreasing and vanishing.
pub fn random_regular_instance<R: Rng>(rng: &mut R, k: usize, max_value: f64) -> Instance {
    let throughput = rng.gen_range(50.0..200.0);
    let rate = throughput * rng.gen_range(1.2..4.0);
    let count = rng.gen_range(1..=3);
    let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let components = raw
        .iter()
        .map(|w| {
            let v0 = V0Dist::Uniform { lo: 0.0, hi: rng.gen_range(0.5..max_value) };
            let discount = DiscountDist::Point { urgency: rng.gen_range(1.2..4.0) };
            DemandComponent::new(w / total, v0, discount).unwrap()
        })
        .collect();
    Instance {
        sizes: random_sizes(rng, k, throughput),
        delays: random_delays(rng, k),
        demand: SteadyDemand::new(rate, DemandSpec::new(components).unwrap()).unwrap(),
    }
}
