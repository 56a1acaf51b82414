//! Steady-state analysis of tiered chains: expected per-tier demand, the
//! compatible and EIP-1559 stable price vector, and delays satisfying the
//! tiered pricing constraints.

mod delays;
mod envelope;
mod prices;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::{Blockchain, TIE_TOLERANCE};
use crate::demand::{DemandSpec, V0Dist};
use crate::error::{Error, Result};

pub use delays::{construct_policy_delays, is_delay_locally_minimal, satisfies_constraints, PolicyDelays};
pub use envelope::{envelope_intervals, EnvelopePartition, Interval};
pub use prices::{solve_stable_prices, verify_compatible_stable, SolveOutcome, SolveReport, SolverOptions, StabilityCheck};

/// Arrival rate and value-function distribution of a stationary load.
#[derive(Clone, Debug, PartialEq)]
pub struct SteadyDemand {
    rate: f64,
    spec: DemandSpec,
}

impl SteadyDemand {
    pub fn new(rate: f64, spec: DemandSpec) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::invalid("arrival rate", format!("must be positive, got {rate}")));
        }
        Ok(Self { rate, spec })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn spec(&self) -> &DemandSpec {
        &self.spec
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DemandMethod {
    /// Exact integration over the envelope intervals of each discount function.
    Analytic,
    /// Sample average over `samples` draws from a generator seeded with `seed`.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Expected transactions per block in each tier.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedDemandVector {
    /// `E[T_j]` for tiers `1..=m`.
    pub tiers: Vec<f64>,
    /// `E[T_0]`, the rejected mass.
    pub rejected: f64,
    /// Standard errors for `[T_0, T_1, .., T_m]` (Monte Carlo only).
    pub std_errors: Option<Vec<f64>>,
}

impl ExpectedDemandVector {
    pub fn total(&self) -> f64 {
        self.rejected + self.tiers.iter().sum::<f64>()
    }

    pub fn included(&self) -> f64 {
        self.tiers.iter().sum()
    }

    /// `max_j |E[T_j] - B_j|`.
    pub fn residual(&self, sizes: &[f64]) -> f64 {
        self.tiers
            .iter()
            .zip(sizes)
            .map(|(e, b)| (e - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn expected_demand(chain: &Blockchain, demand: &SteadyDemand, method: DemandMethod) -> Result<ExpectedDemandVector> {
    match method {
        DemandMethod::Analytic => {
            let model = AnalyticDemand::new(&chain.sizes(), &chain.delays(), demand.rate, &demand.spec)?;
            Ok(model.expected(&chain.prices()))
        }
        DemandMethod::MonteCarlo { samples, seed } => monte_carlo_demand(chain, demand, samples, seed),
    }
}

/// Splits a unit of mass among the utility-maximizing tiers of one
/// transaction, using the same tie rules as [`Blockchain::choose_tier`].
fn split_by_utilities(utilities: &[f64], sizes: &[f64], out: &mut [f64], mass: f64) {
    let best = utilities.iter().copied().fold(0.0, f64::max);
    let total: f64 = utilities
        .iter()
        .zip(sizes)
        .filter(|(u, _)| **u >= best - TIE_TOLERANCE)
        .map(|(_, s)| s)
        .sum();
    if total == 0.0 {
        out[0] += mass;
        return;
    }
    for (j, (u, s)) in utilities.iter().zip(sizes).enumerate() {
        if *u >= best - TIE_TOLERANCE {
            out[j + 1] += mass * s / total;
        }
    }
}

struct AnalyticComponent {
    weight: f64,
    v0: V0Dist,
    /// `h(d_j)` for each tier.
    slopes: Vec<f64>,
}

/// Expected demand for fixed sizes and delays as a function of prices.
pub(crate) struct AnalyticDemand {
    rate: f64,
    sizes: Vec<f64>,
    components: Vec<AnalyticComponent>,
}

impl AnalyticDemand {
    pub(crate) fn new(sizes: &[f64], delays: &[u32], rate: f64, spec: &DemandSpec) -> Result<Self> {
        let mut components = Vec::with_capacity(spec.components().len());
        for (i, c) in spec.components().iter().enumerate() {
            let h = c.discount.fixed().ok_or_else(|| {
                Error::AnalyticUnsupported(format!(
                    "component {i} draws its urgency from a continuous range; discretize it first"
                ))
            })?;
            components.push(AnalyticComponent {
                weight: c.weight,
                v0: c.v0.clone(),
                slopes: delays.iter().map(|&d| h.factor(d as f64)).collect(),
            });
        }
        Ok(Self {
            rate,
            sizes: sizes.to_vec(),
            components,
        })
    }

    pub(crate) fn tiers(&self) -> usize {
        self.sizes.len()
    }

    /// Per-tier probabilities `[P(T_0), P(T_1), ..]` summed over components.
    fn probabilities(&self, prices: &[f64]) -> Vec<f64> {
        let m = self.sizes.len();
        let mut probs = vec![0.0; m + 1];
        let mut utilities = vec![0.0; m];
        for c in &self.components {
            if let V0Dist::Point { value } = c.v0 {
                for j in 0..m {
                    utilities[j] = value * c.slopes[j] - prices[j];
                }
                split_by_utilities(&utilities, &self.sizes, &mut probs, c.weight);
                continue;
            }
            let part = envelope::partition_from_slopes(&c.slopes, prices);
            let mass = |iv: Interval| {
                if iv.is_empty() {
                    0.0
                } else {
                    let upper = if iv.hi.is_finite() { c.v0.tail_probability(iv.hi) } else { 0.0 };
                    (c.v0.tail_probability(iv.lo) - upper).max(0.0)
                }
            };
            probs[0] += c.weight * mass(part.interval(0));
            let mut j = 1;
            while j <= m {
                let iv = part.interval(j);
                if iv.is_empty() {
                    j += 1;
                    continue;
                }
                // Tiers sharing an interval have coinciding lines; split by size.
                let group: Vec<usize> = (1..=m).filter(|&t| part.interval(t) == iv).collect();
                if group[0] != j {
                    j += 1;
                    continue;
                }
                let share = c.weight * mass(iv);
                let total: f64 = group.iter().map(|&t| self.sizes[t - 1]).sum();
                for &t in &group {
                    probs[t] += share * self.sizes[t - 1] / total;
                }
                j += 1;
            }
        }
        probs
    }

    pub(crate) fn expected(&self, prices: &[f64]) -> ExpectedDemandVector {
        let probs = self.probabilities(prices);
        ExpectedDemandVector {
            tiers: probs[1..].iter().map(|p| self.rate * p).collect(),
            rejected: self.rate * probs[0],
            std_errors: None,
        }
    }

    /// Upper bracket on any price: demand vanishes above it.
    pub(crate) fn price_ceiling(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.v0.upper_support())
            .fold(0.0, f64::max)
            * (1.0 + 1e-9)
            + 1e-12
    }
}

const MONTE_CARLO_CHUNK: usize = 8192;

fn monte_carlo_demand(chain: &Blockchain, demand: &SteadyDemand, samples: usize, seed: u64) -> Result<ExpectedDemandVector> {
    if samples == 0 {
        return Err(Error::Empty("Monte Carlo sample"));
    }
    let m = chain.len();
    let chunks = samples.div_ceil(MONTE_CARLO_CHUNK);
    // Chunk i always uses stream i, so the estimate does not depend on the thread count.
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let count = MONTE_CARLO_CHUNK.min(samples - chunk * MONTE_CARLO_CHUNK);
            let mut sum = vec![0.0; m + 1];
            let mut sum_sq = vec![0.0; m + 1];
            for _ in 0..count {
                let vf = demand.spec.sample(&mut rng).value;
                for (j, p) in chain.choice_probabilities(&vf).into_iter().enumerate() {
                    sum[j] += p;
                    sum_sq[j] += p * p;
                }
            }
            (sum, sum_sq)
        })
        .collect();
    let mut sum = vec![0.0; m + 1];
    let mut sum_sq = vec![0.0; m + 1];
    for (s, q) in &partials {
        for j in 0..=m {
            sum[j] += s[j];
            sum_sq[j] += q[j];
        }
    }
    let n = samples as f64;
    let rate = demand.rate;
    let mut means = Vec::with_capacity(m + 1);
    let mut errors = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let mean = sum[j] / n;
        let var = if samples > 1 {
            ((sum_sq[j] - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        means.push(rate * mean);
        errors.push(rate * (var / n).sqrt());
    }
    Ok(ExpectedDemandVector {
        rejected: means[0],
        tiers: means[1..].to_vec(),
        std_errors: Some(errors),
    })
}
