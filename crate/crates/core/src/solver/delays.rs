//! Delays satisfying `d_{j+1} >= λ_j d_j` and `p_{j+1} <= μ_j p_j` at the
//! solved prices.

use crate::chain::Blockchain;
use crate::demand::{DemandSpec, DiscountDist};
use crate::error::{Error, Result};
use crate::mechanisms::min_next_delay;

use super::prices::{solve_stable_prices, SolverOptions};
use super::SteadyDemand;

/// Largest delay the construction will consider.
pub const MAX_POLICY_DELAY: u32 = 100_000;

/// Slack allowed on the price-ratio constraint.
pub const PRICE_RATIO_TOLERANCE: f64 = 1e-9;

const MAX_RETRIES: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDelays {
    pub delays: Vec<u32>,
    pub prices: Vec<f64>,
    /// Delays as first constructed, before any retry or descent.
    pub initial_delays: Vec<u32>,
    pub retries: usize,
}

fn check_factors(k: usize, lambda: &[f64], mu: &[f64]) -> Result<()> {
    if lambda.len() + 1 != k || mu.len() + 1 != k {
        return Err(Error::invalid(
            "policy factors",
            format!("need {} delay and price factors for {k} tiers, got {} and {}", k - 1, lambda.len(), mu.len()),
        ));
    }
    if let Some(l) = lambda.iter().find(|l| !(**l > 1.0 && l.is_finite())) {
        return Err(Error::invalid("delay factor", format!("must exceed 1, got {l}")));
    }
    if let Some(m) = mu.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
        return Err(Error::invalid("price factor", format!("must lie in (0, 1), got {m}")));
    }
    Ok(())
}

/// `d_{j+1} >= λ_j d_j` and `p_{j+1} <= μ_j p_j` for every consecutive pair.
pub fn satisfies_constraints(delays: &[u32], prices: &[f64], lambda: &[f64], mu: &[f64]) -> bool {
    (0..delays.len().saturating_sub(1)).all(|j| {
        delays[j + 1] >= min_next_delay(lambda[j], delays[j]) && prices[j + 1] <= mu[j] * prices[j] + PRICE_RATIO_TOLERANCE
    })
}

/// Probability that a sampled discount function satisfies
/// `h(d) < μ h(base) / 2`, computed per component in closed form.
fn separation_probability(spec: &DemandSpec, base: u32, d: u32, mu: f64) -> f64 {
    let gap = f64::from(d - base);
    let ratio = 2.0 / mu;
    spec.components()
        .iter()
        .map(|c| {
            let p = match &c.discount {
                DiscountDist::Point { urgency } => {
                    if urgency.powf(gap) > ratio {
                        1.0
                    } else {
                        0.0
                    }
                }
                DiscountDist::Uniform { lo, hi } => {
                    // u^gap > 2/μ  <=>  u > (2/μ)^(1/gap)
                    let threshold = ratio.powf(1.0 / gap);
                    if hi <= lo {
                        f64::from(u8::from(*lo > threshold))
                    } else {
                        ((hi - threshold.max(*lo)) / (hi - lo)).clamp(0.0, 1.0)
                    }
                }
                DiscountDist::Table { points } => {
                    let at_base = points.factor(f64::from(base));
                    let at_d = points.factor(f64::from(d));
                    // A value already gone at the base delay is trivially separated.
                    if at_base == 0.0 || at_d < mu * at_base / 2.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            c.weight * p
        })
        .sum()
}

/// Smallest delay after `base` whose separation probability exceeds `threshold`.
fn separating_delay(spec: &DemandSpec, base: u32, mu: f64, threshold: f64) -> Option<u32> {
    (base + 1..=MAX_POLICY_DELAY).find(|&d| separation_probability(spec, base, d, mu) > threshold)
}

/// Fills `delays[from..]` from `delays[from - 1]` using both lower bounds.
fn propagate(delays: &mut [u32], from: usize, spec: &DemandSpec, lambda: &[f64], mu: &[f64], threshold: f64) -> Result<()> {
    for j in from..delays.len() {
        let clamp = min_next_delay(lambda[j - 1], delays[j - 1]);
        let sep = separating_delay(spec, delays[j - 1], mu[j - 1], threshold).ok_or_else(|| {
            Error::Infeasible(format!(
                "no delay up to {MAX_POLICY_DELAY} separates tier {} from tier {j} with probability above {threshold}",
                j + 1
            ))
        })?;
        delays[j] = delays[j].max(clamp).max(sep);
        if delays[j] > MAX_POLICY_DELAY {
            return Err(Error::Infeasible(format!("tier {} delay exceeds {MAX_POLICY_DELAY}", j + 1)));
        }
    }
    Ok(())
}

fn solve(sizes: &[f64], delays: &[u32], demand: &SteadyDemand, options: &SolverOptions) -> Result<Option<Vec<f64>>> {
    let report = solve_stable_prices(sizes, delays, demand, options)?;
    Ok(report.is_solved().then(|| report.prices().to_vec()))
}

fn first_violation(delays: &[u32], prices: &[f64], lambda: &[f64], mu: &[f64]) -> Option<usize> {
    (0..delays.len() - 1).find(|&j| !satisfies_constraints(&delays[j..j + 2], &prices[j..j + 2], &lambda[j..j + 1], &mu[j..j + 1]))
}

/// Builds delays for the given tier sizes, solves their prices and lowers
/// any delay that can be lowered without breaking the constraints.
pub fn construct_policy_delays(
    sizes: &[f64],
    lambda: &[f64],
    mu: &[f64],
    demand: &SteadyDemand,
    delta: f64,
    options: &SolverOptions,
) -> Result<PolicyDelays> {
    let k = sizes.len();
    if k == 0 {
        return Err(Error::Empty("tier sizes"));
    }
    check_factors(k, lambda, mu)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("failure budget", format!("must lie in (0, 1), got {delta}")));
    }
    let threshold = if k > 1 {
        1.0 - delta / ((k - 1) as f64 * demand.rate())
    } else {
        0.0
    };

    let mut delays = vec![1u32; k];
    propagate(&mut delays, 1, demand.spec(), lambda, mu, threshold)?;
    let initial_delays = delays.clone();

    let mut retries = 0;
    let mut prices = loop {
        let solved = solve(sizes, &delays, demand, options)?;
        let failing = match &solved {
            Some(p) => first_violation(&delays, p, lambda, mu),
            None => Some(k.saturating_sub(2)),
        };
        match (solved, failing) {
            (Some(p), None) => break p,
            (_, Some(j)) if k > 1 => {
                if retries == MAX_RETRIES {
                    return Err(Error::Infeasible(format!(
                        "price constraint between tiers {} and {} still fails after {MAX_RETRIES} retries (delays {delays:?})",
                        j + 1,
                        j + 2
                    )));
                }
                retries += 1;
                let gap = delays[j + 1] - delays[j];
                delays[j + 1] += (gap / 4).max(1);
                propagate(&mut delays, j + 2, demand.spec(), lambda, mu, threshold)?;
            }
            _ => {
                return Err(Error::Infeasible(format!("no stable prices for delays {delays:?}")));
            }
        }
    };

    // Descent: lower single delays while the constraints keep holding.
    let mut changed = true;
    while changed {
        changed = false;
        for j in 1..k {
            loop {
                let floor = min_next_delay(lambda[j - 1], delays[j - 1]);
                if delays[j] <= floor {
                    break;
                }
                let mut trial = delays.clone();
                trial[j] -= 1;
                match solve(sizes, &trial, demand, options)? {
                    Some(p) if satisfies_constraints(&trial, &p, lambda, mu) => {
                        delays = trial;
                        prices = p;
                        changed = true;
                    }
                    _ => break,
                }
            }
        }
    }

    Ok(PolicyDelays {
        delays,
        prices,
        initial_delays,
        retries,
    })
}

/// Whether each tier's delay is blocked from decreasing by one.
///
/// Tier 1 is minimal by definition. A later tier is minimal when the
/// decrement would break `d_j >= λ_{j-1} d_{j-1}`, or when the re-solved
/// prices break a price constraint or do not exist.
pub fn is_delay_locally_minimal(
    chain: &Blockchain,
    demand: &SteadyDemand,
    lambda: &[f64],
    mu: &[f64],
    options: &SolverOptions,
) -> Result<Vec<bool>> {
    let k = chain.len();
    check_factors(k, lambda, mu)?;
    let sizes = chain.sizes();
    let delays = chain.delays();
    let mut minimal = vec![true; k];
    for j in 1..k {
        if delays[j] <= min_next_delay(lambda[j - 1], delays[j - 1]) {
            continue;
        }
        let mut trial = delays.clone();
        trial[j] -= 1;
        minimal[j] = match solve(&sizes, &trial, demand, options)? {
            Some(p) => !satisfies_constraints(&trial, &p, lambda, mu),
            None => true,
        };
    }
    Ok(minimal)
}
