//! Compatible and EIP-1559 stable prices by monotone coordinate raising.

use crate::chain::Blockchain;
use crate::error::{Error, Result};

use super::{AnalyticDemand, ExpectedDemandVector, SteadyDemand};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Absolute tolerance on `|E[T_j] - B_j|`.
    pub tol: f64,
    /// Outer iteration budget.
    pub max_iters: usize,
    /// Midpoint nodes used to discretize a continuous urgency range.
    pub urgency_nodes: usize,
    /// Outer iterations without residual improvement before giving up.
    pub stall_window: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iters: 20_000,
            urgency_nodes: 32,
            stall_window: 50,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("solver tol", format!("must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("solver max_iters", "must be at least 1"));
        }
        if self.urgency_nodes == 0 {
            return Err(Error::invalid("solver urgency_nodes", "must be at least 1"));
        }
        if self.stall_window == 0 {
            return Err(Error::invalid("solver stall_window", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolveOutcome {
    Solved { prices: Vec<f64> },
    /// The process stalled or ran out of budget; `prices` is the last iterate.
    NoStablePrices { prices: Vec<f64>, diagnostic: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub outcome: SolveOutcome,
    pub iterations: usize,
    /// `max_j |E[T_j] - B_j|` at the final iterate.
    pub residual: f64,
    /// Expected demand at the final iterate.
    pub demand: ExpectedDemandVector,
}

impl SolveReport {
    pub fn prices(&self) -> &[f64] {
        match &self.outcome {
            SolveOutcome::Solved { prices } | SolveOutcome::NoStablePrices { prices, .. } => prices,
        }
    }

    pub fn is_solved(&self) -> bool {
        matches!(self.outcome, SolveOutcome::Solved { .. })
    }
}

/// Builds the analytic model, discretizing continuous urgency ranges.
pub(crate) fn analytic_model(sizes: &[f64], delays: &[u32], demand: &SteadyDemand, nodes: usize) -> Result<AnalyticDemand> {
    let spec = demand.spec().discretized(nodes);
    AnalyticDemand::new(sizes, delays, demand.rate(), &spec)
}

fn check_inputs(sizes: &[f64], delays: &[u32], demand: &SteadyDemand) -> Result<()> {
    // Validates positivity and delay ordering.
    Blockchain::from_parts(sizes, delays, &vec![0.0; sizes.len()])?;
    let total: f64 = sizes.iter().sum();
    if demand.rate() <= total {
        return Err(Error::invalid(
            "arrival rate",
            format!("must exceed total throughput {total}, got {}", demand.rate()),
        ));
    }
    Ok(())
}

/// Raises `prices[tier]` until its expected demand lies in `[B, B + band]`.
///
/// Keeps the lower bracket so the tier is never left underfull; returns the
/// demand at the chosen price.
fn raise_price(model: &AnalyticDemand, prices: &mut [f64], tier: usize, target: f64, band: f64, ceiling: f64) -> ExpectedDemandVector {
    let mut lo = prices[tier];
    let mut hi = ceiling.max(lo);
    let mut at_lo = model.expected(prices);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        prices[tier] = mid;
        let e = model.expected(prices);
        let load = e.tiers[tier];
        if load < target {
            hi = mid;
        } else {
            lo = mid;
            at_lo = e;
            if load <= target + band {
                break;
            }
        }
    }
    prices[tier] = lo;
    at_lo
}

pub fn solve_stable_prices(sizes: &[f64], delays: &[u32], demand: &SteadyDemand, options: &SolverOptions) -> Result<SolveReport> {
    options.validate()?;
    check_inputs(sizes, delays, demand)?;
    let model = analytic_model(sizes, delays, demand, options.urgency_nodes)?;
    let m = model.tiers();
    let ceiling = model.price_ceiling();
    let tol = options.tol;

    let mut prices = vec![0.0; m];
    let mut current = model.expected(&prices);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut iterations = 0;
    loop {
        let excess: Vec<f64> = current.tiers.iter().zip(sizes).map(|(e, b)| e - b).collect();
        let (leader, top) = excess
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, x)| if x > acc.1 { (j, x) } else { acc });

        if top <= tol {
            let residual = current.residual(sizes);
            let unstable = (0..m).find(|&j| excess[j] < -tol && prices[j] > tol);
            let outcome = match unstable {
                None => SolveOutcome::Solved { prices },
                Some(j) => SolveOutcome::NoStablePrices {
                    diagnostic: format!(
                        "tier {} is underfull ({:.6} < {}) at positive price {:.6}",
                        j + 1,
                        current.tiers[j],
                        sizes[j],
                        prices[j]
                    ),
                    prices,
                },
            };
            return Ok(SolveReport {
                outcome,
                iterations,
                residual,
                demand: current,
            });
        }

        if top < best * (1.0 - 1e-6) {
            best = top;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if iterations >= options.max_iters || since_best >= options.stall_window {
            let diagnostic = if since_best >= options.stall_window {
                format!(
                    "excess demand stuck at {top:.6e} in tier {} for {} iterations",
                    leader + 1,
                    options.stall_window
                )
            } else {
                format!("iteration budget of {} exhausted with excess {top:.6e}", options.max_iters)
            };
            return Ok(SolveReport {
                residual: current.residual(sizes),
                outcome: SolveOutcome::NoStablePrices { prices, diagnostic },
                iterations,
                demand: current,
            });
        }

        current = raise_price(&model, &mut prices, leader, sizes[leader], tol / 10.0, ceiling);
        iterations += 1;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityCheck {
    /// `E[T_j] <= B_j + tol` for every tier.
    pub compatible: bool,
    /// Every tier with `E[T_j] < B_j - tol` has `p_j <= tol`.
    pub stable: bool,
    pub demand: ExpectedDemandVector,
}

impl StabilityCheck {
    pub fn passed(&self) -> bool {
        self.compatible && self.stable
    }
}

pub fn verify_compatible_stable(chain: &Blockchain, demand: &SteadyDemand, tol: f64) -> Result<StabilityCheck> {
    let sizes = chain.sizes();
    let model = analytic_model(&sizes, &chain.delays(), demand, SolverOptions::default().urgency_nodes)?;
    let prices = chain.prices();
    let e = model.expected(&prices);
    let compatible = e.tiers.iter().zip(&sizes).all(|(t, b)| *t <= b + tol);
    let stable = e
        .tiers
        .iter()
        .zip(&sizes)
        .zip(&prices)
        .all(|((t, b), p)| *t >= b - tol || *p <= tol);
    Ok(StabilityCheck {
        compatible,
        stable,
        demand: e,
    })
}
