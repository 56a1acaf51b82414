//! Block-indexed fee mechanisms: the EIP-1559 price controller and tiered
//! pricing, which runs one EIP-1559 controller per tier and periodically
//! revises tier delays and the number of tiers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{Blockchain, TierState, THROUGHPUT_TOLERANCE};
use crate::error::{Error, Result};

/// Denominator of the EIP-1559 adjustment: a completely full (2x target)
/// block raises the price by 1/8.
pub const EIP1559_ADJUSTMENT_QUOTIENT: f64 = 8.0;

/// `p * (1 + (f - target) / target / 8)`, floored at `min_price`.
pub fn update_eip1559(price: f64, fullness: f64, target: f64, min_price: f64) -> f64 {
    let next = price * (1.0 + (fullness - target) / target / EIP1559_ADJUSTMENT_QUOTIENT);
    next.max(min_price)
}

/// Smallest integer delay `>= factor * delay` and strictly above `delay`.
pub fn min_next_delay(factor: f64, delay: u32) -> u32 {
    // Slack absorbs representation error in products such as 1.1 * 10.
    let bound = (factor * delay as f64 - 1e-9).ceil();
    (bound as u32).max(delay + 1)
}

fn default_target_load() -> f64 {
    1.0
}

fn default_max_fill_factor() -> f64 {
    2.0
}

fn default_min_first_tier_fraction() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Eip1559Params {
    /// Target fullness as a multiple of the tier size.
    #[serde(default = "default_target_load")]
    pub target_load: f64,
    /// Physical capacity as a multiple of the tier size.
    #[serde(default = "default_max_fill_factor")]
    pub max_fill_factor: f64,
    #[serde(default)]
    pub min_price: f64,
}

impl Default for Eip1559Params {
    fn default() -> Self {
        Self {
            target_load: default_target_load(),
            max_fill_factor: default_max_fill_factor(),
            min_price: 0.0,
        }
    }
}

impl Eip1559Params {
    pub fn validate(&self) -> Result<()> {
        validate_controller(self.target_load, self.max_fill_factor, self.min_price)
    }
}

fn validate_controller(target_load: f64, max_fill_factor: f64, min_price: f64) -> Result<()> {
    if !(target_load > 0.0 && target_load.is_finite()) {
        return Err(Error::invalid("target_load", format!("must be positive, got {target_load}")));
    }
    if !(max_fill_factor >= 1.0 && max_fill_factor.is_finite()) {
        return Err(Error::invalid("max_fill_factor", format!("must be >= 1, got {max_fill_factor}")));
    }
    if !(min_price >= 0.0 && min_price.is_finite()) {
        return Err(Error::invalid("min_price", format!("must be >= 0, got {min_price}")));
    }
    Ok(())
}

/// Parameters of the tiered pricing mechanism.
///
/// `delay_factors` and `price_factors` hold one entry per consecutive tier
/// pair (`max_tiers - 1` entries).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TieredParams {
    pub max_tiers: usize,
    pub size_fractions: Vec<f64>,
    #[serde(default)]
    pub delay_factors: Vec<f64>,
    #[serde(default)]
    pub price_factors: Vec<f64>,
    pub delay_freq: u64,
    pub tier_freq: u64,
    pub p_decrease: f64,
    /// Price of a newly added tier; half of `add_tier_price` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_tier_price: Option<f64>,
    pub add_tier_price: f64,
    pub remove_tier_price: f64,
    #[serde(default = "default_target_load")]
    pub target_load: f64,
    #[serde(default = "default_max_fill_factor")]
    pub max_fill_factor: f64,
    #[serde(default)]
    pub min_price: f64,
    /// A tier is only added if tier 1 keeps at least this fraction of throughput.
    #[serde(default = "default_min_first_tier_fraction")]
    pub min_first_tier_fraction: f64,
}

impl TieredParams {
    pub fn validate(&self) -> Result<()> {
        let k = self.max_tiers;
        if k == 0 {
            return Err(Error::invalid("max_tiers", "must be at least 1"));
        }
        if self.size_fractions.len() != k {
            return Err(Error::invalid(
                "size_fractions",
                format!("need {k} entries, got {}", self.size_fractions.len()),
            ));
        }
        if let Some(a) = self.size_fractions.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::invalid("size_fractions", format!("entries must lie in (0, 1], got {a}")));
        }
        let total: f64 = self.size_fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("size_fractions", format!("must sum to 1, got {total}")));
        }
        if self.delay_factors.len() < k - 1 {
            return Err(Error::invalid(
                "delay_factors",
                format!("need {} entries, got {}", k - 1, self.delay_factors.len()),
            ));
        }
        if let Some(l) = self.delay_factors.iter().find(|l| !(**l > 1.0 && l.is_finite())) {
            return Err(Error::invalid("delay_factors", format!("entries must exceed 1, got {l}")));
        }
        if self.price_factors.len() < k - 1 {
            return Err(Error::invalid(
                "price_factors",
                format!("need {} entries, got {}", k - 1, self.price_factors.len()),
            ));
        }
        if let Some(m) = self.price_factors.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
            return Err(Error::invalid("price_factors", format!("entries must lie in (0, 1), got {m}")));
        }
        if self.delay_freq == 0 {
            return Err(Error::invalid("delay_freq", "must be positive"));
        }
        if self.tier_freq == 0 {
            return Err(Error::invalid("tier_freq", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_decrease) {
            return Err(Error::invalid("p_decrease", format!("must lie in [0, 1], got {}", self.p_decrease)));
        }
        for (name, v) in [
            ("add_tier_price", self.add_tier_price),
            ("remove_tier_price", self.remove_tier_price),
            ("new_tier_price", self.new_tier_price()),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be >= 0, got {v}")));
            }
        }
        if self.remove_tier_price >= self.add_tier_price {
            return Err(Error::invalid(
                "remove_tier_price",
                format!(
                    "must be below add_tier_price ({} >= {})",
                    self.remove_tier_price, self.add_tier_price
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.min_first_tier_fraction) {
            return Err(Error::invalid(
                "min_first_tier_fraction",
                format!("must lie in [0, 1), got {}", self.min_first_tier_fraction),
            ));
        }
        validate_controller(self.target_load, self.max_fill_factor, self.min_price)
    }

    pub fn new_tier_price(&self) -> f64 {
        self.new_tier_price.unwrap_or(self.add_tier_price / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MechanismParams {
    Eip1559(Eip1559Params),
    Tiered(TieredParams),
}

impl MechanismParams {
    pub fn validate(&self) -> Result<()> {
        match self {
            MechanismParams::Eip1559(p) => p.validate(),
            MechanismParams::Tiered(p) => p.validate(),
        }
    }

    pub fn target_load(&self) -> f64 {
        match self {
            MechanismParams::Eip1559(p) => p.target_load,
            MechanismParams::Tiered(p) => p.target_load,
        }
    }

    pub fn max_fill_factor(&self) -> f64 {
        match self {
            MechanismParams::Eip1559(p) => p.max_fill_factor,
            MechanismParams::Tiered(p) => p.max_fill_factor,
        }
    }

    pub fn min_price(&self) -> f64 {
        match self {
            MechanismParams::Eip1559(p) => p.min_price,
            MechanismParams::Tiered(p) => p.min_price,
        }
    }

    pub fn max_tiers(&self) -> usize {
        match self {
            MechanismParams::Eip1559(_) => 1,
            MechanismParams::Tiered(p) => p.max_tiers,
        }
    }
}

/// Outcome of a tier-count revision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TierChange {
    Keep,
    /// Drop the last tier; tier 1 grows to `first_size`.
    Remove { first_size: f64 },
    /// Append a tier of `new_size`; tier 1 shrinks to `first_size`.
    Add { first_size: f64, new_size: f64 },
}

/// Revises the number of tiers from the last tier's updated price.
pub fn update_tier_sizes(
    active: usize,
    first_size: f64,
    last_size: f64,
    last_price: f64,
    params: &TieredParams,
    throughput: f64,
) -> TierChange {
    if active > 1 && last_price < params.remove_tier_price {
        return TierChange::Remove {
            first_size: first_size + last_size,
        };
    }
    if active < params.max_tiers && last_price > params.add_tier_price {
        let new_size = params.size_fractions[active] * throughput;
        let remaining = first_size - new_size;
        if remaining >= params.min_first_tier_fraction * throughput && remaining > 0.0 {
            return TierChange::Add {
                first_size: remaining,
                new_size,
            };
        }
    }
    TierChange::Keep
}

/// Revises tier delays from consecutive updated prices. Delays move by one
/// block and are clamped so that `d[i+1] >= ceil(lambda_i * d[i])`.
pub fn update_delays<R: Rng + ?Sized>(
    delays: &[u32],
    prices: &[f64],
    params: &TieredParams,
    rng: &mut R,
) -> Vec<u32> {
    let mut next = delays.to_vec();
    for i in 0..delays.len().saturating_sub(1) {
        if prices[i + 1] > params.price_factors[i] * prices[i] {
            next[i + 1] = delays[i + 1] + 1;
        } else if params.p_decrease > 0.0 && rng.gen::<f64>() < params.p_decrease {
            next[i + 1] = delays[i + 1].saturating_sub(1);
        }
        next[i + 1] = next[i + 1].max(min_next_delay(params.delay_factors[i], next[i]));
    }
    next
}

/// Full dynamic state of a fee mechanism.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanismState {
    chain: Blockchain,
    update_count: u64,
    throughput: f64,
    params: MechanismParams,
}

impl MechanismState {
    /// A single tier of the full throughput, delay 1 and the given price.
    pub fn initial(params: MechanismParams, throughput: f64, initial_price: f64) -> Result<Self> {
        params.validate()?;
        if !(throughput > 0.0 && throughput.is_finite()) {
            return Err(Error::invalid("throughput", format!("must be positive, got {throughput}")));
        }
        if !(initial_price >= 0.0 && initial_price.is_finite()) {
            return Err(Error::invalid("initial_price", format!("must be >= 0, got {initial_price}")));
        }
        let chain = Blockchain::new(vec![TierState::new(throughput, 1, initial_price)])?;
        Ok(Self {
            chain,
            update_count: 0,
            throughput,
            params,
        })
    }

    /// Resumes from an explicit chain.
    pub fn from_chain(params: MechanismParams, throughput: f64, chain: Blockchain, update_count: u64) -> Result<Self> {
        params.validate()?;
        chain.check_throughput(throughput)?;
        if chain.len() > params.max_tiers() {
            return Err(Error::invalid(
                "chain",
                format!("{} tiers exceed the maximum of {}", chain.len(), params.max_tiers()),
            ));
        }
        Ok(Self {
            chain,
            update_count,
            throughput,
            params,
        })
    }

    pub fn chain(&self) -> &Blockchain {
        &self.chain
    }

    pub fn active_tiers(&self) -> usize {
        self.chain.len()
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn throughput(&self) -> f64 {
        self.throughput
    }

    pub fn params(&self) -> &MechanismParams {
        &self.params
    }

    /// Applies one block's update given the included count of each active tier.
    pub fn advance<R: Rng + ?Sized>(&mut self, fullness: &[f64], rng: &mut R) -> Result<()> {
        let m = self.chain.len();
        if fullness.len() != m {
            return Err(Error::invalid(
                "fullness",
                format!("need {m} entries, got {}", fullness.len()),
            ));
        }
        let target_load = self.params.target_load();
        let min_price = self.params.min_price();
        let mut tiers: Vec<TierState> = self
            .chain
            .tiers()
            .iter()
            .zip(fullness)
            .map(|(t, &f)| TierState {
                price: update_eip1559(t.price, f, target_load * t.size, min_price),
                ..*t
            })
            .collect();
        self.update_count += 1;

        if let MechanismParams::Tiered(params) = &self.params {
            let t = self.update_count;
            if t % params.delay_freq == 0 {
                let delays: Vec<u32> = tiers.iter().map(|t| t.delay).collect();
                let prices: Vec<f64> = tiers.iter().map(|t| t.price).collect();
                for (tier, d) in tiers.iter_mut().zip(update_delays(&delays, &prices, params, rng)) {
                    tier.delay = d;
                }
            }
            if t % params.tier_freq == 0 {
                let last = tiers[m - 1];
                match update_tier_sizes(m, tiers[0].size, last.size, last.price, params, self.throughput) {
                    TierChange::Keep => {}
                    TierChange::Remove { first_size } => {
                        tiers.pop();
                        tiers[0].size = first_size;
                    }
                    TierChange::Add { first_size, new_size } => {
                        tiers[0].size = first_size;
                        let delay = min_next_delay(params.delay_factors[m - 1], last.delay);
                        tiers.push(TierState::new(new_size, delay, params.new_tier_price()));
                    }
                }
            }
        }

        let chain = Blockchain::new(tiers)?;
        debug_assert!((chain.throughput() - self.throughput).abs() <= THROUGHPUT_TOLERANCE * self.throughput.max(1.0));
        self.chain = chain;
        Ok(())
    }
}

/// Functional form of [`MechanismState::advance`].
pub fn update_tier_parameters<R: Rng + ?Sized>(
    state: &MechanismState,
    fullness: &[f64],
    rng: &mut R,
) -> Result<MechanismState> {
    let mut next = state.clone();
    next.advance(fullness, rng)?;
    Ok(next)
}
