//! Tier menus and utility-maximizing tier selection.
//!
//! Tier indices are 1-based; index 0 is the implicit rejection tier with zero
//! utility and unbounded size.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demand::ValueFunction;
use crate::error::{Error, Result};

/// Absolute tolerance under which two utilities are considered tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Tolerance on `sum(sizes) == throughput`.
pub const THROUGHPUT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierState {
    /// Target number of transactions per block.
    pub size: f64,
    /// Processing delay in blocks.
    pub delay: u32,
    pub price: f64,
}

impl TierState {
    pub fn new(size: f64, delay: u32, price: f64) -> Self {
        Self { size, delay, price }
    }
}

/// An ordered tier menu `(B, d, p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blockchain {
    tiers: Vec<TierState>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TierChoice {
    pub tier_index: usize,
    pub utility: f64,
}

impl Blockchain {
    pub fn new(tiers: Vec<TierState>) -> Result<Self> {
        if tiers.is_empty() {
            return Err(Error::Empty("tier list"));
        }
        for (i, t) in tiers.iter().enumerate() {
            if !(t.size.is_finite() && t.size > 0.0) {
                return Err(Error::invalid(format!("tier {} size", i + 1), format!("must be positive, got {}", t.size)));
            }
            if t.delay < 1 {
                return Err(Error::invalid(format!("tier {} delay", i + 1), "must be at least 1"));
            }
            if !(t.price.is_finite() && t.price >= 0.0) {
                return Err(Error::invalid(format!("tier {} price", i + 1), format!("must be >= 0, got {}", t.price)));
            }
        }
        for (i, pair) in tiers.windows(2).enumerate() {
            if pair[1].delay <= pair[0].delay {
                return Err(Error::invalid(
                    "tier delays",
                    format!(
                        "must strictly increase: tier {} has {} and tier {} has {}",
                        i + 1,
                        pair[0].delay,
                        i + 2,
                        pair[1].delay
                    ),
                ));
            }
        }
        Ok(Self { tiers })
    }

    /// Builds a chain from parallel size/delay/price slices.
    pub fn from_parts(sizes: &[f64], delays: &[u32], prices: &[f64]) -> Result<Self> {
        if sizes.len() != delays.len() || sizes.len() != prices.len() {
            return Err(Error::invalid(
                "tier vectors",
                format!("length mismatch: {} sizes, {} delays, {} prices", sizes.len(), delays.len(), prices.len()),
            ));
        }
        Self::new(
            sizes
                .iter()
                .zip(delays)
                .zip(prices)
                .map(|((&s, &d), &p)| TierState::new(s, d, p))
                .collect(),
        )
    }

    /// Checks that tier sizes add up to `throughput`.
    pub fn check_throughput(&self, throughput: f64) -> Result<()> {
        let total = self.throughput();
        if (total - throughput).abs() > THROUGHPUT_TOLERANCE * throughput.max(1.0) {
            return Err(Error::invalid(
                "tier sizes",
                format!("sum to {total}, expected throughput {throughput}"),
            ));
        }
        Ok(())
    }

    pub fn tiers(&self) -> &[TierState] {
        &self.tiers
    }

    pub fn len(&self) -> usize {
        self.tiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiers.is_empty()
    }

    pub fn throughput(&self) -> f64 {
        self.tiers.iter().map(|t| t.size).sum()
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.tiers.iter().map(|t| t.size).collect()
    }

    pub fn delays(&self) -> Vec<u32> {
        self.tiers.iter().map(|t| t.delay).collect()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.tiers.iter().map(|t| t.price).collect()
    }

    /// Copy of this chain with the given prices.
    pub fn with_prices(&self, prices: &[f64]) -> Result<Self> {
        Self::from_parts(&self.sizes(), &self.delays(), prices)
    }

    /// Utility of `vf` in tier `tier_index` (0 means rejected).
    pub fn utility(&self, vf: &ValueFunction, tier_index: usize) -> Result<f64> {
        match tier_index {
            0 => Ok(0.0),
            j if j <= self.tiers.len() => Ok(self.paid_utility(vf, j - 1)),
            index => Err(Error::TierIndex {
                index,
                tiers: self.tiers.len(),
            }),
        }
    }

    #[inline]
    fn paid_utility(&self, vf: &ValueFunction, slot: usize) -> f64 {
        let t = &self.tiers[slot];
        vf.value_at(t.delay as f64) - t.price
    }

    /// All utility-maximizing tier indices. A tie between rejection and a paid
    /// tier resolves to the paid tier(s).
    pub fn preferred_tiers(&self, vf: &ValueFunction) -> Vec<usize> {
        let (best, _) = self.best_utility(vf);
        let mut set: Vec<usize> = (0..self.tiers.len())
            .filter(|&s| self.paid_utility(vf, s) >= best - TIE_TOLERANCE)
            .map(|s| s + 1)
            .collect();
        if set.is_empty() {
            set.push(0);
        }
        set
    }

    fn best_utility(&self, vf: &ValueFunction) -> (f64, usize) {
        let mut best = 0.0;
        let mut arg = 0;
        for s in 0..self.tiers.len() {
            let u = self.paid_utility(vf, s);
            if u > best {
                best = u;
                arg = s + 1;
            }
        }
        (best, arg)
    }

    /// Probability of each tier index (0..=m) under size-proportional tie breaking.
    pub fn choice_probabilities(&self, vf: &ValueFunction) -> Vec<f64> {
        let mut probs = vec![0.0; self.tiers.len() + 1];
        let set = self.preferred_tiers(vf);
        if set == [0] {
            probs[0] = 1.0;
            return probs;
        }
        let total: f64 = set.iter().map(|&j| self.tiers[j - 1].size).sum();
        for &j in &set {
            probs[j] = self.tiers[j - 1].size / total;
        }
        probs
    }

    /// Picks a tier among the preferred ones with probability proportional to size.
    pub fn choose_tier<R: Rng + ?Sized>(&self, vf: &ValueFunction, rng: &mut R) -> TierChoice {
        let set = self.preferred_tiers(vf);
        let tier_index = match set.as_slice() {
            [only] => *only,
            _ => {
                let total: f64 = set.iter().map(|&j| self.tiers[j - 1].size).sum();
                let mut x = rng.gen::<f64>() * total;
                let mut pick = *set.last().expect("non-empty preferred set");
                for &j in &set {
                    let w = self.tiers[j - 1].size;
                    if x < w {
                        pick = j;
                        break;
                    }
                    x -= w;
                }
                pick
            }
        };
        let utility = if tier_index == 0 {
            0.0
        } else {
            self.paid_utility(vf, tier_index - 1)
        };
        TierChoice { tier_index, utility }
    }

    /// Delays strictly increase and prices never increase with the tier index.
    pub fn is_menu_monotone(&self) -> bool {
        self.tiers
            .windows(2)
            .all(|w| w[1].delay > w[0].delay && w[1].price <= w[0].price)
    }
}
