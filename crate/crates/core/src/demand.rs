//! Value functions, demand mixtures and time-varying load schedules.
//!
//! A transaction's value for being processed after `d` blocks is `v0 * h(d)`,
//! where `v0` is its value for the minimum delay of one block and `h` is a
//! discount function with `h(1) = 1`. Demand is a finite mixture of components,
//! each drawing `v0` and a discount function independently.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalCdf};

use crate::error::{Error, Result};

/// Weights must sum to one within this slack.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Upper quantile used as the effective top of an unbounded `v0` support.
const UPPER_SUPPORT_QUANTILE: f64 = 1.0 - 1e-9;

/// Piecewise-linear discount table. Delays strictly increase from 1, factors
/// strictly decrease within `[0, 1]`; the last factor is held beyond the last delay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct DiscountTable {
    points: Vec<(f64, f64)>,
}

impl DiscountTable {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let Some(&(first_delay, _)) = points.first() else {
            return Err(Error::invalid("discount table", "needs at least one point"));
        };
        if first_delay != 1.0 {
            return Err(Error::invalid(
                "discount table",
                format!("first delay must be 1, got {first_delay}"),
            ));
        }
        for &(d, f) in &points {
            if !d.is_finite() || !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(
                    "discount table",
                    format!("point ({d}, {f}) outside delay >= 1, factor in [0, 1]"),
                ));
            }
        }
        for pair in points.windows(2) {
            let ((d0, f0), (d1, f1)) = (pair[0], pair[1]);
            if d1 <= d0 || f1 >= f0 {
                return Err(Error::invalid(
                    "discount table",
                    format!("entries must have increasing delays and decreasing factors: ({d0}, {f0}) -> ({d1}, {f1})"),
                ));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn factor(&self, d: f64) -> f64 {
        let pts = &self.points;
        let idx = pts.partition_point(|&(delay, _)| delay <= d);
        if idx == 0 {
            return pts[0].1;
        }
        if idx == pts.len() {
            return pts[pts.len() - 1].1;
        }
        let (d0, f0) = pts[idx - 1];
        let (d1, f1) = pts[idx];
        f0 + (f1 - f0) * (d - d0) / (d1 - d0)
    }
}

impl TryFrom<Vec<(f64, f64)>> for DiscountTable {
    type Error = Error;

    fn try_from(points: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<DiscountTable> for Vec<(f64, f64)> {
    fn from(table: DiscountTable) -> Self {
        table.points
    }
}

/// Multiplicative delay penalty `h(d)`.
#[derive(Clone, Debug, PartialEq)]
pub enum DiscountFunction {
    /// `h(d) = (1/urgency)^(d-1)`; higher urgency decays faster.
    Geometric { urgency: f64 },
    Tabulated(Arc<DiscountTable>),
}

impl DiscountFunction {
    pub fn geometric(urgency: f64) -> Result<Self> {
        validate_urgency(urgency)?;
        Ok(DiscountFunction::Geometric { urgency })
    }

    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        Ok(DiscountFunction::Tabulated(Arc::new(DiscountTable::new(
            points,
        )?)))
    }

    /// Discount factor at delay `d`. Callers guarantee `d >= 1`.
    pub fn factor(&self, d: f64) -> f64 {
        match self {
            DiscountFunction::Geometric { urgency } => urgency.powf(-(d - 1.0)),
            DiscountFunction::Tabulated(table) => table.factor(d),
        }
    }
}

fn validate_urgency(urgency: f64) -> Result<()> {
    if !urgency.is_finite() || urgency < 1.0 {
        return Err(Error::invalid(
            "urgency",
            format!("must be a finite value >= 1, got {urgency}"),
        ));
    }
    Ok(())
}

/// A transaction's delay-to-value map.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction {
    v0: f64,
    discount: DiscountFunction,
}

impl ValueFunction {
    pub fn new(v0: f64, discount: DiscountFunction) -> Result<Self> {
        if !v0.is_finite() || v0 < 0.0 {
            return Err(Error::invalid("v0", format!("must be >= 0, got {v0}")));
        }
        Ok(Self { v0, discount })
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn discount(&self) -> &DiscountFunction {
        &self.discount
    }

    /// Value for processing after `d` blocks.
    pub fn evaluate(&self, d: f64) -> Result<f64> {
        if !(d >= 1.0) {
            return Err(Error::DelayBelowOne(d));
        }
        Ok(self.value_at(d))
    }

    /// Unchecked variant of [`evaluate`](Self::evaluate) for delays already known to be >= 1.
    #[inline]
    pub fn value_at(&self, d: f64) -> f64 {
        self.v0 * self.discount.factor(d)
    }
}

/// Distribution of the immediate value `v0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum V0Dist {
    Uniform { lo: f64, hi: f64 },
    /// Normal truncated below at zero; `sd` is the standard deviation.
    Normal { mean: f64, sd: f64 },
    Point { value: f64 },
}

impl V0Dist {
    fn validate(&self) -> Result<()> {
        match *self {
            V0Dist::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
                    return Err(Error::invalid(
                        "v0 uniform",
                        format!("need 0 <= lo < hi, got lo={lo}, hi={hi}"),
                    ));
                }
            }
            V0Dist::Normal { mean, sd } => {
                if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
                    return Err(Error::invalid(
                        "v0 normal",
                        format!("need finite mean and sd > 0, got mean={mean}, sd={sd}"),
                    ));
                }
            }
            V0Dist::Point { value } => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(Error::invalid("v0 point", format!("need value >= 0, got {value}")));
                }
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            V0Dist::Uniform { lo, hi } => rng.gen_range(lo..hi),
            V0Dist::Normal { mean, sd } => {
                let normal = Normal::new(mean, sd).expect("validated normal parameters");
                loop {
                    let x = normal.sample(rng);
                    if x >= 0.0 {
                        return x;
                    }
                }
            }
            V0Dist::Point { value } => value,
        }
    }

    /// `P(v0 >= threshold)`.
    pub fn tail_probability(&self, threshold: f64) -> f64 {
        match *self {
            V0Dist::Uniform { lo, hi } => ((hi - threshold) / (hi - lo)).clamp(0.0, 1.0),
            V0Dist::Point { value } => {
                if threshold <= value {
                    1.0
                } else {
                    0.0
                }
            }
            V0Dist::Normal { mean, sd } => {
                if threshold <= 0.0 {
                    return 1.0;
                }
                let normal = NormalCdf::new(mean, sd).expect("validated normal parameters");
                let kept = normal.sf(0.0);
                (normal.sf(threshold) / kept).clamp(0.0, 1.0)
            }
        }
    }

    /// A value above which essentially no mass remains.
    pub fn upper_support(&self) -> f64 {
        match *self {
            V0Dist::Uniform { hi, .. } => hi,
            V0Dist::Point { value } => value,
            V0Dist::Normal { mean, sd } => {
                let normal = NormalCdf::new(mean, sd).expect("validated normal parameters");
                normal.inverse_cdf(UPPER_SUPPORT_QUANTILE).max(0.0)
            }
        }
    }
}

/// Distribution of the discount function within one demand component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscountDist {
    /// Geometric discount with urgency drawn uniformly from `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// Geometric discount with a fixed urgency.
    Point { urgency: f64 },
    /// A fixed tabulated discount shared by every draw.
    Table { points: Arc<DiscountTable> },
}

impl DiscountDist {
    fn validate(&self) -> Result<()> {
        match *self {
            DiscountDist::Uniform { lo, hi } => {
                validate_urgency(lo)?;
                if !(hi.is_finite() && lo < hi) {
                    return Err(Error::invalid(
                        "urgency uniform",
                        format!("need lo < hi, got lo={lo}, hi={hi}"),
                    ));
                }
                Ok(())
            }
            DiscountDist::Point { urgency } => validate_urgency(urgency),
            DiscountDist::Table { .. } => Ok(()),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DiscountFunction {
        match self {
            DiscountDist::Uniform { lo, hi } => DiscountFunction::Geometric {
                urgency: rng.gen_range(*lo..*hi),
            },
            DiscountDist::Point { urgency } => DiscountFunction::Geometric { urgency: *urgency },
            DiscountDist::Table { points } => DiscountFunction::Tabulated(Arc::clone(points)),
        }
    }

    /// The discount function when this distribution is degenerate.
    pub fn fixed(&self) -> Option<DiscountFunction> {
        match self {
            DiscountDist::Uniform { .. } => None,
            DiscountDist::Point { urgency } => Some(DiscountFunction::Geometric { urgency: *urgency }),
            DiscountDist::Table { points } => Some(DiscountFunction::Tabulated(Arc::clone(points))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandComponent {
    pub weight: f64,
    pub v0: V0Dist,
    pub discount: DiscountDist,
}

impl DemandComponent {
    pub fn new(weight: f64, v0: V0Dist, discount: DiscountDist) -> Result<Self> {
        let component = Self { weight, v0, discount };
        component.validate()?;
        Ok(component)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(Error::invalid(
                "component weight",
                format!("must lie in (0, 1], got {}", self.weight),
            ));
        }
        self.v0.validate()?;
        self.discount.validate()
    }
}

/// `P(v0 >= threshold)` for one component.
pub fn v0_tail_probability(component: &DemandComponent, threshold: f64) -> f64 {
    component.v0.tail_probability(threshold)
}

/// A finite mixture over value-function families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DemandComponent>", into = "Vec<DemandComponent>")]
pub struct DemandSpec {
    components: Vec<DemandComponent>,
}

impl DemandSpec {
    pub fn new(components: Vec<DemandComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty("demand components"));
        }
        for c in &components {
            c.validate()?;
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::invalid(
                "component weights",
                format!("must sum to 1, got {total}"),
            ));
        }
        Ok(Self { components })
    }

    /// Single-component spec.
    pub fn single(v0: V0Dist, discount: DiscountDist) -> Result<Self> {
        Self::new(vec![DemandComponent::new(1.0, v0, discount)?])
    }

    pub fn components(&self) -> &[DemandComponent] {
        &self.components
    }

    /// Draws the component index and the value function of one transaction.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Transaction {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut index = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                index = i;
                break;
            }
        }
        let c = &self.components[index];
        let v0 = c.v0.sample(rng);
        let discount = c.discount.sample(rng);
        Transaction {
            component: index,
            value: ValueFunction { v0, discount },
        }
    }

    /// Largest effective `v0` over all components.
    pub fn upper_support(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.v0.upper_support())
            .fold(0.0, f64::max)
    }

    /// Replaces every uniform urgency by `nodes` equally weighted midpoint
    /// urgencies, yielding a finite mixture of discount functions.
    pub fn discretized(&self, nodes: usize) -> DemandSpec {
        let nodes = nodes.max(1);
        let mut components = Vec::new();
        for c in &self.components {
            match c.discount {
                DiscountDist::Uniform { lo, hi } => {
                    let width = (hi - lo) / nodes as f64;
                    for i in 0..nodes {
                        components.push(DemandComponent {
                            weight: c.weight / nodes as f64,
                            v0: c.v0.clone(),
                            discount: DiscountDist::Point {
                                urgency: lo + width * (i as f64 + 0.5),
                            },
                        });
                    }
                }
                _ => components.push(c.clone()),
            }
        }
        DemandSpec { components }
    }
}

impl TryFrom<Vec<DemandComponent>> for DemandSpec {
    type Error = Error;

    fn try_from(components: Vec<DemandComponent>) -> Result<Self> {
        Self::new(components)
    }
}

impl From<DemandSpec> for Vec<DemandComponent> {
    fn from(spec: DemandSpec) -> Self {
        spec.components
    }
}

/// Draws one value function from `spec`.
pub fn sample_value_function<R: Rng + ?Sized>(spec: &DemandSpec, rng: &mut R) -> ValueFunction {
    spec.sample(rng).value
}

/// A sampled transaction and the mixture component it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Transaction {
    pub component: usize,
    pub value: ValueFunction,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalModel {
    #[default]
    Deterministic,
    Poisson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadRegion {
    pub blocks: u64,
    pub rate: f64,
    pub spec: DemandSpec,
}

/// Piecewise-stationary arrival process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadSchedule {
    regions: Vec<LoadRegion>,
    arrivals: ArrivalModel,
}

impl LoadSchedule {
    pub fn new(regions: Vec<LoadRegion>, arrivals: ArrivalModel) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Empty("load regions"));
        }
        for (i, r) in regions.iter().enumerate() {
            if r.blocks == 0 {
                return Err(Error::invalid(format!("region {i} blocks"), "must be positive"));
            }
            if !(r.rate.is_finite() && r.rate > 0.0) {
                return Err(Error::invalid(
                    format!("region {i} rate"),
                    format!("must be positive, got {}", r.rate),
                ));
            }
        }
        Ok(Self { regions, arrivals })
    }

    pub fn regions(&self) -> &[LoadRegion] {
        &self.regions
    }

    pub fn arrival_model(&self) -> ArrivalModel {
        self.arrivals
    }

    pub fn total_blocks(&self) -> u64 {
        self.regions.iter().map(|r| r.blocks).sum()
    }

    /// Half-open `[start, end)` block ranges of every region.
    pub fn boundaries(&self) -> Vec<(u64, u64)> {
        let mut start = 0;
        self.regions
            .iter()
            .map(|r| {
                let range = (start, start + r.blocks);
                start += r.blocks;
                range
            })
            .collect()
    }

    /// Index of the region containing `block`.
    pub fn region_index(&self, block: u64) -> Result<usize> {
        let mut end = 0;
        for (i, r) in self.regions.iter().enumerate() {
            end += r.blocks;
            if block < end {
                return Ok(i);
            }
        }
        Err(Error::BlockOutOfSchedule {
            block,
            total: end,
        })
    }

    /// Samples the transactions arriving in `block`.
    pub fn arrivals<R: Rng + ?Sized>(&self, block: u64, rng: &mut R) -> Result<Vec<Transaction>> {
        let region = &self.regions[self.region_index(block)?];
        let count = match self.arrivals {
            ArrivalModel::Deterministic => region.rate.round() as usize,
            ArrivalModel::Poisson => {
                let poisson = Poisson::new(region.rate).expect("validated positive rate");
                let draw: f64 = poisson.sample(rng);
                draw as usize
            }
        };
        Ok((0..count).map(|_| region.spec.sample(rng)).collect())
    }
}
