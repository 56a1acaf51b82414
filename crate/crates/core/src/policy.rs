//! Diversity policies and a sample-based check of whether a mechanism
//! implements them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chain::TIE_TOLERANCE;
use crate::demand::{DemandComponent, DemandSpec, DiscountDist, DiscountTable, V0Dist, ValueFunction};
use crate::error::{Error, Result};

/// Demands `a·B` transactions per block whose value at delay `d` exceeds `p`
/// and whose utility is at least as good as the entry `(d, p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyClause {
    pub a: f64,
    pub d: f64,
    pub p: f64,
}

impl PolicyClause {
    pub fn new(a: f64, d: f64, p: f64) -> Result<Self> {
        let c = Self { a, d, p };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(Error::invalid("clause fraction a", format!("must lie in (0, 1], got {}", self.a)));
        }
        if !(self.d >= 1.0 && self.d.is_finite()) {
            return Err(Error::DelayBelowOne(self.d));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::invalid("clause price p", format!("must be positive, got {}", self.p)));
        }
        Ok(())
    }

    /// Whether a transaction with value function `vf`, included with
    /// utility `utility`, counts towards this clause.
    pub fn counts(&self, vf: &ValueFunction, utility: f64) -> bool {
        let surplus = vf.value_at(self.d) - self.p;
        surplus >= -TIE_TOLERANCE && utility >= surplus - TIE_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PolicyClause>", into = "Vec<PolicyClause>")]
pub struct DiversityPolicy {
    clauses: Vec<PolicyClause>,
}

impl DiversityPolicy {
    pub fn new(clauses: Vec<PolicyClause>) -> Result<Self> {
        if clauses.is_empty() {
            return Err(Error::Empty("policy"));
        }
        for c in &clauses {
            c.validate()?;
        }
        Ok(Self { clauses })
    }

    pub fn clauses(&self) -> &[PolicyClause] {
        &self.clauses
    }
}

impl TryFrom<Vec<PolicyClause>> for DiversityPolicy {
    type Error = Error;

    fn try_from(clauses: Vec<PolicyClause>) -> Result<Self> {
        Self::new(clauses)
    }
}

impl From<DiversityPolicy> for Vec<PolicyClause> {
    fn from(p: DiversityPolicy) -> Self {
        p.clauses
    }
}

/// What happened to one transaction in a block.
#[derive(Clone, Debug, PartialEq)]
pub struct TxOutcome {
    pub value: ValueFunction,
    /// Tier the transaction was included in; 0 when rejected or dropped.
    pub tier: usize,
    /// Achieved utility (0 when not included).
    pub utility: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClauseReport {
    pub clause: PolicyClause,
    /// Mean number of qualifying transactions per block.
    pub estimate: f64,
    pub std_error: f64,
    /// `a·B`.
    pub target: f64,
    pub satisfied: bool,
}

/// Streaming per-clause counter over sampled blocks.
#[derive(Clone, Debug)]
pub struct PolicyMonitor {
    policy: DiversityPolicy,
    throughput: f64,
    blocks: u64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl PolicyMonitor {
    pub fn new(policy: DiversityPolicy, throughput: f64) -> Result<Self> {
        if !(throughput > 0.0 && throughput.is_finite()) {
            return Err(Error::invalid("throughput", format!("must be positive, got {throughput}")));
        }
        let n = policy.clauses.len();
        Ok(Self {
            policy,
            throughput,
            blocks: 0,
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
        })
    }

    pub fn observe_block(&mut self, outcomes: &[TxOutcome]) {
        for (i, clause) in self.policy.clauses.iter().enumerate() {
            let count = outcomes
                .iter()
                .filter(|o| o.tier > 0 && clause.counts(&o.value, o.utility))
                .count() as f64;
            self.sum[i] += count;
            self.sum_sq[i] += count * count;
        }
        self.blocks += 1;
    }

    pub fn blocks(&self) -> u64 {
        self.blocks
    }

    pub fn report(&self) -> Result<Vec<ClauseReport>> {
        if self.blocks == 0 {
            return Err(Error::Empty("block sample"));
        }
        let n = self.blocks as f64;
        Ok(self
            .policy
            .clauses
            .iter()
            .enumerate()
            .map(|(i, &clause)| {
                let estimate = self.sum[i] / n;
                let var = if self.blocks > 1 {
                    ((self.sum_sq[i] - n * estimate * estimate) / (n - 1.0)).max(0.0)
                } else {
                    0.0
                };
                let std_error = (var / n).sqrt();
                let target = clause.a * self.throughput;
                ClauseReport {
                    clause,
                    estimate,
                    std_error,
                    target,
                    satisfied: estimate >= target - 2.0 * std_error,
                }
            })
            .collect())
    }
}

/// Checks each clause against the per-block outcomes of a simulation.
pub fn check_implementation(blocks: &[Vec<TxOutcome>], policy: &DiversityPolicy, throughput: f64) -> Result<Vec<ClauseReport>> {
    let mut monitor = PolicyMonitor::new(policy.clone(), throughput)?;
    for block in blocks {
        monitor.observe_block(block);
    }
    monitor.report()
}

/// Two equally likely transaction types that no single posted price can
/// serve together: type 1 is worth `2p` now and `0.2p` at delay `d`, type 2
/// is worth `1.5p` now and `p` at delay `d`. Both decay linearly between the
/// anchors and reach 0 at `2d`.
pub fn bad_load_spec(a: f64, d: f64, p: f64) -> Result<DemandSpec> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::invalid("bad load a", format!("must lie in (0, 1], got {a}")));
    }
    if !(d > 1.0 && d.is_finite()) {
        return Err(Error::invalid("bad load d", format!("must exceed 1, got {d}")));
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::invalid("bad load p", format!("must be positive, got {p}")));
    }
    let component = |v0: f64, at_d: f64| -> Result<DemandComponent> {
        let table = DiscountTable::new(vec![(1.0, 1.0), (d, at_d), (2.0 * d, 0.0)])?;
        DemandComponent::new(0.5, V0Dist::Point { value: v0 }, DiscountDist::Table { points: Arc::new(table) })
    };
    DemandSpec::new(vec![component(2.0 * p, 0.1)?, component(1.5 * p, 2.0 / 3.0)?])
}
