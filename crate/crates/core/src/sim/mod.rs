//! Block-by-block simulation of a fee mechanism against a load schedule.

mod metrics;
mod trace;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{LoadSchedule, Transaction};
use crate::error::Result;
use crate::mechanisms::{MechanismParams, MechanismState};
use crate::policy::TxOutcome;

pub use metrics::{metrics, Summary, TierSummary};
pub use trace::{format_float, trace_header, write_trace};

/// Posted menu entry and outcome of one tier in one block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TierRecord {
    pub size: f64,
    pub delay: u32,
    pub price: f64,
    pub included: u32,
}

impl TierRecord {
    /// Included transactions per unit of tier size.
    pub fn fullness(&self) -> f64 {
        f64::from(self.included) / self.size
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockRecord {
    pub block: u64,
    pub region: usize,
    /// Menu posted for this block, with the included counts.
    pub tiers: Vec<TierRecord>,
    pub revenue: f64,
    /// Sum over included transactions of value at the tier delay minus price.
    pub welfare: f64,
    pub rejected: u32,
    /// Included transactions per demand component.
    pub component_counts: Vec<u32>,
}

impl BlockRecord {
    pub fn included(&self) -> u32 {
        self.tiers.iter().map(|t| t.included).sum()
    }

    pub fn arrivals(&self) -> u32 {
        self.included() + self.rejected
    }
}

/// Everything a simulation run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub mechanism: MechanismParams,
    pub throughput: f64,
    pub initial_price: f64,
    pub schedule: LoadSchedule,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    /// Hex digest identifying the configuration that produced the trace.
    pub fingerprint: String,
    pub seed: u64,
    /// Number of per-tier column groups in the CSV.
    pub max_tiers: usize,
    /// Number of per-component count columns in the CSV.
    pub components: usize,
    pub records: Vec<BlockRecord>,
    /// Half-open block ranges of each load region.
    pub boundaries: Vec<(u64, u64)>,
}

/// Processes one block: allocates `arrivals` against the posted menu, then
/// advances the mechanism with the realized fullness.
///
/// `observer` receives the per-transaction outcomes of the block.
pub fn step<R: Rng + ?Sized>(
    state: &mut MechanismState,
    block: u64,
    region: usize,
    arrivals: &[Transaction],
    components: usize,
    rng: &mut R,
    observer: Option<&mut dyn FnMut(&[TxOutcome])>,
) -> Result<BlockRecord> {
    let chain = state.chain().clone();
    let m = chain.len();
    let mut willing: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut choice = vec![(0usize, 0.0f64); arrivals.len()];
    for (i, tx) in arrivals.iter().enumerate() {
        let c = chain.choose_tier(&tx.value, rng);
        choice[i] = (c.tier_index, c.utility);
        if c.tier_index > 0 {
            willing[c.tier_index - 1].push(i);
        }
    }

    let fill = state.params().max_fill_factor();
    let mut included = vec![false; arrivals.len()];
    let mut tiers = Vec::with_capacity(m);
    let mut component_counts = vec![0u32; components];
    let (mut revenue, mut welfare) = (0.0, 0.0);
    for (j, tier) in chain.tiers().iter().enumerate() {
        let capacity = (fill * tier.size).floor() as usize;
        let pool = &willing[j];
        let chosen: Vec<usize> = if pool.len() > capacity {
            // Uniform subset, kept in arrival order.
            let mut picks: Vec<usize> = index::sample(rng, pool.len(), capacity).into_iter().map(|k| pool[k]).collect();
            picks.sort_unstable();
            picks
        } else {
            pool.clone()
        };
        for &i in &chosen {
            included[i] = true;
            revenue += tier.price;
            welfare += choice[i].1;
            component_counts[arrivals[i].component] += 1;
        }
        tiers.push(TierRecord {
            size: tier.size,
            delay: tier.delay,
            price: tier.price,
            included: chosen.len() as u32,
        });
    }
    let rejected = included.iter().filter(|x| !**x).count() as u32;

    if let Some(observe) = observer {
        let outcomes: Vec<TxOutcome> = arrivals
            .iter()
            .zip(&choice)
            .zip(&included)
            .map(|((tx, &(tier, utility)), &inc)| TxOutcome {
                value: tx.value.clone(),
                tier: if inc { tier } else { 0 },
                utility: if inc { utility } else { 0.0 },
            })
            .collect();
        observe(&outcomes);
    }

    let fullness: Vec<f64> = tiers.iter().map(|t| f64::from(t.included)).collect();
    state.advance(&fullness, rng)?;
    Ok(BlockRecord {
        block,
        region,
        tiers,
        revenue,
        welfare,
        rejected,
        component_counts,
    })
}

/// Runs the whole schedule from a single tier of size `throughput`.
pub fn run(sim: &Simulation, fingerprint: &str, mut observer: Option<&mut dyn FnMut(u64, &[TxOutcome])>) -> Result<Trace> {
    let schedule = &sim.schedule;
    let mut state = MechanismState::initial(sim.mechanism.clone(), sim.throughput, sim.initial_price)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let components = schedule
        .regions()
        .iter()
        .map(|r| r.spec.components().len())
        .max()
        .unwrap_or(0);
    let total = schedule.total_blocks();
    let mut records = Vec::with_capacity(total as usize);
    for block in 0..total {
        let region = schedule.region_index(block)?;
        let arrivals = schedule.arrivals(block, &mut rng)?;
        let record = match observer.as_mut() {
            Some(obs) => {
                let mut per_block = |outcomes: &[TxOutcome]| obs(block, outcomes);
                step(&mut state, block, region, &arrivals, components, &mut rng, Some(&mut per_block))?
            }
            None => step(&mut state, block, region, &arrivals, components, &mut rng, None)?,
        };
        records.push(record);
    }
    Ok(Trace {
        fingerprint: fingerprint.to_string(),
        seed: sim.seed,
        max_tiers: sim.mechanism.max_tiers(),
        components,
        records,
        boundaries: schedule.boundaries(),
    })
}
