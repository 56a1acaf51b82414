//! Windowed summary statistics over a trace.

use std::fmt::Write as _;
use std::ops::Range;

use serde::Serialize;

use super::{format_float, Trace};
use crate::error::{Error, Result};

/// Statistics of one tier slot over the blocks where it was active.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TierSummary {
    pub active_share: f64,
    pub mean_price: Option<f64>,
    pub median_price: Option<f64>,
    pub mean_delay: Option<f64>,
    pub mean_included: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub first_block: u64,
    pub blocks: u64,
    pub total_revenue: f64,
    pub mean_revenue: f64,
    pub median_revenue: f64,
    pub mean_welfare: f64,
    pub mean_included: f64,
    pub mean_rejected: f64,
    pub mean_active_tiers: f64,
    /// `tier_count_shares[m - 1]`: fraction of blocks with `m` active tiers.
    pub tier_count_shares: Vec<f64>,
    pub tiers: Vec<TierSummary>,
    /// Share of included transactions from each demand component.
    pub composition: Vec<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Summarizes blocks `window.start..window.end` of `trace`.
pub fn metrics(trace: &Trace, window: Range<u64>) -> Result<Summary> {
    let records: Vec<_> = trace.records.iter().filter(|r| window.contains(&r.block)).collect();
    if records.is_empty() {
        return Err(Error::Empty("metrics window"));
    }
    let n = records.len() as f64;
    let revenue: Vec<f64> = records.iter().map(|r| r.revenue).collect();
    let mut tier_counts = vec![0.0; trace.max_tiers.max(1)];
    for r in &records {
        if let Some(slot) = r.tiers.len().checked_sub(1).and_then(|i| tier_counts.get_mut(i)) {
            *slot += 1.0;
        }
    }
    let tiers = (0..trace.max_tiers)
        .map(|j| {
            let active: Vec<_> = records.iter().filter_map(|r| r.tiers.get(j)).collect();
            let prices: Vec<f64> = active.iter().map(|t| t.price).collect();
            let delays: Vec<f64> = active.iter().map(|t| f64::from(t.delay)).collect();
            let included: Vec<f64> = active.iter().map(|t| f64::from(t.included)).collect();
            TierSummary {
                active_share: active.len() as f64 / n,
                mean_price: mean(&prices),
                median_price: median(&prices),
                mean_delay: mean(&delays),
                mean_included: mean(&included),
            }
        })
        .collect();
    let mut composition = vec![0.0; trace.components];
    for r in &records {
        for (c, &k) in r.component_counts.iter().enumerate() {
            composition[c] += f64::from(k);
        }
    }
    let included_total: f64 = composition.iter().sum();
    if included_total > 0.0 {
        composition.iter_mut().for_each(|c| *c /= included_total);
    }
    Ok(Summary {
        first_block: records[0].block,
        blocks: records.len() as u64,
        total_revenue: revenue.iter().sum(),
        mean_revenue: mean(&revenue).unwrap_or(0.0),
        median_revenue: median(&revenue).unwrap_or(0.0),
        mean_welfare: records.iter().map(|r| r.welfare).sum::<f64>() / n,
        mean_included: records.iter().map(|r| f64::from(r.included())).sum::<f64>() / n,
        mean_rejected: records.iter().map(|r| f64::from(r.rejected)).sum::<f64>() / n,
        mean_active_tiers: records.iter().map(|r| r.tiers.len() as f64).sum::<f64>() / n,
        tier_count_shares: tier_counts.into_iter().map(|c| c / n).collect(),
        tiers,
        composition,
    })
}

impl Summary {
    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), format_float);
        let mut s = String::new();
        let _ = writeln!(s, "first_block = {}", self.first_block);
        let _ = writeln!(s, "blocks = {}", self.blocks);
        for (k, v) in [
            ("total_revenue", self.total_revenue),
            ("mean_revenue", self.mean_revenue),
            ("median_revenue", self.median_revenue),
            ("mean_welfare", self.mean_welfare),
            ("mean_included", self.mean_included),
            ("mean_rejected", self.mean_rejected),
            ("mean_active_tiers", self.mean_active_tiers),
        ] {
            let _ = writeln!(s, "{k} = {}", format_float(v));
        }
        for (m, share) in self.tier_count_shares.iter().enumerate() {
            let _ = writeln!(s, "share_with_{}_tiers = {}", m + 1, format_float(*share));
        }
        for (j, t) in self.tiers.iter().enumerate() {
            let j = j + 1;
            let _ = writeln!(s, "tier_{j}.active_share = {}", format_float(t.active_share));
            let _ = writeln!(s, "tier_{j}.mean_price = {}", opt(t.mean_price));
            let _ = writeln!(s, "tier_{j}.median_price = {}", opt(t.median_price));
            let _ = writeln!(s, "tier_{j}.mean_delay = {}", opt(t.mean_delay));
            let _ = writeln!(s, "tier_{j}.mean_included = {}", opt(t.mean_included));
        }
        for (c, share) in self.composition.iter().enumerate() {
            let _ = writeln!(s, "comp_{}.share = {}", c + 1, format_float(*share));
        }
        s
    }
}
