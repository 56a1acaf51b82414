//! Upper envelope of the per-tier utility lines `v0 * h(d_j) - p_j` for a
//! fixed discount function `h`, together with the rejection line `0`.
//!
//! Because slopes `h(d_j)` strictly decrease with the tier index when `h` is
//! strictly decreasing, each tier owns at most one contiguous `v0` interval.
//! Coinciding lines (equal slope and price, e.g. a flat `h`) share an interval.

use crate::chain::TIE_TOLERANCE;
use crate::demand::DiscountFunction;

/// Half-open `[lo, hi)` interval of `v0`; `hi` may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const EMPTY: Interval = Interval {
        lo: f64::INFINITY,
        hi: f64::INFINITY,
    };

    pub fn is_empty(&self) -> bool {
        !(self.hi > self.lo)
    }
}

/// The `v0` intervals on which each tier index (0 = rejection) maximizes utility.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopePartition {
    intervals: Vec<Interval>,
}

impl EnvelopePartition {
    /// Interval of tier `index` (0..=m).
    pub fn interval(&self, index: usize) -> Interval {
        self.intervals[index]
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }
}

pub fn envelope_intervals(h: &DiscountFunction, delays: &[u32], prices: &[f64]) -> EnvelopePartition {
    let slopes: Vec<f64> = delays.iter().map(|&d| h.factor(d as f64)).collect();
    partition_from_slopes(&slopes, prices)
}

#[derive(Clone, Debug)]
struct Line {
    slope: f64,
    intercept: f64,
    members: Vec<usize>,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE
}

/// Partition from precomputed slopes `h(d_j)` for tiers `1..=m`.
pub(crate) fn partition_from_slopes(slopes: &[f64], prices: &[f64]) -> EnvelopePartition {
    let m = slopes.len();
    let mut lines: Vec<Line> = vec![Line {
        slope: 0.0,
        intercept: 0.0,
        members: vec![0],
    }];
    for j in 0..m {
        let (slope, intercept) = (slopes[j], -prices[j]);
        match lines
            .iter_mut()
            .find(|l| same(l.slope, slope) && same(l.intercept, intercept))
        {
            Some(line) => {
                // A paid tier tied everywhere with rejection takes its place.
                line.members.retain(|&t| t != 0);
                line.members.push(j + 1);
            }
            None => lines.push(Line {
                slope,
                intercept,
                members: vec![j + 1],
            }),
        }
    }

    let mut intervals = vec![Interval::EMPTY; m + 1];
    let better_at = |x: f64, a: &Line, b: &Line| {
        let (va, vb) = (a.slope * x + a.intercept, b.slope * x + b.intercept);
        va > vb + TIE_TOLERANCE || (va >= vb - TIE_TOLERANCE && a.slope > b.slope)
    };

    let mut current = 0;
    for i in 1..lines.len() {
        if better_at(0.0, &lines[i], &lines[current]) {
            current = i;
        }
    }
    let mut x = 0.0;
    loop {
        let cur = &lines[current];
        let mut next: Option<(usize, f64)> = None;
        for (i, line) in lines.iter().enumerate() {
            if line.slope <= cur.slope || same(line.slope, cur.slope) {
                continue;
            }
            let cross = ((cur.intercept - line.intercept) / (line.slope - cur.slope)).max(x);
            next = match next {
                None => Some((i, cross)),
                Some((bi, bx)) => {
                    if cross < bx - TIE_TOLERANCE
                        || (cross <= bx + TIE_TOLERANCE && line.slope > lines[bi].slope)
                    {
                        Some((i, cross))
                    } else {
                        Some((bi, bx))
                    }
                }
            };
        }
        let hi = next.map_or(f64::INFINITY, |(_, cross)| cross);
        for &t in &cur.members {
            intervals[t] = Interval { lo: x, hi };
        }
        match next {
            Some((i, cross)) => {
                current = i;
                x = cross;
            }
            None => break,
        }
    }
    // Zero-width pieces are reported as empty.
    for interval in &mut intervals {
        if interval.is_empty() {
            *interval = Interval::EMPTY;
        }
    }
    EnvelopePartition { intervals }
}
