//! Trace CSV serialization.
//!
//! Columns: `block, region, m`, then `size_j, delay_j, price_j, included_j`
//! for every tier slot up to the mechanism's maximum (empty when the tier is
//! inactive), then `revenue, welfare, rejected` and `comp_1..comp_C`.

use std::io::Write;

use super::Trace;

const SIGNIFICANT_DIGITS: usize = 9;

/// Formats `x` with 9 significant digits, choosing fixed or scientific
/// notation like C's `%.9g`.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIGNIFICANT_DIGITS as i32).contains(&exp) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn trace_header(max_tiers: usize, components: usize) -> Vec<String> {
    let mut header: Vec<String> = ["block", "region", "m"].iter().map(|s| s.to_string()).collect();
    for j in 1..=max_tiers {
        for name in ["size", "delay", "price", "included"] {
            header.push(format!("{name}_{j}"));
        }
    }
    header.extend(["revenue", "welfare", "rejected"].iter().map(|s| s.to_string()));
    header.extend((1..=components).map(|c| format!("comp_{c}")));
    header
}

pub fn write_trace<W: Write>(trace: &Trace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(trace.max_tiers, trace.components))?;
    let mut row: Vec<String> = Vec::new();
    for r in &trace.records {
        row.clear();
        row.push(r.block.to_string());
        row.push(r.region.to_string());
        row.push(r.tiers.len().to_string());
        for j in 0..trace.max_tiers {
            match r.tiers.get(j) {
                Some(t) => {
                    row.push(format_float(t.size));
                    row.push(t.delay.to_string());
                    row.push(format_float(t.price));
                    row.push(t.included.to_string());
                }
                None => row.extend(std::iter::repeat(String::new()).take(4)),
            }
        }
        row.push(format_float(r.revenue));
        row.push(format_float(r.welfare));
        row.push(r.rejected.to_string());
        for c in 0..trace.components {
            row.push(r.component_counts.get(c).copied().unwrap_or(0).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
