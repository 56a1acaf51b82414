use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tierfee_core::config::{set_numeric, Config};
use tierfee_core::policy::PolicyMonitor;
use tierfee_core::sim::{self, metrics, write_trace, Trace};
use tierfee_core::solver::{
    construct_policy_delays, is_delay_locally_minimal, solve_stable_prices, verify_compatible_stable, SolveOutcome,
};
use tierfee_core::{Blockchain, MechanismParams};

use crate::error::CliError;
use crate::Common;

type Result<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn apply_overrides(config: &mut Config, common: &Common, keep_seed: bool) -> Result<()> {
    if let (Some(seed), false) = (common.seed, keep_seed) {
        config.seed = seed;
    }
    if let Some(blocks) = common.blocks {
        config.truncate(blocks)?;
    }
    Ok(())
}

fn load(common: &Common) -> Result<Config> {
    let mut config = Config::from_toml_str(&read_text(&common.config)?)?;
    apply_overrides(&mut config, common, false)?;
    Ok(config)
}

fn mechanism_name(params: &MechanismParams) -> &'static str {
    match params {
        MechanismParams::Eip1559(_) => "eip1559",
        MechanismParams::Tiered(_) => "tiered",
    }
}

fn summary_text(config: &Config, trace: &Trace) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "fingerprint = {}", trace.fingerprint);
    let _ = writeln!(s, "seed = {}", trace.seed);
    let _ = writeln!(s, "mechanism = {}", mechanism_name(&config.mechanism));
    let _ = writeln!(s, "throughput = {}", sim::format_float(config.throughput));
    let total = trace.records.len() as u64;
    let _ = writeln!(s, "\n[all]");
    s.push_str(&metrics(trace, 0..total)?.to_text());
    for (i, &(start, end)) in trace.boundaries.iter().enumerate() {
        let _ = writeln!(s, "\n[region_{}]", i + 1);
        s.push_str(&metrics(trace, start..end)?.to_text());
    }
    Ok(s)
}

/// Runs `config` and writes its trace and summary into `dir`.
fn simulate_into(config: &Config, dir: &Path) -> Result<(Trace, String)> {
    let trace = sim::run(&config.simulation()?, &config.fingerprint()?, None)?;
    create_dir(dir)?;
    let mut csv = Vec::new();
    write_trace(&trace, &mut csv).map_err(|e| CliError::io(dir.join(&config.output.trace), e.into()))?;
    write_file(&dir.join(&config.output.trace), &csv)?;
    let summary = summary_text(config, &trace)?;
    write_file(&dir.join(&config.output.summary), summary.as_bytes())?;
    Ok((trace, summary))
}

pub fn simulate(common: &Common) -> Result<()> {
    let config = load(common)?;
    let (_, summary) = simulate_into(&config, &common.out)?;
    if !common.quiet {
        print!("{summary}");
    }
    Ok(())
}

fn format_vec(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| sim::format_float(*x)).collect();
    format!("[{}]", parts.join(", "))
}

pub fn solve(common: &Common) -> Result<()> {
    let config = load(common)?;
    let problem = config
        .solve
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no [solve] section".into()))?;
    let demand = problem.steady_demand()?;
    let options = problem.options();
    let mut out = String::new();

    let (delays, prices) = if let Some(delays) = &problem.delays {
        let report = solve_stable_prices(&problem.sizes, delays, &demand, &options)?;
        let _ = writeln!(out, "iterations = {}", report.iterations);
        let _ = writeln!(out, "residual = {}", sim::format_float(report.residual));
        let _ = writeln!(out, "expected_demand = {}", format_vec(&report.demand.tiers));
        match &report.outcome {
            SolveOutcome::Solved { prices } => (delays.clone(), prices.clone()),
            SolveOutcome::NoStablePrices { prices, diagnostic } => {
                let _ = writeln!(out, "outcome = no_stable_prices");
                let _ = writeln!(out, "last_prices = {}", format_vec(prices));
                if !common.quiet {
                    print!("{out}");
                }
                return Err(CliError::NoStablePrices(diagnostic.clone()));
            }
        }
    } else {
        let c = problem.construct.as_ref().expect("validated: delays or construct");
        let built = construct_policy_delays(&problem.sizes, &c.lambda, &c.mu, &demand, c.delta, &options)?;
        let chain = Blockchain::from_parts(&problem.sizes, &built.delays, &built.prices)?;
        let minimal = is_delay_locally_minimal(&chain, &demand, &c.lambda, &c.mu, &options)?;
        let _ = writeln!(out, "initial_delays = {:?}", built.initial_delays);
        let _ = writeln!(out, "retries = {}", built.retries);
        let _ = writeln!(out, "locally_minimal = {minimal:?}");
        (built.delays, built.prices)
    };

    let chain = Blockchain::from_parts(&problem.sizes, &delays, &prices)?;
    let check = verify_compatible_stable(&chain, &demand, problem.tol.max(1e-9) * 10.0)?;
    let _ = writeln!(out, "outcome = solved");
    let _ = writeln!(out, "delays = {delays:?}");
    let _ = writeln!(out, "prices = {}", format_vec(&prices));
    let _ = writeln!(out, "compatible = {}", check.compatible);
    let _ = writeln!(out, "stable = {}", check.stable);
    if !common.quiet {
        print!("{out}");
    }
    Ok(())
}

pub fn check_policy(common: &Common) -> Result<()> {
    let config = load(common)?;
    let policy = config
        .policy
        .clone()
        .ok_or_else(|| CliError::Config("config has no `policy` clauses".into()))?;
    let mut monitor = PolicyMonitor::new(policy, config.throughput)?;
    let warmup = config.warmup;
    let mut observe = |block: u64, outcomes: &[_]| {
        if block >= warmup {
            monitor.observe_block(outcomes);
        }
    };
    sim::run(&config.simulation()?, &config.fingerprint()?, Some(&mut observe))?;
    let reports = monitor.report()?;

    let mut out = String::new();
    let _ = writeln!(out, "mechanism = {}", mechanism_name(&config.mechanism));
    let _ = writeln!(out, "sampled_blocks = {}", monitor.blocks());
    for (i, r) in reports.iter().enumerate() {
        let _ = writeln!(
            out,
            "clause {} (a={}, d={}, p={}): {} estimate={} se={} target={}",
            i + 1,
            sim::format_float(r.clause.a),
            sim::format_float(r.clause.d),
            sim::format_float(r.clause.p),
            if r.satisfied { "PASS" } else { "FAIL" },
            sim::format_float(r.estimate),
            sim::format_float(r.std_error),
            sim::format_float(r.target),
        );
    }
    create_dir(&common.out)?;
    write_file(&common.out.join("policy.txt"), out.as_bytes())?;
    if !common.quiet {
        print!("{out}");
    }
    Ok(())
}

fn value_label(v: f64) -> String {
    sim::format_float(v).replace('-', "m")
}

pub fn sweep(common: &Common, param: &str, values: &[f64], jobs: Option<usize>) -> Result<()> {
    let text = read_text(&common.config)?;
    let doc: toml::Value = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    // Build every configuration up front so a bad value fails before any run.
    let configs = values
        .iter()
        .map(|&v| {
            let mut d = doc.clone();
            set_numeric(&mut d, param, v)?;
            let mut config = Config::from_toml_value(d)?;
            apply_overrides(&mut config, common, param == "seed")?;
            Ok(config)
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(&common.out)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<(PathBuf, String, f64)>> = pool.install(|| {
        configs
            .par_iter()
            .zip(values.par_iter())
            .enumerate()
            .map(|(i, (config, &v))| {
                let dir = common.out.join(format!("run_{i:03}_{}", value_label(v)));
                let (trace, _) = simulate_into(config, &dir)?;
                let revenue = metrics(&trace, 0..trace.records.len() as u64)?.mean_revenue;
                Ok((dir, trace.fingerprint, revenue))
            })
            .collect()
    });

    let mut index = String::from("index\tparam\tvalue\tdir\tfingerprint\tmean_revenue\n");
    for (i, (r, &v)) in results.into_iter().zip(values).enumerate() {
        let (dir, fingerprint, revenue) = r?;
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(
            index,
            "{i}\t{param}\t{}\t{name}\t{fingerprint}\t{}",
            sim::format_float(v),
            sim::format_float(revenue)
        );
    }
    write_file(&common.out.join("index.tsv"), index.as_bytes())?;
    if !common.quiet {
        print!("{index}");
    }
    Ok(())
}
