//! TOML run configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demand::{ArrivalModel, DemandSpec, LoadRegion, LoadSchedule};
use crate::error::{Error, Result};
use crate::mechanisms::MechanismParams;
use crate::policy::{bad_load_spec, DiversityPolicy};
use crate::sim::Simulation;
use crate::solver::{SolverOptions, SteadyDemand};

fn default_initial_price() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Total block size `B`.
    pub throughput: f64,
    #[serde(default = "default_initial_price")]
    pub initial_price: f64,
    /// Leading blocks excluded from policy checks.
    #[serde(default)]
    pub warmup: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<DiversityPolicy>,
    pub mechanism: MechanismParams,
    pub load: LoadConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    #[serde(default)]
    pub arrivals: ArrivalModel,
    pub regions: Vec<RegionConfig>,
}

/// One stationary region; exactly one of `demand` and `bad_load` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub blocks: u64,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<DemandSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bad_load: Option<BadLoadConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BadLoadConfig {
    pub a: f64,
    pub d: f64,
    pub p: f64,
}

impl RegionConfig {
    pub fn spec(&self) -> Result<DemandSpec> {
        match (&self.demand, &self.bad_load) {
            (Some(spec), None) => Ok(spec.clone()),
            (None, Some(b)) => bad_load_spec(b.a, b.d, b.p),
            _ => Err(Error::Config("each load region needs exactly one of `demand` or `bad_load`".into())),
        }
    }
}

fn default_trace() -> String {
    "trace.csv".into()
}

fn default_summary() -> String {
    "summary.txt".into()
}

/// File names written inside the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_trace")]
    pub trace: String,
    #[serde(default = "default_summary")]
    pub summary: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            trace: default_trace(),
            summary: default_summary(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructConfig {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub delta: f64,
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}

fn default_max_iters() -> usize {
    SolverOptions::default().max_iters
}

fn default_urgency_nodes() -> usize {
    SolverOptions::default().urgency_nodes
}

/// Steady-state problem for the `solve` command; exactly one of `delays`
/// and `construct` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub sizes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub construct: Option<ConstructConfig>,
    pub rate: f64,
    pub demand: DemandSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_urgency_nodes")]
    pub urgency_nodes: usize,
}

impl SolveConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            urgency_nodes: self.urgency_nodes,
            ..SolverOptions::default()
        }
    }

    pub fn steady_demand(&self) -> Result<SteadyDemand> {
        SteadyDemand::new(self.rate, self.demand.clone())
    }

    fn validate(&self) -> Result<()> {
        if self.delays.is_some() == self.construct.is_some() {
            return Err(Error::Config("[solve] needs exactly one of `delays` or `construct`".into()));
        }
        if let Some(d) = &self.delays {
            if d.len() != self.sizes.len() {
                return Err(Error::Config(format!(
                    "[solve] has {} sizes but {} delays",
                    self.sizes.len(),
                    d.len()
                )));
            }
        }
        self.steady_demand()?;
        Ok(())
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses a TOML document that was already edited as a value tree.
    pub fn from_toml_value(value: toml::Value) -> Result<Self> {
        let config: Config = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.mechanism.validate()?;
        if !(self.throughput > 0.0 && self.throughput.is_finite()) {
            return Err(Error::invalid("throughput", format!("must be positive, got {}", self.throughput)));
        }
        if !(self.initial_price >= 0.0 && self.initial_price.is_finite()) {
            return Err(Error::invalid("initial_price", format!("must be >= 0, got {}", self.initial_price)));
        }
        let schedule = self.schedule()?;
        if self.warmup >= schedule.total_blocks() {
            return Err(Error::invalid(
                "warmup",
                format!("{} leaves no blocks out of {}", self.warmup, schedule.total_blocks()),
            ));
        }
        if let Some(solve) = &self.solve {
            solve.validate()?;
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<LoadSchedule> {
        let regions = self
            .load
            .regions
            .iter()
            .map(|r| {
                Ok(LoadRegion {
                    blocks: r.blocks,
                    rate: r.rate,
                    spec: r.spec()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LoadSchedule::new(regions, self.load.arrivals)
    }

    pub fn simulation(&self) -> Result<Simulation> {
        Ok(Simulation {
            mechanism: self.mechanism.clone(),
            throughput: self.throughput,
            initial_price: self.initial_price,
            schedule: self.schedule()?,
            seed: self.seed,
        })
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn fingerprint(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Keeps only the first `blocks` blocks of the load schedule.
    pub fn truncate(&mut self, blocks: u64) -> Result<()> {
        if blocks == 0 {
            return Err(Error::invalid("blocks", "must be positive"));
        }
        let mut left = blocks;
        let mut kept = Vec::new();
        for mut r in self.load.regions.drain(..) {
            if left == 0 {
                break;
            }
            r.blocks = r.blocks.min(left);
            left -= r.blocks;
            kept.push(r);
        }
        self.load.regions = kept;
        self.warmup = self.warmup.min(blocks - 1);
        Ok(())
    }
}

/// Sets a numeric entry of a parsed config document.
///
/// `path` is dotted with optional array indices, e.g.
/// `mechanism.add_tier_price` or `load.regions[1].rate`. The alias `n`
/// sets the rate of every load region.
pub fn set_numeric(doc: &mut toml::Value, path: &str, value: f64) -> Result<()> {
    if path == "n" {
        let regions = doc
            .get_mut("load")
            .and_then(|l| l.get_mut("regions"))
            .and_then(|r| r.as_array_mut())
            .ok_or_else(|| Error::Config("config has no load.regions".into()))?;
        for r in regions {
            set_numeric(r, "rate", value)?;
        }
        return Ok(());
    }
    let mut node = doc;
    let mut segments = path.split('.').peekable();
    while let Some(segment) = segments.next() {
        let (key, indices) = parse_segment(segment).ok_or_else(|| Error::Config(format!("malformed parameter path `{path}`")))?;
        let last = segments.peek().is_none() && indices.is_empty();
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{path}`: `{key}` is not inside a table")))?;
        if last {
            let slot = table.get_mut(key).ok_or_else(|| Error::Config(format!("unknown parameter `{path}`")))?;
            return assign(slot, value, path);
        }
        node = table.get_mut(key).ok_or_else(|| Error::Config(format!("unknown parameter `{path}`")))?;
        for (n, &i) in indices.iter().enumerate() {
            let arr = node
                .as_array_mut()
                .ok_or_else(|| Error::Config(format!("`{path}`: `{key}` is not an array")))?;
            let len = arr.len();
            node = arr
                .get_mut(i)
                .ok_or_else(|| Error::Config(format!("`{path}`: index {i} out of range ({len} entries)")))?;
            if segments.peek().is_none() && n + 1 == indices.len() {
                return assign(node, value, path);
            }
        }
    }
    Err(Error::Config(format!("malformed parameter path `{path}`")))
}

fn parse_segment(segment: &str) -> Option<(&str, Vec<usize>)> {
    let key_end = segment.find('[').unwrap_or(segment.len());
    let key = &segment[..key_end];
    if key.is_empty() {
        return None;
    }
    let mut indices = Vec::new();
    let mut rest = &segment[key_end..];
    while !rest.is_empty() {
        let close = rest.find(']')?;
        if !rest.starts_with('[') {
            return None;
        }
        indices.push(rest[1..close].parse().ok()?);
        rest = &rest[close + 1..];
    }
    Some((key, indices))
}

fn assign(slot: &mut toml::Value, value: f64, path: &str) -> Result<()> {
    *slot = match slot {
        toml::Value::Integer(_) if value.fract() == 0.0 && value.abs() < 9.0e15 => toml::Value::Integer(value as i64),
        toml::Value::Integer(_) => {
            return Err(Error::Config(format!("`{path}` is an integer parameter, got {value}")));
        }
        toml::Value::Float(_) => toml::Value::Float(value),
        _ => return Err(Error::Config(format!("`{path}` is not a numeric parameter"))),
    };
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 7
throughput = 120.0
warmup = 10
policy = [{ a = 0.3, d = 5.0, p = 10.0 }]

[mechanism]
kind = "tiered"
max_tiers = 2
size_fractions = [0.5, 0.5]
delay_factors = [2.0]
price_factors = [0.5]
delay_freq = 25
tier_freq = 100
p_decrease = 0.25
add_tier_price = 2.0
remove_tier_price = 1.0

[load]
arrivals = "poisson"

[[load.regions]]
blocks = 100
rate = 480.0
bad_load = { a = 0.3, d = 5.0, p = 10.0 }

[[load.regions]]
blocks = 50
rate = 240.0
demand = [{ weight = 1.0, v0 = { uniform = { lo = 0.0, hi = 1.0 } }, discount = { point = { urgency = 2.0 } } }]

[solve]
sizes = [60.0, 60.0]
construct = { lambda = [2.0], mu = [0.5], delta = 0.05 }
rate = 240.0
demand = [{ weight = 1.0, v0 = { uniform = { lo = 0.0, hi = 1.0 } }, discount = { uniform = { lo = 3.0, hi = 4.0 } } }]
"#;

    #[test]
    fn parses_and_round_trips() {
        let config = Config::from_toml_str(SAMPLE).unwrap();
        assert_eq!(config.initial_price, 1.0);
        assert_eq!(config.schedule().unwrap().total_blocks(), 150);
        let text = config.to_toml_string().unwrap();
        assert_eq!(Config::from_toml_str(&text).unwrap(), config);
        assert_eq!(config.fingerprint().unwrap(), Config::from_toml_str(&text).unwrap().fingerprint().unwrap());
    }

    #[test]
    fn unknown_keys_are_named() {
        let bad = SAMPLE.replace("p_decrease = 0.25", "p_decrease = 0.25\np_decreese = 0.3");
        let err = Config::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("p_decreese"), "{err}");
        let bad = SAMPLE.replace("warmup = 10", "warmup = 10\nextra = 1");
        assert!(Config::from_toml_str(&bad).unwrap_err().to_string().contains("extra"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Config::from_toml_str(&SAMPLE.replace("throughput = 120.0", "throughput = -1.0")).is_err());
        assert!(Config::from_toml_str(&SAMPLE.replace("policy = [{ a = 0.3, d = 5.0, p = 10.0 }]", "policy = []")).is_err());
        assert!(Config::from_toml_str(&SAMPLE.replace("size_fractions = [0.5, 0.5]", "size_fractions = [0.5, 0.4]")).is_err());
        let neither = SAMPLE.replace("bad_load = { a = 0.3, d = 5.0, p = 10.0 }", "");
        assert!(Config::from_toml_str(&neither).is_err());
        let both = SAMPLE.replace(
            "bad_load = { a = 0.3, d = 5.0, p = 10.0 }",
            "bad_load = { a = 0.3, d = 5.0, p = 10.0 }\ndemand = [{ weight = 1.0, v0 = { point = { value = 1.0 } }, discount = { point = { urgency = 2.0 } } }]",
        );
        assert!(Config::from_toml_str(&both).is_err());
    }

    #[test]
    fn truncate_cuts_regions() {
        let mut config = Config::from_toml_str(SAMPLE).unwrap();
        config.truncate(120).unwrap();
        let s = config.schedule().unwrap();
        assert_eq!(s.total_blocks(), 120);
        assert_eq!(s.regions().len(), 2);
        config.truncate(30).unwrap();
        assert_eq!(config.schedule().unwrap().regions().len(), 1);
    }

    #[test]
    fn numeric_overrides() {
        let mut doc: toml::Value = toml::from_str(SAMPLE).unwrap();
        set_numeric(&mut doc, "seed", 9.0).unwrap();
        set_numeric(&mut doc, "mechanism.add_tier_price", 3.5).unwrap();
        set_numeric(&mut doc, "load.regions[1].rate", 100.0).unwrap();
        set_numeric(&mut doc, "mechanism.size_fractions[0]", 0.25).unwrap();
        set_numeric(&mut doc, "mechanism.size_fractions[1]", 0.75).unwrap();
        let config = Config::from_toml_value(doc.clone()).unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.load.regions[1].rate, 100.0);
        assert_eq!(config.mechanism.max_tiers(), 2);
        set_numeric(&mut doc, "n", 50.0).unwrap();
        assert!(Config::from_toml_value(doc.clone()).unwrap().load.regions.iter().all(|r| r.rate == 50.0));
        assert!(set_numeric(&mut doc, "mechanism.nope", 1.0).is_err());
        assert!(set_numeric(&mut doc, "seed", 1.5).is_err());
        assert!(set_numeric(&mut doc, "load.regions[9].rate", 1.0).is_err());
        assert!(set_numeric(&mut doc, "load.arrivals", 1.0).is_err());
    }
}
