//! Run configuration files.
//!
//! Three shapes are accepted:
//! - a full environment spec (see `EnvironmentSpec::from_json_str`);
//! - a bare q-walk, `{"q": [["+1", 0.5], ["-1", 0.5]], "delta": 0.9}`, for `green`;
//! - a named example, `{"example": "ex1" | "ex2" | "d2_renewal", "param": 0.5}`.

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::environment::{build_d2_renewal, build_example_ex1, build_example_ex2, EnvironmentSpec, Kernel, SiteLaw};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Example {
    Ex1,
    Ex2,
    D2Renewal,
}

impl Example {
    pub fn parse(s: &str) -> Result<Example> {
        match s {
            "ex1" => Ok(Example::Ex1),
            "ex2" => Ok(Example::Ex2),
            "d2_renewal" => Ok(Example::D2Renewal),
            _ => Err(Error::Config(format!("unknown example '{s}'"))),
        }
    }

    pub fn law(&self, param: f64) -> SiteLaw {
        match self {
            Example::Ex1 => build_example_ex1(param),
            Example::Ex2 => build_example_ex2(param),
            Example::D2Renewal => build_d2_renewal(param),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Target {
    Spec(EnvironmentSpec),
    Walk { q: Kernel, delta: f64 },
    Example { example: Example, param: f64 },
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub target: Target,
    /// Hex SHA-256 of the file contents.
    pub hash: String,
}

#[derive(Deserialize)]
struct WalkJson {
    q: Vec<(String, f64)>,
    #[serde(default = "one")]
    delta: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
struct ExampleJson {
    example: String,
    param: f64,
}

pub fn hash_bytes(b: &[u8]) -> String {
    Sha256::digest(b).iter().map(|x| format!("{x:02x}")).collect()
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<RunConfig> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let obj = v.as_object().ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let target = if obj.contains_key("example") {
            let e: ExampleJson = serde_json::from_value(v)?;
            Target::Example { example: Example::parse(&e.example)?, param: e.param }
        } else if obj.contains_key("dims") {
            Target::Spec(EnvironmentSpec::from_json_value(v)?)
        } else if obj.contains_key("q") {
            let w: WalkJson = serde_json::from_value(v)?;
            let d1 = w.q.iter().map(|(s, _)| crate::lattice::Step::parse(s).map(|s| s.axis() + 1)).collect::<Result<Vec<_>>>()?;
            let dim = d1.into_iter().max().unwrap_or(0);
            Target::Walk { q: Kernel::from_str_pairs(dim, &w.q)?, delta: w.delta }
        } else {
            return Err(Error::Config("config needs one of 'dims', 'q' or 'example'".into()));
        };
        Ok(RunConfig { target, hash: hash_bytes(text.as_bytes()) })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn spec(&self) -> Result<&EnvironmentSpec> {
        match &self.target {
            Target::Spec(s) => Ok(s),
            _ => Err(Error::Config("this command needs a full environment spec".into())),
        }
    }

    /// The q-walk and δ used by Green-function commands.
    pub fn walk(&self) -> Result<(Kernel, f64)> {
        match &self.target {
            Target::Spec(s) => Ok((s.q.clone(), s.delta)),
            Target::Walk { q, delta } => Ok((q.clone(), *delta)),
            Target::Example { .. } => Err(Error::Config("examples carry no q-walk".into())),
        }
    }

    /// Site law for simulation, with β (or the example parameter) overridden.
    pub fn law(&self, beta: Option<f64>) -> Result<SiteLaw> {
        match &self.target {
            Target::Spec(s) => {
                let s = beta.map_or_else(|| s.clone(), |b| s.with_beta(b));
                s.enumerate_support(crate::environment::DEFAULT_SUPPORT_CAP)
            }
            Target::Example { example, param } => Ok(example.law(beta.unwrap_or(*param))),
            Target::Walk { .. } => Err(Error::Config("a bare q-walk cannot be simulated".into())),
        }
    }
}

/// `start:end:step`, endpoints included within 1e−12.
pub fn parse_beta_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("bad beta grid '{s}', expected start:end:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
    let (a, b, h) = (nums[0], nums[1], nums[2]);
    if !(h > 0.0) || b < a || !(0.0..=1.0).contains(&a) || b > 1.0 + 1e-12 {
        return Err(bad());
    }
    let count = ((b - a) / h + 1e-12).floor() as usize;
    let mut out: Vec<f64> = (0..=count).map(|i| a + i as f64 * h).collect();
    // snap to the endpoint and to clean decimals
    for x in out.iter_mut() {
        let r = (*x * 1e12).round() / 1e12;
        *x = r.min(1.0);
    }
    Ok(out)
}

/// A positive count, accepting forms like "1e6".
pub fn parse_count(s: &str) -> Result<u64> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    let x: f64 = s.parse().map_err(|_| Error::Config(format!("bad count '{s}'")))?;
    if x < 0.0 || x.fract() != 0.0 || x > 1e18 {
        return Err(Error::Config(format!("bad count '{s}'")));
    }
    Ok(x as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = parse_beta_grid("0:1:0.1").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.3);
        assert_eq!(g[10], 1.0);
        assert_eq!(parse_beta_grid("0.2:0.2:0.1").unwrap(), vec![0.2]);
        assert!(parse_beta_grid("0:1").is_err());
        assert!(parse_beta_grid("0:1:0").is_err());
        assert!(parse_beta_grid("0.5:0.1:0.1").is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(parse_count("1e6").unwrap(), 1_000_000);
        assert_eq!(parse_count("250").unwrap(), 250);
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("x").is_err());
    }

    #[test]
    fn config_shapes() {
        let c = RunConfig::from_str(r#"{"q": [["+1", 0.1], ["-1", 0.1], ["+2", 0.4], ["-2", 0.4]]}"#).unwrap();
        let (q, delta) = c.walk().unwrap();
        assert_eq!(q.dim(), 2);
        assert_eq!(delta, 1.0);
        let c = RunConfig::from_str(r#"{"example": "d2_renewal", "param": 0.5}"#).unwrap();
        assert_eq!(c.law(None).unwrap().atoms.len(), 2);
        assert!(c.spec().is_err());
        assert!(RunConfig::from_str(r#"{"example": "nope", "param": 0.5}"#).is_err());
        assert!(RunConfig::from_str("[1]").is_err());
        assert_eq!(c.hash.len(), 64);
    }
}
