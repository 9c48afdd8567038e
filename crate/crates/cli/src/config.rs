//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! instance = nonconvex_outer
//! x0 = center            # or a comma list: 0.1, -0.3
//! K = 200
//! T = 30
//! beta = auto            # or a number
//! a = 1
//! b = 2
//! seed = 0
//! oracle_every = 0
//! output_path = trace.csv
//! T_range = 1..50        # verify: comma list, `lo..hi` ranges allowed
//! sweep_axis = K         # sweep: K, T or beta
//! sweep_values = 50, 100, 200, 400
//! ```

use std::path::PathBuf;

use nalgebra::DVector;
use serde::Serialize;

use bilevel_vi::problems::{by_name, InstanceCatalogEntry};
use bilevel_vi::DGapParams;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StartPoint {
    Center,
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Beta {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepAxis {
    K,
    T,
    #[serde(rename = "beta")]
    Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub instance: String,
    /// Dimension for the dimension-parametrized instances.
    pub dim: usize,
    pub x0: StartPoint,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub beta: Beta,
    pub a: f64,
    pub b: f64,
    pub seed: u64,
    pub oracle_every: usize,
    pub output_path: Option<PathBuf>,
    pub inner_tol: f64,
    #[serde(rename = "T_range")]
    pub t_range: Vec<usize>,
    pub sweep_axis: Option<SweepAxis>,
    pub sweep_values: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            instance: String::new(),
            dim: 2,
            x0: StartPoint::Center,
            k: 100,
            t: 30,
            beta: Beta::Auto,
            a: 1.0,
            b: 2.0,
            seed: 0,
            oracle_every: 0,
            output_path: None,
            inner_tol: 0.0,
            t_range: (1..=50).collect(),
            sweep_axis: None,
            sweep_values: Vec::new(),
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::Config(format!("{key} = '{value}': {what}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| bad(key, value, "not a valid number"))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_counts(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.split_once("..") {
            Some((lo, hi)) => {
                let (lo, hi): (usize, usize) = (parse_num(key, lo.trim())?, parse_num(key, hi.trim())?);
                if lo > hi {
                    return Err(bad(key, item, "empty range"));
                }
                out.extend(lo..=hi);
            }
            None => out.push(parse_num(key, item)?),
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Parses the text of a config file. Unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected 'key = value'", lineno + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: key '{key}' given twice", lineno + 1)));
            }
            match key {
                "instance" => cfg.instance = value.to_string(),
                "dim" => cfg.dim = parse_num(key, value)?,
                "x0" => {
                    cfg.x0 = if value.eq_ignore_ascii_case("center") {
                        StartPoint::Center
                    } else {
                        StartPoint::Vector(parse_list(key, value)?)
                    }
                }
                "K" => cfg.k = parse_num(key, value)?,
                "T" => cfg.t = parse_num(key, value)?,
                "beta" => {
                    cfg.beta = if value.eq_ignore_ascii_case("auto") {
                        Beta::Auto
                    } else {
                        Beta::Fixed(parse_num(key, value)?)
                    }
                }
                "a" => cfg.a = parse_num(key, value)?,
                "b" => cfg.b = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "oracle_every" => cfg.oracle_every = parse_num(key, value)?,
                "output_path" => cfg.output_path = Some(PathBuf::from(value)),
                "inner_tol" => cfg.inner_tol = parse_num(key, value)?,
                "T_range" => cfg.t_range = parse_counts(key, value)?,
                "sweep_axis" => {
                    cfg.sweep_axis = Some(match value {
                        "K" => SweepAxis::K,
                        "T" => SweepAxis::T,
                        "beta" => SweepAxis::Beta,
                        _ => return Err(bad(key, value, "sweep axis must be K, T or beta")),
                    })
                }
                "sweep_values" => cfg.sweep_values = parse_list(key, value)?,
                other => return Err(CliError::Config(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks everything that does not need the instance.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.instance.is_empty() {
            return Err(CliError::Config("missing key 'instance'".into()));
        }
        DGapParams::new(self.a, self.b).map_err(|e| CliError::Config(e.to_string()))?;
        if let Beta::Fixed(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(CliError::Config(format!("beta must be positive, got {b}")));
            }
        }
        if !(self.inner_tol >= 0.0) {
            return Err(CliError::Config(format!("inner_tol must be nonnegative, got {}", self.inner_tol)));
        }
        Ok(())
    }

    /// The catalog entry with this config's D-gap parameters.
    pub fn build_instance(&self) -> Result<InstanceCatalogEntry, CliError> {
        let mut entry = by_name(&self.instance, self.dim, self.seed).map_err(|e| CliError::Config(e.to_string()))?;
        let params = DGapParams::new(self.a, self.b).map_err(|e| CliError::Config(e.to_string()))?;
        entry.spec = entry.spec.with_dgap(params);
        Ok(entry)
    }

    /// `x0` resolved against `X`. Points outside `X` are projected by the solver.
    pub fn start_point(&self, entry: &InstanceCatalogEntry) -> Result<DVector<f64>, CliError> {
        let set_x = entry.spec.set_x();
        let x = match &self.x0 {
            StartPoint::Center => set_x.center(),
            StartPoint::Vector(v) => {
                if v.len() != set_x.dim() {
                    return Err(CliError::Config(format!(
                        "x0 has {} entries but X has dimension {}",
                        v.len(),
                        set_x.dim()
                    )));
                }
                DVector::from_column_slice(v)
            }
        };
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "
            # comment
            instance = affine_box
            dim = 3
            x0 = 0.1, -0.2, 0.3   # trailing comment
            K = 10
            T = 5
            beta = 0.05
            a = 0.5
            b = 3
            seed = 42
            oracle_every = 2
            output_path = out.csv
            inner_tol = 1e-12
            T_range = 1..3, 10
            sweep_axis = T
            sweep_values = 2, 5
        ";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.dim, 3);
        assert_eq!(c.x0, StartPoint::Vector(vec![0.1, -0.2, 0.3]));
        assert_eq!((c.k, c.t), (10, 5));
        assert_eq!(c.beta, Beta::Fixed(0.05));
        assert_eq!(c.t_range, vec![1, 2, 3, 10]);
        assert_eq!(c.sweep_axis, Some(SweepAxis::T));
        assert_eq!(c.sweep_values, vec![2.0, 5.0]);
        assert_eq!(c.output_path, Some(PathBuf::from("out.csv")));
    }

    #[test]
    fn rejects_bad_dgap_parameters() {
        let err = RunConfig::parse("instance = scalar_clamp\na = 2\nb = 1").unwrap_err();
        assert!(err.to_string().contains("b > a > 0"));
    }

    #[test]
    fn rejects_unknown_and_repeated_keys() {
        assert!(RunConfig::parse("instance = scalar_clamp\ngamma = 1").is_err());
        assert!(RunConfig::parse("instance = scalar_clamp\nK = 1\nK = 2").is_err());
        assert!(RunConfig::parse("K = 1").is_err());
        assert!(RunConfig::parse("instance = scalar_clamp\nK = ten").is_err());
    }

    #[test]
    fn unknown_instance_is_config_error() {
        let c = RunConfig::parse("instance = nope").unwrap();
        assert!(matches!(c.build_instance(), Err(CliError::Config(_))));
    }
}
