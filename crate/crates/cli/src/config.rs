//! Optional TOML configuration. Every key is optional; command-line flags
//! take precedence over the file, and the file over built-in defaults.

use std::path::Path;

use cqlqg::optimizer::CurvatureMode;
use cqlqg::par::ExecPolicy;
use cqlqg::SolverConfig;
use serde::Deserialize;

use crate::failure::Failure;

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub h_max: Option<f64>,
    pub f: Option<f64>,
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iters: Option<usize>,
    pub armijo_max_mu: Option<usize>,
    pub hurwitz_margin: Option<f64>,
    pub max_stabilize_tries: Option<usize>,
    pub seed: Option<u64>,
    pub starts: Option<usize>,
    pub scale: Option<f64>,
    pub curvature: Option<Curvature>,
    pub sequential: Option<bool>,
    pub pr_tol: Option<f64>,
    pub grad_warn: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Curvature {
    Analytic,
    FiniteDifference,
}

impl From<Curvature> for CurvatureMode {
    fn from(c: Curvature) -> Self {
        match c {
            Curvature::Analytic => CurvatureMode::Analytic,
            Curvature::FiniteDifference => CurvatureMode::FiniteDifference,
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Failure::parse(format!("config {}: {e}", path.display())))
    }

    /// Solver settings from the file on top of the defaults.
    pub fn solver(&self) -> SolverConfig {
        let d = SolverConfig::default();
        SolverConfig {
            h_max: self.h_max.unwrap_or(d.h_max),
            f: self.f.unwrap_or(d.f),
            sigma: self.sigma.unwrap_or(d.sigma),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            armijo_max_mu: self.armijo_max_mu.unwrap_or(d.armijo_max_mu),
            hurwitz_margin: self.hurwitz_margin.unwrap_or(d.hurwitz_margin),
            rng_seed: self.seed.unwrap_or(d.rng_seed),
            curvature: self.curvature.map(Into::into).unwrap_or(d.curvature),
            max_stabilize_tries: self.max_stabilize_tries.unwrap_or(d.max_stabilize_tries),
            exec: if self.sequential.unwrap_or(false) { ExecPolicy::Sequential } else { d.exec },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ConfigFile::parse("").unwrap();
        let s = c.solver();
        let d = SolverConfig::default();
        assert_eq!((s.h_max, s.f, s.sigma, s.max_iters), (d.h_max, d.f, d.sigma, d.max_iters));
    }

    #[test]
    fn keys_override_defaults() {
        let c = ConfigFile::parse("f = 0.333\nmax-iters = 7\ncurvature = \"finite-difference\"\nsequential = true\n")
            .unwrap();
        let s = c.solver();
        assert_eq!(s.f, 0.333);
        assert_eq!(s.max_iters, 7);
        assert_eq!(s.curvature, CurvatureMode::FiniteDifference);
        assert_eq!(s.exec, ExecPolicy::Sequential);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse("h-maks = 1.0").is_err());
    }
}
