//! Run configuration: a TOML file with `model`, `phys`, `solver`, `sweep`,
//! `verify` and `output` sections plus the top-level `seed` and `claims`.

use std::path::{Path, PathBuf};

use dflab::solvers::SolveOptions;
use dflab::verify::Vary;
use dflab::{ClaimId, ModelConfig, PhysParams, SweepSpec, VerifyConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that overrides `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// The single source of randomness; also the seed of the synthetic backend.
    #[serde(default)]
    pub seed: u64,
    /// Claims run by `verify`; all of them when absent.
    #[serde(default)]
    pub claims: Option<Vec<ClaimId>>,
    #[serde(default)]
    pub model: ModelConfig,
    pub phys: PhysParams,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Where and how the run executes; kept out of the reports.
    #[serde(default, skip_serializing)]
    pub output: OutputSection,
}

/// The varied parameter and its grid; the rest comes from `model` and `phys`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub vary: Vary,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Size of the worker pool for sweeps and claims.
    pub workers: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            workers: 1,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub claims: Option<Vec<ClaimId>>,
    pub workers: Option<usize>,
    /// Value of `OUTPUT_DIR`, read by the caller.
    pub env_out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, ov).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses, applies overrides and validates everything before any computation.
    pub fn parse(text: &str, ov: &Overrides) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(dir) = ov.env_out.clone() {
            cfg.output.dir = dir;
        }
        if let Some(dir) = ov.out.clone() {
            cfg.output.dir = dir;
        }
        if let Some(seed) = ov.seed {
            cfg.seed = seed;
        }
        if let Some(claims) = ov.claims.clone() {
            cfg.claims = Some(claims);
        }
        if let Some(w) = ov.workers {
            cfg.output.workers = w;
        }
        cfg.model.seed = cfg.seed;
        cfg.verify.reseed(cfg.seed);
        cfg.validate(text)?;
        Ok(cfg)
    }

    fn validate(&self, text: &str) -> Result<(), CliError> {
        let at = |section: &str, msg: String| match section_line(text, section) {
            Some(line) => CliError::Config(format!("line {line}, [{section}]: {msg}")),
            None => CliError::Config(format!("[{section}]: {msg}")),
        };
        self.model.validate().map_err(|e| at("model", e.to_string()))?;
        self.phys.validate().map_err(|e| at("phys", e.to_string()))?;
        let s = &self.solver;
        if !(s.tol.is_finite() && s.tol > 0.0) || s.max_iter == 0 || s.max_outer == 0 {
            return Err(at("solver", "tol must be > 0 and max_iter, max_outer >= 1".into()));
        }
        if !(s.armijo_factor > 0.0 && s.armijo_factor < 1.0) {
            return Err(at("solver", format!("armijo_factor must lie in (0, 1), got {}", s.armijo_factor)));
        }
        if let Some(r) = s.radius.filter(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(at("solver", format!("radius must be > 0, got {r}")));
        }
        if let Some(spec) = self.sweep_spec() {
            spec.validate().map_err(|e| at("sweep", e.to_string()))?;
        }
        if self.output.workers == 0 {
            return Err(at("output", "workers must be >= 1".into()));
        }
        if matches!(&self.claims, Some(c) if c.is_empty()) {
            return Err(CliError::Config("claims: the list is empty".into()));
        }
        Ok(())
    }

    pub fn sweep_spec(&self) -> Option<SweepSpec> {
        self.sweep
            .as_ref()
            .map(|s| SweepSpec::new(s.vary, &s.values, self.phys, self.model.clone()))
    }

    pub fn claim_ids(&self) -> Vec<ClaimId> {
        self.claims.clone().unwrap_or_else(|| ClaimId::ALL.to_vec())
    }
}

/// 1-based line of the `[section]` header.
fn section_line(text: &str, section: &str) -> Option<usize> {
    let header = format!("[{section}]");
    text.lines().position(|l| l.trim() == header).map(|i| i + 1)
}

/// Parses a comma-separated claim list.
pub fn parse_claims(list: &str) -> Result<Vec<ClaimId>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<ClaimId>().map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[phys]\nalpha = 0.1\nc = 10.0\nz = 1.0\nq = 2\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::parse(MINIMAL, &Overrides::default()).unwrap();
        assert_eq!(cfg.output.workers, 1);
        assert_eq!(cfg.claim_ids().len(), ClaimId::ALL.len());
        assert!(cfg.sweep.is_none());
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = format!("{MINIMAL}speed = 3\n");
        let err = RunConfig::parse(&text, &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("line 6"), "{err}");
        assert!(err.contains("speed"), "{err}");
    }

    #[test]
    fn invalid_value_names_its_section_line() {
        let text = "seed = 1\n\n[phys]\nalpha = 0.1\nc = -1.0\nz = 1.0\nq = 2\n";
        let err = RunConfig::parse(text, &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("line 3, [phys]"), "{err}");
    }

    #[test]
    fn overrides_take_precedence() {
        let text = format!("seed = 4\n{MINIMAL}[output]\ndir = \"a\"\n");
        let ov = Overrides {
            out: Some("b".into()),
            seed: Some(9),
            env_out: Some("c".into()),
            ..Overrides::default()
        };
        let cfg = RunConfig::parse(&text, &ov).unwrap();
        assert_eq!(cfg.output.dir, PathBuf::from("b"));
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.seed, 9);
        assert_eq!(cfg.verify.projector.seed, 9);
        let env_only = Overrides {
            env_out: Some("c".into()),
            ..Overrides::default()
        };
        assert_eq!(RunConfig::parse(&text, &env_only).unwrap().output.dir, PathBuf::from("c"));
    }

    #[test]
    fn short_sweep_is_rejected() {
        let text = format!("{MINIMAL}[sweep]\nvary = \"c\"\nvalues = [10.0, 20.0]\n");
        let err = RunConfig::parse(&text, &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("[sweep]"), "{err}");
    }

    #[test]
    fn claim_lists_parse() {
        assert_eq!(
            parse_claims("projector, appendix_a").unwrap(),
            vec![ClaimId::Projector, ClaimId::AppendixA]
        );
        assert!(parse_claims("projector,bogus").is_err());
    }
}
