//! Option resolution: built-in defaults < config file < explicit flags.
//!
//! The resolved `run` settings are echoed into the output directory as
//! `run_config.json` (with input paths made absolute), which is what lets
//! `plf compare` re-execute the exact run later.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use plf_core::{Error, Result};

use crate::{CompareArgs, McArgs, RunArgs};

/// Defaults loaded from `--config`. Field names match the long option names
/// of the subcommands; unknown fields are rejected to catch typos.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub case: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub gmm: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub components: Option<usize>,
    pub seed: Option<u64>,
    pub rho: Option<f64>,
    pub sigma_decay: Option<f64>,
    pub apc_tol: Option<f64>,
    pub apc_max_iters: Option<usize>,
    pub inner_aac_tol: Option<f64>,
    pub out: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub mc: Option<usize>,
    pub jsd_samples: Option<usize>,
    pub scenarios: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = read_input(path, "config file")?;
        serde_json::from_str(&text).map_err(|e| Error::Syntax {
            what: "config file".into(),
            source: e,
        })
    }
}

/// Read a referenced input file, reporting a missing path as such.
pub fn read_input(path: &Path, what: &str) -> Result<String> {
    if !path.is_file() {
        return Err(Error::invalid(
            what,
            format!("{what} not found: {}", path.display()),
        ));
    }
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Existence check plus canonicalization, so the echoed configuration stays
/// valid when `compare` runs from a different working directory.
fn canonical(path: PathBuf, what: &str) -> Result<PathBuf> {
    if !path.is_file() {
        return Err(Error::invalid(
            what,
            format!("{what} not found: {}", path.display()),
        ));
    }
    fs::canonicalize(&path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Fully resolved settings of one protocol execution. Serialized as
/// `run_config.json`; the output directory is deliberately not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: PathBuf,
    pub graph: PathBuf,
    pub gmm: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub components: Option<usize>,
    pub seed: u64,
    pub rho: f64,
    pub sigma_decay: f64,
    pub apc_tol: f64,
    pub apc_max_iters: usize,
    pub inner_aac_tol: f64,
}

impl RunConfig {
    /// Merge flags over the config file, apply defaults, and validate.
    pub fn resolve(args: RunArgs, file: &FileConfig) -> Result<(Self, PathBuf)> {
        let case = args
            .case
            .or_else(|| file.case.clone())
            .ok_or_else(|| Error::invalid("run config", "no case file given (--case)"))?;
        let graph = args
            .graph
            .or_else(|| file.graph.clone())
            .ok_or_else(|| Error::invalid("run config", "no graph file given (--graph)"))?;
        let gmm = args.gmm.or_else(|| file.gmm.clone());
        let samples = args.samples.or_else(|| file.samples.clone());
        let components = args.components.or(file.components);
        validate_injection_source(&gmm, &samples, components)?;

        let apc_tol = args.apc_tol.or(file.apc_tol).unwrap_or(1e-9);
        let inner_aac_tol = args.inner_aac_tol.or(file.inner_aac_tol).unwrap_or(1e-10);
        for (name, value) in [
            ("consensus tolerance", apc_tol),
            ("inner averaging tolerance", inner_aac_tol),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::invalid(
                    "run config",
                    format!("{name} must be positive, got {value}"),
                ));
            }
        }

        let cfg = RunConfig {
            case: canonical(case, "case file")?,
            graph: canonical(graph, "graph file")?,
            gmm: gmm.map(|p| canonical(p, "injection mixture file")).transpose()?,
            samples: samples.map(|p| canonical(p, "samples file")).transpose()?,
            components,
            seed: args.seed.or(file.seed).unwrap_or(0),
            rho: args.rho.or(file.rho).unwrap_or(1.0),
            sigma_decay: args.sigma_decay.or(file.sigma_decay).unwrap_or(0.5),
            apc_tol,
            apc_max_iters: args.apc_max_iters.or(file.apc_max_iters).unwrap_or(5000),
            inner_aac_tol,
        };
        let out = args
            .out
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from("plf-out"));
        Ok((cfg, out))
    }
}

/// Resolved settings of `plf compare`.
#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub run: PathBuf,
    pub mc: Option<usize>,
    pub jsd_samples: usize,
    pub seed: Option<u64>,
}

impl CompareConfig {
    pub fn resolve(args: CompareArgs, file: &FileConfig) -> Result<(Self, PathBuf)> {
        let run = args
            .run
            .or_else(|| file.run.clone())
            .ok_or_else(|| Error::invalid("compare config", "no run directory given (--run)"))?;
        if !run.is_dir() {
            return Err(Error::invalid(
                "compare config",
                format!("run directory not found: {}", run.display()),
            ));
        }
        let jsd_samples = args.jsd_samples.or(file.jsd_samples).unwrap_or(200_000);
        if jsd_samples == 0 {
            return Err(Error::invalid(
                "compare config",
                "divergence sample budget must be positive",
            ));
        }
        let out = args.out.or_else(|| file.out.clone()).unwrap_or_else(|| run.join("compare"));
        let cfg = CompareConfig {
            run,
            mc: args.mc.or(file.mc),
            jsd_samples,
            seed: args.seed.or(file.seed),
        };
        Ok((cfg, out))
    }
}

/// Resolved settings of `plf mc`.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub case: PathBuf,
    pub gmm: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub components: Option<usize>,
    pub scenarios: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn resolve(args: McArgs, file: &FileConfig) -> Result<(Self, PathBuf)> {
        let case = args
            .case
            .or_else(|| file.case.clone())
            .ok_or_else(|| Error::invalid("mc config", "no case file given (--case)"))?;
        let gmm = args.gmm.or_else(|| file.gmm.clone());
        let samples = args.samples.or_else(|| file.samples.clone());
        let components = args.components.or(file.components);
        validate_injection_source(&gmm, &samples, components)?;
        let scenarios = args
            .scenarios
            .or(file.scenarios)
            .ok_or_else(|| Error::invalid("mc config", "no scenario count given (--scenarios)"))?;
        let cfg = McConfig {
            case: canonical(case, "case file")?,
            gmm: gmm.map(|p| canonical(p, "injection mixture file")).transpose()?,
            samples: samples.map(|p| canonical(p, "samples file")).transpose()?,
            components,
            scenarios,
            seed: args.seed.or(file.seed).unwrap_or(0),
        };
        let out = args
            .out
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from("plf-out"));
        Ok((cfg, out))
    }
}

/// The injection mixture comes from a GMM file, an EM fit of a samples file
/// (requiring a component count), or both (file wins, samples feed the
/// observation plan).
fn validate_injection_source(
    gmm: &Option<PathBuf>,
    samples: &Option<PathBuf>,
    components: Option<usize>,
) -> Result<()> {
    if gmm.is_none() && samples.is_none() {
        return Err(Error::invalid(
            "run config",
            "an injection source is required (--gmm and/or --samples)",
        ));
    }
    if gmm.is_none() && components.is_none() {
        return Err(Error::invalid(
            "run config",
            "--components is required when the mixture is fitted from --samples",
        ));
    }
    Ok(())
}
