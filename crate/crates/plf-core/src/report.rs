//! Serializable artifacts and the hashed output directory.
//!
//! The command-line tool writes everything through [`OutputWriter`], which
//! records the SHA-256 of every tracked file in `manifest.json`. Timing data
//! is intentionally written untracked: all tracked artifacts are
//! byte-reproducible from the configuration and seed, wall-clock numbers are
//! not.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dplf::{ProtocolConfig, ProtocolOutcome};
use crate::error::{Error, Result};
use crate::gmm::Gmm;
use crate::oracle::{ComparisonReport, Histogram, McSummary};

// ---------------------------------------------------------------------------
// Per-agent output file
// ---------------------------------------------------------------------------

/// Residuals reported alongside each agent's result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentResiduals {
    /// ‖A_i·X_i − B_i‖∞ at consensus exit.
    pub feasibility: f64,
    /// Worst relative change at the final consensus iteration.
    pub final_rel_change: f64,
}

/// Iteration counts and residuals for one agent's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDiagnostics {
    pub apc_iters: usize,
    pub aac_rounds: u64,
    pub residuals: AgentResiduals,
}

/// One agent's regional result as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFile {
    /// 1-based region index.
    pub region: usize,
    /// Global state indices the mixture's dimensions refer to.
    pub theta_indices: Vec<usize>,
    pub gmm: Gmm,
    /// Recovered constant term, one entry per state.
    pub gamma: Vec<f64>,
    pub diagnostics: AgentDiagnostics,
}

/// Extract the per-agent output files from a finished run. Secrets and
/// decomposition internals deliberately stay out of the files.
pub fn agent_files(out: &ProtocolOutcome) -> Vec<AgentFile> {
    out.agents
        .iter()
        .enumerate()
        .map(|(i, agent)| AgentFile {
            region: agent.region,
            theta_indices: agent.theta.clone(),
            gmm: agent.gmm.clone(),
            gamma: agent.gamma.iter().copied().collect(),
            diagnostics: AgentDiagnostics {
                apc_iters: out.diagnostics.apc_iters,
                aac_rounds: out.diagnostics.total_aac_rounds,
                residuals: AgentResiduals {
                    feasibility: out.diagnostics.apc_feasibility.get(i).copied().unwrap_or(0.0),
                    final_rel_change: out.diagnostics.apc_last_rel_change,
                },
            },
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Run summary
// ---------------------------------------------------------------------------

/// Run-level record: configuration echo, sizes, counters and warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub rho: f64,
    pub decay: f64,
    pub apc_tol: f64,
    pub apc_max_iters: usize,
    pub regions: usize,
    pub wind_farms: usize,
    pub observations: usize,
    pub apc_iters: usize,
    pub apc_inner_rounds: usize,
    pub gamma_aac_rounds: usize,
    pub total_aac_rounds: u64,
    pub plan_retries: usize,
    pub plan_cond: f64,
    /// Transmissions by message kind over the whole run.
    pub message_counts: BTreeMap<String, u64>,
    pub messages_truncated: bool,
    pub warnings: Vec<String>,
}

/// Summarize a finished run for `run_summary.json`.
pub fn run_summary(cfg: &ProtocolConfig, out: &ProtocolOutcome) -> RunSummary {
    let mut message_counts = BTreeMap::new();
    for kind in out.audit.kinds() {
        message_counts.insert(format!("{kind:?}"), out.audit.count_of(kind));
    }
    RunSummary {
        seed: cfg.seed,
        rho: cfg.rho,
        decay: cfg.decay,
        apc_tol: cfg.apc.tol,
        apc_max_iters: cfg.apc.max_iters,
        regions: out.plan.h,
        wind_farms: out.plan.m,
        observations: out.plan.m_hat,
        apc_iters: out.diagnostics.apc_iters,
        apc_inner_rounds: out.diagnostics.apc_inner_rounds,
        gamma_aac_rounds: out.diagnostics.gamma_aac_rounds,
        total_aac_rounds: out.diagnostics.total_aac_rounds,
        plan_retries: out.diagnostics.plan_retries,
        plan_cond: out.diagnostics.plan_cond,
        message_counts,
        messages_truncated: out.audit.is_truncated(),
        warnings: out.diagnostics.warnings.clone(),
    }
}

// ---------------------------------------------------------------------------
// Monte-Carlo output file
// ---------------------------------------------------------------------------

/// Disk form of a Monte-Carlo sweep: flat vectors instead of matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McFile {
    pub n: usize,
    pub mean: Vec<f64>,
    /// Covariance rows, row-major.
    pub covariance: Vec<Vec<f64>>,
    pub histograms: Vec<Histogram>,
}

impl From<&McSummary> for McFile {
    fn from(mc: &McSummary) -> Self {
        let dim = mc.mean.len();
        McFile {
            n: mc.n,
            mean: mc.mean.iter().copied().collect(),
            covariance: (0..dim)
                .map(|r| (0..dim).map(|c| mc.covariance[(r, c)]).collect())
                .collect(),
            histograms: mc.histograms.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Comparison CSV
// ---------------------------------------------------------------------------

/// Render the comparison report as a per-region CSV table.
pub fn comparison_csv(report: &ComparisonReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::invalid("comparison csv", e.to_string());
    w.write_record([
        "region",
        "jsd_angle_avg",
        "jsd_angle_max",
        "jsd_voltage_avg",
        "jsd_voltage_max",
        "jsd_flow_avg",
        "jsd_flow_max",
        "jsd_avg",
        "jsd_max",
        "mean_rel_err_avg",
        "apc_rel_err",
        "mc_angle_rel_err_avg",
        "mc_voltage_rel_err_avg",
        "mc_flow_rel_err_avg",
    ])
    .map_err(io_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.regions {
        w.write_record([
            r.region.to_string(),
            r.jsd_angle_avg.to_string(),
            r.jsd_angle_max.to_string(),
            r.jsd_voltage_avg.to_string(),
            r.jsd_voltage_max.to_string(),
            opt(r.jsd_flow_avg),
            opt(r.jsd_flow_max),
            r.jsd_avg.to_string(),
            r.jsd_max.to_string(),
            r.mean_rel_err_avg.to_string(),
            r.apc_rel_err.to_string(),
            opt(r.mc_angle_rel_err_avg),
            opt(r.mc_voltage_rel_err_avg),
            opt(r.mc_flow_rel_err_avg),
        ])
        .map_err(io_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("comparison csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid("comparison csv", e.to_string()))
}

// ---------------------------------------------------------------------------
// Output directory with manifest
// ---------------------------------------------------------------------------

/// Lower-case hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        write!(s, "{b:02x}").expect("writing to a string cannot fail");
    }
    s
}

/// One tracked artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

/// Index of every tracked artifact in an output directory.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

/// Writes artifacts under one directory and records their hashes.
#[derive(Debug)]
pub struct OutputWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl OutputWriter {
    /// Create the directory (and parents) if needed.
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        Ok(OutputWriter { dir, manifest: Manifest::default() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
    }

    /// Write a tracked artifact: its hash lands in the manifest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.write_bytes(name, bytes)?;
        self.manifest
            .files
            .push(ManifestEntry { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    /// Write an untracked artifact (timing data and other non-reproducible
    /// output).
    pub fn write_untracked(&self, name: &str, bytes: &[u8]) -> Result<()> {
        self.write_bytes(name, bytes)
    }

    /// Sort the manifest, write `manifest.json`, and hand the index back.
    pub fn finish(mut self) -> Result<Manifest> {
        self.manifest.files.sort_by(|a, b| a.path.cmp(&b.path));
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::invalid("manifest", e.to_string()))?;
        self.write_bytes("manifest.json", text.as_bytes())?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::CommGraph;
    use crate::dplf::{run_distributed_plf, ObservationSource};
    use crate::net::parse_case;
    use crate::oracle::{McErrors, RegionMetrics, Runtimes};
    use nalgebra::{DMatrix, DVector};

    fn small_outcome() -> (ProtocolConfig, ProtocolOutcome) {
        let net = parse_case(
            r#"{
                "base_mva": 100.0,
                "buses": [
                    {"id": 1, "class": "slack", "v": 1.0, "theta": 0.0},
                    {"id": 2, "class": "pq", "p": -0.3, "q": -0.1},
                    {"id": 3, "class": "uncertain"}
                ],
                "branches": [
                    {"from": 1, "to": 2, "r": 0.01, "x": 0.1, "b": 0.0},
                    {"from": 2, "to": 3, "r": 0.02, "x": 0.2, "b": 0.02}
                ],
                "regions": {"1": 1, "2": 1, "3": 1}
            }"#,
        )
        .unwrap();
        let injection = Gmm::new(
            vec![1.0],
            vec![DVector::from_row_slice(&[0.25, 0.04])],
            vec![DMatrix::from_row_slice(2, 2, &[3e-3, 2e-4, 2e-4, 1e-4])],
        )
        .unwrap();
        let graph = CommGraph::new(1, &[]).unwrap();
        let cfg = ProtocolConfig::default();
        let out = run_distributed_plf(
            &net,
            &graph,
            &injection,
            &ObservationSource::Gmm(&injection),
            &cfg,
        )
        .unwrap();
        (cfg, out)
    }

    #[test]
    fn sha256_matches_the_known_test_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn agent_files_round_trip_through_json() {
        let (cfg, out) = small_outcome();
        let files = agent_files(&out);
        assert_eq!(files.len(), 1);
        assert_eq!(files[0].region, 1);
        assert_eq!(files[0].gamma.len(), files[0].theta_indices.len());
        let text = serde_json::to_string_pretty(&files[0]).unwrap();
        let back: AgentFile = serde_json::from_str(&text).unwrap();
        assert_eq!(files[0], back);

        let summary = run_summary(&cfg, &out);
        assert_eq!(summary.regions, 1);
        assert_eq!(summary.message_counts.len(), 0); // single agent: no traffic
        assert!(summary.warnings.iter().any(|w| w.contains("single-region")));
        let text = serde_json::to_string_pretty(&summary).unwrap();
        let back: RunSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(summary, back);
    }

    #[test]
    fn output_writer_tracks_hashes_and_sorts_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = OutputWriter::new(dir.path().join("out")).unwrap();
        w.write("b.json", b"{\"x\":1}").unwrap();
        w.write("a.json", b"hello").unwrap();
        w.write_untracked("timings.json", b"{\"seconds\":0.5}").unwrap();
        let manifest = w.finish().unwrap();

        assert_eq!(manifest.files.len(), 2);
        assert_eq!(manifest.files[0].path, "a.json");
        assert_eq!(manifest.files[1].path, "b.json");
        for entry in &manifest.files {
            let bytes = std::fs::read(dir.path().join("out").join(&entry.path)).unwrap();
            assert_eq!(sha256_hex(&bytes), entry.sha256);
        }
        // The manifest exists on disk, lists neither itself nor untracked
        // files, and parses back to the same index.
        let text = std::fs::read(dir.path().join("out/manifest.json")).unwrap();
        let back: Manifest = serde_json::from_slice(&text).unwrap();
        assert_eq!(back, manifest);
        assert!(dir.path().join("out/timings.json").exists());
        assert!(!back.files.iter().any(|f| f.path.contains("manifest")));
        assert!(!back.files.iter().any(|f| f.path.contains("timings")));
    }

    #[test]
    fn comparison_csv_renders_regions_and_blank_optionals() {
        let report = ComparisonReport {
            regions: vec![
                RegionMetrics {
                    region: 1,
                    jsd_angle_avg: 1e-6,
                    jsd_angle_max: 2e-6,
                    jsd_voltage_avg: 3e-6,
                    jsd_voltage_max: 4e-6,
                    jsd_flow_avg: Some(5e-6),
                    jsd_flow_max: Some(6e-6),
                    jsd_avg: 2.5e-6,
                    jsd_max: 6e-6,
                    mean_rel_err_avg: 1e-7,
                    apc_rel_err: 1e-8,
                    mc_angle_rel_err_avg: Some(1e-4),
                    mc_voltage_rel_err_avg: Some(2e-4),
                    mc_flow_rel_err_avg: Some(3e-4),
                },
                RegionMetrics {
                    region: 2,
                    jsd_angle_avg: 0.0,
                    jsd_angle_max: 0.0,
                    jsd_voltage_avg: 0.0,
                    jsd_voltage_max: 0.0,
                    jsd_flow_avg: None,
                    jsd_flow_max: None,
                    jsd_avg: 0.0,
                    jsd_max: 0.0,
                    mean_rel_err_avg: 0.0,
                    apc_rel_err: 0.0,
                    mc_angle_rel_err_avg: None,
                    mc_voltage_rel_err_avg: None,
                    mc_flow_rel_err_avg: None,
                },
            ],
            apc_rel_err_avg: 5e-9,
            mc: Some(McErrors {
                angle_mean_rel_err_avg: 1e-4,
                voltage_mean_rel_err_avg: 2e-4,
                flow_mean_rel_err_avg: 3e-4,
            }),
            jsd_samples: 1000,
            seed: 1,
            runtimes: Runtimes::default(),
        };
        let text = comparison_csv(&report).unwrap();
        let lines: Vec<&str> = text.trim_end().lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("region,jsd_angle_avg"));
        assert!(lines[1].starts_with("1,0.000001,"));
        // Optional metrics render as empty cells.
        assert!(lines[2].contains(",,"));
    }
}
