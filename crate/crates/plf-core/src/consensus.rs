//! Agent communication graph, consensus weight matrices, and the
//! noise-masked accelerated average consensus (AAC) primitive.
//!
//! All inter-agent traffic in the higher-level solvers flows through
//! [`aac_run`]: each round every agent publishes a masked value
//! `y⁺_i(t) = y_i(t) + δ_i(t) − δ_i(t−1)` (with `δ_i(−1) = 0`) and mixes the
//! masked values it receives with the accelerated Metropolis weights. The
//! telescoping mask keeps the network-wide sum within a geometrically
//! vanishing band of the true sum while every individual published value
//! stays perturbed, so honest-but-curious neighbors never observe raw state.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on consensus rounds derived from a tolerance.
pub const MAX_ROUNDS: usize = 100_000;
/// Detailed audit records retained before truncation (counts stay exact).
const AUDIT_RECORD_CAP: usize = 1_000_000;

/// Undirected agent communication topology. Agent ids are 0-based
/// internally; the JSON file format and human-facing reports are 1-based.
#[derive(Debug, Clone)]
pub struct CommGraph {
    h: usize,
    neighbors: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    h: usize,
    edges: Vec<(usize, usize)>,
}

impl CommGraph {
    /// Build a graph on `h` nodes from 1-based undirected edges.
    pub fn new(h: usize, edges_1based: &[(usize, usize)]) -> Result<Self> {
        if h == 0 {
            return Err(Error::invalid("comm graph", "node count must be ≥ 1"));
        }
        let mut edges = Vec::with_capacity(edges_1based.len());
        for &(a, b) in edges_1based {
            if a == 0 || b == 0 || a > h || b > h {
                return Err(Error::invalid(
                    "comm graph",
                    format!("edge ({a},{b}) references a node outside 1..={h}"),
                ));
            }
            if a == b {
                return Err(Error::invalid(
                    "comm graph",
                    format!("self-loop on node {a}"),
                ));
            }
            let (lo, hi) = if a < b { (a - 1, b - 1) } else { (b - 1, a - 1) };
            edges.push((lo, hi));
        }
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("comm graph", "duplicate edge"));
        }
        let mut neighbors = vec![Vec::new(); h];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self { h, neighbors, edges })
    }

    /// Parse the JSON graph format `{"h": H, "edges": [[i,j],...]}` (1-based).
    pub fn parse(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text).map_err(|source| Error::Syntax {
            what: "graph file".into(),
            source,
        })?;
        Self::new(file.h, &file.edges)
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Sorted 0-based neighbor list of node `i` (its open neighborhood).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Undirected edges as 0-based pairs with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.h];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut found = 1;
        while let Some(i) = stack.pop() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    found += 1;
                    stack.push(j);
                }
            }
        }
        found == self.h
    }

    /// Report-style validation: connectivity plus the neighborhood
    /// non-containment condition that masking relies on.
    pub fn validate(&self) -> GraphReport {
        let mut violations = Vec::new();
        for &(i, j) in &self.edges {
            // `observer` sees every message published by its neighbors and by
            // itself. If that view covers all of `agent`'s counterparties,
            // the observer can reconstruct the agent's telescoped mask.
            let mut check = |agent: usize, observer: usize| {
                let covered = self.neighbors[agent]
                    .iter()
                    .all(|&n| n == observer || self.neighbors[observer].contains(&n));
                if covered {
                    violations.push((agent + 1, observer + 1));
                }
            };
            check(i, j);
            check(j, i);
        }
        violations.sort_unstable();
        GraphReport {
            connected: self.is_connected(),
            containment_violations: violations,
        }
    }
}

/// Outcome of [`CommGraph::validate`]. `containment_violations` lists 1-based
/// `(agent, observer)` pairs where every counterparty of `agent` is visible
/// to `observer`, so the noise mask gives `agent` no cover against it.
#[derive(Debug, Clone, Serialize)]
pub struct GraphReport {
    pub connected: bool,
    pub containment_violations: Vec<(usize, usize)>,
}

impl GraphReport {
    pub fn is_ok(&self) -> bool {
        self.connected && self.containment_violations.is_empty()
    }
}

/// Metropolis and accelerated weight matrices of a communication graph.
#[derive(Debug, Clone)]
pub struct WeightMatrices {
    pub w: DMatrix<f64>,
    pub w_star: DMatrix<f64>,
    pub epsilon: f64,
    pub iota_min: f64,
    pub iota_2: f64,
}

impl WeightMatrices {
    /// Convenience constructor: Metropolis weights plus acceleration.
    pub fn for_graph(g: &CommGraph) -> Result<Self> {
        accelerate(&metropolis(g))
    }

    /// Second-largest absolute eigenvalue of `w_star`: the per-round
    /// contraction factor on the disagreement subspace.
    pub fn lambda2_star(&self) -> f64 {
        let a = (1.0 + self.epsilon) * self.iota_2 - self.epsilon;
        let b = (1.0 + self.epsilon) * self.iota_min - self.epsilon;
        a.abs().max(b.abs())
    }
}

/// Metropolis weights: `W_ij = 1/(1 + max(d_i, d_j))` on edges, diagonal
/// `1 − Σ_j W_ij`, zero elsewhere. Symmetric and doubly stochastic.
pub fn metropolis(g: &CommGraph) -> DMatrix<f64> {
    let h = g.h();
    let mut w = DMatrix::zeros(h, h);
    for &(i, j) in g.edges() {
        let v = 1.0 / (1.0 + g.degree(i).max(g.degree(j)) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..h {
        let off: f64 = w.row(i).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// Optimal one-parameter acceleration of a Metropolis matrix:
/// `ε = (ι_min + ι₂)/(2 − ι_min − ι₂)`, `W* = (1+ε)W − εI`. The scaling
/// centers the non-consensus spectrum so both extreme eigenvalues contract
/// at the same rate.
pub fn accelerate(w: &DMatrix<f64>) -> Result<WeightMatrices> {
    let h = w.nrows();
    if h != w.ncols() || h == 0 {
        return Err(Error::invalid("consensus weights", "weight matrix must be square"));
    }
    if h == 1 {
        // Single agent: the disagreement subspace is empty. Record the
        // spectrum bounds as 0 so the contraction factor is 0 (one round).
        return Ok(WeightMatrices {
            w: w.clone(),
            w_star: w.clone(),
            epsilon: 0.0,
            iota_min: 0.0,
            iota_2: 0.0,
        });
    }
    let eig = nalgebra::SymmetricEigen::try_new(w.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Singular {
            what: "consensus weight eigendecomposition".into(),
            cond: f64::INFINITY,
        })?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let iota_2 = values[1];
    let iota_min = *values.last().unwrap();
    if iota_2 > 1.0 - 1e-9 {
        return Err(Error::invalid(
            "consensus weights",
            "disagreement eigenvalue is 1; communication graph is disconnected",
        ));
    }
    let epsilon = (iota_min + iota_2) / (2.0 - iota_min - iota_2);
    let mut w_star = w * (1.0 + epsilon);
    for i in 0..h {
        w_star[(i, i)] -= epsilon;
    }
    Ok(WeightMatrices {
        w: w.clone(),
        w_star,
        epsilon,
        iota_min,
        iota_2,
    })
}

/// Round count needed to shrink the disagreement below `tol`:
/// the smallest `T` with `λ₂*^T / (1 − λ₂*) ≤ tol`, clamped to
/// `[1, MAX_ROUNDS]`.
pub fn rounds_for_tolerance(tol: f64, lambda2_star: f64) -> usize {
    if !(tol > 0.0) || !lambda2_star.is_finite() {
        return MAX_ROUNDS;
    }
    if lambda2_star <= 0.0 {
        return 1;
    }
    if lambda2_star >= 1.0 {
        return MAX_ROUNDS;
    }
    let target = tol * (1.0 - lambda2_star);
    if target >= 1.0 {
        return 1;
    }
    let t = target.ln() / lambda2_star.ln();
    (t.ceil() as usize).clamp(1, MAX_ROUNDS)
}

/// Round count for a **masked** run to reach `tol`: on top of the mixing
/// requirement, the telescoped mask residue `10·ϱ·ς^T/(1−ς)` must also fall
/// below `tol`, since every run starts its noise schedule at full scale.
pub fn rounds_for_masked_tolerance(tol: f64, lambda2_star: f64, ns: &NoiseSchedule) -> usize {
    let t_mix = rounds_for_tolerance(tol, lambda2_star);
    if ns.rho <= 0.0 || ns.decay <= 0.0 || !(tol > 0.0) {
        return t_mix;
    }
    let target = tol * (1.0 - ns.decay) / (10.0 * ns.rho);
    let t_mask = if target >= 1.0 {
        1
    } else {
        (target.ln() / ns.decay.ln()).ceil() as usize
    };
    t_mix.max(t_mask).clamp(1, MAX_ROUNDS)
}

/// Masking noise law: at round `t` agent `i` draws `δ_i(t)` entrywise
/// uniform on `[−ϱ/2·ς^{t+1}, +ϱ/2·ς^{t+1}]` from a private stream keyed by
/// `(seed, run_tag, agent)`. `rho = 0` disables masking (used by oracles).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub rho: f64,
    pub decay: f64,
    pub seed: u64,
    /// Distinguishes independent AAC invocations within one protocol run so
    /// no noise stream is ever reused across stages.
    pub run_tag: u64,
}

impl NoiseSchedule {
    pub fn new(rho: f64, decay: f64, seed: u64, run_tag: u64) -> Result<Self> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::invalid("noise schedule", "rho must be finite and ≥ 0"));
        }
        if !decay.is_finite() || !(0.0..1.0).contains(&decay) {
            return Err(Error::invalid(
                "noise schedule",
                "sigma decay must lie in [0, 1)",
            ));
        }
        Ok(Self { rho, decay, seed, run_tag })
    }

    /// Zero-noise schedule for oracle and reference runs.
    pub fn zero(seed: u64) -> Self {
        Self { rho: 0.0, decay: 0.5, seed, run_tag: 0 }
    }

    pub fn with_tag(self, run_tag: u64) -> Self {
        Self { run_tag, ..self }
    }

    fn agent_rng(&self, agent: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(stream_key(self.seed, self.run_tag, agent as u64))
    }
}

/// FNV-1a over the three key words; gives each (seed, run_tag, agent)
/// combination an independent generator seed.
pub(crate) fn stream_key(seed: u64, run_tag: u64, agent: u64) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for word in [seed, run_tag, agent] {
        for byte in word.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum MessageKind {
    /// A masked consensus value `y⁺` exchanged during an AAC round.
    MaskedConsensus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageRecord {
    pub from: usize,
    pub to: usize,
    pub round: usize,
    pub kind: MessageKind,
}

/// Ledger of every inter-agent message the simulator routed. Counts per
/// message kind are always exact; the detailed record list is capped so long
/// runs stay bounded in memory.
#[derive(Debug, Default, Clone)]
pub struct MessageAudit {
    counts: BTreeMap<MessageKind, u64>,
    records: Vec<MessageRecord>,
    truncated: bool,
}

impl MessageAudit {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&mut self, rec: MessageRecord) {
        *self.counts.entry(rec.kind).or_insert(0) += 1;
        if self.records.len() < AUDIT_RECORD_CAP {
            self.records.push(rec);
        } else {
            self.truncated = true;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn count_of(&self, kind: MessageKind) -> u64 {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    /// Distinct message kinds that crossed agent boundaries.
    pub fn kinds(&self) -> Vec<MessageKind> {
        self.counts.keys().copied().collect()
    }

    /// Detailed records (capped; see [`MessageAudit::is_truncated`]).
    pub fn records(&self) -> &[MessageRecord] {
        &self.records
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }
}

/// Run `rounds` rounds of noise-masked accelerated average consensus.
///
/// `y0` holds one equally-shaped matrix per agent; the result is each
/// agent's final iterate, which approaches the entrywise mean of the initial
/// values. Only masked values move between agents, and every transmission is
/// recorded in `audit`.
pub fn aac_run(
    y0: &[DMatrix<f64>],
    graph: &CommGraph,
    wm: &WeightMatrices,
    ns: &NoiseSchedule,
    rounds: usize,
    audit: &mut MessageAudit,
) -> Result<Vec<DMatrix<f64>>> {
    let h = graph.h();
    if y0.len() != h {
        return Err(Error::Dimension {
            what: "aac initial values".into(),
            expected: h,
            got: y0.len(),
        });
    }
    if wm.w_star.nrows() != h {
        return Err(Error::Dimension {
            what: "aac weight matrix".into(),
            expected: h,
            got: wm.w_star.nrows(),
        });
    }
    if rounds < 1 {
        return Err(Error::invalid("aac", "round count must be ≥ 1"));
    }
    let (r, c) = (y0[0].nrows(), y0[0].ncols());
    for m in y0 {
        if m.nrows() != r || m.ncols() != c {
            return Err(Error::invalid("aac", "initial values must share one shape"));
        }
    }

    let mut rngs: Vec<ChaCha8Rng> = (0..h).map(|i| ns.agent_rng(i)).collect();
    let mut y: Vec<DMatrix<f64>> = y0.to_vec();
    let mut prev_delta: Vec<DMatrix<f64>> = vec![DMatrix::zeros(r, c); h];
    let mut published: Vec<DMatrix<f64>> = vec![DMatrix::zeros(r, c); h];

    for t in 0..rounds {
        let scale = 0.5 * ns.rho * ns.decay.powi(t as i32 + 1);
        for i in 0..h {
            let mut delta = DMatrix::zeros(r, c);
            if scale > 0.0 {
                for e in delta.iter_mut() {
                    *e = rngs[i].random_range(-scale..=scale);
                }
            }
            published[i] = &y[i] + &delta - &prev_delta[i];
            prev_delta[i] = delta;
        }
        for &(i, j) in graph.edges() {
            audit.record(MessageRecord {
                from: i,
                to: j,
                round: t,
                kind: MessageKind::MaskedConsensus,
            });
            audit.record(MessageRecord {
                from: j,
                to: i,
                round: t,
                kind: MessageKind::MaskedConsensus,
            });
        }
        for i in 0..h {
            let mut next = &published[i] * wm.w_star[(i, i)];
            for &j in graph.neighbors(i) {
                next += &published[j] * wm.w_star[(i, j)];
            }
            y[i] = next;
        }
    }
    Ok(y)
}
