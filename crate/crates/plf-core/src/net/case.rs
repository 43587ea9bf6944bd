//! Case file schema, parsing and validation.
//!
//! A case is a single JSON document:
//!
//! ```json
//! {
//!   "base_mva": 100.0,
//!   "buses":    [ {"id": 1, "class": "slack", "v": 1.02, ...}, ... ],
//!   "branches": [ {"from": 1, "to": 2, "r": 0.01, "x": 0.1, "b": 0.02}, ... ],
//!   "regions":  { "1": 1, "2": 1, "3": 2, ... }
//! }
//! ```
//!
//! All electrical quantities are per unit on `base_mva`. `p`/`q` are net
//! injections (generation minus load). Unknown keys anywhere in the document
//! are rejected so that typos fail loudly instead of silently defaulting.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusClass {
    /// Reference bus: fixed voltage magnitude and angle.
    Slack,
    /// Generator bus: fixed active injection and voltage magnitude.
    Pv,
    /// Load bus: fixed active and reactive injection.
    Pq,
    /// Structurally a PQ bus, but its injection is a random variable
    /// (wind farm); the deterministic `p`/`q` fields are ignored.
    Uncertain,
}

fn default_v() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    pub class: BusClass,
    /// Net active injection, p.u.
    #[serde(default)]
    pub p: f64,
    /// Net reactive injection, p.u.
    #[serde(default)]
    pub q: f64,
    /// Voltage magnitude setpoint, p.u. (used for slack and PV buses).
    #[serde(default = "default_v")]
    pub v: f64,
    /// Voltage angle setpoint, rad (used for the slack bus).
    #[serde(default)]
    pub theta: f64,
    /// Shunt conductance, p.u.
    #[serde(default)]
    pub gs: f64,
    /// Shunt susceptance, p.u.
    #[serde(default)]
    pub bs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// Series resistance, p.u.
    #[serde(default)]
    pub r: f64,
    /// Series reactance, p.u. (must be nonzero).
    pub x: f64,
    /// Total line-charging susceptance, p.u.
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    /// Bus id -> region index (1-based, contiguous).
    regions: BTreeMap<String, usize>,
}

/// A validated network: buses sorted by id, branches as given, plus the
/// region assignment from the case file.
#[derive(Debug, Clone)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    /// Bus id -> region index, re-based to 0..h.
    pub region_of: BTreeMap<u32, usize>,
    /// Number of regions.
    pub h: usize,
    index: HashMap<u32, usize>,
}

impl Network {
    /// Position of a bus id in `buses`.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.bus_index(id).map(|i| &self.buses[i])
    }

    /// Buses of a class, ascending by id.
    pub fn buses_of(&self, class: BusClass) -> Vec<&Bus> {
        self.buses.iter().filter(|b| b.class == class).collect()
    }

    pub fn slack(&self) -> &Bus {
        self.buses
            .iter()
            .find(|b| b.class == BusClass::Slack)
            .expect("validated network has a slack bus")
    }
}

/// Parse and validate a case document.
pub fn parse_case(json: &str) -> Result<Network> {
    let file: CaseFile = serde_json::from_str(json).map_err(|e| Error::Syntax {
        what: "case file".into(),
        source: e,
    })?;
    build_network(file)
}

fn build_network(file: CaseFile) -> Result<Network> {
    if !(file.base_mva.is_finite() && file.base_mva > 0.0) {
        return Err(Error::invalid("case file", "base_mva must be positive"));
    }
    if file.buses.len() < 2 {
        return Err(Error::invalid("case file", "at least two buses required"));
    }

    let mut buses = file.buses;
    buses.sort_by_key(|b| b.id);
    let mut index = HashMap::new();
    for (i, bus) in buses.iter().enumerate() {
        if index.insert(bus.id, i).is_some() {
            return Err(Error::DuplicateBus(bus.id));
        }
        if !(bus.v.is_finite() && bus.v > 0.0) {
            return Err(Error::invalid(
                "case file",
                format!("bus {} has non-positive voltage setpoint", bus.id),
            ));
        }
        for (name, value) in [
            ("p", bus.p),
            ("q", bus.q),
            ("theta", bus.theta),
            ("gs", bus.gs),
            ("bs", bus.bs),
        ] {
            if !value.is_finite() {
                return Err(Error::invalid(
                    "case file",
                    format!("bus {} has non-finite {name}", bus.id),
                ));
            }
        }
    }

    let slack_count = buses.iter().filter(|b| b.class == BusClass::Slack).count();
    if slack_count != 1 {
        return Err(Error::SlackCount(slack_count));
    }

    for br in &file.branches {
        if br.x == 0.0 {
            return Err(Error::ZeroReactance {
                from: br.from,
                to: br.to,
            });
        }
        if !(br.r.is_finite() && br.x.is_finite() && br.b.is_finite()) || br.r < 0.0 {
            return Err(Error::invalid(
                "case file",
                format!("branch {}-{} has invalid parameters", br.from, br.to),
            ));
        }
        if br.from == br.to {
            return Err(Error::invalid(
                "case file",
                format!("branch {0}-{0} is a self-loop", br.from),
            ));
        }
        for id in [br.from, br.to] {
            if !index.contains_key(&id) {
                return Err(Error::UnknownBus(id));
            }
        }
    }

    // Connectivity from the slack bus; a disconnected island has no angle
    // reference and makes the DLPF matrix singular.
    let n = buses.len();
    let mut adj = vec![Vec::new(); n];
    for br in &file.branches {
        let f = index[&br.from];
        let t = index[&br.to];
        adj[f].push(t);
        adj[t].push(f);
    }
    let slack_pos = buses
        .iter()
        .position(|b| b.class == BusClass::Slack)
        .unwrap();
    let mut seen = vec![false; n];
    let mut stack = vec![slack_pos];
    seen[slack_pos] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Disconnected(buses[i].id));
    }

    // Region map: every bus covered exactly once, labels contiguous from 1.
    let mut region_of = BTreeMap::new();
    let mut labels = HashSet::new();
    for (key, &label) in &file.regions {
        let id: u32 = key.parse().map_err(|_| {
            Error::invalid("case file", format!("region key {key:?} is not a bus id"))
        })?;
        if !index.contains_key(&id) {
            return Err(Error::invalid(
                "case file",
                format!("region map mentions unknown bus {id}"),
            ));
        }
        if label == 0 {
            return Err(Error::invalid("case file", "region labels are 1-based"));
        }
        labels.insert(label);
        region_of.insert(id, label - 1);
    }
    for bus in &buses {
        if !region_of.contains_key(&bus.id) {
            return Err(Error::UncoveredBus(bus.id));
        }
    }
    let h = labels.len();
    if h == 0 || labels.iter().max() != Some(&h) {
        return Err(Error::invalid(
            "case file",
            "region labels must be contiguous 1..=H",
        ));
    }

    Ok(Network {
        base_mva: file.base_mva,
        buses,
        branches: file.branches,
        region_of,
        h,
        index,
    })
}
