//! Decoupled linearized power flow (DLPF) assembly.
//!
//! Buses fall into four classes: the slack bus R (known angle and voltage),
//! PV buses S (known active injection and voltage), PQ buses L (known active
//! and reactive injection) and uncertain buses W (structurally PQ, but their
//! injection is a random variable). With the standard bus admittance matrix
//! `Y = G + jB` (B' is B rebuilt without line charging and bus shunts), the
//! linearized balance equations are
//!
//! ```text
//!   P = -B'·theta + G·V
//!   Q = -G·theta  - B·V
//! ```
//!
//! Collecting the unknowns `x = [theta_S, theta_L, theta_W, V_L, V_W]` on the
//! left and the known slack/PV setpoints on the right yields the square system
//! `A·x = b` assembled here. The right-hand side separates into a constant
//! part (`rhs_base`, which includes the slack/PV coupling terms for every row)
//! plus the uncertain injections added at the W rows (`wp_rows`/`wq_rows`),
//! so `b = rhs_base + scatter(P_W, Q_W)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Bus, BusClass, Network};

/// Condition-number ceiling above which the assembled system is rejected.
const COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Angle,
    Voltage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Active,
    Reactive,
}

/// One entry of the state vector `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateVar {
    pub bus: u32,
    pub kind: StateKind,
}

/// One row of the balance equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowVar {
    pub bus: u32,
    pub kind: RowKind,
}

/// The assembled linear system together with its index maps.
#[derive(Debug, Clone)]
pub struct DlpfSystem {
    /// Meaning of each state entry, in the fixed order
    /// `[theta_S, theta_L, theta_W, V_L, V_W]`, ascending bus id per block.
    pub state_order: Vec<StateVar>,
    /// Meaning of each row, `[P_S, P_L, P_W, Q_L, Q_W]`, same bus order.
    pub row_order: Vec<RowVar>,
    /// N x N coefficient matrix.
    pub a_matrix: DMatrix<f64>,
    /// Constant part of the right-hand side (setpoint coupling included).
    pub rhs_base: DVector<f64>,
    /// Row indices receiving the uncertain active injections, one per W bus
    /// (ascending bus id).
    pub wp_rows: Vec<usize>,
    /// Row indices receiving the uncertain reactive injections.
    pub wq_rows: Vec<usize>,
    /// Uncertain bus ids, ascending.
    pub w_buses: Vec<u32>,
    /// 2-norm condition number of `a_matrix`.
    pub cond: f64,
    state_col: HashMap<(u32, StateKind), usize>,
    row_index: HashMap<(u32, RowKind), usize>,
}

impl DlpfSystem {
    /// State dimension N = |S| + 2|L| + 2|W|.
    pub fn n(&self) -> usize {
        self.state_order.len()
    }

    /// Number of uncertain buses M.
    pub fn m(&self) -> usize {
        self.w_buses.len()
    }

    /// Column of a bus state, if that state is unknown (slack angle/voltage
    /// and PV voltages are setpoints, not states).
    pub fn state_col(&self, bus: u32, kind: StateKind) -> Option<usize> {
        self.state_col.get(&(bus, kind)).copied()
    }

    /// Row of a bus balance equation, if assembled.
    pub fn row_index(&self, bus: u32, kind: RowKind) -> Option<usize> {
        self.row_index.get(&(bus, kind)).copied()
    }

    /// Right-hand side for given uncertain injections.
    pub fn rhs_for(&self, pw: &DVector<f64>, qw: &DVector<f64>) -> Result<DVector<f64>> {
        if pw.len() != self.m() || qw.len() != self.m() {
            return Err(Error::Dimension {
                what: "uncertain injection vector".into(),
                expected: self.m(),
                got: if pw.len() != self.m() {
                    pw.len()
                } else {
                    qw.len()
                },
            });
        }
        let mut b = self.rhs_base.clone();
        for (m, &row) in self.wp_rows.iter().enumerate() {
            b[row] += pw[m];
        }
        for (m, &row) in self.wq_rows.iter().enumerate() {
            b[row] += qw[m];
        }
        Ok(b)
    }

    /// Solve the deterministic system at fixed uncertain injections.
    pub fn solve(&self, pw: &DVector<f64>, qw: &DVector<f64>) -> Result<DVector<f64>> {
        let b = self.rhs_for(pw, qw)?;
        let lu = self.a_matrix.clone().lu();
        lu.solve(&b).ok_or(Error::Singular {
            what: "DLPF matrix".into(),
            cond: self.cond,
        })
    }
}

/// Dense G / B / B' admittance matrices over all buses.
struct Admittance {
    g: DMatrix<f64>,
    b: DMatrix<f64>,
    bp: DMatrix<f64>,
}

fn admittance(net: &Network) -> Admittance {
    let n = net.buses.len();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    let mut bp = DMatrix::zeros(n, n);
    for br in &net.branches {
        let f = net.bus_index(br.from).expect("validated branch endpoint");
        let t = net.bus_index(br.to).expect("validated branch endpoint");
        let den = br.r * br.r + br.x * br.x;
        let gs = br.r / den;
        let bs = -br.x / den;
        g[(f, f)] += gs;
        g[(t, t)] += gs;
        g[(f, t)] -= gs;
        g[(t, f)] -= gs;
        for mat in [&mut b, &mut bp] {
            mat[(f, f)] += bs;
            mat[(t, t)] += bs;
            mat[(f, t)] -= bs;
            mat[(t, f)] -= bs;
        }
        // Line charging contributes only to the shunt-bearing matrix B.
        b[(f, f)] += br.b / 2.0;
        b[(t, t)] += br.b / 2.0;
    }
    for bus in &net.buses {
        let i = net.bus_index(bus.id).unwrap();
        g[(i, i)] += bus.gs;
        b[(i, i)] += bus.bs;
    }
    Admittance { g, b, bp }
}

fn class_ids(net: &Network, class: BusClass) -> Vec<u32> {
    net.buses
        .iter()
        .filter(|b| b.class == class)
        .map(|b| b.id)
        .collect()
}

/// Assemble the DLPF system for a validated network.
///
/// Fails with [`Error::Singular`] if the coefficient matrix is singular or
/// its condition number exceeds `1e12`.
pub fn assemble_dlpf(net: &Network) -> Result<DlpfSystem> {
    let adm = admittance(net);
    let s_ids = class_ids(net, BusClass::Pv);
    let l_ids = class_ids(net, BusClass::Pq);
    let w_ids = class_ids(net, BusClass::Uncertain);
    let n = s_ids.len() + 2 * l_ids.len() + 2 * w_ids.len();
    if n == 0 {
        return Err(Error::invalid(
            "network",
            "no PV, PQ or uncertain bus: nothing to solve",
        ));
    }

    let mut state_order = Vec::with_capacity(n);
    for &id in s_ids.iter().chain(&l_ids).chain(&w_ids) {
        state_order.push(StateVar {
            bus: id,
            kind: StateKind::Angle,
        });
    }
    for &id in l_ids.iter().chain(&w_ids) {
        state_order.push(StateVar {
            bus: id,
            kind: StateKind::Voltage,
        });
    }
    let mut row_order = Vec::with_capacity(n);
    for &id in s_ids.iter().chain(&l_ids).chain(&w_ids) {
        row_order.push(RowVar {
            bus: id,
            kind: RowKind::Active,
        });
    }
    for &id in l_ids.iter().chain(&w_ids) {
        row_order.push(RowVar {
            bus: id,
            kind: RowKind::Reactive,
        });
    }

    let state_col: HashMap<_, _> = state_order
        .iter()
        .enumerate()
        .map(|(c, s)| ((s.bus, s.kind), c))
        .collect();
    let row_index: HashMap<_, _> = row_order
        .iter()
        .enumerate()
        .map(|(r, v)| ((v.bus, v.kind), r))
        .collect();

    // Known setpoints: slack angle/voltage, PV voltages.
    let slack = net.slack();
    let setpoint = |bus: &Bus, kind: StateKind| -> Option<f64> {
        match (bus.class, kind) {
            (BusClass::Slack, StateKind::Angle) => Some(bus.theta),
            (BusClass::Slack, StateKind::Voltage) => Some(bus.v),
            (BusClass::Pv, StateKind::Voltage) => Some(bus.v),
            _ => None,
        }
    };
    let _ = slack;

    let mut a = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (r, rv) in row_order.iter().enumerate() {
        let i = net.bus_index(rv.bus).unwrap();
        let injection = {
            let bus = net.bus(rv.bus).unwrap();
            match (bus.class, rv.kind) {
                // Uncertain injections enter separately through wp/wq rows.
                (BusClass::Uncertain, _) => 0.0,
                (_, RowKind::Active) => bus.p,
                (_, RowKind::Reactive) => bus.q,
            }
        };
        rhs[r] = injection;
        for (j, other) in net.buses.iter().enumerate() {
            // Coefficients of the full-network balance equation at bus i:
            //   P_i: -B'[i,j]·theta_j + G[i,j]·V_j
            //   Q_i: -G[i,j]·theta_j  - B[i,j]·V_j
            // Unknown states go into A; known setpoints move to the rhs.
            let (ang_coef, volt_coef) = match rv.kind {
                RowKind::Active => (-adm.bp[(i, j)], adm.g[(i, j)]),
                RowKind::Reactive => (-adm.g[(i, j)], -adm.b[(i, j)]),
            };
            for (kind, coef) in [(StateKind::Angle, ang_coef), (StateKind::Voltage, volt_coef)] {
                if coef == 0.0 {
                    continue;
                }
                if let Some(&c) = state_col.get(&(other.id, kind)) {
                    a[(r, c)] += coef;
                } else if let Some(value) = setpoint(other, kind) {
                    rhs[r] -= coef * value;
                }
                // Slack/PV angles and voltages not covered by `setpoint` do
                // not occur: every bus state is either unknown or a setpoint.
            }
        }
    }

    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::Singular {
            what: "DLPF matrix".into(),
            cond,
        });
    }

    let wp_rows: Vec<usize> = w_ids.iter().map(|&id| row_index[&(id, RowKind::Active)]).collect();
    let wq_rows: Vec<usize> = w_ids
        .iter()
        .map(|&id| row_index[&(id, RowKind::Reactive)])
        .collect();

    Ok(DlpfSystem {
        state_order,
        row_order,
        a_matrix: a,
        rhs_base: rhs,
        wp_rows,
        wq_rows,
        w_buses: w_ids,
        cond,
        state_col,
        row_index,
    })
}
