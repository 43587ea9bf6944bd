//! Centralized references and comparison metrics.
//!
//! Everything the distributed protocol produces can be recomputed directly
//! when one process is allowed to see the whole network: the sensitivities
//! come from columns of `A⁻¹`, the constant term from one linear solve, and
//! the output mixtures from exact affine propagation. This module provides
//! those references, a plain Monte-Carlo solver over the same linear model,
//! and the report comparing all three.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dplf::{build_b_block, solve_lambda, AugmentedPlan, LambdaDecomposition, ProtocolOutcome};
use crate::error::{Error, Result};
use crate::gmm::{jsd, transform, AffineMap, Gmm};
use crate::net::{
    assemble_dlpf, partition_system, BusClass, DlpfSystem, Network, RegionPartition, StateKind,
};

/// Minimum scenario count for the Monte-Carlo solver.
pub const MC_MIN_SCENARIOS: usize = 1000;

// ---------------------------------------------------------------------------
// Centralized PLF
// ---------------------------------------------------------------------------

/// Sensitivities of all states to the uncertain injections, computed by
/// direct inversion: `x = α·P_W + β·Q_W + γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedPlf {
    /// N×M columns of A⁻¹ at the active wind rows.
    pub alpha: DMatrix<f64>,
    /// N×M columns of A⁻¹ at the reactive wind rows.
    pub beta: DMatrix<f64>,
    /// Constant term A⁻¹·rhs_base.
    pub gamma: DVector<f64>,
}

/// Direct-inversion sensitivities of the assembled system.
pub fn centralized_sensitivities(sys: &DlpfSystem) -> Result<CentralizedPlf> {
    let n = sys.n();
    let m = sys.m();
    let lu = sys.a_matrix.clone().lu();
    let gamma = lu
        .solve(&sys.rhs_base)
        .ok_or(Error::Singular { what: "system matrix".into(), cond: sys.cond })?;
    // Solve for the needed inverse columns in one shot: A·Y = E where E
    // selects the wind rows.
    let mut e = DMatrix::zeros(n, 2 * m);
    for (w, &row) in sys.wp_rows.iter().enumerate() {
        e[(row, w)] = 1.0;
    }
    for (w, &row) in sys.wq_rows.iter().enumerate() {
        e[(row, m + w)] = 1.0;
    }
    let y = lu
        .solve(&e)
        .ok_or(Error::Singular { what: "system matrix".into(), cond: sys.cond })?;
    Ok(CentralizedPlf {
        alpha: y.columns(0, m).into_owned(),
        beta: y.columns(m, m).into_owned(),
        gamma,
    })
}

/// Centralized output mixture over the given state rows.
pub fn centralized_plf(sys: &DlpfSystem, injection: &Gmm, rows: &[usize]) -> Result<Gmm> {
    let sens = centralized_sensitivities(sys)?;
    regional_gmm(&sens, injection, rows)
}

/// Affine image of the injection mixture restricted to `rows`.
pub fn regional_gmm(sens: &CentralizedPlf, injection: &Gmm, rows: &[usize]) -> Result<Gmm> {
    let m = sens.alpha.ncols();
    if injection.dim() != 2 * m {
        return Err(Error::Dimension {
            what: "injection mixture dimension".into(),
            expected: 2 * m,
            got: injection.dim(),
        });
    }
    let linear = DMatrix::from_fn(rows.len(), 2 * m, |r, c| {
        if c < m { sens.alpha[(rows[r], c)] } else { sens.beta[(rows[r], c - m)] }
    });
    let offset = DVector::from_fn(rows.len(), |r, _| sens.gamma[rows[r]]);
    transform(injection, &AffineMap::new(linear, offset)?)
}

/// Centralized multi-column solution `A⁻¹B` for a given plan and choice of
/// withheld rows — the reference the consensus stage is judged against.
pub fn centralized_x(
    sys: &DlpfSystem,
    part: &RegionPartition,
    plan: &AugmentedPlan,
    chosen_rows: &[usize],
) -> Result<DMatrix<f64>> {
    if chosen_rows.len() != part.h {
        return Err(Error::Dimension {
            what: "withheld rows".into(),
            expected: part.h,
            got: chosen_rows.len(),
        });
    }
    let mut b = DMatrix::zeros(sys.n(), plan.m_hat);
    for i in 0..part.h {
        let block = build_b_block(sys, part, plan, i, chosen_rows[i])?;
        for (rl, &rg) in part.row_blocks[i].iter().enumerate() {
            b.row_mut(rg).copy_from(&block.row(rl));
        }
    }
    sys.a_matrix
        .clone()
        .lu()
        .solve(&b)
        .ok_or(Error::Singular { what: "system matrix".into(), cond: sys.cond })
}

// ---------------------------------------------------------------------------
// Branch flows
// ---------------------------------------------------------------------------

/// Affine map from a set of states to active branch flows.
///
/// Only branches whose unknown endpoint states all appear in the column set
/// are mapped; known slack/PV quantities fold into the offset. With the full
/// state set this covers every branch, with a regional state set exactly the
/// branches the region can evaluate on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    /// Mapped branches as (from, to) bus ids, in case-file order.
    pub branches: Vec<(u32, u32)>,
    /// Branches × columns sensitivity matrix.
    pub linear: DMatrix<f64>,
    /// Constant contribution of known voltages and angles.
    pub offset: DVector<f64>,
    /// Global state indices the columns refer to.
    pub cols: Vec<usize>,
}

impl FlowMap {
    /// Evaluate flows for one state vector laid out like `cols`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.linear * x + &self.offset
    }

    /// Output mixture of flows for a state mixture laid out like `cols`.
    pub fn push_gmm(&self, states: &Gmm) -> Result<Gmm> {
        transform(states, &AffineMap::new(self.linear.clone(), self.offset.clone())?)
    }
}

/// Build the flow map over the states listed in `cols`.
pub fn flow_map(net: &Network, sys: &DlpfSystem, cols: &[usize]) -> Result<FlowMap> {
    use std::collections::BTreeMap;
    let mut col_of: BTreeMap<usize, usize> = BTreeMap::new();
    for (local, &global) in cols.iter().enumerate() {
        if global >= sys.n() || col_of.insert(global, local).is_some() {
            return Err(Error::invalid("flow map", "state columns must be distinct and in range"));
        }
    }
    // Per endpoint: either a state column or a known constant.
    enum Term {
        Col(usize),
        Known(f64),
        Missing,
    }
    let term = |bus_id: u32, kind: StateKind| -> Term {
        if let Some(g) = sys.state_col(bus_id, kind) {
            match col_of.get(&g) {
                Some(&local) => Term::Col(local),
                None => Term::Missing,
            }
        } else {
            let bus = net.bus(bus_id).expect("branch endpoints exist");
            let v = match (kind, bus.class) {
                (StateKind::Angle, BusClass::Slack) => bus.theta,
                (StateKind::Voltage, BusClass::Slack) | (StateKind::Voltage, BusClass::Pv) => {
                    bus.v
                }
                _ => unreachable!("missing state implies a known quantity"),
            };
            Term::Known(v)
        }
    };

    let mut branches = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut offsets = Vec::new();
    for br in &net.branches {
        let g = br.r / (br.r * br.r + br.x * br.x);
        let b = -br.x / (br.r * br.r + br.x * br.x);
        // P_ft = g·(V_f − V_t) − b·(θ_f − θ_t)
        let terms = [
            (term(br.from, StateKind::Voltage), g),
            (term(br.to, StateKind::Voltage), -g),
            (term(br.from, StateKind::Angle), -b),
            (term(br.to, StateKind::Angle), b),
        ];
        if terms.iter().any(|(t, _)| matches!(t, Term::Missing)) {
            continue;
        }
        let mut row = Vec::new();
        let mut offset = 0.0;
        for (t, coef) in terms {
            match t {
                Term::Col(c) => row.push((c, coef)),
                Term::Known(v) => offset += coef * v,
                Term::Missing => unreachable!(),
            }
        }
        branches.push((br.from, br.to));
        rows.push(row);
        offsets.push(offset);
    }
    let mut linear = DMatrix::zeros(branches.len(), cols.len());
    for (r, row) in rows.iter().enumerate() {
        for &(c, coef) in row {
            linear[(r, c)] += coef;
        }
    }
    Ok(FlowMap {
        branches,
        linear,
        offset: DVector::from_vec(offsets),
        cols: cols.to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

/// One state's empirical histogram with Freedman–Diaconis bin widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Left edge of the first bin.
    pub lo: f64,
    /// Bin width; zero when every sample coincides.
    pub width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn from_samples(values: &mut [f64]) -> Histogram {
        let n = values.len();
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        let (lo, hi) = (values[0], values[n - 1]);
        let q = |p: f64| -> f64 {
            // Linear interpolation between order statistics.
            let t = p * (n - 1) as f64;
            let (i, frac) = (t.floor() as usize, t.fract());
            if i + 1 < n { values[i] * (1.0 - frac) + values[i + 1] * frac } else { values[i] }
        };
        let iqr = q(0.75) - q(0.25);
        let width = 2.0 * iqr / (n as f64).cbrt();
        if !(width > 0.0) || hi <= lo {
            // Degenerate spread: one bin holding everything.
            return Histogram { lo, width: hi - lo, counts: vec![n as u64] };
        }
        let bins = (((hi - lo) / width).ceil() as usize).clamp(1, 10_000);
        let mut counts = vec![0u64; bins];
        for &v in values.iter() {
            let k = (((v - lo) / (hi - lo)) * bins as f64) as usize;
            counts[k.min(bins - 1)] += 1;
        }
        Histogram { lo, width: (hi - lo) / bins as f64, counts }
    }
}

/// Empirical results of the scenario sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub n: usize,
    /// Empirical mean per state.
    pub mean: DVector<f64>,
    /// Empirical covariance (denominator n − 1).
    pub covariance: DMatrix<f64>,
    /// Per-state histograms, state order.
    pub histograms: Vec<Histogram>,
}

impl McSummary {
    /// Standard error of the mean for one state.
    pub fn std_error(&self, state: usize) -> f64 {
        (self.covariance[(state, state)].max(0.0) / self.n as f64).sqrt()
    }
}

/// Monte-Carlo solve of the linear model: sample the injections, reuse one
/// factorization for every scenario, and accumulate running moments.
pub fn mc_dlpf(sys: &DlpfSystem, injection: &Gmm, n: usize, seed: u64) -> Result<McSummary> {
    if n < MC_MIN_SCENARIOS {
        return Err(Error::invalid(
            "monte carlo",
            format!("need at least {MC_MIN_SCENARIOS} scenarios, got {n}"),
        ));
    }
    let m = sys.m();
    if injection.dim() != 2 * m {
        return Err(Error::Dimension {
            what: "injection mixture dimension".into(),
            expected: 2 * m,
            got: injection.dim(),
        });
    }
    let nn = sys.n();
    let lu = sys.a_matrix.clone().lu();
    let samples = injection.sample(n, seed);

    // Welford in vector form: mean and the running outer-product spread.
    let mut mean = DVector::zeros(nn);
    let mut m2 = DMatrix::zeros(nn, nn);
    let mut solutions = DMatrix::zeros(n, nn);
    for k in 0..n {
        let pw = DVector::from_fn(m, |w, _| samples[(k, w)]);
        let qw = DVector::from_fn(m, |w, _| samples[(k, m + w)]);
        let rhs = sys.rhs_for(&pw, &qw)?;
        let x = lu
            .solve(&rhs)
            .ok_or(Error::Singular { what: "system matrix".into(), cond: sys.cond })?;
        let delta = &x - &mean;
        mean += &delta / (k + 1) as f64;
        let delta2 = &x - &mean;
        m2.ger(1.0, &delta, &delta2, 1.0);
        solutions.row_mut(k).copy_from(&x.transpose());
    }
    let covariance = m2 / (n - 1) as f64;
    // Symmetrize: ger accumulates both triangles but round-off can skew.
    let covariance = (&covariance + covariance.transpose()) * 0.5;

    let mut histograms = Vec::with_capacity(nn);
    let mut column = vec![0.0f64; n];
    for s in 0..nn {
        for k in 0..n {
            column[k] = solutions[(k, s)];
        }
        histograms.push(Histogram::from_samples(&mut column));
    }
    Ok(McSummary { n, mean, covariance, histograms })
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

/// Bundle of centralized references for one case and injection mixture.
#[derive(Debug, Clone)]
pub struct CentralizedReference {
    pub sys: DlpfSystem,
    pub part: RegionPartition,
    pub sens: CentralizedPlf,
    /// Per-region output mixtures in region order.
    pub regional: Vec<Gmm>,
    /// Flow map over the full state vector (every branch).
    pub flow_global: FlowMap,
    /// Per-region flow maps over the region's own states.
    pub flow_regional: Vec<FlowMap>,
    /// The injection mixture the references were built from.
    pub injection: Gmm,
}

/// Build all centralized references for a case.
pub fn centralized_reference(net: &Network, injection: &Gmm) -> Result<CentralizedReference> {
    let sys = assemble_dlpf(net)?;
    let part = partition_system(net, &sys)?;
    let sens = centralized_sensitivities(&sys)?;
    let regional = part
        .row_blocks
        .iter()
        .map(|rows| regional_gmm(&sens, injection, rows))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<usize> = (0..sys.n()).collect();
    let flow_global = flow_map(net, &sys, &all)?;
    let flow_regional = part
        .row_blocks
        .iter()
        .map(|rows| flow_map(net, &sys, rows))
        .collect::<Result<Vec<_>>>()?;
    Ok(CentralizedReference {
        sys,
        part,
        sens,
        regional,
        flow_global,
        flow_regional,
        injection: injection.clone(),
    })
}

/// Wall-clock seconds of the pipeline stages, filled in by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Runtimes {
    pub distributed_seconds: f64,
    pub centralized_seconds: f64,
    pub mc_seconds: f64,
}

/// Per-region comparison of the distributed run against the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    /// 1-based region index.
    pub region: usize,
    pub jsd_angle_avg: f64,
    pub jsd_angle_max: f64,
    pub jsd_voltage_avg: f64,
    pub jsd_voltage_max: f64,
    /// Absent when the region has no branch it can evaluate alone.
    pub jsd_flow_avg: Option<f64>,
    pub jsd_flow_max: Option<f64>,
    /// Average/max one-dimensional divergence over all of the region's states.
    pub jsd_avg: f64,
    pub jsd_max: f64,
    /// Average relative error of the regional expected values.
    pub mean_rel_err_avg: f64,
    /// Relative error of the agent's consensus solution.
    pub apc_rel_err: f64,
    /// Regional expected values vs the Monte-Carlo reference, when a sweep
    /// was supplied.
    pub mc_angle_rel_err_avg: Option<f64>,
    pub mc_voltage_rel_err_avg: Option<f64>,
    pub mc_flow_rel_err_avg: Option<f64>,
}

/// Monte-Carlo vs centralized expected-value errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McErrors {
    pub angle_mean_rel_err_avg: f64,
    pub voltage_mean_rel_err_avg: f64,
    pub flow_mean_rel_err_avg: f64,
}

/// The full comparison artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub regions: Vec<RegionMetrics>,
    /// Mean of the per-region consensus errors.
    pub apc_rel_err_avg: f64,
    pub mc: Option<McErrors>,
    /// Samples per one-dimensional divergence estimate.
    pub jsd_samples: usize,
    pub seed: u64,
    pub runtimes: Runtimes,
}

/// Relative error guarded against tiny references: the denominator never
/// falls below the mean magnitude of the reference set.
fn guarded_rel_errors(est: &DVector<f64>, reference: &DVector<f64>) -> Vec<f64> {
    let floor = reference.iter().map(|v| v.abs()).sum::<f64>() / reference.len().max(1) as f64;
    let floor = if floor > 0.0 { floor } else { 1.0 };
    est.iter()
        .zip(reference.iter())
        .map(|(e, r)| (e - r).abs() / r.abs().max(floor))
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 }
}

fn max(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

/// Compare a distributed run against the centralized references and,
/// optionally, a Monte-Carlo sweep.
///
/// Divergences are estimated on one-dimensional marginals with `jsd_samples`
/// draws per side; expected-value errors follow the guarded relative-error
/// convention; the consensus error compares each agent's recomposed solution
/// against the centrally recomposed one.
pub fn compare(
    dist: &ProtocolOutcome,
    cent: &CentralizedReference,
    mc: Option<&McSummary>,
    jsd_samples: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    let part = &cent.part;
    if dist.agents.len() != part.h {
        return Err(Error::Dimension {
            what: "distributed agents".into(),
            expected: part.h,
            got: dist.agents.len(),
        });
    }
    if jsd_samples == 0 {
        return Err(Error::invalid("comparison", "divergence sample budget must be positive"));
    }
    for (i, agent) in dist.agents.iter().enumerate() {
        if agent.theta != part.theta_sets[i] {
            return Err(Error::invalid(
                "comparison",
                format!("agent {} does not cover region {}'s states", agent.region, i + 1),
            ));
        }
    }

    // Consensus reference, recomposed through Π exactly like the agents'.
    let chosen: Vec<usize> = dist.agents.iter().map(|a| a.secret.chosen_row).collect();
    let x_direct = centralized_x(&cent.sys, part, &dist.plan, &chosen)?;
    let lambda_ref = solve_lambda(&x_direct, &dist.plan)?;
    let x_ref = recompose(&lambda_ref, &dist.plan);
    let x_ref_vec = DVector::from_column_slice(x_ref.as_slice());

    if let Some(summary) = mc {
        if summary.mean.len() != cent.sys.n() {
            return Err(Error::Dimension {
                what: "monte-carlo state count".into(),
                expected: cent.sys.n(),
                got: summary.mean.len(),
            });
        }
    }

    let mut regions = Vec::with_capacity(part.h);
    for (i, agent) in dist.agents.iter().enumerate() {
        let reference = &cent.regional[i];
        let mut angle_jsd = Vec::new();
        let mut voltage_jsd = Vec::new();
        for (local, &global) in part.theta_sets[i].iter().enumerate() {
            let d1 = agent.gmm.marginal(&[local])?;
            let d2 = reference.marginal(&[local])?;
            let value = jsd(&d1, &d2, jsd_samples, seed)?.value;
            match cent.sys.state_order[global].kind {
                StateKind::Angle => angle_jsd.push(value),
                StateKind::Voltage => voltage_jsd.push(value),
            }
        }
        let fm = &cent.flow_regional[i];
        let mut flow_jsd = Vec::new();
        if !fm.branches.is_empty() {
            let dist_flows = fm.push_gmm(&agent.gmm)?;
            let cent_flows = fm.push_gmm(reference)?;
            for b in 0..fm.branches.len() {
                let d1 = dist_flows.marginal(&[b])?;
                let d2 = cent_flows.marginal(&[b])?;
                flow_jsd.push(jsd(&d1, &d2, jsd_samples, seed)?.value);
            }
        }
        let all_jsd: Vec<f64> =
            angle_jsd.iter().chain(voltage_jsd.iter()).copied().collect();

        let mean_errs = guarded_rel_errors(&agent.gmm.mean(), &reference.mean());

        let x_i = recompose(&agent.lambda, &dist.plan);
        let x_i_vec = DVector::from_column_slice(x_i.as_slice());
        let apc_rel_err = mean(&guarded_rel_errors(&x_i_vec, &x_ref_vec));

        // Regional expected values against the Monte-Carlo reference.
        let (mut mc_angle, mut mc_voltage, mut mc_flow) = (None, None, None);
        if let Some(summary) = mc {
            let rows = &part.theta_sets[i];
            let mc_regional = DVector::from_fn(rows.len(), |r, _| summary.mean[rows[r]]);
            let errs = guarded_rel_errors(&agent.gmm.mean(), &mc_regional);
            let mut angle_errs = Vec::new();
            let mut voltage_errs = Vec::new();
            for (local, &global) in rows.iter().enumerate() {
                match cent.sys.state_order[global].kind {
                    StateKind::Angle => angle_errs.push(errs[local]),
                    StateKind::Voltage => voltage_errs.push(errs[local]),
                }
            }
            mc_angle = Some(mean(&angle_errs));
            mc_voltage = Some(mean(&voltage_errs));
            if !fm.branches.is_empty() {
                let dist_flows = fm.apply(&agent.gmm.mean());
                let mc_flows = fm.apply(&mc_regional);
                mc_flow = Some(mean(&guarded_rel_errors(&dist_flows, &mc_flows)));
            }
        }

        regions.push(RegionMetrics {
            region: agent.region,
            jsd_angle_avg: mean(&angle_jsd),
            jsd_angle_max: max(&angle_jsd),
            jsd_voltage_avg: mean(&voltage_jsd),
            jsd_voltage_max: max(&voltage_jsd),
            jsd_flow_avg: (!flow_jsd.is_empty()).then(|| mean(&flow_jsd)),
            jsd_flow_max: (!flow_jsd.is_empty()).then(|| max(&flow_jsd)),
            jsd_avg: mean(&all_jsd),
            jsd_max: max(&all_jsd),
            mean_rel_err_avg: mean(&mean_errs),
            apc_rel_err,
            mc_angle_rel_err_avg: mc_angle,
            mc_voltage_rel_err_avg: mc_voltage,
            mc_flow_rel_err_avg: mc_flow,
        });
    }
    let apc_rel_err_avg = mean(&regions.iter().map(|r| r.apc_rel_err).collect::<Vec<_>>());

    let mc = match mc {
        Some(summary) => {
            let mu = cent.injection.mean();
            let m = cent.sys.m();
            let cent_mean = &cent.sens.alpha * mu.rows(0, m)
                + &cent.sens.beta * mu.rows(m, m)
                + &cent.sens.gamma;
            let errs = guarded_rel_errors(&summary.mean, &cent_mean);
            let mut angle_errs = Vec::new();
            let mut voltage_errs = Vec::new();
            for (s, err) in errs.iter().enumerate() {
                match cent.sys.state_order[s].kind {
                    StateKind::Angle => angle_errs.push(*err),
                    StateKind::Voltage => voltage_errs.push(*err),
                }
            }
            let mc_flows = cent.flow_global.apply(&summary.mean);
            let cent_flows = cent.flow_global.apply(&cent_mean);
            let flow_errs = guarded_rel_errors(&mc_flows, &cent_flows);
            Some(McErrors {
                angle_mean_rel_err_avg: mean(&angle_errs),
                voltage_mean_rel_err_avg: mean(&voltage_errs),
                flow_mean_rel_err_avg: mean(&flow_errs),
            })
        }
        None => None,
    };

    Ok(ComparisonReport {
        regions,
        apc_rel_err_avg,
        mc,
        jsd_samples,
        seed,
        runtimes: Runtimes::default(),
    })
}

/// Recompose the consensus-stage solution from a decomposition: Λ·Π.
pub fn recompose(lambda: &LambdaDecomposition, plan: &AugmentedPlan) -> DMatrix<f64> {
    let n = lambda.gamma_prime.len();
    let mut l = DMatrix::zeros(n, plan.m_hat);
    l.view_mut((0, 0), (n, plan.m)).copy_from(&lambda.alpha);
    l.view_mut((0, plan.m), (n, plan.m)).copy_from(&lambda.beta);
    l.view_mut((0, 2 * plan.m), (n, plan.h)).copy_from(&lambda.eps_matrix);
    l.view_mut((0, 2 * plan.m + plan.h), (n, 1)).copy_from(&lambda.gamma_prime);
    l * &plan.pi_matrix
}
