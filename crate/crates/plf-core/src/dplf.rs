//! The augmented distributed PLF protocol.
//!
//! Each regional operator holds its own rows `A_i` of the network matrix and
//! evaluates its rows of the right-hand side at a public set of artificial
//! observations. Solving the resulting multi-column system by projected
//! consensus yields `X = A⁻¹B`; inverting the public observation matrix Π
//! turns that into the affine decomposition `Λ = [α β ε γ′]`, from which each
//! agent recovers its sensitivities to the uncertain injections and — via a
//! fake-input averaging pass that hides the true local injection — the
//! constant term of its own states. The regional output distribution is then
//! an exact affine image of the injection mixture.
//!
//! Nothing in this module ever hands one agent another agent's matrix block,
//! right-hand side, or true/fake injection values; the only inter-agent
//! traffic is the masked consensus primitive, and every transmission is
//! recorded in the caller's [`MessageAudit`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::apc::{run_apc, ApcConfig};
use crate::consensus::{
    aac_run, rounds_for_masked_tolerance, stream_key, CommGraph, MessageAudit, NoiseSchedule,
    WeightMatrices,
};
use crate::error::{Error, Result};
use crate::gmm::{transform, AffineMap, Gmm};
use crate::net::{
    assemble_dlpf, partition_system, BusClass, DlpfSystem, Network, RegionPartition, RowKind,
};

/// Condition ceiling for the stacked observation matrix Π.
pub const PI_COND_LIMIT: f64 = 1e8;
/// Redraw attempts allowed before Π construction gives up.
pub const PI_MAX_RETRIES: usize = 20;
/// Default range the artificial tie values P_ℓ(k) are drawn from (p.u.).
pub const PL_DEFAULT_RANGE: (f64, f64) = (-1.0, 1.0);

/// Half-width of the window the fake value P̂ is drawn from, centred on P̃.
const FAKE_HALF_WIDTH: f64 = 5.0;
/// The fake value must differ from the true one by more than this.
const FAKE_EXCLUSION: f64 = 1e-6;
/// Run-tag stride separating the mask streams of distinct protocol stages.
const STAGE_TAG_STRIDE: u64 = 1 << 32;
/// Run-tag namespaces for the plan and secret generators.
const PLAN_TAG: u64 = 0x504c_414e;
const SECRET_TAG: u64 = 0x5345_4352;

// ---------------------------------------------------------------------------
// Observation plan
// ---------------------------------------------------------------------------

/// The public, seed-derived observation plan every agent shares.
///
/// Column `k` of the three observation blocks holds the k-th artificial
/// operating point: wind active powers `P_W(k)`, wind reactive powers
/// `Q_W(k)`, and one artificial substitute value `P_ℓ(k)` per region. Π stacks
/// them with a final all-ones row, so that right-hand sides evaluated at the
/// observations are an invertible linear image of `[α β ε γ′]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPlan {
    /// Wind-farm count M.
    pub m: usize,
    /// Region count H.
    pub h: usize,
    /// Observation count M̂ = 2M + H + 1.
    pub m_hat: usize,
    /// M×M̂ active wind observations.
    pub pw_obs: DMatrix<f64>,
    /// M×M̂ reactive wind observations.
    pub qw_obs: DMatrix<f64>,
    /// H×M̂ artificial substitute values.
    pub pl_obs: DMatrix<f64>,
    /// M̂×M̂ stacked observation matrix Π.
    pub pi_matrix: DMatrix<f64>,
    /// Ceiling the condition number was checked against.
    pub condition_bound: f64,
    /// Achieved condition number of Π.
    pub cond: f64,
    /// Redraws needed before the conditioning check passed.
    pub retries: usize,
}

/// Where the wind observations for Π come from.
///
/// Historical sample rows are public, so they are preferred when available;
/// otherwise observations are drawn from the injection mixture itself.
#[derive(Debug, Clone, Copy)]
pub enum ObservationSource<'a> {
    /// Sample rows, one `[P_W, Q_W]` observation of width 2M per row.
    Samples(&'a DMatrix<f64>),
    /// Draw observations from the injection mixture (dimension 2M).
    Gmm(&'a Gmm),
}

/// Assemble the shared observation plan for `m` wind farms and `h` regions.
///
/// Observations are redrawn (with a fresh sub-seed) until the condition
/// number of Π falls below [`PI_COND_LIMIT`], up to [`PI_MAX_RETRIES`]
/// attempts. The plan depends only on the arguments, so every agent can
/// reproduce it bit-identically.
pub fn build_plan(
    m: usize,
    h: usize,
    seed: u64,
    source: &ObservationSource,
    pl_range: (f64, f64),
) -> Result<AugmentedPlan> {
    if m < 1 {
        return Err(Error::invalid("observation plan", "need at least one wind farm"));
    }
    if h < 1 {
        return Err(Error::invalid("observation plan", "need at least one region"));
    }
    if !(pl_range.0 < pl_range.1) || !pl_range.0.is_finite() || !pl_range.1.is_finite() {
        return Err(Error::invalid(
            "observation plan",
            "substitute-value range must be a finite, non-empty interval",
        ));
    }
    let m_hat = 2 * m + h + 1;
    match source {
        ObservationSource::Samples(s) => {
            if s.ncols() != 2 * m {
                return Err(Error::Dimension {
                    what: "observation sample width".into(),
                    expected: 2 * m,
                    got: s.ncols(),
                });
            }
            if s.nrows() < m_hat {
                return Err(Error::invalid(
                    "observation samples",
                    format!("need at least {} rows, have {}", m_hat, s.nrows()),
                ));
            }
        }
        ObservationSource::Gmm(g) => {
            if g.dim() != 2 * m {
                return Err(Error::Dimension {
                    what: "observation mixture dimension".into(),
                    expected: 2 * m,
                    got: g.dim(),
                });
            }
        }
    }

    let mut last_cond = f64::INFINITY;
    for attempt in 0..PI_MAX_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(seed, PLAN_TAG, attempt as u64));
        // Observation rows: M̂ draws of [P_W, Q_W].
        let obs: DMatrix<f64> = match source {
            ObservationSource::Samples(s) => {
                // Partial Fisher–Yates: M̂ distinct row indices.
                let mut idx: Vec<usize> = (0..s.nrows()).collect();
                for k in 0..m_hat {
                    let j = rng.random_range(k..idx.len());
                    idx.swap(k, j);
                }
                DMatrix::from_fn(m_hat, 2 * m, |r, c| s[(idx[r], c)])
            }
            ObservationSource::Gmm(g) => g.sample(m_hat, rng.random()),
        };
        let pw_obs = DMatrix::from_fn(m, m_hat, |w, k| obs[(k, w)]);
        let qw_obs = DMatrix::from_fn(m, m_hat, |w, k| obs[(k, m + w)]);
        let pl_obs =
            DMatrix::from_fn(h, m_hat, |_, _| rng.random_range(pl_range.0..=pl_range.1));

        let mut pi_matrix = DMatrix::zeros(m_hat, m_hat);
        pi_matrix.view_mut((0, 0), (m, m_hat)).copy_from(&pw_obs);
        pi_matrix.view_mut((m, 0), (m, m_hat)).copy_from(&qw_obs);
        pi_matrix.view_mut((2 * m, 0), (h, m_hat)).copy_from(&pl_obs);
        pi_matrix.row_mut(m_hat - 1).fill(1.0);

        let sv = pi_matrix.clone().svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        last_cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if last_cond < PI_COND_LIMIT {
            return Ok(AugmentedPlan {
                m,
                h,
                m_hat,
                pw_obs,
                qw_obs,
                pl_obs,
                pi_matrix,
                condition_bound: PI_COND_LIMIT,
                cond: last_cond,
                retries: attempt,
            });
        }
    }
    Err(Error::Conditioning {
        what: "observation matrix".into(),
        retries: PI_MAX_RETRIES,
        cond: last_cond,
    })
}

// ---------------------------------------------------------------------------
// Per-region data
// ---------------------------------------------------------------------------

/// The one piece of state an agent keeps strictly to itself: which of its
/// PQ rows it withheld from the public plan, the true injection entry P̃
/// standing there, and the fake value P̂ it substitutes during recovery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsoSecret {
    /// Bus whose active-power row was withheld.
    pub chosen_bus: u32,
    /// Global index of that row.
    pub chosen_row: usize,
    /// True right-hand-side entry of the withheld row.
    pub p_tilde: f64,
    /// Fake substitute, drawn from P̃ ± [`FAKE_HALF_WIDTH`] away from P̃.
    pub p_hat: f64,
}

/// Pick the region's withheld row and draw its fake value.
///
/// The chosen bus is the deterministic PQ bus with the largest absolute
/// active injection in the region (ties broken toward the lowest id), so all
/// agents can agree on the Π layout without revealing the entry's value.
pub fn choose_secret(
    net: &Network,
    sys: &DlpfSystem,
    part: &RegionPartition,
    region: usize,
    seed: u64,
) -> Result<IsoSecret> {
    if region >= part.h {
        return Err(Error::invalid(
            "secret selection",
            format!("region index {} out of range (H = {})", region, part.h),
        ));
    }
    let mut ids = part.buses[region].clone();
    ids.sort_unstable();
    let mut chosen: Option<(u32, f64)> = None;
    for id in ids {
        let bus = net.bus(id).expect("partition references existing buses");
        if bus.class == BusClass::Pq {
            let mag = bus.p.abs();
            if chosen.map_or(true, |(_, best)| mag > best) {
                chosen = Some((id, mag));
            }
        }
    }
    let (chosen_bus, _) = chosen.ok_or(Error::RegionWithoutPq(region + 1))?;
    let chosen_row = sys
        .row_index(chosen_bus, RowKind::Active)
        .expect("PQ bus has an active row");
    let p_tilde = sys.rhs_base[chosen_row];

    let mut rng = ChaCha8Rng::seed_from_u64(stream_key(seed, SECRET_TAG, region as u64));
    let p_hat = loop {
        let draw = p_tilde + rng.random_range(-FAKE_HALF_WIDTH..=FAKE_HALF_WIDTH);
        if (draw - p_tilde).abs() > FAKE_EXCLUSION {
            break draw;
        }
    };
    Ok(IsoSecret { chosen_bus, chosen_row, p_tilde, p_hat })
}

/// Evaluate region `i`'s rows of the right-hand side at every observation.
///
/// Column `k` is the regional slice of `b` at operating point k: the base
/// entries, plus `P_W(k)`/`Q_W(k)` on the wind rows, with the withheld row
/// replaced by the artificial `P_ℓ(k)`. Only region-i rows are touched.
pub fn build_b_block(
    sys: &DlpfSystem,
    part: &RegionPartition,
    plan: &AugmentedPlan,
    region: usize,
    chosen_row: usize,
) -> Result<DMatrix<f64>> {
    if region >= part.h {
        return Err(Error::invalid(
            "regional right-hand side",
            format!("region index {} out of range (H = {})", region, part.h),
        ));
    }
    if plan.h != part.h {
        return Err(Error::Dimension {
            what: "plan region count".into(),
            expected: part.h,
            got: plan.h,
        });
    }
    if plan.m != sys.m() {
        return Err(Error::Dimension {
            what: "plan wind-farm count".into(),
            expected: sys.m(),
            got: plan.m,
        });
    }
    let rows = &part.row_blocks[region];
    if !rows.contains(&chosen_row) {
        return Err(Error::invalid(
            "regional right-hand side",
            format!("withheld row {} is not owned by region {}", chosen_row, region + 1),
        ));
    }
    let mut b = DMatrix::zeros(rows.len(), plan.m_hat);
    for (rl, &rg) in rows.iter().enumerate() {
        let wp = sys.wp_rows.iter().position(|&r| r == rg);
        let wq = sys.wq_rows.iter().position(|&r| r == rg);
        for k in 0..plan.m_hat {
            let mut v = if rg == chosen_row {
                plan.pl_obs[(region, k)]
            } else {
                sys.rhs_base[rg]
            };
            if let Some(w) = wp {
                v += plan.pw_obs[(w, k)];
            }
            if let Some(w) = wq {
                v += plan.qw_obs[(w, k)];
            }
            b[(rl, k)] = v;
        }
    }
    Ok(b)
}

// ---------------------------------------------------------------------------
// Λ decomposition
// ---------------------------------------------------------------------------

/// The affine decomposition `Λ = [α β ε γ′]` obtained from `X·Π⁻¹`.
///
/// `x = α·P_W + β·Q_W + ε·P_ℓ + γ′` for any operating point, where `P_ℓ`
/// stacks the true values of the withheld rows; `γ′` absorbs everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaDecomposition {
    /// N×M sensitivity to active wind injections.
    pub alpha: DMatrix<f64>,
    /// N×M sensitivity to reactive wind injections.
    pub beta: DMatrix<f64>,
    /// N×H sensitivity to the withheld entries (ε).
    pub eps_matrix: DMatrix<f64>,
    /// N-vector constant term γ′ of the augmented system.
    pub gamma_prime: DVector<f64>,
}

/// Invert the public observation relation: `Λ = X·Π⁻¹`, sliced into blocks.
pub fn solve_lambda(x: &DMatrix<f64>, plan: &AugmentedPlan) -> Result<LambdaDecomposition> {
    if x.ncols() != plan.m_hat {
        return Err(Error::Dimension {
            what: "solution column count".into(),
            expected: plan.m_hat,
            got: x.ncols(),
        });
    }
    // Λ·Π = X  ⇔  Πᵀ·Λᵀ = Xᵀ.
    let lt = plan
        .pi_matrix
        .transpose()
        .lu()
        .solve(&x.transpose())
        .ok_or(Error::Singular { what: "observation matrix".into(), cond: plan.cond })?;
    let lambda = lt.transpose();
    let (m, h) = (plan.m, plan.h);
    Ok(LambdaDecomposition {
        alpha: lambda.columns(0, m).into_owned(),
        beta: lambda.columns(m, m).into_owned(),
        eps_matrix: lambda.columns(2 * m, h).into_owned(),
        gamma_prime: lambda.column(2 * m + h).into_owned(),
    })
}

// ---------------------------------------------------------------------------
// Fake-input recovery of γ
// ---------------------------------------------------------------------------

/// One agent's recovered constant term, restricted to its own rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaRecovery {
    /// ψ_n for the agent's rows, in row-block order.
    pub psi: DVector<f64>,
    /// Recovered γ_n for the same rows.
    pub gamma_i: DVector<f64>,
}

/// Result of the recovery stage across all agents.
#[derive(Debug, Clone)]
pub struct GammaOutcome {
    /// Per-agent recoveries, indexed like the row blocks.
    pub per_agent: Vec<GammaRecovery>,
    /// Consensus rounds the averaging pass used.
    pub aac_rounds: usize,
    /// True when H = 1: the fake input cannot hide anything because the
    /// single agent's substitution is undone by its own correction.
    pub degenerate_single_agent: bool,
}

/// Run the fake-input averaging pass and correct each agent's own rows.
///
/// Agent i initialises row n with `ε_ni·P̃_i`, except on its own rows where
/// it plants the fake `ε_ni·P̂_i`. After averaging, it removes its share of
/// the fake and restores the true value — but only on rows it owns:
/// `ψ_n = lim yₙ − ε_ni·P̂_i/H + ε_ni·P̃_i/H`, then `γ_n = γ′_n + H·ψ_n`.
/// Other agents' rows stay contaminated by *their* secrets, which is exactly
/// what keeps γ private. The returned state per agent covers Θ_i only.
#[allow(clippy::too_many_arguments)]
pub fn recover_gamma(
    lambdas: &[LambdaDecomposition],
    secrets: &[IsoSecret],
    row_blocks: &[Vec<usize>],
    graph: &CommGraph,
    wm: &WeightMatrices,
    noise: &NoiseSchedule,
    tol: f64,
    audit: &mut MessageAudit,
) -> Result<GammaOutcome> {
    let h = graph.h();
    if lambdas.len() != h {
        return Err(Error::Dimension {
            what: "per-agent decompositions".into(),
            expected: h,
            got: lambdas.len(),
        });
    }
    if secrets.len() != h {
        return Err(Error::Dimension { what: "per-agent secrets".into(), expected: h, got: secrets.len() });
    }
    if row_blocks.len() != h {
        return Err(Error::Dimension { what: "row ownership".into(), expected: h, got: row_blocks.len() });
    }
    let n = lambdas[0].gamma_prime.len();
    for l in lambdas {
        if l.gamma_prime.len() != n || l.eps_matrix.nrows() != n || l.eps_matrix.ncols() != h {
            return Err(Error::invalid(
                "per-agent decompositions",
                "all agents must hold decompositions of one shape",
            ));
        }
    }
    // Row blocks must partition 0..N: every row has exactly one owner.
    let mut owner = vec![usize::MAX; n];
    for (i, rows) in row_blocks.iter().enumerate() {
        for &r in rows {
            if r >= n || owner[r] != usize::MAX {
                return Err(Error::invalid(
                    "row ownership",
                    "row blocks must partition the state indices",
                ));
            }
            owner[r] = i;
        }
    }
    if owner.iter().any(|&o| o == usize::MAX) {
        return Err(Error::invalid("row ownership", "row blocks must cover every state index"));
    }

    let h_f = h as f64;
    let y0: Vec<DMatrix<f64>> = (0..h)
        .map(|i| {
            DMatrix::from_fn(n, 1, |r, _| {
                let e = lambdas[i].eps_matrix[(r, i)];
                e * if owner[r] == i { secrets[i].p_hat } else { secrets[i].p_tilde }
            })
        })
        .collect();

    let rounds = rounds_for_masked_tolerance(tol, wm.lambda2_star(), noise);
    let limits = aac_run(&y0, graph, wm, noise, rounds, audit)?;

    let per_agent = (0..h)
        .map(|i| {
            let e_col = lambdas[i].eps_matrix.column(i);
            let rows = &row_blocks[i];
            let mut psi = DVector::zeros(rows.len());
            let mut gamma_i = DVector::zeros(rows.len());
            for (rl, &rg) in rows.iter().enumerate() {
                let p = limits[i][(rg, 0)]
                    + e_col[rg] * (secrets[i].p_tilde - secrets[i].p_hat) / h_f;
                psi[rl] = p;
                gamma_i[rl] = lambdas[i].gamma_prime[rg] + h_f * p;
            }
            GammaRecovery { psi, gamma_i }
        })
        .collect();
    Ok(GammaOutcome { per_agent, aac_rounds: rounds, degenerate_single_agent: h == 1 })
}

// ---------------------------------------------------------------------------
// End-to-end driver
// ---------------------------------------------------------------------------

/// Knobs for a full protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    /// Master seed; all masks, plans and fakes derive from it.
    pub seed: u64,
    /// Initial mask amplitude ϱ (0 disables masking).
    pub rho: f64,
    /// Geometric mask decay ς per round.
    pub decay: f64,
    /// Settings for the projected-consensus stage.
    pub apc: ApcConfig,
    /// Disagreement tolerance of the recovery averaging pass.
    pub gamma_tol: f64,
    /// Range the artificial substitute values are drawn from.
    pub pl_range: (f64, f64),
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rho: 1.0,
            decay: 0.5,
            apc: ApcConfig::default(),
            gamma_tol: 1e-10,
            pl_range: PL_DEFAULT_RANGE,
        }
    }
}

/// Everything one agent is left holding after a run — and nothing more.
#[derive(Debug, Clone)]
pub struct AgentResult {
    /// 1-based region index.
    pub region: usize,
    /// Global state indices Θ_i this agent owns, ascending.
    pub theta: Vec<usize>,
    /// N_i×M active-wind sensitivity rows.
    pub alpha: DMatrix<f64>,
    /// N_i×M reactive-wind sensitivity rows.
    pub beta: DMatrix<f64>,
    /// Recovered constant term over Θ_i.
    pub gamma: DVector<f64>,
    /// Correction terms ψ over Θ_i.
    pub psi: DVector<f64>,
    /// The agent's own withheld row and fake value.
    pub secret: IsoSecret,
    /// The agent's full decomposition estimate. Every block of Λ is public
    /// to all agents by construction, so holding it leaks nothing.
    pub lambda: LambdaDecomposition,
    /// Output distribution over the agent's states.
    pub gmm: Gmm,
}

/// Run-level measurements and warnings.
#[derive(Debug, Clone)]
pub struct ProtocolDiagnostics {
    pub apc_iters: usize,
    pub apc_inner_rounds: usize,
    /// Nominal projected-consensus rate 1 − 2υ_min/υ_max.
    pub apc_rate: f64,
    /// Per-agent feasibility residual ‖A_i·X_i − B_i‖∞ at exit.
    pub apc_feasibility: Vec<f64>,
    /// Worst relative change at the final consensus iteration.
    pub apc_last_rel_change: f64,
    /// True when the tuned (φ, η) had to fall back to plain consensus.
    pub fallback_params: bool,
    /// True when the tuning was clamped to the distributed stability
    /// boundary because the unconstrained gain pair exceeded 2.
    pub clamped_params: bool,
    pub gamma_aac_rounds: usize,
    /// Masked consensus rounds across both stages.
    pub total_aac_rounds: u64,
    pub plan_retries: usize,
    pub plan_cond: f64,
    /// Human-readable conditions worth surfacing (degenerate privacy, …).
    pub warnings: Vec<String>,
}

/// Output of [`run_distributed_plf`].
#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub agents: Vec<AgentResult>,
    pub plan: AugmentedPlan,
    pub diagnostics: ProtocolDiagnostics,
    /// Record of every inter-agent transmission of the run.
    pub audit: MessageAudit,
}

/// Execute the full protocol over a case, communication graph and injection
/// mixture, returning one regional mixture per agent.
///
/// Errors are tagged with the stage they surfaced in: (1) regional block
/// assembly and the observation plan, (2) projected consensus, (3) the
/// decomposition solve, (4) fake-value selection, (6) the recovery averaging
/// pass, (11) injection-mixture checks, (12) the regional transform.
pub fn run_distributed_plf(
    net: &Network,
    graph: &CommGraph,
    injection: &Gmm,
    source: &ObservationSource,
    cfg: &ProtocolConfig,
) -> Result<ProtocolOutcome> {
    // Stage 1: per-region blocks and the public observation plan.
    let sys = assemble_dlpf(net).map_err(|e| e.at_step(1, "assemble regional blocks"))?;
    let part =
        partition_system(net, &sys).map_err(|e| e.at_step(1, "assemble regional blocks"))?;
    let m = sys.m();
    let h = part.h;
    if graph.h() != h {
        return Err(Error::Dimension { what: "communication graph size".into(), expected: h, got: graph.h() }
            .at_step(1, "assemble regional blocks"));
    }
    if m == 0 {
        return Err(Error::invalid("protocol", "case has no uncertain buses")
            .at_step(1, "assemble regional blocks"));
    }
    if injection.dim() != 2 * m {
        return Err(Error::Dimension {
            what: "injection mixture dimension".into(),
            expected: 2 * m,
            got: injection.dim(),
        }
        .at_step(11, "match the injection mixture"));
    }
    let plan = build_plan(m, h, cfg.seed, source, cfg.pl_range)
        .map_err(|e| e.at_step(1, "assemble the observation plan"))?;

    let mut warnings = Vec::new();
    let graph_report = graph.validate();
    for &(agent, observer) in &graph_report.containment_violations {
        warnings.push(format!(
            "privacy: agent {observer} observes every consensus edge of agent {agent}; \
             masking alone cannot hide agent {agent}'s updates"
        ));
    }
    if h == 1 {
        warnings.push(
            "privacy: single-region run; the fake-input stage is degenerate and hides nothing"
                .into(),
        );
    }

    // Stage 4 secrets are drawn before the blocks because the withheld row
    // determines which entry of b is replaced by the artificial values.
    let secrets: Vec<IsoSecret> = (0..h)
        .map(|i| {
            choose_secret(net, &sys, &part, i, cfg.seed)
                .map_err(|e| e.at_step(4, "choose the fake value"))
        })
        .collect::<Result<_>>()?;

    let a_blocks: Vec<DMatrix<f64>> = part
        .row_blocks
        .iter()
        .map(|rows| sys.a_matrix.select_rows(rows.iter()))
        .collect();
    let b_blocks: Vec<DMatrix<f64>> = (0..h)
        .map(|i| {
            build_b_block(&sys, &part, &plan, i, secrets[i].chosen_row)
                .map_err(|e| e.at_step(1, "assemble regional blocks"))
        })
        .collect::<Result<_>>()?;

    // Stage 2: distributed solve of A·X = B by projected consensus.
    let wm = WeightMatrices::for_graph(graph)
        .map_err(|e| e.at_step(2, "run the projected-consensus stage"))?;
    let noise = NoiseSchedule::new(cfg.rho, cfg.decay, cfg.seed, 0)
        .map_err(|e| e.at_step(2, "run the projected-consensus stage"))?;
    let mut audit = MessageAudit::new();
    let apc = run_apc(&a_blocks, &b_blocks, graph, &wm, &noise, &cfg.apc, &mut audit)
        .map_err(|e| e.at_step(2, "run the projected-consensus stage"))?;
    if apc.params.fallback {
        warnings.push(
            "tuning: non-positive projector spectrum; plain consensus parameters used".into(),
        );
    }
    if apc.params.clamped {
        warnings.push(
            "tuning: unconstrained consensus gains exceed the distributed stability \
             limit; boundary parameters used"
                .into(),
        );
    }

    // Stage 3: every agent inverts the public observation relation.
    let lambdas: Vec<LambdaDecomposition> = apc
        .x
        .iter()
        .map(|x| {
            solve_lambda(x, &plan).map_err(|e| e.at_step(3, "acquire the decomposition"))
        })
        .collect::<Result<_>>()?;

    // Stages 5–9: fake-input averaging and the per-agent correction.
    let gamma_noise = noise.clone().with_tag(STAGE_TAG_STRIDE);
    let recovery = recover_gamma(
        &lambdas,
        &secrets,
        &part.row_blocks,
        graph,
        &wm,
        &gamma_noise,
        cfg.gamma_tol,
        &mut audit,
    )
    .map_err(|e| e.at_step(6, "run the fake-input averaging stage"))?;

    // Stages 10–12: slice regional sensitivities, map the mixture.
    let mut agents = Vec::with_capacity(h);
    for i in 0..h {
        let rows = &part.row_blocks[i];
        let alpha = lambdas[i].alpha.select_rows(rows.iter());
        let beta = lambdas[i].beta.select_rows(rows.iter());
        let linear = DMatrix::from_fn(rows.len(), 2 * m, |r, c| {
            if c < m { alpha[(r, c)] } else { beta[(r, c - m)] }
        });
        let rec = &recovery.per_agent[i];
        let map = AffineMap::new(linear, rec.gamma_i.clone())
            .map_err(|e| e.at_step(12, "derive the regional mixture"))?;
        let gmm = transform(injection, &map)
            .map_err(|e| e.at_step(12, "derive the regional mixture"))?;
        agents.push(AgentResult {
            region: i + 1,
            theta: part.theta_sets[i].clone(),
            alpha,
            beta,
            gamma: rec.gamma_i.clone(),
            psi: rec.psi.clone(),
            secret: secrets[i],
            lambda: lambdas[i].clone(),
            gmm,
        });
    }

    let diagnostics = ProtocolDiagnostics {
        apc_iters: apc.iters,
        apc_inner_rounds: apc.inner_rounds,
        apc_rate: apc.rate,
        apc_feasibility: apc.feasibility.clone(),
        apc_last_rel_change: apc.rel_changes.last().copied().unwrap_or(0.0),
        fallback_params: apc.params.fallback,
        clamped_params: apc.params.clamped,
        gamma_aac_rounds: recovery.aac_rounds,
        total_aac_rounds: apc.total_aac_rounds + recovery.aac_rounds as u64,
        plan_retries: plan.retries,
        plan_cond: plan.cond,
        warnings,
    };
    Ok(ProtocolOutcome { agents, plan, diagnostics, audit })
}
