//! Expectation-maximization fitting of Gaussian mixtures.
//!
//! Initialization is k-means++-style seeding (distance-squared weighted
//! center choice) followed by a hard assignment pass; everything downstream
//! is deterministic in the seed. Covariances are floored by `cov_floor·I`
//! each M-step, which both regularizes near-degenerate clusters and makes a
//! zero-variance cluster legal (its covariance becomes exactly the floor).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gmm::Gmm;

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// EM iteration cap.
    pub max_iters: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tol: f64,
    /// Added to every covariance diagonal each M-step.
    pub cov_floor: f64,
    /// Restarts with fresh seeds before giving up on a degenerate fit.
    pub max_restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 500,
            tol: 1e-8,
            cov_floor: 1e-10,
            max_restarts: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub gmm: Gmm,
    /// Log-likelihood after each completed iteration (non-decreasing).
    pub log_likelihood: Vec<f64>,
    pub iters: usize,
    pub restarts_used: usize,
    pub converged: bool,
}

/// Fit a `k`-component mixture to `data` (one observation per row) with
/// default options.
pub fn fit_em(data: &DMatrix<f64>, k: usize, seed: u64) -> Result<FitOutcome> {
    fit_em_with(data, k, seed, &FitOptions::default())
}

pub fn fit_em_with(
    data: &DMatrix<f64>,
    k: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<FitOutcome> {
    let (n, d) = data.shape();
    if k == 0 {
        return Err(Error::invalid("mixture fit", "k must be at least 1"));
    }
    if d == 0 {
        return Err(Error::invalid("mixture fit", "data has no columns"));
    }
    if n < 10 * k {
        return Err(Error::invalid(
            "mixture fit",
            format!("need at least 10·k = {} observations, got {n}", 10 * k),
        ));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mixture fit", "data contains non-finite values"));
    }

    for restart in 0..=opts.max_restarts {
        match run_em(data, k, seed.wrapping_add(restart as u64), opts) {
            Ok(mut outcome) => {
                outcome.restarts_used = restart;
                return Ok(outcome);
            }
            Err(Degenerate) => continue,
        }
    }
    Err(Error::DegenerateFit {
        restarts: opts.max_restarts,
    })
}

/// Internal marker: the attempt collapsed and should be restarted.
struct Degenerate;

fn run_em(
    data: &DMatrix<f64>,
    k: usize,
    seed: u64,
    opts: &FitOptions,
) -> std::result::Result<FitOutcome, Degenerate> {
    let (n, d) = data.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let centers = seed_centers(data, k, &mut rng);
    let (mut weights, mut means, mut covs) = initial_estimates(data, &centers, opts)?;

    let mut log_resp = DMatrix::zeros(n, k);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iters = 0;

    for _ in 0..opts.max_iters {
        // E-step in log space.
        let mut ll = 0.0;
        {
            let comps = component_params(&weights, &means, &covs)?;
            for i in 0..n {
                let x = data.row(i).transpose();
                let mut best = f64::NEG_INFINITY;
                for (j, (log_c, chol, mu)) in comps.iter().enumerate() {
                    let diff = &x - mu;
                    let quad = diff.dot(&chol.solve(&diff));
                    let term = log_c - 0.5 * quad;
                    log_resp[(i, j)] = term;
                    best = best.max(term);
                }
                let sum: f64 = (0..k).map(|j| (log_resp[(i, j)] - best).exp()).sum();
                let log_total = best + sum.ln();
                ll += log_total;
                for j in 0..k {
                    log_resp[(i, j)] -= log_total;
                }
            }
        }
        if !ll.is_finite() {
            return Err(Degenerate);
        }

        // M-step.
        for j in 0..k {
            let mut nk = 0.0;
            let mut mu = DVector::zeros(d);
            for i in 0..n {
                let r = log_resp[(i, j)].exp();
                nk += r;
                mu += data.row(i).transpose() * r;
            }
            if nk < 1e-8 {
                return Err(Degenerate);
            }
            mu /= nk;
            let mut cov = DMatrix::zeros(d, d);
            for i in 0..n {
                let r = log_resp[(i, j)].exp();
                let diff = data.row(i).transpose() - &mu;
                cov.ger(r, &diff, &diff, 1.0);
            }
            cov /= nk;
            cov = (&cov + cov.transpose()) * 0.5;
            for t in 0..d {
                cov[(t, t)] += opts.cov_floor;
            }
            weights[j] = nk / n as f64;
            means[j] = mu;
            covs[j] = cov;
        }
        // Exact renormalization guards against drift in Σ w_k.
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);

        iters += 1;
        let done = trace
            .last()
            .map(|prev| (ll - prev).abs() <= opts.tol * prev.abs().max(1.0))
            .unwrap_or(false);
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
    }

    let gmm = Gmm::new(weights, means, covs).map_err(|_| Degenerate)?;
    Ok(FitOutcome {
        gmm,
        log_likelihood: trace,
        iters,
        restarts_used: 0,
        converged,
    })
}

/// k-means++ seeding: first center uniform, then distance²-weighted.
fn seed_centers(data: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> Vec<DVector<f64>> {
    let n = data.nrows();
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(k);
    centers.push(data.row(rng.random_range(0..n)).transpose());
    let mut dist2 = vec![0.0f64; n];
    while centers.len() < k {
        let mut total = 0.0;
        for i in 0..n {
            let x = data.row(i).transpose();
            let d2 = centers
                .iter()
                .map(|c| (&x - c).norm_squared())
                .fold(f64::INFINITY, f64::min);
            dist2[i] = d2;
            total += d2;
        }
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d2) in dist2.iter().enumerate() {
                u -= d2;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All points coincide with some center; any choice is equivalent.
            rng.random_range(0..n)
        };
        centers.push(data.row(next).transpose());
    }
    centers
}

type Estimates = (Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>);

/// Hard-assignment pass over the seeded centers.
fn initial_estimates(
    data: &DMatrix<f64>,
    centers: &[DVector<f64>],
    opts: &FitOptions,
) -> std::result::Result<Estimates, Degenerate> {
    let (n, d) = data.shape();
    let k = centers.len();
    let mut assign = vec![0usize; n];
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let x = data.row(i).transpose();
        let (mut best, mut best_d) = (0usize, f64::INFINITY);
        for (j, c) in centers.iter().enumerate() {
            let dd = (&x - c).norm_squared();
            if dd < best_d {
                best = j;
                best_d = dd;
            }
        }
        assign[i] = best;
        counts[best] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Degenerate);
    }

    let mut weights = vec![0.0; k];
    let mut means = vec![DVector::zeros(d); k];
    let mut covs = vec![DMatrix::zeros(d, d); k];
    for i in 0..n {
        means[assign[i]] += data.row(i).transpose();
    }
    for j in 0..k {
        means[j] /= counts[j] as f64;
        weights[j] = counts[j] as f64 / n as f64;
    }
    for i in 0..n {
        let diff = data.row(i).transpose() - &means[assign[i]];
        covs[assign[i]].ger(1.0, &diff, &diff, 1.0);
    }
    for j in 0..k {
        covs[j] /= counts[j] as f64;
        covs[j] = (&covs[j] + covs[j].transpose()) * 0.5;
        for t in 0..d {
            covs[j][(t, t)] += opts.cov_floor;
        }
    }
    Ok((weights, means, covs))
}

type Component = (f64, nalgebra::Cholesky<f64, nalgebra::Dyn>, DVector<f64>);

fn component_params(
    weights: &[f64],
    means: &[DVector<f64>],
    covs: &[DMatrix<f64>],
) -> std::result::Result<Vec<Component>, Degenerate> {
    let d = means[0].len() as f64;
    let mut out = Vec::with_capacity(weights.len());
    for ((w, mu), cov) in weights.iter().zip(means).zip(covs) {
        if *w <= 0.0 {
            return Err(Degenerate);
        }
        let chol = cov.clone().cholesky().ok_or(Degenerate)?;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_c = w.ln() - 0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det);
        out.push((log_c, chol, mu.clone()));
    }
    Ok(out)
}
