//! Gaussian mixture models over uncertain injections and network states.
//!
//! The central property used throughout the crate: an affine map `x ↦ Lx + o`
//! carries a mixture exactly onto another mixture with the same weights,
//! means `Lμ_k + o` and covariances `LΣ_kLᵀ`. Probabilistic load flow is
//! therefore closed-form once the network response is affine.

mod em;
mod jsd;

pub use em::{fit_em, fit_em_with, FitOptions, FitOutcome};
pub use jsd::{jsd, JsdEstimate};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues above this (negative) floor are treated as roundoff and
/// clamped to zero when validating covariances.
const PSD_TOL: f64 = 1e-10;
/// Weights must sum to one within this tolerance.
const WEIGHT_TOL: f64 = 1e-12;

/// A finite Gaussian mixture with full covariances.
///
/// Invariants enforced at construction: at least one component, consistent
/// dimensions, strictly positive weights summing to one, and symmetric
/// positive-semidefinite covariances (eigenvalues ≥ -1e-10 are clamped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmFile", into = "GmmFile")]
pub struct Gmm {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

impl Gmm {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("mixture", "at least one component required"));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::Dimension {
                what: "mixture component count".into(),
                expected: k,
                got: means.len().min(covariances.len()),
            });
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::invalid("mixture", "dimension must be positive"));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) || (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::invalid(
                "mixture",
                format!("weights must be positive and sum to 1 (sum = {sum:.17})"),
            ));
        }
        let mut covs = Vec::with_capacity(k);
        for (idx, (mean, cov)) in means.iter().zip(&covariances).enumerate() {
            if mean.len() != d || mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    "mixture",
                    format!("component {idx} mean has wrong shape or non-finite entries"),
                ));
            }
            if cov.nrows() != d || cov.ncols() != d {
                return Err(Error::Dimension {
                    what: format!("component {idx} covariance"),
                    expected: d,
                    got: cov.nrows().max(cov.ncols()),
                });
            }
            if cov.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    "mixture",
                    format!("component {idx} covariance has non-finite entries"),
                ));
            }
            let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            if (cov - cov.transpose()).iter().any(|v| v.abs() > 1e-8 * scale) {
                return Err(Error::invalid(
                    "mixture",
                    format!("component {idx} covariance is not symmetric"),
                ));
            }
            let sym = (cov + cov.transpose()) * 0.5;
            let eig = sym.clone().symmetric_eigen();
            let min_eig = eig.eigenvalues.min();
            if min_eig < -PSD_TOL * scale {
                return Err(Error::invalid(
                    "mixture",
                    format!("component {idx} covariance has eigenvalue {min_eig:.3e} < 0"),
                ));
            }
            if min_eig < 0.0 {
                // Roundoff-scale negative eigenvalues: clamp to zero.
                let mut vals = eig.eigenvalues.clone();
                vals.iter_mut().for_each(|v| *v = v.max(0.0));
                let rebuilt =
                    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
                covs.push((&rebuilt + rebuilt.transpose()) * 0.5);
            } else {
                covs.push(sym);
            }
        }
        Ok(Gmm {
            weights,
            means,
            covariances: covs,
        })
    }

    /// Number of components K.
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Dimension D.
    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Mixture mean: Σ w_k μ_k.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (w, mu) in self.weights.iter().zip(&self.means) {
            m += mu * *w;
        }
        m
    }

    /// Mixture covariance: Σ w_k (Σ_k + μ_k μ_kᵀ) − μμᵀ.
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let mut c = DMatrix::zeros(self.dim(), self.dim());
        for ((w, mu), cov) in self.weights.iter().zip(&self.means).zip(&self.covariances) {
            c += (cov + mu * mu.transpose()) * *w;
        }
        c -= &m * m.transpose();
        (&c + c.transpose()) * 0.5
    }

    /// Keep only the listed coordinates (in the given order).
    pub fn marginal(&self, dims: &[usize]) -> Result<Gmm> {
        if dims.is_empty() {
            return Err(Error::invalid("marginal", "no dimensions selected"));
        }
        if let Some(&bad) = dims.iter().find(|&&d| d >= self.dim()) {
            return Err(Error::Dimension {
                what: "marginal dimension".into(),
                expected: self.dim(),
                got: bad,
            });
        }
        let means = self
            .means
            .iter()
            .map(|mu| DVector::from_iterator(dims.len(), dims.iter().map(|&d| mu[d])))
            .collect();
        let covs = self
            .covariances
            .iter()
            .map(|c| {
                DMatrix::from_fn(dims.len(), dims.len(), |r, s| c[(dims[r], dims[s])])
            })
            .collect();
        Gmm::new(self.weights.clone(), means, covs)
    }

    /// Exact CDF of a one-dimensional mixture via the Gaussian error function.
    pub fn cdf_1d(&self, x: f64) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::Dimension {
                what: "cdf_1d input".into(),
                expected: 1,
                got: self.dim(),
            });
        }
        let mut acc = 0.0;
        for ((w, mu), cov) in self.weights.iter().zip(&self.means).zip(&self.covariances) {
            let sigma = cov[(0, 0)].max(0.0).sqrt();
            let phi = if sigma > 0.0 {
                0.5 * libm::erfc(-(x - mu[0]) / (sigma * std::f64::consts::SQRT_2))
            } else {
                // Point mass.
                f64::from(x >= mu[0])
            };
            acc += w * phi;
        }
        Ok(acc.clamp(0.0, 1.0))
    }

    /// Mixture density at a point. For repeated evaluation use [`Gmm::density`].
    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.density()?.log_pdf(x).exp())
    }

    /// Precomputed factorization for fast repeated density evaluation.
    /// Fails if a component covariance is singular (density undefined).
    pub fn density(&self) -> Result<GmmDensity<'_>> {
        GmmDensity::new(self)
    }

    /// Draw `n` samples (rows) deterministically from `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> DMatrix<f64> {
        self.sample_with(&mut ChaCha8Rng::seed_from_u64(seed), n)
    }

    pub fn sample_with(&self, rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
        let d = self.dim();
        let factors: Vec<DMatrix<f64>> = self.covariances.iter().map(sampling_factor).collect();
        let mut out = DMatrix::zeros(n, d);
        let mut z = DVector::zeros(d);
        for row in 0..n {
            let k = self.pick_component(rng.random::<f64>());
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let x = &self.means[k] + &factors[k] * &z;
            out.row_mut(row).copy_from(&x.transpose());
        }
        out
    }

    fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.k() - 1
    }
}

/// `x ↦ linear·x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub linear: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn new(linear: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if linear.nrows() != offset.len() {
            return Err(Error::Dimension {
                what: "affine map offset".into(),
                expected: linear.nrows(),
                got: offset.len(),
            });
        }
        Ok(AffineMap { linear, offset })
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.linear * x + &self.offset
    }
}

/// Push a mixture through an affine map (exact).
pub fn transform(gmm: &Gmm, map: &AffineMap) -> Result<Gmm> {
    if map.linear.ncols() != gmm.dim() {
        return Err(Error::Dimension {
            what: "affine map input".into(),
            expected: gmm.dim(),
            got: map.linear.ncols(),
        });
    }
    let means = gmm.means.iter().map(|mu| map.apply(mu)).collect();
    let covs = gmm
        .covariances
        .iter()
        .map(|c| {
            let s = &map.linear * c * map.linear.transpose();
            (&s + s.transpose()) * 0.5
        })
        .collect();
    Gmm::new(gmm.weights.clone(), means, covs)
}

/// Lower factor `F` with `FFᵀ = Σ` for sampling; falls back to an
/// eigenvalue square root when the covariance is only semidefinite.
fn sampling_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = cov.clone().cholesky() {
        return chol.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let mut vals = eig.eigenvalues;
    vals.iter_mut().for_each(|v| *v = v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals)
}

/// Cached per-component Cholesky factors for density evaluation.
pub struct GmmDensity<'a> {
    gmm: &'a Gmm,
    /// (log weight − log normalizer, inverse-solve factor) per component.
    comps: Vec<(f64, nalgebra::Cholesky<f64, nalgebra::Dyn>)>,
}

impl<'a> GmmDensity<'a> {
    fn new(gmm: &'a Gmm) -> Result<Self> {
        let d = gmm.dim() as f64;
        let mut comps = Vec::with_capacity(gmm.k());
        for (k, cov) in gmm.covariances.iter().enumerate() {
            let chol = cov.clone().cholesky().ok_or_else(|| Error::Singular {
                what: format!("mixture component {k} covariance"),
                cond: f64::INFINITY,
            })?;
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            let log_norm = -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det);
            comps.push((gmm.weights[k].ln() + log_norm, chol));
        }
        Ok(GmmDensity { gmm, comps })
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut terms = Vec::with_capacity(self.comps.len());
        for ((log_c, chol), mu) in self.comps.iter().zip(&self.gmm.means) {
            let diff = x - mu;
            let solved = chol.solve(&diff);
            let quad = diff.dot(&solved);
            let term = log_c - 0.5 * quad;
            best = best.max(term);
            terms.push(term);
        }
        if best == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let sum: f64 = terms.iter().map(|t| (t - best).exp()).sum();
        best + sum.ln()
    }
}

/// On-disk form: `{"weights": [...], "means": [[...]], "covariances": [[[...]]]}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmFile {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<GmmFile> for Gmm {
    type Error = Error;

    fn try_from(f: GmmFile) -> Result<Gmm> {
        let means = f.means.into_iter().map(DVector::from_vec).collect();
        let mut covs = Vec::with_capacity(f.covariances.len());
        for rows in f.covariances {
            let d = rows.len();
            if rows.iter().any(|r| r.len() != d) {
                return Err(Error::invalid("mixture file", "covariance is not square"));
            }
            covs.push(DMatrix::from_fn(d, d, |r, c| rows[r][c]));
        }
        Gmm::new(f.weights, means, covs)
    }
}

impl From<Gmm> for GmmFile {
    fn from(g: Gmm) -> GmmFile {
        GmmFile {
            weights: g.weights,
            means: g.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: g
                .covariances
                .iter()
                .map(|c| {
                    (0..c.nrows())
                        .map(|r| c.row(r).iter().copied().collect())
                        .collect()
                })
                .collect(),
        }
    }
}

/// Parse a mixture from its JSON form.
pub fn parse_gmm(json: &str) -> Result<Gmm> {
    serde_json::from_str(json).map_err(|e| Error::Syntax {
        what: "mixture file".into(),
        source: e,
    })
}

/// Load a sample matrix from CSV with a header row; returns column names and
/// an n×d matrix with one observation per row.
pub fn load_samples(reader: impl std::io::Read) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::invalid("sample file", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let d = headers.len();
    if d == 0 {
        return Err(Error::invalid("sample file", "no columns"));
    }
    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::invalid("sample file", e.to_string()))?;
        if record.len() != d {
            return Err(Error::invalid(
                "sample file",
                format!("row {} has {} fields, expected {d}", line + 2, record.len()),
            ));
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::invalid(
                    "sample file",
                    format!("row {}: {:?} is not a number", line + 2, field),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::invalid(
                    "sample file",
                    format!("row {} has a non-finite value", line + 2),
                ));
            }
            rows.push(v);
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid("sample file", "no data rows"));
    }
    let n = rows.len() / d;
    Ok((headers, DMatrix::from_row_slice(n, d, &rows)))
}

/// Extend an n×M active-power sample matrix to n×2M by deriving reactive
/// power at a constant power factor (lagging by default: Q = P·tan(acos(pf))).
pub fn extend_with_reactive(active: &DMatrix<f64>, power_factor: f64) -> Result<DMatrix<f64>> {
    if !(power_factor > 0.0 && power_factor <= 1.0) {
        return Err(Error::invalid(
            "power factor",
            "must lie in (0, 1]".to_string(),
        ));
    }
    let tan_phi = power_factor.acos().tan();
    let (n, m) = active.shape();
    let mut out = DMatrix::zeros(n, 2 * m);
    out.view_mut((0, 0), (n, m)).copy_from(active);
    for r in 0..n {
        for c in 0..m {
            out[(r, m + c)] = active[(r, c)] * tan_phi;
        }
    }
    Ok(out)
}
