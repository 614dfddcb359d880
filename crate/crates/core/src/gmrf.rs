//! Gaussian Markov random field priors and the null-space analytics built on
//! them: coverage curves, automatic choice of `p`, the minimax width and
//! per-mode predictability from measurements.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::graph::GraphLaplacian;
use crate::linalg::{gaussian_vector, spd_inverse};
use crate::linop::{ImageShape, ImageSignal, LinearMap};
use crate::spectral::{NullRestricted, NullSpectralBasis};
use crate::DENSE_CAP;

/// Default GMRF smoothness weight.
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Default GMRF ridge.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Zero-mean Gaussian prior with precision `Q = αL + εI`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmrfPrior {
    laplacian: GraphLaplacian,
    alpha: f64,
    epsilon: f64,
}

impl GmrfPrior {
    pub fn new(laplacian: &GraphLaplacian, alpha: f64, epsilon: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be nonnegative, got {alpha}")));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(GmrfPrior { laplacian: laplacian.clone(), alpha, epsilon })
    }

    pub fn laplacian(&self) -> &GraphLaplacian {
        &self.laplacian
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n(&self) -> usize {
        self.laplacian.nodes()
    }

    /// The same prior with both weights divided by `s²`, i.e. the prior of
    /// `s·x` when `x` follows this one.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        GmrfPrior::new(&self.laplacian, self.alpha / (s * s), self.epsilon / (s * s))
    }

    /// Dense `Q` (symmetric part of `L` for asymmetric topologies).
    pub fn precision_dense(&self) -> Result<DMatrix<f64>> {
        let l = self.laplacian.to_dense_sym()?;
        let n = l.nrows();
        Ok(l * self.alpha + DMatrix::identity(n, n) * self.epsilon)
    }

    /// Dense covariance `Q⁻¹`.
    pub fn covariance_dense(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.precision_dense()?, "GMRF precision")
    }

    /// Null-space variances `λ_i = 1/(αμ_i + ε)` for the modes of `basis`.
    pub fn spectrum(&self, basis: &NullSpectralBasis) -> Vec<f64> {
        prior_spectrum(self, basis.eigenvalues())
    }
}

/// `λ_i = 1/(αμ_i + ε)`.
pub fn prior_spectrum(prior: &GmrfPrior, mu: &[f64]) -> Vec<f64> {
    mu.iter().map(|m| 1.0 / (prior.alpha * m + prior.epsilon)).collect()
}

/// Draws `count` samples with precision `Q` through its dense Cholesky factor:
/// with `Q = LLᵀ`, `x = L⁻ᵀz` has covariance `Q⁻¹`.
pub fn sample_gmrf(prior: &GmrfPrior, shape: ImageShape, count: usize, seed: u64) -> Result<Vec<ImageSignal>> {
    let n = shape.len();
    check_len(prior.n(), n)?;
    if n > DENSE_CAP {
        return Err(Error::DenseCapExceeded { what: "GMRF sampler", n, cap: DENSE_CAP });
    }
    let chol = prior
        .precision_dense()?
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("GMRF precision".into()))?;
    let lt = chol.l().transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let z = gaussian_vector(&mut rng, n);
        let x = lt
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
        out.push(ImageSignal { shape, data: x });
    }
    Ok(out)
}

/// How a coverage curve was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageMode {
    /// Cumulative ratios of the prior's null spectrum.
    ClosedForm,
    /// Traces of the sample covariance of centered, null-projected samples.
    Empirical,
}

/// Fraction of null-space variance captured by the first `p` modes, for
/// `p = 1..=len`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCurve {
    pub values: Vec<f64>,
    pub q: usize,
    pub mode: CoverageMode,
}

impl CoverageCurve {
    /// `C(p)`, with `C(0) = 0`.
    pub fn at(&self, p: usize) -> f64 {
        if p == 0 {
            0.0
        } else {
            self.values[p - 1]
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Closed-form coverage from a full, nonincreasing variance spectrum.
pub fn coverage_from_spectrum(lambda: &[f64]) -> Result<CoverageCurve> {
    if lambda.is_empty() {
        return Err(Error::InvalidArgument("coverage of an empty spectrum".into()));
    }
    let total: f64 = lambda.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("spectrum has no positive mass".into()));
    }
    let mut acc = 0.0;
    let values = lambda
        .iter()
        .map(|l| {
            acc += l;
            acc / total
        })
        .collect();
    Ok(CoverageCurve { values, q: lambda.len(), mode: CoverageMode::ClosedForm })
}

/// Closed-form coverage of a prior; `basis` must hold all `q` null modes.
pub fn coverage_closed_form(prior: &GmrfPrior, basis: &NullSpectralBasis) -> Result<CoverageCurve> {
    if basis.len() != basis.null_dim() {
        return Err(Error::InvalidArgument(format!(
            "closed-form coverage needs the full null spectrum ({} of {} modes given)",
            basis.len(),
            basis.null_dim()
        )));
    }
    coverage_from_spectrum(&prior.spectrum(basis))
}

/// Empirical coverage: samples are centered by their mean and projected onto
/// `Null(H)`; `C(p) = tr(S_p Cov S_pᵀ) / tr(Cov)` for each `p` the basis holds.
pub fn coverage_empirical(
    samples: &[ImageSignal],
    h: &LinearMap,
    basis: &NullSpectralBasis,
) -> Result<CoverageCurve> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empirical coverage needs samples".into()));
    }
    let n = h.n();
    check_len(n, basis.n())?;
    let mut mean = DVector::zeros(n);
    for s in samples {
        check_len(n, s.data.len())?;
        mean += &s.data;
    }
    mean /= samples.len() as f64;
    let k = basis.len();
    let mut captured = vec![0.0; k];
    let mut total = 0.0;
    for s in samples {
        let xn = h.project_null(&(&s.data - &mean))?;
        total += xn.norm_squared();
        let a = basis.vectors().tr_mul(&xn);
        for (c, v) in captured.iter_mut().zip(a.iter()) {
            *c += v * v;
        }
    }
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("samples have no null-space variance".into()));
    }
    let mut acc = 0.0;
    let values = captured
        .iter()
        .map(|c| {
            acc += c;
            acc / total
        })
        .collect();
    Ok(CoverageCurve { values, q: basis.null_dim(), mode: CoverageMode::Empirical })
}

/// Lower bound on `C(p)`: `pλ_p / (pλ₁ + (q − p)λ_{p+1})` for `1 ≤ p ≤ q`.
pub fn coverage_lower_bound(lambda: &[f64], p: usize) -> Result<f64> {
    let q = lambda.len();
    if p == 0 || p > q {
        return Err(Error::InvalidArgument(format!("p = {p} must lie in 1..={q}")));
    }
    let next = if p < q { lambda[p] } else { 0.0 };
    let pf = p as f64;
    Ok(pf * lambda[p - 1] / (pf * lambda[0] + (q - p) as f64 * next))
}

/// Parameters of the automatic choice of `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectPParams {
    pub kappa: f64,
    pub delta: f64,
    pub plateau: usize,
}

impl Default for SelectPParams {
    fn default() -> Self {
        SelectPParams { kappa: 0.95, delta: 1e-3, plateau: 10 }
    }
}

/// Smallest `p` with `C(p) ≥ κ` whose next `plateau` coverage increments
/// `C(p+1) − C(p), …` are all at most `δ`. Increments past the end of the
/// curve are not considered; returns `len` when no `p` qualifies.
pub fn select_p(curve: &CoverageCurve, params: SelectPParams) -> usize {
    let len = curve.len();
    for p in 1..=len {
        if curve.at(p) < params.kappa {
            continue;
        }
        let end = (p + params.plateau).min(len);
        let flat = (p + 1..=end).all(|i| curve.at(i) - curve.at(i - 1) <= params.delta);
        if flat {
            return p;
        }
    }
    len
}

/// Worst-case approximation error over the graph-energy ellipsoid.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxBound {
    /// `τ / μ_{p+1}`.
    pub bound: f64,
    /// `√(τ/μ_{p+1}) · v_{p+1}`.
    pub witness: DVector<f64>,
}

/// Minimax width of the best `p`-dimensional subspace of `Null(H)` over
/// `{x_n : x_nᵀ T x_n ≤ τ}`, with the element attaining it.
pub fn minimax_bound(basis: &NullSpectralBasis, p: usize, tau: f64) -> Result<MinimaxBound> {
    if p >= basis.len() {
        return Err(Error::InvalidArgument(format!(
            "minimax bound at p = {p} needs mode p+1, basis holds {}",
            basis.len()
        )));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be nonnegative, got {tau}")));
    }
    let mu = basis.eigenvalues()[p];
    if !(mu > 0.0) {
        return Err(Error::Singular(format!("mu_(p+1) = {mu:e}: the minimax bound is infinite")));
    }
    let bound = tau / mu;
    Ok(MinimaxBound { bound, witness: basis.vector(p) * bound.sqrt() })
}

/// `‖x − P_{V_p} x‖²` for the first `p` modes.
pub fn subspace_residual(basis: &NullSpectralBasis, p: usize, x: &DVector<f64>) -> Result<f64> {
    let vp = basis.truncate(p)?;
    let a = vp.project(x)?;
    Ok((x - vp.lift(&a)?).norm_squared())
}

/// Random members of the ellipsoid `{x ∈ Null(H) : xᵀTx ≤ τ}`: a Gaussian
/// draw projected onto `Null(H)` and rescaled to energy `τ·u`, `u ~ U(0, 1]`.
/// Draws with zero energy are rejected.
pub fn sample_ellipsoid(t: &NullRestricted<'_>, tau: f64, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(Error::Singular("T vanishes on the sampled null directions".into()));
        }
        let xn = t.project_null(&gaussian_vector(&mut rng, t.n()));
        let energy = xn.dot(&t.apply(&xn)?);
        if !(energy > 1e-300) {
            continue;
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        out.push(xn * (tau * u / energy).sqrt());
    }
    Ok(out)
}

/// Per-mode predictability of null coefficients from measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictabilityReport {
    /// Eigenvalues `μ_j` of `T`.
    pub mu: Vec<f64>,
    /// Population `R²` of the best linear predictor of `a_j = v_jᵀx` from `y`.
    pub rho2: Vec<f64>,
    /// `c_j / (c_j + αμ_j + ε)`.
    pub bound: Vec<f64>,
    /// Coupling strength `c_j = v_jᵀ Q_rn C_rr Q_nr v_j`.
    pub c: Vec<f64>,
}

impl PredictabilityReport {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Largest `ρ_j² − bound_j`.
    pub fn worst_violation(&self) -> f64 {
        self.rho2
            .iter()
            .zip(&self.bound)
            .map(|(r, b)| r - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Dense quantities shared by the predictability report and the Wiener
/// predictor, expressed in ambient coordinates.
pub(crate) struct PosteriorBlocks {
    /// Orthonormal basis `R` of `Range(Hᵀ)`, `n × r`.
    pub range: DMatrix<f64>,
    /// `C = Q⁻¹`.
    pub covariance: DMatrix<f64>,
    /// `Q`.
    pub precision: DMatrix<f64>,
    /// `C_rr = RᵀCR`.
    pub c_rr: DMatrix<f64>,
    /// `H R`, `m × r`.
    pub h_range: DMatrix<f64>,
    /// `C_y⁻¹ = (HR C_rr RᵀHᵀ + σ²I)⁻¹`.
    pub cy_inv: DMatrix<f64>,
}

impl PosteriorBlocks {
    pub(crate) fn new(prior: &GmrfPrior, h: &LinearMap, sigma2: f64) -> Result<Self> {
        check_len(h.n(), prior.n())?;
        if sigma2 < 0.0 {
            return Err(Error::InvalidArgument("noise variance must be nonnegative".into()));
        }
        let precision = prior.precision_dense()?;
        let covariance = spd_inverse(&precision, "GMRF precision")?;
        let range = h.range_basis()?;
        let c_rr = range.tr_mul(&(&covariance * &range));
        let h_range = h.to_dense()? * &range;
        let m = h.m();
        let cy = &h_range * &c_rr * h_range.transpose() + DMatrix::identity(m, m) * sigma2;
        let cy_inv = spd_inverse(&cy, "measurement covariance C_y")
            .map_err(|_| Error::Singular("measurement covariance C_y".into()))?;
        Ok(PosteriorBlocks { range, covariance, precision, c_rr, h_range, cy_inv })
    }

    /// `Cov(a, y)` for coefficients `a = Vᵀx` of null vectors `V` (`k × m`).
    pub(crate) fn coeff_measurement_cov(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        // Cov(a, y) = Vᵀ C_nr Hᵀ with C_nr = C restricted to (null, range).
        let c_nr = v.tr_mul(&(&self.covariance * &self.range));
        c_nr * self.h_range.transpose()
    }
}

/// Population `ρ_j²` and its bound for every mode of `basis`.
pub fn per_mode_predictability(
    prior: &GmrfPrior,
    h: &LinearMap,
    basis: &NullSpectralBasis,
    sigma2: f64,
) -> Result<PredictabilityReport> {
    let blocks = PosteriorBlocks::new(prior, h, sigma2)?;
    let v = basis.vectors();
    let cov_ay = blocks.coeff_measurement_cov(v);
    let mut report = PredictabilityReport {
        mu: basis.eigenvalues().to_vec(),
        rho2: Vec::with_capacity(basis.len()),
        bound: Vec::with_capacity(basis.len()),
        c: Vec::with_capacity(basis.len()),
    };
    for j in 0..basis.len() {
        let vj = v.column(j);
        let var_a = vj.dot(&(&blocks.covariance * vj));
        let b = cov_ay.row(j).transpose();
        let explained = b.dot(&(&blocks.cy_inv * &b));
        let rho2 = if var_a > 0.0 { explained / var_a } else { 0.0 };
        let w = blocks.range.tr_mul(&(&blocks.precision * vj));
        let c = w.dot(&(&blocks.c_rr * &w)).max(0.0);
        let q_nn = prior.alpha * basis.eigenvalues()[j] + prior.epsilon;
        report.rho2.push(rho2);
        report.bound.push(c / (c + q_nn));
        report.c.push(c);
    }
    Ok(report)
}

/// Frobenius-relative residuals of the two block-inverse identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockIdentityReport {
    /// `‖C_nr + Q_nn⁻¹ Q_nr C_rr‖ / ‖C_nr‖` (absolute when `C_nr = 0`).
    pub cross: f64,
    /// `‖C_nn − Q_nn⁻¹ − Q_nn⁻¹Q_nr C_rr Q_rn Q_nn⁻¹‖ / ‖C_nn‖`.
    pub null_block: f64,
    /// `‖C_nr‖_F`, for reference.
    pub c_nr_norm: f64,
}

/// Checks the Schur-complement identities relating the blocks of `Q` and
/// `C = Q⁻¹` in range/null coordinates of `h`.
pub fn block_identity_check(prior: &GmrfPrior, h: &LinearMap) -> Result<BlockIdentityReport> {
    check_len(h.n(), prior.n())?;
    let q = prior.precision_dense()?;
    block_identity_check_dense(&q, &h.range_basis()?, &h.null_basis()?)
}

/// Same check for an explicit SPD `q` and orthonormal range/null bases.
pub fn block_identity_check_dense(
    q: &DMatrix<f64>,
    range: &DMatrix<f64>,
    null: &DMatrix<f64>,
) -> Result<BlockIdentityReport> {
    let c = spd_inverse(q, "precision")?;
    let block = |m: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>| a.tr_mul(&(m * b));
    let q_nn = block(q, null, null);
    let q_nr = block(q, null, range);
    let c_rr = block(&c, range, range);
    let c_nr = block(&c, null, range);
    let c_nn = block(&c, null, null);
    let q_nn_inv = spd_inverse(&q_nn, "Q_nn")?;
    let predicted_nr = -(&q_nn_inv * &q_nr * &c_rr);
    let predicted_nn = &q_nn_inv + &q_nn_inv * &q_nr * &c_rr * q_nr.transpose() * &q_nn_inv;
    let rel = |diff: f64, scale: f64| if scale > 0.0 { diff / scale } else { diff };
    Ok(BlockIdentityReport {
        cross: rel((&c_nr - predicted_nr).norm(), c_nr.norm()),
        null_block: rel((&c_nn - predicted_nn).norm(), c_nn.norm()),
        c_nr_norm: c_nr.norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Topology;
    use crate::linop::OperatorSpec;
    use crate::spectral::eig_dense_null;
    use proptest::prelude::*;
    use rand::Rng;

    fn sr(size: usize, f: usize) -> LinearMap {
        LinearMap::build(&OperatorSpec::BlockAverageSr { factor: f }, ImageShape::gray(size, size).unwrap()).unwrap()
    }

    fn setup(topo: Topology, size: usize, f: usize) -> (LinearMap, GraphLaplacian, NullSpectralBasis) {
        let h = sr(size, f);
        let l = GraphLaplacian::build(topo, size, size).unwrap();
        let b = eig_dense_null(&h, &l, h.null_dim()).unwrap();
        (h, l, b)
    }

    #[test]
    fn spectrum_formula() {
        let l = GraphLaplacian::build(Topology::Identity, 2, 2).unwrap();
        let prior = GmrfPrior::new(&l, 1.0, 0.01).unwrap();
        assert!((prior_spectrum(&prior, &[0.0])[0] - 100.0).abs() < 1e-12);
        let lam = prior_spectrum(&prior, &[1.0, 1.0]);
        assert!(lam.iter().all(|v| (v - 1.0 / 1.01).abs() < 1e-15));
        let lam = prior_spectrum(&prior, &[0.1, 0.2, 0.5]);
        assert!(lam.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn rejects_bad_weights() {
        let l = GraphLaplacian::build(Topology::Grid4NN, 2, 2).unwrap();
        assert!(GmrfPrior::new(&l, 1.0, 0.0).is_err());
        assert!(GmrfPrior::new(&l, -1.0, 0.1).is_err());
    }

    #[test]
    fn sample_covariance_matches_inverse_precision() {
        let shape = ImageShape::gray(4, 4).unwrap();
        let l = GraphLaplacian::build(Topology::Grid4NN, 4, 4).unwrap();
        let prior = GmrfPrior::new(&l, 1.0, 0.5).unwrap();
        let samples = sample_gmrf(&prior, shape, 20000, 11).unwrap();
        let mut emp = DMatrix::zeros(16, 16);
        for s in &samples {
            emp += &s.data * s.data.transpose();
        }
        emp /= samples.len() as f64;
        let truth = prior.covariance_dense().unwrap();
        // Entrywise relative check on entries carrying meaningful correlation.
        for i in 0..16 {
            for j in 0..16 {
                let t = truth[(i, j)];
                let se = ((truth[(i, i)] * truth[(j, j)] + t * t) / 20000.0).sqrt();
                if t.abs() > 10.0 * se {
                    assert!((emp[(i, j)] - t).abs() <= 5.0 * se, "({i},{j}) {} vs {t}", emp[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn isotropic_prior_has_variance_one_over_eps() {
        let shape = ImageShape::gray(3, 3).unwrap();
        let l = GraphLaplacian::build(Topology::Grid4NN, 3, 3).unwrap();
        let prior = GmrfPrior::new(&l, 0.0, 4.0).unwrap();
        let samples = sample_gmrf(&prior, shape, 20000, 3).unwrap();
        let var: f64 = samples.iter().map(|s| s.data.norm_squared()).sum::<f64>() / (9.0 * 20000.0);
        assert!((var - 0.25).abs() < 0.01);
    }

    #[test]
    fn sampling_is_deterministic() {
        let shape = ImageShape::gray(4, 4).unwrap();
        let l = GraphLaplacian::build(Topology::Grid8NN, 4, 4).unwrap();
        let prior = GmrfPrior::new(&l, 1.0, 0.01).unwrap();
        let a = sample_gmrf(&prior, shape, 5, 9).unwrap();
        let b = sample_gmrf(&prior, shape, 5, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_gmrf(&prior, shape, 5, 10).unwrap());
    }

    #[test]
    fn identity_coverage_is_linear() {
        let (_, l, b) = setup(Topology::Identity, 8, 2);
        let prior = GmrfPrior::new(&l, 1.0, 0.01).unwrap();
        let c = coverage_closed_form(&prior, &b).unwrap();
        let q = c.q as f64;
        for p in 1..=c.len() {
            assert!((c.at(p) - p as f64 / q).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_coverage_dominates_linear_and_lower_bound() {
        for topo in [Topology::Grid4NN, Topology::Grid8NN, Topology::SymNormalized] {
            let (_, l, b) = setup(topo, 16, 4);
            let prior = GmrfPrior::new(&l, 1.0, 0.01).unwrap();
            let lam = prior.spectrum(&b);
            let c = coverage_closed_form(&prior, &b).unwrap();
            let q = c.q;
            assert!((c.at(q) - 1.0).abs() < 1e-12);
            for p in 1..q {
                assert!(c.at(p) > p as f64 / q as f64, "{topo} p={p}");
                let lb = coverage_lower_bound(&lam, p).unwrap();
                assert!(lb <= c.at(p) + 1e-12);
            }
        }
    }

    #[test]
    fn lower_bound_is_linear_on_flat_spectra_but_not_above_it_in_general() {
        let flat = vec![0.5; 10];
        for p in 1..=10 {
            assert!((coverage_lower_bound(&flat, p).unwrap() - p as f64 / 10.0).abs() < 1e-15);
        }
        // A dominant first eigenvalue drags the bound below p/q while C(p) stays above it.
        let lam = [100.0, 1.0, 1.0, 0.5];
        let c = coverage_from_spectrum(&lam).unwrap();
        let lb = coverage_lower_bound(&lam, 2).unwrap();
        assert!(lb < 0.5 && c.at(2) > 0.5 && lb <= c.at(2));
    }

    #[test]
    fn closed_form_needs_full_basis() {
        let (_, l, b) = setup(Topology::Grid4NN, 8, 2);
        let prior = GmrfPrior::new(&l, 1.0, 0.01).unwrap();
        assert!(coverage_closed_form(&prior, &b.truncate(5).unwrap()).is_err());
    }

    #[test]
    fn empirical_coverage_matches_marginal_null_covariance() {
        // Oracle: the exact marginal covariance Pₙ Q⁻¹ Pₙ of the samples.
        let (h, l, b) = setup(Topology::Grid8NN, 8, 2);
        let prior = GmrfPrior::new(&l, 1.0, 0.01).unwrap();
        let samples = sample_gmrf(&prior, h.shape(), 5000, 21).unwrap();
        let emp = coverage_empirical(&samples, &h, &b).unwrap();
        let pn = h.null_projector_dense().unwrap();
        let cn = &pn * prior.covariance_dense().unwrap() * &pn;
        let total = cn.trace();
        let mut acc = 0.0;
        for p in 1..=b.len() {
            let v = b.vector(p - 1);
            acc += v.dot(&(&cn * &v));
            assert!((emp.at(p) - acc / total).abs() < 0.02, "p={p}");
        }
        assert!((emp.at(b.len()) - 1.0).abs() < 1e-10);
        assert!(coverage_empirical(&[], &h, &b).is_err());
    }

    #[test]
    fn closed_form_equals_conditional_null_covariance() {
        // The spectral closed form describes Q_nn⁻¹ = (αT + εI)⁻¹ on Null(H).
        let (h, l, b) = setup(Topology::Grid4NN, 8, 2);
        let prior = GmrfPrior::new(&l, 1.0, 0.01).unwrap();
        let nb = h.null_basis().unwrap();
        let q_nn = nb.transpose() * prior.precision_dense().unwrap() * &nb;
        let cond = &nb * spd_inverse(&q_nn, "Q_nn").unwrap() * nb.transpose();
        let c = coverage_closed_form(&prior, &b).unwrap();
        let total = cond.trace();
        let mut acc = 0.0;
        for p in 1..=b.len() {
            let v = b.vector(p - 1);
            acc += v.dot(&(&cond * &v));
            assert!((c.at(p) - acc / total).abs() < 1e-10);
        }
    }

    fn curve(lambda: &[f64]) -> CoverageCurve {
        coverage_from_spectrum(lambda).unwrap()
    }

    #[test]
    fn select_p_on_crafted_spectra() {
        let params = SelectPParams::default();
        assert_eq!(select_p(&curve(&[1.0; 50]), params), 50);
        let mut one_hot = vec![0.0; 50];
        one_hot[0] = 1.0;
        assert_eq!(select_p(&curve(&one_hot), params), 1);
        let mut crafted = vec![0.5, 0.3, 0.16];
        crafted.extend(std::iter::repeat_n(1e-4, 400));
        let c = curve(&crafted);
        assert!((c.at(3) - 0.96).abs() < 1e-12);
        assert!((c.at(4) - c.at(3) - 1e-4).abs() < 1e-12);
        assert_eq!(select_p(&c, params), 3);
    }

    #[test]
    fn minimax_witness_attains_bound() {
        let (h, l, b) = setup(Topology::Grid4NN, 8, 2);
        let t = NullRestricted::new(&h, &l).unwrap();
        for p in [0, 1, 5, 20] {
            let mb = minimax_bound(&b, p, 1.0).unwrap();
            let energy = mb.witness.dot(&t.apply(&mb.witness).unwrap());
            assert!((energy - 1.0).abs() < 1e-8);
            let res = subspace_residual(&b, p, &mb.witness).unwrap();
            assert!((res - mb.bound).abs() < 1e-8);
            for x in sample_ellipsoid(&t, 1.0, 200, p as u64).unwrap() {
                assert!(x.dot(&t.apply(&x).unwrap()) <= 1.0 + 1e-9);
                assert!(subspace_residual(&b, p, &x).unwrap() <= mb.bound + 1e-8);
            }
        }
        assert!(minimax_bound(&b, b.len(), 1.0).is_err());
    }

    #[test]
    fn identity_minimax_bound_is_tau() {
        let (_, _, b) = setup(Topology::Identity, 8, 2);
        for p in [0, 3, 10, 40] {
            assert!((minimax_bound(&b, p, 2.5).unwrap().bound - 2.5).abs() < 1e-10);
        }
    }

    #[test]
    fn predictability_respects_bound() {
        for topo in [Topology::Grid4NN, Topology::Grid8NN, Topology::Identity] {
            let (h, l, b) = setup(topo, 8, 2);
            let prior = GmrfPrior::new(&l, 1.0, 0.01).unwrap();
            let r = per_mode_predictability(&prior, &h, &b, 0.05).unwrap();
            assert!(r.worst_violation() <= 1e-8, "{topo}");
            assert!(r.rho2.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
            if topo == Topology::Identity {
                assert!(r.rho2.iter().all(|v| v.abs() < 1e-12));
                assert!(r.c.iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn predictability_equality_without_noise() {
        let (h, l, b) = setup(Topology::Grid4NN, 8, 2);
        let prior = GmrfPrior::new(&l, 1.0, 0.01).unwrap();
        let r = per_mode_predictability(&prior, &h, &b, 0.0).unwrap();
        for (rho, bound) in r.rho2.iter().zip(&r.bound) {
            assert!((rho - bound).abs() < 1e-8);
        }
    }

    #[test]
    fn block_identities_hold() {
        let (h, l, _) = setup(Topology::Grid4NN, 8, 2);
        let prior = GmrfPrior::new(&l, 1.0, 0.01).unwrap();
        let r = block_identity_check(&prior, &h).unwrap();
        assert!(r.cross <= 1e-8 && r.null_block <= 1e-8);
        let iso = GmrfPrior::new(&l, 0.0, 0.3).unwrap();
        let r = block_identity_check(&iso, &h).unwrap();
        assert!(r.c_nr_norm < 1e-12);
    }

    #[test]
    fn block_identities_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = DMatrix::from_fn(8, 8, |_, _| rng.random::<f64>() - 0.5);
        let q = &a * a.transpose() + DMatrix::identity(8, 8) * 0.5;
        let hm = DMatrix::from_fn(4, 8, |_, _| rng.random::<f64>() - 0.5);
        let svd = hm.svd(false, true);
        let vt = svd.v_t.unwrap();
        let full = crate::linalg::sym_eigen_ascending(&(vt.transpose() * &vt)).1;
        // Range: row space of hm; null: eigenvectors of I − VVᵀ with eigenvalue 1.
        let range = vt.transpose();
        let null = full.columns(0, 4).into_owned();
        assert!((range.tr_mul(&null)).norm() < 1e-10);
        let r = block_identity_check_dense(&q, &range, &null).unwrap();
        assert!(r.cross <= 1e-8 && r.null_block <= 1e-8);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        let e = DMatrix::<f64>::identity(4, 4);
        let r = block_identity_check_dense(&d, &e.columns(0, 2).into_owned(), &e.columns(2, 2).into_owned()).unwrap();
        assert!(r.c_nr_norm == 0.0 && r.cross == 0.0 && r.null_block < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn coverage_of_sorted_spectrum_dominates_linear(mut lam in prop::collection::vec(0.001f64..10.0, 2..60)) {
            lam.sort_by(|a, b| b.total_cmp(a));
            let c = coverage_from_spectrum(&lam).unwrap();
            let q = lam.len();
            prop_assert!((c.at(q) - 1.0).abs() < 1e-12);
            for p in 1..=q {
                prop_assert!(c.at(p) >= p as f64 / q as f64 - 1e-10);
                prop_assert!(c.at(p) >= c.at(p - 1));
                prop_assert!(coverage_lower_bound(&lam, p).unwrap() <= c.at(p) + 1e-12);
            }
        }

        #[test]
        fn select_p_meets_its_contract(mut lam in prop::collection::vec(0.0001f64..1.0, 1..80), kappa in 0.5f64..0.99) {
            lam.sort_by(|a, b| b.total_cmp(a));
            let c = coverage_from_spectrum(&lam).unwrap();
            let params = SelectPParams { kappa, ..SelectPParams::default() };
            let p = select_p(&c, params);
            prop_assert!(p >= 1 && p <= c.len());
            if p < c.len() {
                prop_assert!(c.at(p) >= kappa);
            }
        }
    }
}
