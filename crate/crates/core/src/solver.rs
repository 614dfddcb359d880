//! GSNR-regularized plug-and-play proximal gradient descent, step sizing and
//! convergence instrumentation.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoise::Denoiser;
use crate::error::{check_len, Error, Result};
use crate::experiment::output::fmt_f64;
use crate::graph::GraphLaplacian;
use crate::linalg::{gaussian_vector, sym_eigen_ascending};
use crate::linop::{ImageSignal, LinearMap};
use crate::spectral::{NullRestricted, NullSpectralBasis};
use crate::DENSE_CAP;

/// Error-norm threshold above which a run is declared divergent.
pub const DIVERGENCE_GUARD: f64 = 1e6;
/// Iterations skipped before the contraction summary is taken.
pub const BURN_IN: usize = 5;
/// Power-iteration budget for the automatic step.
pub const POWER_ITERATIONS: usize = 50;
/// Relative tolerance of the power iteration.
pub const POWER_TOL: f64 = 1e-8;

/// Gradient step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Fixed(f64),
    /// `1/λ_max(HᵀH + γ_g T)` by power iteration.
    Auto,
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub alpha: Step,
    /// GSNR weight `γ`.
    pub gamma: f64,
    /// Null-graph weight `γ_g`.
    pub gamma_g: f64,
    /// Prior weight; scales the denoiser strength.
    pub lambda: f64,
    pub iterations: usize,
    pub denoiser: Denoiser,
    /// Assumed denoiser expansion bound `δ`.
    pub delta: f64,
    /// Initialize from `H†y` instead of `Hᵀy`.
    pub init_pinv: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: Step::Auto,
            gamma: 1.0,
            gamma_g: 0.0,
            lambda: 1.0,
            iterations: 100,
            denoiser: Denoiser::Identity,
            delta: 0.0,
            init_pinv: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if let Step::Fixed(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("step size must be positive, got {a}"));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("gamma_g", self.gamma_g), ("lambda", self.lambda), ("delta", self.delta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        Ok(())
    }

    /// The denoiser with its strength multiplied by `lambda`.
    pub fn effective_denoiser(&self) -> Denoiser {
        match self.denoiser {
            Denoiser::Identity => Denoiser::Identity,
            Denoiser::WaveletSoft { filter, levels, threshold } => {
                Denoiser::WaveletSoft { filter, levels, threshold: threshold * self.lambda }
            }
            Denoiser::TvProx { weight, iterations } => Denoiser::TvProx { weight: weight * self.lambda, iterations },
        }
    }
}

/// The data of one reconstruction problem.
#[derive(Debug, Clone)]
pub struct GsnrProblem<'a> {
    h: &'a LinearMap,
    t: NullRestricted<'a>,
    y: DVector<f64>,
    gsnr: Option<(&'a NullSpectralBasis, DVector<f64>)>,
}

impl<'a> GsnrProblem<'a> {
    /// Problem without a GSNR term (`γ` is ignored).
    pub fn new(h: &'a LinearMap, laplacian: &'a GraphLaplacian, y: DVector<f64>) -> Result<Self> {
        check_len(h.m(), y.len())?;
        Ok(GsnrProblem { h, t: NullRestricted::new(h, laplacian)?, y, gsnr: None })
    }

    /// Attaches a basis `S` and predicted coefficients `G(y)`.
    pub fn with_gsnr(mut self, basis: &'a NullSpectralBasis, g_y: DVector<f64>) -> Result<Self> {
        check_len(self.h.n(), basis.n())?;
        check_len(basis.len(), g_y.len())?;
        self.gsnr = Some((basis, g_y));
        Ok(self)
    }

    pub fn h(&self) -> &LinearMap {
        self.h
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.h.n()
    }

    /// `x₀ = Hᵀy + SᵀG(y)` (or `H†y + SᵀG(y)`).
    pub fn initial(&self, init_pinv: bool) -> DVector<f64> {
        let mut x = if init_pinv {
            self.h.pinv_apply(&self.y).expect("checked length")
        } else {
            self.h.adjoint_unchecked(&self.y)
        };
        if let Some((basis, g)) = &self.gsnr {
            x += basis.vectors() * g;
        }
        x
    }
}

/// `½‖Hx−y‖² + (γ/2)‖G(y)−Sx‖² + (γ_g/2)xᵀTx`. The implicit denoiser prior is not included.
pub fn gsnr_objective(problem: &GsnrProblem<'_>, config: &SolverConfig, x: &DVector<f64>) -> Result<f64> {
    check_len(problem.n(), x.len())?;
    let mut f = 0.5 * (problem.h.apply_unchecked(x) - &problem.y).norm_squared();
    if let Some((basis, g)) = &problem.gsnr {
        if config.gamma > 0.0 {
            f += 0.5 * config.gamma * (g - basis.vectors().tr_mul(x)).norm_squared();
        }
    }
    if config.gamma_g > 0.0 {
        f += 0.5 * config.gamma_g * x.dot(&problem.t.apply_unchecked(x));
    }
    Ok(f)
}

/// Gradient of the smooth part: `Hᵀ(Hx−y) + γSᵀ(Sx−G(y)) + γ_g Tx`.
pub fn gsnr_gradient(problem: &GsnrProblem<'_>, config: &SolverConfig, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(problem.n(), x.len())?;
    let mut grad = problem.h.adjoint_unchecked(&(problem.h.apply_unchecked(x) - &problem.y));
    if let Some((basis, g)) = &problem.gsnr {
        if config.gamma > 0.0 {
            let s = basis.vectors();
            grad += s * (s.tr_mul(x) - g) * config.gamma;
        }
    }
    if config.gamma_g > 0.0 {
        grad += problem.t.apply_unchecked(x) * config.gamma_g;
    }
    Ok(grad)
}

/// Per-iteration record of a run, including the initialization.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub objective: Vec<f64>,
    /// PSNR against the reference, NaN without one.
    pub psnr: Vec<f64>,
    /// `‖x_k − x*‖`, NaN without a reference.
    pub err_norm: Vec<f64>,
    pub step: f64,
    pub final_x: ImageSignal,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.objective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objective.is_empty()
    }

    /// CSV with columns `iter,objective,psnr,err_norm`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "iter,objective,psnr,err_norm")?;
            for k in 0..self.len() {
                writeln!(
                    out,
                    "{k},{},{},{}",
                    fmt_f64(self.objective[k]),
                    fmt_f64(self.psnr[k]),
                    fmt_f64(self.err_norm[k])
                )?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Runs `K` iterations of gradient step plus denoiser from `x₀ = Hᵀy + SᵀG(y)`.
///
/// `reference` is the ground truth used for PSNR; `fixed_point`, when given,
/// replaces it for the error norm. The seed drives the automatic step estimate.
pub fn run_gsnr_pgd(
    problem: &GsnrProblem<'_>,
    config: &SolverConfig,
    seed: u64,
    reference: Option<&ImageSignal>,
    fixed_point: Option<&DVector<f64>>,
) -> Result<RunTrace> {
    config.validate()?;
    let shape = problem.h.shape();
    if let Some(r) = reference {
        check_len(problem.n(), r.data.len())?;
    }
    if let Some(f) = fixed_point {
        check_len(problem.n(), f.len())?;
    }
    let step = match config.alpha {
        Step::Fixed(a) => a,
        Step::Auto => {
            let lmax = power_lambda_max(problem, config.gamma_g, config.gamma, seed)?;
            if !(lmax > 0.0) {
                return Err(Error::Singular("automatic step needs a nonzero operator".into()));
            }
            1.0 / lmax
        }
    };
    let denoiser = config.effective_denoiser();
    let target = fixed_point.or(reference.map(|r| &r.data));

    let mut trace = RunTrace {
        objective: Vec::with_capacity(config.iterations + 1),
        psnr: Vec::with_capacity(config.iterations + 1),
        err_norm: Vec::with_capacity(config.iterations + 1),
        step,
        final_x: ImageSignal::zeros(shape),
    };
    let mut x = problem.initial(config.init_pinv);
    for k in 0..=config.iterations {
        if k > 0 {
            let grad = gsnr_gradient(problem, config, &x)?;
            let z = ImageSignal { shape, data: &x - grad * step };
            x = denoiser.apply(&z)?.data;
        }
        let err = target.map(|t| (&x - t).norm()).unwrap_or(f64::NAN);
        let guard = if err.is_nan() { x.norm() } else { err };
        if !guard.is_finite() || guard > DIVERGENCE_GUARD {
            return Err(Error::Diverged { iteration: k, norm: guard });
        }
        trace.objective.push(gsnr_objective(problem, config, &x)?);
        trace.psnr.push(match reference {
            Some(r) => psnr_vec(&x, &r.data, 1.0),
            None => f64::NAN,
        });
        trace.err_norm.push(err);
    }
    trace.final_x = ImageSignal { shape, data: x };
    Ok(trace)
}

/// Fixed point of the identity-denoiser iteration: the solution of
/// `(HᵀH + γSᵀS + γ_g T) x = Hᵀy + γSᵀG(y)` (dense, n ≤ cap).
pub fn quadratic_fixed_point(problem: &GsnrProblem<'_>, config: &SolverConfig) -> Result<DVector<f64>> {
    let n = problem.n();
    if n > DENSE_CAP {
        return Err(Error::DenseCapExceeded { what: "quadratic system", n, cap: DENSE_CAP });
    }
    let mut a = system_matrix(problem.h, &problem.t, config.gamma_g)?;
    let mut rhs = problem.h.adjoint_unchecked(&problem.y);
    if let Some((basis, g)) = &problem.gsnr {
        if config.gamma > 0.0 {
            let s = basis.vectors();
            a += s * s.transpose() * config.gamma;
            rhs += s * g * config.gamma;
        }
    }
    a.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::NotPositiveDefinite("quadratic system has no unique fixed point".into()))
}

fn system_matrix(h: &LinearMap, t: &NullRestricted<'_>, gamma_g: f64) -> Result<DMatrix<f64>> {
    let hd = h.to_dense()?;
    let mut a = hd.tr_mul(&hd);
    if gamma_g > 0.0 {
        a += t.to_dense()? * gamma_g;
    }
    Ok((&a + a.transpose()) * 0.5)
}

/// Extremes of `A_{γ_g} = HᵀH + γ_g T` and the derived step and rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralStep {
    pub alpha_star: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `λ_max/λ_min`, infinite when `A` is singular.
    pub kappa: f64,
    /// `(1+δ)(κ−1)/(κ+1)`.
    pub rho_star: f64,
    /// `λ_max` over the smallest strictly positive eigenvalue.
    pub positive_kappa: f64,
    /// `λ_min` is zero to working precision.
    pub singular: bool,
    /// Extremes came from power iteration rather than a dense decomposition.
    pub estimated: bool,
}

/// Relative size below which an eigenvalue of `A` counts as zero.
const ZERO_EIG_TOL: f64 = 1e-10;

fn summarize(lambda_min: f64, lambda_max: f64, positive_min: f64, delta: f64, estimated: bool) -> SpectralStep {
    let singular = lambda_min <= ZERO_EIG_TOL * lambda_max;
    let (lmin, kappa) = if singular { (lambda_min.max(0.0), f64::INFINITY) } else { (lambda_min, lambda_max / lambda_min) };
    let rho_star = if singular { 1.0 + delta } else { (1.0 + delta) * (kappa - 1.0) / (kappa + 1.0) };
    SpectralStep {
        alpha_star: 2.0 / (lmin + lambda_max),
        lambda_min: lmin,
        lambda_max,
        kappa,
        rho_star,
        positive_kappa: lambda_max / positive_min,
        singular,
        estimated,
    }
}

/// Spectral step sizing for `A_{γ_g}`: dense extremes when `n ≤ 4096`,
/// power-iteration estimates otherwise.
pub fn spectral_step_size(h: &LinearMap, l: &GraphLaplacian, gamma_g: f64, delta: f64, seed: u64) -> Result<SpectralStep> {
    if !(gamma_g >= 0.0) || !(delta >= 0.0) {
        return Err(Error::InvalidArgument("gamma_g and delta must be nonnegative".into()));
    }
    let t = NullRestricted::new(h, l)?;
    if h.n() <= DENSE_CAP {
        let (eig, _) = sym_eigen_ascending(&system_matrix(h, &t, gamma_g)?);
        let lmax = *eig.last().expect("nonempty");
        let positive = eig.iter().copied().find(|&e| e > ZERO_EIG_TOL * lmax).unwrap_or(f64::NAN);
        return Ok(summarize(eig[0], lmax, positive, delta, false));
    }
    let apply = |x: &DVector<f64>| {
        let mut y = h.adjoint_unchecked(&h.apply_unchecked(x));
        if gamma_g > 0.0 {
            y += t.apply_unchecked(x) * gamma_g;
        }
        y
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lmax = power_iteration(&apply, gaussian_vector(&mut rng, h.n()));
    let shifted = |x: &DVector<f64>| x * lmax - apply(x);
    let lmin = lmax - power_iteration(&shifted, gaussian_vector(&mut rng, h.n()));
    // Without a dense spectrum the smallest positive eigenvalue is unknown;
    // the estimate falls back to λ_min.
    Ok(summarize(lmin, lmax, lmin, delta, true))
}

/// Largest eigenvalue of a positive semidefinite action.
fn power_iteration(apply: &dyn Fn(&DVector<f64>) -> DVector<f64>, start: DVector<f64>) -> f64 {
    let mut v = start.normalize();
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = apply(&v);
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let done = (next - estimate).abs() <= POWER_TOL * next.abs();
        estimate = next;
        if done {
            break;
        }
    }
    estimate
}

fn power_lambda_max(problem: &GsnrProblem<'_>, gamma_g: f64, gamma: f64, seed: u64) -> Result<f64> {
    let apply = |x: &DVector<f64>| {
        let mut y = problem.h.adjoint_unchecked(&problem.h.apply_unchecked(x));
        if gamma_g > 0.0 {
            y += problem.t.apply_unchecked(x) * gamma_g;
        }
        if let Some((basis, _)) = &problem.gsnr {
            if gamma > 0.0 {
                let s = basis.vectors();
                y += s * s.tr_mul(x) * gamma;
            }
        }
        y
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(power_iteration(&apply, gaussian_vector(&mut rng, problem.n())))
}

/// Measured per-iteration contraction of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    /// `‖x_{k+1}−x*‖/‖x_k−x*‖`, skipping zero denominators.
    pub ratios: Vec<f64>,
    /// Maximum ratio after the burn-in.
    pub max_after_burn_in: f64,
}

pub fn contraction_rate(trace: &RunTrace) -> Result<ContractionReport> {
    if trace.err_norm.iter().any(|e| e.is_nan()) {
        return Err(Error::InvalidArgument("contraction rate needs a reference point".into()));
    }
    let mut ratios = Vec::new();
    let mut max = f64::NAN;
    for k in 0..trace.err_norm.len().saturating_sub(1) {
        let (a, b) = (trace.err_norm[k], trace.err_norm[k + 1]);
        if a == 0.0 {
            continue;
        }
        let r = b / a;
        ratios.push(r);
        if k >= BURN_IN && !(r <= max) {
            max = r;
        }
    }
    Ok(ContractionReport { ratios, max_after_burn_in: max })
}

/// First iteration whose PSNR is within `tol_db` of the final value.
pub fn iterations_to_plateau(psnr: &[f64], tol_db: f64) -> Option<usize> {
    let last = *psnr.last()?;
    psnr.iter().position(|p| (p - last).abs() <= tol_db)
}

/// `10 log₁₀(peak²/MSE)`, `+∞` for identical signals.
pub fn psnr(x: &ImageSignal, reference: &ImageSignal, peak: f64) -> Result<f64> {
    if x.shape != reference.shape {
        return Err(Error::InvalidArgument(format!("shape {} does not match {}", x.shape, reference.shape)));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    Ok(psnr_vec(&x.data, &reference.data, peak))
}

fn psnr_vec(x: &DVector<f64>, reference: &DVector<f64>, peak: f64) -> f64 {
    let mse = (x - reference).norm_squared() / x.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::WaveletFilter;
    use crate::graph::Topology;
    use crate::linop::{ImageShape, OperatorSpec};
    use crate::spectral::eig_dense_null;
    use rand::Rng;

    fn sr(size: usize, factor: usize) -> LinearMap {
        LinearMap::build(&OperatorSpec::BlockAverageSr { factor }, ImageShape::gray(size, size).unwrap()).unwrap()
    }

    fn operators() -> Vec<LinearMap> {
        let gray = ImageShape::gray(8, 8).unwrap();
        vec![
            LinearMap::build(&OperatorSpec::HadamardCs { rows: 16 }, gray).unwrap(),
            sr(8, 2),
            LinearMap::build(&OperatorSpec::BayerMosaic { pattern: Default::default() }, ImageShape::new(3, 4, 4).unwrap())
                .unwrap(),
            LinearMap::build(&OperatorSpec::blur(1.0), gray).unwrap(),
        ]
    }

    #[test]
    fn psnr_examples() {
        let s = ImageShape::gray(2, 2).unwrap();
        let a = ImageSignal::zeros(s);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&ImageSignal::constant(s, 1.0), &a, 1.0).unwrap().abs() < 1e-12);
        assert!((psnr(&ImageSignal::constant(s, 0.1), &a, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn objective_vanishes_at_truth() {
        let h = sr(8, 2);
        let l = GraphLaplacian::build(Topology::Grid4NN, 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian_vector(&mut rng, 64);
        let p = GsnrProblem::new(&h, &l, h.apply(&x).unwrap()).unwrap();
        let cfg = SolverConfig { gamma: 0.0, gamma_g: 0.0, ..Default::default() };
        assert!(gsnr_objective(&p, &cfg, &x).unwrap().abs() < 1e-20);
    }

    #[test]
    fn graph_term_is_null_dirichlet_energy() {
        let h = sr(8, 2);
        let l = GraphLaplacian::build(Topology::Grid8NN, 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian_vector(&mut rng, 64);
        let p = GsnrProblem::new(&h, &l, h.apply(&x).unwrap()).unwrap();
        let cfg = SolverConfig { gamma: 0.0, gamma_g: 0.3, ..Default::default() };
        let expected = 0.15 * l.dirichlet_energy(&h.project_null(&x).unwrap()).unwrap();
        assert!((gsnr_objective(&p, &cfg, &x).unwrap() - expected).abs() < 1e-10 * expected.max(1.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for h in operators() {
            for topo in Topology::ALL {
                let l = GraphLaplacian::for_shape(topo, h.shape()).unwrap();
                let basis = eig_dense_null(&h, &l, 4).unwrap();
                let y = gaussian_vector(&mut rng, h.m());
                let g = gaussian_vector(&mut rng, 4);
                let p = GsnrProblem::new(&h, &l, y).unwrap().with_gsnr(&basis, g).unwrap();
                let cfg = SolverConfig { gamma: 0.7, gamma_g: 0.2, ..Default::default() };
                for _ in 0..20 {
                    let x = gaussian_vector(&mut rng, h.n());
                    let d = gaussian_vector(&mut rng, h.n());
                    let eps = 1e-5;
                    let fd = (gsnr_objective(&p, &cfg, &(&x + &d * eps)).unwrap()
                        - gsnr_objective(&p, &cfg, &(&x - &d * eps)).unwrap())
                        / (2.0 * eps);
                    let an = gsnr_gradient(&p, &cfg, &x).unwrap().dot(&d);
                    assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{topo} {}: {fd} vs {an}", h.kind());
                }
            }
        }
    }

    #[test]
    fn graph_step_never_changes_measurements() {
        for h in operators() {
            let l = GraphLaplacian::for_shape(Topology::Grid4NN, h.shape()).unwrap();
            let t = NullRestricted::new(&h, &l).unwrap();
            let x = gaussian_vector(&mut ChaCha8Rng::seed_from_u64(4), h.n());
            let tx = t.apply(&x).unwrap() * 0.1;
            // The blur keeps its weakest directions in the effective null space.
            let tol = if h.kind().has_exact_null_space() { 1e-8 } else { 1e-3 * h.sigma_max() };
            assert!(h.apply(&tx).unwrap().norm() <= tol * tx.norm().max(1e-300) + 1e-8 * x.norm());
        }
    }

    #[test]
    fn trace_length_and_initialization() {
        let h = sr(8, 2);
        let l = GraphLaplacian::build(Topology::Grid4NN, 8, 8).unwrap();
        let basis = eig_dense_null(&h, &l, 3).unwrap();
        let y = gaussian_vector(&mut ChaCha8Rng::seed_from_u64(5), 16);
        let g = DVector::from_vec(vec![0.5, -0.2, 0.1]);
        let p = GsnrProblem::new(&h, &l, y.clone()).unwrap().with_gsnr(&basis, g.clone()).unwrap();
        let cfg = SolverConfig { iterations: 7, alpha: Step::Fixed(1.0), ..Default::default() };
        let trace = run_gsnr_pgd(&p, &cfg, 0, None, None).unwrap();
        assert_eq!(trace.len(), 8);
        let x0 = h.adjoint(&y).unwrap() + basis.vectors() * &g;
        assert!((p.initial(false) - x0).norm() < 1e-14);
        assert!(trace.psnr.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn data_residual_is_monotone() {
        let h = sr(8, 2);
        let l = GraphLaplacian::build(Topology::Grid4NN, 8, 8).unwrap();
        let x = gaussian_vector(&mut ChaCha8Rng::seed_from_u64(6), 64);
        let y = h.apply(&x).unwrap();
        let p = GsnrProblem::new(&h, &l, y.clone()).unwrap();
        let cfg = SolverConfig { gamma: 0.0, gamma_g: 0.0, iterations: 1, alpha: Step::Fixed(3.0), ..Default::default() };
        let mut xk = p.initial(false);
        let mut prev = f64::INFINITY;
        for _ in 0..30 {
            let res = (h.apply(&xk).unwrap() - &y).norm();
            assert!(res <= prev + 1e-12);
            prev = res;
            xk = &xk - gsnr_gradient(&p, &cfg, &xk).unwrap() * 3.0;
        }
    }

    #[test]
    fn step_size_extremes() {
        let h = sr(8, 2);
        let l = GraphLaplacian::build(Topology::Grid4NN, 8, 8).unwrap();
        let s0 = spectral_step_size(&h, &l, 0.0, 0.0, 1).unwrap();
        assert!(s0.singular && s0.lambda_min == 0.0 && s0.kappa.is_infinite());
        assert!((s0.lambda_max - 0.25).abs() < 1e-12);
        let s1 = spectral_step_size(&h, &l, 0.1, 0.0, 1).unwrap();
        assert!(!s1.singular && s1.lambda_min > 0.0);
        assert!((s1.alpha_star - 2.0 / (s1.lambda_min + s1.lambda_max)).abs() < 1e-15);
        let s2 = spectral_step_size(&h, &l, 0.1, 0.5, 1).unwrap();
        assert!((s2.rho_star - 1.5 * s1.rho_star).abs() < 1e-14);
    }

    #[test]
    fn identity_denoiser_contracts_at_predicted_rate() {
        let h = sr(8, 2);
        let l = GraphLaplacian::build(Topology::Grid4NN, 8, 8).unwrap();
        let y = gaussian_vector(&mut ChaCha8Rng::seed_from_u64(7), 16);
        let step = spectral_step_size(&h, &l, 0.5, 0.0, 1).unwrap();
        let p = GsnrProblem::new(&h, &l, y).unwrap();
        let cfg = SolverConfig { gamma: 0.0, gamma_g: 0.5, iterations: 60, alpha: Step::Fixed(step.alpha_star), ..Default::default() };
        let xs = quadratic_fixed_point(&p, &cfg).unwrap();
        let trace = run_gsnr_pgd(&p, &cfg, 0, None, Some(&xs)).unwrap();
        let rate = contraction_rate(&trace).unwrap();
        assert!(rate.max_after_burn_in <= step.rho_star + 1e-6, "{} > {}", rate.max_after_burn_in, step.rho_star);
    }

    #[test]
    fn contraction_of_constant_trace_is_one() {
        let s = ImageShape::gray(1, 1).unwrap();
        let trace = RunTrace {
            objective: vec![0.0; 10],
            psnr: vec![0.0; 10],
            err_norm: vec![2.0; 10],
            step: 1.0,
            final_x: ImageSignal::zeros(s),
        };
        let r = contraction_rate(&trace).unwrap();
        assert!(r.ratios.iter().all(|&v| v == 1.0));
        assert_eq!(r.max_after_burn_in, 1.0);
    }

    #[test]
    fn power_iteration_matches_dense_for_auto_step() {
        let h = sr(8, 2);
        let l = GraphLaplacian::build(Topology::Grid4NN, 8, 8).unwrap();
        let p = GsnrProblem::new(&h, &l, DVector::zeros(16)).unwrap();
        let est = power_lambda_max(&p, 0.3, 0.0, 9).unwrap();
        let dense = spectral_step_size(&h, &l, 0.3, 0.0, 9).unwrap().lambda_max;
        // A Rayleigh quotient never exceeds the top eigenvalue.
        assert!(est <= dense * (1.0 + 1e-12) && est >= 0.99 * dense, "{est} vs {dense}");
    }

    #[test]
    fn divergence_is_reported() {
        let h = sr(8, 2);
        let l = GraphLaplacian::build(Topology::Grid4NN, 8, 8).unwrap();
        let y = DVector::from_element(16, 1.0);
        let p = GsnrProblem::new(&h, &l, y).unwrap();
        let cfg = SolverConfig { gamma: 0.0, gamma_g: 0.0, iterations: 200, alpha: Step::Fixed(100.0), ..Default::default() };
        assert!(matches!(run_gsnr_pgd(&p, &cfg, 0, None, None), Err(Error::Diverged { .. })));
    }

    #[test]
    fn wavelet_run_is_deterministic() {
        let h = sr(16, 4);
        let l = GraphLaplacian::build(Topology::Grid4NN, 16, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y: DVector<f64> = DVector::from_fn(16, |_, _| rng.random_range(0.0..1.0));
        let p = GsnrProblem::new(&h, &l, y).unwrap();
        let cfg = SolverConfig {
            gamma_g: 0.1,
            iterations: 20,
            denoiser: Denoiser::WaveletSoft { filter: WaveletFilter::Db4, levels: 2, threshold: 0.01 },
            ..Default::default()
        };
        let a = run_gsnr_pgd(&p, &cfg, 3, None, None).unwrap();
        let b = run_gsnr_pgd(&p, &cfg, 3, None, None).unwrap();
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.final_x.data, b.final_x.data);
    }

    #[test]
    fn plateau_index() {
        assert_eq!(iterations_to_plateau(&[1.0, 5.0, 9.95, 10.0], 0.1), Some(2));
        assert_eq!(iterations_to_plateau(&[], 0.1), None);
    }
}
