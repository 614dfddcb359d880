//! Linear predictors of null-space coefficients `a = Sx` from measurements `y`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::experiment::output::fmt_f64;
use crate::gmrf::{GmrfPrior, PosteriorBlocks};
use crate::linop::{ImageSignal, LinearMap};
use crate::spectral::NullSpectralBasis;

/// How a predictor's weights were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    /// Population-optimal linear predictor under a GMRF prior.
    Wiener,
    /// Ridge regression on sample pairs.
    Ridge,
}

/// Training provenance.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingRecord {
    Prior { alpha: f64, epsilon: f64, sigma2: f64 },
    Samples { count: usize, beta: f64 },
}

/// `G(y) = W y` with a `p × m` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffPredictor {
    weights: DMatrix<f64>,
    kind: PredictorKind,
    record: TrainingRecord,
}

impl CoeffPredictor {
    pub fn from_weights(weights: DMatrix<f64>, kind: PredictorKind, record: TrainingRecord) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("predictor weights must be finite".into()));
        }
        Ok(CoeffPredictor { weights, kind, record })
    }

    /// The predictor that always returns zero coefficients.
    pub fn zero(p: usize, m: usize) -> Self {
        CoeffPredictor {
            weights: DMatrix::zeros(p, m),
            kind: PredictorKind::Ridge,
            record: TrainingRecord::Samples { count: 0, beta: f64::INFINITY },
        }
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    pub fn record(&self) -> &TrainingRecord {
        &self.record
    }

    /// Output dimension `p`.
    pub fn p(&self) -> usize {
        self.weights.nrows()
    }

    /// Input dimension `m`.
    pub fn m(&self) -> usize {
        self.weights.ncols()
    }

    /// `Wy`.
    pub fn predict(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.m(), y.len())?;
        Ok(&self.weights * y)
    }

    /// Writes the weights as CSV: a `kind,beta,p,m` header row, its values,
    /// then one row of `m` weights per coefficient.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let beta = match self.record {
            TrainingRecord::Samples { beta, .. } => fmt_f64(beta),
            TrainingRecord::Prior { .. } => String::new(),
        };
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "kind,beta,p,m")?;
            writeln!(out, "{:?},{beta},{},{}", self.kind, self.p(), self.m())?;
            for row in self.weights.row_iter() {
                let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
                writeln!(out, "{}", cells.join(","))?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Population Wiener predictor `W = Cov(a, y) C_y⁻¹` for the modes of `basis`.
pub fn wiener_predictor(
    prior: &GmrfPrior,
    h: &LinearMap,
    basis: &NullSpectralBasis,
    sigma2: f64,
) -> Result<CoeffPredictor> {
    let blocks = PosteriorBlocks::new(prior, h, sigma2)?;
    let weights = blocks.coeff_measurement_cov(basis.vectors()) * &blocks.cy_inv;
    CoeffPredictor::from_weights(
        weights,
        PredictorKind::Wiener,
        TrainingRecord::Prior { alpha: prior.alpha(), epsilon: prior.epsilon(), sigma2 },
    )
}

/// Per-mode population `R²_j = 1 − E(a_j − w_jᵀy)² / E a_j²` of any linear
/// predictor under the GMRF prior.
pub fn population_r2(
    prior: &GmrfPrior,
    h: &LinearMap,
    basis: &NullSpectralBasis,
    sigma2: f64,
    g: &CoeffPredictor,
) -> Result<Vec<f64>> {
    check_len(basis.len(), g.p())?;
    check_len(h.m(), g.m())?;
    let blocks = PosteriorBlocks::new(prior, h, sigma2)?;
    let cov_ay = blocks.coeff_measurement_cov(basis.vectors());
    let cy = (&blocks.cy_inv).clone().try_inverse().ok_or_else(|| Error::Singular("C_y".into()))?;
    let mut out = Vec::with_capacity(basis.len());
    for j in 0..basis.len() {
        let v = basis.vectors().column(j);
        let var_a = v.dot(&(&blocks.covariance * v));
        let w = g.weights.row(j).transpose();
        let cross = cov_ay.row(j).transpose().dot(&w);
        let mse = var_a - 2.0 * cross + w.dot(&(&cy * &w));
        out.push(if var_a > 0.0 { 1.0 - mse / var_a } else { 0.0 });
    }
    Ok(out)
}

/// Default ridge strength `1e-3 · tr(YYᵀ) / m`.
pub fn default_beta(ys: &[DVector<f64>]) -> f64 {
    let m = ys.first().map(|y| y.len()).unwrap_or(1).max(1);
    1e-3 * ys.iter().map(|y| y.norm_squared()).sum::<f64>() / m as f64
}

/// Ridge regression `W = A Yᵀ (YYᵀ + βI)⁻¹` with the measurements as the
/// columns of `Y` and the target coefficients as the columns of `A`.
/// `beta = None` uses [`default_beta`].
pub fn train_ridge(ys: &[DVector<f64>], targets: &[DVector<f64>], beta: Option<f64>) -> Result<CoeffPredictor> {
    if ys.len() < 2 || ys.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "ridge training needs at least 2 matched pairs, got {} measurements and {} targets",
            ys.len(),
            targets.len()
        )));
    }
    let m = ys[0].len();
    let p = targets[0].len();
    for (y, a) in ys.iter().zip(targets) {
        check_len(m, y.len())?;
        check_len(p, a.len())?;
    }
    let beta = beta.unwrap_or_else(|| default_beta(ys));
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge strength must be positive, got {beta}")));
    }
    let y = DMatrix::from_columns(ys);
    let a = DMatrix::from_columns(targets);
    let gram = &y * y.transpose() + DMatrix::identity(m, m) * beta;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("ridge normal equations".into()))?;
    // W = A Yᵀ G⁻¹  ⇔  G Wᵀ = Y Aᵀ.
    let wt = chol.solve(&(&y * a.transpose()));
    CoeffPredictor::from_weights(
        wt.transpose(),
        PredictorKind::Ridge,
        TrainingRecord::Samples { count: ys.len(), beta },
    )
}

/// `R² = 1 − Σ‖G(y) − Sx‖² / Σ‖Sx‖²` over test pairs `(y, x)`.
pub fn r2_score(g: &CoeffPredictor, basis: &NullSpectralBasis, pairs: &[(DVector<f64>, ImageSignal)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("R² needs a nonempty test set".into()));
    }
    check_len(basis.len(), g.p())?;
    let (mut err, mut total) = (0.0, 0.0);
    for (y, x) in pairs {
        let a = basis.project(&x.data)?;
        err += (g.predict(y)? - &a).norm_squared();
        total += a.norm_squared();
    }
    if !(total > 0.0) {
        return Err(Error::Singular("R² denominator is zero".into()));
    }
    Ok(1.0 - err / total)
}
