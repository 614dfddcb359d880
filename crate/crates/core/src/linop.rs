//! Forward sensing operators with their pseudoinverses and range/null projectors.
//!
//! Every operator is applied matrix-free. The exact kinds (Hadamard rows,
//! block averaging, Bayer sampling) have closed-form Gram matrices
//! `HHᵀ = sI`, so `H† = Hᵀ / s` needs no linear solve. Gaussian blur is square
//! and (numerically) invertible; its null space is the *effective* one spanned
//! by singular directions below `threshold · σ_max`, taken from a dense
//! eigendecomposition of the per-channel circulant matrix.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_len, Error, Result};
use crate::linalg::{dense_from_action, sym_eigen_ascending};
use crate::DENSE_CAP;

/// `(channels, height, width)` layout of a flattened image. Data is stored
/// channel-major, then row-major: `index = c·H·W + r·W + col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image shape must be positive, got {channels}x{height}x{width}"
            )));
        }
        Ok(ImageShape { channels, height, width })
    }

    pub fn gray(height: usize, width: usize) -> Result<Self> {
        Self::new(1, height, width)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, c: usize, r: usize, col: usize) -> usize {
        c * self.plane() + r * self.width + col
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A flattened real image with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSignal {
    pub shape: ImageShape,
    pub data: DVector<f64>,
}

impl ImageSignal {
    pub fn new(shape: ImageShape, data: DVector<f64>) -> Result<Self> {
        check_len(shape.len(), data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("image contains non-finite values".into()));
        }
        Ok(ImageSignal { shape, data })
    }

    pub fn zeros(shape: ImageShape) -> Self {
        ImageSignal { shape, data: DVector::zeros(shape.len()) }
    }

    pub fn constant(shape: ImageShape, value: f64) -> Self {
        ImageSignal { shape, data: DVector::from_element(shape.len(), value) }
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[self.shape.index(c, r, col)]
    }
}

/// A measurement vector together with the noise variance that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub data: DVector<f64>,
    pub noise_sigma2: f64,
}

/// Default measurement noise variance.
pub const DEFAULT_NOISE_SIGMA2: f64 = 0.05;

/// Color filter phase of a Bayer mosaic, named by the 2×2 tile read row-major
/// starting at pixel (0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BayerPattern {
    #[default]
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    /// Channel (0 = R, 1 = G, 2 = B) sampled at pixel `(r, c)`.
    pub fn channel_at(self, r: usize, c: usize) -> usize {
        let tile = match self {
            BayerPattern::Rggb => [0, 1, 1, 2],
            BayerPattern::Bggr => [2, 1, 1, 0],
            BayerPattern::Grbg => [1, 0, 2, 1],
            BayerPattern::Gbrg => [1, 2, 0, 1],
        };
        tile[(r % 2) * 2 + (c % 2)]
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(BayerPattern::Rggb),
            "BGGR" => Ok(BayerPattern::Bggr),
            "GRBG" => Ok(BayerPattern::Grbg),
            "GBRG" => Ok(BayerPattern::Gbrg),
            other => Err(Error::InvalidArgument(format!("unknown Bayer pattern {other:?}"))),
        }
    }
}

/// Operator family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    HadamardCs,
    BlockAverageSr,
    BayerMosaic,
    GaussianBlur,
    ExplicitDense,
}

impl OperatorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hadamardcs" | "hadamard" => Ok(OperatorKind::HadamardCs),
            "blockaveragesr" | "sr" => Ok(OperatorKind::BlockAverageSr),
            "bayermosaic" | "bayer" => Ok(OperatorKind::BayerMosaic),
            "gaussianblur" | "blur" => Ok(OperatorKind::GaussianBlur),
            "explicitdense" | "dense" => Ok(OperatorKind::ExplicitDense),
            other => Err(Error::InvalidArgument(format!("unknown operator kind {other:?}"))),
        }
    }

    /// True when `Pₙ` is the exact null-space projector (`H Pₙ = 0`).
    pub fn has_exact_null_space(self) -> bool {
        !matches!(self, OperatorKind::GaussianBlur)
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OperatorKind::HadamardCs => "HadamardCS",
            OperatorKind::BlockAverageSr => "BlockAverageSR",
            OperatorKind::BayerMosaic => "BayerMosaic",
            OperatorKind::GaussianBlur => "GaussianBlur",
            OperatorKind::ExplicitDense => "ExplicitDense",
        };
        f.write_str(s)
    }
}

/// Kind-specific construction parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    /// First `rows` rows of the Sylvester Hadamard matrix, entries ±1.
    HadamardCs { rows: usize },
    /// Per-channel mean over non-overlapping `factor × factor` blocks.
    BlockAverageSr { factor: usize },
    /// One color sample per pixel.
    BayerMosaic { pattern: BayerPattern },
    /// Circular Gaussian blur of bandwidth `sigma`; singular directions below
    /// `threshold · σ_max` form the effective null space.
    GaussianBlur { sigma: f64, threshold: f64 },
    /// Any `m × n` matrix.
    ExplicitDense { matrix: DMatrix<f64> },
}

impl OperatorSpec {
    pub fn kind(&self) -> OperatorKind {
        match self {
            OperatorSpec::HadamardCs { .. } => OperatorKind::HadamardCs,
            OperatorSpec::BlockAverageSr { .. } => OperatorKind::BlockAverageSr,
            OperatorSpec::BayerMosaic { .. } => OperatorKind::BayerMosaic,
            OperatorSpec::GaussianBlur { .. } => OperatorKind::GaussianBlur,
            OperatorSpec::ExplicitDense { .. } => OperatorKind::ExplicitDense,
        }
    }

    /// Hadamard CS keeping the given fraction of rows (at least one).
    pub fn hadamard_ratio(shape: ImageShape, ratio: f64) -> Self {
        let rows = ((shape.len() as f64) * ratio).round().max(1.0) as usize;
        OperatorSpec::HadamardCs { rows }
    }

    pub fn blur(sigma: f64) -> Self {
        OperatorSpec::GaussianBlur { sigma, threshold: DEFAULT_BLUR_THRESHOLD }
    }
}

/// Default relative singular-value threshold of the blur's effective null space.
pub const DEFAULT_BLUR_THRESHOLD: f64 = 1e-3;

/// Relative rank threshold for explicit dense operators.
const DENSE_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
enum Backend {
    Hadamard {
        rows: usize,
    },
    BlockAverage {
        factor: usize,
    },
    Bayer {
        pattern: BayerPattern,
    },
    Blur {
        sigma: f64,
        threshold: f64,
        /// Circular kernel laid out over one image plane.
        kernel: Vec<f64>,
        /// Kept eigenvectors of the symmetric per-plane circulant (plane × r).
        kept_vectors: DMatrix<f64>,
        kept_values: DVector<f64>,
        sigma_max: f64,
    },
    Dense {
        matrix: DMatrix<f64>,
        /// Right singular vectors spanning the row space (n × r).
        row_space: DMatrix<f64>,
        /// Left singular vectors (m × r).
        col_space: DMatrix<f64>,
        singular: DVector<f64>,
    },
}

/// An `m × n` linear sensing operator.
///
/// Values are immutable after construction; every method takes `&self` and is
/// safe to call from many threads at once.
#[derive(Debug, Clone)]
pub struct LinearMap {
    shape: ImageShape,
    m: usize,
    backend: Backend,
}

impl LinearMap {
    /// Builds an operator acting on images of `shape`.
    pub fn build(spec: &OperatorSpec, shape: ImageShape) -> Result<Self> {
        let n = shape.len();
        match spec {
            OperatorSpec::HadamardCs { rows } => {
                if !n.is_power_of_two() {
                    return Err(Error::InvalidOperator(format!(
                        "Hadamard CS needs n a power of two, got n = {n}"
                    )));
                }
                if *rows == 0 || *rows > n {
                    return Err(Error::InvalidOperator(format!(
                        "Hadamard CS needs 1 <= m <= n, got m = {rows}, n = {n}"
                    )));
                }
                Ok(LinearMap { shape, m: *rows, backend: Backend::Hadamard { rows: *rows } })
            }
            OperatorSpec::BlockAverageSr { factor } => {
                let f = *factor;
                if f == 0 || shape.height % f != 0 || shape.width % f != 0 {
                    return Err(Error::InvalidOperator(format!(
                        "SR factor {f} must divide image dimensions {}x{}",
                        shape.height, shape.width
                    )));
                }
                let m = shape.channels * (shape.height / f) * (shape.width / f);
                Ok(LinearMap { shape, m, backend: Backend::BlockAverage { factor: f } })
            }
            OperatorSpec::BayerMosaic { pattern } => {
                if shape.channels != 3 {
                    return Err(Error::InvalidOperator(format!(
                        "Bayer mosaic needs 3 channels, got {}",
                        shape.channels
                    )));
                }
                if shape.height % 2 != 0 || shape.width % 2 != 0 {
                    return Err(Error::InvalidOperator(format!(
                        "Bayer mosaic needs even dimensions, got {}x{}",
                        shape.height, shape.width
                    )));
                }
                Ok(LinearMap { shape, m: shape.plane(), backend: Backend::Bayer { pattern: *pattern } })
            }
            OperatorSpec::GaussianBlur { sigma, threshold } => build_blur(shape, *sigma, *threshold),
            OperatorSpec::ExplicitDense { matrix } => build_dense(shape, matrix.clone()),
        }
    }

    /// Loads an explicit dense operator from a CSV file whose first row is the
    /// header `rows,cols` followed by a row holding those two numbers and then
    /// the matrix entries row-major, one matrix row per line.
    pub fn load_dense_csv(path: &Path, shape: ImageShape) -> Result<Self> {
        let matrix = read_matrix_csv(path)?;
        build_dense(shape, matrix)
    }

    pub fn kind(&self) -> OperatorKind {
        match self.backend {
            Backend::Hadamard { .. } => OperatorKind::HadamardCs,
            Backend::BlockAverage { .. } => OperatorKind::BlockAverageSr,
            Backend::Bayer { .. } => OperatorKind::BayerMosaic,
            Backend::Blur { .. } => OperatorKind::GaussianBlur,
            Backend::Dense { .. } => OperatorKind::ExplicitDense,
        }
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    /// Number of measurements.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Signal dimension.
    pub fn n(&self) -> usize {
        self.shape.len()
    }

    /// Dimension of the (effective) null space.
    pub fn null_dim(&self) -> usize {
        match &self.backend {
            Backend::Blur { kept_values, .. } => self.n() - self.shape.channels * kept_values.len(),
            Backend::Dense { singular, .. } => self.n() - singular.len(),
            _ => self.n() - self.m,
        }
    }

    /// Rank of `H` (dimension of `Range(Hᵀ)`).
    pub fn rank(&self) -> usize {
        self.n() - self.null_dim()
    }

    /// Scalar `s` with `HHᵀ = s·I` for the exact kinds.
    pub fn gram_scale(&self) -> Option<f64> {
        match self.backend {
            Backend::Hadamard { .. } => Some(self.n() as f64),
            Backend::BlockAverage { factor } => Some(1.0 / (factor * factor) as f64),
            Backend::Bayer { .. } => Some(1.0),
            _ => None,
        }
    }

    /// Largest singular value of `H`.
    pub fn sigma_max(&self) -> f64 {
        match &self.backend {
            Backend::Blur { sigma_max, .. } => *sigma_max,
            Backend::Dense { singular, .. } => singular.iter().cloned().fold(0.0, f64::max),
            _ => self.gram_scale().map(f64::sqrt).unwrap_or(0.0),
        }
    }

    /// Canonical textual description, stable across runs; used for cache keys.
    pub fn descriptor(&self) -> String {
        let s = self.shape;
        match &self.backend {
            Backend::Hadamard { rows } => format!("HadamardCS;{s};rows={rows}"),
            Backend::BlockAverage { factor } => format!("BlockAverageSR;{s};factor={factor}"),
            Backend::Bayer { pattern } => format!("BayerMosaic;{s};pattern={pattern:?}"),
            Backend::Blur { sigma, threshold, .. } => {
                format!("GaussianBlur;{s};sigma={sigma:e};threshold={threshold:e}")
            }
            Backend::Dense { matrix, .. } => {
                let mut d = format!("ExplicitDense;{s};{}x{}", matrix.nrows(), matrix.ncols());
                for v in matrix.iter() {
                    d.push_str(&format!(";{:x}", v.to_bits()));
                }
                d
            }
        }
    }

    /// `y = Hx`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.n(), x.len())?;
        Ok(self.apply_unchecked(x))
    }

    /// `Hᵀz`.
    pub fn adjoint(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.m, z.len())?;
        Ok(self.adjoint_unchecked(z))
    }

    /// `H†z`, through the closed-form Gram (exact kinds) or the thresholded
    /// spectral decomposition (blur, dense).
    pub fn pinv_apply(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.m, z.len())?;
        Ok(self.pinv_unchecked(z))
    }

    /// `Pₙx = x − H†Hx`.
    pub fn project_null(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.n(), x.len())?;
        Ok(self.project_null_unchecked(x))
    }

    /// `P_r x = H†Hx`.
    pub fn project_range(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.n(), x.len())?;
        Ok(self.project_range_unchecked(x))
    }

    /// Range/null-space decomposition of an image.
    pub fn rnsd_split(&self, x: &ImageSignal) -> Result<RnsdSplit> {
        if x.shape != self.shape {
            return Err(Error::DimensionMismatch { expected: self.n(), got: x.shape.len() });
        }
        let range = self.project_range_unchecked(&x.data);
        let null = &x.data - &range;
        Ok(RnsdSplit {
            range_part: ImageSignal { shape: self.shape, data: range },
            null_part: ImageSignal { shape: self.shape, data: null },
        })
    }

    /// Noisy measurement `y = Hx + ω`, `ω ~ N(0, σ²I)`.
    pub fn measure<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        noise_sigma2: f64,
        rng: &mut R,
    ) -> Result<Measurement> {
        if noise_sigma2 < 0.0 {
            return Err(Error::InvalidArgument("noise variance must be nonnegative".into()));
        }
        let mut y = self.apply(x)?;
        add_gaussian_noise(&mut y, noise_sigma2, rng);
        Ok(Measurement { data: y, noise_sigma2 })
    }

    /// Dense `m × n` matrix of `H`.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        self.check_dense_cap("operator")?;
        if let Backend::Dense { matrix, .. } = &self.backend {
            return Ok(matrix.clone());
        }
        Ok(dense_from_action(self.m, self.n(), |x| self.apply_unchecked(x)))
    }

    /// Dense `Pₙ`.
    pub fn null_projector_dense(&self) -> Result<DMatrix<f64>> {
        self.check_dense_cap("null projector")?;
        let n = self.n();
        Ok(dense_from_action(n, n, |x| self.project_null_unchecked(x)))
    }

    /// Orthonormal basis of `Range(Hᵀ)` (n × rank): thin QR of `Hᵀ` for the
    /// exact kinds, kept singular directions otherwise.
    pub fn range_basis(&self) -> Result<DMatrix<f64>> {
        self.check_dense_cap("range basis")?;
        match &self.backend {
            Backend::Blur { kept_vectors, .. } => Ok(self.lift_plane_basis(kept_vectors)),
            Backend::Dense { row_space, .. } => Ok(row_space.clone()),
            _ => {
                let ht = self.to_dense()?.transpose();
                Ok(ht.qr().q())
            }
        }
    }

    /// Orthonormal basis of `Null(H)` (n × null_dim), from a column-pivoted QR
    /// of the dense null projector.
    pub fn null_basis(&self) -> Result<DMatrix<f64>> {
        let q = self.null_dim();
        let pn = self.null_projector_dense()?;
        if q == 0 {
            return Ok(DMatrix::zeros(self.n(), 0));
        }
        let qr = pn.col_piv_qr();
        let full = qr.q();
        Ok(full.columns(0, q).into_owned())
    }

    fn check_dense_cap(&self, what: &'static str) -> Result<()> {
        if self.n() > DENSE_CAP {
            return Err(Error::DenseCapExceeded { what, n: self.n(), cap: DENSE_CAP });
        }
        Ok(())
    }

    fn lift_plane_basis(&self, plane_basis: &DMatrix<f64>) -> DMatrix<f64> {
        let plane = self.shape.plane();
        let r = plane_basis.ncols();
        let mut out = DMatrix::zeros(self.n(), self.shape.channels * r);
        for c in 0..self.shape.channels {
            out.view_mut((c * plane, c * r), (plane, r)).copy_from(plane_basis);
        }
        out
    }

    pub(crate) fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let s = self.shape;
        match &self.backend {
            Backend::Hadamard { rows } => {
                let mut buf = x.as_slice().to_vec();
                fwht(&mut buf);
                DVector::from_iterator(*rows, buf.into_iter().take(*rows))
            }
            Backend::BlockAverage { factor } => {
                let f = *factor;
                let (bh, bw) = (s.height / f, s.width / f);
                let inv = 1.0 / (f * f) as f64;
                let mut y = DVector::zeros(self.m);
                for c in 0..s.channels {
                    for r in 0..s.height {
                        for col in 0..s.width {
                            let k = c * bh * bw + (r / f) * bw + col / f;
                            y[k] += inv * x[s.index(c, r, col)];
                        }
                    }
                }
                y
            }
            Backend::Bayer { pattern } => DVector::from_fn(self.m, |k, _| {
                let (r, col) = (k / s.width, k % s.width);
                x[s.index(pattern.channel_at(r, col), r, col)]
            }),
            Backend::Blur { kernel, .. } => circular_convolve(s, kernel, x),
            Backend::Dense { matrix, .. } => matrix * x,
        }
    }

    pub(crate) fn adjoint_unchecked(&self, z: &DVector<f64>) -> DVector<f64> {
        let s = self.shape;
        match &self.backend {
            Backend::Hadamard { .. } => {
                let mut buf = vec![0.0; self.n()];
                buf[..self.m].copy_from_slice(z.as_slice());
                fwht(&mut buf);
                DVector::from_vec(buf)
            }
            Backend::BlockAverage { factor } => {
                let f = *factor;
                let (bh, bw) = (s.height / f, s.width / f);
                let inv = 1.0 / (f * f) as f64;
                DVector::from_fn(self.n(), |i, _| {
                    let c = i / s.plane();
                    let r = (i % s.plane()) / s.width;
                    let col = i % s.width;
                    inv * z[c * bh * bw + (r / f) * bw + col / f]
                })
            }
            Backend::Bayer { pattern } => {
                let mut x = DVector::zeros(self.n());
                for (k, v) in z.iter().enumerate() {
                    let (r, col) = (k / s.width, k % s.width);
                    x[s.index(pattern.channel_at(r, col), r, col)] = *v;
                }
                x
            }
            // The Gaussian kernel is symmetric, so the circulant is symmetric.
            Backend::Blur { kernel, .. } => circular_convolve(s, kernel, z),
            Backend::Dense { matrix, .. } => matrix.tr_mul(z),
        }
    }

    fn pinv_unchecked(&self, z: &DVector<f64>) -> DVector<f64> {
        if let Some(scale) = self.gram_scale() {
            return self.adjoint_unchecked(z) / scale;
        }
        match &self.backend {
            Backend::Blur { kept_vectors, kept_values, .. } => {
                per_plane(self.shape, z, |plane| {
                    let coeff = kept_vectors.tr_mul(plane).component_div(kept_values);
                    kept_vectors * coeff
                })
            }
            Backend::Dense { row_space, col_space, singular, .. } => {
                let coeff = col_space.tr_mul(z).component_div(singular);
                row_space * coeff
            }
            _ => unreachable!("exact kinds handled above"),
        }
    }

    pub(crate) fn project_range_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.backend {
            Backend::Blur { kept_vectors, .. } => {
                per_plane(self.shape, x, |plane| kept_vectors * kept_vectors.tr_mul(plane))
            }
            Backend::Dense { row_space, .. } => row_space * row_space.tr_mul(x),
            _ => self.pinv_unchecked(&self.apply_unchecked(x)),
        }
    }

    pub(crate) fn project_null_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        x - self.project_range_unchecked(x)
    }
}

/// Output of [`LinearMap::rnsd_split`].
#[derive(Debug, Clone, PartialEq)]
pub struct RnsdSplit {
    pub range_part: ImageSignal,
    pub null_part: ImageSignal,
}

/// Adds i.i.d. Gaussian noise of variance `sigma2` in place.
pub fn add_gaussian_noise<R: Rng + ?Sized>(v: &mut DVector<f64>, sigma2: f64, rng: &mut R) {
    if sigma2 == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("finite standard deviation");
    for x in v.iter_mut() {
        *x += normal.sample(rng);
    }
}

/// In-place fast Walsh–Hadamard transform in natural (Sylvester) order:
/// `out[i] = Σ_j (−1)^{popcount(i & j)} in[j]`.
fn fwht(buf: &mut [f64]) {
    let n = buf.len();
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for i in start..start + h {
                let (a, b) = (buf[i], buf[i + h]);
                buf[i] = a + b;
                buf[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

fn per_plane<F>(shape: ImageShape, x: &DVector<f64>, mut f: F) -> DVector<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let plane = shape.plane();
    let mut out = DVector::zeros(x.len());
    for c in 0..shape.channels {
        let slice = DVector::from_column_slice(&x.as_slice()[c * plane..(c + 1) * plane]);
        out.rows_mut(c * plane, plane).copy_from(&f(&slice));
    }
    out
}

/// Normalized Gaussian kernel wrapped onto an `h × w` torus.
fn gaussian_kernel_plane(height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = vec![0.0; height * width];
    let mut total = 0.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            let r = dy.rem_euclid(height as i64) as usize;
            let c = dx.rem_euclid(width as i64) as usize;
            kernel[r * width + c] += w;
            total += w;
        }
    }
    kernel.iter_mut().for_each(|k| *k /= total);
    kernel
}

fn circular_convolve(shape: ImageShape, kernel: &[f64], x: &DVector<f64>) -> DVector<f64> {
    let (h, w) = (shape.height, shape.width);
    let taps: Vec<(usize, usize, f64)> = kernel
        .iter()
        .enumerate()
        .filter(|(_, k)| **k != 0.0)
        .map(|(i, k)| (i / w, i % w, *k))
        .collect();
    per_plane(shape, x, |plane| {
        DVector::from_fn(h * w, |i, _| {
            let (r, c) = (i / w, i % w);
            taps.iter()
                .map(|&(dy, dx, k)| k * plane[((r + h - dy) % h) * w + (c + w - dx) % w])
                .sum()
        })
    })
}

fn build_blur(shape: ImageShape, sigma: f64, threshold: f64) -> Result<LinearMap> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidOperator(format!("blur bandwidth must be positive, got {sigma}")));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidOperator(format!("blur threshold must lie in [0, 1), got {threshold}")));
    }
    let plane = shape.plane();
    if plane > DENSE_CAP {
        return Err(Error::DenseCapExceeded { what: "blur plane", n: plane, cap: DENSE_CAP });
    }
    let kernel = gaussian_kernel_plane(shape.height, shape.width, sigma);
    let plane_shape = ImageShape { channels: 1, ..shape };
    let dense = dense_from_action(plane, plane, |x| circular_convolve(plane_shape, &kernel, x));
    let (values, vectors) = sym_eigen_ascending(&dense);
    let sigma_max = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let keep: Vec<usize> = (0..plane).filter(|&i| values[i].abs() >= threshold * sigma_max).collect();
    let kept_vectors = DMatrix::from_fn(plane, keep.len(), |r, c| vectors[(r, keep[c])]);
    let kept_values = DVector::from_iterator(keep.len(), keep.iter().map(|&i| values[i]));
    Ok(LinearMap {
        shape,
        m: shape.len(),
        backend: Backend::Blur { sigma, threshold, kernel, kept_vectors, kept_values, sigma_max },
    })
}

fn build_dense(shape: ImageShape, matrix: DMatrix<f64>) -> Result<LinearMap> {
    let (m, n) = matrix.shape();
    if n != shape.len() {
        return Err(Error::InvalidOperator(format!(
            "dense operator has {n} columns but the image has {} pixels",
            shape.len()
        )));
    }
    if m == 0 || m > n {
        return Err(Error::InvalidOperator(format!("dense operator needs 1 <= m <= n, got {m}x{n}")));
    }
    if n > DENSE_CAP {
        return Err(Error::DenseCapExceeded { what: "dense operator", n, cap: DENSE_CAP });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidOperator("dense operator has non-finite entries".into()));
    }
    let svd = matrix.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > DENSE_RANK_TOL * smax.max(f64::MIN_POSITIVE))
        .collect();
    let row_space = DMatrix::from_fn(n, keep.len(), |r, c| vt[(keep[c], r)]);
    let col_space = DMatrix::from_fn(m, keep.len(), |r, c| u[(r, keep[c])]);
    let singular = DVector::from_iterator(keep.len(), keep.iter().map(|&i| svd.singular_values[i]));
    Ok(LinearMap { shape, m, backend: Backend::Dense { matrix, row_space, col_space, singular } })
}

fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let bad = |msg: String| Error::Format { path: path.to_path_buf(), msg };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "rows" || &headers[1] != "cols" {
        return Err(bad("expected header `rows,cols`".into()));
    }
    let mut records = reader.records();
    let dims = records
        .next()
        .ok_or_else(|| bad("missing dimension row".into()))?
        .map_err(|e| bad(e.to_string()))?;
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
    let rows = parse(&dims[0])? as usize;
    let cols = parse(&dims[1])? as usize;
    let mut values = Vec::with_capacity(rows * cols);
    for rec in records {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != cols {
            return Err(bad(format!("row has {} entries, expected {cols}", rec.len())));
        }
        for field in rec.iter() {
            values.push(parse(field)?);
        }
    }
    if values.len() != rows * cols {
        return Err(bad(format!("expected {rows} rows, found {}", values.len() / cols.max(1))));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}
