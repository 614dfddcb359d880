//! Smoothest graph modes inside the null space of a sensing operator.
//!
//! `T = Pₙ L Pₙ` is never materialized. Its smallest eigenpairs on `Null(H)`
//! are the largest of the flipped operator `B = cI − T` with `c` above the
//! Laplacian's spectral bound, which a Krylov method finds without any linear
//! solves. Every Krylov vector is re-projected onto `Null(H)` so round-off in
//! the range space cannot accumulate.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::graph::{GraphLaplacian, Topology};
use crate::linalg::{canonical_sign, dense_from_action, gaussian_vector, sym_eigen_ascending};
use crate::linop::{ImageSignal, LinearMap};
use crate::DENSE_CAP;

/// Vectors farther than this from `Null(H)` are rejected by the dense path.
const NULL_MEMBERSHIP_TOL: f64 = 1e-8;

/// The implicit operator `T = Pₙ L Pₙ` (with `L` replaced by its symmetric part).
#[derive(Debug, Clone, Copy)]
pub struct NullRestricted<'a> {
    h: &'a LinearMap,
    l: &'a GraphLaplacian,
}

impl<'a> NullRestricted<'a> {
    pub fn new(h: &'a LinearMap, l: &'a GraphLaplacian) -> Result<Self> {
        check_len(h.n(), l.nodes())?;
        Ok(NullRestricted { h, l })
    }

    pub fn n(&self) -> usize {
        self.h.n()
    }

    /// `Tx`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.n(), x.len())?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let xn = self.h.project_null_unchecked(x);
        self.h.project_null_unchecked(&self.l.apply_sym_unchecked(&xn))
    }

    /// `Pₙx`.
    pub fn project_null(&self, x: &DVector<f64>) -> DVector<f64> {
        self.h.project_null_unchecked(x)
    }

    /// Dense `T` (n ≤ cap).
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.n() > DENSE_CAP {
            return Err(Error::DenseCapExceeded { what: "null-restricted operator", n: self.n(), cap: DENSE_CAP });
        }
        let t = dense_from_action(self.n(), self.n(), |x| self.apply_unchecked(x));
        Ok((&t + t.transpose()) * 0.5)
    }
}

/// `Tx` for a sensing operator and Laplacian.
pub fn apply_null_restricted(h: &LinearMap, l: &GraphLaplacian, x: &DVector<f64>) -> Result<DVector<f64>> {
    NullRestricted::new(h, l)?.apply(x)
}

/// How a basis was obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveMethod {
    Lanczos { restarts: usize, max_residual: f64 },
    Dense { discarded: usize },
    Loaded,
}

/// Provenance of a basis: which operator and graph produced it, and how.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSource {
    pub operator_id: String,
    pub topology: Topology,
    pub tolerance: f64,
    pub method: SolveMethod,
}

/// The `k` smoothest orthonormal eigenvectors of `T` inside `Null(H)`.
///
/// Vectors are stored as the columns of an `n × k` matrix; the projection `S`
/// of the text is its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpectralBasis {
    vectors: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    null_dim: usize,
    source: BasisSource,
}

impl NullSpectralBasis {
    fn new(
        mut pairs: Vec<(f64, DVector<f64>)>,
        n: usize,
        null_dim: usize,
        source: BasisSource,
    ) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut vectors = DMatrix::zeros(n, pairs.len());
        let mut eigenvalues = Vec::with_capacity(pairs.len());
        for (j, (mu, mut v)) in pairs.into_iter().enumerate() {
            canonical_sign(&mut v);
            vectors.set_column(j, &v);
            eigenvalues.push(mu);
        }
        NullSpectralBasis { vectors, eigenvalues, null_dim, source }
    }

    /// Signal dimension.
    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    /// Number of modes held.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Dimension `q` of the null space the modes live in.
    pub fn null_dim(&self) -> usize {
        self.null_dim
    }

    /// `μ₁ ≤ … ≤ μ_k`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `n × k` matrix whose columns are the modes.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, j: usize) -> DVector<f64> {
        self.vectors.column(j).into_owned()
    }

    /// The `k × n` projection `S`.
    pub fn s_matrix(&self) -> DMatrix<f64> {
        self.vectors.transpose()
    }

    pub fn source(&self) -> &BasisSource {
        &self.source
    }

    /// First `p` modes.
    pub fn truncate(&self, p: usize) -> Result<Self> {
        if p > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {p} modes of a basis with {}",
                self.len()
            )));
        }
        Ok(NullSpectralBasis {
            vectors: self.vectors.columns(0, p).into_owned(),
            eigenvalues: self.eigenvalues[..p].to_vec(),
            null_dim: self.null_dim,
            source: self.source.clone(),
        })
    }

    /// Coefficients `a = Sx`.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.n(), x.len())?;
        Ok(self.vectors.tr_mul(x))
    }

    /// `Sᵀa`, a vector in `Null(H)`.
    pub fn lift(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.len(), a.len())?;
        Ok(&self.vectors * a)
    }

    /// Writes the basis as CSV: a header row `n,p,q,topology`, its values, then
    /// one row per mode holding `μ` followed by the vector entries. Numbers use
    /// the shortest representation that round-trips exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "n,p,q,topology")?;
            writeln!(out, "{},{},{},{}", self.n(), self.len(), self.null_dim, self.source.topology)?;
            for (j, mu) in self.eigenvalues.iter().enumerate() {
                write!(out, "{mu:e}")?;
                for v in self.vectors.column(j).iter() {
                    write!(out, ",{v:e}")?;
                }
                writeln!(out)?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Reads a basis written by [`NullSpectralBasis::write_csv`].
    pub fn read_csv(path: &Path, operator_id: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format { path: path.to_path_buf(), msg };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(path)
            .map_err(|e| bad(e.to_string()))?;
        let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != ["n", "p", "q", "topology"] {
            return Err(bad("expected header `n,p,q,topology`".into()));
        }
        let mut records = reader.records();
        let meta = records
            .next()
            .ok_or_else(|| bad("missing metadata row".into()))?
            .map_err(|e| bad(e.to_string()))?;
        if meta.len() != 4 {
            return Err(bad("metadata row needs 4 fields".into()));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
        let (n, p, q) = (int(&meta[0])?, int(&meta[1])?, int(&meta[2])?);
        let topology = Topology::parse(&meta[3]).map_err(|e| bad(e.to_string()))?;
        let float = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let mut pairs = Vec::with_capacity(p);
        for rec in records {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != n + 1 {
                return Err(bad(format!("mode row has {} fields, expected {}", rec.len(), n + 1)));
            }
            let mu = float(&rec[0])?;
            let v = rec.iter().skip(1).map(float).collect::<Result<Vec<_>>>()?;
            pairs.push((mu, DVector::from_vec(v)));
        }
        if pairs.len() != p {
            return Err(bad(format!("expected {p} mode rows, found {}", pairs.len())));
        }
        let source = BasisSource {
            operator_id: operator_id.to_string(),
            topology,
            tolerance: f64::NAN,
            method: SolveMethod::Loaded,
        };
        Ok(NullSpectralBasis::new(pairs, n, q, source))
    }
}

/// Stable short hash identifying an operator.
pub fn operator_hash(h: &LinearMap) -> String {
    let digest = Sha256::digest(h.descriptor().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Settings for [`eig_smallest_null`].
#[derive(Debug, Clone, PartialEq)]
pub struct LanczosOptions {
    /// Converged when `‖Tv − μv‖ ≤ tol`.
    pub tol: f64,
    /// Restart cap; `None` means `50·k`.
    pub max_restarts: Option<usize>,
    /// Subspace size per cycle; `None` means `max(2k, 40)`.
    pub krylov_dim: Option<usize>,
    /// Seed for the random start vectors.
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions { tol: 1e-10, max_restarts: None, krylov_dim: None, seed: 0x5eed }
    }
}

/// State shared by the restart cycles of one eigensolve.
/// Relative remainder below which a Gram–Schmidt candidate counts as dependent.
const BREAKDOWN_TOL: f64 = 1e-8;

struct Solver<'a> {
    t: NullRestricted<'a>,
    shift: f64,
    q: usize,
    tol: f64,
    rng: ChaCha8Rng,
    locked: Vec<(f64, DVector<f64>)>,
    restarts: usize,
    max_restarts: usize,
    dim: usize,
}

/// Ritz pairs of one Rayleigh–Ritz extraction, ordered by decreasing `θ`.
struct RitzSet {
    theta: Vec<f64>,
    vectors: Vec<DVector<f64>>,
    residual_vectors: Vec<DVector<f64>>,
    residuals: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn apply_b(&self, x: &DVector<f64>) -> DVector<f64> {
        let xn = self.t.h.project_null_unchecked(x);
        let tx = self.t.h.project_null_unchecked(&self.t.l.apply_sym_unchecked(&xn));
        xn * self.shift - tx
    }

    fn random_null_vector(&mut self) -> DVector<f64> {
        let g = gaussian_vector(&mut self.rng, self.t.n());
        self.t.h.project_null_unchecked(&g)
    }

    /// Projects `v` onto `Null(H)`, orthogonalizes it against the locked modes
    /// and `basis` (two Gram–Schmidt passes) and normalizes. `None` when the
    /// remainder is negligible.
    fn orthonormalize(&self, v: &DVector<f64>, basis: &[DVector<f64>]) -> Option<DVector<f64>> {
        let mut w = self.t.h.project_null_unchecked(v);
        let start = w.norm();
        if start == 0.0 {
            return None;
        }
        for pass in 0..2 {
            for (_, u) in &self.locked {
                let c = u.dot(&w);
                w.axpy(-c, u, 1.0);
            }
            for u in basis {
                let c = u.dot(&w);
                w.axpy(-c, u, 1.0);
            }
            if pass == 0 {
                w = self.t.h.project_null_unchecked(&w);
            }
        }
        let norm = w.norm();
        if norm <= BREAKDOWN_TOL * start {
            return None;
        }
        Some(w / norm)
    }

    /// Builds a subspace of size `d` from `retained` Ritz vectors and the
    /// Krylov sequence of `start`, then extracts Ritz pairs of `B`.
    fn cycle(&mut self, retained: Vec<DVector<f64>>, start: Vec<DVector<f64>>, d: usize) -> RitzSet {
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d);
        let mut images: Vec<DVector<f64>> = Vec::with_capacity(d);
        for v in retained.iter().chain(start.iter()) {
            if basis.len() == d {
                break;
            }
            if let Some(u) = self.orthonormalize(v, &basis) {
                images.push(self.apply_b(&u));
                basis.push(u);
            }
        }
        let mut frontier: Vec<usize> = (retained.len().min(basis.len())..basis.len()).collect();
        let mut failures = 0;
        while basis.len() < d {
            let mut next = Vec::new();
            for &i in &frontier {
                if basis.len() == d {
                    break;
                }
                let candidate = images[i].clone();
                let u = match self.orthonormalize(&candidate, &basis) {
                    Some(u) => u,
                    None => {
                        // Krylov sequence broke down: continue from a fresh direction.
                        failures += 1;
                        let fresh = self.random_null_vector();
                        match self.orthonormalize(&fresh, &basis) {
                            Some(u) => u,
                            None => continue,
                        }
                    }
                };
                images.push(self.apply_b(&u));
                basis.push(u);
                next.push(basis.len() - 1);
            }
            if next.is_empty() {
                if failures > 4 * d {
                    break;
                }
                let fresh = self.random_null_vector();
                if let Some(u) = self.orthonormalize(&fresh, &basis) {
                    images.push(self.apply_b(&u));
                    basis.push(u);
                    next.push(basis.len() - 1);
                } else {
                    break;
                }
            }
            frontier = next;
        }

        let m = basis.len();
        let qm = DMatrix::from_columns(&basis);
        let bq = DMatrix::from_columns(&images);
        let projected = qm.tr_mul(&bq);
        let (values, y) = sym_eigen_ascending(&projected);
        let mut set = RitzSet {
            theta: Vec::with_capacity(m),
            vectors: Vec::with_capacity(m),
            residual_vectors: Vec::with_capacity(m),
            residuals: Vec::with_capacity(m),
        };
        for idx in (0..m).rev() {
            let yi = y.column(idx);
            let u = &qm * yi;
            let bu = &bq * yi;
            let r = &bu - &u * values[idx];
            set.residuals.push(r.norm());
            set.residual_vectors.push(r);
            set.theta.push(values[idx]);
            set.vectors.push(u);
        }
        set
    }

    /// Runs restart cycles until `target` modes are locked.
    fn lock_until(&mut self, target: usize, mut retained: Vec<DVector<f64>>) -> Result<()> {
        let mut start = vec![self.random_null_vector(), self.random_null_vector()];
        let mut last_residuals: Vec<f64>;
        while self.locked.len() < target {
            let remaining = self.q - self.locked.len();
            let d = self.dim.min(remaining);
            let set = self.cycle(std::mem::take(&mut retained), std::mem::take(&mut start), d);
            let want = target - self.locked.len();
            let mut newly = 0;
            let mut unconverged = Vec::new();
            for i in 0..set.theta.len() {
                let wanted = i < want;
                let mut v = self.t.h.project_null_unchecked(&set.vectors[i]);
                // A Ritz vector outside Null(H) comes from a numerically dependent subspace.
                if wanted && set.residuals[i] <= self.tol && v.norm() > 0.5 {
                    v /= v.norm();
                    self.locked.push((self.shift - set.theta[i], v));
                    newly += 1;
                } else {
                    unconverged.push(i);
                }
            }
            last_residuals = set.residuals.iter().take(want).copied().collect();
            if self.locked.len() >= target {
                break;
            }
            self.restarts += 1;
            if self.restarts > self.max_restarts {
                let worst = last_residuals.iter().cloned().fold(0.0, f64::max);
                return Err(Error::NonConvergence {
                    restarts: self.restarts - 1,
                    wanted: target,
                    converged: self.locked.len(),
                    worst_residual: worst,
                    residuals: last_residuals,
                });
            }
            if newly == 0 {
                self.dim = (self.dim * 2).min(self.q);
            }
            let want = target - self.locked.len();
            let keep = (want + 8).min(self.dim / 2).max(1);
            retained = unconverged.iter().take(keep).map(|&i| set.vectors[i].clone()).collect();
            let lead = unconverged.first().map(|&i| set.residual_vectors[i].clone());
            start = lead.into_iter().chain(std::iter::once(self.random_null_vector())).collect();
        }
        Ok(())
    }

    /// Searches the deflated null space for a mode smoother than the roughest
    /// locked one. Returns candidate start vectors when one is found.
    fn find_missed(&mut self) -> Option<Vec<DVector<f64>>> {
        let remaining = self.q - self.locked.len();
        if remaining == 0 {
            return None;
        }
        let worst_mu = self.locked.iter().map(|(mu, _)| *mu).fold(f64::NEG_INFINITY, f64::max);
        let start = vec![self.random_null_vector(), self.random_null_vector()];
        let set = self.cycle(Vec::new(), start, self.dim.min(remaining));
        let threshold = self.shift - worst_mu + self.tol.max(1e-12);
        let found: Vec<DVector<f64>> = set
            .theta
            .iter()
            .zip(set.vectors)
            .filter(|(theta, _)| **theta > threshold)
            .map(|(_, v)| v)
            .collect();
        (!found.is_empty()).then_some(found)
    }
}

/// The `k` smallest eigenpairs of `T` on `Null(H)` by projected Lanczos with
/// full reorthogonalization, locking and thick restarts on `B = cI − T`.
pub fn eig_smallest_null(
    h: &LinearMap,
    l: &GraphLaplacian,
    k: usize,
    opts: &LanczosOptions,
) -> Result<NullSpectralBasis> {
    let t = NullRestricted::new(h, l)?;
    let q = h.null_dim();
    if k == 0 || k > q {
        return Err(Error::InvalidArgument(format!("mode count k = {k} must lie in 1..={q}")));
    }
    let shift = l.sym_spectral_bound() + 1.0;
    let mut solver = Solver {
        t,
        shift,
        q,
        tol: opts.tol,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        locked: Vec::with_capacity(k + 1),
        restarts: 0,
        max_restarts: opts.max_restarts.unwrap_or(50 * k),
        dim: opts.krylov_dim.unwrap_or((2 * k).max(40)).max(4).min(q),
    };
    solver.lock_until(k, Vec::new())?;

    // Krylov spaces see one direction per degenerate eigenspace; a deflated
    // pass from fresh vectors catches modes the locking order skipped.
    for _ in 0..(2 * k).max(4) {
        match solver.find_missed() {
            None => break,
            Some(candidates) => {
                let target = solver.locked.len() + 1;
                solver.lock_until(target, candidates)?;
                solver.locked.sort_by(|a, b| a.0.total_cmp(&b.0));
                solver.locked.truncate(k);
            }
        }
    }

    let mut max_residual: f64 = 0.0;
    for (mu, v) in &solver.locked {
        let r = t.apply_unchecked(v) - v * *mu;
        max_residual = max_residual.max(r.norm());
    }
    let source = BasisSource {
        operator_id: operator_hash(h),
        topology: l.topology(),
        tolerance: opts.tol,
        method: SolveMethod::Lanczos { restarts: solver.restarts, max_residual },
    };
    Ok(NullSpectralBasis::new(solver.locked, h.n(), q, source))
}

/// Dense oracle: eigendecomposition of the explicit `T`.
///
/// The range space is shifted above the graph spectrum (`T + c·P_r`) so that
/// the kernel of `T` on `Range(Hᵀ)` cannot mix with genuine null-space modes
/// of eigenvalue zero; vectors outside `Null(H)` are then discarded.
pub fn eig_dense_null(h: &LinearMap, l: &GraphLaplacian, k: usize) -> Result<NullSpectralBasis> {
    let t = NullRestricted::new(h, l)?;
    let n = h.n();
    if n > DENSE_CAP {
        return Err(Error::DenseCapExceeded { what: "dense eigensolve", n, cap: DENSE_CAP });
    }
    let q = h.null_dim();
    if k > q {
        return Err(Error::InvalidArgument(format!("mode count k = {k} exceeds null dimension {q}")));
    }
    let shift = l.sym_spectral_bound() + 1.0;
    let shifted = dense_from_action(n, n, |x| {
        t.apply_unchecked(x) + h.project_range_unchecked(x) * shift
    });
    let (values, vectors) = sym_eigen_ascending(&shifted);
    let mut pairs = Vec::with_capacity(k);
    let mut discarded = 0;
    for (j, mu) in values.iter().enumerate() {
        let v = vectors.column(j).into_owned();
        if (h.project_null_unchecked(&v) - &v).norm() > NULL_MEMBERSHIP_TOL {
            discarded += 1;
            continue;
        }
        if pairs.len() < k {
            pairs.push((*mu, v));
        }
    }
    let source = BasisSource {
        operator_id: operator_hash(h),
        topology: l.topology(),
        tolerance: NULL_MEMBERSHIP_TOL,
        method: SolveMethod::Dense { discarded },
    };
    Ok(NullSpectralBasis::new(pairs, n, q, source))
}

/// Which eigensolver [`smallest_null_modes`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenMethod {
    /// Lanczos for a few modes, dense when most of the null space is wanted.
    #[default]
    Auto,
    Lanczos,
    Dense,
}

impl EigenMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "auto" | "Auto" => Ok(EigenMethod::Auto),
            "lanczos" | "Lanczos" => Ok(EigenMethod::Lanczos),
            "dense" | "Dense" => Ok(EigenMethod::Dense),
            other => Err(Error::InvalidArgument(format!("unknown eigensolver {other:?}"))),
        }
    }
}

/// Smallest `k` null modes with the chosen method. `Auto` picks the dense
/// path when `k > 64` and the problem fits under the dense cap.
pub fn smallest_null_modes(
    h: &LinearMap,
    l: &GraphLaplacian,
    k: usize,
    method: EigenMethod,
    opts: &LanczosOptions,
) -> Result<NullSpectralBasis> {
    let dense = match method {
        EigenMethod::Dense => true,
        EigenMethod::Lanczos => false,
        EigenMethod::Auto => k > 64 && h.n() <= DENSE_CAP,
    };
    if dense {
        eig_dense_null(h, l, k)
    } else {
        eig_smallest_null(h, l, k, opts)
    }
}

/// Projects an image onto the basis: `a = S x`.
pub fn project_s(basis: &NullSpectralBasis, x: &ImageSignal) -> Result<DVector<f64>> {
    basis.project(&x.data)
}

/// Lifts coefficients back to an image: `Sᵀa`.
pub fn lift_s(basis: &NullSpectralBasis, a: &DVector<f64>, like: &ImageSignal) -> Result<ImageSignal> {
    ImageSignal::new(like.shape, basis.lift(a)?)
}

/// Identifies a cached basis.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub operator_hash: String,
    pub topology: Topology,
    pub n: usize,
    pub k: usize,
}

impl CacheKey {
    pub fn new(h: &LinearMap, l: &GraphLaplacian, k: usize) -> Self {
        CacheKey { operator_hash: operator_hash(h), topology: l.topology(), n: h.n(), k }
    }

    pub fn file_name(&self) -> String {
        format!("basis-{}-{}-n{}-k{}.csv", self.operator_hash, self.topology, self.n, self.k)
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/n{}/k{}", self.operator_hash, self.topology, self.n, self.k)
    }
}

/// On-disk store of computed bases.
#[derive(Debug, Clone)]
pub struct BasisCache {
    dir: PathBuf,
}

impl BasisCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(BasisCache { dir })
    }

    pub fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(key.file_name())
    }

    /// Loads the basis for `(h, l, k)` if cached, otherwise computes and stores it.
    /// The flag reports a cache hit.
    pub fn load_or_compute(
        &self,
        h: &LinearMap,
        l: &GraphLaplacian,
        k: usize,
        method: EigenMethod,
        opts: &LanczosOptions,
    ) -> Result<(NullSpectralBasis, CacheKey, bool)> {
        let key = CacheKey::new(h, l, k);
        let path = self.path(&key);
        if path.exists() {
            let basis = NullSpectralBasis::read_csv(&path, &key.operator_hash)?;
            if basis.n() == h.n() && basis.len() == k && basis.null_dim() == h.null_dim() {
                return Ok((basis, key, true));
            }
        }
        let basis = smallest_null_modes(h, l, k, method, opts)?;
        basis.write_csv(&path)?;
        Ok((basis, key, false))
    }
}
