//! Grid graph Laplacians over image pixels.
//!
//! Grids use an open boundary: pixels on the border simply have fewer
//! neighbors. Multichannel images use the block-diagonal lift `I_C ⊗ L`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linop::ImageShape;
use crate::DENSE_CAP;

/// Graph construction rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    /// Unnormalized Laplacian with unit weights between 4-neighbors.
    Grid4NN,
    /// Unnormalized Laplacian with unit orthogonal and `1/√2` diagonal weights.
    Grid8NN,
    /// `I − D⁻¹A` on the 4-neighbor adjacency (asymmetric).
    RandomWalk,
    /// `I − D^{-1/2} A D^{-1/2}` on the 4-neighbor adjacency.
    SymNormalized,
    /// `L = I`: no spatial coupling.
    Identity,
}

impl Topology {
    pub const ALL: [Topology; 5] = [
        Topology::Grid4NN,
        Topology::Grid8NN,
        Topology::RandomWalk,
        Topology::SymNormalized,
        Topology::Identity,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grid4nn" | "4nn" => Ok(Topology::Grid4NN),
            "grid8nn" | "8nn" => Ok(Topology::Grid8NN),
            "randomwalk" | "rw" => Ok(Topology::RandomWalk),
            "symnormalized" | "sym" => Ok(Topology::SymNormalized),
            "identity" | "i" => Ok(Topology::Identity),
            other => Err(Error::InvalidArgument(format!("unknown topology {other:?}"))),
        }
    }

    pub fn is_symmetric(self) -> bool {
        !matches!(self, Topology::RandomWalk)
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Topology::Grid4NN => "Grid4NN",
            Topology::Grid8NN => "Grid8NN",
            Topology::RandomWalk => "RandomWalk",
            Topology::SymNormalized => "SymNormalized",
            Topology::Identity => "Identity",
        };
        f.write_str(s)
    }
}

/// Compressed sparse row matrix, square.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; duplicate columns are summed.
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|(c, _)| *c);
            for (c, v) in row {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries `(column, value)` of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map(|(_, v)| v).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| self.row(i).map(|(j, v)| v * x[j]).sum())
    }

    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (i, j, v) in self.triplets() {
            out[j] += v * x[i];
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    #[cfg(test)]
    fn is_exactly_symmetric(&self) -> bool {
        self.triplets().all(|(i, j, v)| self.get(j, i) == v)
    }
}

/// A sparse graph Laplacian on an image grid, possibly lifted across channels.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLaplacian {
    topology: Topology,
    height: usize,
    width: usize,
    channels: usize,
    matrix: CsrMatrix,
    spectral_bound: f64,
}

impl GraphLaplacian {
    /// Laplacian of a single-channel `height × width` grid.
    pub fn build(topology: Topology, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidGraph(format!("zero-size grid {height}x{width}")));
        }
        let n = height * width;
        let idx = |r: usize, c: usize| r * width + c;
        let neighbors = |r: usize, c: usize, diagonal: bool| {
            let mut out = Vec::with_capacity(8);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let manhattan = dr.abs() + dc.abs();
                    if manhattan == 0 || (manhattan == 2 && !diagonal) {
                        continue;
                    }
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= height as i64 || cc >= width as i64 {
                        continue;
                    }
                    out.push((idx(rr as usize, cc as usize), manhattan == 2));
                }
            }
            out
        };

        let degree4 = |r: usize, c: usize| neighbors(r, c, false).len() as f64;
        let mut rows = Vec::with_capacity(n);
        for r in 0..height {
            for c in 0..width {
                let i = idx(r, c);
                let mut row = Vec::new();
                match topology {
                    Topology::Identity => row.push((i, 1.0)),
                    Topology::Grid4NN | Topology::Grid8NN => {
                        let diagonal = topology == Topology::Grid8NN;
                        let mut degree = 0.0;
                        for (j, is_diag) in neighbors(r, c, diagonal) {
                            let w = if is_diag { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                            degree += w;
                            row.push((j, -w));
                        }
                        row.push((i, degree));
                    }
                    Topology::RandomWalk => {
                        let d = degree4(r, c);
                        if d > 0.0 {
                            row.push((i, 1.0));
                            for (j, _) in neighbors(r, c, false) {
                                row.push((j, -1.0 / d));
                            }
                        }
                    }
                    Topology::SymNormalized => {
                        let d = degree4(r, c);
                        if d > 0.0 {
                            row.push((i, 1.0));
                            for (j, _) in neighbors(r, c, false) {
                                let dj = degree4(j / width, j % width);
                                row.push((j, -1.0 / (d * dj).sqrt()));
                            }
                        }
                    }
                }
                rows.push(row);
            }
        }
        let matrix = CsrMatrix::from_rows(rows);
        let spectral_bound = gershgorin(&matrix);
        Ok(GraphLaplacian { topology, height, width, channels: 1, matrix, spectral_bound })
    }

    /// Laplacian for an image shape: the grid Laplacian lifted to its channels.
    pub fn for_shape(topology: Topology, shape: ImageShape) -> Result<Self> {
        Self::build(topology, shape.height, shape.width)?.channel_lift(shape.channels)
    }

    /// Block-diagonal replication `I_C ⊗ L`.
    pub fn channel_lift(&self, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidGraph("channel count must be at least 1".into()));
        }
        let base = self.matrix.nrows();
        let mut rows = Vec::with_capacity(base * channels);
        for c in 0..channels {
            for i in 0..base {
                rows.push(self.matrix.row(i).map(|(j, v)| (c * base + j, v)).collect());
            }
        }
        Ok(GraphLaplacian {
            topology: self.topology,
            height: self.height,
            width: self.width,
            channels: self.channels * channels,
            matrix: CsrMatrix::from_rows(rows),
            spectral_bound: self.spectral_bound,
        })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn nodes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_symmetric(&self) -> bool {
        self.topology.is_symmetric()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// `Lx`, with the stored (possibly asymmetric) matrix.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.nodes(), x.len())?;
        Ok(self.matrix.mul_vec(x))
    }

    /// Action of the symmetric part `½(L + Lᵀ)`; equals `Lx` for symmetric topologies.
    pub fn apply_sym(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.nodes(), x.len())?;
        Ok(self.apply_sym_unchecked(x))
    }

    pub(crate) fn apply_sym_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.is_symmetric() {
            self.matrix.mul_vec(x)
        } else {
            (self.matrix.mul_vec(x) + self.matrix.tr_mul_vec(x)) * 0.5
        }
    }

    /// Dirichlet energy `xᵀLx`.
    pub fn dirichlet_energy(&self, x: &DVector<f64>) -> Result<f64> {
        if !self.is_symmetric() {
            return Err(Error::AsymmetricLaplacian("Dirichlet energy"));
        }
        check_len(self.nodes(), x.len())?;
        Ok(x.dot(&self.matrix.mul_vec(x)))
    }

    /// Upper bound on `λ_max(L)`: the larger of the Gershgorin row bound and
    /// twice the largest diagonal entry.
    pub fn spectral_bound(&self) -> Result<f64> {
        if !self.is_symmetric() {
            return Err(Error::AsymmetricLaplacian("spectral bound"));
        }
        Ok(self.spectral_bound)
    }

    /// Same bound for the symmetric part, valid for every topology.
    pub(crate) fn sym_spectral_bound(&self) -> f64 {
        self.spectral_bound
    }

    /// Dense matrix of the symmetric part.
    pub fn to_dense_sym(&self) -> Result<DMatrix<f64>> {
        if self.nodes() > DENSE_CAP {
            return Err(Error::DenseCapExceeded { what: "Laplacian", n: self.nodes(), cap: DENSE_CAP });
        }
        let d = self.matrix.to_dense();
        Ok((&d + d.transpose()) * 0.5)
    }

    /// Writes the nonzeros as `i,j,value` lines under a header row.
    pub fn write_triplets(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "i,j,value")?;
            for (i, j, v) in self.matrix.triplets() {
                writeln!(out, "{i},{j},{}", crate::experiment::output::fmt_f64(v))?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

fn gershgorin(m: &CsrMatrix) -> f64 {
    let mut bound: f64 = 0.0;
    for i in 0..m.nrows() {
        // Rows of the symmetric part. Grid sparsity patterns are structurally
        // symmetric, so mirroring the stored row covers every entry.
        let mut radius = 0.0;
        let mut diag = 0.0;
        for (j, v) in m.row(i) {
            if i == j {
                diag = v;
            } else {
                radius += (0.5 * (v + m.get(j, i))).abs();
            }
        }
        bound = bound.max(diag.abs() + radius).max(2.0 * diag.abs());
    }
    bound
}
