//! CSR sparse matrices: a general rectangular `Csr` plus the `SparseSym`
//! wrapper for matrices assembled symmetrically (full storage, both
//! triangles).

use super::{DenseMat, LinearOp};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl Csr {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[lo..hi], &self.data[lo..hi])
    }

    pub fn row_mut(&mut self, i: usize) -> (&[usize], &mut [f64]) {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[lo..hi], &mut self.data[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v * x[*c];
            }
            y[i] = s;
        }
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * xi;
            }
        }
        y
    }

    pub fn to_dense(&self) -> DenseMat {
        let mut d = DenseMat::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                d.set(i, *c, *v);
            }
        }
        d
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Csr {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= alpha;
        }
        out
    }

    /// Entrywise sum; both matrices must share dimensions (patterns may differ).
    pub fn add(&self, other: &Csr) -> Csr {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut b = CsrBuilder::new(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                b.add(i, *c, *v);
            }
            let (cols, vals) = other.row(i);
            for (c, v) in cols.iter().zip(vals) {
                b.add(i, *c, *v);
            }
        }
        b.build()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        assert_eq!(self.nrows, self.ncols);
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }
}

impl LinearOp for Csr {
    fn dim(&self) -> usize {
        assert_eq!(self.nrows, self.ncols);
        self.nrows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y);
    }
}

/// Triplet accumulator; duplicate entries are summed on `build`.
pub struct CsrBuilder {
    nrows: usize,
    ncols: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl CsrBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        CsrBuilder { nrows, ncols, triplets: Vec::new() }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        if v != 0.0 {
            self.triplets.push((i, j, v));
        }
    }

    pub fn build(mut self) -> Csr {
        self.triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut it = self.triplets.into_iter().peekable();
        for i in 0..self.nrows {
            while let Some(&(r, c, _)) = it.peek() {
                if r != i {
                    break;
                }
                let mut sum = 0.0;
                while let Some(&(r2, c2, v2)) = it.peek() {
                    if r2 == i && c2 == c {
                        sum += v2;
                        it.next();
                    } else {
                        break;
                    }
                }
                indices.push(c);
                data.push(sum);
            }
            indptr[i + 1] = indices.len();
        }
        Csr { nrows: self.nrows, ncols: self.ncols, indptr, indices, data }
    }
}

/// Square CSR matrix assembled symmetrically (both triangles stored).
#[derive(Debug, Clone)]
pub struct SparseSym(Csr);

impl SparseSym {
    /// Wrap a square CSR matrix. Panics if structurally asymmetric beyond
    /// roundoff; assembly routines always produce symmetric patterns.
    pub fn from_csr(csr: Csr) -> Self {
        assert_eq!(csr.nrows, csr.ncols, "SparseSym needs a square matrix");
        SparseSym(csr)
    }

    pub fn n(&self) -> usize {
        self.0.nrows
    }

    pub fn csr(&self) -> &Csr {
        &self.0
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.0.matvec(x)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        self.0.matvec_into(x, y)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn to_dense(&self) -> DenseMat {
        self.0.to_dense()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    pub fn add(&self, other: &SparseSym) -> SparseSym {
        SparseSym(self.0.add(&other.0))
    }

    pub fn scaled(&self, alpha: f64) -> SparseSym {
        SparseSym(self.0.scaled(alpha))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            let (cols, vals) = self.0.row(i);
            for (c, v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.0.get(*c, i)).abs());
            }
        }
        worst
    }
}

impl LinearOp for SparseSym {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.matvec_into(x, y);
    }
}

/// Symmetric Gauss-Seidel preconditioner: application of
/// `(D + L)^{-1} D (D + U)^{-1}`-style sweeps for an SPD matrix.
pub struct SgsPrecond<'a> {
    a: &'a SparseSym,
    diag: Vec<f64>,
}

impl<'a> SgsPrecond<'a> {
    pub fn new(a: &'a SparseSym) -> Self {
        let diag = a.diagonal();
        assert!(
            diag.iter().all(|&d| d > 0.0),
            "SGS preconditioner needs positive diagonal"
        );
        SgsPrecond { a, diag }
    }
}

impl LinearOp for SgsPrecond<'_> {
    fn dim(&self) -> usize {
        self.a.n()
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.a.n();
        // Forward sweep: (D + L) y = r
        let mut y = vec![0.0; n];
        for i in 0..n {
            let (cols, vals) = self.a.csr().row(i);
            let mut s = r[i];
            for (c, v) in cols.iter().zip(vals) {
                if *c < i {
                    s -= v * y[*c];
                }
            }
            y[i] = s / self.diag[i];
        }
        // Scale by D, then backward sweep: (D + U) z = D y
        for i in 0..n {
            y[i] *= self.diag[i];
        }
        for i in (0..n).rev() {
            let (cols, vals) = self.a.csr().row(i);
            let mut s = y[i];
            for (c, v) in cols.iter().zip(vals) {
                if *c > i {
                    s -= v * z[*c];
                }
            }
            z[i] = s / self.diag[i];
        }
    }
}
