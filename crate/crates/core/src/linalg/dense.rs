//! Dense matrices and the factorization kernels used by the randomized
//! eigensolvers: Cholesky, Householder QR, symmetric eigendecomposition
//! (tridiagonalization + implicit QL), LU with partial pivoting, and a
//! one-sided Jacobi SVD backing the pseudo-inverse.

use super::{LinalgError, LinearOp};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, entries: &[f64]) -> Self {
        assert_eq!(entries.len(), rows * cols);
        DenseMat { rows, cols, data: entries.to_vec() }
    }

    /// Build a matrix from a per-entry closure.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows);
        for i in 0..self.rows {
            self.set(i, j, v[i]);
        }
    }

    pub fn transpose(&self) -> DenseMat {
        let mut t = DenseMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMat) -> DenseMat {
        assert_eq!(self.cols, other.rows, "matmul dims");
        let mut out = DenseMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.add_to(i, j, aik * other.get(k, j));
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| super::dot(self.row(i), x)).collect()
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            for j in 0..self.cols {
                y[j] += self.get(i, j) * xi;
            }
        }
        y
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseMat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// ||self - other||_F
    pub fn frobenius_distance(&self, other: &DenseMat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn symmetrized(&self) -> DenseMat {
        assert_eq!(self.rows, self.cols);
        DenseMat::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self.get(i, j) + self.get(j, i))
        })
    }

    /// Keep the leading `k` columns.
    pub fn leading_cols(&self, k: usize) -> DenseMat {
        assert!(k <= self.cols);
        DenseMat::from_fn(self.rows, k, |i, j| self.get(i, j))
    }
}

impl LinearOp for DenseMat {
    fn dim(&self) -> usize {
        assert_eq!(self.rows, self.cols);
        self.rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.matvec(x));
    }
}

/// Lower-triangular Cholesky factor, `L L^T = A`.
///
/// Fails on the first non-positive pivot, reporting its index.
pub fn dense_cholesky(a: &DenseMat) -> Result<DenseMat, LinalgError> {
    assert_eq!(a.rows(), a.cols(), "cholesky needs a square matrix");
    let n = a.rows();
    let mut l = DenseMat::zeros(n, n);
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k) * l.get(j, k);
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { index: j, value: diag });
        }
        let ljj = diag.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Solve `L x = b` with `L` lower triangular.
pub fn forward_substitute(l: &DenseMat, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= l.get(i, k) * x[k];
        }
        x[i] /= l.get(i, i);
    }
    x
}

/// Solve `L^T x = b` with `L` lower triangular.
pub fn back_substitute_lt(l: &DenseMat, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            x[i] -= l.get(k, i) * x[k];
        }
        x[i] /= l.get(i, i);
    }
    x
}

/// Thin Householder QR of a tall matrix (`rows >= cols`).
///
/// Returns `(Q, R)` with `Q` having orthonormal columns and `R` upper
/// triangular, `Q R = Y`. A negligible diagonal entry of `R` reports the
/// offending column.
pub fn dense_qr(y: &DenseMat) -> Result<(DenseMat, DenseMat), LinalgError> {
    householder_qr(y, true)
}

/// QR that tolerates rank deficiency: exhausted columns get a zero row of R
/// and an arbitrary orthonormal completion in Q. Randomized sketches of
/// exactly low-rank operators rely on this.
pub fn dense_qr_permissive(y: &DenseMat) -> (DenseMat, DenseMat) {
    householder_qr(y, false).expect("permissive QR cannot fail")
}

fn householder_qr(y: &DenseMat, strict: bool) -> Result<(DenseMat, DenseMat), LinalgError> {
    let (m, n) = (y.rows(), y.cols());
    assert!(m >= n, "dense_qr expects rows >= cols");
    let mut a = y.clone();
    // Householder vectors stored in and below the diagonal; the diagonal of
    // R is kept separately since the vector head occupies a[k][k].
    let mut tau = vec![0.0f64; n];
    let mut rdiag = vec![0.0f64; n];
    let scale = y.frobenius_norm().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let mut norm = 0.0;
        for i in k..m {
            norm += a.get(i, k) * a.get(i, k);
        }
        let norm = norm.sqrt();
        if norm <= 1e-13 * scale {
            if strict {
                return Err(LinalgError::RankDeficient { column: k });
            }
            // Exhausted column: no-op reflector, zero diagonal of R. The
            // accumulated Q column becomes an orthonormal completion.
            tau[k] = 0.0;
            rdiag[k] = 0.0;
            for i in k..m {
                a.set(i, k, 0.0);
            }
            continue;
        }
        let alpha = if a.get(k, k) >= 0.0 { -norm } else { norm };
        let v0 = a.get(k, k) - alpha;
        // v = (v0, a[k+1..m, k]); H = I - 2 v v^T / (v^T v)
        let mut vtv = v0 * v0;
        for i in (k + 1)..m {
            vtv += a.get(i, k) * a.get(i, k);
        }
        tau[k] = 2.0 / vtv;
        rdiag[k] = alpha;
        a.set(k, k, v0);
        for j in (k + 1)..n {
            let mut s = v0 * a.get(k, j);
            for i in (k + 1)..m {
                s += a.get(i, k) * a.get(i, j);
            }
            let s = s * tau[k];
            a.set(k, j, a.get(k, j) - s * v0);
            for i in (k + 1)..m {
                a.set(i, j, a.get(i, j) - s * a.get(i, k));
            }
        }
    }
    // Extract R.
    let mut r = DenseMat::zeros(n, n);
    for i in 0..n {
        r.set(i, i, rdiag[i]);
        for j in (i + 1)..n {
            r.set(i, j, a.get(i, j));
        }
    }
    // Accumulate thin Q by applying reflectors to the first n columns of I.
    let mut q = DenseMat::zeros(m, n);
    for j in 0..n {
        q.set(j, j, 1.0);
    }
    for k in (0..n).rev() {
        for j in 0..n {
            let mut s = a.get(k, k) * q.get(k, j);
            for i in (k + 1)..m {
                s += a.get(i, k) * q.get(i, j);
            }
            let s = s * tau[k];
            q.set(k, j, q.get(k, j) - s * a.get(k, k));
            for i in (k + 1)..m {
                q.set(i, j, q.get(i, j) - s * a.get(i, k));
            }
        }
    }
    // Normalize to a positive diagonal of R so the factorization is unique.
    for k in 0..n {
        if r.get(k, k) < 0.0 {
            for j in k..n {
                r.set(k, j, -r.get(k, j));
            }
            for i in 0..m {
                q.set(i, k, -q.get(i, k));
            }
        }
    }
    Ok((q, r))
}

/// Eigendecomposition of a symmetric matrix.
///
/// Input asymmetry up to `1e-10` (relative to the largest entry) is
/// symmetrized away; anything larger is an error. Returns eigenvalues in
/// descending order and the matching orthonormal eigenvectors as columns.
pub fn dense_eigh(t: &DenseMat) -> Result<(Vec<f64>, DenseMat), LinalgError> {
    assert_eq!(t.rows(), t.cols(), "eigh needs a square matrix");
    let n = t.rows();
    if n == 0 {
        return Ok((Vec::new(), DenseMat::zeros(0, 0)));
    }
    let scale = t
        .data
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let asym = t.max_asymmetry();
    let tol = 1e-10 * scale.max(1.0);
    if asym > tol {
        return Err(LinalgError::NotSymmetric { asym, tol });
    }
    let a = t.symmetrized();

    let (mut d, mut e, mut v) = tridiagonalize(&a);
    tridiag_ql(&mut d, &mut e, &mut v)?;

    // Sort descending, permuting eigenvector columns to match.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap());
    let lambda: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vs = DenseMat::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            vs.set(i, new_j, v.get(i, old_j));
        }
    }
    Ok((lambda, vs))
}

/// Householder reduction to tridiagonal form with accumulated transform.
/// Returns (diagonal, off-diagonal, V) with V^T A V tridiagonal.
fn tridiagonalize(a: &DenseMat) -> (Vec<f64>, Vec<f64>, DenseMat) {
    let n = a.rows();
    let mut v = a.clone();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    for j in 0..n {
        d[j] = v.get(n - 1, j);
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v.get(i - 1, j);
                v.set(i, j, 0.0);
                v.set(j, i, 0.0);
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for j in 0..i {
                e[j] = 0.0;
            }
            for j in 0..i {
                let f = d[j];
                v.set(j, i, f);
                let mut g = e[j] + v.get(j, j) * f;
                for k in (j + 1)..i {
                    g += v.get(k, j) * d[k];
                    e[k] += v.get(k, j) * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    let val = v.get(k, j) - (f * e[k] + g * d[k]);
                    v.set(k, j, val);
                }
                d[j] = v.get(i - 1, j);
                v.set(i, j, 0.0);
            }
        }
        d[i] = h;
    }
    // Accumulate transformations.
    for i in 0..(n - 1) {
        v.set(n - 1, i, v.get(i, i));
        v.set(i, i, 1.0);
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v.get(k, i + 1) / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v.get(k, i + 1) * v.get(k, j);
                }
                for k in 0..=i {
                    let val = v.get(k, j) - g * d[k];
                    v.set(k, j, val);
                }
            }
        }
        for k in 0..=i {
            v.set(k, i + 1, 0.0);
        }
    }
    for j in 0..n {
        d[j] = v.get(n - 1, j);
        v.set(n - 1, j, 0.0);
    }
    v.set(n - 1, n - 1, 1.0);
    e[0] = 0.0;
    (d, e, v)
}

/// Implicit-shift QL iteration on a symmetric tridiagonal matrix,
/// accumulating eigenvectors into `v`.
fn tridiag_ql(d: &mut [f64], e: &mut [f64], v: &mut DenseMat) -> Result<(), LinalgError> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0f64;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 200 {
                    return Err(LinalgError::DimMismatch(
                        "symmetric QL iteration failed to converge".into(),
                    ));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for i in (l + 2)..n {
                    d[i] -= h;
                }
                f += h;
                p = d[m];
                let mut c = 1.0f64;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0f64;
                let mut s2 = 0.0f64;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v.get(k, i + 1);
                        v.set(k, i + 1, s * v.get(k, i) + c * h);
                        v.set(k, i, c * v.get(k, i) - s * h);
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: DenseMat,
    perm: Vec<usize>,
}

pub fn dense_lu(a: &DenseMat) -> Result<LuFactors, LinalgError> {
    assert_eq!(a.rows(), a.cols());
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut pivot = k;
        let mut best = lu.get(k, k).abs();
        for i in (k + 1)..n {
            let v = lu.get(i, k).abs();
            if v > best {
                best = v;
                pivot = i;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(LinalgError::Singular { column: k });
        }
        if pivot != k {
            for j in 0..n {
                let tmp = lu.get(k, j);
                lu.set(k, j, lu.get(pivot, j));
                lu.set(pivot, j, tmp);
            }
            perm.swap(k, pivot);
        }
        let pkk = lu.get(k, k);
        for i in (k + 1)..n {
            let factor = lu.get(i, k) / pkk;
            lu.set(i, k, factor);
            for j in (k + 1)..n {
                let val = lu.get(i, j) - factor * lu.get(k, j);
                lu.set(i, j, val);
            }
        }
    }
    Ok(LuFactors { lu, perm })
}

impl LuFactors {
    pub fn n(&self) -> usize {
        self.lu.rows()
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            for k in 0..i {
                x[i] -= self.lu.get(i, k) * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.lu.get(i, k) * x[k];
            }
            x[i] /= self.lu.get(i, i);
        }
        x
    }

    /// Solve `A^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        // A^T x = U^T L^T P x; solve U^T z = b, L^T w = z, x = P^T w.
        let mut z = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                z[i] -= self.lu.get(k, i) * z[k];
            }
            z[i] /= self.lu.get(i, i);
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                z[i] -= self.lu.get(k, i) * z[k];
            }
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }

    pub fn inverse(&self) -> DenseMat {
        let n = self.n();
        let mut inv = DenseMat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        inv
    }
}

/// One-sided Jacobi SVD of a square matrix: `A = U diag(sigma) V^T`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DenseMat,
    pub sigma: Vec<f64>,
    pub v: DenseMat,
}

pub fn jacobi_svd(a: &DenseMat) -> SvdResult {
    assert_eq!(a.rows(), a.cols(), "jacobi_svd expects a square matrix");
    let n = a.rows();
    let mut u = a.clone();
    let mut v = DenseMat::identity(n);
    let tol = 1e-14;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..n {
                    let up = u.get(i, p);
                    let uq = u.get(i, q);
                    app += up * up;
                    aqq += uq * uq;
                    apq += up * uq;
                }
                if apq.abs() <= tol * (app * aqq).sqrt().max(f64::MIN_POSITIVE) {
                    continue;
                }
                off = off.max(apq.abs() / (app * aqq).sqrt().max(f64::MIN_POSITIVE));
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let up = u.get(i, p);
                    let uq = u.get(i, q);
                    u.set(i, p, c * up - s * uq);
                    u.set(i, q, s * up + c * uq);
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if off < tol {
            break;
        }
    }
    let mut sigma: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| u.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    // Sort descending and normalize U's columns.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap());
    let mut us = DenseMat::zeros(n, n);
    let mut vs = DenseMat::zeros(n, n);
    let mut ss = vec![0.0; n];
    for (new_j, &old_j) in order.iter().enumerate() {
        ss[new_j] = sigma[old_j];
        let inv = if sigma[old_j] > 0.0 { 1.0 / sigma[old_j] } else { 0.0 };
        for i in 0..n {
            us.set(i, new_j, u.get(i, old_j) * inv);
            vs.set(i, new_j, v.get(i, old_j));
        }
    }
    sigma.clear();
    SvdResult { u: us, sigma: ss, v: vs }
}

/// Moore-Penrose pseudo-inverse with relative cutoff `1e-12 * sigma_max`.
/// Also reports whether any singular value fell below the cutoff.
pub fn pinv(a: &DenseMat) -> (DenseMat, bool) {
    let svd = jacobi_svd(a);
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let cutoff = 1e-12 * smax;
    let mut deficient = false;
    let n = a.rows();
    // pinv = V diag(1/sigma) U^T
    let mut vs = svd.v.clone();
    for j in 0..n {
        let s = svd.sigma[j];
        let inv = if s > cutoff && s > 0.0 {
            1.0 / s
        } else {
            deficient = true;
            0.0
        };
        for i in 0..n {
            vs.set(i, j, vs.get(i, j) * inv);
        }
    }
    (vs.matmul(&svd.u.transpose()), deficient)
}

/// Symmetrized least-squares solution of `min_X || X G - F ||_F`.
#[derive(Debug, Clone)]
pub struct SymmetricLs {
    pub x: DenseMat,
    /// Set when G was singular beyond the pseudo-inverse cutoff.
    pub rank_deficient: bool,
}

pub fn symmetric_ls_solve(g: &DenseMat, f: &DenseMat) -> SymmetricLs {
    assert_eq!(g.rows(), g.cols(), "symmetric_ls_solve expects square G");
    assert_eq!(f.rows(), f.cols(), "symmetric_ls_solve expects square F");
    assert_eq!(g.rows(), f.rows(), "G and F must have equal size");
    let (gp, deficient) = pinv(g);
    let x0 = f.matmul(&gp);
    SymmetricLs { x: x0.symmetrized(), rank_deficient: deficient }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_mat(n: usize, m: usize, seed: u64) -> DenseMat {
        let vals = crate::rng::gaussian_vector(seed, 0, n * m);
        DenseMat::from_rows(n, m, &vals)
    }

    fn random_spd(n: usize, seed: u64) -> DenseMat {
        let x = random_mat(n, n, seed);
        let mut a = x.matmul(&x.transpose());
        for i in 0..n {
            a.add_to(i, i, n as f64);
        }
        a
    }

    #[test]
    fn cholesky_identity() {
        let a = DenseMat::identity(3);
        let l = dense_cholesky(&a).unwrap();
        assert!(l.frobenius_distance(&DenseMat::identity(3)) < 1e-15);
    }

    #[test]
    fn cholesky_2x2_hand_checkable() {
        let a = DenseMat::from_rows(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let l = dense_cholesky(&a).unwrap();
        assert!((l.get(0, 0) - 2.0).abs() < 1e-15);
        assert!((l.get(0, 1) - 0.0).abs() < 1e-15);
        assert!((l.get(1, 0) - 1.0).abs() < 1e-15);
        assert!((l.get(1, 1) - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_gram_recomposition() {
        let a = random_spd(8, 42);
        let l = dense_cholesky(&a).unwrap();
        let rec = l.matmul(&l.transpose());
        assert!(rec.frobenius_distance(&a) / a.frobenius_norm() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DenseMat::from_rows(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match dense_cholesky(&a) {
            Err(LinalgError::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected not-positive-definite, got {other:?}"),
        }
    }

    #[test]
    fn qr_identity() {
        let a = DenseMat::identity(4);
        let (q, r) = dense_qr(&a).unwrap();
        assert!(q.frobenius_distance(&DenseMat::identity(4)) < 1e-14);
        assert!(r.frobenius_distance(&DenseMat::identity(4)) < 1e-14);
    }

    #[test]
    fn qr_column_scaled_identity() {
        let mut a = DenseMat::identity(3);
        a.set(0, 0, 2.0);
        a.set(1, 1, 3.0);
        a.set(2, 2, 0.5);
        let (q, r) = dense_qr(&a).unwrap();
        assert!(q.frobenius_distance(&DenseMat::identity(3)) < 1e-14);
        for (i, s) in [2.0, 3.0, 0.5].iter().enumerate() {
            assert!((r.get(i, i) - s).abs() < 1e-14);
        }
    }

    #[test]
    fn qr_recomposition_random() {
        let y = random_mat(10, 4, 7);
        let (q, r) = dense_qr(&y).unwrap();
        let qtq = q.transpose().matmul(&q);
        assert!(qtq.frobenius_distance(&DenseMat::identity(4)) < 1e-12);
        let rec = q.matmul(&r);
        assert!(rec.frobenius_distance(&y) / y.frobenius_norm() < 1e-12);
    }

    #[test]
    fn qr_rank_deficient_reports_column() {
        let mut y = DenseMat::zeros(5, 3);
        for i in 0..5 {
            y.set(i, 0, 1.0 + i as f64);
            y.set(i, 1, 2.0 * (1.0 + i as f64)); // multiple of column 0
            y.set(i, 2, (i as f64).sin());
        }
        match dense_qr(&y) {
            Err(LinalgError::RankDeficient { column }) => assert_eq!(column, 1),
            other => panic!("expected rank-deficient, got {other:?}"),
        }
    }

    #[test]
    fn eigh_diagonal() {
        let a = DenseMat::from_rows(3, 3, &[3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let (lambda, v) = dense_eigh(&a).unwrap();
        assert!((lambda[0] - 3.0).abs() < 1e-12);
        assert!((lambda[1] - 2.0).abs() < 1e-12);
        assert!((lambda[2] - 1.0).abs() < 1e-12);
        // Eigenvectors are signed permutation columns.
        for j in 0..3 {
            let col = v.col(j);
            let big = col.iter().map(|x| x.abs()).fold(0.0, f64::max);
            assert!((big - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eigh_identity() {
        let (lambda, _) = dense_eigh(&DenseMat::identity(6)).unwrap();
        for l in lambda {
            assert!((l - 1.0).abs() < 1e-13);
        }
    }

    /// Independent cyclic-Jacobi eigensolver used as an oracle.
    fn jacobi_eigh(a: &DenseMat) -> (Vec<f64>, DenseMat) {
        let n = a.rows();
        let mut m = a.symmetrized();
        let mut v = DenseMat::identity(n);
        for _sweep in 0..100 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += m.get(p, q).powi(2);
                }
            }
            if off.sqrt() < 1e-14 * m.frobenius_norm().max(1e-300) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m.get(p, q);
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for k in 0..n {
                        let mkp = m.get(k, p);
                        let mkq = m.get(k, q);
                        m.set(k, p, c * mkp - s * mkq);
                        m.set(k, q, s * mkp + c * mkq);
                    }
                    for k in 0..n {
                        let mpk = m.get(p, k);
                        let mqk = m.get(q, k);
                        m.set(p, k, c * mpk - s * mqk);
                        m.set(q, k, s * mpk + c * mqk);
                    }
                    for k in 0..n {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }
        let mut lambda: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| lambda[j].partial_cmp(&lambda[i]).unwrap());
        let sorted: Vec<f64> = order.iter().map(|&i| lambda[i]).collect();
        let mut vs = DenseMat::zeros(n, n);
        for (nj, &oj) in order.iter().enumerate() {
            for i in 0..n {
                vs.set(i, nj, v.get(i, oj));
            }
        }
        lambda.clear();
        (sorted, vs)
    }

    #[test]
    fn eigh_matches_jacobi_oracle() {
        let base = random_mat(12, 12, 99);
        let a = base.symmetrized();
        let (lambda, v) = dense_eigh(&a).unwrap();
        let (oracle, _) = jacobi_eigh(&a);
        for (l, o) in lambda.iter().zip(&oracle) {
            assert!((l - o).abs() < 1e-10 * a.frobenius_norm());
        }
        // T V = V Lambda and V^T V = I
        let tv = a.matmul(&v);
        let mut vl = v.clone();
        for j in 0..12 {
            for i in 0..12 {
                vl.set(i, j, vl.get(i, j) * lambda[j]);
            }
        }
        assert!(tv.frobenius_distance(&vl) < 1e-10 * a.frobenius_norm().max(1.0));
        let vtv = v.transpose().matmul(&v);
        assert!(vtv.frobenius_distance(&DenseMat::identity(12)) < 1e-12);
    }

    #[test]
    fn eigh_rejects_asymmetric() {
        let mut a = DenseMat::identity(3);
        a.set(0, 1, 0.5);
        assert!(matches!(dense_eigh(&a), Err(LinalgError::NotSymmetric { .. })));
    }

    #[test]
    fn lu_solve_and_transpose() {
        let a = random_mat(9, 9, 5);
        let lu = dense_lu(&a).unwrap();
        let b = crate::rng::gaussian_vector(6, 0, 9);
        let x = lu.solve(&b);
        let r = crate::linalg::sub(&a.matvec(&x), &b);
        assert!(crate::linalg::norm2(&r) < 1e-10);
        let xt = lu.solve_transpose(&b);
        let rt = crate::linalg::sub(&a.transpose().matvec(&xt), &b);
        assert!(crate::linalg::norm2(&rt) < 1e-10);
    }

    #[test]
    fn symmetric_ls_identity_g() {
        let f = random_mat(5, 5, 11);
        let out = symmetric_ls_solve(&DenseMat::identity(5), &f);
        assert!(!out.rank_deficient);
        assert!(out.x.frobenius_distance(&f.symmetrized()) < 1e-12);
    }

    #[test]
    fn symmetric_ls_f_equals_g_symmetric() {
        let g = random_spd(6, 3);
        let out = symmetric_ls_solve(&g, &g);
        assert!(out.x.frobenius_distance(&DenseMat::identity(6)) < 1e-8);
    }

    #[test]
    fn symmetric_ls_plant_and_recover() {
        // X = S G with S symmetric must be recovered.
        let s = random_spd(6, 17);
        let g = random_spd(6, 19);
        let f = s.matmul(&g);
        let out = symmetric_ls_solve(&g, &f);
        let err = out.x.frobenius_distance(&s) / s.frobenius_norm();
        assert!(err < 1e-8, "plant-and-recover error {err}");
    }

    #[test]
    fn pinv_flags_rank_deficiency() {
        let mut g = DenseMat::zeros(3, 3);
        g.set(0, 0, 1.0);
        g.set(1, 1, 1.0); // third row/col zero
        let (_, deficient) = pinv(&g);
        assert!(deficient);
        let out = symmetric_ls_solve(&g, &DenseMat::identity(3));
        assert!(out.rank_deficient);
    }

    #[test]
    fn recomposition_residuals_up_to_64() {
        for &n in &[16usize, 33, 64] {
            let a = random_spd(n, 1000 + n as u64);
            let l = dense_cholesky(&a).unwrap();
            let rec = l.matmul(&l.transpose());
            assert!(rec.frobenius_distance(&a) / a.frobenius_norm() < 1e-12);

            let y = random_mat(n, n.min(20), 2000 + n as u64);
            let (q, r) = dense_qr(&y).unwrap();
            assert!(q.matmul(&r).frobenius_distance(&y) / y.frobenius_norm() < 1e-12);

            let s = random_mat(n, n, 3000 + n as u64).symmetrized();
            let (lambda, v) = dense_eigh(&s).unwrap();
            let mut vl = v.clone();
            for j in 0..n {
                for i in 0..n {
                    vl.set(i, j, vl.get(i, j) * lambda[j]);
                }
            }
            let rec = vl.matmul(&v.transpose());
            assert!(rec.frobenius_distance(&s) / s.frobenius_norm() < 1e-12);
        }
    }
}
