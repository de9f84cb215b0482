//! Small dense complex matrices for the link layer.
//!
//! Every matrix in the simulator is at most 4×4 (four UE receive ports, at
//! most four TRP ports, at most four layers), so [`CMat`] stores its entries
//! inline with a fixed capacity and is `Copy`. The hot loop evaluates
//! thousands of these per TTI and must not allocate.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

/// Maximum row or column count of a [`CMat`].
pub const MAX_DIM: usize = 4;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A complex matrix of up to [`MAX_DIM`] × [`MAX_DIM`] entries.
#[derive(Clone, Copy, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: [[Complex64; MAX_DIM]; MAX_DIM],
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(
            rows <= MAX_DIM && cols <= MAX_DIM,
            "matrix {rows}x{cols} exceeds capacity {MAX_DIM}"
        );
        Self {
            rows,
            cols,
            data: [[ZERO; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i][i] = ONE;
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_rows(rows: usize, cols: usize, entries: &[Complex64]) -> Self {
        assert_eq!(entries.len(), rows * cols, "entry count mismatch");
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i][j] = entries[i * cols + j];
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i][j] = f(i, j);
            }
        }
        m
    }

    /// Real diagonal matrix `value · I`.
    pub fn scaled_identity(n: usize, value: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i][i] = Complex64::new(value, 0.0);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m.data[j][i] = self.data[i][j].conj();
            }
        }
        m
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        for i in 0..self.rows {
            for j in 0..self.cols {
                m.data[i][j] *= s;
            }
        }
        m
    }

    pub fn column(&self, j: usize) -> CVec {
        assert!(j < self.cols);
        let mut v = CVec::zeros(self.rows);
        for i in 0..self.rows {
            v.data[i] = self.data[i][j];
        }
        v
    }

    pub fn set_column(&mut self, j: usize, v: &CVec) {
        assert!(j < self.cols && v.len() == self.rows);
        for i in 0..self.rows {
            self.data[i][j] = v.data[i];
        }
    }

    /// The first `n` columns.
    pub fn leading_columns(&self, n: usize) -> Self {
        assert!(n <= self.cols);
        let mut m = Self::zeros(self.rows, n);
        for i in 0..self.rows {
            m.data[i][..n].copy_from_slice(&self.data[i][..n]);
        }
        m
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "hstack row mismatch");
        let mut m = Self::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            m.data[i][..self.cols].copy_from_slice(&self.data[i][..self.cols]);
            m.data[i][self.cols..self.cols + other.cols]
                .copy_from_slice(&other.data[i][..other.cols]);
        }
        m
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                acc += self.data[i][j].norm_sqr();
            }
        }
        acc
    }

    pub fn trace(&self) -> Complex64 {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self.data[i][i]).sum()
    }

    /// `self · selfᴴ`.
    pub fn gram_outer(&self) -> Self {
        let mut m = Self::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for k in i..self.rows {
                let mut acc = ZERO;
                for j in 0..self.cols {
                    acc += self.data[i][j] * self.data[k][j].conj();
                }
                m.data[i][k] = acc;
                m.data[k][i] = acc.conj();
            }
        }
        m
    }

    /// Adds `s · self · selfᴴ` into `acc` (which must be square with
    /// `self.rows()` rows).
    pub fn accumulate_gram_outer(&self, s: f64, acc: &mut CMat) {
        debug_assert_eq!(acc.rows, self.rows);
        for i in 0..self.rows {
            for k in i..self.rows {
                let mut v = ZERO;
                for j in 0..self.cols {
                    v += self.data[i][j] * self.data[k][j].conj();
                }
                v *= s;
                acc.data[i][k] += v;
                if k != i {
                    acc.data[k][i] += v.conj();
                }
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                worst = worst.max((self.data[i][j] - other.data[i][j]).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.rows == self.cols && self.max_abs_diff(&self.adjoint()) <= tol
    }

    /// Row-major copy of the entries.
    pub fn to_vec(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            out.extend_from_slice(&self.data[i][..self.cols]);
        }
        out
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = Complex64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i][j]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i][j]
    }
}

impl Mul for &CMat {
    type Output = CMat;

    fn mul(self, rhs: &CMat) -> CMat {
        assert_eq!(self.cols, rhs.rows, "inner dimension mismatch");
        let mut m = CMat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i][k];
                for j in 0..rhs.cols {
                    m.data[i][j] += a * rhs.data[k][j];
                }
            }
        }
        m
    }
}

impl Mul for CMat {
    type Output = CMat;

    #[allow(clippy::op_ref)]
    fn mul(self, rhs: CMat) -> CMat {
        &self * &rhs
    }
}

impl Add for CMat {
    type Output = CMat;

    fn add(mut self, rhs: CMat) -> CMat {
        self += rhs;
        self
    }
}

impl AddAssign for CMat {
    fn add_assign(&mut self, rhs: CMat) {
        assert_eq!(self.dims(), rhs.dims(), "dimension mismatch");
        for i in 0..self.rows {
            for j in 0..self.cols {
                self.data[i][j] += rhs.data[i][j];
            }
        }
    }
}

impl Sub for CMat {
    type Output = CMat;

    fn sub(mut self, rhs: CMat) -> CMat {
        assert_eq!(self.dims(), rhs.dims(), "dimension mismatch");
        for i in 0..self.rows {
            for j in 0..self.cols {
                self.data[i][j] -= rhs.data[i][j];
            }
        }
        self
    }
}

impl fmt::Debug for CMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self.data[i][j];
                write!(f, "{:+.4e}{:+.4e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// A complex column vector of up to [`MAX_DIM`] entries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CVec {
    len: usize,
    data: [Complex64; MAX_DIM],
}

impl CVec {
    pub fn zeros(len: usize) -> Self {
        assert!(len <= MAX_DIM);
        Self {
            len,
            data: [ZERO; MAX_DIM],
        }
    }

    pub fn from_slice(v: &[Complex64]) -> Self {
        let mut out = Self::zeros(v.len());
        out.data[..v.len()].copy_from_slice(v);
        out
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data[..self.len]
    }

    pub fn norm_sq(&self) -> f64 {
        self.as_slice().iter().map(|z| z.norm_sqr()).sum()
    }

    /// `selfᴴ · other`.
    pub fn dot(&self, other: &CVec) -> Complex64 {
        assert_eq!(self.len, other.len);
        let mut acc = ZERO;
        for i in 0..self.len {
            acc += self.data[i].conj() * other.data[i];
        }
        acc
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = *self;
        for z in &mut out.data[..self.len] {
            *z *= s;
        }
        out
    }

    /// Adds `self · selfᴴ` into `acc`.
    pub fn outer_into(&self, acc: &mut CMat) {
        debug_assert_eq!(acc.rows, self.len);
        for i in 0..self.len {
            for j in 0..self.len {
                acc.data[i][j] += self.data[i] * self.data[j].conj();
            }
        }
    }

    /// `self · selfᴴ`.
    pub fn outer(&self) -> CMat {
        let mut m = CMat::zeros(self.len, self.len);
        for i in 0..self.len {
            for j in 0..self.len {
                m.data[i][j] = self.data[i] * self.data[j].conj();
            }
        }
        m
    }
}

impl Index<usize> for CVec {
    type Output = Complex64;

    #[inline]
    fn index(&self, i: usize) -> &Complex64 {
        debug_assert!(i < self.len);
        &self.data[i]
    }
}

impl IndexMut<usize> for CVec {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut Complex64 {
        debug_assert!(i < self.len);
        &mut self.data[i]
    }
}

impl Mul<&CVec> for &CMat {
    type Output = CVec;

    fn mul(self, rhs: &CVec) -> CVec {
        assert_eq!(self.cols, rhs.len);
        let mut out = CVec::zeros(self.rows);
        for i in 0..self.rows {
            let mut acc = ZERO;
            for j in 0..self.cols {
                acc += self.data[i][j] * rhs.data[j];
            }
            out.data[i] = acc;
        }
        out
    }
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
#[derive(Clone, Copy, Debug)]
pub struct Cholesky {
    l: CMat,
}

impl Cholesky {
    /// Factors `a = L·Lᴴ`. Returns `None` if `a` is not square or not
    /// numerically positive definite.
    ///
    /// Only the lower triangle of `a` is read.
    pub fn new(a: &CMat) -> Option<Self> {
        if a.rows != a.cols {
            return None;
        }
        let n = a.rows;
        let mut l = CMat::zeros(n, n);
        // Pivots are compared against the largest diagonal entry so the test
        // is independent of the overall scale of `a`.
        let scale = (0..n).map(|i| a.data[i][i].re.abs()).fold(0.0, f64::max);
        let floor = scale * 1e-14;
        for j in 0..n {
            let mut d = a.data[j][j].re;
            for k in 0..j {
                d -= l.data[j][k].norm_sqr();
            }
            if !(d > floor) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l.data[j][j] = Complex64::new(djj, 0.0);
            for i in (j + 1)..n {
                let mut s = a.data[i][j];
                for k in 0..j {
                    s -= l.data[i][k] * l.data[j][k].conj();
                }
                l.data[i][j] = s / djj;
            }
        }
        Some(Self { l })
    }

    pub fn factor(&self) -> &CMat {
        &self.l
    }

    /// Solves `L·y = b`.
    pub fn forward(&self, b: &CVec) -> CVec {
        let n = self.l.rows;
        assert_eq!(b.len(), n);
        let mut y = CVec::zeros(n);
        for i in 0..n {
            let mut s = b.data[i];
            for k in 0..i {
                s -= self.l.data[i][k] * y.data[k];
            }
            y.data[i] = s / self.l.data[i][i].re;
        }
        y
    }

    /// Solves `Lᴴ·x = y`.
    pub fn backward(&self, y: &CVec) -> CVec {
        let n = self.l.rows;
        let mut x = CVec::zeros(n);
        for i in (0..n).rev() {
            let mut s = y.data[i];
            for k in (i + 1)..n {
                s -= self.l.data[k][i].conj() * x.data[k];
            }
            x.data[i] = s / self.l.data[i][i].re;
        }
        x
    }

    /// Solves `A·x = b`.
    pub fn solve(&self, b: &CVec) -> CVec {
        self.backward(&self.forward(b))
    }

    /// `bᴴ·A⁻¹·b`, computed as `‖L⁻¹b‖²` so it is never negative.
    pub fn inverse_quadratic_form(&self, b: &CVec) -> f64 {
        self.forward(b).norm_sq()
    }

    pub fn inverse(&self) -> CMat {
        let n = self.l.rows;
        let mut inv = CMat::zeros(n, n);
        for j in 0..n {
            let mut e = CVec::zeros(n);
            e.data[j] = ONE;
            inv.set_column(j, &self.solve(&e));
        }
        inv
    }

    /// `L⁻¹·b` for every column of `b`.
    pub fn whiten(&self, b: &CMat) -> CMat {
        let n = self.l.rows;
        assert_eq!(b.rows, n, "whitening dimension mismatch");
        let mut out = CMat::zeros(n, b.cols);
        for c in 0..b.cols {
            for i in 0..n {
                let mut s = b.data[i][c];
                for k in 0..i {
                    s -= self.l.data[i][k] * out.data[k][c];
                }
                out.data[i][c] = s / self.l.data[i][i].re;
            }
        }
        out
    }
}

/// Thin singular value decomposition `h = U·Σ·Vᴴ`, keeping only `V` and the
/// singular values (descending).
#[derive(Clone, Copy, Debug)]
pub struct Svd {
    singular_values: [f64; MAX_DIM],
    v: CMat,
}

impl Svd {
    /// One-sided (Hestenes) Jacobi: rotates column pairs of `h` until they
    /// are mutually orthogonal, accumulating the rotations into `V`.
    pub fn new(h: &CMat) -> Self {
        let n = h.cols;
        let m = h.rows;
        let mut a = *h;
        let mut v = CMat::identity(n);
        const TOL: f64 = 1e-15;
        for _sweep in 0..60 {
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = ZERO;
                    for i in 0..m {
                        alpha += a.data[i][p].norm_sqr();
                        beta += a.data[i][q].norm_sqr();
                        gamma += a.data[i][p].conj() * a.data[i][q];
                    }
                    let g = gamma.norm();
                    if g <= TOL * (alpha * beta).sqrt() || g == 0.0 {
                        continue;
                    }
                    rotated = true;
                    // Removing the phase of gamma reduces the pair to a real
                    // symmetric 2x2 Jacobi rotation.
                    let phase = gamma / g;
                    let zeta = (beta - alpha) / (2.0 * g);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    let pc = phase.conj();
                    for i in 0..m {
                        let ap = a.data[i][p];
                        let aq = a.data[i][q] * pc;
                        a.data[i][p] = ap * c - aq * s;
                        a.data[i][q] = ap * s + aq * c;
                    }
                    for i in 0..n {
                        let vp = v.data[i][p];
                        let vq = v.data[i][q] * pc;
                        v.data[i][p] = vp * c - vq * s;
                        v.data[i][q] = vp * s + vq * c;
                    }
                }
            }
            if !rotated {
                break;
            }
        }

        let mut norms = [0.0; MAX_DIM];
        for (j, norm) in norms.iter_mut().enumerate().take(n) {
            *norm = a.column(j).norm_sq().sqrt();
        }
        // Stable sort keeps the natural column order among equal values.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

        let mut singular_values = [0.0; MAX_DIM];
        let mut v_sorted = CMat::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            singular_values[dst] = norms[src];
            v_sorted.set_column(dst, &v.column(src));
        }
        Self {
            singular_values,
            v: v_sorted,
        }
    }

    /// Singular values in descending order; length equals the column count
    /// of the decomposed matrix.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values[..self.v.cols]
    }

    /// Right singular vectors as columns, ordered like
    /// [`singular_values`](Self::singular_values).
    pub fn v(&self) -> &CMat {
        &self.v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn cholesky_solves_hermitian_system() {
        let a = CMat::from_rows(
            2,
            2,
            &[c(4.0, 0.0), c(1.0, -1.0), c(1.0, 1.0), c(3.0, 0.0)],
        );
        let chol = Cholesky::new(&a).unwrap();
        let prod = chol.factor() * &chol.factor().adjoint();
        assert!(prod.max_abs_diff(&a) < 1e-12);
        let inv = chol.inverse();
        assert!((a * inv).max_abs_diff(&CMat::identity(2)) < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = CMat::from_rows(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)]);
        assert!(Cholesky::new(&a).is_none());
        assert!(Cholesky::new(&CMat::zeros(2, 2)).is_none());
    }

    #[test]
    fn svd_of_identity_is_identity() {
        let svd = Svd::new(&CMat::identity(3));
        assert_eq!(svd.singular_values(), &[1.0, 1.0, 1.0]);
        assert_eq!(svd.v(), &CMat::identity(3));
    }

    #[test]
    fn svd_orders_singular_values() {
        let h = CMat::from_rows(
            3,
            2,
            &[c(0.1, 0.0), c(2.0, 1.0), c(0.0, 0.3), c(-1.0, 0.5), c(0.2, 0.2), c(0.0, 1.0)],
        );
        let svd = Svd::new(&h);
        let s = svd.singular_values();
        assert!(s[0] >= s[1]);
        let hv = &h * svd.v();
        for j in 0..2 {
            assert!((hv.column(j).norm_sq().sqrt() - s[j]).abs() < 1e-12);
        }
        let cross = hv.column(0).dot(&hv.column(1));
        assert!(cross.norm() < 1e-12);
        let vhv = &svd.v().adjoint() * svd.v();
        assert!(vhv.max_abs_diff(&CMat::identity(2)) < 1e-12);
    }

    #[test]
    fn hstack_and_leading_columns() {
        let a = CMat::identity(2);
        let b = CMat::scaled_identity(2, 2.0);
        let s = a.hstack(&b);
        assert_eq!(s.dims(), (2, 4));
        assert_eq!(s[(1, 3)], c(2.0, 0.0));
        assert_eq!(s.leading_columns(2), a);
    }

    #[test]
    #[should_panic]
    fn capacity_is_enforced() {
        let _ = CMat::zeros(5, 1);
    }
}
