//! Dense real linear algebra for the safety-margin machinery.
//!
//! Matrices here are tiny (state dimension at most 12), so everything is
//! plain row-major storage with textbook algorithms: Kronecker-vectorized
//! Lyapunov solves, Cholesky, cyclic Jacobi for symmetric spectra and a
//! Hessenberg/Francis QR sweep for general eigenvalues.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:>12.6e} ", self[(i, j)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    /// Builds a matrix from row-major data; fails when the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn column(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `vᵀ M v` for square `M`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.mul_vec(v))
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    /// True when `|M_ij − M_ji| ≤ tol·max(1, ‖M‖_F)` for all entries.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let bound = tol * self.frobenius_norm().max(1.0);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > bound {
                    return false;
                }
            }
        }
        true
    }

    pub fn symmetrized(&self) -> Self {
        (self + &self.transpose()).scale(0.5)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if !a.is_square() || a.rows != b.len() {
        return Err(Error::Dimension(format!(
            "cannot solve {}x{} system with rhs of length {}",
            a.rows,
            a.cols,
            b.len()
        )));
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (piv, pmax) = (k..n)
            .map(|i| (i, m[(i, k)].abs()))
            .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if pmax <= 1e-14 * scale {
            return Err(Error::Singular(format!("zero pivot in column {k}")));
        }
        if piv != k {
            for j in 0..n {
                m.data.swap(k * n + j, piv * n + j);
            }
            x.swap(k, piv);
        }
        let d = m[(k, k)];
        for i in (k + 1)..n {
            let f = m[(i, k)] / d;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                m[(i, j)] -= f * m[(k, j)];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = ((k + 1)..n).map(|j| m[(k, j)] * x[j]).sum();
        x[k] = (x[k] - s) / m[(k, k)];
    }
    Ok(x)
}

/// Hurwitz test: every eigenvalue strictly in the open left half-plane.
///
/// Up to order 4 this runs the Routh array on the characteristic
/// polynomial; larger matrices go through the QR eigenvalue sweep.
pub fn is_hurwitz(m: &Matrix) -> Result<bool> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "Hurwitz test needs a square matrix, got {}x{}",
            m.rows, m.cols
        )));
    }
    if m.rows == 0 {
        return Ok(true);
    }
    if m.rows <= 4 {
        Ok(routh_stable(&characteristic_polynomial(m)))
    } else {
        Ok(eigenvalues(m)?.iter().all(|(re, _)| *re < 0.0))
    }
}

/// Coefficients `[1, c1, ..., cn]` of `det(sI − M)` (Faddeev–LeVerrier).
pub fn characteristic_polynomial(m: &Matrix) -> Vec<f64> {
    let n = m.rows;
    let mut coeffs = vec![1.0];
    let mut mk = Matrix::zeros(n, n);
    let id = Matrix::identity(n);
    let mut c_prev = 1.0;
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{k-1} I, c_k = -tr(A M_k)/k
        mk = &(m * &mk) + &id.scale(c_prev);
        let c = -(m * &mk).trace() / k as f64;
        coeffs.push(c);
        c_prev = c;
    }
    coeffs
}

fn routh_stable(poly: &[f64]) -> bool {
    let lead = poly[0];
    let p: Vec<f64> = poly.iter().map(|c| c / lead).collect();
    let scale = p.iter().fold(1.0_f64, |m, c| m.max(c.abs()));
    let tiny = 1e-13 * scale;
    if p.iter().any(|c| *c <= tiny) {
        return false;
    }
    let n = p.len() - 1;
    let width = n / 2 + 1;
    let mut prev: Vec<f64> = (0..width).map(|i| *p.get(2 * i).unwrap_or(&0.0)).collect();
    let mut cur: Vec<f64> = (0..width)
        .map(|i| *p.get(2 * i + 1).unwrap_or(&0.0))
        .collect();
    for _ in 1..n {
        if cur[0] <= tiny {
            return false;
        }
        let next: Vec<f64> = (0..width)
            .map(|i| {
                let a = prev.get(i + 1).copied().unwrap_or(0.0);
                let b = cur.get(i + 1).copied().unwrap_or(0.0);
                (cur[0] * a - prev[0] * b) / cur[0]
            })
            .collect();
        prev = cur;
        cur = next;
    }
    cur[0] > tiny
}

/// Eigenvalues `(re, im)` of a general square matrix: Hessenberg reduction
/// by stabilized elimination, then implicit double-shift QR. Capped at 10⁴
/// sweeps in total.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<(f64, f64)>> {
    if !m.is_square() {
        return Err(Error::Dimension("eigenvalues need a square matrix".into()));
    }
    let mut a = m.clone();
    hessenberg_in_place(&mut a);
    hqr(&mut a)
}

fn hessenberg_in_place(a: &mut Matrix) {
    let n = a.rows;
    for mcol in 1..n.saturating_sub(1) {
        let mut x: f64 = 0.0;
        let mut piv = mcol;
        for j in mcol..n {
            if a[(j, mcol - 1)].abs() > x.abs() {
                x = a[(j, mcol - 1)];
                piv = j;
            }
        }
        if piv != mcol {
            for j in (mcol - 1)..n {
                let t = a[(piv, j)];
                a[(piv, j)] = a[(mcol, j)];
                a[(mcol, j)] = t;
            }
            for j in 0..n {
                let t = a[(j, piv)];
                a[(j, piv)] = a[(j, mcol)];
                a[(j, mcol)] = t;
            }
        }
        if x != 0.0 {
            for i in (mcol + 1)..n {
                let mut y = a[(i, mcol - 1)];
                if y != 0.0 {
                    y /= x;
                    a[(i, mcol - 1)] = y;
                    for j in mcol..n {
                        a[(i, j)] -= y * a[(mcol, j)];
                    }
                    for j in 0..n {
                        a[(j, mcol)] += y * a[(j, i)];
                    }
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..i.saturating_sub(1) {
            a[(i, j)] = 0.0;
        }
    }
}

fn hqr(a: &mut Matrix) -> Result<Vec<(f64, f64)>> {
    const MAX_SWEEPS: usize = 10_000;
    let n = a.rows;
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }
    let sign = |x: f64, s: f64| if s >= 0.0 { x.abs() } else { -x.abs() };
    let mut total = 0usize;
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            // look for a single small subdiagonal element
            let mut l = nn;
            while l >= 1 {
                let lu = l as usize;
                let mut s = a[(lu - 1, lu - 1)].abs() + a[(lu, lu)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[(lu, lu - 1)].abs() + s == s {
                    a[(lu, lu - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let nu = nn as usize;
            let mut x = a[(nu, nu)];
            if l == nn {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = a[(nu - 1, nu - 1)];
            let mut w = a[(nu, nu - 1)] * a[(nu - 1, nu)];
            if l == nn - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[nu - 1] = x + z;
                    wr[nu] = x + z;
                    if z != 0.0 {
                        wr[nu] = x - w / z;
                    }
                    wi[nu - 1] = 0.0;
                    wi[nu] = 0.0;
                } else {
                    wr[nu - 1] = x + p;
                    wr[nu] = x + p;
                    wi[nu - 1] = -z;
                    wi[nu] = z;
                }
                nn -= 2;
                break;
            }
            total += 1;
            if total > MAX_SWEEPS {
                return Err(Error::NoConvergence(
                    "QR eigenvalue iteration exceeded 10^4 sweeps".into(),
                ));
            }
            if its == 10 || its == 20 {
                // exceptional shift
                t += x;
                for i in 0..=nu {
                    a[(i, i)] -= x;
                }
                let s = a[(nu, nu - 1)].abs() + a[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let lu = l as usize;
            let mut m = nu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[(m + 1, m)] + a[(m, m + 1)];
                q = a[(m + 1, m + 1)] - z - rr - ss;
                r = a[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == lu {
                    break;
                }
                let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nu {
                a[(i, i - 2)] = 0.0;
                if i != m + 2 {
                    a[(i, i - 3)] = 0.0;
                }
            }
            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[(k, k - 1)];
                    q = a[(k + 1, k - 1)];
                    r = if k != nu - 1 { a[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if lu != m {
                            a[(k, k - 1)] = -a[(k, k - 1)];
                        }
                    } else {
                        a[(k, k - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                        if k != nu - 1 {
                            pp += r * a[(k + 2, j)];
                            a[(k + 2, j)] -= pp * z;
                        }
                        a[(k + 1, j)] -= pp * y;
                        a[(k, j)] -= pp * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for i in lu..=mmin {
                        let mut pp = x * a[(i, k)] + y * a[(i, k + 1)];
                        if k != nu - 1 {
                            pp += z * a[(i, k + 2)];
                            a[(i, k + 2)] -= pp * r;
                        }
                        a[(i, k + 1)] -= pp * q;
                        a[(i, k)] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).collect())
}

/// Solves `Aclᵀ P + P Acl = −Q` by vectorization into an n²×n² system.
pub fn solve_lyapunov(acl: &Matrix, q: &Matrix) -> Result<Matrix> {
    if !acl.is_square() || !q.is_square() || acl.rows != q.rows {
        return Err(Error::Dimension(format!(
            "Lyapunov solve needs matching square matrices, got {}x{} and {}x{}",
            acl.rows, acl.cols, q.rows, q.cols
        )));
    }
    if !is_spd(q) {
        return Err(Error::Argument(
            "Lyapunov weight Q must be symmetric positive definite".into(),
        ));
    }
    if !is_hurwitz(acl)? {
        return Err(Error::NoUniqueSolution(
            "closed-loop matrix is not Hurwitz".into(),
        ));
    }
    let n = acl.rows;
    let mut k = Matrix::zeros(n * n, n * n);
    // row (i,j): sum_k A_ki P_kj + sum_k P_ik A_kj = -Q_ij
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for kk in 0..n {
                k[(row, kk * n + j)] += acl[(kk, i)];
                k[(row, i * n + kk)] += acl[(kk, j)];
            }
        }
    }
    let rhs: Vec<f64> = q.as_slice().iter().map(|v| -v).collect();
    let p = Matrix::from_vec(n, n, solve_linear(&k, &rhs)?)?.symmetrized();
    let residual = lyapunov_residual(acl, &p, q);
    if residual > 1e-9 * q.frobenius_norm() {
        return Err(Error::NoConvergence(format!(
            "Lyapunov residual {residual:e} above tolerance"
        )));
    }
    Ok(p)
}

/// `‖Aclᵀ P + P Acl + Q‖_F`.
pub fn lyapunov_residual(acl: &Matrix, p: &Matrix, q: &Matrix) -> f64 {
    let r = &(&(&acl.transpose() * p) + &(p * acl)) + q;
    r.frobenius_norm()
}

pub fn is_spd(m: &Matrix) -> bool {
    m.is_symmetric(1e-12) && cholesky(m).is_ok()
}

/// Lower-triangular `L` with `L Lᵀ = P`.
pub fn cholesky(p: &Matrix) -> Result<Matrix> {
    if !p.is_square() {
        return Err(Error::Dimension("Cholesky needs a square matrix".into()));
    }
    let n = p.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = p[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::Factorization(format!(
                "non-positive pivot {d:e} at index {j}"
            )));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = p[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn forward_substitute(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[(i, k)] * x[k]).sum();
        x[i] = (b[i] - s) / l[(i, i)];
    }
    x
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn sym_eigenvalues(s: &Matrix) -> Result<Vec<f64>> {
    if !s.is_symmetric(1e-12) {
        return Err(Error::Argument("matrix is not symmetric".into()));
    }
    let n = s.rows;
    let mut a = s.symmetrized();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let total = a.frobenius_norm().powi(2);
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    Ok(eig)
}

pub fn max_sym_eig(s: &Matrix) -> Result<f64> {
    sym_eigenvalues(s)?
        .last()
        .copied()
        .ok_or_else(|| Error::Dimension("empty matrix has no eigenvalues".into()))
}

pub fn min_sym_eig(s: &Matrix) -> Result<f64> {
    sym_eigenvalues(s)?
        .first()
        .copied()
        .ok_or_else(|| Error::Dimension("empty matrix has no eigenvalues".into()))
}

/// Output gain `l = sqrt(λ_max(L⁻¹ Cᵀ C L⁻ᵀ))` with `P = L Lᵀ`, so that
/// `‖C(x − x̄)‖² ≤ l² (x − x̄)ᵀ P (x − x̄)`.
pub fn output_gain(p: &Matrix, c: &Matrix) -> Result<f64> {
    if !p.is_square() || c.cols != p.rows {
        return Err(Error::Argument(format!(
            "output matrix {}x{} incompatible with P {}x{}",
            c.rows, c.cols, p.rows, p.cols
        )));
    }
    let l = cholesky(p)?;
    // W = C L^{-T}  <=>  L Wᵀ = Cᵀ, column by column
    let n = p.rows;
    let mut w = Matrix::zeros(c.rows, n);
    for i in 0..c.rows {
        let wi = forward_substitute(&l, c.row(i));
        for j in 0..n {
            w[(i, j)] = wi[j];
        }
    }
    let m = (&w.transpose() * &w).symmetrized();
    Ok(max_sym_eig(&m)?.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn di_closed_loop(kp: f64, kd: f64) -> Matrix {
        Matrix::from_rows(&[
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [kp, 0.0, kd, 0.0],
            [0.0, kp, 0.0, kd],
        ])
    }

    #[test]
    fn hurwitz_examples() {
        assert!(is_hurwitz(&Matrix::from_rows(&[[-1.0, 0.0], [0.0, -2.0]])).unwrap());
        assert!(!is_hurwitz(&Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]])).unwrap());
        assert!(is_hurwitz(&di_closed_loop(-6.0, -4.0)).unwrap());
        assert!(!is_hurwitz(&di_closed_loop(6.0, -4.0)).unwrap());
        assert!(matches!(
            is_hurwitz(&Matrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn qr_path_agrees_with_routh() {
        // 6x6 with triple complex pairs exercises the QR branch
        let mut a = Matrix::zeros(6, 6);
        for i in 0..3 {
            a[(i, i + 3)] = 1.0;
            a[(i + 3, i)] = -8.0;
            a[(i + 3, i + 3)] = -4.0;
        }
        assert!(is_hurwitz(&a).unwrap());
        let eig = eigenvalues(&a).unwrap();
        for (re, im) in eig {
            assert_relative_eq!(re, -2.0, epsilon = 1e-6);
            assert_relative_eq!(im.abs(), 2.0, epsilon = 1e-6);
        }
        a[(3, 0)] = 8.0;
        assert!(!is_hurwitz(&a).unwrap());
    }

    #[test]
    fn characteristic_polynomial_of_pd_loop() {
        let c = characteristic_polynomial(&Matrix::from_rows(&[[0.0, 1.0], [-6.0, -4.0]]));
        assert_relative_eq!(c[1], 4.0, epsilon = 1e-12);
        assert_relative_eq!(c[2], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_trivial_cases() {
        let p = solve_lyapunov(&Matrix::identity(2).scale(-1.0), &Matrix::identity(2).scale(2.0))
            .unwrap();
        assert_relative_eq!(p.as_slice(), Matrix::identity(2).as_slice(), epsilon = 1e-12);
        let p = solve_lyapunov(&Matrix::from_rows(&[[-2.0]]), &Matrix::from_rows(&[[4.0]])).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_rejects_bad_inputs() {
        let q = Matrix::identity(2);
        assert!(matches!(
            solve_lyapunov(&Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]), &q),
            Err(Error::NoUniqueSolution(_))
        ));
        assert!(matches!(
            solve_lyapunov(&Matrix::identity(2).scale(-1.0), &Matrix::from_diag(&[1.0, -1.0])),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky(&Matrix::from_diag(&[4.0, 9.0])).unwrap();
        assert_eq!(l, Matrix::from_diag(&[2.0, 3.0]));
        assert_eq!(cholesky(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        assert!(matches!(
            cholesky(&Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]])),
            Err(Error::Factorization(_))
        ));
    }

    #[test]
    fn symmetric_eigen_examples() {
        assert_relative_eq!(max_sym_eig(&Matrix::from_diag(&[1.0, 3.0, 2.0])).unwrap(), 3.0);
        assert_relative_eq!(
            max_sym_eig(&Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]])).unwrap(),
            3.0,
            epsilon = 1e-14
        );
        assert!(matches!(
            max_sym_eig(&Matrix::from_rows(&[[2.0, 1.0], [0.0, 2.0]])),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn output_gain_examples() {
        assert_relative_eq!(
            output_gain(&Matrix::identity(2), &Matrix::identity(2)).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        let c = Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]);
        assert_relative_eq!(output_gain(&Matrix::identity(4), &c).unwrap(), 1.0, epsilon = 1e-14);
        assert!(output_gain(&Matrix::identity(3), &c).is_err());
    }

    #[test]
    fn linear_solve_detects_singularity() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(solve_linear(&a, &[1.0, 1.0]), Err(Error::Singular(_))));
    }
}
