//! Small dense complex matrices and the handful of factorizations the
//! simulator needs: Hermitian eigendecomposition, unitary exponentials and
//! real linear solves.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::scalar::Real;

pub type C<T> = Complex<T>;

/// Fixed-size column vector of complex amplitudes.
pub type CVec<T, const N: usize> = [Complex<T>; N];

/// Fixed-size dense complex matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CMat<T, const N: usize>(pub [[Complex<T>; N]; N]);

pub type Mat4<T> = CMat<T, 4>;
pub type Mat3<T> = CMat<T, 3>;

#[inline]
pub fn c<T: Real>(re: T, im: T) -> Complex<T> {
    Complex::new(re, im)
}

#[inline]
pub fn cr<T: Real>(re: T) -> Complex<T> {
    Complex::new(re, T::zero())
}

/// e^{iθ}
#[inline]
pub fn cis<T: Real>(theta: T) -> Complex<T> {
    Complex::new(theta.cos(), theta.sin())
}

pub fn vec_norm<T: Real, const N: usize>(v: &CVec<T, N>) -> T {
    v.iter().map(|a| a.norm_sqr()).sum::<T>().sqrt()
}

pub fn vec_dot<T: Real, const N: usize>(a: &CVec<T, N>, b: &CVec<T, N>) -> Complex<T> {
    // ⟨a|b⟩
    let mut acc = Complex::zero();
    for k in 0..N {
        acc += a[k].conj() * b[k];
    }
    acc
}

pub fn vec_scale<T: Real, const N: usize>(v: &CVec<T, N>, s: Complex<T>) -> CVec<T, N> {
    let mut out = *v;
    for a in out.iter_mut() {
        *a = *a * s;
    }
    out
}

pub fn vec_axpy<T: Real, const N: usize>(y: &mut CVec<T, N>, a: Complex<T>, x: &CVec<T, N>) {
    for k in 0..N {
        y[k] += a * x[k];
    }
}

fn vec_max_abs<T: Real, const N: usize>(v: &CVec<T, N>) -> T {
    v.iter().fold(T::zero(), |m, a| m.max(a.norm()))
}

impl<T: Real, const N: usize> CMat<T, N> {
    pub fn zeros() -> Self {
        CMat([[Complex::zero(); N]; N])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for k in 0..N {
            m.0[k][k] = Complex::one();
        }
        m
    }

    pub fn from_real_diag(d: [T; N]) -> Self {
        let mut m = Self::zeros();
        for k in 0..N {
            m.0[k][k] = cr(d[k]);
        }
        m
    }

    /// Outer product |a⟩⟨b|.
    pub fn outer(a: &CVec<T, N>, b: &CVec<T, N>) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            for j in 0..N {
                m.0[i][j] = a[i] * b[j].conj();
            }
        }
        m
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(cols: [CVec<T, N>; N]) -> Self {
        let mut m = Self::zeros();
        for (j, col) in cols.iter().enumerate() {
            for i in 0..N {
                m.0[i][j] = col[i];
            }
        }
        m
    }

    pub fn column(&self, j: usize) -> CVec<T, N> {
        let mut v = [Complex::zero(); N];
        for i in 0..N {
            v[i] = self.0[i][j];
        }
        v
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            for j in 0..N {
                m.0[i][j] = self.0[j][i].conj();
            }
        }
        m
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        let mut m = *self;
        for row in m.0.iter_mut() {
            for a in row.iter_mut() {
                *a = *a * s;
            }
        }
        m
    }

    pub fn scale_real(&self, s: T) -> Self {
        self.scale(cr(s))
    }

    pub fn mul_vec(&self, v: &CVec<T, N>) -> CVec<T, N> {
        let mut out = [Complex::zero(); N];
        for i in 0..N {
            let mut acc = Complex::zero();
            for j in 0..N {
                acc += self.0[i][j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn trace(&self) -> Complex<T> {
        (0..N).fold(Complex::zero(), |acc, k| acc + self.0[k][k])
    }

    pub fn max_abs(&self) -> T {
        self.0
            .iter()
            .flat_map(|r| r.iter())
            .fold(T::zero(), |m, a| m.max(a.norm()))
    }

    /// Induced ∞-norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> T {
        self.0
            .iter()
            .map(|r| r.iter().map(|a| a.norm()).sum::<T>())
            .fold(T::zero(), |m, s| m.max(s))
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermiticity_defect(&self) -> T {
        (*self - self.adjoint()).max_abs()
    }

    /// Largest elementwise deviation of `U†U` from the identity.
    pub fn unitarity_defect(&self) -> T {
        (self.adjoint() * *self - Self::identity()).max_abs()
    }

    /// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
    /// rotations. Eigenvalues are ascending; eigenvectors are the columns of
    /// the returned unitary.
    pub fn eigh(&self) -> ([T; N], Self) {
        let mut a = *self;
        let mut v = Self::identity();
        let scale = a.max_abs().max(T::min_positive_value());
        let tol = T::epsilon() * scale;
        for _sweep in 0..64 {
            let mut off = T::zero();
            for p in 0..N {
                for q in (p + 1)..N {
                    off = off.max(a.0[p][q].norm());
                }
            }
            if off <= tol {
                break;
            }
            for p in 0..N {
                for q in (p + 1)..N {
                    let apq = a.0[p][q];
                    let mag = apq.norm();
                    if mag <= tol * T::lit(1e-3) {
                        continue;
                    }
                    let phase = apq / cr(mag);
                    let app = a.0[p][p].re;
                    let aqq = a.0[q][q].re;
                    let theta = (aqq - app) / (T::two() * mag);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let cs = T::one() / (t * t + T::one()).sqrt();
                    let sn = t * cs;
                    let mut j = Self::identity();
                    j.0[p][p] = cr(cs);
                    j.0[p][q] = cr(sn);
                    j.0[q][p] = cr(-sn) * phase.conj();
                    j.0[q][q] = cr(cs) * phase.conj();
                    a = j.adjoint() * a * j;
                    a.0[p][q] = Complex::zero();
                    a.0[q][p] = Complex::zero();
                    v = v * j;
                }
            }
        }
        let mut order: [usize; N] = [0; N];
        for (k, o) in order.iter_mut().enumerate() {
            *o = k;
        }
        order.sort_by(|&x, &y| {
            a.0[x][x]
                .re
                .partial_cmp(&a.0[y][y].re)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut vals = [T::zero(); N];
        let mut vecs = Self::zeros();
        for (k, &src) in order.iter().enumerate() {
            vals[k] = a.0[src][src].re;
            for i in 0..N {
                vecs.0[i][k] = v.0[i][src];
            }
        }
        (vals, vecs)
    }

    /// exp(−i·H·t) for Hermitian `H`, through its eigendecomposition.
    pub fn unitary_exp(&self, t: T) -> Self {
        let (vals, vecs) = self.eigh();
        let mut phased = vecs;
        for (j, &lam) in vals.iter().enumerate() {
            let ph = cis(-lam * t);
            for i in 0..N {
                phased.0[i][j] = phased.0[i][j] * ph;
            }
        }
        phased * vecs.adjoint()
    }

    /// Applies exp(−i·H·t) to `psi` with a truncated Taylor series on
    /// sub-steps of norm at most 1/2. Accurate to working precision.
    pub fn apply_unitary_exp(&self, t: T, psi: &CVec<T, N>) -> CVec<T, N> {
        let norm = self.norm_inf() * t.abs();
        if norm == T::zero() {
            return *psi;
        }
        let substeps = (norm / T::half()).ceil().to_usize().unwrap_or(1).max(1);
        let h = t / T::from_usize(substeps).unwrap_or_else(T::one);
        let minus_i_h = c(T::zero(), -h);
        let mut out = *psi;
        for _ in 0..substeps {
            let mut term = out;
            let mut acc = out;
            let ref_mag = vec_max_abs(&out).max(T::min_positive_value());
            for k in 1..40 {
                let hv = self.mul_vec(&term);
                let f = minus_i_h / cr(T::from_usize(k).unwrap_or_else(T::one));
                term = vec_scale(&hv, f);
                vec_axpy(&mut acc, Complex::one(), &term);
                if vec_max_abs(&term) <= T::epsilon() * T::lit(0.01) * ref_mag {
                    break;
                }
            }
            out = acc;
        }
        out
    }
}

impl<T: Real, const N: usize> Index<(usize, usize)> for CMat<T, N> {
    type Output = Complex<T>;
    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.0[i][j]
    }
}

impl<T: Real, const N: usize> IndexMut<(usize, usize)> for CMat<T, N> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.0[i][j]
    }
}

impl<T: Real, const N: usize> Add for CMat<T, N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl<T: Real, const N: usize> AddAssign for CMat<T, N> {
    fn add_assign(&mut self, rhs: Self) {
        for i in 0..N {
            for j in 0..N {
                self.0[i][j] += rhs.0[i][j];
            }
        }
    }
}

impl<T: Real, const N: usize> Sub for CMat<T, N> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for i in 0..N {
            for j in 0..N {
                self.0[i][j] = self.0[i][j] - rhs.0[i][j];
            }
        }
        self
    }
}

impl<T: Real, const N: usize> Neg for CMat<T, N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale_real(-T::one())
    }
}

impl<T: Real, const N: usize> Mul for CMat<T, N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            for k in 0..N {
                let a = self.0[i][k];
                if a.is_zero() {
                    continue;
                }
                for j in 0..N {
                    m.0[i][j] += a * rhs.0[k][j];
                }
            }
        }
        m
    }
}

/// Solves `A x = b` for a dense real matrix by Gaussian elimination with
/// partial pivoting. Returns `None` when a pivot falls below
/// `rel_pivot_tol · max|A|`.
pub fn solve_real<T: Real>(a: &[Vec<T>], b: &[T], rel_pivot_tol: T) -> Option<Vec<T>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return None;
    }
    let mut m: Vec<Vec<T>> = a.to_vec();
    let mut rhs = b.to_vec();
    let scale = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(T::zero(), |acc, x| acc.max(x.abs()));
    if scale == T::zero() {
        return None;
    }
    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|r| (r, m[r][col].abs()))
            .fold((col, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax <= rel_pivot_tol * scale {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = m[col][k];
                m[r][k] -= f * v;
            }
            let v = rhs[col];
            rhs[r] -= f * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut s = rhs[r];
        for k in (r + 1)..n {
            s -= m[r][k] * x[k];
        }
        x[r] = s / m[r][r];
    }
    Some(x)
}

/// Least-squares solution of the overdetermined system `A x ≈ b` through
/// the normal equations.
pub fn least_squares<T: Real>(a: &[Vec<T>], b: &[T], rel_pivot_tol: T) -> Option<Vec<T>> {
    let rows = a.len();
    if rows == 0 || rows != b.len() {
        return None;
    }
    let cols = a[0].len();
    let mut ata = vec![vec![T::zero(); cols]; cols];
    let mut atb = vec![T::zero(); cols];
    for (row, &bi) in a.iter().zip(b) {
        for i in 0..cols {
            atb[i] += row[i] * bi;
            for j in 0..cols {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    solve_real(&ata, &atb, rel_pivot_tol)
}
