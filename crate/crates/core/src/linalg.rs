//! Dense complex linear-algebra helpers shared across the crate.

use nalgebra::{Cholesky, Complex, DMatrix, DVector, SymmetricEigen};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const J: C64 = Complex { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// `exp(j * phase)`.
#[inline]
pub fn phasor(phase: f64) -> C64 {
    Complex::new(phase.cos(), phase.sin())
}

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| c(x, 0.0))
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// `tr(A B)` without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    assert_eq!(a.ncols(), b.nrows());
    assert_eq!(a.nrows(), b.ncols());
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted in
/// descending order with matching eigenvector columns.
pub fn herm_eig(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

pub fn lambda_max(a: &CMat) -> f64 {
    herm_eig(a).0[0]
}

pub fn lambda_min(a: &CMat) -> f64 {
    *herm_eig(a).0.last().unwrap()
}

/// Applies `f` to the eigenvalues of a Hermitian matrix.
pub fn herm_fn(a: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (vals, vecs) = herm_eig(a);
    let d = DVector::from_iterator(vals.len(), vals.iter().map(|&v| c(f(v), 0.0)));
    let scaled = CMat::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * d[j]);
    &scaled * vecs.adjoint()
}

/// Principal square root of a PSD matrix (negative eigenvalues clipped).
pub fn psd_sqrt(a: &CMat) -> CMat {
    herm_fn(a, |v| v.max(0.0).sqrt())
}

pub fn hpd_inv_sqrt(a: &CMat) -> CMat {
    herm_fn(a, |v| 1.0 / v.sqrt())
}

/// Natural log-determinant of a Hermitian positive-definite matrix via
/// Cholesky factor of the Hermitian part, `None` unless positive definite.
/// The complex factorization does not reject negative pivots by itself, so
/// every pivot is checked to be real and positive.
pub fn chol_hpd(a: &CMat) -> Option<Cholesky<C64, nalgebra::Dyn>> {
    let mut h = hermitian_part(a);
    for i in 0..h.nrows() {
        h[(i, i)].im = 0.0;
    }
    let chol = Cholesky::new(h)?;
    let l = chol.l_dirty();
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if !(d.re > 0.0) || !d.re.is_finite() || d.im.abs() > 1e-10 * d.re {
            return None;
        }
    }
    Some(chol)
}

/// `ln det A` for Hermitian positive definite `A`, `None` otherwise.
pub fn logdet_hpd(a: &CMat) -> Option<f64> {
    let chol = chol_hpd(a)?;
    let l = chol.l_dirty();
    Some(2.0 * (0..a.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>())
}

pub fn hpd_inverse(a: &CMat) -> Option<CMat> {
    chol_hpd(a).map(|ch| ch.inverse())
}

/// Column-major vectorization.
pub fn vec_of(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

pub fn unvec(v: &CVec, rows: usize, cols: usize) -> CMat {
    assert_eq!(v.len(), rows * cols);
    CMat::from_column_slice(rows, cols, v.as_slice())
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// `x^H A y`.
pub fn quad_form(x: &CVec, a: &CMat, y: &CVec) -> C64 {
    x.dotc(&(a * y))
}

pub fn frobenius_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Largest deviation from Hermitian symmetry, `max |A - A^H|`.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let d = a - a.adjoint();
    d.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_matches_block_definition() {
        let a = CMat::from_fn(2, 3, |i, j| c(i as f64 + 1.0, j as f64));
        let b = CMat::from_fn(2, 2, |i, j| c((i * 2 + j) as f64, -1.0));
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (4, 6));
        for i in 0..2 {
            for j in 0..3 {
                for p in 0..2 {
                    for q in 0..2 {
                        assert_eq!(k[(2 * i + p, 2 * j + q)], a[(i, j)] * b[(p, q)]);
                    }
                }
            }
        }
    }

    #[test]
    fn eig_is_sorted_and_reconstructs() {
        let x = CMat::from_fn(4, 4, |i, j| c((i + 2 * j) as f64 * 0.3, (i as f64 - j as f64) * 0.2));
        let a = &x * x.adjoint();
        let (vals, vecs) = herm_eig(&a);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let rebuilt = herm_fn(&a, |v| v);
        assert!((rebuilt - &a).norm() < 1e-10 * a.norm());
        assert!((vecs.adjoint() * &vecs - identity(4)).norm() < 1e-10);
    }

    #[test]
    fn logdet_matches_eigenvalues() {
        let x = CMat::from_fn(3, 3, |i, j| c(1.0 / (1.0 + i as f64 + j as f64), 0.1 * i as f64));
        let a = &x * x.adjoint() + identity(3);
        let expect: f64 = herm_eig(&a).0.iter().map(|v| v.ln()).sum();
        assert!((logdet_hpd(&a).unwrap() - expect).abs() < 1e-12);
        assert!(logdet_hpd(&(-identity(2))).is_none());
    }

    #[test]
    fn vec_unvec_roundtrip() {
        let m = CMat::from_fn(3, 2, |i, j| c(i as f64, j as f64));
        let v = vec_of(&m);
        assert_eq!(v[1], m[(1, 0)]);
        assert_eq!(unvec(&v, 3, 2), m);
    }
}
