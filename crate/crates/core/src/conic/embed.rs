//! Real parameterization of complex blocks and the Hermitian-to-symmetric
//! embedding `X + jY -> [[X, -Y], [Y, X]]`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{c, CMat, CVec, C64};

/// Real symmetric embedding of a Hermitian matrix, of doubled dimension.
/// `H` is PSD iff its embedding is, and every eigenvalue appears twice.
pub fn embed_hermitian(h: &CMat) -> DMatrix<f64> {
    let n = h.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(n + i, n + j)] = z.re;
            out[(i, n + j)] = -z.im;
            out[(n + i, j)] = z.im;
        }
    }
    out
}

/// Inverse of [`embed_hermitian`], reading the top-left and bottom-left blocks.
pub fn unembed_hermitian(m: &DMatrix<f64>) -> CMat {
    let n = m.nrows() / 2;
    CMat::from_fn(n, n, |i, j| c(m[(i, j)], m[(n + i, j)]))
}

/// Allocates real variables for the blocks of a problem.
#[derive(Debug, Clone, Default)]
pub struct VarLayout {
    len: usize,
}

impl VarLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn hermitian(&mut self, dim: usize) -> HermBlock {
        let b = HermBlock { offset: self.len, dim };
        self.len += dim * dim;
        b
    }

    pub fn complex_vector(&mut self, len: usize) -> ComplexBlock {
        let b = ComplexBlock { offset: self.len, len };
        self.len += 2 * len;
        b
    }

    pub fn real(&mut self) -> usize {
        self.len += 1;
        self.len - 1
    }

    pub fn reals(&mut self, count: usize) -> RealBlock {
        let b = RealBlock { offset: self.len, len: count };
        self.len += count;
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RealBlock {
    pub offset: usize,
    pub len: usize,
}

impl RealBlock {
    pub fn index(&self, i: usize) -> usize {
        assert!(i < self.len);
        self.offset + i
    }
}

/// Complex vector stored as `[re_0..re_{n-1}, im_0..im_{n-1}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexBlock {
    pub offset: usize,
    pub len: usize,
}

impl ComplexBlock {
    pub fn re(&self, i: usize) -> usize {
        self.offset + i
    }

    pub fn im(&self, i: usize) -> usize {
        self.offset + self.len + i
    }

    pub fn extract(&self, x: &DVector<f64>) -> CVec {
        CVec::from_fn(self.len, |i, _| c(x[self.re(i)], x[self.im(i)]))
    }

    pub fn pack(&self, v: &CVec, x: &mut DVector<f64>) {
        for i in 0..self.len {
            x[self.re(i)] = v[i].re;
            x[self.im(i)] = v[i].im;
        }
    }

    /// Real matrix `K` with `v^H M v = y^T K y` for Hermitian `M`, where `y`
    /// stacks real and imaginary parts (block-local indices).
    pub fn hermitian_form(&self, m: &CMat) -> DMatrix<f64> {
        let n = self.len;
        let mut k = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let z = m[(i, j)];
                k[(i, j)] = z.re;
                k[(n + i, n + j)] = z.re;
                k[(i, n + j)] = -z.im;
                k[(n + i, j)] = z.im;
            }
        }
        k
    }

    /// Sparse coefficients of `Re(w^T v)` in the block's real variables.
    pub fn re_linear(&self, w: &CVec) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.len);
        for i in 0..self.len {
            out.push((self.re(i), w[i].re));
            out.push((self.im(i), -w[i].im));
        }
        out
    }
}

/// Hermitian `dim x dim` matrix variable: `dim` diagonal reals followed by a
/// real and imaginary part per strictly-upper entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermBlock {
    pub offset: usize,
    pub dim: usize,
}

impl HermBlock {
    pub fn len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        // Row-major strictly-upper enumeration.
        let n = self.dim;
        i * (2 * n - i - 1) / 2 + (j - i - 1)
    }

    pub fn diag(&self, i: usize) -> usize {
        self.offset + i
    }

    pub fn off_re(&self, i: usize, j: usize) -> usize {
        self.offset + self.dim + 2 * self.pair_index(i, j)
    }

    pub fn off_im(&self, i: usize, j: usize) -> usize {
        self.off_re(i, j) + 1
    }

    pub fn extract(&self, x: &DVector<f64>) -> CMat {
        let n = self.dim;
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = c(x[self.diag(i)], 0.0);
            for j in i + 1..n {
                let z = c(x[self.off_re(i, j)], x[self.off_im(i, j)]);
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        m
    }

    pub fn pack(&self, m: &CMat, x: &mut DVector<f64>) {
        let n = self.dim;
        for i in 0..n {
            x[self.diag(i)] = m[(i, i)].re;
            for j in i + 1..n {
                let z = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                x[self.off_re(i, j)] = z.re;
                x[self.off_im(i, j)] = z.im;
            }
        }
    }

    /// Variable index and Hermitian basis matrix for every real coordinate,
    /// as `(index, [(row, col, value)])`.
    pub fn basis(&self) -> Vec<(usize, Vec<(usize, usize, C64)>)> {
        let n = self.dim;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            out.push((self.diag(i), vec![(i, i, c(1.0, 0.0))]));
        }
        for i in 0..n {
            for j in i + 1..n {
                out.push((self.off_re(i, j), vec![(i, j, c(1.0, 0.0)), (j, i, c(1.0, 0.0))]));
                out.push((self.off_im(i, j), vec![(i, j, c(0.0, 1.0)), (j, i, c(0.0, -1.0))]));
            }
        }
        out
    }

    /// Coefficients of `tr(C R)` split into real and imaginary parts:
    /// `Re tr(C R) = re . x`, `Im tr(C R) = im . x`.
    pub fn trace_functional(&self, cm: &CMat) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
        let n = self.dim;
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for i in 0..n {
            let z = cm[(i, i)];
            re.push((self.diag(i), z.re));
            im.push((self.diag(i), z.im));
        }
        for i in 0..n {
            for j in i + 1..n {
                // tr(C R) picks C_ji R_ij + C_ij R_ji.
                let cji = cm[(j, i)];
                let cij = cm[(i, j)];
                let s = cji + cij;
                let d = (cji - cij) * c(0.0, 1.0);
                re.push((self.off_re(i, j), s.re));
                im.push((self.off_re(i, j), s.im));
                re.push((self.off_im(i, j), d.re));
                im.push((self.off_im(i, j), d.im));
            }
        }
        (re, im)
    }
}
