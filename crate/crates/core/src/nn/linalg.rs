//! Thin safe wrapper over `matrixmultiply::dgemm`.

/// Strided view of an m×n matrix inside a slice: element (i, j) lives at
/// `offset + i * row_stride + j * col_stride`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl Layout {
    /// Contiguous row-major matrix with `cols` columns.
    pub fn rows(cols: usize) -> Self {
        Self {
            offset: 0,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a contiguous row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Self {
            offset: 0,
            row_stride: 1,
            col_stride: cols,
        }
    }

    pub fn at(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    fn check(&self, rows: usize, cols: usize, len: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride;
        assert!(last < len, "matrix view exceeds buffer ({last} >= {len})");
    }
}

/// `C = alpha·A·B + beta·C` with A m×k, B k×n, C m×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
    lc: Layout,
) {
    la.check(m, k, a.len());
    lb.check(k, n, b.len());
    lc.check(m, n, c.len());
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the three views were bounds-checked above and `c` is uniquely
    // borrowed; dgemm reads/writes only inside those views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(la.offset),
            la.row_stride as isize,
            la.col_stride as isize,
            b.as_ptr().add(lb.offset),
            lb.row_stride as isize,
            lb.col_stride as isize,
            beta,
            c.as_mut_ptr().add(lc.offset),
            lc.row_stride as isize,
            lc.col_stride as isize,
        );
    }
}

/// Row-major `C (+)= A·B`.
pub(crate) fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    let beta = if accumulate { 1.0 } else { 0.0 };
    gemm(m, k, n, 1.0, a, Layout::rows(k), b, Layout::rows(n), beta, c, Layout::rows(n));
}

/// Row-major `C (+)= Aᵀ·B` where A is stored k×m.
pub(crate) fn matmul_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    let beta = if accumulate { 1.0 } else { 0.0 };
    gemm(m, k, n, 1.0, a, Layout::transposed(m), b, Layout::rows(n), beta, c, Layout::rows(n));
}

/// Row-major `C (+)= A·Bᵀ` where B is stored n×k.
pub(crate) fn matmul_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    let beta = if accumulate { 1.0 } else { 0.0 };
    gemm(m, k, n, 1.0, a, Layout::rows(k), b, Layout::transposed(k), beta, c, Layout::rows(n));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = x[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn products_match_naive_loops() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let close = |x: &[f64]| x.iter().zip(&want).all(|(p, q)| (p - q).abs() < 1e-12);

        let mut c = vec![0.0; m * n];
        matmul(m, k, n, &a, &b, &mut c, false);
        assert!(close(&c));

        matmul_tn(m, k, n, &transpose(m, k, &a), &b, &mut c, false);
        assert!(close(&c));

        matmul_nt(m, k, n, &a, &transpose(k, n, &b), &mut c, false);
        assert!(close(&c));

        matmul(m, k, n, &a, &b, &mut c, true);
        assert!(c.iter().zip(&want).all(|(p, q)| (p - 2.0 * q).abs() < 1e-12));
    }

    #[test]
    fn rows_do_not_depend_on_their_position() {
        let (m, k, n) = (37, 70, 19);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.734).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.219).cos()).collect();
        let mut c = vec![0.0; m * n];
        matmul(m, k, n, &a, &b, &mut c, false);
        let mut rev = Vec::with_capacity(a.len());
        for i in (0..m).rev() {
            rev.extend_from_slice(&a[i * k..(i + 1) * k]);
        }
        let mut c_rev = vec![0.0; m * n];
        matmul(m, k, n, &rev, &b, &mut c_rev, false);
        for i in 0..m {
            let r = m - 1 - i;
            for j in 0..n {
                assert_eq!(c[i * n + j].to_bits(), c_rev[r * n + j].to_bits());
            }
        }
    }
}
