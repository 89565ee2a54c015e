//! Scalar types the engine runs on, with their matrix product kernel.

use geoprior_core::Scalar;

/// A strided matrix operand: `data[offset + i·row_stride + j·col_stride]`.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], offset: usize, row_stride: usize, col_stride: usize) -> Self {
        MatRef { data, offset, row_stride, col_stride }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride;
            assert!(last < self.data.len(), "matrix operand out of bounds");
        }
    }
}

pub struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatMut<'a, T> {
    pub fn new(data: &'a mut [T], offset: usize, row_stride: usize, col_stride: usize) -> Self {
        MatMut { data, offset, row_stride, col_stride }
    }
}

pub trait Real: Scalar {
    /// Checkpoint dtype code.
    const DTYPE: u8;

    /// Raw `C ← α·A·B + β·C` with `A: m×k`, `B: k×n`, `C: m×n`.
    ///
    /// # Safety
    /// All pointers with their strides must address valid memory for the
    /// given sizes, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const DTYPE: u8 = 0;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const DTYPE: u8 = 2;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Bounds-checked `C ← α·A·B + β·C`.
pub fn gemm<T: Real>(m: usize, k: usize, n: usize, alpha: T, a: MatRef<T>, b: MatRef<T>, beta: T, c: MatMut<T>) {
    a.check(m, k);
    b.check(k, n);
    if m > 0 && n > 0 {
        let last = c.offset + (m - 1) * c.row_stride + (n - 1) * c.col_stride;
        assert!(last < c.data.len(), "matrix output out of bounds");
    }
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every addressed element was bounds-checked above and `c` is a
    // unique borrow, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.row_stride as isize,
            c.col_stride as isize,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0f64; 4];
        gemm(2, 3, 2, 1.0, MatRef::new(&a, 0, 3, 1), MatRef::new(&b, 0, 2, 1), 0.0, MatMut::new(&mut c, 0, 2, 1));
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // Transposed view of `a` through strides.
        let mut c = [0.0f32; 9];
        let af = a.map(|v| v as f32);
        gemm(3, 2, 3, 1.0, MatRef::new(&af, 0, 1, 3), MatRef::new(&af, 0, 3, 1), 0.0, MatMut::new(&mut c, 0, 3, 1));
        assert_eq!(c[0], 17.0);
        assert_eq!(c[4], 29.0);
    }
}
