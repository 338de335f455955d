//! Row-major matrix products.

use crate::Float;

/// Borrowed matrix view with explicit row and column strides.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [Float],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    /// Contiguous row-major `rows x cols` matrix.
    pub fn new(data: &'a [Float], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        MatRef { data, rows, cols, rs: cols as isize, cs: 1 }
    }

    pub fn t(self) -> Self {
        MatRef { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }
}

/// `c = alpha * a * b + beta * c` where `c` is contiguous `a.rows x b.cols`.
///
/// With `beta == 0` the previous contents of `c` are ignored.
pub fn gemm(alpha: Float, a: MatRef<'_>, b: MatRef<'_>, beta: Float, c: &mut [Float]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].iter_mut().for_each(|x| *x = 0.0);
        } else {
            c[..m * n].iter_mut().for_each(|x| *x *= beta);
        }
        return;
    }
    // SAFETY: the views index only within their slices (rows/cols/strides are
    // derived from slice lengths by the callers and checked in debug builds),
    // and `c` is a distinct exclusive borrow of at least m*n elements.
    unsafe {
        gemm_kernel(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(not(feature = "f32"))]
use matrixmultiply::dgemm as gemm_kernel;
#[cfg(feature = "f32")]
use matrixmultiply::sgemm as gemm_kernel;
