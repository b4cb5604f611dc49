use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of tensors: `f32` for training and inference, `f64` for
/// gradient verification.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// # Safety
    /// Every index reachable through the given dimensions and strides must be
    /// in bounds of the corresponding pointer.
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

    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided read-only matrix view over a flat slice.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'s, T> {
    data: &'s [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'s, T> MatRef<'s, T> {
    pub fn row_major(data: &'s [T], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'s [T], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        assert!(in_bounds(data.len(), rows, cols, rs, cs), "matrix view out of bounds");
        MatRef { data, rows, cols, rs, cs }
    }

    /// Transposed view, no copy.
    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// Strided mutable matrix view over a flat slice.
#[derive(Debug)]
pub struct MatMut<'s, T> {
    data: &'s mut [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'s, T> MatMut<'s, T> {
    pub fn row_major(data: &'s mut [T], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'s mut [T], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        assert!(in_bounds(data.len(), rows, cols, rs, cs), "matrix view out of bounds");
        MatMut { data, rows, cols, rs, cs }
    }
}

fn in_bounds(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> bool {
    rows == 0 || cols == 0 || (rows - 1) * rs + (cols - 1) * cs < len
}

/// `c = alpha * a * b + beta * c`.
pub fn gemm<T: Scalar>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: MatMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c.data[i * c.rs + j * c.cs];
                *v = if beta == T::zero() { T::zero() } else { beta * *v };
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked on construction and the
    // dimensions were matched above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}
