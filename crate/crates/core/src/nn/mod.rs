//! Small hand-written differentiable building blocks.
//!
//! There is no general autodiff graph: each layer exposes a forward pass that
//! returns a tape of the activations it needs, and a backward pass that turns
//! an output gradient into parameter (and optionally input) gradients.
//! Gradients are stored in a value of the same type as the layer, so the
//! [`Params`] view lines parameters and gradients up one to one.

pub mod activation;
pub mod adam;
pub mod categorical;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod gru;
pub mod linear;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::Rng as _;

use crate::rng::Rng;

pub use activation::{leaky_relu, LEAKY_SLOPE};
pub use adam::{Adam, AdamConfig};
pub use categorical::{log_softmax, Logits};
pub use conv::{Conv1d, ConvTape};
pub use gradcheck::{grad_check, GradCheck};
pub use gru::{BiGru, BiGruTape, GruCell};
pub use linear::{Linear, LinearTape};

/// Floating-point element type for network parameters and activations.
pub trait Real:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;

    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// Every strided access must stay inside the slices; [`gemm`] checks this.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            unsafe fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                // SAFETY: the caller guarantees strided accesses are in bounds.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c,
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Row-major or transposed view of a matrix stored in a slice.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// `rows x cols`, row-major.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Transpose of a row-major `cols x rows` matrix.
    pub fn t(data: &'a [T], stored_rows: usize, stored_cols: usize) -> Self {
        MatRef {
            data,
            rows: stored_cols,
            cols: stored_rows,
            rs: 1,
            cs: stored_cols,
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c (m x n, row-major) = alpha * a (m x k) * b (k x n) + beta * c`.
pub fn gemm<T: Real>(alpha: T, a: MatRef<T>, b: MatRef<T>, beta: T, c: &mut [T], n: usize) {
    let (m, k) = (a.rows, a.cols);
    assert_eq!(b.rows, k, "gemm inner dimension mismatch");
    assert_eq!(b.cols, n, "gemm output width mismatch");
    assert!(a.span() <= a.data.len() && b.span() <= b.data.len());
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: spans of a, b and c were checked against their slices above.
    unsafe { T::gemm_raw(m, k, n, alpha, a.data, a.rs as isize, a.cs as isize, b.data, b.rs as isize, b.cs as isize, beta, c.as_mut_ptr(), n as isize, 1) };
}

/// Block width used to split long products across threads. It is fixed so
/// that the arithmetic, and with it every output bit, does not depend on the
/// number of threads.
pub const GEMM_BLOCK: usize = 512;

#[derive(Clone, Copy)]
struct OutPtr<T>(*mut T);
// SAFETY: blocks handed to different threads write disjoint columns.
unsafe impl<T: Send> Send for OutPtr<T> {}
unsafe impl<T: Send> Sync for OutPtr<T> {}

fn for_each_block(blocks: usize, f: impl Fn(usize) + Sync + Send) {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..blocks).into_par_iter().for_each(f);
    }
    #[cfg(not(feature = "parallel"))]
    (0..blocks).for_each(f);
}

/// [`gemm`] with the columns of `b` and `c` split into [`GEMM_BLOCK`]-wide
/// blocks that run in parallel.
pub fn gemm_col_blocks<T: Real>(alpha: T, a: MatRef<T>, b: MatRef<T>, beta: T, c: &mut [T], n: usize) {
    let (m, k) = (a.rows, a.cols);
    if n <= GEMM_BLOCK {
        return gemm(alpha, a, b, beta, c, n);
    }
    assert_eq!(b.rows, k, "gemm inner dimension mismatch");
    assert_eq!(b.cols, n, "gemm output width mismatch");
    assert!(a.span() <= a.data.len() && b.span() <= b.data.len());
    assert!(c.len() >= m * n);
    if m == 0 {
        return;
    }
    let out = OutPtr(c.as_mut_ptr());
    for_each_block(n.div_ceil(GEMM_BLOCK), |blk| {
        let j0 = blk * GEMM_BLOCK;
        let nb = GEMM_BLOCK.min(n - j0);
        let out = out;
        // SAFETY: every access stays inside the checked spans; block `blk`
        // only touches columns j0..j0 + nb of c.
        unsafe {
            T::gemm_raw(
                m,
                k,
                nb,
                alpha,
                a.data,
                a.rs as isize,
                a.cs as isize,
                &b.data[j0 * b.cs..],
                b.rs as isize,
                b.cs as isize,
                beta,
                out.0.add(j0),
                n as isize,
                1,
            )
        };
    });
}

/// `c += a * b` where the inner dimension is split into [`GEMM_BLOCK`]-long
/// blocks; partial products are computed in parallel and summed in block
/// order.
pub fn gemm_acc_inner_blocks<T: Real>(a: MatRef<T>, b: MatRef<T>, c: &mut [T], n: usize) {
    let (m, k) = (a.rows, a.cols);
    if k <= GEMM_BLOCK {
        return gemm(T::ONE, a, b, T::ONE, c, n);
    }
    assert_eq!(b.rows, k, "gemm inner dimension mismatch");
    assert_eq!(b.cols, n, "gemm output width mismatch");
    assert!(a.span() <= a.data.len() && b.span() <= b.data.len());
    assert!(c.len() >= m * n);
    let blocks = k.div_ceil(GEMM_BLOCK);
    let mut partial = vec![T::ZERO; blocks * m * n];
    let out = OutPtr(partial.as_mut_ptr());
    for_each_block(blocks, |blk| {
        let p0 = blk * GEMM_BLOCK;
        let kb = GEMM_BLOCK.min(k - p0);
        let out = out;
        // SAFETY: block `blk` reads rows/columns p0..p0 + kb of the checked
        // spans and writes only its own m x n slab of `partial`.
        unsafe {
            T::gemm_raw(
                m,
                kb,
                n,
                T::ONE,
                &a.data[p0 * a.cs..],
                a.rs as isize,
                a.cs as isize,
                &b.data[p0 * b.rs..],
                b.rs as isize,
                b.cs as isize,
                T::ZERO,
                out.0.add(blk * m * n),
                n as isize,
                1,
            )
        };
    });
    for slab in partial.chunks_exact(m * n) {
        for (dst, &v) in c.iter_mut().zip(slab) {
            *dst += v;
        }
    }
}

/// Ordered view of every parameter tensor of a network.
///
/// Gradients are represented by a value of the same type, so
/// `grads.params()[i]` is the gradient of `net.params()[i]`.
pub trait Params<T> {
    fn params(&self) -> Vec<&[T]>;
    fn params_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn all_finite(&self) -> bool
    where
        T: Real,
    {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    fn flatten(&self) -> Vec<T>
    where
        T: Copy,
    {
        self.params().concat()
    }

    fn set_zero(&mut self)
    where
        T: Real,
    {
        for p in self.params_mut() {
            p.fill(T::ZERO);
        }
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self)
    where
        T: Real,
    {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }

    fn scale(&mut self, factor: T)
    where
        T: Real,
    {
        for p in self.params_mut() {
            for v in p.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn init_uniform<T: Real>(rng: &mut Rng, len: usize, fan_in: usize) -> Vec<T> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    (0..len)
        .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
        .collect()
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::ZERO; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = acc.iter().copied().sum::<T>();
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}
