//! Dense ReLU networks with hand-written reverse mode, Adam, Polyak target
//! averaging and a running input normalizer.
//!
//! Everything is generic over [`Scalar`] so the same code trains in `f32`
//! and is gradient-checked in `f64`.

mod checkpoint;
pub mod gradcheck;
mod mlp;
mod normalizer;
mod optim;

pub use checkpoint::{load_network, read_network, save_network, write_network, NETWORK_FORMAT_VERSION};
pub use mlp::{ForwardCache, Layer, MlpParams, OutputActivation};
pub use normalizer::{Normalizer, NORM_CLIP, STD_FLOOR};
pub use optim::{polyak_update, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use std::fmt::Debug;

/// Floating-point element type of a network.
pub trait Scalar: num_traits::Float + Debug + Default + Send + Sync + std::iter::Sum + 'static {
    /// `C ← alpha·A·B + beta·C` on strided row/column views, as in
    /// `matrixmultiply`.
    ///
    /// # Safety
    /// Every strided index of the `m×k`, `k×n` and `m×n` views must be in
    /// bounds of the respective slices. [`matmul`] checks this.
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

    fn of(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major `C (m×n) ← op(A)·op(B) + beta·C`, where `op(A)` is `m×k` and
/// `op(B)` is `k×n`. A transposed operand is stored as its transpose,
/// row-major.
#[allow(clippy::too_many_arguments)]
pub fn matmul<F: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    a_transposed: bool,
    b: &[F],
    b_transposed: bool,
    beta: F,
    c: &mut [F],
) {
    assert_eq!(a.len(), m * k, "lhs shape");
    assert_eq!(b.len(), k * n, "rhs shape");
    assert_eq!(c.len(), m * n, "output shape");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length asserts above cover every strided index.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}
