//! Element type abstraction: f32 for production models, f64 for
//! finite-difference gradient checks.
//!
//! GEMM dispatches to the system OpenBLAS when the `blas` feature is on and
//! the library can be loaded at runtime, else to pure-Rust matrixmultiply.

use num_traits::{Float, FromPrimitive, ToPrimitive};

// OpenBLAS DYNAMIC_ARCH picks its GEMM kernel from CPUID family/model
// lookup tables. Containers and VMs that virtualize CPUID often report
// model numbers the table does not know, silently dropping to the generic
// pre-AVX "Prescott" kernel (a 3-4x slowdown here). Select the kernel from
// feature flags instead. The env var must be in place before OpenBLAS
// initializes, and OpenBLAS initializes when it is loaded, which is why the
// library is dlopen'ed lazily rather than linked at load time: this
// constructor runs pre-main, the first GEMM triggers the dlopen afterwards.
// An existing OPENBLAS_CORETYPE setting always wins.
#[cfg(all(feature = "blas", target_arch = "x86_64", target_os = "linux"))]
mod blas_kernel_select {
    fn choose() -> Option<&'static str> {
        if std::env::var_os("OPENBLAS_CORETYPE").is_some() {
            return None;
        }
        if std::arch::is_x86_feature_detected!("avx512f")
            && std::arch::is_x86_feature_detected!("avx512dq")
            && std::arch::is_x86_feature_detected!("avx512bw")
            && std::arch::is_x86_feature_detected!("avx512vl")
        {
            Some("SKYLAKEX")
        } else if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            Some("HASWELL")
        } else {
            None
        }
    }

    extern "C" fn init() {
        // Pre-main, single-threaded: setenv is race-free here.
        if let Some(core) = choose() {
            std::env::set_var("OPENBLAS_CORETYPE", core);
        }
    }

    #[used]
    #[link_section = ".init_array"]
    static BLAS_KERNEL_INIT: extern "C" fn() = init;
}

#[cfg(all(feature = "blas", unix))]
mod dynblas {
    use std::sync::OnceLock;

    pub const ROW_MAJOR: i32 = 101;
    pub const NO_TRANS: i32 = 111;
    pub const TRANS: i32 = 112;

    #[allow(clippy::type_complexity)]
    pub struct Api {
        pub sgemm: unsafe extern "C" fn(
            i32, i32, i32, i32, i32, i32, f32, *const f32, i32, *const f32, i32, f32, *mut f32, i32,
        ),
        pub dgemm: unsafe extern "C" fn(
            i32, i32, i32, i32, i32, i32, f64, *const f64, i32, *const f64, i32, f64, *mut f64, i32,
        ),
    }

    unsafe impl Send for Api {}
    unsafe impl Sync for Api {}

    static API: OnceLock<Option<Api>> = OnceLock::new();

    pub fn api() -> Option<&'static Api> {
        API.get_or_init(load).as_ref()
    }

    fn load() -> Option<Api> {
        unsafe {
            let mut handle = std::ptr::null_mut();
            for name in [c"libopenblas.so.0", c"libopenblas.so"] {
                handle = libc::dlopen(name.as_ptr(), libc::RTLD_NOW | libc::RTLD_LOCAL);
                if !handle.is_null() {
                    break;
                }
            }
            if handle.is_null() {
                return None;
            }
            let sgemm = libc::dlsym(handle, c"cblas_sgemm".as_ptr());
            let dgemm = libc::dlsym(handle, c"cblas_dgemm".as_ptr());
            if sgemm.is_null() || dgemm.is_null() {
                return None;
            }
            Some(Api { sgemm: std::mem::transmute(sgemm), dgemm: std::mem::transmute(dgemm) })
        }
    }
}

#[cfg(not(all(feature = "blas", unix)))]
mod dynblas {
    pub struct Api;
    pub fn api() -> Option<&'static Api> {
        None
    }
}

/// Floating-point element of a [`crate::Tensor`].
///
/// `gemm` computes `C = alpha * op(A) * op(B) + beta * C` on row-major
/// slices, where `op` is optional transposition. `A` is logically `m x k`,
/// `B` is `k x n`, `C` is `m x n`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn fromf(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap()
    }

    fn to_f64_(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap()
    }
}

fn check_gemm_dims<T>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &[T]) {
    assert_eq!(a.len(), m * k, "gemm: A length mismatch");
    assert_eq!(b.len(), k * n, "gemm: B length mismatch");
    assert_eq!(c.len(), m * n, "gemm: C length mismatch");
}

impl Scalar for f32 {
    fn gemm(
        m: usize,
        n: usize,
        k: usize,
        alpha: f32,
        a: &[f32],
        trans_a: bool,
        b: &[f32],
        trans_b: bool,
        beta: f32,
        c: &mut [f32],
    ) {
        check_gemm_dims(m, n, k, a, b, c);
        if m == 0 || n == 0 {
            return;
        }
        #[cfg(all(feature = "blas", unix))]
        if let Some(api) = dynblas::api() {
            unsafe {
                (api.sgemm)(
                    dynblas::ROW_MAJOR,
                    if trans_a { dynblas::TRANS } else { dynblas::NO_TRANS },
                    if trans_b { dynblas::TRANS } else { dynblas::NO_TRANS },
                    m as i32,
                    n as i32,
                    k as i32,
                    alpha,
                    a.as_ptr(),
                    if trans_a { m as i32 } else { k as i32 },
                    b.as_ptr(),
                    if trans_b { k as i32 } else { n as i32 },
                    beta,
                    c.as_mut_ptr(),
                    n as i32,
                );
            }
            return;
        }
        unsafe {
            let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
            let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
            matrixmultiply::sgemm(
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
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    fn gemm(
        m: usize,
        n: usize,
        k: usize,
        alpha: f64,
        a: &[f64],
        trans_a: bool,
        b: &[f64],
        trans_b: bool,
        beta: f64,
        c: &mut [f64],
    ) {
        check_gemm_dims(m, n, k, a, b, c);
        if m == 0 || n == 0 {
            return;
        }
        #[cfg(all(feature = "blas", unix))]
        if let Some(api) = dynblas::api() {
            unsafe {
                (api.dgemm)(
                    dynblas::ROW_MAJOR,
                    if trans_a { dynblas::TRANS } else { dynblas::NO_TRANS },
                    if trans_b { dynblas::TRANS } else { dynblas::NO_TRANS },
                    m as i32,
                    n as i32,
                    k as i32,
                    alpha,
                    a.as_ptr(),
                    if trans_a { m as i32 } else { k as i32 },
                    b.as_ptr(),
                    if trans_b { k as i32 } else { n as i32 },
                    beta,
                    c.as_mut_ptr(),
                    n as i32,
                );
            }
            return;
        }
        unsafe {
            let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
            let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
            matrixmultiply::dgemm(
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
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_gemm(
        m: usize,
        n: usize,
        k: usize,
        a: &[f64],
        trans_a: bool,
        b: &[f64],
        trans_b: bool,
    ) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    let av = if trans_a { a[p * m + i] } else { a[i * k + p] };
                    let bv = if trans_b { b[j * k + p] } else { b[p * n + j] };
                    acc += av * bv;
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_all_transpose_combinations() {
        let (m, n, k) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.1 + 0.2).collect();
        for &ta in &[false, true] {
            for &tb in &[false, true] {
                let expect = naive_gemm(m, n, k, &a, ta, &b, tb);
                let mut c = vec![0.0f64; m * n];
                f64::gemm(m, n, k, 1.0, &a, ta, &b, tb, 0.0, &mut c);
                for (x, y) in c.iter().zip(&expect) {
                    assert!((x - y).abs() < 1e-10, "ta={ta} tb={tb}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn gemm_beta_accumulates() {
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [1.0f32, 0.0, 0.0, 1.0];
        let mut c = [10.0f32, 20.0, 30.0, 40.0];
        f32::gemm(2, 2, 2, 1.0, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c, [11.0, 22.0, 33.0, 44.0]);
    }
}
