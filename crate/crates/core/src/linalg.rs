//! Thin safe wrappers over the system BLAS/LAPACK routines the crate uses.
//!
//! Everything else in the crate is pure Rust; only the dense GEMM and the
//! two eigensolvers go through the C interface.

use num_complex::Complex64;

use crate::error::{AtlasError, Result};

const LAPACK_ROW_MAJOR: i32 = 101;

extern "C" {
    fn cblas_dgemm(
        layout: i32,
        trans_a: i32,
        trans_b: i32,
        m: i32,
        n: i32,
        k: i32,
        alpha: f64,
        a: *const f64,
        lda: i32,
        b: *const f64,
        ldb: i32,
        beta: f64,
        c: *mut f64,
        ldc: i32,
    );

    fn LAPACKE_zgeev(
        matrix_layout: i32,
        jobvl: u8,
        jobvr: u8,
        n: i32,
        a: *mut Complex64,
        lda: i32,
        w: *mut Complex64,
        vl: *mut Complex64,
        ldvl: i32,
        vr: *mut Complex64,
        ldvr: i32,
    ) -> i32;

    fn LAPACKE_dsyev(
        matrix_layout: i32,
        jobz: u8,
        uplo: u8,
        n: i32,
        a: *mut f64,
        lda: i32,
        w: *mut f64,
    ) -> i32;
}

const CBLAS_ROW_MAJOR: i32 = 101;
const CBLAS_NO_TRANS: i32 = 111;
const CBLAS_TRANS: i32 = 112;

/// c += a · b for row-major matrices given as flat slices.
///
/// `a` is m×k (or k×m when `trans_a`), `b` is k×n (or n×k when `trans_b`),
/// `c` is m×n. Panics if the slice lengths do not match the shapes.
#[allow(clippy::too_many_arguments)]
pub fn dgemm_acc(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "lhs shape mismatch");
    assert_eq!(b.len(), k * n, "rhs shape mismatch");
    assert_eq!(c.len(), m * n, "out shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    let (ta, lda) = if trans_a {
        (CBLAS_TRANS, m as i32)
    } else {
        (CBLAS_NO_TRANS, k as i32)
    };
    let (tb, ldb) = if trans_b {
        (CBLAS_TRANS, k as i32)
    } else {
        (CBLAS_NO_TRANS, n as i32)
    };
    unsafe {
        cblas_dgemm(
            CBLAS_ROW_MAJOR,
            ta,
            tb,
            m as i32,
            n as i32,
            k as i32,
            alpha,
            a.as_ptr(),
            lda,
            b.as_ptr(),
            ldb,
            beta,
            c.as_mut_ptr(),
            n as i32,
        );
    }
}

/// Eigenvalues and right eigenvectors of a general complex n×n matrix.
///
/// Input is row-major; the returned eigenvector for `values[j]` is
/// `vectors[j*n..(j+1)*n]` (each stored contiguously).
pub fn eig_general(n: usize, matrix: &[Complex64]) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut vr = vec![Complex64::new(0.0, 0.0); n * n];
    // LAPACKE's row-major wrapper validates ldvl even with jobvl = 'N'.
    let mut vl = vec![Complex64::new(0.0, 0.0); n * n];
    let info = unsafe {
        LAPACKE_zgeev(
            LAPACK_ROW_MAJOR,
            b'N',
            b'V',
            n as i32,
            a.as_mut_ptr(),
            n as i32,
            w.as_mut_ptr(),
            vl.as_mut_ptr(),
            n as i32,
            vr.as_mut_ptr(),
            n as i32,
        )
    };
    if info != 0 {
        return Err(AtlasError::Eigensolver(format!(
            "zgeev returned info = {info}"
        )));
    }
    // Row-major vr holds eigenvectors in columns; transpose to contiguous rows.
    let mut vectors = vec![Complex64::new(0.0, 0.0); n * n];
    for j in 0..n {
        for i in 0..n {
            vectors[j * n + i] = vr[i * n + j];
        }
    }
    Ok((w, vectors))
}

/// Eigen-decomposition of a symmetric n×n matrix (ascending eigenvalues).
///
/// Returns `(values, vectors)` with eigenvector j in `vectors[j*n..(j+1)*n]`.
pub fn eig_symmetric(n: usize, matrix: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut w = vec![0.0; n];
    let info = unsafe {
        LAPACKE_dsyev(
            LAPACK_ROW_MAJOR,
            b'V',
            b'U',
            n as i32,
            a.as_mut_ptr(),
            n as i32,
            w.as_mut_ptr(),
        )
    };
    if info != 0 {
        return Err(AtlasError::Eigensolver(format!(
            "dsyev returned info = {info}"
        )));
    }
    let mut vectors = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            vectors[j * n + i] = a[i * n + j];
        }
    }
    Ok((w, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dgemm_matches_hand_product() {
        // [1 2; 3 4] · [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        dgemm_acc(false, false, 2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn dgemm_transposed_lhs() {
        // aᵀ · a for a = [1 2; 3 4] (2×2): [[10,14],[14,20]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let mut c = [0.0; 4];
        dgemm_acc(true, false, 2, 2, 2, 1.0, &a, &a, 0.0, &mut c);
        assert_eq!(c, [10.0, 14.0, 14.0, 20.0]);
    }

    #[test]
    fn zgeev_diagonalizes_a_rotation() {
        // [[0,-1],[1,0]] has eigenvalues ±i.
        let m = [
            Complex64::new(0.0, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        ];
        let (w, v) = eig_general(2, &m).unwrap();
        let mut ims: Vec<f64> = w.iter().map(|z| z.im).collect();
        ims.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((ims[0] + 1.0).abs() < 1e-12 && (ims[1] - 1.0).abs() < 1e-12);
        // Residual ‖Mv − λv‖ per eigenpair.
        for j in 0..2 {
            let vec = &v[j * 2..(j + 1) * 2];
            for i in 0..2 {
                let mv: Complex64 = (0..2).map(|k| m[i * 2 + k] * vec[k]).sum();
                assert!((mv - w[j] * vec[i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dsyev_orders_ascending() {
        let m = [2.0, 1.0, 1.0, 2.0];
        let (w, v) = eig_symmetric(2, &m).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12 && (w[1] - 3.0).abs() < 1e-12);
        // Eigenvector of eigenvalue 3 is (1,1)/√2 up to sign.
        assert!((v[2].abs() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }
}
