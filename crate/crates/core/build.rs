fn main() {
    // System BLAS/LAPACK: cblas_dgemm for the conv/fc GEMMs, LAPACKE_zgeev
    // for the one-period-propagator eigenproblem, LAPACKE_dsyev for PCA.
    println!("cargo:rustc-link-lib=dylib=lapacke");
    println!("cargo:rustc-link-lib=dylib=openblas");
}
