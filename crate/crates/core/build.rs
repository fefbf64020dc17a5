fn main() {
    // Dense symmetric eigensolver comes from the system LAPACK (OpenBLAS build).
    println!("cargo:rustc-link-lib=openblas");
}
