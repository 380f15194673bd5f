/// Thomas algorithm for a tridiagonal system with constant off-diagonals
/// and a per-row diagonal. Solves in place in `rhs`; `scratch` must have
/// the same length.
pub(crate) fn solve_in_place(lower: f64, diag: &[f64], upper: f64, rhs: &mut [f64], scratch: &mut [f64]) {
    let n = rhs.len();
    debug_assert_eq!(diag.len(), n);
    debug_assert_eq!(scratch.len(), n);
    let mut denom = diag[0];
    scratch[0] = upper / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - lower * scratch[i - 1];
        scratch[i] = upper / denom;
        rhs[i] = (rhs[i] - lower * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}
