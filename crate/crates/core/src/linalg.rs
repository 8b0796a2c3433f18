use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `V f(Λ) Vᵀ` for a symmetric matrix.
fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mapped = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&mapped) * v.transpose()
}

/// Symmetric PSD square root. Small negative eigenvalues are clipped to 0.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| l.max(0.0).sqrt())
}

/// Symmetric inverse square root; `None` when an eigenvalue is not positive.
pub fn psd_inv_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&l| l <= scale * 1e-15 || l <= 0.0) {
        return None;
    }
    let mapped = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let v = &eig.eigenvectors;
    Some(v * DMatrix::from_diagonal(&mapped) * v.transpose())
}

/// Factor `L` with `L Lᵀ = m` for PSD `m` (via the eigendecomposition, so
/// singular matrices are fine).
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

pub fn is_zero(m: &DMatrix<f64>) -> bool {
    m.iter().all(|&v| v == 0.0)
}

/// Solve `[H 1; 1ᵀ 0] [d; ν] = [rhs; c]`. Returns `d`.
pub fn solve_budget_kkt(h: &DMatrix<f64>, rhs: &DVector<f64>, c: f64) -> Option<DVector<f64>> {
    let n = h.nrows();
    let mut kkt = DMatrix::zeros(n + 1, n + 1);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    for i in 0..n {
        kkt[(i, n)] = 1.0;
        kkt[(n, i)] = 1.0;
    }
    let mut b = DVector::zeros(n + 1);
    b.rows_mut(0, n).copy_from(rhs);
    b[n] = c;
    let sol = kkt.lu().solve(&b)?;
    if sol.iter().all(|v| v.is_finite()) {
        Some(sol.rows(0, n).into_owned())
    } else {
        None
    }
}
