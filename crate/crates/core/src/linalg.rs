//! Small dense real linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

/// Condition number above which the direct inverse is not trusted.
pub const INVERSE_COND_LIMIT: f64 = 1e8;
/// Singular values below this fraction of the largest are treated as zero.
pub const SINGULAR_FLOOR: f64 = 1e-12;

/// Singular values, largest first.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = singular_values(a);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Eigenvalues of `A A^T` (or of `A^T A`, whichever is smaller), largest
/// first, clamped at zero.
pub fn gram_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    let mut ev: Vec<f64> = gram.symmetric_eigenvalues().iter().map(|&l| l.max(0.0)).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Moore-Penrose pseudo-inverse through the SVD. Returns the inverse and
/// whether any singular value was zeroed.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let floor = SINGULAR_FLOOR * s_max;
    let mut deficient = false;
    let mut inv = DMatrix::zeros(a.ncols(), a.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= floor || s == 0.0 {
            deficient = true;
            continue;
        }
        inv += (v_t.row(i).transpose() * u.column(i).transpose()) / s;
    }
    (inv, deficient)
}
