//! Small dense linear-algebra kernels: one-sided Jacobi SVD and Gram–Schmidt.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// `M = U · diag(singular_values) · Zᵀ`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Array2<f64>,
    pub singular_values: Array1<f64>,
    pub z: Array2<f64>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Array2<f64> {
        let us = &self.u * &self.singular_values.view().insert_axis(Axis(0));
        us.dot(&self.z.t())
    }
}

/// SVD of a square matrix by one-sided (Hestenes) Jacobi rotations.
///
/// Singular values come out nonnegative and descending. Each column pair of
/// `U`/`Z` is sign-flipped so that the largest-magnitude entry of the `U`
/// column is positive (first such entry on ties).
pub fn svd(m: ArrayView2<'_, f64>) -> Result<SvdResult> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: m.ncols(),
        });
    }
    if d == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }

    // Work on transposes so that the columns being rotated are contiguous rows.
    let mut a = m.t().to_owned();
    let mut v = Array2::<f64>::eye(d);
    let tol = f64::EPSILON * d as f64;
    // columns this small are numerically zero; rotating them never converges
    let negligible = (f64::EPSILON * frobenius(m)).powi(2);

    let mut converged = d == 1;
    let mut residual = 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        residual = 0.0f64;
        let mut rotated = false;
        for p in 0..d - 1 {
            for q in p + 1..d {
                let (alpha, beta, gamma) = {
                    let ap = a.row(p);
                    let aq = a.row(q);
                    (ap.dot(&ap), aq.dot(&aq), ap.dot(&aq))
                };
                if gamma == 0.0 || alpha <= negligible || beta <= negligible {
                    continue;
                }
                let off = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                residual = residual.max(off);
                if off <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut a, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdNoConvergence { sweeps, residual });
    }

    let norms: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let max_norm = norms[order[0]];
    let rank_tol = max_norm * f64::EPSILON * d as f64 * 8.0;

    let mut u = Array2::<f64>::zeros((d, d));
    let mut z = Array2::<f64>::zeros((d, d));
    let mut sv = Array1::<f64>::zeros(d);
    let mut deficient = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        z.column_mut(k).assign(&v.row(j));
        if norms[j] > rank_tol {
            sv[k] = norms[j];
            u.column_mut(k).assign(&(&a.row(j) / norms[j]));
        } else {
            deficient.push(k);
        }
    }
    complete_basis(&mut u, &deficient);

    for k in 0..d {
        let col = u.column(k);
        let mut best = 0;
        for i in 1..d {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            u.column_mut(k).mapv_inplace(|x| -x);
            z.column_mut(k).mapv_inplace(|x| -x);
        }
    }

    Ok(SvdResult {
        u,
        singular_values: sv,
        z,
    })
}

fn rotate_rows(m: &mut Array2<f64>, p: usize, q: usize, c: f64, s: f64) {
    let (mut rp, mut rq) = m.multi_slice_mut((ndarray::s![p, ..], ndarray::s![q, ..]));
    ndarray::Zip::from(&mut rp).and(&mut rq).for_each(|x, y| {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    });
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every other
/// column, drawing candidates from the standard basis.
fn complete_basis(u: &mut Array2<f64>, missing: &[usize]) {
    let d = u.nrows();
    let mut filled: Vec<usize> = (0..d).filter(|k| !missing.contains(k)).collect();
    let mut candidate = 0;
    for &k in missing {
        loop {
            assert!(candidate < d, "standard basis exhausted while completing U");
            let mut e = Array1::<f64>::zeros(d);
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let c = u.column(j);
                    let proj = c.dot(&e);
                    e.scaled_add(-proj, &c);
                }
            }
            let n = e.dot(&e).sqrt();
            if n > 0.5 {
                u.column_mut(k).assign(&(e / n));
                filled.push(k);
                break;
            }
        }
    }
}

/// Orthonormalizes the rows of a square matrix in place (modified Gram–Schmidt
/// with one re-orthogonalization pass). Returns an error for singular input.
pub fn orthonormalize_rows(m: &mut Array2<f64>) -> Result<()> {
    let n = m.nrows();
    for i in 0..n {
        for _ in 0..2 {
            for j in 0..i {
                let proj = m.row(i).dot(&m.row(j));
                let prev = m.row(j).to_owned();
                m.row_mut(i).scaled_add(-proj, &prev);
            }
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidArgument("rank-deficient matrix in Gram-Schmidt".into()));
        }
        m.row_mut(i).mapv_inplace(|x| x / norm);
    }
    Ok(())
}

/// `‖W Wᵀ − I‖_F`.
pub fn orthogonality_error(w: ArrayView2<'_, f64>) -> f64 {
    let mut g = w.dot(&w.t());
    for i in 0..g.nrows() {
        g[[i, i]] -= 1.0;
    }
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn frobenius(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// L2-normalizes each row; zero rows are left untouched.
pub fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row.mapv_inplace(|x| x / n);
        }
    }
}
