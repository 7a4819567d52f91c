use nalgebra::{DMatrix, DVector};

use crate::error::{OpsError, Result};

/// Solves `(XᵀX + λI) w = Xᵀy` over the selected rows by Cholesky. When the
/// normal matrix is singular, retries with `λ = 1e-8 · trace(XᵀX) / dim`.
pub(super) fn least_squares(x: &[f64], dim: usize, rows: &[usize], y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for &i in rows {
        let r = &x[i * dim..(i + 1) * dim];
        for (j, &xj) in r.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            rhs[j] += xj * y[i];
            for (k, &xk) in r.iter().enumerate().skip(j) {
                gram[(j, k)] += xj * xk;
            }
        }
    }
    for j in 0..dim {
        for k in 0..j {
            gram[(j, k)] = gram[(k, j)];
        }
    }
    let solve = |lambda: f64| {
        let mut a = gram.clone();
        for j in 0..dim {
            a[(j, j)] += lambda;
        }
        a.cholesky().map(|c| c.solve(&rhs))
    };
    let w = match solve(ridge) {
        Some(w) if w.iter().all(|v| v.is_finite()) && (ridge > 0.0 || well_conditioned(&gram)) => w,
        _ => {
            let scale = (gram.trace() / dim as f64).max(f64::MIN_POSITIVE);
            solve(ridge + 1e-8 * scale)
                .ok_or_else(|| OpsError::Numeric("least squares failed even with ridge fallback".into()))?
        }
    };
    Ok(w.iter().copied().collect())
}

/// Rejects normal matrices whose smallest diagonal pivot is negligible,
/// which happens when some feature never appears in the data.
fn well_conditioned(gram: &DMatrix<f64>) -> bool {
    let max = gram.diagonal().iter().copied().fold(0.0, f64::max);
    gram.diagonal().iter().all(|&d| d > 1e-12 * max)
}
