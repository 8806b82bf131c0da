//! Nonnegative least squares.

use nalgebra::{DMatrix, DVector};

/// Lawson–Hanson active set method for `min ‖Σ_j x_j cols_j − b‖`, `x ≥ 0`.
pub(crate) fn nnls(cols: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let p = cols.len();
    let mut x = vec![0.0; p];
    let mut passive = vec![false; p];
    let mut blocked = vec![false; p];
    let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt()
        * cols
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
    let tol = 1e-15 * scale.max(f64::MIN_POSITIVE);

    for _ in 0..3 * p + 10 {
        let mut r = b.to_vec();
        for (col, &xj) in cols.iter().zip(&x) {
            if xj != 0.0 {
                r.iter_mut().zip(col).for_each(|(ri, ci)| *ri -= xj * ci);
            }
        }
        let pick = (0..p)
            .filter(|&j| !passive[j] && !blocked[j])
            .map(|j| (j, dot(&cols[j], &r)))
            .filter(|&(_, g)| g > tol)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((j, _)) = pick else { break };
        passive[j] = true;

        for _ in 0..3 * p + 10 {
            let idx: Vec<usize> = (0..p).filter(|&i| passive[i]).collect();
            let sub: Vec<&[f64]> = idx.iter().map(|&i| cols[i].as_slice()).collect();
            let Some(z) = lstsq(&sub, b) else {
                passive[j] = false;
                blocked[j] = true;
                break;
            };
            if z.iter().all(|&v| v > 0.0) {
                for (&i, &v) in idx.iter().zip(&z) {
                    x[i] = v;
                }
                blocked.fill(false);
                break;
            }
            let alpha = idx
                .iter()
                .zip(&z)
                .filter(|(_, &zi)| zi <= 0.0)
                .map(|(&i, &zi)| x[i] / (x[i] - zi))
                .fold(f64::INFINITY, f64::min);
            for (&i, &zi) in idx.iter().zip(&z) {
                x[i] += alpha * (zi - x[i]);
                if x[i] <= 0.0 || zi <= 0.0 && x[i] <= 1e-15 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least squares by QR; `None` when the columns are numerically dependent.
fn lstsq(cols: &[&[f64]], b: &[f64]) -> Option<Vec<f64>> {
    let m = b.len();
    let p = cols.len();
    if p == 0 || p > m {
        return None;
    }
    let a = DMatrix::from_fn(m, p, |r, c| cols[c][r]);
    let qr = a.qr();
    let r = qr.r();
    let rmax = r.diagonal().iter().map(|v| v.abs()).fold(0.0, f64::max);
    if r.diagonal().iter().any(|v| v.abs() <= 1e-12 * rmax) {
        return None;
    }
    let mut rhs = DVector::from_column_slice(b);
    qr.q_tr_mul(&mut rhs);
    let x = r.solve_upper_triangular(&rhs.rows(0, p))?;
    Some(x.iter().copied().collect())
}
