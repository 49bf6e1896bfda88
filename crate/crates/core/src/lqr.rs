//! Continuous-time LQR through the matrix sign function of the Hamiltonian.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqrError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("input weight is not positive definite")]
    InputWeight,
    #[error("sign iteration did not converge (Hamiltonian has eigenvalues near the imaginary axis)")]
    NoConvergence,
    #[error("Riccati residual {0:.3e} too large; the pair is probably not stabilizable")]
    Residual(f64),
}

const MAX_ITER: usize = 100;

/// Stabilizing solution `P` of `A'P + PA - P B R^-1 B' P + Q = 0`.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LqrError> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(LqrError::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let r_inv = r.clone().cholesky().ok_or(LqrError::InputWeight)?.inverse();
    let s = b * &r_inv * b.transpose();

    let mut z = DMatrix::zeros(2 * n, 2 * n);
    z.view_mut((0, 0), (n, n)).copy_from(a);
    z.view_mut((0, n), (n, n)).copy_from(&(-&s));
    z.view_mut((n, 0), (n, n)).copy_from(&(-q));
    z.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut converged = false;
    for _ in 0..MAX_ITER {
        let lu = z.clone().lu();
        let det = lu.determinant();
        let inv = lu.try_inverse().ok_or(LqrError::NoConvergence)?;
        // Determinant scaling speeds up the early iterations.
        let c = if det.is_finite() && det != 0.0 {
            det.abs().powf(-1.0 / (2 * n) as f64)
        } else {
            1.0
        };
        let next = (&z * c + inv / c) * 0.5;
        let change = (&next - &z).norm();
        let scale = next.norm();
        z = next;
        if change <= 1e-13 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LqrError::NoConvergence);
    }

    let id = DMatrix::<f64>::identity(n, n);
    let w11 = z.view((0, 0), (n, n)).into_owned();
    let w12 = z.view((0, n), (n, n)).into_owned();
    let w21 = z.view((n, 0), (n, n)).into_owned();
    let w22 = z.view((n, n), (n, n)).into_owned();
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w12);
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w22 + &id));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w11 + &id)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w21));
    let p = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|_| LqrError::NoConvergence)?;
    let p = (&p + p.transpose()) * 0.5;

    let residual = a.transpose() * &p + &p * a - &p * &s * &p + q;
    let rel = residual.norm() / (q.norm() + p.norm()).max(1.0);
    if rel > 1e-8 {
        return Err(LqrError::Residual(rel));
    }
    Ok(p)
}

/// `K = R^-1 B' P`, so that `u = -K x` is the optimal state feedback.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LqrError> {
    let p = solve_care(a, b, q, r)?;
    let r_inv = r.clone().cholesky().ok_or(LqrError::InputWeight)?.inverse();
    Ok(r_inv * b.transpose() * p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn scalar_riccati() {
        // a = 1, b = 1, q = 1, r = 1: 2p - p^2 + 1 = 0 -> p = 1 + sqrt(2).
        let p = solve_care(&dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert!((p[(0, 0)] - (1.0 + 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn double_integrator_gain() {
        // Known closed form: K = [1, sqrt(3)] for q = I, r = 1.
        let a = dmatrix![0.0, 1.0; 0.0, 0.0];
        let b = dmatrix![0.0; 1.0];
        let k = lqr_gain(&a, &b, &DMatrix::identity(2, 2), &dmatrix![1.0]).unwrap();
        assert!((k[(0, 0)] - 1.0).abs() < 1e-10);
        assert!((k[(0, 1)] - 3f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn closed_loop_is_stable() {
        let a = dmatrix![0.0, 1.0, 0.0; 0.0, 0.0, 1.0; 1.0, -2.0, 0.5];
        let b = dmatrix![0.0; 0.0; 1.0];
        let k = lqr_gain(&a, &b, &DMatrix::identity(3, 3), &dmatrix![0.1]).unwrap();
        let cl = &a - &b * &k;
        let eig = cl.complex_eigenvalues();
        assert!(eig.iter().all(|e| e.re < 0.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            solve_care(&dmatrix![1.0], &dmatrix![1.0, 2.0; 3.0, 4.0], &dmatrix![1.0], &dmatrix![1.0]),
            Err(LqrError::Dimension(_))
        ));
    }
}
