//! Closed-form eigenvalues of real symmetric 3x3 matrices.

use std::f64::consts::PI;

use crate::error::{Result, UmcfError};

/// Row-major symmetric 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymMat3(pub [[f64; 3]; 3]);

impl SymMat3 {
    pub const ZERO: SymMat3 = SymMat3([[0.0; 3]; 3]);

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.0)
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = &self.0;
        (m[0][1] - m[1][0]).abs() <= tol
            && (m[0][2] - m[2][0]).abs() <= tol
            && (m[1][2] - m[2][1]).abs() <= tol
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Eigenvalues sorted descending, via the trigonometric solution of the
/// characteristic cubic. Rejects matrices asymmetric beyond
/// `1e-9 * max(1, |m|_F)`.
pub fn sym3_eigenvalues(m: &SymMat3) -> Result<[f64; 3]> {
    let a = &m.0;
    if a.iter().flatten().any(|v| !v.is_finite()) {
        return Err(UmcfError::invalid("non-finite matrix entry"));
    }
    if !m.is_symmetric(1e-9 * m.frobenius().max(1.0)) {
        return Err(UmcfError::invalid("matrix is not symmetric"));
    }
    let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if off == 0.0 {
        let mut d = [a[0][0], a[1][1], a[2][2]];
        d.sort_by(|x, y| y.total_cmp(x));
        return Ok(d);
    }
    let q = m.trace() / 3.0;
    let d0 = a[0][0] - q;
    let d1 = a[1][1] - q;
    let d2 = a[2][2] - q;
    let p = ((d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * off) / 6.0).sqrt();
    // B = (A - qI) / p, det(B) / 2 = cos(3 phi)
    let b = [
        [d0 / p, a[0][1] / p, a[0][2] / p],
        [a[1][0] / p, d1 / p, a[1][2] / p],
        [a[2][0] / p, a[2][1] / p, d2 / p],
    ];
    let r = (det3(&b) / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let l2 = 3.0 * q - l1 - l3;
    let mut out = [l1, l2, l3];
    out.sort_by(|x, y| y.total_cmp(x));
    Ok(out)
}
