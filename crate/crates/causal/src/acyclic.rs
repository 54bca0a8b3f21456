//! Matrix exponential and the smooth acyclicity measure h(W) = tr(exp(W∘W)) − d.

use nalgebra::DMatrix;

use crate::CausalError;

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// exp(A) by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>, CausalError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(CausalError::NonSquare { rows: n, cols: a.ncols() });
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(CausalError::NonFinite);
    }
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or(CausalError::NonFinite)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn check_square(w: &DMatrix<f64>) -> Result<(), CausalError> {
    if w.nrows() != w.ncols() {
        return Err(CausalError::NonSquare { rows: w.nrows(), cols: w.ncols() });
    }
    Ok(())
}

/// h(W); zero exactly when the support of W is acyclic.
pub fn acyclicity(w: &DMatrix<f64>) -> Result<f64, CausalError> {
    check_square(w)?;
    let e = expm(&w.component_mul(w))?;
    Ok((e.trace() - w.nrows() as f64).max(0.0))
}

/// h(W) and its gradient exp(W∘W)ᵀ ∘ 2W.
pub fn acyclicity_with_grad(w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>), CausalError> {
    check_square(w)?;
    let e = expm(&w.component_mul(w))?;
    let h = (e.trace() - w.nrows() as f64).max(0.0);
    let grad = e.transpose().component_mul(w) * 2.0;
    Ok((h, grad))
}
