//! Linear NOTEARS: least squares + L1 under h(W) = 0, solved with an
//! augmented Lagrangian whose subproblems run accelerated proximal gradient.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::acyclic::{acyclicity, acyclicity_with_grad};
use crate::graph::{break_cycles, CausalGraph};
use crate::CausalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotearsParams {
    pub lambda1: f64,
    pub w_threshold: f64,
    pub max_iter: usize,
    pub h_tol: f64,
    pub rho_max: f64,
    /// Proximal-gradient steps per subproblem.
    pub max_inner: usize,
    pub inner_tol: f64,
}

impl Default for NotearsParams {
    fn default() -> Self {
        NotearsParams {
            lambda1: 0.1,
            w_threshold: 0.3,
            max_iter: 100,
            h_tol: 1e-8,
            rho_max: 1e16,
            max_inner: 5000,
            inner_tol: 1e-10,
        }
    }
}

impl NotearsParams {
    fn validate(&self) -> Result<(), CausalError> {
        let ok = self.lambda1 >= 0.0 && self.w_threshold > 0.0 && self.h_tol > 0.0 && self.max_iter > 0 && self.max_inner > 0;
        if !ok {
            return Err(CausalError::Params(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub graph: CausalGraph,
    /// h of the unthresholded solution.
    pub h: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    /// Edges dropped after thresholding to restore acyclicity.
    pub cycle_edges_removed: usize,
}

/// Least-squares loss in covariance form, so cost does not grow with n.
pub struct Objective {
    cov: DMatrix<f64>,
}

impl Objective {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        Objective { cov: x.transpose() * x / n }
    }

    /// (1/2n)‖X − XW‖²_F and its gradient.
    pub fn loss(&self, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let d = w.nrows();
        let r = DMatrix::<f64>::identity(d, d) - w;
        let cr = &self.cov * &r;
        (0.5 * r.component_mul(&cr).sum(), -cr)
    }

    /// Smooth part of the augmented Lagrangian: loss + ρ/2·h² + α·h.
    pub fn smooth(&self, w: &DMatrix<f64>, rho: f64, alpha: f64) -> Result<(f64, DMatrix<f64>), CausalError> {
        let (loss, g_loss) = self.loss(w);
        let (h, g_h) = acyclicity_with_grad(w)?;
        Ok((loss + 0.5 * rho * h * h + alpha * h, g_loss + g_h * (rho * h + alpha)))
    }
}

fn soft_threshold(v: &DMatrix<f64>, t: f64, free: &DMatrix<bool>) -> DMatrix<f64> {
    DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| {
        if !free[(i, j)] {
            return 0.0;
        }
        let x = v[(i, j)];
        x.signum() * (x.abs() - t).max(0.0)
    })
}

fn l1(w: &DMatrix<f64>) -> f64 {
    w.iter().map(|x| x.abs()).sum()
}

/// FISTA with backtracking and adaptive restart. Entries with `free = false`
/// are zero in every iterate.
fn solve_subproblem(
    obj: &Objective,
    w0: &DMatrix<f64>,
    rho: f64,
    alpha: f64,
    params: &NotearsParams,
    free: &DMatrix<bool>,
) -> Result<DMatrix<f64>, CausalError> {
    let lambda = params.lambda1;
    let mut w = w0.clone();
    let mut y = w.clone();
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut f_w = obj.smooth(&w, rho, alpha)?.0 + lambda * l1(&w);
    for _ in 0..params.max_inner {
        let (f_y, g_y) = obj.smooth(&y, rho, alpha)?;
        let (w_new, f_new) = loop {
            let cand = soft_threshold(&(&y - &g_y / lip), lambda / lip, free);
            let diff = &cand - &y;
            let f_cand = obj.smooth(&cand, rho, alpha)?.0;
            if f_cand <= f_y + g_y.dot(&diff) + 0.5 * lip * diff.norm_squared() + 1e-12 * f_y.abs() {
                break (cand, f_cand);
            }
            lip *= 2.0;
            if !lip.is_finite() {
                return Err(CausalError::NonFinite);
            }
        };
        let total_new = f_new + lambda * l1(&w_new);
        let step = (&w_new - &w).norm();
        let scale = w.norm().max(1.0);
        if total_new > f_w {
            // Momentum overshot: restart from the current iterate.
            t = 1.0;
            y = w.clone();
            if step <= params.inner_tol * scale {
                break;
            }
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &w_new + (&w_new - &w) * ((t - 1.0) / t_new);
        t = t_new;
        w = w_new;
        f_w = total_new;
        if step <= params.inner_tol * scale {
            break;
        }
    }
    Ok(w)
}

/// Learns a DAG from `x` (n rows × d columns). `blocked[(j, i)] = true`
/// forbids edge j→i. The diagonal is always blocked.
pub fn fit_notears(
    x: &DMatrix<f64>,
    names: &[String],
    params: &NotearsParams,
    blocked: Option<&DMatrix<bool>>,
) -> Result<FitResult, CausalError> {
    params.validate()?;
    let (n, d) = x.shape();
    if n < 2 || d < 2 {
        return Err(CausalError::Shape(format!("need at least 2 rows and 2 columns, got {n}x{d}")));
    }
    if names.len() != d {
        return Err(CausalError::Shape(format!("{} names for {d} columns", names.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CausalError::NonFinite);
    }
    let blocked = match blocked {
        Some(b) if b.shape() != (d, d) => return Err(CausalError::Shape("blocked mask shape".into())),
        Some(b) => b.clone(),
        None => DMatrix::from_element(d, d, false),
    };
    let free = DMatrix::from_fn(d, d, |j, i| j != i && !blocked[(j, i)]);

    let obj = Objective::new(x);
    let mut w = DMatrix::zeros(d, d);
    let (mut rho, mut alpha, mut h) = (1.0f64, 0.0f64, f64::INFINITY);
    let mut best = (f64::INFINITY, w.clone());
    let mut outer = 0;
    while outer < params.max_iter {
        outer += 1;
        let mut w_new;
        let mut h_new;
        loop {
            w_new = solve_subproblem(&obj, &w, rho, alpha, params, &free)?;
            h_new = acyclicity(&w_new)?;
            if h_new > 0.25 * h && rho < params.rho_max {
                rho *= 10.0;
            } else {
                break;
            }
        }
        w = w_new;
        h = h_new;
        if h < best.0 {
            best = (h, w.clone());
        }
        alpha += rho * h;
        if h <= params.h_tol || rho >= params.rho_max {
            break;
        }
    }
    let (h_best, mut weights) = best;
    let converged = h_best <= params.h_tol;
    if !converged {
        log::warn!("NOTEARS stopped with h = {h_best:e} > {:e} after {outer} iterations", params.h_tol);
    }
    weights.iter_mut().for_each(|v| {
        if v.abs() < params.w_threshold {
            *v = 0.0;
        }
    });
    let removed = break_cycles(&mut weights);
    if removed > 0 {
        log::warn!("removed {removed} edges to make the thresholded graph acyclic");
    }
    let mut graph = CausalGraph::new(names.to_vec(), weights)?;
    graph.blocked = blocked;
    Ok(FitResult { graph, h: h_best, converged, outer_iterations: outer, cycle_edges_removed: removed })
}

/// Blocks every in-edge of the named treatment columns.
pub fn block_in_edges(names: &[String], treatments: &[String]) -> Result<DMatrix<bool>, CausalError> {
    let d = names.len();
    let mut mask = DMatrix::from_element(d, d, false);
    for t in treatments {
        let i = names.iter().position(|n| n == t).ok_or_else(|| CausalError::UnknownNode(t.clone()))?;
        for j in 0..d {
            mask[(j, i)] = true;
        }
    }
    Ok(mask)
}
