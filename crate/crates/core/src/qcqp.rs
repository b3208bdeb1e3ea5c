//! Solver for the convex precoder subproblem: a Hermitian PSD quadratic
//! objective over per-UE matrix blocks, per-UE trace power caps, and
//! quadratic-plus-affine sensing rows.
//!
//! The engine is a feasible-start log-barrier Newton method specialized to
//! exactly these constraint shapes (it is not a general cone solver). Every
//! iterate is strictly feasible, the returned point never has a worse
//! objective than the start, and the certificate carries the KKT residual
//! assembled from the barrier multipliers.
//!
//! Complex blocks are handled through the real composite of each variable:
//! a column `f in C^n` maps to `[Re f; Im f]` and a Hermitian form `A` to the
//! symmetric block `[[Re A, -Im A], [Im A, Re A]]`. Gradients below are with
//! respect to conjugate coordinates; the real gradient of `x^H A x - 2Re<c,x>`
//! is the composite of `2(Ax - c)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{frob_norm_sq, hermitian_max_eig, re_inner, CMat};

/// `sum_i Tr(F_i^H A_i F_i) - 2 Re Tr(C_i^H F_i)`, with `A_i` Hermitian PSD.
#[derive(Debug, Clone)]
pub struct QuadObjective {
    pub curvature: Vec<CMat>,
    pub linear: Vec<CMat>,
}

/// One constraint `sum_i Tr(F_i^H Q_i F_i) - 2 Re Tr(L^H F_own) + c <= 0`,
/// with every `Q_i` Hermitian PSD (convex by construction).
#[derive(Debug, Clone)]
pub struct ConstraintRow {
    pub quad: Vec<Option<CMat>>,
    pub linear_block: usize,
    pub linear: CMat,
    pub constant: f64,
}

#[derive(Debug, Clone)]
pub struct ConvexQuadraticProgram {
    pub objective: QuadObjective,
    /// Per-block trace caps; `f64::INFINITY` disables a cap.
    pub power_caps: Vec<f64>,
    pub rows: Vec<ConstraintRow>,
}

#[derive(Debug, Clone, Copy)]
pub struct Certificate {
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ConvexQuadraticProgram {
    pub fn num_blocks(&self) -> usize {
        self.objective.curvature.len()
    }

    pub fn objective_value(&self, x: &[CMat]) -> f64 {
        let mut acc = 0.0;
        for i in 0..x.len() {
            acc += re_inner(&x[i], &(&self.objective.curvature[i] * &x[i]));
            acc -= 2.0 * re_inner(&self.objective.linear[i], &x[i]);
        }
        acc
    }

    pub fn row_value(&self, r: usize, x: &[CMat]) -> f64 {
        let row = &self.rows[r];
        let mut acc = row.constant;
        for i in 0..x.len() {
            if let Some(q) = &row.quad[i] {
                acc += re_inner(&x[i], &(q * &x[i]));
            }
        }
        acc - 2.0 * re_inner(&row.linear, &x[row.linear_block])
    }

    /// Conjugate-coordinate objective gradient, per block: `2(A_i F_i - C_i)`.
    fn objective_grad(&self, x: &[CMat]) -> Vec<CMat> {
        (0..x.len())
            .map(|i| (&self.objective.curvature[i] * &x[i] - &self.objective.linear[i]).scale(2.0))
            .collect()
    }

    fn row_grad(&self, r: usize, x: &[CMat]) -> Vec<CMat> {
        let row = &self.rows[r];
        (0..x.len())
            .map(|i| {
                let mut g = match &row.quad[i] {
                    Some(q) => (q * &x[i]).scale(2.0),
                    None => CMat::zeros(x[i].nrows(), x[i].ncols()),
                };
                if i == row.linear_block {
                    g -= row.linear.scale(2.0);
                }
                g
            })
            .collect()
    }
}

struct Layout {
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    dim: usize,
}

impl Layout {
    fn new(x: &[CMat]) -> Layout {
        let shapes: Vec<_> = x.iter().map(|m| m.shape()).collect();
        let mut offsets = Vec::with_capacity(x.len());
        let mut dim = 0;
        for &(n, d) in &shapes {
            offsets.push(dim);
            dim += 2 * n * d;
        }
        Layout { shapes, offsets, dim }
    }

    fn to_real(&self, x: &[CMat]) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        for (i, m) in x.iter().enumerate() {
            let (n, d) = self.shapes[i];
            let base = self.offsets[i];
            for (e, z) in m.iter().enumerate() {
                v[base + e] = z.re;
                v[base + n * d + e] = z.im;
            }
        }
        v
    }

    fn from_real(&self, v: &DVector<f64>) -> Vec<CMat> {
        self.shapes
            .iter()
            .enumerate()
            .map(|(i, &(n, d))| {
                let base = self.offsets[i];
                CMat::from_fn(n, d, |r, c| {
                    let e = c * n + r;
                    Complex64::new(v[base + e], v[base + n * d + e])
                })
            })
            .collect()
    }
}

/// Adds `coeff * [[Re A, -Im A], [Im A, Re A]]` for every column of block `i`.
fn add_real_block(h: &mut DMatrix<f64>, layout: &Layout, i: usize, a: &CMat, coeff: f64) {
    let (n, d) = layout.shapes[i];
    let base = layout.offsets[i];
    let im_base = base + n * d;
    for col in 0..d {
        let off = col * n;
        for r in 0..n {
            for c in 0..n {
                let z = a[(r, c)] * coeff;
                h[(base + off + r, base + off + c)] += z.re;
                h[(base + off + r, im_base + off + c)] += -z.im;
                h[(im_base + off + r, base + off + c)] += z.im;
                h[(im_base + off + r, im_base + off + c)] += z.re;
            }
        }
    }
}

struct Problem<'a> {
    qp: &'a ConvexQuadraticProgram,
    layout: Layout,
    /// Per-row relaxation making the start strictly feasible; solutions are
    /// allowed to sit within this slack of the original boundary.
    row_shift: Vec<f64>,
    row_scale: Vec<f64>,
    obj_scale: f64,
}

impl<'a> Problem<'a> {
    /// Slacks of every constraint at `x` (positive means strictly feasible).
    fn slacks(&self, x: &[CMat]) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.qp.rows.len() + x.len());
        for r in 0..self.qp.rows.len() {
            s.push(self.row_shift[r] - self.qp.row_value(r, x) / self.row_scale[r]);
        }
        for (i, &cap) in self.qp.power_caps.iter().enumerate() {
            if cap.is_finite() {
                s.push((cap - frob_norm_sq(&x[i])) / cap.max(1e-300));
            }
        }
        s
    }

    fn strictly_feasible(&self, x: &[CMat]) -> bool {
        self.slacks(x).iter().all(|&s| s > 0.0)
    }

    fn scaled_objective(&self, x: &[CMat]) -> f64 {
        self.qp.objective_value(x) / self.obj_scale
    }

    /// Merit `tau * f + barrier`, with its real gradient and Hessian.
    fn merit_parts(
        &self,
        x: &[CMat],
        tau: f64,
        want_hessian: bool,
    ) -> (f64, DVector<f64>, Option<DMatrix<f64>>) {
        let nblk = x.len();
        let mut value = tau * self.scaled_objective(x);
        let mut grad_c: Vec<CMat> = self
            .qp
            .objective_grad(x)
            .into_iter()
            .map(|g| g.scale(tau / self.obj_scale))
            .collect();
        let mut hess = want_hessian.then(|| DMatrix::zeros(self.layout.dim, self.layout.dim));
        if let Some(h) = hess.as_mut() {
            for i in 0..nblk {
                add_real_block(
                    h,
                    &self.layout,
                    i,
                    &self.qp.objective.curvature[i],
                    2.0 * tau / self.obj_scale,
                );
            }
        }

        let mut rank1 = Vec::new();
        for r in 0..self.qp.rows.len() {
            let s = self.row_shift[r] - self.qp.row_value(r, x) / self.row_scale[r];
            debug_assert!(s > 0.0);
            value -= s.ln();
            let g_row: Vec<CMat> = self
                .qp
                .row_grad(r, x)
                .into_iter()
                .map(|g| g.scale(1.0 / self.row_scale[r]))
                .collect();
            for i in 0..nblk {
                grad_c[i] += g_row[i].scale(1.0 / s);
            }
            if let Some(h) = hess.as_mut() {
                for i in 0..nblk {
                    if let Some(q) = &self.qp.rows[r].quad[i] {
                        add_real_block(h, &self.layout, i, q, 2.0 / (self.row_scale[r] * s));
                    }
                }
                rank1.push((self.layout.to_real(&g_row), 1.0 / (s * s)));
            }
        }
        for (i, &cap) in self.qp.power_caps.iter().enumerate() {
            if !cap.is_finite() {
                continue;
            }
            let capn = cap.max(1e-300);
            let s = (cap - frob_norm_sq(&x[i])) / capn;
            debug_assert!(s > 0.0);
            value -= s.ln();
            let g_ball: Vec<CMat> = (0..nblk)
                .map(|j| {
                    if j == i {
                        x[i].scale(2.0 / capn)
                    } else {
                        CMat::zeros(x[j].nrows(), x[j].ncols())
                    }
                })
                .collect();
            for j in 0..nblk {
                grad_c[j] += g_ball[j].scale(1.0 / s);
            }
            if let Some(h) = hess.as_mut() {
                add_real_block(
                    h,
                    &self.layout,
                    i,
                    &CMat::identity(x[i].nrows(), x[i].nrows()),
                    2.0 / (capn * s),
                );
                rank1.push((self.layout.to_real(&g_ball), 1.0 / (s * s)));
            }
        }
        let grad = self.layout.to_real(&grad_c);
        if let Some(h) = hess.as_mut() {
            for (w, coeff) in &rank1 {
                // h += coeff * w w^T
                for a in 0..self.layout.dim {
                    if w[a] == 0.0 {
                        continue;
                    }
                    for b in 0..self.layout.dim {
                        h[(a, b)] += coeff * w[a] * w[b];
                    }
                }
            }
        }
        (value, grad, hess)
    }

    fn num_constraints(&self) -> usize {
        self.qp.rows.len() + self.qp.power_caps.iter().filter(|c| c.is_finite()).count()
    }
}

/// Minimizes the program from a feasible start.
///
/// Returns the best feasible iterate seen (never worse than the start) and a
/// certificate with the final KKT residual. Hitting the iteration cap with a
/// residual above `tol` is reported through `converged = false`, not an error.
pub fn solve(
    qp: &ConvexQuadraticProgram,
    start: &[CMat],
    tol: f64,
    max_newton: usize,
) -> Result<(Vec<CMat>, Certificate)> {
    let nblk = qp.num_blocks();
    assert_eq!(start.len(), nblk);
    let layout = Layout::new(start);

    // Pull the start strictly inside the power balls.
    let mut x: Vec<CMat> = start.to_vec();
    for i in 0..nblk {
        let cap = qp.power_caps[i];
        if cap.is_finite() {
            let p = frob_norm_sq(&x[i]);
            if p > cap * (1.0 - 1e-9) {
                if cap <= 0.0 {
                    return Err(Error::InfeasibleStart);
                }
                x[i] *= Complex64::new((cap * (1.0 - 1e-9) / p).sqrt(), 0.0);
            }
        }
    }

    // Row scales and shifts: each row is normalized to O(1) and relaxed just
    // enough that the (sanitized) start is strictly inside.
    let mut row_scale = Vec::with_capacity(qp.rows.len());
    let mut row_shift = Vec::with_capacity(qp.rows.len());
    for r in 0..qp.rows.len() {
        let row = &qp.rows[r];
        let mut scale = row.constant.abs();
        for q in row.quad.iter().flatten() {
            scale = scale.max(q.norm() * qp.power_caps[row.linear_block].min(1e6).max(1e-12));
        }
        scale = scale.max(row.linear.norm() * 2.0).max(1e-300);
        row_scale.push(scale);
        let v0 = qp.row_value(r, &x) / scale;
        if v0 > 1e-6 {
            // Start violates the original row by more than numerical drift.
            return Err(Error::InfeasibleStart);
        }
        row_shift.push(v0.max(0.0) + 1e-9);
    }

    let obj_scale = {
        let mut s: f64 = 0.0;
        for i in 0..nblk {
            let (lam, _) = hermitian_max_eig(&qp.objective.curvature[i], 1e-6, 200);
            let p = if qp.power_caps[i].is_finite() { qp.power_caps[i] } else { 1.0 };
            s = s.max(lam * p + 2.0 * qp.objective.linear[i].norm() * p.sqrt());
        }
        s.max(1e-300)
    };

    let problem = Problem { qp, layout, row_shift, row_scale, obj_scale };
    if !problem.strictly_feasible(&x) {
        return Err(Error::InfeasibleStart);
    }

    let m = problem.num_constraints();
    let start_sanitized = x.clone();
    let mut best = x.clone();
    let mut best_f = problem.scaled_objective(&x);
    let mut tau = 8.0;
    let mut iterations = 0;
    let mut best_residual = f64::INFINITY;

    'outer: loop {
        // Inner Newton loop at fixed tau.
        for _ in 0..40 {
            if iterations >= max_newton {
                break 'outer;
            }
            iterations += 1;
            let (_, grad, hess) = problem.merit_parts(&x, tau, true);
            let mut h = hess.unwrap();
            let dim = h.nrows();
            let ridge = 1e-12 * (0..dim).map(|i| h[(i, i)]).fold(0.0f64, f64::max).max(1e-300);
            let step = loop {
                let mut h_try = h.clone();
                for i in 0..dim {
                    h_try[(i, i)] += ridge;
                }
                match h_try.cholesky() {
                    Some(ch) => break ch.solve(&(-&grad)),
                    None => {
                        for i in 0..dim {
                            h[(i, i)] += ridge * 1e3;
                        }
                    }
                }
            };
            let decrement_sq = -grad.dot(&step);
            if decrement_sq <= 2.0 * 1e-14 {
                break;
            }
            // Backtracking line search keeping strict feasibility. Merit
            // changes are expanded exactly along the step (every piece is
            // quadratic in t), so the test stays resolvable at large tau.
            let xv = problem.layout.to_real(&x);
            let d_blocks = problem.layout.from_real(&step);
            let og = problem.qp.objective_grad(&x);
            let mut f_lin = 0.0;
            let mut f_quad = 0.0;
            for i in 0..nblk {
                f_lin += crate::linalg::re_inner(&d_blocks[i], &og[i]) / problem.obj_scale;
                f_quad += crate::linalg::re_inner(
                    &d_blocks[i],
                    &(&problem.qp.objective.curvature[i] * &d_blocks[i]),
                ) / problem.obj_scale;
            }
            // Directional expansion of every slack: s(t) = s - (l t + q t^2).
            let slacks_x = problem.slacks(&x);
            let mut cons_lin = Vec::with_capacity(slacks_x.len());
            let mut cons_quad = Vec::with_capacity(slacks_x.len());
            for r in 0..problem.qp.rows.len() {
                let rg = problem.qp.row_grad(r, &x);
                let mut l = 0.0;
                let mut q = 0.0;
                for i in 0..nblk {
                    l += crate::linalg::re_inner(&d_blocks[i], &rg[i]) / problem.row_scale[r];
                    if let Some(qm) = &problem.qp.rows[r].quad[i] {
                        q += crate::linalg::re_inner(&d_blocks[i], &(qm * &d_blocks[i]))
                            / problem.row_scale[r];
                    }
                }
                cons_lin.push(l);
                cons_quad.push(q);
            }
            for (i, &cap) in problem.qp.power_caps.iter().enumerate() {
                if cap.is_finite() {
                    let capn = cap.max(1e-300);
                    cons_lin.push(2.0 * crate::linalg::re_inner(&x[i], &d_blocks[i]) / capn);
                    cons_quad.push(crate::linalg::frob_norm_sq(&d_blocks[i]) / capn);
                }
            }
            let mut t = 1.0;
            let mut accepted = false;
            'ls: for _ in 0..60 {
                let mut delta = tau * (t * f_lin + t * t * f_quad);
                for (j, &s) in slacks_x.iter().enumerate() {
                    let dv = t * cons_lin[j] + t * t * cons_quad[j];
                    let ratio = -dv / s;
                    if ratio <= -1.0 + 1e-14 {
                        t *= 0.5;
                        continue 'ls;
                    }
                    delta -= ratio.ln_1p();
                }
                if delta <= -0.25 * t * decrement_sq {
                    x = problem.layout.from_real(&(&xv + step.scale(t)));
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }

            if !accepted {
                break;
            }
            let f = problem.scaled_objective(&x);
            if f < best_f {
                best_f = f;
                best = x.clone();
            }
        }

        // KKT residual at the current central point: stationarity from the
        // barrier multipliers plus the duality-gap bound m / tau.
        let (_, grad, _) = problem.merit_parts(&x, tau, false);
        let f_now = problem.scaled_objective(&x);
        let stationarity = grad.norm() / tau;
        let gap = m as f64 / tau;
        let residual = stationarity.max(gap / (1.0 + f_now.abs()));
        best_residual = best_residual.min(residual);
        if best_residual <= tol || iterations >= max_newton || m == 0 {
            break;
        }
        // Past the floating-point floor of the barrier the measure degrades;
        // pushing tau further only loses accuracy.
        if residual > best_residual * 100.0 || tau > 1e16 {
            break;
        }
        tau *= 25.0;
    }

    // Return the best feasible objective seen (the start competes too); the
    // duality-gap certificate transfers to any feasible point at least as
    // good as the certified central one.
    if problem.scaled_objective(&start_sanitized) < best_f {
        best = start_sanitized;
    }
    let converged = best_residual <= tol;
    Ok((best, Certificate { kkt_residual: best_residual, iterations, converged }))
}
