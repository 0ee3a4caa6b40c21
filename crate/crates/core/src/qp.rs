//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  lb <= x <= ub
//!                 cl <= C x <= cu
//! ```
//!
//! and are solved with a dual active-set method in the style of Goldfarb and
//! Idnani: start from the unconstrained minimum and repeatedly add the most
//! violated constraint, dropping active constraints whose multipliers would
//! turn negative. The factor `J = L^{-T}` of the Hessian is updated with
//! Givens rotations as constraints enter and leave the active set.
//!
//! A singular positive-semidefinite `H` is handled with proximal-point outer
//! iterations on `H + rho I`. When the constraint set is empty the solver
//! returns a Farkas certificate that can be checked independently.

use crate::error::{Error, Result};

/// Settings for [`QpSolver`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpSettings {
    /// Feasibility and KKT tolerance.
    pub tolerance: f64,
    /// Cap on active-set changes (summed over proximal iterations).
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 4000,
        }
    }
}

/// A dense QP. Matrices are row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QpProblem {
    pub n: usize,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    /// `m x n` constraint matrix.
    pub c: Vec<f64>,
    pub cl: Vec<f64>,
    pub cu: Vec<f64>,
}

impl QpProblem {
    /// Unconstrained problem with the given Hessian and linear term.
    pub fn new(h: Vec<f64>, g: Vec<f64>) -> Self {
        let n = g.len();
        Self {
            n,
            h,
            g,
            lb: vec![f64::NEG_INFINITY; n],
            ub: vec![f64::INFINITY; n],
            c: Vec::new(),
            cl: Vec::new(),
            cu: Vec::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.cl.len()
    }

    pub fn with_bounds(mut self, lb: Vec<f64>, ub: Vec<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    /// Appends the row constraint `lo <= row' x <= hi`.
    pub fn push_row(&mut self, row: &[f64], lo: f64, hi: f64) {
        self.c.extend_from_slice(row);
        self.cl.push(lo);
        self.cu.push(hi);
    }

    pub fn with_row(mut self, row: &[f64], lo: f64, hi: f64) -> Self {
        self.push_row(row, lo, hi);
        self
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.c[i * self.n..(i + 1) * self.n]
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let mut quad = 0.0;
        for i in 0..n {
            quad += x[i] * dot(&self.h[i * n..(i + 1) * n], x);
        }
        0.5 * quad + dot(&self.g, x)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n;
        let m = self.m();
        let bad = |what: &str| Err(Error::InvalidInput(format!("qp dimension mismatch: {what}")));
        if self.g.len() != n {
            return bad("g");
        }
        if self.h.len() != n * n {
            return bad("h");
        }
        if self.lb.len() != n || self.ub.len() != n {
            return bad("variable bounds");
        }
        if self.c.len() != m * n || self.cu.len() != m {
            return bad("constraint rows");
        }
        if self.h.iter().chain(&self.g).chain(&self.c).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("qp data must be finite".into()));
        }
        for (lo, hi) in self.lb.iter().zip(&self.ub).chain(self.cl.iter().zip(&self.cu)) {
            if lo.is_nan() || hi.is_nan() || *lo == f64::INFINITY || *hi == f64::NEG_INFINITY {
                return Err(Error::InvalidInput(format!("invalid bound pair [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

/// Farkas certificate of primal infeasibility.
///
/// With `A = [I; C]`, `l = [lb; cl]`, `u = [ub; cu]` the certificate `y = [bounds; rows]`
/// satisfies `A' y = 0` and `u' max(y, 0) - l' max(-y, 0) < 0`, which cannot hold
/// if some `x` satisfies `l <= A x <= u`.
#[derive(Clone, Debug, PartialEq)]
pub struct InfeasibilityCertificate {
    pub bounds: Vec<f64>,
    pub rows: Vec<f64>,
}

impl InfeasibilityCertificate {
    /// Returns `(|A' y|_inf, support value)`; a valid certificate has a negative
    /// support value that dominates the first entry.
    pub fn evaluate(&self, problem: &QpProblem) -> (f64, f64) {
        let n = problem.n;
        let mut aty = self.bounds.clone();
        for (i, &yi) in self.rows.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, problem.row(i), &mut aty);
            }
        }
        let support = |lo: &[f64], hi: &[f64], y: &[f64]| -> f64 {
            y.iter()
                .zip(lo.iter().zip(hi))
                .map(|(&yi, (&l, &u))| {
                    if yi > 0.0 {
                        yi * u
                    } else if yi < 0.0 {
                        yi * l
                    } else {
                        0.0
                    }
                })
                .sum()
        };
        let value = support(&problem.lb, &problem.ub, &self.bounds)
            + support(&problem.cl, &problem.cu, &self.rows);
        let residual = aty.iter().take(n).fold(0.0f64, |a, v| a.max(v.abs()));
        (residual, value)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub status: QpStatus,
    pub objective: f64,
    /// Largest scaled KKT residual (stationarity, primal, dual, complementarity).
    pub kkt_residual: f64,
    /// Multipliers for the variable bounds, positive at upper bounds.
    pub y_bounds: Vec<f64>,
    /// Multipliers for the constraint rows, positive at upper limits.
    pub y_rows: Vec<f64>,
    pub certificate: Option<InfeasibilityCertificate>,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Cholesky-based factor of a Hessian, reusable across solves that share `H`.
#[derive(Clone, Debug)]
pub struct HessianFactor {
    n: usize,
    /// `L^{-T}` stored column-major.
    j: Vec<f64>,
    /// Proximal weight added to the diagonal, zero when `H` is positive definite.
    rho: f64,
}

impl HessianFactor {
    /// Factors `H`, rejecting non-symmetric or indefinite input.
    pub fn new(h: &[f64], n: usize) -> Result<Self> {
        if h.len() != n * n {
            return Err(Error::InvalidInput("qp dimension mismatch: h".into()));
        }
        let scale = (0..n).map(|i| h[i * n + i].abs()).fold(1.0f64, f64::max);
        for i in 0..n {
            for k in 0..i {
                if (h[i * n + k] - h[k * n + i]).abs() > 1e-8 * scale {
                    return Err(Error::InvalidInput(format!(
                        "hessian not symmetric at ({i}, {k})"
                    )));
                }
            }
        }
        if let Some(l) = cholesky(h, n, 0.0, 1e-10 * scale) {
            return Ok(Self { n, j: invert_lower_transpose(&l, n), rho: 0.0 });
        }
        // PSD within tolerance iff H + tau I still factors.
        if cholesky(h, n, 1e-8 * scale, 0.0).is_none() {
            return Err(Error::InvalidInput("hessian is not positive semidefinite".into()));
        }
        let rho = 1e-2 * scale;
        let l = cholesky(h, n, rho, 0.0)
            .ok_or_else(|| Error::InvalidInput("regularised hessian did not factor".into()))?;
        Ok(Self { n, j: invert_lower_transpose(&l, n), rho })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_regularised(&self) -> bool {
        self.rho > 0.0
    }
}

/// Dense QP solver.
#[derive(Clone, Debug, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    pub fn solve(&self, problem: &QpProblem, warm_start: Option<&[f64]>) -> Result<QpSolution> {
        problem.validate()?;
        let factor = HessianFactor::new(&problem.h, problem.n)?;
        self.solve_factored(&factor, problem, warm_start)
    }

    /// Solves with a precomputed factor of `problem.h`.
    pub fn solve_factored(
        &self,
        factor: &HessianFactor,
        problem: &QpProblem,
        warm_start: Option<&[f64]>,
    ) -> Result<QpSolution> {
        problem.validate()?;
        if factor.n != problem.n {
            return Err(Error::InvalidInput("qp dimension mismatch: factor".into()));
        }
        if let Some(w) = warm_start {
            if w.len() != problem.n {
                return Err(Error::InvalidInput("qp dimension mismatch: warm start".into()));
            }
        }
        let rows = GiRows::new(problem);
        let mut ws = Workspace::new(problem.n);
        let tol = self.settings.tolerance;
        // Feasibility target well inside the reported tolerance.
        let feas_tol = 1e-3 * tol;

        let preferred: Vec<bool> = match warm_start {
            Some(w) => {
                let mut ax = vec![0.0; problem.m()];
                rows.products(problem, w, &mut ax);
                (0..rows.len())
                    .map(|r| rows.slack(r, w, &ax).abs() <= 1e-7 * (1.0 + rows.b[r].abs()))
                    .collect()
            }
            None => vec![false; rows.len()],
        };

        let mut iterations = 0usize;
        if factor.rho == 0.0 {
            let out = ws.run(factor, problem, &rows, &problem.g, &preferred, feas_tol, &mut iterations, self.settings.max_iterations);
            return Ok(self.finish(problem, &rows, &ws, out, iterations));
        }

        // Proximal point: minimise f(x) + rho/2 |x - x_k|^2 until x stops moving.
        let mut center = warm_start.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; problem.n]);
        let mut g_shift = vec![0.0; problem.n];
        let mut warm_rows = preferred;
        loop {
            for i in 0..problem.n {
                g_shift[i] = problem.g[i] - factor.rho * center[i];
            }
            let out = ws.run(factor, problem, &rows, &g_shift, &warm_rows, feas_tol, &mut iterations, self.settings.max_iterations);
            if out != GiOutcome::Optimal {
                return Ok(self.finish(problem, &rows, &ws, out, iterations));
            }
            let step = ws
                .x
                .iter()
                .zip(&center)
                .fold(0.0f64, |a, (x, c)| a.max((x - c).abs()));
            center.copy_from_slice(&ws.x);
            let scale = 1.0 + ws.x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if factor.rho * step <= 1e-3 * tol * scale || step <= 1e-13 * scale {
                return Ok(self.finish(problem, &rows, &ws, GiOutcome::Optimal, iterations));
            }
            if iterations >= self.settings.max_iterations {
                return Ok(self.finish(problem, &rows, &ws, GiOutcome::MaxIterations, iterations));
            }
            warm_rows = vec![false; rows.len()];
            for &(r, _) in &ws.active {
                warm_rows[r] = true;
            }
        }
    }

    fn finish(
        &self,
        problem: &QpProblem,
        rows: &GiRows,
        ws: &Workspace,
        outcome: GiOutcome,
        iterations: usize,
    ) -> QpSolution {
        let n = problem.n;
        let m = problem.m();
        let mut y_bounds = vec![0.0; n];
        let mut y_rows = vec![0.0; m];
        for (&(r, _), &u) in ws.active.iter().zip(&ws.u) {
            // GI rows read n' x >= b; lower sides carry -u, upper sides +u.
            let y = if rows.upper[r] ^ ws.flipped(r) { u } else { -u };
            match rows.source[r] {
                RowSource::Bound(i) => y_bounds[i] += y,
                RowSource::Row(i) => y_rows[i] += y,
            }
        }
        let mut solution = QpSolution {
            x: ws.x.clone(),
            status: match outcome {
                GiOutcome::Optimal => QpStatus::Optimal,
                GiOutcome::Infeasible => QpStatus::Infeasible,
                GiOutcome::MaxIterations => QpStatus::MaxIterations,
            },
            objective: problem.objective(&ws.x),
            kkt_residual: 0.0,
            y_bounds,
            y_rows,
            certificate: None,
            iterations,
        };
        match outcome {
            GiOutcome::Optimal => {
                solution.kkt_residual = kkt_residual(problem, &solution.x, &solution.y_bounds, &solution.y_rows);
                if solution.kkt_residual > self.settings.tolerance {
                    log::debug!("qp: kkt residual {:.3e} above tolerance", solution.kkt_residual);
                    solution.status = QpStatus::MaxIterations;
                }
            }
            GiOutcome::Infeasible => {
                solution.certificate = Some(ws.certificate(problem, rows));
                solution.objective = f64::INFINITY;
                solution.kkt_residual = f64::INFINITY;
            }
            GiOutcome::MaxIterations => {
                solution.kkt_residual = kkt_residual(problem, &solution.x, &solution.y_bounds, &solution.y_rows);
            }
        }
        solution
    }
}

/// Scaled KKT residual of a primal-dual pair for the original problem.
pub fn kkt_residual(problem: &QpProblem, x: &[f64], y_bounds: &[f64], y_rows: &[f64]) -> f64 {
    let n = problem.n;
    let m = problem.m();
    let mut hx = vec![0.0; n];
    for i in 0..n {
        hx[i] = dot(&problem.h[i * n..(i + 1) * n], x);
    }
    let mut aty = y_bounds.to_vec();
    for i in 0..m {
        axpy(y_rows[i], problem.row(i), &mut aty);
    }
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let stat: Vec<f64> = (0..n).map(|i| hx[i] + problem.g[i] + aty[i]).collect();
    let r_stat = inf(&stat) / (1.0 + inf(&hx).max(inf(&problem.g)).max(inf(&aty)));

    let ax: Vec<f64> = (0..m).map(|i| dot(problem.row(i), x)).collect();
    let mut r_prim = 0.0f64;
    let mut r_dual = 0.0f64;
    let mut r_comp = 0.0f64;
    let sides = x
        .iter()
        .zip(y_bounds)
        .zip(problem.lb.iter().zip(&problem.ub))
        .chain(ax.iter().zip(y_rows).zip(problem.cl.iter().zip(&problem.cu)));
    for ((&v, &y), (&lo, &hi)) in sides {
        r_prim = r_prim.max(lo - v).max(v - hi);
        if y > 0.0 {
            if hi.is_finite() {
                r_comp = r_comp.max(y * (hi - v).abs());
            } else {
                r_dual = r_dual.max(y);
            }
        } else if y < 0.0 {
            if lo.is_finite() {
                r_comp = r_comp.max(-y * (v - lo).abs());
            } else {
                r_dual = r_dual.max(-y);
            }
        }
    }
    let xs = 1.0 + inf(x).max(inf(&ax));
    let ys = 1.0 + inf(y_bounds).max(inf(y_rows));
    (r_stat)
        .max(r_prim / xs)
        .max(r_dual / ys)
        .max(r_comp / (xs * ys))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RowSource {
    Bound(usize),
    Row(usize),
}

/// Problem constraints expanded into one-sided rows `n' x >= b`.
struct GiRows {
    source: Vec<RowSource>,
    /// True for the `-a' x >= -u` side of a two-sided constraint.
    upper: Vec<bool>,
    equality: Vec<bool>,
    b: Vec<f64>,
    norm: Vec<f64>,
}

impl GiRows {
    fn new(p: &QpProblem) -> Self {
        let mut rows = GiRows {
            source: Vec::new(),
            upper: Vec::new(),
            equality: Vec::new(),
            b: Vec::new(),
            norm: Vec::new(),
        };
        let mut push = |src: RowSource, norm: f64, lo: f64, hi: f64| {
            if lo == hi {
                rows.source.push(src);
                rows.upper.push(false);
                rows.equality.push(true);
                rows.b.push(lo);
                rows.norm.push(norm);
                return;
            }
            if lo.is_finite() {
                rows.source.push(src);
                rows.upper.push(false);
                rows.equality.push(false);
                rows.b.push(lo);
                rows.norm.push(norm);
            }
            if hi.is_finite() {
                rows.source.push(src);
                rows.upper.push(true);
                rows.equality.push(false);
                rows.b.push(-hi);
                rows.norm.push(norm);
            }
        };
        for i in 0..p.n {
            push(RowSource::Bound(i), 1.0, p.lb[i], p.ub[i]);
        }
        for i in 0..p.m() {
            let norm = dot(p.row(i), p.row(i)).sqrt();
            push(RowSource::Row(i), norm, p.cl[i], p.cu[i]);
        }
        rows
    }

    fn len(&self) -> usize {
        self.b.len()
    }

    fn products(&self, p: &QpProblem, x: &[f64], ax: &mut [f64]) {
        for (i, v) in ax.iter_mut().enumerate() {
            *v = dot(p.row(i), x);
        }
    }

    fn slack(&self, r: usize, x: &[f64], ax: &[f64]) -> f64 {
        let v = match self.source[r] {
            RowSource::Bound(i) => x[i],
            RowSource::Row(i) => ax[i],
        };
        if self.upper[r] {
            -v - self.b[r]
        } else {
            v - self.b[r]
        }
    }

    /// Writes the normal of row `r` (negated when `flip`) into `out`.
    fn normal(&self, p: &QpProblem, r: usize, flip: bool, out: &mut [f64]) {
        let sign = if self.upper[r] ^ flip { -1.0 } else { 1.0 };
        match self.source[r] {
            RowSource::Bound(i) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[i] = sign;
            }
            RowSource::Row(i) => {
                for (o, &a) in out.iter_mut().zip(p.row(i)) {
                    *o = sign * a;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum GiOutcome {
    Optimal,
    Infeasible,
    MaxIterations,
}

struct Workspace {
    n: usize,
    x: Vec<f64>,
    /// Column-major `J`, rotated as constraints enter and leave.
    j: Vec<f64>,
    /// Column-major upper-triangular `R`.
    r: Vec<f64>,
    /// Active rows with the flip flag used for equalities entered from above.
    active: Vec<(usize, bool)>,
    u: Vec<f64>,
    ax: Vec<f64>,
    np: Vec<f64>,
    d: Vec<f64>,
    z: Vec<f64>,
    rv: Vec<f64>,
    // Farkas data recorded on infeasibility.
    blocked: Option<(usize, bool, Vec<f64>)>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            n,
            x: vec![0.0; n],
            j: Vec::new(),
            r: vec![0.0; n * n],
            active: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            ax: Vec::new(),
            np: vec![0.0; n],
            d: vec![0.0; n],
            z: vec![0.0; n],
            rv: vec![0.0; n],
            blocked: None,
        }
    }

    fn flipped(&self, r: usize) -> bool {
        self.active.iter().any(|&(a, f)| a == r && f)
    }

    fn col(&self, k: usize) -> &[f64] {
        &self.j[k * self.n..(k + 1) * self.n]
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        factor: &HessianFactor,
        p: &QpProblem,
        rows: &GiRows,
        g: &[f64],
        preferred: &[bool],
        feas_tol: f64,
        iterations: &mut usize,
        max_iterations: usize,
    ) -> GiOutcome {
        let n = self.n;
        self.j.clear();
        self.j.extend_from_slice(&factor.j);
        self.active.clear();
        self.u.clear();
        self.blocked = None;
        self.ax.resize(p.m(), 0.0);

        // Unconstrained minimiser x = -J J' g.
        for k in 0..n {
            self.d[k] = dot(self.col(k), g);
        }
        self.x.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..n {
            let dk = self.d[k];
            let (x, j) = (&mut self.x, &self.j);
            axpy(-dk, &j[k * n..(k + 1) * n], x);
        }

        let mut is_active = vec![false; rows.len()];
        loop {
            rows.products(p, &self.x, &mut self.ax);
            // Pick the most violated inactive row, preferring warm-start rows.
            let mut best: Option<(usize, bool, f64, bool)> = None;
            for r in 0..rows.len() {
                if is_active[r] {
                    continue;
                }
                let s = rows.slack(r, &self.x, &self.ax);
                let (viol, flip) = if rows.equality[r] && s > 0.0 { (s, true) } else { (-s, false) };
                if viol <= feas_tol * (1.0 + rows.b[r].abs()) {
                    continue;
                }
                let score = viol / rows.norm[r].max(1e-300);
                let pref = preferred[r];
                let better = match best {
                    None => true,
                    Some((_, _, bs, bp)) => (pref && !bp) || (pref == bp && score > bs),
                };
                if better {
                    best = Some((r, flip, score, pref));
                }
            }
            let Some((p_row, flip, _, _)) = best else {
                return GiOutcome::Optimal;
            };
            rows.normal(p, p_row, flip, &mut self.np);
            let b_p = if flip { -rows.b[p_row] } else { rows.b[p_row] };
            let mut u_plus = 0.0;

            loop {
                *iterations += 1;
                if *iterations > max_iterations {
                    return GiOutcome::MaxIterations;
                }
                let q = self.active.len();
                for k in 0..n {
                    self.d[k] = dot(self.col(k), &self.np);
                }
                self.z.iter_mut().for_each(|v| *v = 0.0);
                for k in q..n {
                    let dk = self.d[k];
                    let (z, j) = (&mut self.z, &self.j);
                    axpy(dk, &j[k * n..(k + 1) * n], z);
                }
                // r = R^{-1} d[..q]
                for i in (0..q).rev() {
                    let mut s = self.d[i];
                    for k in i + 1..q {
                        s -= self.r[k * n + i] * self.rv[k];
                    }
                    self.rv[i] = s / self.r[i * n + i];
                }

                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for (idx, &(ar, _)) in self.active.iter().enumerate() {
                    if rows.equality[ar] {
                        continue;
                    }
                    if self.rv[idx] > 1e-12 {
                        let ratio = self.u[idx] / self.rv[idx];
                        if ratio < t1 {
                            t1 = ratio;
                            drop_at = Some(idx);
                        }
                    }
                }
                let d_norm2: f64 = self.d.iter().map(|v| v * v).sum();
                let zn: f64 = self.d[q..].iter().map(|v| v * v).sum();
                let slack_p = dot(&self.np, &self.x) - b_p;
                let t2 = if zn > 1e-20 * d_norm2.max(1e-300) {
                    -slack_p / zn
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if t.is_infinite() {
                    self.blocked = Some((p_row, flip, self.rv[..q].to_vec()));
                    return GiOutcome::Infeasible;
                }
                if t2.is_finite() {
                    for i in 0..n {
                        self.x[i] += t * self.z[i];
                    }
                }
                for idx in 0..q {
                    self.u[idx] -= t * self.rv[idx];
                }
                u_plus += t;
                if t2.is_finite() && t2 <= t1 {
                    self.add_constraint(p_row, flip, u_plus);
                    is_active[p_row] = true;
                    break;
                }
                let idx = drop_at.expect("partial step has a blocking constraint");
                let (dropped, _) = self.active[idx];
                is_active[dropped] = false;
                self.drop_constraint(idx);
            }
        }
    }

    /// Adds the row whose transformed normal is in `self.d`.
    fn add_constraint(&mut self, row: usize, flip: bool, u: f64) {
        let n = self.n;
        let q = self.active.len();
        for k in (q + 1..n).rev() {
            let (a, b) = (self.d[k - 1], self.d[k]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            self.d[k - 1] = h;
            self.d[k] = 0.0;
            rotate_columns(&mut self.j, n, k - 1, k, c, s);
        }
        for i in 0..=q {
            self.r[q * n + i] = self.d[i];
        }
        self.active.push((row, flip));
        self.u.push(u);
    }

    fn drop_constraint(&mut self, idx: usize) {
        let n = self.n;
        let q = self.active.len();
        self.active.remove(idx);
        self.u.remove(idx);
        // Shift R columns left.
        for col in idx..q - 1 {
            for i in 0..=col + 1 {
                self.r[col * n + i] = self.r[(col + 1) * n + i];
            }
        }
        for i in 0..n {
            self.r[(q - 1) * n + i] = 0.0;
        }
        // Restore triangular form.
        for k in idx..q - 1 {
            let a = self.r[k * n + k];
            let b = self.r[k * n + k + 1];
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in k..q - 1 {
                let x = self.r[col * n + k];
                let y = self.r[col * n + k + 1];
                self.r[col * n + k] = c * x + s * y;
                self.r[col * n + k + 1] = -s * x + c * y;
            }
            self.r[k * n + k + 1] = 0.0;
            rotate_columns(&mut self.j, n, k, k + 1, c, s);
        }
    }

    fn certificate(&self, p: &QpProblem, rows: &GiRows) -> InfeasibilityCertificate {
        let mut cert = InfeasibilityCertificate {
            bounds: vec![0.0; p.n],
            rows: vec![0.0; p.m()],
        };
        let (p_row, p_flip, r) = self.blocked.as_ref().expect("recorded on infeasibility");
        // Weights over one-sided rows: 1 on the blocked row, -r on the active ones.
        let mut add = |row: usize, flip: bool, w: f64| {
            let w = if rows.equality[row] { w } else { w.max(0.0) };
            // n' x >= b with weight w maps to y = -w (lower side) or +w (upper side).
            let y = if rows.upper[row] ^ flip { w } else { -w };
            match rows.source[row] {
                RowSource::Bound(i) => cert.bounds[i] += y,
                RowSource::Row(i) => cert.rows[i] += y,
            }
        };
        add(*p_row, *p_flip, 1.0);
        for (&(row, flip), &ri) in self.active.iter().zip(r) {
            add(row, flip, -ri);
        }
        cert
    }
}

fn rotate_columns(j: &mut [f64], n: usize, a: usize, b: usize, c: f64, s: f64) {
    let (lo, hi) = j.split_at_mut(b * n);
    let ca = &mut lo[a * n..(a + 1) * n];
    let cb = &mut hi[..n];
    for (x, y) in ca.iter_mut().zip(cb.iter_mut()) {
        let (xv, yv) = (*x, *y);
        *x = c * xv + s * yv;
        *y = -s * xv + c * yv;
    }
}

/// Lower Cholesky factor of `h + shift I` (row-major), or `None` if a pivot
/// falls to `min_pivot` or below.
fn cholesky(h: &[f64], n: usize, shift: f64, min_pivot: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..=i {
            let mut s = h[i * n + k];
            if i == k {
                s += shift;
            }
            s -= dot(&l[i * n..i * n + k], &l[k * n..k * n + k]);
            if i == k {
                if s <= min_pivot || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + k] = s / l[k * n + k];
            }
        }
    }
    Some(l)
}

/// Computes `L^{-T}` in column-major order from a row-major lower factor `L`.
fn invert_lower_transpose(l: &[f64], n: usize) -> Vec<f64> {
    // Column k of L^{-T} is row k of L^{-1}; solve L' y = e_k by back substitution.
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        let col = &mut out[k * n..(k + 1) * n];
        // Row k of L^{-1}, i.e. e_k' L^{-1}, satisfies w L = e_k'.
        // Entries past k are zero.
        col[k] = 1.0 / l[k * n + k];
        for i in (0..k).rev() {
            let mut s = 0.0;
            for t in i + 1..=k {
                s += col[t] * l[t * n + i];
            }
            col[i] = -s / l[i * n + i];
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
