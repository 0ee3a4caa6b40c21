//! Brute-force QP oracle: enumerate candidate active sets, solve each KKT
//! system (LU, falling back to SVD), keep the points that satisfy every KKT condition.

use intersect::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Outcome of the enumeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleVerdict {
    Optimal(f64),
    Infeasible,
}

/// One-sided rows `a' x >= b` gathered from a problem.
fn one_sided(p: &QpProblem) -> Vec<(Vec<f64>, f64)> {
    let mut rows = Vec::new();
    for i in 0..p.n {
        let mut e = vec![0.0; p.n];
        if p.lb[i].is_finite() {
            e[i] = 1.0;
            rows.push((e.clone(), p.lb[i]));
        }
        if p.ub[i].is_finite() {
            e[i] = -1.0;
            rows.push((e, -p.ub[i]));
        }
    }
    for i in 0..p.m() {
        let a = p.row(i).to_vec();
        if p.cl[i].is_finite() {
            rows.push((a.clone(), p.cl[i]));
        }
        if p.cu[i].is_finite() {
            rows.push((a.iter().map(|v| -v).collect(), -p.cu[i]));
        }
    }
    rows
}

fn subsets(m: usize, max_k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    fn rec(start: usize, m: usize, max_k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for i in start..m {
            cur.push(i);
            out.push(cur.clone());
            if cur.len() < max_k {
                rec(i + 1, m, max_k, cur, out);
            }
            cur.pop();
        }
    }
    rec(0, m, max_k, &mut Vec::new(), &mut out);
    out
}

pub fn enumeration_count(m: usize, n: usize) -> usize {
    let mut total = 0usize;
    let mut c = 1usize;
    for k in 0..=n.min(m) {
        total += c;
        c = c * (m - k) / (k + 1);
    }
    total
}

/// Enumerates active sets of size at most `n`. Assumes the objective is
/// bounded below on the feasible set.
pub fn enumerate(p: &QpProblem) -> OracleVerdict {
    let n = p.n;
    let rows = one_sided(p);
    let h = DMatrix::from_row_slice(n, n, &p.h);
    let g = DVector::from_column_slice(&p.g);
    let scale = 1.0 + p.h.iter().chain(&p.g).fold(0.0f64, |a, v| a.max(v.abs()));
    let mut best: Option<f64> = None;
    for set in subsets(rows.len(), n) {
        let k = set.len();
        let mut kkt = DMatrix::<f64>::zeros(n + k, n + k);
        let mut rhs = DVector::<f64>::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        for i in 0..n {
            rhs[i] = -g[i];
        }
        for (c, &r) in set.iter().enumerate() {
            let (a, b) = &rows[r];
            for i in 0..n {
                kkt[(i, n + c)] = -a[i];
                kkt[(n + c, i)] = a[i];
            }
            rhs[n + c] = *b;
        }
        let lu = kkt.clone().full_piv_lu();
        let sol = match lu.solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                let svd = kkt.clone().svd(true, true);
                let Ok(s) = svd.solve(&rhs, 1e-10) else { continue };
                s
            }
        };
        let resid = (&kkt * &sol - &rhs).amax();
        if resid > 1e-8 * scale * (1.0 + rhs.amax()) {
            continue;
        }
        if (0..k).any(|c| sol[n + c] < -1e-8 * scale) {
            continue;
        }
        let x: Vec<f64> = (0..n).map(|i| sol[i]).collect();
        let feasible = rows.iter().all(|(a, b)| {
            let ax: f64 = a.iter().zip(&x).map(|(u, v)| u * v).sum();
            ax >= b - 1e-8 * (1.0 + b.abs())
        });
        if !feasible {
            continue;
        }
        let obj = p.objective(&x);
        best = Some(best.map_or(obj, |b: f64| b.min(obj)));
    }
    best.map_or(OracleVerdict::Infeasible, OracleVerdict::Optimal)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Sum of uniforms is close enough for test data.
    (0..6).map(|_| rng.gen::<f64>()).sum::<f64>() - 3.0
}

/// Random small QP that is bounded below: `H = M'M (+ eps I)`, `g` in range(H).
/// Redraws dimensions until the enumeration has at most `max_enum` subsets.
pub fn random_qp(rng: &mut ChaCha8Rng, max_enum: usize) -> QpProblem {
    loop {
        let n = rng.gen_range(1..=10);
        let m = rng.gen_range(0..=20);
        let bounded_vars = rng.gen_bool(0.3);
        let sides = m + if bounded_vars { n } else { 0 };
        if enumeration_count(sides, n) > max_enum {
            continue;
        }
        let rank = rng.gen_range(1..=n + 2);
        let mmat: Vec<f64> = (0..rank * n).map(|_| normal(rng)).collect();
        let definite = rng.gen_bool(0.6);
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for r in 0..rank {
                    s += mmat[r * n + i] * mmat[r * n + j];
                }
                h[i * n + j] = s;
            }
            if definite {
                h[i * n + i] += 0.1;
            }
        }
        let w: Vec<f64> = (0..n).map(|_| 2.0 * normal(rng)).collect();
        let mut g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * w[j]).sum()).collect();
        if definite {
            for gi in g.iter_mut() {
                *gi += normal(rng);
            }
        }
        let x0: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        let mut p = QpProblem::new(h, g);
        if bounded_vars {
            p.lb = x0.iter().map(|v| v - rng.gen_range(0.0..2.0)).collect();
            p.ub = x0.iter().map(|v| v + rng.gen_range(0.0..2.0)).collect();
        }
        let force_feasible = rng.gen_bool(0.8);
        for _ in 0..m {
            let a: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
            let ax: f64 = a.iter().zip(&x0).map(|(u, v)| u * v).sum();
            let off = if force_feasible { -rng.gen_range(0.0..1.0) } else { rng.gen_range(-1.0..1.0) };
            if rng.gen_bool(0.5) {
                p.push_row(&a, ax + off, f64::INFINITY);
            } else {
                p.push_row(&a, f64::NEG_INFINITY, ax - off);
            }
        }
        return p;
    }
}

/// QP whose rows contain a positive combination summing to zero with a
/// positive right-hand side, plus random satisfiable clutter.
pub fn infeasible_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.gen_range(1..=8);
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = rng.gen_range(0.5..3.0);
    }
    let g: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let mut p = QpProblem::new(h, g);
    let k = rng.gen_range(2..=4);
    let lambdas: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..2.0)).collect();
    let mut sum = vec![0.0; n];
    let mut rows = Vec::new();
    for l in lambdas.iter().take(k - 1) {
        let a: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        for i in 0..n {
            sum[i] += l * a[i];
        }
        rows.push(a);
    }
    let last: Vec<f64> = sum.iter().map(|s| -s / lambdas[k - 1]).collect();
    rows.push(last);
    // sum_i lambda_i a_i = 0 with sum_i lambda_i b_i > 0 makes a_i' x >= b_i empty.
    let mut bs: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
    let total: f64 = lambdas.iter().zip(&bs).map(|(l, b)| l * b).sum();
    let margin = rng.gen_range(0.1..1.0);
    bs[0] += (margin - total) / lambdas[0];
    for (a, b) in rows.iter().zip(&bs) {
        if rng.gen_bool(0.5) {
            p.push_row(a, *b, f64::INFINITY);
        } else {
            let neg: Vec<f64> = a.iter().map(|v| -v).collect();
            p.push_row(&neg, f64::NEG_INFINITY, -b);
        }
    }
    for _ in 0..rng.gen_range(0..4) {
        let a: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        p.push_row(&a, -10.0, 10.0);
    }
    p
}
