//! Augmented-Lagrangian method for `min f(z)` subject to `g(z) >= 0` on the
//! unit box, with a projected BFGS inner solver.

use nalgebra::{DMatrix, DVector};

/// Values and gradients at a point.
pub(crate) struct Eval {
    pub f: f64,
    pub df: Vec<f64>,
    pub g: Vec<f64>,
    pub dg: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AlSettings {
    pub kkt_tol: f64,
    pub feas_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct AlOutcome {
    pub z: Vec<f64>,
    pub kkt: f64,
    pub violation: f64,
    pub multipliers: Vec<f64>,
}

fn project(z: &mut [f64]) {
    z.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|P(z - d) - z|_inf`: first-order optimality on the box.
fn projected_gradient(z: &[f64], d: &[f64]) -> f64 {
    z.iter()
        .zip(d)
        .map(|(x, g)| ((x - g).clamp(0.0, 1.0) - x).abs())
        .fold(0.0, f64::max)
}

fn violation(g: &[f64]) -> f64 {
    g.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max)
}

/// PHR augmented Lagrangian value and gradient.
fn lagrangian(e: &Eval, lambda: &[f64], rho: f64) -> (f64, Vec<f64>) {
    let mut val = e.f;
    let mut grad = e.df.clone();
    for (j, (&g, &l)) in e.g.iter().zip(lambda).enumerate() {
        let shifted = l - rho * g;
        if shifted > 0.0 {
            val += -l * g + 0.5 * rho * g * g;
            for (gi, dgi) in grad.iter_mut().zip(&e.dg[j]) {
                *gi -= shifted * dgi;
            }
        } else {
            val -= 0.5 * l * l / rho;
        }
    }
    (val, grad)
}

fn kkt_residual(z: &[f64], e: &Eval, lambda: &[f64]) -> f64 {
    let stat = projected_gradient(z, &lagrangian_gradient(e, lambda));
    let comp = e
        .g
        .iter()
        .zip(lambda)
        .map(|(&g, &l)| g.min(l).abs())
        .fold(0.0, f64::max);
    stat.max(comp).max(violation(&e.g))
}

const STALL_LIMIT: usize = 6;

pub(crate) fn augmented_lagrangian(
    eval: &dyn Fn(&[f64]) -> Eval,
    z0: &[f64],
    s: &AlSettings,
) -> AlOutcome {
    let mut z = z0.to_vec();
    project(&mut z);
    let m = eval(&z).g.len();
    let mut lambda = vec![0.0; m];
    let mut rho = 10.0;
    let mut prev_violation = f64::INFINITY;
    let mut least_violation = f64::INFINITY;
    let mut stalled = 0;
    let mut best: Option<AlOutcome> = None;
    for outer in 0..s.max_outer {
        let inner_tol = (1e-2 / (outer as f64 + 1.0).powi(2)).max(0.1 * s.kkt_tol);
        z = bfgs_box(&|x| lagrangian(&eval(x), &lambda, rho), &z, inner_tol, s.max_inner);
        let e = eval(&z);
        for (l, &g) in lambda.iter_mut().zip(&e.g) {
            *l = (*l - rho * g).max(0.0);
        }
        let v = violation(&e.g);
        let kkt = kkt_residual(&z, &e, &lambda);
        let candidate = AlOutcome {
            z: z.clone(),
            kkt,
            violation: v,
            multipliers: lambda.clone(),
        };
        let better = match &best {
            None => true,
            Some(b) => (v <= s.feas_tol && b.violation > s.feas_tol) || (v <= s.feas_tol) == (b.violation <= s.feas_tol) && kkt < b.kkt,
        };
        if better {
            best = Some(candidate);
        }
        if v <= s.feas_tol && kkt <= s.kkt_tol {
            break;
        }
        // Once feasible, the multiplier updates finish the job; a larger
        // penalty only worsens the conditioning of the inner problem.
        if v > s.feas_tol && v > 0.25 * prev_violation {
            rho = (rho * 10.0).min(1e8);
        }
        prev_violation = v;
        // An infeasible start that stops making progress at a large penalty
        // will not recover; give up on it.
        if v > s.feas_tol && v > 0.5 * least_violation {
            stalled += 1;
        } else {
            stalled = 0;
        }
        least_violation = least_violation.min(v);
        if stalled >= STALL_LIMIT {
            break;
        }
    }
    // The last iterate is the most converged; fall back to the best seen only
    // when it lost feasibility.
    let e = eval(&z);
    let mut kkt = kkt_residual(&z, &e, &lambda);
    let estimate = estimate_multipliers(&z, &e, s.feas_tol);
    let refined = kkt_residual(&z, &e, &estimate);
    if refined < kkt {
        kkt = refined;
        lambda = estimate;
    }
    if kkt > s.kkt_tol && violation(&e.g) <= s.feas_tol {
        if let Some((zp, lp, kp)) = polish(eval, &z, &lambda, s) {
            if kp < kkt {
                z = zp;
                lambda = lp;
                kkt = kp;
            }
        }
    }
    let e = eval(&z);
    let last = AlOutcome {
        kkt,
        violation: violation(&e.g),
        z,
        multipliers: lambda,
    };
    match best {
        Some(b) if last.violation > s.feas_tol && b.violation <= s.feas_tol => b,
        _ => last,
    }
}

/// Least-squares multipliers for the nearly active constraints, restricted to
/// variables off their bounds, with negative entries dropped until none remain.
/// The outer updates approach these only linearly.
fn estimate_multipliers(z: &[f64], e: &Eval, feas_tol: f64) -> Vec<f64> {
    let m = e.g.len();
    let rows: Vec<usize> = (0..z.len()).filter(|&i| z[i] > 0.0 && z[i] < 1.0).collect();
    let mut active: Vec<usize> = (0..m).filter(|&j| e.g[j].abs() <= feas_tol.max(1e-9)).collect();
    let mut lambda = vec![0.0; m];
    while !active.is_empty() && !rows.is_empty() {
        let a = DMatrix::from_fn(rows.len(), active.len(), |r, c| e.dg[active[c]][rows[r]]);
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|&i| e.df[i]));
        let Ok(sol) = a.svd(true, true).solve(&b, 1e-14) else {
            break;
        };
        if let Some(worst) = (0..active.len()).filter(|&c| sol[c] < 0.0).min_by(|&x, &y| sol[x].total_cmp(&sol[y])) {
            active.remove(worst);
            continue;
        }
        lambda = vec![0.0; m];
        for (c, &j) in active.iter().enumerate() {
            lambda[j] = sol[c];
        }
        break;
    }
    lambda
}

fn lagrangian_gradient(e: &Eval, lambda: &[f64]) -> Vec<f64> {
    let mut grad = e.df.clone();
    for (j, &l) in lambda.iter().enumerate() {
        for (gi, dgi) in grad.iter_mut().zip(&e.dg[j]) {
            *gi -= l * dgi;
        }
    }
    grad
}

/// Newton iterations on the equality system of the current active set:
/// `grad L = 0` over the variables off their bounds and `g_A = 0`. The
/// Hessian of the Lagrangian comes from central differences of the exact
/// gradients. Returns the best point seen if it improves on the input.
fn polish(eval: &dyn Fn(&[f64]) -> Eval, z0: &[f64], l0: &[f64], s: &AlSettings) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let mut z = z0.to_vec();
    let mut lambda = l0.to_vec();
    let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let start_kkt = kkt_residual(&z, &eval(&z), &lambda);
    for _ in 0..20 {
        let e = eval(&z);
        let est = estimate_multipliers(&z, &e, s.feas_tol);
        if kkt_residual(&z, &e, &est) < kkt_residual(&z, &e, &lambda) {
            lambda = est;
        }
        let k = kkt_residual(&z, &e, &lambda);
        if violation(&e.g) <= s.feas_tol && best.as_ref().is_none_or(|b| k < b.2) {
            best = Some((z.clone(), lambda.clone(), k));
        }
        if k <= 0.01 * s.kkt_tol {
            break;
        }
        let free: Vec<usize> = (0..z.len()).filter(|&i| z[i] > 0.0 && z[i] < 1.0).collect();
        let active: Vec<usize> = (0..e.g.len()).filter(|&j| lambda[j] > 0.0).collect();
        if free.is_empty() {
            break;
        }
        let grad = lagrangian_gradient(&e, &lambda);
        let (nf, na) = (free.len(), active.len());
        let mut kkt = DMatrix::zeros(nf + na, nf + na);
        for (c, &i) in free.iter().enumerate() {
            let h = 1e-6;
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[i] = (z[i] + h).min(1.0);
            zm[i] = (z[i] - h).max(0.0);
            let gp = lagrangian_gradient(&eval(&zp), &lambda);
            let gm = lagrangian_gradient(&eval(&zm), &lambda);
            for (r, &ii) in free.iter().enumerate() {
                kkt[(r, c)] = (gp[ii] - gm[ii]) / (zp[i] - zm[i]);
            }
        }
        // Symmetrize the difference Hessian.
        for r in 0..nf {
            for c in 0..r {
                let v = 0.5 * (kkt[(r, c)] + kkt[(c, r)]);
                kkt[(r, c)] = v;
                kkt[(c, r)] = v;
            }
        }
        let mut rhs = DVector::zeros(nf + na);
        for (r, &i) in free.iter().enumerate() {
            rhs[r] = -grad[i];
        }
        for (a, &j) in active.iter().enumerate() {
            for (c, &i) in free.iter().enumerate() {
                kkt[(nf + a, c)] = e.dg[j][i];
                kkt[(c, nf + a)] = -e.dg[j][i];
            }
            rhs[nf + a] = -e.g[j];
        }
        let Ok(step) = kkt.svd(true, true).solve(&rhs, 1e-12) else {
            break;
        };
        for (c, &i) in free.iter().enumerate() {
            z[i] = (z[i] + step[c]).clamp(0.0, 1.0);
        }
        for (a, &j) in active.iter().enumerate() {
            lambda[j] = (lambda[j] + step[nf + a]).max(0.0);
        }
    }
    best.filter(|b| b.2 < start_kkt)
}

/// Projected quasi-Newton descent on `[0,1]^n` with Armijo backtracking
/// along the projection arc.
pub(crate) fn bfgs_box(fun: &dyn Fn(&[f64]) -> (f64, Vec<f64>), z0: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    let n = z0.len();
    let identity = || {
        let mut h = vec![vec![0.0; n]; n];
        (0..n).for_each(|i| h[i][i] = 1.0);
        h
    };
    let mut h = identity();
    let mut z = z0.to_vec();
    let (mut f, mut g) = fun(&z);
    let mut fresh = true;
    for _ in 0..max_iter {
        if !f.is_finite() || projected_gradient(&z, &g) <= tol {
            break;
        }
        // Variables held at a bound by the gradient stay fixed this step.
        let free: Vec<bool> = (0..n)
            .map(|i| !((z[i] <= 0.0 && g[i] > 0.0) || (z[i] >= 1.0 && g[i] < 0.0)))
            .collect();
        let mut d = vec![0.0; n];
        for i in (0..n).filter(|&i| free[i]) {
            d[i] = -(0..n).filter(|&j| free[j]).map(|j| h[i][j] * g[j]).sum::<f64>();
        }
        if dot(&d, &g) >= 0.0 {
            h = identity();
            fresh = true;
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-14 {
            let mut zt: Vec<f64> = z.iter().zip(&d).map(|(x, di)| x + alpha * di).collect();
            project(&mut zt);
            let step: Vec<f64> = zt.iter().zip(&z).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            if decrease >= 0.0 {
                break;
            }
            let (ft, gt) = fun(&zt);
            if ft.is_finite() && ft <= f + 1e-4 * decrease {
                accepted = Some((zt, ft, gt, step));
                break;
            }
            alpha *= 0.5;
        }
        let Some((zt, ft, gt, s)) = accepted else {
            if fresh {
                break;
            }
            h = identity();
            fresh = true;
            continue;
        };
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                h.iter_mut().flatten().for_each(|x| *x *= scale);
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        z = zt;
        f = ft;
        g = gt;
    }
    z
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    let r = 1.0 / sy;
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (1.0 + yhy * r) * r * s[i] * s[j] - r * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bfgs_finds_interior_minimum() {
        let f = |z: &[f64]| {
            let (a, b) = (z[0] - 0.3, z[1] - 0.7);
            (a * a + 10.0 * b * b, vec![2.0 * a, 20.0 * b])
        };
        let z = bfgs_box(&f, &[0.9, 0.1], 1e-10, 200);
        assert!((z[0] - 0.3).abs() < 1e-8 && (z[1] - 0.7).abs() < 1e-8);
    }

    #[test]
    fn constrained_minimum_on_a_line() {
        // min z0 + z1 s.t. z0 + 2 z1 >= 1 -> (0, 0.5)
        let eval = |z: &[f64]| Eval {
            f: z[0] + z[1],
            df: vec![1.0, 1.0],
            g: vec![z[0] + 2.0 * z[1] - 1.0],
            dg: vec![vec![1.0, 2.0]],
        };
        let s = AlSettings {
            kkt_tol: 1e-9,
            feas_tol: 1e-9,
            max_outer: 50,
            max_inner: 500,
        };
        let out = augmented_lagrangian(&eval, &[0.9, 0.9], &s);
        assert!(out.z[0].abs() < 1e-6 && (out.z[1] - 0.5).abs() < 1e-6, "{:?}", out);
        assert!(out.kkt <= 1e-9, "{:?}", out);
        assert!((out.multipliers[0] - 0.5).abs() < 1e-6);
    }
}
