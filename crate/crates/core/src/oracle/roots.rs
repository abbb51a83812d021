use num_complex::Complex64;
use thiserror::Error;

const MAX_ITER: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError {
    #[error("polynomial has no non-zero coefficient of degree >= 1")]
    Degenerate,
    #[error("root iteration did not converge after {iterations} steps")]
    NoConvergence {
        iterations: usize,
        partial: Vec<Complex64>,
    },
}

/// All roots of `sum c[k] s^k` (lowest power first) by Aberth–Ehrlich
/// simultaneous iteration, started on Newton-polygon circles and polished by
/// Newton steps. Roots of a real polynomial come back with exact conjugate
/// symmetry. Sorted by ascending magnitude.
pub fn exact_roots(coeffs: &[f64]) -> Result<Vec<Complex64>, RootError> {
    let c: Vec<Complex64> = coeffs.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut roots = complex_roots(&c)?;
    symmetrize(&mut roots);
    sort_by_magnitude(&mut roots);
    Ok(roots)
}

/// Roots of a polynomial with complex coefficients, lowest power first.
pub fn complex_roots(coeffs: &[Complex64]) -> Result<Vec<Complex64>, RootError> {
    let hi = coeffs
        .iter()
        .rposition(|c| c.norm() != 0.0)
        .ok_or(RootError::Degenerate)?;
    let lo = coeffs.iter().position(|c| c.norm() != 0.0).expect("non-zero");
    if hi == 0 {
        return Err(RootError::Degenerate);
    }
    let mut out = vec![Complex64::new(0.0, 0.0); lo];
    let c = &coeffs[lo..=hi];
    let n = c.len() - 1;
    if n == 0 {
        return Ok(out);
    }
    // Scale s = sigma * t so the root magnitudes straddle one.
    let sigma = (c[0].norm() / c[n].norm()).powf(1.0 / n as f64);
    let mut scaled: Vec<Complex64> = c
        .iter()
        .enumerate()
        .map(|(k, x)| x * sigma.powi(k as i32))
        .collect();
    let top = scaled.iter().map(|x| x.norm()).fold(0.0, f64::max);
    scaled.iter_mut().for_each(|x| *x /= top);

    let mut z = initial_guesses(&scaled);
    let mut done = vec![false; n];
    let mut iterations = 0;
    while iterations < MAX_ITER && done.iter().any(|d| !d) {
        iterations += 1;
        for i in 0..n {
            if done[i] {
                continue;
            }
            let (p, dp) = eval_with_derivative(&scaled, z[i]);
            if p.norm() == 0.0 {
                done[i] = true;
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| (z[i] - z[j]).inv())
                .sum();
            let w = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            if !w.is_finite() {
                continue;
            }
            z[i] -= w;
            if w.norm() <= 1e-15 * z[i].norm().max(1e-300) {
                done[i] = true;
            }
        }
    }
    for r in z.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = eval_with_derivative(&scaled, *r);
            if dp.norm() == 0.0 {
                break;
            }
            let step = p / dp;
            if !step.is_finite() || step.norm() > 1e-6 * r.norm() {
                break;
            }
            *r -= step;
        }
    }
    let roots: Vec<Complex64> = z.iter().map(|r| r * sigma).collect();
    let converged = roots.iter().all(|r| residual(c, *r) <= 1e-10);
    out.extend(roots);
    if !converged {
        return Err(RootError::NoConvergence {
            iterations,
            partial: out,
        });
    }
    Ok(out)
}

/// `|p(r)| / sum |c_k| |r|^k`: backward error of a computed root.
pub fn residual(c: &[Complex64], r: Complex64) -> f64 {
    let (mut p, mut scale) = (Complex64::new(0.0, 0.0), 0.0);
    for x in c.iter().rev() {
        p = p * r + x;
        scale = scale * r.norm() + x.norm();
    }
    if scale == 0.0 {
        0.0
    } else {
        p.norm() / scale
    }
}

fn eval_with_derivative(c: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for x in c.iter().rev() {
        dp = dp * z + p;
        p = p * z + x;
    }
    (p, dp)
}

/// Points on circles whose radii come from the upper convex hull of
/// `(k, ln|c_k|)`, one circle per hull edge.
fn initial_guesses(c: &[Complex64]) -> Vec<Complex64> {
    let n = c.len() - 1;
    let pts: Vec<(usize, f64)> = c
        .iter()
        .enumerate()
        .filter(|(_, x)| x.norm() > 0.0)
        .map(|(k, x)| (k, x.norm().ln()))
        .collect();
    let mut hull: Vec<(usize, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 as f64 - a.0 as f64) * (p.1 - a.1) - (b.1 - a.1) * (p.0 as f64 - a.0 as f64);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let mut z = Vec::with_capacity(n);
    for w in hull.windows(2) {
        let (i, li) = w[0];
        let (j, lj) = w[1];
        let m = j - i;
        let r = ((li - lj) / m as f64).exp();
        for k in 0..m {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / m as f64 + 0.4 + 0.7 * z.len() as f64 / n as f64;
            z.push(Complex64::from_polar(r, theta));
        }
    }
    z
}

/// Make nearly real roots real and pair the rest as exact conjugates.
fn symmetrize(roots: &mut [Complex64]) {
    let n = roots.len();
    let mut paired = vec![false; n];
    for i in 0..n {
        if paired[i] {
            continue;
        }
        let r = roots[i];
        if r.im.abs() <= 1e-9 * r.norm() {
            roots[i] = Complex64::new(r.re, 0.0);
            paired[i] = true;
            continue;
        }
        let partner = (0..n)
            .filter(|&j| j != i && !paired[j])
            .min_by(|&a, &b| (roots[a] - r.conj()).norm().total_cmp(&(roots[b] - r.conj()).norm()));
        if let Some(j) = partner {
            let re = 0.5 * (r.re + roots[j].re);
            let im = 0.5 * (r.im.abs() + roots[j].im.abs());
            roots[i] = Complex64::new(re, im);
            roots[j] = Complex64::new(re, -im);
            paired[j] = true;
        }
        paired[i] = true;
    }
}

pub(crate) fn sort_by_magnitude(roots: &mut [Complex64]) {
    roots.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.im.total_cmp(&b.im)));
}

/// Coefficients of `lead * prod (s - r)`, lowest power first.
pub fn poly_from_roots(roots: &[Complex64], lead: f64) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(lead, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (k, x) in c.iter().enumerate() {
            next[k + 1] += x;
            next[k] -= x * r;
        }
        c = next;
    }
    c
}
