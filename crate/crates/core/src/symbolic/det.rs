//! Fraction-free determinants of symbolic matrices.

use super::poly::Poly;
use super::spoly::SPoly;
use super::SymbolicError;

/// Bareiss elimination. Every intermediate division is exact, so the result
/// is produced without ever forming a rational function.
pub fn bareiss(matrix: &[Vec<Poly>]) -> Result<Poly, SymbolicError> {
    let n = matrix.len();
    if n == 0 {
        return Ok(Poly::one());
    }
    if matrix.iter().any(|row| row.len() != n) {
        return Err(SymbolicError::NotSquare);
    }
    let mut m = matrix.to_vec();
    let mut negate = false;
    let mut prev = Poly::one();
    for k in 0..n - 1 {
        if m[k][k].is_zero() {
            let Some(r) = (k + 1..n).find(|&r| !m[r][k].is_zero()) else {
                return Ok(Poly::zero());
            };
            m.swap(k, r);
            negate = !negate;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let cross = &(&m[k][k] * &m[i][j]) - &(&m[i][k] * &m[k][j]);
                m[i][j] = cross
                    .div_exact(&prev)
                    .ok_or(SymbolicError::InexactDivision)?;
            }
            m[i][k] = Poly::zero();
        }
        prev = m[k][k].clone();
    }
    let det = m[n - 1][n - 1].clone();
    Ok(if negate { -det } else { det })
}

/// Determinant of a matrix over `s`-polynomials via Bareiss on the flattened
/// entries.
pub fn det_bareiss(matrix: &[Vec<SPoly>]) -> Result<SPoly, SymbolicError> {
    let flat: Vec<Vec<Poly>> = matrix
        .iter()
        .map(|row| row.iter().map(SPoly::to_flat).collect())
        .collect();
    SPoly::from_flat(&bareiss(&flat)?)
}

/// Cofactor expansion along the first row. Exponential, but independent of
/// the elimination path, which makes it a useful cross-check.
pub fn det_laplace(matrix: &[Vec<SPoly>]) -> Result<SPoly, SymbolicError> {
    let n = matrix.len();
    if matrix.iter().any(|row| row.len() != n) {
        return Err(SymbolicError::NotSquare);
    }
    let cols: Vec<usize> = (0..n).collect();
    Ok(laplace_rec(matrix, 0, &cols))
}

fn laplace_rec(m: &[Vec<SPoly>], row: usize, cols: &[usize]) -> SPoly {
    if cols.is_empty() {
        return SPoly::constant(Poly::one());
    }
    let mut acc = SPoly::zero();
    for (pos, &c) in cols.iter().enumerate() {
        let entry = &m[row][c];
        if entry.is_zero() {
            continue;
        }
        let rest: Vec<usize> = cols.iter().copied().filter(|&x| x != c).collect();
        let minor = laplace_rec(m, row + 1, &rest);
        let term = entry * &minor;
        acc = if pos % 2 == 0 { &acc + &term } else { &acc - &term };
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Poly {
        Poly::parse(s).unwrap()
    }

    #[test]
    fn two_by_two() {
        let m = vec![vec![p("a"), p("b")], vec![p("c"), p("d")]];
        assert_eq!(bareiss(&m).unwrap(), p("a*d - b*c"));
    }

    #[test]
    fn needs_pivot() {
        let m = vec![
            vec![p("0"), p("x"), p("1")],
            vec![p("y"), p("0"), p("0")],
            vec![p("0"), p("1"), p("z")],
        ];
        // Expand along the second row: -y * (x*z - 1)
        assert_eq!(bareiss(&m).unwrap(), p("y - x*y*z"));
    }

    #[test]
    fn singular_and_empty() {
        let m = vec![vec![p("x"), p("y")], vec![p("2*x"), p("2*y")]];
        assert!(bareiss(&m).unwrap().is_zero());
        assert_eq!(bareiss(&[]).unwrap(), Poly::one());
    }

    #[test]
    fn laurent_entries_agree() {
        let e = |c: &[&str]| SPoly::from_coeffs(c.iter().map(|x| p(x)).collect());
        let m = vec![
            vec![e(&["G1/A1", "Cp + Cm"]), e(&["0", "-Cm"]), e(&["1/R"])],
            vec![e(&["G2", "-Cm"]), e(&["G2/A2 + 1/RL", "CL + Cm"]), e(&["0"])],
            vec![e(&["-1/R"]), e(&["x"]), e(&["1/R + G3", "C3"])],
        ];
        assert_eq!(det_bareiss(&m).unwrap(), det_laplace(&m).unwrap());
    }
}
