//! Thin helpers over `nalgebra` for the small dense problems used here.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Solves `a x = b` by LU, rejecting systems whose 2-norm condition number
/// exceeds `max_cond`.
pub fn solve_checked(a: &Matrix, b: &Vector, max_cond: f64) -> Result<Vector> {
    let cond = condition_number(a);
    if !cond.is_finite() || cond > max_cond {
        return Err(Error::SingularSystem { cond });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::SingularSystem { cond: f64::INFINITY })
}

pub fn condition_number(a: &Matrix) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(a: &Matrix) -> f64 {
    a.clone().symmetric_eigen().eigenvalues.min()
}

/// Moduli of all eigenvalues, sorted in decreasing order.
pub fn eigenvalue_moduli(a: &Matrix) -> Vec<f64> {
    let mut m: Vec<f64> = a.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    m.sort_by(|x, y| y.total_cmp(x));
    m
}

/// Primitivity of a nonnegative square matrix (irreducible and aperiodic),
/// tested on its support pattern: `A` is primitive iff `A^m > 0` entrywise for
/// `m = (n-1)^2 + 1` (Wielandt). Powers are formed by repeated squaring of the
/// boolean pattern, which may overshoot `m`; positivity is preserved under
/// further powers of a primitive matrix and never reached otherwise.
pub fn is_primitive(a: &Matrix) -> bool {
    let n = a.nrows();
    if n == 0 {
        return false;
    }
    let mut pattern: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)] > 0.0).collect()).collect();
    let target = (n - 1) * (n - 1) + 1;
    let mut power = 1usize;
    while power < target {
        pattern = bool_square(&pattern);
        power *= 2;
    }
    pattern.iter().all(|row| row.iter().all(|&x| x))
}

/// Irreducibility only: every state reaches every other state.
pub fn is_irreducible(a: &Matrix) -> bool {
    let n = a.nrows();
    (0..n).all(|start| {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && a[(i, j)] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|x| x)
    })
}

fn bool_square(p: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = p.len();
    let mut out = vec![vec![false; n]; n];
    for (row, out_row) in p.iter().zip(out.iter_mut()) {
        for (k, _) in row.iter().enumerate().filter(|(_, &reach)| reach) {
            for (o, &x) in out_row.iter_mut().zip(&p[k]) {
                *o |= x;
            }
        }
    }
    out
}

/// Euclidean projection onto the ball `‖w‖ ≤ radius`.
pub fn project_ball(w: Vector, radius: f64) -> Vector {
    let norm = w.norm();
    if norm > radius {
        w * (radius / norm)
    } else {
        w
    }
}

/// L1 distance between two distributions (the total-variation convention
/// without the factor 1/2, so values lie in `[0, 2]`).
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitivity() {
        let periodic = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(is_irreducible(&periodic));
        assert!(!is_primitive(&periodic));
        let lazy = Matrix::from_row_slice(2, 2, &[0.5, 0.5, 1.0, 0.0]);
        assert!(is_primitive(&lazy));
        let reducible = Matrix::identity(2, 2);
        assert!(!is_irreducible(&reducible));
        assert!(!is_primitive(&reducible));
    }

    #[test]
    fn projection() {
        let w = project_ball(Vector::from_vec(vec![3.0, 4.0]), 1.0);
        assert!((w.norm() - 1.0).abs() < 1e-15);
        let inside = Vector::from_vec(vec![0.3, 0.4]);
        assert_eq!(project_ball(inside.clone(), 1.0), inside);
    }

    #[test]
    fn second_eigenvalue_two_state() {
        let p = Matrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let m = eigenvalue_moduli(&p);
        assert!((m[0] - 1.0).abs() < 1e-12);
        assert!((m[1] - 0.7).abs() < 1e-12);
    }
}
