//! Exact linear sum assignment (shortest augmenting path Hungarian method).

use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `cols` with row `i` assigned to column `cols[i]`. Runs in `O(n³)`.
pub fn linear_sum_assignment<T: Real>(cost: &Matrix<T>) -> Result<Vec<usize>> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(invalid(format!("cost matrix must be square, got {}x{}", n, cost.cols())));
    }
    if cost.as_slice().iter().any(|c| !c.is_finite()) {
        return Err(invalid("cost matrix must be finite"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based potentials; column 0 is a virtual root.
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut cols = vec![0usize; n];
    for j in 1..=n {
        cols[p[j] - 1] = j - 1;
    }
    Ok(cols)
}

/// `cost[i][j] = |a_i - b_j|²`
pub fn squared_distance_cost<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut c = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            c[(i, j)] = a.row(i).iter().zip(b.row(j)).map(|(&x, &y)| (x - y) * (x - y)).sum();
        }
    }
    c
}

pub fn assignment_cost<T: Real>(cost: &Matrix<T>, cols: &[usize]) -> T {
    cols.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_known_case() {
        let c = Matrix::from_rows(&[vec![4.0f64, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]]).unwrap();
        let a = linear_sum_assignment(&c).unwrap();
        assert_eq!(assignment_cost(&c, &a), 5.0);
        assert_eq!(a, vec![1, 0, 2]);
    }

    #[test]
    fn rejects_rectangular_and_nan() {
        assert!(linear_sum_assignment(&Matrix::<f64>::zeros(2, 3)).is_err());
        let c = Matrix::from_rows(&[vec![f64::NAN]]).unwrap();
        assert!(linear_sum_assignment(&c).is_err());
        assert!(linear_sum_assignment(&Matrix::<f64>::zeros(0, 0)).unwrap().is_empty());
    }

    #[test]
    fn f32_costs() {
        let c = Matrix::from_rows(&[vec![1.0f32, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(linear_sum_assignment(&c).unwrap(), vec![1, 0]);
    }
}
