//! Maximum mean discrepancy with a sum of Gaussian kernels.

use crate::linalg::Matrix;
use crate::scalar::Real;

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// `k(x, y) = Σ_b exp(-|x - y|² / (2 b²))`
pub fn kernel<T: Real>(a: &[T], b: &[T], bandwidths: &[T]) -> T {
    let d2 = sq_dist(a, b);
    bandwidths.iter().map(|&h| (-d2 / (T::of(2.0) * h * h)).exp()).sum()
}

fn cross_sum<T: Real>(a: &Matrix<T>, b: &Matrix<T>, bw: &[T]) -> T {
    let mut s = T::zero();
    for x in a.iter_rows() {
        for y in b.iter_rows() {
            s += kernel(x, y, bw);
        }
    }
    s
}

fn within_sum<T: Real>(a: &Matrix<T>, bw: &[T]) -> T {
    let mut s = T::zero();
    for i in 0..a.rows() {
        for j in i + 1..a.rows() {
            s += kernel(a.row(i), a.row(j), bw);
        }
    }
    s + s
}

/// Unbiased estimate of MMD²; within-sample sums exclude the diagonal.
pub fn mmd2_unbiased<T: Real>(a: &Matrix<T>, b: &Matrix<T>, bandwidths: &[T]) -> T {
    let (n, m) = (T::of_usize(a.rows()), T::of_usize(b.rows()));
    let aa = if a.rows() > 1 { within_sum(a, bandwidths) / (n * (n - T::one())) } else { T::zero() };
    let bb = if b.rows() > 1 { within_sum(b, bandwidths) / (m * (m - T::one())) } else { T::zero() };
    aa + bb - T::of(2.0) * cross_sum(a, b, bandwidths) / (n * m)
}

/// Biased (V-statistic) estimate of MMD²; zero when both batches coincide.
pub fn mmd2_biased<T: Real>(a: &Matrix<T>, b: &Matrix<T>, bandwidths: &[T]) -> T {
    let (n, m) = (T::of_usize(a.rows()), T::of_usize(b.rows()));
    let k0 = T::of_usize(bandwidths.len());
    let aa = (within_sum(a, bandwidths) + n * k0) / (n * n);
    let bb = (within_sum(b, bandwidths) + m * k0) / (m * m);
    aa + bb - T::of(2.0) * cross_sum(a, b, bandwidths) / (n * m)
}

/// Unbiased MMD² and its gradient with respect to the rows of `a`.
pub fn mmd2_with_grad<T: Real>(a: &Matrix<T>, b: &Matrix<T>, bandwidths: &[T]) -> (T, Matrix<T>) {
    let (n, m) = (a.rows(), b.rows());
    let (nf, mf) = (T::of_usize(n), T::of_usize(m));
    let dim = a.cols();
    let two = T::of(2.0);
    let inv2h2: Vec<T> = bandwidths.iter().map(|&h| T::one() / (two * h * h)).collect();
    let mut grad = Matrix::zeros(n, dim);
    let mut diff = vec![T::zero(); dim];

    // returns k and dk/dd2
    let kd = |d2: T| -> (T, T) {
        let mut k = T::zero();
        let mut dk = T::zero();
        for &c in &inv2h2 {
            let e = (-d2 * c).exp();
            k += e;
            dk -= c * e;
        }
        (k, dk)
    };

    let mut aa = T::zero();
    if n > 1 {
        let scale = two / (nf * (nf - T::one()));
        for i in 0..n {
            for j in i + 1..n {
                let (ri, rj) = (a.row(i), a.row(j));
                let mut d2 = T::zero();
                for k in 0..dim {
                    diff[k] = ri[k] - rj[k];
                    d2 += diff[k] * diff[k];
                }
                let (kv, dk) = kd(d2);
                aa += kv;
                // d k / d a_i = dk * 2 (a_i - a_j); pair counted twice in the sum
                let g = scale * dk * two;
                for k in 0..dim {
                    grad[(i, k)] += g * diff[k];
                    grad[(j, k)] -= g * diff[k];
                }
            }
        }
        aa = aa * scale;
    }
    let mut bb = T::zero();
    if m > 1 {
        bb = within_sum(b, bandwidths) / (mf * (mf - T::one()));
    }
    let mut ab = T::zero();
    let cscale = two / (nf * mf);
    for i in 0..n {
        let ri = a.row(i);
        for rj in b.iter_rows() {
            let mut d2 = T::zero();
            for k in 0..dim {
                diff[k] = ri[k] - rj[k];
                d2 += diff[k] * diff[k];
            }
            let (kv, dk) = kd(d2);
            ab += kv;
            let g = cscale * dk * two;
            for k in 0..dim {
                grad[(i, k)] -= g * diff[k];
            }
        }
    }
    (aa + bb - cscale * ab, grad)
}

/// Median pairwise Euclidean distance within a batch.
pub fn median_pairwise_distance<T: Real>(a: &Matrix<T>) -> T {
    let mut d: Vec<T> = Vec::new();
    for i in 0..a.rows() {
        for j in i + 1..a.rows() {
            d.push(sq_dist(a.row(i), a.row(j)).sqrt());
        }
    }
    if d.is_empty() {
        return T::one();
    }
    d.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        (d[mid - 1] + d[mid]) / T::of(2.0)
    }
}

/// Bandwidths `{0.5, 1, 2}` times the median pairwise distance.
pub fn default_bandwidths<T: Real>(batch: &Matrix<T>) -> Vec<T> {
    let med = median_pairwise_distance(batch);
    let med = if med > T::zero() && med.is_finite() { med } else { T::one() };
    [0.5, 1.0, 2.0].iter().map(|&f| T::of(f) * med).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    fn randm(rows: usize, cols: usize, seed: u64, shift: f64) -> Matrix<f64> {
        let mut rng = rng_from_seed(seed);
        let v = (0..rows * cols).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + shift
        }).collect::<Vec<f64>>();
        Matrix::from_vec(rows, cols, v).unwrap()
    }

    fn brute_unbiased(a: &Matrix<f64>, b: &Matrix<f64>, bw: &[f64]) -> f64 {
        let (n, m) = (a.rows() as f64, b.rows() as f64);
        let mut aa = 0.0;
        for i in 0..a.rows() {
            for j in 0..a.rows() {
                if i != j {
                    aa += kernel(a.row(i), a.row(j), bw);
                }
            }
        }
        let mut bb = 0.0;
        for i in 0..b.rows() {
            for j in 0..b.rows() {
                if i != j {
                    bb += kernel(b.row(i), b.row(j), bw);
                }
            }
        }
        let mut ab = 0.0;
        for x in a.iter_rows() {
            for y in b.iter_rows() {
                ab += kernel(x, y, bw);
            }
        }
        aa / (n * (n - 1.0)) + bb / (m * (m - 1.0)) - 2.0 * ab / (n * m)
    }

    #[test]
    fn identical_batches() {
        let a = randm(20, 3, 1, 0.0);
        let bw = [0.5, 1.0, 2.0];
        assert!(mmd2_biased(&a, &a, &bw).abs() < 1e-12);
        assert!(mmd2_unbiased(&a, &a, &bw) <= 1e-12);
    }

    #[test]
    fn matches_double_sum_and_is_symmetric() {
        let a = randm(12, 2, 2, 0.0);
        let b = randm(9, 2, 3, 0.5);
        let bw = [0.7, 1.3];
        let u = mmd2_unbiased(&a, &b, &bw);
        assert!((u - brute_unbiased(&a, &b, &bw)).abs() < 1e-12);
        assert!((u - mmd2_unbiased(&b, &a, &bw)).abs() < 1e-12);
        let (g, _) = mmd2_with_grad(&a, &b, &bw);
        assert!((g - u).abs() < 1e-12);
    }

    #[test]
    fn far_clouds_saturate() {
        let a = randm(10, 2, 4, 0.0);
        let b = randm(10, 2, 5, 1e3);
        let bw = [0.5, 1.0, 2.0];
        let u = mmd2_unbiased(&a, &b, &bw);
        let within = brute_unbiased(&a, &b, &bw);
        assert!((u - within).abs() < 1e-12);
        // cross term vanishes; each within-term mean kernel is at most 3
        assert!(u > 0.0 && u <= 6.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = randm(6, 3, 6, 0.0);
        let b = randm(7, 3, 7, 0.3);
        let bw = [0.5, 1.5];
        let (_, g) = mmd2_with_grad(&a, &b, &bw);
        let h = 1e-6;
        for i in 0..6 {
            for k in 0..3 {
                let mut p = a.clone();
                p[(i, k)] += h;
                let up = mmd2_unbiased(&p, &b, &bw);
                p[(i, k)] -= 2.0 * h;
                let dn = mmd2_unbiased(&p, &b, &bw);
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - g[(i, k)]).abs() < 1e-7, "{fd} vs {}", g[(i, k)]);
            }
        }
    }

    #[test]
    fn median_heuristic() {
        let a = Matrix::from_rows(&[vec![0.0f64], vec![1.0], vec![3.0]]).unwrap();
        // distances 1, 3, 2
        assert_eq!(median_pairwise_distance(&a), 2.0);
        assert_eq!(default_bandwidths(&a), vec![1.0, 2.0, 4.0]);
    }
}
