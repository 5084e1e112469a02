//! Probabilist's Gauss-Hermite rules and Smolyak sparse grids built from them.
//!
//! The univariate sequence uses `n_k = k` nodes at level `k`. A Smolyak rule
//! of sparse-grid level `L_SG` in `M` dimensions is the signed combination of
//! anisotropic product rules over multi-indices `nu >= 1` with
//! `L - M < |nu| <= L`, `L = L_SG - 1 + M`, and integrates every polynomial of
//! total degree `<= 2 L_SG - 1` exactly against the standard normal.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg::symmetric_tridiagonal_eigen;
use crate::scalar::Real;

/// An `n`-point rule for the standard normal density.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateRule<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> UnivariateRule<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes in ascending order.
    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn(T) -> T) -> T {
        self.nodes.iter().zip(&self.weights).fold(T::zero(), |acc, (&x, &w)| acc + w * f(x))
    }
}

/// Golub-Welsch: eigen-decomposition of the Jacobi matrix of the recurrence
/// `He_{k+1}(x) = x He_k(x) - k He_{k-1}(x)`.
///
/// Nodes are symmetrized afterwards so that `nodes[i] == -nodes[n-1-i]`
/// holds bit-exactly and the centre node of an odd rule is exactly zero.
pub fn gauss_hermite_1d<T: Real>(n: usize) -> Result<UnivariateRule<T>> {
    if n == 0 {
        return Err(invalid("Gauss-Hermite rule needs at least one node"));
    }
    let diag = vec![T::zero(); n];
    let off: Vec<T> = (1..n).map(|k| T::of_usize(k).sqrt()).collect();
    let (vals, vecs) = symmetric_tridiagonal_eigen(&diag, &off)?;

    let mut pairs: Vec<(T, T)> = vals.iter().enumerate().map(|(k, &x)| (x, vecs[(0, k)] * vecs[(0, k)])).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite eigenvalues"));

    let half = T::of(0.5);
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = (pairs[j].0 - pairs[i].0) * half;
        let w = (pairs[i].1 + pairs[j].1) * half;
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = T::zero();
        weights[n / 2] = pairs[n / 2].1;
    }
    Ok(UnivariateRule { nodes, weights })
}

/// M-variate sparse Gauss-Hermite rule with merged nodes and signed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule<T> {
    dim: usize,
    level: usize,
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> QuadratureRule<T> {
    /// Build a rule from raw parts; `nodes` is row-major `len x dim`.
    pub fn from_parts(dim: usize, level: usize, nodes: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if dim == 0 || nodes.len() != dim * weights.len() {
            return Err(invalid(format!(
                "rule shape mismatch: {} node entries for {} weights in dimension {dim}",
                nodes.len(),
                weights.len()
            )));
        }
        Ok(Self { dim, level, nodes, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sparse-grid level `L_SG`.
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn exactness_degree(&self) -> usize {
        2 * self.level - 1
    }

    pub fn node(&self, j: usize) -> &[T] {
        &self.nodes[j * self.dim..(j + 1) * self.dim]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[T]> {
        self.nodes.chunks_exact(self.dim)
    }

    pub fn nodes_flat(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// `sum_j w_j f(xi_j)`, summed in node order.
    pub fn integrate(&self, f: impl Fn(&[T]) -> T) -> Result<T> {
        let mut acc = T::zero();
        for (j, (x, &w)) in self.nodes().zip(&self.weights).enumerate() {
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand { index: j });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Same as [`integrate`](Self::integrate) but evaluates `f` concurrently.
    /// The reduction still runs in node order.
    pub fn par_integrate(&self, f: impl Fn(&[T]) -> T + Sync) -> Result<T> {
        let values: Vec<T> = self.nodes.par_chunks_exact(self.dim).map(&f).collect();
        let mut acc = T::zero();
        for (j, (&v, &w)) in values.iter().zip(&self.weights).enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand { index: j });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Same weights, new node matrix (row order preserved).
    pub fn with_nodes(&self, nodes: Vec<T>) -> Result<Self> {
        Self::from_parts(self.dim, self.level, nodes, self.weights.clone())
    }

    /// CSV with header `w,x1,...,xM`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> =
            std::iter::once("w".to_string()).chain((1..=self.dim).map(|m| format!("x{m}"))).collect();
        writeln!(out, "{}", header.join(","))?;
        for (x, &w) in self.nodes().zip(&self.weights) {
            let mut line = format!("{:.16e}", w.to_f64_lossy());
            for &v in x {
                line.push_str(&format!(",{:.16e}", v.to_f64_lossy()));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Parse the CSV written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: std::io::Read>(input: R, level: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let dim = rdr.headers()?.len().saturating_sub(1);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut it = rec.iter().map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())));
            weights.push(T::of(it.next().ok_or_else(|| Error::Parse("empty row".into()))??));
            for v in it {
                nodes.push(T::of(v?));
            }
        }
        Self::from_parts(dim, level, nodes, weights)
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// All `v in N_0^dim` with `|v| == total`, in lexicographic order.
fn compositions(dim: usize, total: usize, out: &mut Vec<Vec<usize>>) {
    fn rec(pos: usize, remaining: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let dim = cur.len();
        if pos == dim - 1 {
            cur[pos] = remaining;
            out.push(cur.clone());
            return;
        }
        for v in (0..=remaining).rev() {
            cur[pos] = v;
            rec(pos + 1, remaining - v, cur, out);
        }
        cur[pos] = 0;
    }
    let mut cur = vec![0; dim];
    rec(0, total, &mut cur, out);
}

/// One term of the Smolyak combination formula.
#[derive(Debug, Clone, PartialEq)]
pub struct SmolyakTerm {
    /// Univariate node counts per dimension (`nu`, every entry `>= 1`).
    pub orders: Vec<usize>,
    /// `(-1)^(L - |nu|) * binom(M - 1, L - |nu|)`.
    pub coefficient: i64,
}

/// Multi-indices and coefficients of the combination formula.
pub fn smolyak_terms(dim: usize, level: usize) -> Result<Vec<SmolyakTerm>> {
    if dim == 0 || level == 0 {
        return Err(invalid("Smolyak rule needs dim >= 1 and level >= 1"));
    }
    // shifted index nu' = nu - 1 has |nu'| in [max(0, L_SG - M), L_SG - 1]
    let lo = level.saturating_sub(dim);
    let mut terms = Vec::new();
    for total in lo..level {
        let gap = level - 1 - total; // L - |nu|
        let coefficient = if gap.is_multiple_of(2) { 1 } else { -1 } * binomial(dim - 1, gap) as i64;
        let mut idx = Vec::new();
        compositions(dim, total, &mut idx);
        for v in idx {
            terms.push(SmolyakTerm { orders: v.into_iter().map(|k| k + 1).collect(), coefficient });
        }
    }
    Ok(terms)
}

/// Smolyak sparse Gauss-Hermite rule of level `level` (`L_SG`) in `dim` variables.
///
/// Coincident nodes of different product rules are merged by exact coordinate
/// equality; merged nodes whose weight cancels to exactly zero are dropped.
/// Node order is first-appearance order over the enumeration of terms.
pub fn smolyak_rule<T: Real>(dim: usize, level: usize) -> Result<QuadratureRule<T>> {
    let terms = smolyak_terms(dim, level)?;
    let univariate: Vec<UnivariateRule<T>> = (1..=level).map(gauss_hermite_1d).collect::<Result<_>>()?;

    let mut index: HashMap<Vec<(u64, i16, i8)>, usize> = HashMap::new();
    let mut nodes: Vec<T> = Vec::new();
    let mut weights: Vec<T> = Vec::new();
    let mut counter = vec![0usize; dim];
    let mut point = vec![T::zero(); dim];

    for term in &terms {
        let c = T::of(term.coefficient as f64);
        let rules: Vec<&UnivariateRule<T>> = term.orders.iter().map(|&k| &univariate[k - 1]).collect();
        counter.iter_mut().for_each(|c| *c = 0);
        loop {
            let mut w = c;
            for m in 0..dim {
                point[m] = rules[m].nodes[counter[m]];
                w *= rules[m].weights[counter[m]];
            }
            let key: Vec<_> = point.iter().map(|v| v.key_bits()).collect();
            match index.get(&key) {
                Some(&j) => weights[j] += w,
                None => {
                    index.insert(key, weights.len());
                    nodes.extend(point.iter().map(|&v| if v == T::zero() { T::zero() } else { v }));
                    weights.push(w);
                }
            }
            // odometer over the product grid
            let mut m = 0;
            while m < dim {
                counter[m] += 1;
                if counter[m] < rules[m].len() {
                    break;
                }
                counter[m] = 0;
                m += 1;
            }
            if m == dim {
                break;
            }
        }
    }

    let keep: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] != T::zero()).collect();
    if keep.len() != weights.len() {
        let nodes = keep.iter().flat_map(|&j| nodes[j * dim..(j + 1) * dim].iter().copied()).collect();
        let weights = keep.iter().map(|&j| weights[j]).collect();
        return QuadratureRule::from_parts(dim, level, nodes, weights);
    }
    QuadratureRule::from_parts(dim, level, nodes, weights)
}

/// `E[prod_m X_m^{e_m}]` for independent standard normals.
pub fn gaussian_monomial_moment<T: Real>(exponents: &[usize]) -> T {
    let mut acc = T::one();
    for &e in exponents {
        if e % 2 == 1 {
            return T::zero();
        }
        // (e-1)!!
        let mut k = e as isize - 1;
        while k > 1 {
            acc *= T::of(k as f64);
            k -= 2;
        }
    }
    acc
}

/// Exponent vectors of all monomials in `dim` variables with total degree `<= degree`,
/// ordered by degree, then lexicographically (descending first exponent).
pub fn monomial_exponents(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        compositions(dim, total, &mut out);
    }
    out
}

/// Evaluate `prod_m x_m^{e_m}`.
pub fn eval_monomial<T: Real>(exponents: &[usize], x: &[T]) -> T {
    exponents.iter().zip(x).fold(T::one(), |acc, (&e, &v)| if e == 0 { acc } else { acc * v.powi(e as i32) })
}
