//! Fully connected network with softplus hidden activations and manual
//! backpropagation over row-major batches.

use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;
use crate::scalar::Real;

#[inline]
pub fn softplus<T: Real>(z: T) -> T {
    // max(z, 0) + log1p(exp(-|z|)) does not overflow
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Multilayer perceptron stored as one flat parameter vector.
///
/// Layer `l` maps `widths[l]` to `widths[l + 1]`; its weight matrix
/// (`out x in`, row-major) is followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    widths: Vec<usize>,
    params: Vec<T>,
}

/// Intermediate values kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix<T>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Matrix<T>>,
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Real> Mlp<T> {
    /// Glorot-uniform weights and zero biases. With `zero_last` the output
    /// layer starts at zero, so the network initially outputs zero.
    pub fn new(widths: &[usize], rng: &mut Rng, zero_last: bool) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(invalid(format!("bad layer widths {widths:?}")));
        }
        let mut params = Vec::with_capacity(param_count(widths));
        let last = widths.len() - 2;
        for (l, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let v = if zero_last && l == last { 0.0 } else { rng.random_range(-lim..lim) };
                params.push(T::of(v));
            }
            params.extend(std::iter::repeat_n(T::zero(), fan_out));
        }
        Ok(Self { widths: widths.to_vec(), params })
    }

    pub fn from_params(widths: Vec<usize>, params: Vec<T>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(invalid(format!("bad layer widths {widths:?}")));
        }
        if params.len() != param_count(&widths) {
            return Err(invalid(format!("widths {widths:?} need {} parameters, got {}", param_count(&widths), params.len())));
        }
        Ok(Self { widths, params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Number of linear layers.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self, layer: usize) -> (usize, usize) {
        let w_off = param_count(&self.widths[..=layer]);
        (w_off, w_off + self.widths[layer] * self.widths[layer + 1])
    }

    fn linear(&self, layer: usize, x: &Matrix<T>) -> Matrix<T> {
        let (n_in, n_out) = (self.widths[layer], self.widths[layer + 1]);
        let (w_off, b_off) = self.offsets(layer);
        let w = &self.params[w_off..b_off];
        let b = &self.params[b_off..b_off + n_out];
        let mut out = Matrix::zeros(x.rows(), n_out);
        for r in 0..x.rows() {
            let xi = x.row(r);
            let yo = out.row_mut(r);
            for o in 0..n_out {
                let wr = &w[o * n_in..(o + 1) * n_in];
                yo[o] = b[o] + wr.iter().zip(xi).fold(T::zero(), |acc, (&a, &c)| acc + a * c);
            }
        }
        out
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec()).expect("row vector");
        self.forward_batch(&m).into_vec()
    }

    pub fn forward_batch(&self, x: &Matrix<T>) -> Matrix<T> {
        debug_assert_eq!(x.cols(), self.input_dim());
        let mut a = x.clone();
        for l in 0..self.depth() {
            let z = self.linear(l, &a);
            a = if l + 1 < self.depth() { z.map(softplus) } else { z };
        }
        a
    }

    pub fn forward_cached(&self, x: &Matrix<T>) -> (Matrix<T>, MlpCache<T>) {
        let mut inputs = Vec::with_capacity(self.depth());
        let mut pre = Vec::with_capacity(self.depth() - 1);
        let mut a = x.clone();
        for l in 0..self.depth() {
            let z = self.linear(l, &a);
            inputs.push(a);
            if l + 1 < self.depth() {
                a = z.map(softplus);
                pre.push(z);
            } else {
                a = z;
            }
        }
        (a, MlpCache { inputs, pre })
    }

    /// Accumulate `d loss / d params` into `grad` and return `d loss / d input`.
    pub fn backward(&self, cache: &MlpCache<T>, grad_out: &Matrix<T>, grad: &mut [T]) -> Matrix<T> {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = grad_out.clone();
        for l in (0..self.depth()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let (w_off, b_off) = self.offsets(l);
            let input = &cache.inputs[l];
            let mut d_in = Matrix::zeros(delta.rows(), n_in);
            {
                let (gw, gb) = grad[w_off..b_off + n_out].split_at_mut(n_in * n_out);
                let w = &self.params[w_off..b_off];
                for r in 0..delta.rows() {
                    let dr = delta.row(r);
                    let xr = input.row(r);
                    let di = d_in.row_mut(r);
                    for o in 0..n_out {
                        let g = dr[o];
                        if g == T::zero() {
                            continue;
                        }
                        gb[o] += g;
                        let gwo = &mut gw[o * n_in..(o + 1) * n_in];
                        let wo = &w[o * n_in..(o + 1) * n_in];
                        for i in 0..n_in {
                            gwo[i] += g * xr[i];
                            di[i] += g * wo[i];
                        }
                    }
                }
            }
            if l > 0 {
                let z = &cache.pre[l - 1];
                for (d, &zv) in d_in.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *d *= sigmoid(zv);
                }
            }
            delta = d_in;
        }
        delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_last_layer_outputs_zero() {
        let mut rng = rng_from_seed(1);
        let net = Mlp::<f64>::new(&[3, 8, 8, 2], &mut rng, true).unwrap();
        assert_eq!(net.forward(&[0.3, -1.0, 2.0]), vec![0.0, 0.0]);
        assert_eq!(net.depth(), 3);
        assert_eq!(net.n_params(), 3 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(2);
        let mut net = Mlp::<f64>::new(&[3, 7, 5, 2], &mut rng, false).unwrap();
        for p in net.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let x = Matrix::from_vec(4, 3, (0..12).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
        let c = [0.7, -1.1];
        let loss = |n: &Mlp<f64>| -> f64 {
            let y = n.forward_batch(&x);
            y.iter_rows().map(|r| r[0] * c[0] + r[1] * r[1] * c[1]).sum()
        };
        let (y, cache) = net.forward_cached(&x);
        let mut gout = Matrix::zeros(4, 2);
        for r in 0..4 {
            gout[(r, 0)] = c[0];
            gout[(r, 1)] = 2.0 * y[(r, 1)] * c[1];
        }
        let mut grad = vec![0.0; net.n_params()];
        let gin = net.backward(&cache, &gout, &mut grad);
        let h = 1e-6;
        for k in (0..net.n_params()).step_by(3) {
            let mut p = net.clone();
            p.params_mut()[k] += h;
            let up = loss(&p);
            p.params_mut()[k] -= 2.0 * h;
            let dn = loss(&p);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-4 * fd.abs().max(1e-3), "param {k}: {fd} vs {}", grad[k]);
        }
        // input gradient
        for r in 0..4 {
            for i in 0..3 {
                let mut xp = x.clone();
                xp[(r, i)] += h;
                let up: f64 = net.forward_batch(&xp).iter_rows().map(|q| q[0] * c[0] + q[1] * q[1] * c[1]).sum();
                xp[(r, i)] -= 2.0 * h;
                let dn: f64 = net.forward_batch(&xp).iter_rows().map(|q| q[0] * c[0] + q[1] * q[1] * c[1]).sum();
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - gin[(r, i)]).abs() <= 1e-4 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn from_params_checks_length() {
        assert!(Mlp::<f64>::from_params(vec![2, 3], vec![0.0; 8]).is_err());
        assert!(Mlp::<f64>::from_params(vec![2, 3], vec![0.0; 9]).is_ok());
    }
}
