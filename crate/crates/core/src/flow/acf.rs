//! Affine coupling flow trained with a two-sided MMD loss.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::adam::Adam;
use super::config::{TrainConfig, TrainingLog};
use super::mlp::{Mlp, MlpCache};
use super::mmd::{default_bandwidths, mmd2_with_grad};
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, rng_from_seed, stream, Rng};
use crate::scalar::Real;

fn split_cols<T: Real>(x: &Matrix<T>, k: usize) -> (Matrix<T>, Matrix<T>) {
    let (n, m) = (x.rows(), x.cols());
    let mut a = Vec::with_capacity(n * k);
    let mut b = Vec::with_capacity(n * (m - k));
    for r in x.iter_rows() {
        a.extend_from_slice(&r[..k]);
        b.extend_from_slice(&r[k..]);
    }
    (Matrix::from_vec(n, k, a).unwrap(), Matrix::from_vec(n, m - k, b).unwrap())
}

fn join_cols<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let n = a.rows();
    let mut v = Vec::with_capacity(n * (a.cols() + b.cols()));
    for r in 0..n {
        v.extend_from_slice(a.row(r));
        v.extend_from_slice(b.row(r));
    }
    Matrix::from_vec(n, a.cols() + b.cols(), v).unwrap()
}

fn reverse_cols<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        out.row_mut(r).reverse();
    }
    out
}

/// Bound on the per-coordinate log-scale of one block.
pub const SCALE_CLAMP: f64 = 2.0;

/// Soft clamp `c tanh(v / c)` and its derivative.
fn clamp_scale<T: Real>(v: T) -> (T, T) {
    let c = T::of(SCALE_CLAMP);
    let th = (v / c).tanh();
    (c * th, T::one() - th * th)
}

/// `y1 = x1`, `y2 = x2 ⊙ exp(s(x1)) + t(x1)` with `x1` the first `split` coordinates.
///
/// The scale net output is soft-clamped to `(-SCALE_CLAMP, SCALE_CLAMP)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock<T> {
    split: usize,
    s: Mlp<T>,
    t: Mlp<T>,
}

struct BlockCache<T> {
    /// Untransformed half: `x2` for the forward map, the output `x2` for the inverse.
    x2: Matrix<T>,
    /// `exp(s)` forward, `exp(-s)` inverse.
    es: Matrix<T>,
    /// Derivative of the clamp at the raw scale output.
    dclamp: Matrix<T>,
    s_cache: MlpCache<T>,
    t_cache: MlpCache<T>,
}

impl<T: Real> CouplingBlock<T> {
    pub fn new(dim: usize, split: usize, widths_for: impl Fn(usize, usize) -> Vec<usize>, rng: &mut Rng) -> Result<Self> {
        let s = Mlp::new(&widths_for(split, dim - split), rng, true)?;
        let t = Mlp::new(&widths_for(split, dim - split), rng, true)?;
        Ok(Self { split, s, t })
    }

    pub fn from_nets(split: usize, s: Mlp<T>, t: Mlp<T>) -> Result<Self> {
        if s.input_dim() != split || t.input_dim() != split || s.output_dim() != t.output_dim() {
            return Err(invalid("coupling nets do not match the split"));
        }
        Ok(Self { split, s, t })
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn scale_net(&self) -> &Mlp<T> {
        &self.s
    }

    pub fn translate_net(&self) -> &Mlp<T> {
        &self.t
    }

    /// Forward map of a batch and the per-row log-determinant.
    pub fn forward_batch(&self, x: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
        let (x1, x2) = split_cols(x, self.split);
        let s = self.s.forward_batch(&x1).map(|v| clamp_scale(v).0);
        let t = self.t.forward_batch(&x1);
        let mut y2 = x2;
        let mut logdet = vec![T::zero(); x.rows()];
        for r in 0..y2.rows() {
            for k in 0..y2.cols() {
                y2[(r, k)] = y2[(r, k)] * s[(r, k)].exp() + t[(r, k)];
                logdet[r] += s[(r, k)];
            }
        }
        (join_cols(&x1, &y2), logdet)
    }

    pub fn inverse_batch(&self, y: &Matrix<T>) -> Matrix<T> {
        let (y1, y2) = split_cols(y, self.split);
        let s = self.s.forward_batch(&y1).map(|v| clamp_scale(v).0);
        let t = self.t.forward_batch(&y1);
        let mut x2 = y2;
        for r in 0..x2.rows() {
            for k in 0..x2.cols() {
                x2[(r, k)] = (x2[(r, k)] - t[(r, k)]) * (-s[(r, k)]).exp();
            }
        }
        join_cols(&y1, &x2)
    }

    fn forward_cached(&self, x: &Matrix<T>) -> (Matrix<T>, BlockCache<T>) {
        let (x1, x2) = split_cols(x, self.split);
        let (s, s_cache) = self.s.forward_cached(&x1);
        let (t, t_cache) = self.t.forward_cached(&x1);
        let es = s.map(|v| clamp_scale(v).0.exp());
        let dclamp = s.map(|v| clamp_scale(v).1);
        let mut y2 = x2.clone();
        for (i, v) in y2.as_mut_slice().iter_mut().enumerate() {
            *v = *v * es.as_slice()[i] + t.as_slice()[i];
        }
        (join_cols(&x1, &y2), BlockCache { x2, es, dclamp, s_cache, t_cache })
    }

    fn inverse_cached(&self, y: &Matrix<T>) -> (Matrix<T>, BlockCache<T>) {
        let (y1, y2) = split_cols(y, self.split);
        let (s, s_cache) = self.s.forward_cached(&y1);
        let (t, t_cache) = self.t.forward_cached(&y1);
        let es = s.map(|v| (-clamp_scale(v).0).exp());
        let dclamp = s.map(|v| clamp_scale(v).1);
        let mut x2 = y2;
        for (i, v) in x2.as_mut_slice().iter_mut().enumerate() {
            *v = (*v - t.as_slice()[i]) * es.as_slice()[i];
        }
        (join_cols(&y1, &x2), BlockCache { x2: x2.clone(), es, dclamp, s_cache, t_cache })
    }

    /// Backpropagate through the forward map; `grad` holds `[s params, t params]`.
    fn backward_forward(&self, c: &BlockCache<T>, dy: &Matrix<T>, grad: &mut [T]) -> Matrix<T> {
        let (dy1, dy2) = split_cols(dy, self.split);
        let mut dx2 = dy2.clone();
        let mut ds = dy2.clone();
        for i in 0..dx2.as_slice().len() {
            let e = c.es.as_slice()[i];
            let g = dy2.as_slice()[i];
            dx2.as_mut_slice()[i] = g * e;
            ds.as_mut_slice()[i] = g * c.x2.as_slice()[i] * e * c.dclamp.as_slice()[i];
        }
        let (gs, gt) = grad.split_at_mut(self.s.n_params());
        let dxs = self.s.backward(&c.s_cache, &ds, gs);
        let dxt = self.t.backward(&c.t_cache, &dy2, gt);
        let mut dx1 = dy1;
        for i in 0..dx1.as_slice().len() {
            dx1.as_mut_slice()[i] += dxs.as_slice()[i] + dxt.as_slice()[i];
        }
        join_cols(&dx1, &dx2)
    }

    /// Backpropagate through the inverse map.
    fn backward_inverse(&self, c: &BlockCache<T>, dx: &Matrix<T>, grad: &mut [T]) -> Matrix<T> {
        let (dx1, dx2) = split_cols(dx, self.split);
        let mut dy2 = dx2.clone();
        let mut dt = dx2.clone();
        let mut ds = dx2.clone();
        for i in 0..dy2.as_slice().len() {
            let e = c.es.as_slice()[i];
            let g = dx2.as_slice()[i];
            dy2.as_mut_slice()[i] = g * e;
            dt.as_mut_slice()[i] = -g * e;
            ds.as_mut_slice()[i] = -g * c.x2.as_slice()[i] * c.dclamp.as_slice()[i];
        }
        let (gs, gt) = grad.split_at_mut(self.s.n_params());
        let dys = self.s.backward(&c.s_cache, &ds, gs);
        let dyt = self.t.backward(&c.t_cache, &dt, gt);
        let mut dy1 = dx1;
        for i in 0..dy1.as_slice().len() {
            dy1.as_mut_slice()[i] += dys.as_slice()[i] + dyt.as_slice()[i];
        }
        join_cols(&dy1, &dy2)
    }

    fn n_params(&self) -> usize {
        self.s.n_params() + self.t.n_params()
    }
}

/// Stack of coupling blocks, each followed by a reversal of the coordinates.
///
/// `forward` is the normalizing direction (data to standard normal);
/// `inverse` is the generative map.
#[derive(Debug, Clone, PartialEq)]
pub struct AcfModel<T> {
    dim: usize,
    blocks: Vec<CouplingBlock<T>>,
}

impl<T: Real> AcfModel<T> {
    /// Untrained model; every block starts as the identity map.
    pub fn new(dim: usize, config: &TrainConfig, rng: &mut Rng) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("coupling flows need at least 2 dimensions"));
        }
        let split = dim / 2;
        let blocks = (0..config.coupling_blocks)
            .map(|_| CouplingBlock::new(dim, split, |a, b| config.hidden_widths(a, b), rng))
            .collect::<Result<_>>()?;
        Ok(Self { dim, blocks })
    }

    pub fn from_blocks(dim: usize, blocks: Vec<CouplingBlock<T>>) -> Result<Self> {
        for b in &blocks {
            if b.split == 0 || b.split >= dim || b.s.output_dim() != dim - b.split {
                return Err(invalid("coupling block does not fit the model dimension"));
            }
        }
        Ok(Self { dim, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[CouplingBlock<T>] {
        &self.blocks
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(|b| b.n_params()).sum()
    }

    pub fn forward_batch(&self, x: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
        let mut cur = x.clone();
        let mut logdet = vec![T::zero(); x.rows()];
        for b in &self.blocks {
            let (y, ld) = b.forward_batch(&cur);
            for (a, l) in logdet.iter_mut().zip(ld) {
                *a += l;
            }
            cur = reverse_cols(&y);
        }
        (cur, logdet)
    }

    pub fn inverse_batch(&self, z: &Matrix<T>) -> Matrix<T> {
        let mut cur = z.clone();
        for b in self.blocks.iter().rev() {
            cur = b.inverse_batch(&reverse_cols(&cur));
        }
        cur
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.forward_batch(&Matrix::from_vec(1, x.len(), x.to_vec()).unwrap()).0.into_vec()
    }

    pub fn inverse(&self, z: &[T]) -> Vec<T> {
        self.inverse_batch(&Matrix::from_vec(1, z.len(), z.to_vec()).unwrap()).into_vec()
    }

    /// `log |det Df(x)|`, the sum of all scale-net outputs.
    pub fn log_det(&self, x: &[T]) -> T {
        self.forward_batch(&Matrix::from_vec(1, x.len(), x.to_vec()).unwrap()).1[0]
    }

    fn grad_offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for b in &self.blocks {
            off.push(off.last().unwrap() + b.n_params());
        }
        off
    }

    /// Accumulate the parameter gradient of `<dz, f(x)>` and return `f(x)`.
    fn forward_grad(&self, x: &Matrix<T>, loss_grad: impl FnOnce(&Matrix<T>) -> Matrix<T>, grad: &mut [T]) -> Matrix<T> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut cur = x.clone();
        for b in &self.blocks {
            let (y, c) = b.forward_cached(&cur);
            caches.push(c);
            cur = reverse_cols(&y);
        }
        let mut d = loss_grad(&cur);
        let off = self.grad_offsets();
        for (i, b) in self.blocks.iter().enumerate().rev() {
            d = reverse_cols(&d);
            d = b.backward_forward(&caches[i], &d, &mut grad[off[i]..off[i + 1]]);
        }
        cur
    }

    fn inverse_grad(&self, z: &Matrix<T>, loss_grad: impl FnOnce(&Matrix<T>) -> Matrix<T>, grad: &mut [T]) -> Matrix<T> {
        let n = self.blocks.len();
        let mut caches: Vec<Option<BlockCache<T>>> = (0..n).map(|_| None).collect();
        let mut cur = z.clone();
        for i in (0..n).rev() {
            let (x, c) = self.blocks[i].inverse_cached(&reverse_cols(&cur));
            caches[i] = Some(c);
            cur = x;
        }
        let mut d = loss_grad(&cur);
        let off = self.grad_offsets();
        for i in 0..n {
            let c = caches[i].as_ref().unwrap();
            d = self.blocks[i].backward_inverse(c, &d, &mut grad[off[i]..off[i + 1]]);
            d = reverse_cols(&d);
        }
        cur
    }

    fn param_groups_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.blocks.len());
        for b in &mut self.blocks {
            out.push(b.s.params_mut());
            out.push(b.t.params_mut());
        }
        out
    }

    fn grad_groups<'a>(&self, grad: &'a [T]) -> Vec<&'a [T]> {
        let mut out = Vec::with_capacity(2 * self.blocks.len());
        let mut rest = grad;
        for b in &self.blocks {
            let (s, r) = rest.split_at(b.s.n_params());
            let (t, r) = r.split_at(b.t.n_params());
            out.push(s);
            out.push(t);
            rest = r;
        }
        out
    }
}

/// Two-sided MMD loss and its parameter gradient on one batch.
///
/// `MMD²(f(x), z) + MMD²(g(z), x)` with equal weights.
pub fn acf_loss_and_grad<T: Real>(model: &AcfModel<T>, x: &Matrix<T>, z: &Matrix<T>, bandwidths: &[T]) -> (T, Vec<T>) {
    let mut grad = vec![T::zero(); model.n_params()];
    let mut loss = T::zero();
    model.forward_grad(
        x,
        |fx| {
            let (l, g) = mmd2_with_grad(fx, z, bandwidths);
            loss += l;
            g
        },
        &mut grad,
    );
    model.inverse_grad(
        z,
        |gz| {
            let (l, g) = mmd2_with_grad(gz, x, bandwidths);
            loss += l;
            g
        },
        &mut grad,
    );
    (loss, grad)
}

pub(crate) fn standard_normal_matrix<T: Real>(rows: usize, cols: usize, rng: &mut Rng) -> Matrix<T> {
    let v = (0..rows * cols).map(|_| T::of(StandardNormal.sample(rng))).collect();
    Matrix::from_vec(rows, cols, v).unwrap()
}

pub(crate) fn check_training_data<T: Real>(data: &Matrix<T>, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if data.rows() < 2 * config.batch_size {
        return Err(invalid(format!(
            "need at least {} samples for batch size {}, got {}",
            2 * config.batch_size,
            config.batch_size,
            data.rows()
        )));
    }
    if data.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(invalid("training data must be finite"));
    }
    Ok(())
}

/// Train an affine coupling flow on the rows of `data`.
pub fn train_acf<T: Real>(data: &Matrix<T>, config: &TrainConfig) -> Result<(AcfModel<T>, TrainingLog)> {
    check_training_data(data, config)?;
    let dim = data.cols();
    let mut init_rng = rng_from_seed(derive_seed(config.seed, stream::INIT, 0));
    let mut model = AcfModel::new(dim, config, &mut init_rng)?;
    let mut rng = rng_from_seed(derive_seed(config.seed, stream::TRAINING, 0));
    let mut opt = Adam::new(
        model.n_params(),
        T::of(config.learning_rate),
        T::of(config.adam_beta1),
        T::of(config.adam_beta2),
        T::of(config.adam_eps),
    );
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let bs = config.batch_size;
    let bandwidths = default_bandwidths(&data.select_rows(&order[..bs]));
    let mut log = TrainingLog::default();
    for epoch in 0..config.epochs {
        opt.lr = T::of(config.learning_rate_at(epoch));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks_exact(bs) {
            let x = data.select_rows(chunk);
            let z = standard_normal_matrix(bs, dim, &mut rng);
            let (loss, grad) = acf_loss_and_grad(&model, &x, &z, &bandwidths);
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::DivergedTraining { epoch: epoch + 1 });
            }
            let groups = model.grad_groups(&grad).into_iter().map(|g| g.to_vec()).collect::<Vec<_>>();
            opt.step(model.param_groups_mut().into_iter().zip(groups.iter().map(|g| g.as_slice())));
            total += loss;
            steps += 1;
        }
        log.losses.push(total / steps as f64);
    }
    Ok((model, log))
}
