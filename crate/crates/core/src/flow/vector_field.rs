//! Time-dependent vector fields trained by (optimal-transport) conditional
//! flow matching, and their integration with classical RK4.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::acf::{check_training_data, standard_normal_matrix};
use super::adam::Adam;
use super::assignment::{linear_sum_assignment, squared_distance_cost};
use super::config::{TrainConfig, TrainingLog};
use super::mlp::Mlp;
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, rng_from_seed, stream, Rng};
use crate::scalar::Real;

/// `v(η, t)`: one network taking `(η, t) ∈ R^{M+1}` to `R^M`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldModel<T> {
    dim: usize,
    net: Mlp<T>,
}

impl<T: Real> VectorFieldModel<T> {
    /// Untrained model; the output layer starts at zero so `v ≡ 0`.
    pub fn new(dim: usize, config: &TrainConfig, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("vector field dimension must be positive"));
        }
        let net = Mlp::new(&config.hidden_widths(dim + 1, dim), rng, true)?;
        Ok(Self { dim, net })
    }

    pub fn from_net(net: Mlp<T>) -> Result<Self> {
        let dim = net.output_dim();
        if net.input_dim() != dim + 1 {
            return Err(invalid("vector field net must map R^{M+1} to R^M"));
        }
        Ok(Self { dim, net })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.net
    }

    pub fn velocity(&self, x: &[T], t: T) -> Vec<T> {
        let mut input = x.to_vec();
        input.push(t);
        self.net.forward(&input)
    }

    /// Generate by integrating `dη/dt = v(η, t)` from `t = 0` to `t = 1`.
    pub fn generate(&self, xi: &[T], steps: usize) -> Result<Vec<T>> {
        integrate_rk4(xi, steps, |x, t| self.velocity(x, t))
    }
}

/// Classical fixed-step RK4 on `[0, 1]`.
pub fn integrate_rk4<T: Real>(x0: &[T], steps: usize, f: impl Fn(&[T], T) -> Vec<T>) -> Result<Vec<T>> {
    if steps == 0 {
        return Err(invalid("RK4 needs at least one step"));
    }
    let h = T::one() / T::of_usize(steps);
    let half = h / T::of(2.0);
    let sixth = h / T::of(6.0);
    let mut x = x0.to_vec();
    let mut tmp = vec![T::zero(); x.len()];
    for step in 0..steps {
        let t = T::of_usize(step) * h;
        let k1 = f(&x, t);
        for i in 0..x.len() {
            tmp[i] = x[i] + half * k1[i];
        }
        let k2 = f(&tmp, t + half);
        for i in 0..x.len() {
            tmp[i] = x[i] + half * k2[i];
        }
        let k3 = f(&tmp, t + half);
        for i in 0..x.len() {
            tmp[i] = x[i] + h * k3[i];
        }
        let k4 = f(&tmp, t + h);
        for i in 0..x.len() {
            x[i] += sixth * (k1[i] + T::of(2.0) * (k2[i] + k3[i]) + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::GenerationDiverged { step: step + 1 });
        }
    }
    Ok(x)
}

/// One regression batch: network inputs `(x, t)` and targets `η₁ - η₀`.
#[derive(Debug, Clone)]
pub struct CfmBatch<T> {
    pub input: Matrix<T>,
    pub target: Matrix<T>,
}

/// Pair sources and targets by exact minibatch optimal transport.
///
/// Returns the permutation applied to the rows of `eta1`.
pub fn ot_pairing<T: Real>(eta0: &Matrix<T>, eta1: &Matrix<T>) -> Result<Vec<usize>> {
    linear_sum_assignment(&squared_distance_cost(eta0, eta1))
}

/// Build a batch `x = t η₁ + (1 - t) η₀ + σ ε` for the given target rows.
pub fn cfm_batch<T: Real>(eta1: &Matrix<T>, sigma: T, ot: bool, rng: &mut Rng) -> Result<CfmBatch<T>> {
    let (n, dim) = (eta1.rows(), eta1.cols());
    let eta0 = standard_normal_matrix::<T>(n, dim, rng);
    let eta1 = if ot { eta1.select_rows(&ot_pairing(&eta0, eta1)?) } else { eta1.clone() };
    let eps = standard_normal_matrix::<T>(n, dim, rng);
    let mut input = Matrix::zeros(n, dim + 1);
    let mut target = Matrix::zeros(n, dim);
    for r in 0..n {
        let t = T::of(rng.random::<f64>());
        for k in 0..dim {
            let (a, b) = (eta0[(r, k)], eta1[(r, k)]);
            input[(r, k)] = t * b + (T::one() - t) * a + sigma * eps[(r, k)];
            target[(r, k)] = b - a;
        }
        input[(r, dim)] = t;
    }
    Ok(CfmBatch { input, target })
}

/// Mean over the batch of `|v(x, t) - target|²` and its parameter gradient.
pub fn cfm_loss_and_grad<T: Real>(model: &VectorFieldModel<T>, batch: &CfmBatch<T>) -> (T, Vec<T>) {
    let (v, cache) = model.net.forward_cached(&batch.input);
    let n = T::of_usize(batch.input.rows());
    let mut loss = T::zero();
    let mut dv = v.clone();
    for (d, (&vi, &ti)) in dv.as_mut_slice().iter_mut().zip(v.as_slice().iter().zip(batch.target.as_slice())) {
        let r = vi - ti;
        loss += r * r;
        *d = T::of(2.0) * r / n;
    }
    let mut grad = vec![T::zero(); model.net.n_params()];
    model.net.backward(&cache, &dv, &mut grad);
    (loss / n, grad)
}

pub fn cfm_loss<T: Real>(model: &VectorFieldModel<T>, batch: &CfmBatch<T>) -> T {
    let v = model.net.forward_batch(&batch.input);
    let n = T::of_usize(batch.input.rows());
    v.as_slice().iter().zip(batch.target.as_slice()).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / n
}

/// Conditional flow matching; OT pairing when `config.ot_enabled`.
pub fn train_cfm<T: Real>(data: &Matrix<T>, config: &TrainConfig) -> Result<(VectorFieldModel<T>, TrainingLog)> {
    check_training_data(data, config)?;
    let mut init_rng = rng_from_seed(derive_seed(config.seed, stream::INIT, 0));
    let mut model = VectorFieldModel::new(data.cols(), config, &mut init_rng)?;
    let mut rng = rng_from_seed(derive_seed(config.seed, stream::TRAINING, 0));
    let mut opt = Adam::new(
        model.net.n_params(),
        T::of(config.learning_rate),
        T::of(config.adam_beta1),
        T::of(config.adam_beta2),
        T::of(config.adam_eps),
    );
    let sigma = T::of(config.cfm_sigma);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut log = TrainingLog::default();
    for epoch in 0..config.epochs {
        opt.lr = T::of(config.learning_rate_at(epoch));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks_exact(config.batch_size) {
            let batch = cfm_batch(&data.select_rows(chunk), sigma, config.ot_enabled, &mut rng)?;
            let (loss, grad) = cfm_loss_and_grad(&model, &batch);
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::DivergedTraining { epoch: epoch + 1 });
            }
            opt.step([(model.net.params_mut(), grad.as_slice())]);
            total += loss;
            steps += 1;
        }
        log.losses.push(total / steps as f64);
    }
    Ok((model, log))
}

/// [`train_cfm`] with minibatch optimal transport forced on.
pub fn train_otcfm<T: Real>(data: &Matrix<T>, config: &TrainConfig) -> Result<(VectorFieldModel<T>, TrainingLog)> {
    train_cfm(data, &TrainConfig { ot_enabled: true, ..config.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_generates_identity() {
        let cfg = TrainConfig { hidden_width: 5, layers: 3, ..TrainConfig::default() };
        let m = VectorFieldModel::<f64>::new(3, &cfg, &mut rng_from_seed(0)).unwrap();
        let xi = [0.3, -1.0, 2.0];
        assert_eq!(m.generate(&xi, 100).unwrap(), xi.to_vec());
    }

    #[test]
    fn constant_field_is_exact() {
        let x = integrate_rk4(&[1.0f64, -2.0], 7, |_, _| vec![0.25, 0.5]).unwrap();
        assert!((x[0] - 1.25).abs() < 1e-15 && (x[1] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn linear_field_fourth_order() {
        let xi = [1.0f64, -0.5];
        let e = std::f64::consts::E;
        let err = |n| {
            let x = integrate_rk4(&xi, n, |x, _| x.to_vec()).unwrap();
            (x[0] - e).abs()
        };
        assert!(err(100) < 1e-6 * e);
        let slope = (err(10) / err(20)).log2();
        assert!((slope - 4.0).abs() < 0.5, "{slope}");
    }

    #[test]
    fn divergence_is_reported() {
        let r = integrate_rk4(&[1.0f64], 10, |x, _| vec![x[0] * 1e300]);
        assert!(matches!(r, Err(Error::GenerationDiverged { .. })));
    }

    #[test]
    fn zero_field_loss_is_two_m() {
        let cfg = TrainConfig { hidden_width: 5, layers: 3, ..TrainConfig::default() };
        let m = VectorFieldModel::<f64>::new(4, &cfg, &mut rng_from_seed(0)).unwrap();
        let mut rng = rng_from_seed(3);
        let data = standard_normal_matrix::<f64>(20000, 4, &mut rng);
        let batch = cfm_batch(&data, 0.01, false, &mut rng).unwrap();
        let loss = cfm_loss(&m, &batch);
        assert!((loss - 8.0).abs() < 0.25, "{loss}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let cfg = TrainConfig { hidden_width: 6, layers: 4, ..TrainConfig::default() };
        let mut rng = rng_from_seed(9);
        let mut m = VectorFieldModel::<f64>::new(3, &cfg, &mut rng).unwrap();
        for p in m.net_mut().params_mut() {
            *p += rng.random_range(-0.2..0.2);
        }
        let data = standard_normal_matrix::<f64>(10, 3, &mut rng);
        let batch = cfm_batch(&data, 0.1, true, &mut rng).unwrap();
        let (_, grad) = cfm_loss_and_grad(&m, &batch);
        let h = 1e-6;
        for k in (0..m.net.n_params()).step_by(5) {
            m.net_mut().params_mut()[k] += h;
            let up = cfm_loss(&m, &batch);
            m.net_mut().params_mut()[k] -= 2.0 * h;
            let dn = cfm_loss(&m, &batch);
            m.net_mut().params_mut()[k] += h;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-4 * fd.abs().max(1e-4), "{k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn ot_recovers_permutation() {
        let mut rng = rng_from_seed(4);
        let a = standard_normal_matrix::<f64>(12, 3, &mut rng);
        let mut perm: Vec<usize> = (0..12).collect();
        perm.shuffle(&mut rng);
        let b = a.select_rows(&perm);
        let p = ot_pairing(&a, &b).unwrap();
        let paired = b.select_rows(&p);
        assert_eq!(paired.as_slice(), a.as_slice());
    }
}
