use crate::scalar::Real;

/// Adam optimizer over a fixed set of parameter groups.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(n_params: usize, lr: T, beta1: T, beta2: T, eps: T) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![T::zero(); n_params], v: vec![T::zero(); n_params], t: 0 }
    }

    /// One update. Groups are visited in order and must cover exactly the
    /// parameter count given at construction.
    pub fn step<'a>(&mut self, groups: impl IntoIterator<Item = (&'a mut [T], &'a [T])>) {
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        let mut k = 0;
        for (params, grads) in groups {
            debug_assert_eq!(params.len(), grads.len());
            for (p, &g) in params.iter_mut().zip(grads) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = self.beta1 * *m + (T::one() - self.beta1) * g;
                *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
                k += 1;
            }
        }
        debug_assert_eq!(k, self.m.len());
    }
}
