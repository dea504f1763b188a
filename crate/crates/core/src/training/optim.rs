use numgrad::Matrix;
use serde::{Deserialize, Serialize};

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// β₁ = 0.9, β₂ = 0.98, ε = 1e-9, moments shaped like `params`.
    pub fn new(params: &[Matrix]) -> Self {
        Self::with_betas(params, 0.9, 0.98, 1e-9)
    }

    pub fn with_betas(params: &[Matrix], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.data().len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. With `lr == 0` the moments advance but parameters are
    /// left untouched.
    ///
    /// # Panics
    /// Panics if `grads` is not shaped like the parameters the optimizer was
    /// built for.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape());
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let pd = p.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                if lr != 0.0 {
                    let mhat = m[j] / c1;
                    let vhat = v[j] / c2;
                    pd[j] -= lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        }
    }
}

/// Euclidean norm over every gradient entry.
pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_is_identity() {
        let mut p = vec![Matrix::new(1, 3, vec![0.5, -0.0, 3.0]).unwrap()];
        let before = p.clone();
        let g = vec![Matrix::new(1, 3, vec![1.0, -2.0, 0.1]).unwrap()];
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &g, 0.0);
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p[0]), bits(&before[0]));
    }

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first step is lr · sign(g) up to ε
        let mut p = vec![Matrix::new(1, 2, vec![1.0, 1.0]).unwrap()];
        let g = vec![Matrix::new(1, 2, vec![4.0, -0.5]).unwrap()];
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &g, 0.1);
        assert!((p[0].get(0, 0) - 0.9).abs() < 1e-9);
        assert!((p[0].get(0, 1) - 1.1).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![Matrix::new(1, 1, vec![5.0]).unwrap()];
        let mut opt = Adam::new(&p);
        for _ in 0..2000 {
            let g = vec![p[0].map(|x| 2.0 * (x - 1.0))];
            opt.step(&mut p, &g, 0.01);
        }
        assert!((p[0].get(0, 0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Matrix::new(1, 2, vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
        let mut small = vec![Matrix::new(1, 2, vec![0.3, 0.4]).unwrap()];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.3, 0.4]);
    }
}
