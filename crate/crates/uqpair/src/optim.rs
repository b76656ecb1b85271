//! AdamW with decoupled weight decay, plus global-norm gradient clipping.

/// Adam moments with the decay applied directly to the parameters, not the
/// gradients. A zero-gradient parameter therefore shrinks by exactly
/// `1 - lr * weight_decay` per step.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1, beta2, eps, weight_decay }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update at the given learning rate.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer sized for a different model");
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] = params[i] * decay - lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Scale `grads` so their global L2 norm is at most `max_norm`; a vector
/// already inside the bound is left bit-identical. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_two_steps_match_hand_computation() {
        let (b1, b2, eps) = (0.9, 0.98, 1e-6);
        let lr = 0.1;
        let mut opt = AdamW::new(1, b1, b2, eps, 0.0);
        let mut p = vec![0.0];
        opt.step(&mut p, &[1.0], lr);
        // t=1: m=0.1, v=0.02, mhat=1, vhat=1
        let want1 = -lr * 1.0 / (1.0 + eps);
        assert!((p[0] - want1).abs() < 1e-15, "{} vs {want1}", p[0]);

        opt.step(&mut p, &[1.0], lr);
        // t=2: m=0.19, v=0.0396; bc1=0.19, bc2=0.0396
        let mhat = 0.19 / (1.0 - 0.9f64.powi(2));
        let vhat = 0.0396 / (1.0 - 0.98f64.powi(2));
        let want2 = want1 - lr * mhat / (vhat.sqrt() + eps);
        assert!((p[0] - want2).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let target = [3.0, -2.0, 0.5];
        let mut p = vec![0.0; 3];
        let mut opt = AdamW::new(3, 0.9, 0.98, 1e-6, 0.0);
        let loss = |p: &[f64]| -> f64 {
            p.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let initial = loss(&p);
        for _ in 0..200 {
            let grads: Vec<f64> = p.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            opt.step(&mut p, &grads, 0.05);
        }
        assert!(loss(&p) < 0.01 * initial, "final {} vs initial {initial}", loss(&p));
    }

    #[test]
    fn zero_gradient_decay_is_exactly_multiplicative() {
        let lr = 3e-5;
        let wd = 0.01;
        let mut opt = AdamW::new(2, 0.9, 0.98, 1e-6, wd);
        let mut p = vec![1.7, -0.3];
        let factor = 1.0 - lr * wd;
        for _ in 0..5 {
            let before = p.clone();
            opt.step(&mut p, &[0.0, 0.0], lr);
            assert_eq!(p[0], before[0] * factor);
            assert_eq!(p[1], before[1] * factor);
        }
    }

    #[test]
    fn clip_scales_only_oversized_gradients() {
        let mut g = vec![3.0, 4.0];
        let norm = clip_global_norm(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        let new_norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((new_norm - 1.0).abs() < 1e-12);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);

        let mut g = vec![0.3, 0.4];
        let before = g.clone();
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g, before, "inside the bound must be untouched");
    }
}
